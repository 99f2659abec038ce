//! Named parameter collections and gradient evaluation entry points.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};

use super::tape::{NodeId, Tape};

/// An ordered collection of named dense `f64` arrays.
///
/// Entry order is fixed at insertion time and defines the canonical
/// flattened layout used by the optimizer, the finite-difference oracle and
/// checkpoint serialization (entries in order, each row-major).
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Add a named array. Shapes are fixed from this point on.
    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: "param_insert".to_string(),
                detail: format!("parameter `{name}`"),
            });
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    /// Entries in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.values.iter())
    }

    pub(crate) fn value_at_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.values[i]
    }

    /// Replace the values of an existing entry; the shape must match.
    pub fn set(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if self.values[i].dim() != value.dim() {
            return Err(Error::ShapeMismatch {
                op: "param_set".to_string(),
                expected: format!("{:?}", self.values[i].dim()),
                got: format!("{:?}", value.dim()),
            });
        }
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: "param_set".to_string(),
                detail: format!("parameter `{name}`"),
            });
        }
        self.values[i] = value;
        Ok(())
    }

    /// Total number of scalar coordinates.
    pub fn flat_len(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// All coordinates in canonical order (entries in order, each row-major).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for v in &self.values {
            out.extend(v.iter().copied());
        }
        out
    }

    /// Rebuild a set with the same names and shapes from a flat slice.
    pub fn from_flat(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.flat_len() {
            return Err(Error::ShapeMismatch {
                op: "from_flat".to_string(),
                expected: self.flat_len().to_string(),
                got: flat.len().to_string(),
            });
        }
        let mut out = ParamSet::new();
        let mut offset = 0;
        for (name, v) in self.iter() {
            let take = v.len();
            let arr = Array2::from_shape_vec(v.dim(), flat[offset..offset + take].to_vec())
                .expect("shape and length agree");
            out.insert(name, arr)?;
            offset += take;
        }
        Ok(out)
    }

    /// Append every entry of `other` under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for (name, v) in other.iter() {
            self.insert(&format!("{prefix}{name}"), v.clone())?;
        }
        Ok(())
    }
}

/// Gradients keyed like the [`ParamSet`] they differentiate.
#[derive(Debug, Clone)]
pub struct GradientSet {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
}

impl GradientSet {
    /// All-zero gradients congruent with the given parameter set.
    pub fn zeros_like(params: &ParamSet) -> GradientSet {
        GradientSet::from_parts(
            params.names.clone(),
            params.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        )
    }

    pub(crate) fn from_parts(names: Vec<String>, values: Vec<Array2<f64>>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        GradientSet {
            names,
            values,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.values.iter())
    }

    pub(crate) fn value_at(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for v in &self.values {
            out.extend(v.iter().copied());
        }
        out
    }

    /// Keys and shapes must mirror the given parameter set.
    pub fn matches(&self, params: &ParamSet) -> bool {
        self.names == params.names
            && self
                .values
                .iter()
                .zip(params.values.iter())
                .all(|(g, p)| g.dim() == p.dim())
    }
}

/// Tape nodes standing in for the entries of a [`ParamSet`], in entry order.
pub struct ParamNodes {
    names: Vec<String>,
    ids: Vec<NodeId>,
    index: HashMap<String, usize>,
}

impl ParamNodes {
    /// Insert one tracked leaf per parameter entry, preserving order.
    pub fn insert_leaves(tape: &mut Tape, params: &ParamSet) -> Result<ParamNodes> {
        let mut ids = Vec::with_capacity(params.len());
        for (_, v) in params.iter() {
            ids.push(tape.leaf(v.clone())?);
        }
        Ok(ParamNodes {
            names: params.names.clone(),
            ids,
            index: params.index.clone(),
        })
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.index
            .get(name)
            .map(|&i| self.ids[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Collect the gradients of the given scalar into a [`GradientSet`]
    /// mirroring the originating parameter set.
    pub fn gradients(&self, tape: &Tape, loss: NodeId) -> Result<GradientSet> {
        let grads = tape.backward(loss)?;
        let values = self.ids.iter().map(|&id| grads.wrt(id).clone()).collect();
        Ok(GradientSet::from_parts(self.names.clone(), values))
    }
}

/// Evaluate a recorded scalar loss and its exact reverse-mode gradients.
///
/// `build` composes the loss on the tape from the parameter leaves it is
/// handed; the returned gradients are keyed and shaped like `params`.
pub fn evaluate_with_gradients<F>(params: &ParamSet, build: F) -> Result<(f64, GradientSet)>
where
    F: Fn(&mut Tape, &ParamNodes) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let nodes = ParamNodes::insert_leaves(&mut tape, params)?;
    let loss = build(&mut tape, &nodes)?;
    let value = tape.scalar(loss)?;
    let grads = nodes.gradients(&tape, loss)?;
    Ok((value, grads))
}

/// Forward evaluation only.
pub fn evaluate<F>(params: &ParamSet, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamNodes) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let nodes = ParamNodes::insert_leaves(&mut tape, params)?;
    let loss = build(&mut tape, &nodes)?;
    tape.scalar(loss)
}

/// Central-difference gradient estimate, `(f(p+h) - f(p-h)) / 2h` per
/// coordinate. The independent check against [`evaluate_with_gradients`];
/// it never touches the reverse pass.
pub fn finite_difference_gradient<F>(params: &ParamSet, build: F, step: f64) -> Result<GradientSet>
where
    F: Fn(&mut Tape, &ParamNodes) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let base = params.to_flat();
    let mut grad_flat = vec![0.0; base.len()];
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + step;
        let plus = evaluate(&params.from_flat(&work)?, &build)?;
        work[i] = base[i] - step;
        let minus = evaluate(&params.from_flat(&work)?, &build)?;
        work[i] = base[i];
        grad_flat[i] = (plus - minus) / (2.0 * step);
    }
    let grads = params.from_flat(&grad_flat)?;
    Ok(GradientSet::from_parts(grads.names, grads.values))
}

/// Largest elementwise relative difference between two gradient sets, with
/// denominator `max(|a|, |b|, floor)`.
pub fn max_relative_gap(a: &GradientSet, b: &GradientSet, floor: f64) -> f64 {
    let fa = a.to_flat();
    let fb = b.to_flat();
    assert_eq!(fa.len(), fb.len(), "gradient sets must be congruent");
    fa.iter()
        .zip(fb.iter())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
