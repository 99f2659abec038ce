//! The invertible generative network: affine coupling layers with fixed
//! random partitions, their exact inverses, log-determinant accounting, and
//! the exact log-likelihood under a standard Gaussian base density.
//!
//! Each coupling layer passes the coordinates in its partition `D` through
//! unchanged and maps the complement as `y = x ⊙ exp(s(x_D)) + t(x_D)`,
//! where `s` and `t` are 4-layer fully connected networks. The Jacobian of
//! that map is triangular, so its log-determinant is just the sum of the
//! `s` outputs over the transformed coordinates.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{NodeId, ParamNodes, ParamSet, Tape};
use crate::dataset::RngStream;
use crate::error::{Error, Result};

/// Default negative slope of the leaky rectifier.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Default number of coupling layers.
pub const DEFAULT_COUPLING_LAYERS: usize = 6;

/// Output activation of a fully connected network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
}

/// A fully connected network: linear layers with leaky-rectifier activations
/// between them and a configurable output activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
    output_activation: Activation,
    leaky_slope: f64,
}

/// Tape nodes for one [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpIds {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
}

impl Mlp {
    /// Initialize with weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// and zero biases. `dims` lists the layer widths input-first; a
    /// zero-width input yields an empty first weight matrix, making the
    /// network a learnable constant.
    pub fn init(
        dims: &[usize],
        output_activation: Activation,
        leaky_slope: f64,
        rng: &mut RngStream,
    ) -> Mlp {
        assert!(dims.len() >= 2, "a network needs at least one layer");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = if fan_in == 0 {
                Array2::zeros((0, fan_out))
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..=bound))
            };
            weights.push(w);
            biases.push(Array2::zeros((1, fan_out)));
        }
        Mlp {
            weights,
            biases,
            output_activation,
            leaky_slope,
        }
    }

    /// Assemble from explicit layer matrices. Weight `i` must be
    /// `in_i × out_i` with `out_i = in_{i+1}`, and each bias `1 × out_i`.
    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array2<f64>>,
        output_activation: Activation,
        leaky_slope: f64,
    ) -> Result<Mlp> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidArgument(
                "network needs matching, nonempty weight and bias lists".to_string(),
            ));
        }
        for (i, (w, b)) in weights.iter().zip(biases.iter()).enumerate() {
            if b.nrows() != 1 || b.ncols() != w.ncols() {
                return Err(Error::ShapeMismatch {
                    op: "mlp_from_parts".to_string(),
                    expected: format!("bias 1x{}", w.ncols()),
                    got: format!("bias {}x{}", b.nrows(), b.ncols()),
                });
            }
            if i + 1 < weights.len() && weights[i + 1].nrows() != w.ncols() {
                return Err(Error::ShapeMismatch {
                    op: "mlp_from_parts".to_string(),
                    expected: format!("layer {} input {}", i + 1, w.ncols()),
                    got: weights[i + 1].nrows().to_string(),
                });
            }
        }
        Ok(Mlp {
            weights,
            biases,
            output_activation,
            leaky_slope,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("nonempty").ncols()
    }

    fn activate(&self, h: Array2<f64>, last: bool) -> Array2<f64> {
        if last {
            match self.output_activation {
                Activation::Linear => h,
                Activation::Tanh => h.mapv(f64::tanh),
            }
        } else {
            let slope = self.leaky_slope;
            h.mapv(|v| if v > 0.0 { v } else { slope * v })
        }
    }

    /// Forward evaluation of a batch (rows are samples).
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            h = h.dot(w) + b;
            h = self.activate(h, i == last);
        }
        h
    }

    /// The same computation recorded on a tape.
    pub fn forward_graph(&self, tape: &mut Tape, x: NodeId, ids: &MlpIds) -> Result<NodeId> {
        let mut h = x;
        let last = self.weights.len() - 1;
        for i in 0..self.weights.len() {
            h = tape.matmul(h, ids.weights[i])?;
            h = tape.add_row(h, ids.biases[i])?;
            h = if i == last {
                match self.output_activation {
                    Activation::Linear => h,
                    Activation::Tanh => tape.tanh(h)?,
                }
            } else {
                tape.leaky_relu(h, self.leaky_slope)?
            };
        }
        Ok(h)
    }

    fn append_params(&self, prefix: &str, out: &mut ParamSet) -> Result<()> {
        for (i, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            out.insert(&format!("{prefix}{i}.w"), w.clone())?;
            out.insert(&format!("{prefix}{i}.b"), b.clone())?;
        }
        Ok(())
    }

    fn load_params(&mut self, prefix: &str, source: &ParamSet) -> Result<()> {
        for i in 0..self.weights.len() {
            let w = source
                .get(&format!("{prefix}{i}.w"))
                .ok_or_else(|| Error::UnknownParam(format!("{prefix}{i}.w")))?;
            let b = source
                .get(&format!("{prefix}{i}.b"))
                .ok_or_else(|| Error::UnknownParam(format!("{prefix}{i}.b")))?;
            if w.dim() != self.weights[i].dim() || b.dim() != self.biases[i].dim() {
                return Err(Error::ShapeMismatch {
                    op: "load_params".to_string(),
                    expected: format!("{:?}/{:?}", self.weights[i].dim(), self.biases[i].dim()),
                    got: format!("{:?}/{:?}", w.dim(), b.dim()),
                });
            }
            self.weights[i] = w.clone();
            self.biases[i] = b.clone();
        }
        Ok(())
    }

    fn collect_ids(
        &self,
        prefix: &str,
        lookup: &mut dyn FnMut(&str) -> Result<NodeId>,
    ) -> Result<MlpIds> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for i in 0..self.weights.len() {
            weights.push(lookup(&format!("{prefix}{i}.w"))?);
            biases.push(lookup(&format!("{prefix}{i}.b"))?);
        }
        Ok(MlpIds { weights, biases })
    }
}

/// One affine coupling transformation with a fixed index partition.
///
/// `pass_through` lists the coordinates that are copied unchanged; the
/// coupling scales and shifts the `transformed` complement using functions
/// of the pass-through block. Partitions are fixed at initialization and
/// never change afterwards.
#[derive(Debug, Clone)]
pub struct CouplingLayer {
    pass_through: Vec<usize>,
    transformed: Vec<usize>,
    s_net: Mlp,
    t_net: Mlp,
}

/// Tape nodes for one coupling layer's parameters.
#[derive(Debug, Clone)]
pub struct CouplingIds {
    s: MlpIds,
    t: MlpIds,
}

impl CouplingLayer {
    pub fn new(
        dim: usize,
        pass_through: Vec<usize>,
        transformed: Vec<usize>,
        s_net: Mlp,
        t_net: Mlp,
    ) -> Result<CouplingLayer> {
        let mut seen = vec![false; dim];
        for &c in pass_through.iter().chain(transformed.iter()) {
            if c >= dim || seen[c] {
                return Err(Error::InvalidArgument(format!(
                    "partition index {c} repeated or out of range for dimension {dim}"
                )));
            }
            seen[c] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidArgument(
                "partition must cover every coordinate".to_string(),
            ));
        }
        if transformed.is_empty() {
            return Err(Error::InvalidArgument(
                "a coupling layer must transform at least one coordinate".to_string(),
            ));
        }
        if pass_through.is_empty() && dim > 1 {
            return Err(Error::InvalidArgument(
                "an empty pass-through block is only allowed in one dimension".to_string(),
            ));
        }
        if s_net.input_dim() != pass_through.len()
            || t_net.input_dim() != pass_through.len()
            || s_net.output_dim() != transformed.len()
            || t_net.output_dim() != transformed.len()
        {
            return Err(Error::ShapeMismatch {
                op: "coupling_layer".to_string(),
                expected: format!("{} -> {}", pass_through.len(), transformed.len()),
                got: format!(
                    "s {} -> {}, t {} -> {}",
                    s_net.input_dim(),
                    s_net.output_dim(),
                    t_net.input_dim(),
                    t_net.output_dim()
                ),
            });
        }
        Ok(CouplingLayer {
            pass_through,
            transformed,
            s_net,
            t_net,
        })
    }

    pub fn pass_through(&self) -> &[usize] {
        &self.pass_through
    }

    pub fn transformed(&self) -> &[usize] {
        &self.transformed
    }

    /// Partition as a boolean vector; `true` marks a pass-through index.
    pub fn partition_flags(&self, dim: usize) -> Vec<bool> {
        let mut flags = vec![false; dim];
        for &c in &self.pass_through {
            flags[c] = true;
        }
        flags
    }

    fn split(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let take = |cols: &[usize]| {
            let mut out = Array2::zeros((x.nrows(), cols.len()));
            for (k, &c) in cols.iter().enumerate() {
                out.column_mut(k).assign(&x.column(c));
            }
            out
        };
        (take(&self.pass_through), take(&self.transformed))
    }

    fn check_finite(&self, y: &Array2<f64>, layer: usize, op: &str) -> Result<()> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                op: op.to_string(),
                detail: format!("coupling layer {layer}"),
            })
        }
    }

    /// Forward pass of one batch. Returns the transformed batch and each
    /// row's log-determinant contribution `Σ_k s_k(x_D)`.
    pub fn forward(&self, x: &Array2<f64>, layer: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        let (xd, xn) = self.split(x);
        let s = self.s_net.forward(&xd);
        let t = self.t_net.forward(&xd);
        let mut y = x.clone();
        for (k, &c) in self.transformed.iter().enumerate() {
            for i in 0..x.nrows() {
                y[(i, c)] = xn[(i, k)] * s[(i, k)].exp() + t[(i, k)];
            }
        }
        self.check_finite(&y, layer, "coupling_forward")?;
        let logdet = s.rows().into_iter().map(|r| r.sum()).collect();
        Ok((y, logdet))
    }

    /// Exact inverse of [`CouplingLayer::forward`].
    pub fn inverse(&self, y: &Array2<f64>, layer: usize) -> Result<Array2<f64>> {
        let (yd, yn) = self.split(y);
        let s = self.s_net.forward(&yd);
        let t = self.t_net.forward(&yd);
        let mut x = y.clone();
        for (k, &c) in self.transformed.iter().enumerate() {
            for i in 0..y.nrows() {
                x[(i, c)] = (yn[(i, k)] - t[(i, k)]) * (-s[(i, k)]).exp();
            }
        }
        self.check_finite(&x, layer, "coupling_inverse")?;
        Ok(x)
    }

    fn forward_graph(
        &self,
        tape: &mut Tape,
        dim: usize,
        x: NodeId,
        ids: &CouplingIds,
    ) -> Result<(NodeId, NodeId)> {
        let xd = tape.select_cols(x, &self.pass_through)?;
        let xn = tape.select_cols(x, &self.transformed)?;
        let s = self.s_net.forward_graph(tape, xd, &ids.s)?;
        let t = self.t_net.forward_graph(tape, xd, &ids.t)?;
        let es = tape.exp(s)?;
        let scaled = tape.mul(xn, es)?;
        let yn = tape.add(scaled, t)?;
        let y = tape.merge_cols(dim, xd, &self.pass_through, yn, &self.transformed)?;
        let logdet = tape.row_sum(s)?;
        Ok((y, logdet))
    }

    fn inverse_graph(
        &self,
        tape: &mut Tape,
        dim: usize,
        y: NodeId,
        ids: &CouplingIds,
    ) -> Result<NodeId> {
        let yd = tape.select_cols(y, &self.pass_through)?;
        let yn = tape.select_cols(y, &self.transformed)?;
        let s = self.s_net.forward_graph(tape, yd, &ids.s)?;
        let t = self.t_net.forward_graph(tape, yd, &ids.t)?;
        let neg_s = tape.affine(s, -1.0, 0.0)?;
        let ens = tape.exp(neg_s)?;
        let diff = tape.sub(yn, t)?;
        let xn = tape.mul(diff, ens)?;
        tape.merge_cols(dim, yd, &self.pass_through, xn, &self.transformed)
    }
}

/// Tape nodes for all parameters of a [`FlowModel`].
#[derive(Debug, Clone)]
pub struct FlowIds {
    layers: Vec<CouplingIds>,
}

impl FlowIds {
    /// Wrap every parameter node in a stop-gradient, so compositions built
    /// from the result evaluate identically but leave the flow parameters
    /// untouched by the reverse pass.
    pub fn stopped(&self, tape: &mut Tape) -> Result<FlowIds> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let stop_all = |tape: &mut Tape, ids: &MlpIds| -> Result<MlpIds> {
                Ok(MlpIds {
                    weights: ids
                        .weights
                        .iter()
                        .map(|&id| tape.stop_grad(id))
                        .collect::<Result<_>>()?,
                    biases: ids
                        .biases
                        .iter()
                        .map(|&id| tape.stop_grad(id))
                        .collect::<Result<_>>()?,
                })
            };
            layers.push(CouplingIds {
                s: stop_all(tape, &l.s)?,
                t: stop_all(tape, &l.t)?,
            });
        }
        Ok(FlowIds { layers })
    }
}

/// An ordered stack of coupling layers over a standard Gaussian base
/// density.
#[derive(Debug, Clone)]
pub struct FlowModel {
    dim: usize,
    hidden_width: usize,
    leaky_slope: f64,
    layers: Vec<CouplingLayer>,
}

impl FlowModel {
    /// Sample partitions and initialize parameters.
    ///
    /// Partition membership is an independent coin flip per index; draws
    /// that leave either block empty are rejected and resampled. In one
    /// dimension the pass-through block is empty by construction and the
    /// coupling networks degenerate to learnable constants, making each
    /// layer a learnable affine map.
    pub fn init(
        dim: usize,
        n_layers: usize,
        hidden_width: Option<usize>,
        rng: &mut RngStream,
    ) -> Result<FlowModel> {
        if dim == 0 || n_layers == 0 {
            return Err(Error::InvalidArgument(
                "flow needs a positive dimension and at least one layer".to_string(),
            ));
        }
        let hidden = hidden_width.unwrap_or_else(|| dim.max(8));
        if hidden == 0 {
            return Err(Error::InvalidArgument(
                "hidden width must be positive".to_string(),
            ));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (pass, trans) = sample_partition(dim, rng);
            let s_dims = [pass.len(), hidden, hidden, hidden, trans.len()];
            let s_net = Mlp::init(&s_dims, Activation::Tanh, DEFAULT_LEAKY_SLOPE, rng);
            let t_net = Mlp::init(&s_dims, Activation::Linear, DEFAULT_LEAKY_SLOPE, rng);
            layers.push(CouplingLayer::new(dim, pass, trans, s_net, t_net)?);
        }
        Ok(FlowModel {
            dim,
            hidden_width: hidden,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            layers,
        })
    }

    /// Assemble from explicit layers (checkpoint reconstruction).
    pub fn from_layers(
        dim: usize,
        hidden_width: usize,
        leaky_slope: f64,
        layers: Vec<CouplingLayer>,
    ) -> Result<FlowModel> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument(
                "flow needs at least one layer".to_string(),
            ));
        }
        Ok(FlowModel {
            dim,
            hidden_width,
            leaky_slope,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    /// Draw fresh parameters for every coupling network. Partitions are
    /// part of the model's identity and are left untouched.
    pub fn reinit_params(&mut self, rng: &mut RngStream) {
        for layer in &mut self.layers {
            let dims = [
                layer.pass_through.len(),
                self.hidden_width,
                self.hidden_width,
                self.hidden_width,
                layer.transformed.len(),
            ];
            layer.s_net = Mlp::init(&dims, Activation::Tanh, self.leaky_slope, rng);
            layer.t_net = Mlp::init(&dims, Activation::Linear, self.leaky_slope, rng);
        }
    }

    fn check_width(&self, x: &Array2<f64>, op: &str) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: op.to_string(),
                expected: format!("{} columns", self.dim),
                got: format!("{} columns", x.ncols()),
            });
        }
        Ok(())
    }

    /// Map a batch to the embedding space. Returns the embeddings and each
    /// row's total log-determinant.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_width(x, "flow_forward")?;
        let mut h = x.clone();
        let mut logdet = Array1::zeros(x.nrows());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, ld) = layer.forward(&h, i)?;
            h = y;
            logdet = logdet + ld;
        }
        Ok((h, logdet))
    }

    /// Map embeddings back to data space (exact layer inverses in reverse
    /// order).
    pub fn inverse(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(z, "flow_inverse")?;
        let mut h = z.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            h = layer.inverse(&h, i)?;
        }
        Ok(h)
    }

    /// Exact log-likelihood of each row: Gaussian base log-density of the
    /// embedding plus the accumulated log-determinant.
    pub fn log_likelihood(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let (z, logdet) = self.forward(x)?;
        let n = self.dim as f64;
        let norm = -(n / 2.0) * (2.0 * std::f64::consts::PI).ln();
        let ll = z
            .rows()
            .into_iter()
            .zip(logdet.iter())
            .map(|(row, &ld)| norm - 0.5 * row.iter().map(|v| v * v).sum::<f64>() + ld)
            .collect();
        Ok(ll)
    }

    /// Mean negative log-likelihood of a batch.
    pub fn nll_loss(&self, batch: &Array2<f64>) -> Result<f64> {
        if batch.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let ll = self.log_likelihood(batch)?;
        Ok(-ll.mean().expect("nonempty batch"))
    }

    /// Canonical parameter set: layers in order, `s` network before `t`,
    /// weight before bias within each linear layer.
    pub fn param_set(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .s_net
                .append_params(&format!("c{i}.s"), &mut out)
                .expect("canonical names are unique");
            layer
                .t_net
                .append_params(&format!("c{i}.t"), &mut out)
                .expect("canonical names are unique");
        }
        out
    }

    /// Load parameter values produced by [`FlowModel::param_set`].
    pub fn set_param_set(&mut self, source: &ParamSet) -> Result<()> {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.s_net.load_params(&format!("c{i}.s"), source)?;
            layer.t_net.load_params(&format!("c{i}.t"), source)?;
        }
        Ok(())
    }

    /// Resolve parameter nodes by canonical name through `lookup`.
    pub fn collect_ids(
        &self,
        mut lookup: impl FnMut(&str) -> Result<NodeId>,
    ) -> Result<FlowIds> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let s = layer.s_net.collect_ids(&format!("c{i}.s"), &mut lookup)?;
            let t = layer.t_net.collect_ids(&format!("c{i}.t"), &mut lookup)?;
            layers.push(CouplingIds { s, t });
        }
        Ok(FlowIds { layers })
    }

    /// Resolve parameter nodes from inserted leaves, `prefix` +` canonical
    /// name.
    pub fn ids_from_nodes(&self, nodes: &ParamNodes, prefix: &str) -> Result<FlowIds> {
        self.collect_ids(|name| nodes.node(&format!("{prefix}{name}")))
    }

    /// Record the forward map on a tape. Returns the embedding node and a
    /// rows×1 node of per-row log-determinants.
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        x: NodeId,
        ids: &FlowIds,
    ) -> Result<(NodeId, NodeId)> {
        let mut h = x;
        let mut logdet: Option<NodeId> = None;
        for (layer, lid) in self.layers.iter().zip(ids.layers.iter()) {
            let (y, ld) = layer.forward_graph(tape, self.dim, h, lid)?;
            h = y;
            logdet = Some(match logdet {
                None => ld,
                Some(acc) => tape.add(acc, ld)?,
            });
        }
        Ok((h, logdet.expect("at least one layer")))
    }

    /// Record the inverse map on a tape.
    pub fn inverse_graph(&self, tape: &mut Tape, z: NodeId, ids: &FlowIds) -> Result<NodeId> {
        let mut h = z;
        for (layer, lid) in self.layers.iter().zip(ids.layers.iter()).rev() {
            h = layer.inverse_graph(tape, self.dim, h, lid)?;
        }
        Ok(h)
    }

    /// Record per-row log-likelihoods on a tape (rows×1 node).
    pub fn log_likelihood_graph(
        &self,
        tape: &mut Tape,
        x: NodeId,
        ids: &FlowIds,
    ) -> Result<NodeId> {
        let (z, logdet) = self.forward_graph(tape, x, ids)?;
        let lp = tape.gaussian_log_density_rows(z)?;
        tape.add(lp, logdet)
    }

    /// Record the mean negative log-likelihood of a batch node on a tape.
    pub fn nll_graph(&self, tape: &mut Tape, x: NodeId, ids: &FlowIds) -> Result<NodeId> {
        if tape.value(x).nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let ll = self.log_likelihood_graph(tape, x, ids)?;
        let mean = tape.mean(ll)?;
        tape.affine(mean, -1.0, 0.0)
    }
}

/// Independent fair coin per index; resample while either block is empty.
/// One dimension admits no such split, so the single coordinate is
/// transformed and the pass-through block stays empty.
fn sample_partition(dim: usize, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
    if dim == 1 {
        return (Vec::new(), vec![0]);
    }
    loop {
        let flags: Vec<bool> = (0..dim).map(|_| rng.gen::<f64>() < 0.5).collect();
        let pass: Vec<usize> = (0..dim).filter(|&i| flags[i]).collect();
        let trans: Vec<usize> = (0..dim).filter(|&i| !flags[i]).collect();
        if !pass.is_empty() && !trans.is_empty() {
            return (pass, trans);
        }
    }
}

/// Test helper: a coupling layer whose `s` and `t` networks output the given
/// constants for every input (zero weights, output-layer bias set to match).
pub fn constant_coupling_layer(
    dim: usize,
    pass_through: Vec<usize>,
    transformed: Vec<usize>,
    s_value: f64,
    t_value: f64,
) -> Result<CouplingLayer> {
    let hidden = dim.max(8);
    let d = pass_through.len();
    let m = transformed.len();
    let dims = [d, hidden, hidden, hidden, m];
    let make = |target: f64, act: Activation| -> Result<Mlp> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            weights.push(Array2::zeros((pair[0], pair[1])));
            biases.push(Array2::zeros((1, pair[1])));
        }
        let final_bias = match act {
            Activation::Linear => target,
            // tanh(atanh(v)) = v for |v| < 1.
            Activation::Tanh => {
                if target.abs() >= 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "constant scale {target} is outside tanh range"
                    )));
                }
                target.atanh()
            }
        };
        let last = biases.len() - 1;
        biases[last].fill(final_bias);
        Mlp::from_parts(weights, biases, act, DEFAULT_LEAKY_SLOPE)
    };
    let s_net = make(s_value, Activation::Tanh)?;
    let t_net = make(t_value, Activation::Linear)?;
    CouplingLayer::new(dim, pass_through, transformed, s_net, t_net)
}
