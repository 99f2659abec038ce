//! Reverse-mode differentiation over recorded matrix operations.
//!
//! A [`Tape`] records every operation applied to its nodes during the forward
//! pass. [`Tape::backward`] then walks the record in reverse, applying each
//! operation's adjoint rule and accumulating gradients for every node. Values
//! are dense `f64` matrices (scalars are 1×1, row vectors 1×n).
//!
//! Every operation validates shapes and checks its output for non-finite
//! values, so a NaN or infinity surfaces as an error naming the operation
//! that produced it rather than poisoning the rest of the computation.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Leaf value: a parameter or a constant input. No inputs.
    Input,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast-add a 1×c row vector to every row of an r×c matrix.
    AddRow(NodeId, NodeId),
    /// Elementwise `scale * x + shift` with constant coefficients.
    Affine { input: NodeId, scale: f64 },
    Tanh(NodeId),
    LeakyRelu { input: NodeId, slope: f64 },
    Exp(NodeId),
    Ln(NodeId),
    /// Gather the given columns, in order.
    SelectCols { input: NodeId, cols: Vec<usize> },
    /// Assemble an r×width matrix from two column sets.
    MergeCols {
        a: NodeId,
        a_cols: Vec<usize>,
        b: NodeId,
        b_cols: Vec<usize>,
    },
    /// Elementwise product with a constant matrix (e.g. a mask of weights).
    MulConst { input: NodeId, factor: Array2<f64> },
    /// Sum along each row: r×c → r×1.
    RowSum(NodeId),
    /// Sum of all entries: → 1×1.
    Sum(NodeId),
    /// Mean of all entries: → 1×1.
    Mean(NodeId),
    /// Identity forward, zero adjoint: blocks gradient flow.
    StopGrad,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Affine { .. } => "affine",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::SelectCols { .. } => "select_cols",
            Op::MergeCols { .. } => "merge_cols",
            Op::MulConst { .. } => "mul_const",
            Op::RowSum(..) => "row_sum",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::StopGrad => "stop_grad",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients of one scalar node with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

impl Gradients {
    /// Gradient with respect to the given node.
    pub fn wrt(&self, id: NodeId) -> &Array2<f64> {
        &self.grads[id.0]
    }
}

/// A recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, expected: String, got: String) -> Error {
    Error::ShapeMismatch {
        op: op.to_string(),
        expected,
        got,
    }
}

fn dims(a: &Array2<f64>) -> String {
    format!("{}x{}", a.nrows(), a.ncols())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node as a plain scalar.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.dim() != (1, 1) {
            return Err(shape_err("scalar", "1x1".to_string(), dims(v)));
        }
        Ok(v[(0, 0)])
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Result<NodeId> {
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
                detail: format!("node {} of shape {}", self.nodes.len(), dims(&value)),
            });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        Ok(id)
    }

    /// Insert a leaf whose gradient will be read after [`Tape::backward`].
    pub fn leaf(&mut self, value: Array2<f64>) -> Result<NodeId> {
        self.push(value, Op::Input)
    }

    /// Insert a value that participates in the computation but whose
    /// gradient is of no interest. Identical to [`Tape::leaf`]; the split
    /// exists to make call sites read clearly.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<NodeId> {
        self.push(value, Op::Input)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(shape_err(
                "matmul",
                format!("inner dims to agree ({} vs {})", va.ncols(), vb.nrows()),
                format!("{} . {}", dims(va), dims(vb)),
            ));
        }
        let value = va.dot(vb);
        self.push(value, Op::MatMul(a, b))
    }

    fn binary_same_shape(&mut self, op_name: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(shape_err(op_name, dims(va), dims(vb)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != vx.ncols() {
            return Err(shape_err(
                "add_row",
                format!("1x{}", vx.ncols()),
                dims(vr),
            ));
        }
        let value = vx + vr;
        self.push(value, Op::AddRow(x, row))
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let value = self.value(x).mapv(|v| scale * v + shift);
        self.push(value, Op::Affine { input: x, scale })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let value = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { input: x, slope })
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).mapv(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).mapv(f64::ln);
        self.push(value, Op::Ln(x))
    }

    pub fn select_cols(&mut self, x: NodeId, cols: &[usize]) -> Result<NodeId> {
        let vx = self.value(x);
        let n = vx.ncols();
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(shape_err(
                "select_cols",
                format!("column < {n}"),
                format!("column {bad}"),
            ));
        }
        let mut value = Array2::zeros((vx.nrows(), cols.len()));
        for (k, &c) in cols.iter().enumerate() {
            value.column_mut(k).assign(&vx.column(c));
        }
        self.push(
            value,
            Op::SelectCols {
                input: x,
                cols: cols.to_vec(),
            },
        )
    }

    /// Assemble a matrix of `width` columns: column `a_cols[k]` of the output
    /// takes column `k` of `a`, and likewise for `b`. The two column sets
    /// must partition `0..width`.
    pub fn merge_cols(
        &mut self,
        width: usize,
        a: NodeId,
        a_cols: &[usize],
        b: NodeId,
        b_cols: &[usize],
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(shape_err("merge_cols", dims(va), dims(vb)));
        }
        if va.ncols() != a_cols.len() || vb.ncols() != b_cols.len() {
            return Err(shape_err(
                "merge_cols",
                format!("{} and {} columns", a_cols.len(), b_cols.len()),
                format!("{} and {}", va.ncols(), vb.ncols()),
            ));
        }
        let mut seen = vec![false; width];
        for &c in a_cols.iter().chain(b_cols.iter()) {
            if c >= width || seen[c] {
                return Err(shape_err(
                    "merge_cols",
                    format!("a partition of 0..{width}"),
                    format!("column {c} repeated or out of range"),
                ));
            }
            seen[c] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(shape_err(
                "merge_cols",
                format!("a partition of 0..{width}"),
                "columns left unassigned".to_string(),
            ));
        }
        let mut value = Array2::zeros((va.nrows(), width));
        for (k, &c) in a_cols.iter().enumerate() {
            value.column_mut(c).assign(&va.column(k));
        }
        for (k, &c) in b_cols.iter().enumerate() {
            value.column_mut(c).assign(&vb.column(k));
        }
        self.push(
            value,
            Op::MergeCols {
                a,
                a_cols: a_cols.to_vec(),
                b,
                b_cols: b_cols.to_vec(),
            },
        )
    }

    pub fn mul_const(&mut self, x: NodeId, factor: &Array2<f64>) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.dim() != factor.dim() {
            return Err(shape_err("mul_const", dims(vx), dims(factor)));
        }
        let value = vx * factor;
        self.push(
            value,
            Op::MulConst {
                input: x,
                factor: factor.clone(),
            },
        )
    }

    pub fn row_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let value = vx
            .sum_axis(Axis(1))
            .insert_axis(Axis(1))
            .into_dimensionality()
            .expect("row_sum keeps two dimensions");
        self.push(value, Op::RowSum(x))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.is_empty() {
            return Err(shape_err("mean", "a nonempty matrix".to_string(), dims(vx)));
        }
        let m = vx.sum() / vx.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(x))
    }

    pub fn stop_grad(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).clone();
        self.push(value, Op::StopGrad)
    }

    /// Per-row log-density of the standard multivariate Gaussian:
    /// `-(n/2)·ln(2π) - ½·Σ_k z_k²` for each row of `z`. Returns an r×1 node.
    pub fn gaussian_log_density_rows(&mut self, z: NodeId) -> Result<NodeId> {
        let n = self.value(z).ncols() as f64;
        let sq = self.mul(z, z)?;
        let rs = self.row_sum(sq)?;
        self.affine(rs, -0.5, -(n / 2.0) * (2.0 * std::f64::consts::PI).ln())
    }

    /// Reverse pass from a 1×1 scalar node. Returns the gradient of that
    /// scalar with respect to every node on the tape. Accumulation order is
    /// fixed by node index, so repeated calls are bit-identical.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(shape_err("backward", "1x1 loss".to_string(), dims(lv)));
        }
        let mut grads: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        grads[loss.0][(0, 0)] = 1.0;

        for i in (0..=loss.0).rev() {
            if grads[i].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[i].clone();
            match &self.nodes[i].op {
                Op::Input => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    grads[a.0] = &grads[a.0] + &g.dot(&vb.t());
                    grads[b.0] = &grads[b.0] + &va.t().dot(&g);
                }
                Op::Add(a, b) => {
                    grads[a.0] = &grads[a.0] + &g;
                    grads[b.0] = &grads[b.0] + &g;
                }
                Op::Sub(a, b) => {
                    grads[a.0] = &grads[a.0] + &g;
                    grads[b.0] = &grads[b.0] - &g;
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    grads[a.0] = &grads[a.0] + &(&g * vb);
                    grads[b.0] = &grads[b.0] + &(&g * va);
                }
                Op::AddRow(x, row) => {
                    grads[x.0] = &grads[x.0] + &g;
                    let col_totals = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    grads[row.0] = &grads[row.0] + &col_totals;
                }
                Op::Affine { input, scale, .. } => {
                    grads[input.0] = &grads[input.0] + &(&g * *scale);
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[i].value;
                    grads[x.0] = &grads[x.0] + &(&g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::LeakyRelu { input, slope } => {
                    let vx = &self.nodes[input.0].value;
                    let d = vx.mapv(|v| if v > 0.0 { 1.0 } else { *slope });
                    grads[input.0] = &grads[input.0] + &(&g * &d);
                }
                Op::Exp(x) => {
                    let y = &self.nodes[i].value;
                    grads[x.0] = &grads[x.0] + &(&g * y);
                }
                Op::Ln(x) => {
                    let vx = &self.nodes[x.0].value;
                    grads[x.0] = &grads[x.0] + &(&g / vx);
                }
                Op::SelectCols { input, cols } => {
                    for (k, &c) in cols.iter().enumerate() {
                        let upd = &grads[input.0].column(c) + &g.column(k);
                        grads[input.0].column_mut(c).assign(&upd);
                    }
                }
                Op::MergeCols {
                    a,
                    a_cols,
                    b,
                    b_cols,
                } => {
                    for (k, &c) in a_cols.iter().enumerate() {
                        let upd = &grads[a.0].column(k) + &g.column(c);
                        grads[a.0].column_mut(k).assign(&upd);
                    }
                    for (k, &c) in b_cols.iter().enumerate() {
                        let upd = &grads[b.0].column(k) + &g.column(c);
                        grads[b.0].column_mut(k).assign(&upd);
                    }
                }
                Op::MulConst { input, factor } => {
                    grads[input.0] = &grads[input.0] + &(&g * factor);
                }
                Op::RowSum(x) => {
                    let w = self.nodes[x.0].value.ncols();
                    let mut spread = Array2::zeros((g.nrows(), w));
                    for (mut out_row, g_row) in
                        spread.rows_mut().into_iter().zip(g.rows().into_iter())
                    {
                        out_row.fill(g_row[0]);
                    }
                    grads[x.0] = &grads[x.0] + &spread;
                }
                Op::Sum(x) => {
                    let gv = g[(0, 0)];
                    grads[x.0] = &grads[x.0] + gv;
                }
                Op::Mean(x) => {
                    let gv = g[(0, 0)] / self.nodes[x.0].value.len() as f64;
                    grads[x.0] = &grads[x.0] + gv;
                }
                Op::StopGrad => {}
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn matmul_forward_and_backward() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = t.leaf(array![[5.0], [6.0]]).unwrap();
        let c = t.matmul(a, b).unwrap();
        let s = t.sum(c).unwrap();
        assert_eq!(t.value(c), &array![[17.0], [39.0]]);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a), &array![[5.0, 6.0], [5.0, 6.0]]);
        assert_eq!(g.wrt(b), &array![[4.0], [6.0]]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.0]]).unwrap();
        let y = t.tanh(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_relative_eq!(g.wrt(x)[(0, 0)], 1.0);
    }

    #[test]
    fn leaky_relu_negative_branch() {
        let mut t = Tape::new();
        let x = t.leaf(array![[-2.0]]).unwrap();
        let y = t.leaky_relu(x, 0.01).unwrap();
        assert_relative_eq!(t.scalar(y).unwrap(), -0.02);
        let g = t.backward(y).unwrap();
        assert_relative_eq!(g.wrt(x)[(0, 0)], 0.01);
    }

    #[test]
    fn select_and_merge_round_trip() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let a = t.select_cols(x, &[0, 2]).unwrap();
        let b = t.select_cols(x, &[1]).unwrap();
        let y = t.merge_cols(3, a, &[0, 2], b, &[1]).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x), &Array2::ones((2, 3)));
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut t = Tape::new();
        let x = t.leaf(array![[3.0]]).unwrap();
        let y = t.stop_grad(x).unwrap();
        let z = t.mul(y, y).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.wrt(x)[(0, 0)], 0.0);
        assert_eq!(g.wrt(y)[(0, 0)], 6.0);
    }

    #[test]
    fn ln_of_nonpositive_is_reported() {
        let mut t = Tape::new();
        let x = t.leaf(array![[-1.0]]).unwrap();
        let err = t.ln(x).unwrap_err();
        match err {
            Error::NonFinite { op, .. } => assert_eq!(op, "ln"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn zero_width_matmul_is_fine() {
        let mut t = Tape::new();
        let x = t.leaf(Array2::zeros((3, 0))).unwrap();
        let w = t.leaf(Array2::zeros((0, 4))).unwrap();
        let y = t.matmul(x, w).unwrap();
        assert_eq!(t.value(y), &Array2::zeros((3, 4)));
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(w).dim(), (0, 4));
    }

    #[test]
    fn gaussian_log_density_matches_closed_form() {
        let mut t = Tape::new();
        let z = t.leaf(array![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let lp = t.gaussian_log_density_rows(z).unwrap();
        let expect0 = -(2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(t.value(lp)[(0, 0)], expect0, max_relative = 1e-12);
        assert_relative_eq!(t.value(lp)[(1, 0)], expect0 - 0.5, max_relative = 1e-12);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let x = t.leaf(array![[0.3, -0.7], [1.1, 0.2]]).unwrap();
            let w = t.leaf(array![[0.5, -0.2], [0.1, 0.9]]).unwrap();
            let h = t.matmul(x, w).unwrap();
            let a = t.tanh(h).unwrap();
            let s = t.mean(a).unwrap();
            let g = t.backward(s).unwrap();
            (t.scalar(s).unwrap(), g.wrt(w).clone())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert_eq!(g1, g2);
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
