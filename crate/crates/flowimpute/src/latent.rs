//! The feedforward network operating in the flow's embedding space, and its
//! training objective: observed-entry reconstruction plus a weighted
//! likelihood-maximization term.
//!
//! The network maps an embedding of the current completed sample to the
//! embedding of a candidate completion. Its loss pulls the decoded candidate
//! toward the observed entries while pushing it toward high density under
//! the current flow; gradients of that loss update only this network — the
//! flow parameters are behind a stop-gradient boundary on every encode and
//! decode in this path.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{NodeId, ParamNodes, ParamSet, Tape};
use crate::dataset::RngStream;
use crate::error::{Error, Result};
use crate::flow::{FlowIds, FlowModel, DEFAULT_LEAKY_SLOPE};

/// Number of linear layers in the embedding network.
pub const LATENT_LAYERS: usize = 5;

/// Weight initialization scheme for [`LatentNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentInit {
    /// Identity weights plus small uniform noise, zero biases. The default:
    /// at the start of training the completed data already matches the
    /// observations, so the best map is close to the identity.
    IdentitySkip,
    /// Same fan-in-scaled uniform scheme as the coupling networks.
    Uniform,
}

/// Five linear layers of width `n` with leaky-rectifier activations between
/// them and a linear final output.
#[derive(Debug, Clone)]
pub struct LatentNet {
    dim: usize,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array2<f64>>,
    leaky_slope: f64,
}

/// Tape nodes for a [`LatentNet`]'s parameters.
#[derive(Debug, Clone)]
pub struct LatentIds {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
}

/// Noise half-width used by the identity-skip initialization.
const IDENTITY_NOISE: f64 = 0.01;

impl LatentNet {
    pub fn init(dim: usize, scheme: LatentInit, rng: &mut RngStream) -> Result<LatentNet> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding network needs a positive dimension".to_string(),
            ));
        }
        let mut weights = Vec::with_capacity(LATENT_LAYERS);
        let mut biases = Vec::with_capacity(LATENT_LAYERS);
        for _ in 0..LATENT_LAYERS {
            let w = match scheme {
                LatentInit::IdentitySkip => Array2::from_shape_fn((dim, dim), |(i, j)| {
                    let noise = rng.gen_range(-IDENTITY_NOISE..=IDENTITY_NOISE);
                    if i == j {
                        1.0 + noise
                    } else {
                        noise
                    }
                }),
                LatentInit::Uniform => {
                    let bound = 1.0 / (dim as f64).sqrt();
                    Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-bound..=bound))
                }
            };
            weights.push(w);
            biases.push(Array2::zeros((1, dim)));
        }
        Ok(LatentNet {
            dim,
            weights,
            biases,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        })
    }

    /// Assemble from explicit layers (checkpoint reconstruction, exact
    /// identity maps in tests).
    pub fn from_parts(
        dim: usize,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array2<f64>>,
        leaky_slope: f64,
    ) -> Result<LatentNet> {
        if weights.len() != LATENT_LAYERS || biases.len() != LATENT_LAYERS {
            return Err(Error::InvalidArgument(format!(
                "embedding network has exactly {LATENT_LAYERS} layers"
            )));
        }
        for (w, b) in weights.iter().zip(biases.iter()) {
            if w.dim() != (dim, dim) || b.dim() != (1, dim) {
                return Err(Error::ShapeMismatch {
                    op: "latent_from_parts".to_string(),
                    expected: format!("{dim}x{dim} weights and 1x{dim} biases"),
                    got: format!("{:?} and {:?}", w.dim(), b.dim()),
                });
            }
        }
        Ok(LatentNet {
            dim,
            weights,
            biases,
            leaky_slope,
        })
    }

    /// An exact identity map (identity weights, zero biases). On
    /// nonnegative inputs the rectifiers are transparent and the network
    /// reproduces its input exactly.
    pub fn exact_identity(dim: usize) -> LatentNet {
        let weights = (0..LATENT_LAYERS).map(|_| Array2::eye(dim)).collect();
        let biases = (0..LATENT_LAYERS).map(|_| Array2::zeros((1, dim))).collect();
        LatentNet {
            dim,
            weights,
            biases,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    /// Forward evaluation of a batch of embeddings.
    pub fn forward(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "latent_map".to_string(),
                expected: format!("{} columns", self.dim),
                got: format!("{} columns", z.ncols()),
            });
        }
        let mut h = z.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            h = h.dot(w) + b;
            if i != last {
                let slope = self.leaky_slope;
                h = h.mapv(|v| if v > 0.0 { v } else { slope * v });
            }
        }
        Ok(h)
    }

    /// The same computation recorded on a tape.
    pub fn forward_graph(&self, tape: &mut Tape, z: NodeId, ids: &LatentIds) -> Result<NodeId> {
        let mut h = z;
        let last = self.weights.len() - 1;
        for i in 0..self.weights.len() {
            h = tape.matmul(h, ids.weights[i])?;
            h = tape.add_row(h, ids.biases[i])?;
            if i != last {
                h = tape.leaky_relu(h, self.leaky_slope)?;
            }
        }
        Ok(h)
    }

    /// Canonical parameter set: layers in order, weight before bias.
    pub fn param_set(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (i, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            out.insert(&format!("h{i}.w"), w.clone())
                .expect("canonical names are unique");
            out.insert(&format!("h{i}.b"), b.clone())
                .expect("canonical names are unique");
        }
        out
    }

    /// Load parameter values produced by [`LatentNet::param_set`].
    pub fn set_param_set(&mut self, source: &ParamSet) -> Result<()> {
        for i in 0..self.weights.len() {
            let w = source
                .get(&format!("h{i}.w"))
                .ok_or_else(|| Error::UnknownParam(format!("h{i}.w")))?;
            let b = source
                .get(&format!("h{i}.b"))
                .ok_or_else(|| Error::UnknownParam(format!("h{i}.b")))?;
            if w.dim() != (self.dim, self.dim) || b.dim() != (1, self.dim) {
                return Err(Error::ShapeMismatch {
                    op: "latent_set_params".to_string(),
                    expected: format!("{0}x{0} and 1x{0}", self.dim),
                    got: format!("{:?} and {:?}", w.dim(), b.dim()),
                });
            }
            self.weights[i] = w.clone();
            self.biases[i] = b.clone();
        }
        Ok(())
    }

    /// Resolve parameter nodes by canonical name through `lookup`.
    pub fn collect_ids(
        &self,
        mut lookup: impl FnMut(&str) -> Result<NodeId>,
    ) -> Result<LatentIds> {
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for i in 0..self.weights.len() {
            weights.push(lookup(&format!("h{i}.w"))?);
            biases.push(lookup(&format!("h{i}.b"))?);
        }
        Ok(LatentIds { weights, biases })
    }

    /// Resolve parameter nodes from inserted leaves, `prefix` + canonical
    /// name.
    pub fn ids_from_nodes(&self, nodes: &ParamNodes, prefix: &str) -> Result<LatentIds> {
        self.collect_ids(|name| nodes.node(&format!("{prefix}{name}")))
    }
}

/// Per-entry reconstruction weights: `1/o_i` on row `i`'s observed entries
/// and zero elsewhere, where `o_i` counts the row's observed entries. The
/// weighted sum of squared residuals over a row is then its mean squared
/// error over observed entries. Errors if any row has nothing observed.
pub fn observed_mse_weights(mask: &Array2<bool>) -> Result<Array2<f64>> {
    let mut w = Array2::zeros(mask.dim());
    for (i, row) in mask.rows().into_iter().enumerate() {
        let observed = row.iter().filter(|&&m| !m).count();
        if observed == 0 {
            return Err(Error::FullyMissingRow { row: i });
        }
        let inv = 1.0 / observed as f64;
        for (j, &m) in row.iter().enumerate() {
            if !m {
                w[(i, j)] = inv;
            }
        }
    }
    Ok(w)
}

/// Training loss of the embedding network on one batch.
///
/// Each row of `batch` is a completed sample; `mask` marks which of its
/// entries are imputed (`true`) rather than observed. The sample is encoded
/// by the flow, mapped through the network, decoded back to data space, and
/// scored as the per-row mean squared error over observed entries minus
/// `lambda` times the log-likelihood of the decoded candidate, averaged over
/// rows. The likelihood is computed by re-encoding the candidate through the
/// flow.
pub fn h_loss(
    batch: &Array2<f64>,
    mask: &Array2<bool>,
    flow: &FlowModel,
    net: &LatentNet,
    lambda: f64,
) -> Result<f64> {
    if batch.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.dim() != mask.dim() {
        return Err(Error::ShapeMismatch {
            op: "h_loss".to_string(),
            expected: format!("{:?}", batch.dim()),
            got: format!("{:?}", mask.dim()),
        });
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let weights = observed_mse_weights(mask)?;
    let (z_dot, _) = flow.forward(batch)?;
    let z_hat = net.forward(&z_dot)?;
    let x_hat = flow.inverse(&z_hat)?;

    let diff = batch - &x_hat;
    let mse_rows: Array1<f64> = diff
        .rows()
        .into_iter()
        .zip(weights.rows())
        .map(|(d, w)| d.iter().zip(w.iter()).map(|(&e, &wt)| wt * e * e).sum())
        .collect();
    let mse_term = mse_rows.mean().expect("nonempty batch");

    let ll = flow.log_likelihood(&x_hat)?;
    let ll_term = ll.mean().expect("nonempty batch");

    Ok(mse_term - lambda * ll_term)
}

/// Record [`h_loss`] on a tape.
///
/// `flow_ids` must already be behind stop-gradients (see
/// [`FlowIds::stopped`]) when the caller intends the contract that this
/// loss never updates flow parameters; the builder itself composes
/// identically either way.
pub fn h_loss_graph(
    tape: &mut Tape,
    batch: NodeId,
    mask: &Array2<bool>,
    flow: &FlowModel,
    flow_ids: &FlowIds,
    net: &LatentNet,
    net_ids: &LatentIds,
    lambda: f64,
) -> Result<NodeId> {
    if tape.value(batch).nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let weights = observed_mse_weights(mask)?;
    let (z_dot, _) = flow.forward_graph(tape, batch, flow_ids)?;
    let z_hat = net.forward_graph(tape, z_dot, net_ids)?;
    let x_hat = flow.inverse_graph(tape, z_hat, flow_ids)?;

    let diff = tape.sub(batch, x_hat)?;
    let sq = tape.mul(diff, diff)?;
    let weighted = tape.mul_const(sq, &weights)?;
    let mse_rows = tape.row_sum(weighted)?;
    let mse_term = tape.mean(mse_rows)?;

    let ll_rows = flow.log_likelihood_graph(tape, x_hat, flow_ids)?;
    let ll_mean = tape.mean(ll_rows)?;
    let penalty = tape.affine(ll_mean, -lambda, 0.0)?;
    tape.add(mse_term, penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{
        evaluate_with_gradients, finite_difference_gradient, max_relative_gap,
    };
    use crate::flow::constant_coupling_layer;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn identity_flow(dim: usize) -> FlowModel {
        let pass: Vec<usize> = (0..dim / 2).collect();
        let trans: Vec<usize> = (dim / 2..dim).collect();
        let layer = constant_coupling_layer(dim, pass, trans, 0.0, 0.0).unwrap();
        FlowModel::from_layers(dim, dim.max(8), DEFAULT_LEAKY_SLOPE, vec![layer]).unwrap()
    }

    fn zero_net(dim: usize) -> LatentNet {
        let weights = (0..LATENT_LAYERS).map(|_| Array2::zeros((dim, dim))).collect();
        let biases = (0..LATENT_LAYERS)
            .map(|_| Array2::zeros((1, dim)))
            .collect();
        LatentNet::from_parts(dim, weights, biases, DEFAULT_LEAKY_SLOPE).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = zero_net(3);
        let out = net.forward(&array![[1.0, -2.0, 3.0]]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_network_fixes_nonnegative_inputs() {
        let net = LatentNet::exact_identity(3);
        let z = array![[0.5, 0.0, 2.0]];
        assert_eq!(net.forward(&z).unwrap(), z);
    }

    #[test]
    fn scalar_chain_of_unit_weights() {
        // n=1, all weights 1, all biases 0, input 2: five transparent layers.
        let weights = (0..LATENT_LAYERS).map(|_| array![[1.0]]).collect();
        let biases = (0..LATENT_LAYERS).map(|_| array![[0.0]]).collect();
        let net = LatentNet::from_parts(1, weights, biases, DEFAULT_LEAKY_SLOPE).unwrap();
        let out = net.forward(&array![[2.0]]).unwrap();
        assert_relative_eq!(out[(0, 0)], 2.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = zero_net(3);
        assert!(net.forward(&Array2::zeros((1, 4))).is_err());
    }

    #[test]
    fn identity_pipeline_with_zero_lambda_has_zero_loss() {
        let flow = identity_flow(2);
        let net = LatentNet::exact_identity(2);
        let batch = array![[0.2, 0.9], [0.8, 0.1]];
        let mask = Array2::from_elem((2, 2), false);
        let loss = h_loss(&batch, &mask, &flow, &net, 0.0).unwrap();
        assert_relative_eq!(loss, 0.0);
    }

    #[test]
    fn identity_pipeline_with_unit_lambda_equals_nll() {
        let flow = identity_flow(2);
        let net = LatentNet::exact_identity(2);
        let batch = array![[0.2, 0.9], [0.8, 0.1]];
        let mask = array![[false, true], [true, false]];
        let loss = h_loss(&batch, &mask, &flow, &net, 1.0).unwrap();
        let nll = flow.nll_loss(&batch).unwrap();
        assert_relative_eq!(loss, nll, max_relative = 1e-12);
    }

    #[test]
    fn zero_network_mse_is_hand_computable() {
        // Identity flow, network output fixed at the origin, one fully
        // observed row (1, 2): the loss is (1 + 4) / 2.
        let flow = identity_flow(2);
        let net = zero_net(2);
        let batch = array![[1.0, 2.0]];
        let mask = Array2::from_elem((1, 2), false);
        let loss = h_loss(&batch, &mask, &flow, &net, 0.0).unwrap();
        assert_relative_eq!(loss, 2.5, max_relative = 1e-12);
    }

    #[test]
    fn fully_missing_row_is_rejected() {
        let flow = identity_flow(2);
        let net = LatentNet::exact_identity(2);
        let batch = array![[1.0, 2.0]];
        let mask = Array2::from_elem((1, 2), true);
        assert!(matches!(
            h_loss(&batch, &mask, &flow, &net, 0.0),
            Err(Error::FullyMissingRow { row: 0 })
        ));
    }

    #[test]
    fn loss_is_invariant_to_row_permutation() {
        let mut rng = RngStream::new(6);
        let flow = FlowModel::init(3, 2, None, &mut rng).unwrap();
        let net = LatentNet::init(3, LatentInit::IdentitySkip, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((5, 3), |_| rng.gen_range(0.05..0.95));
        let mask = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) % 3 == 0);
        let loss = h_loss(&batch, &mask, &flow, &net, 0.7).unwrap();

        let perm = [4usize, 0, 3, 1, 2];
        let pb = batch.select(ndarray::Axis(0), &perm);
        let pm = mask.select(ndarray::Axis(0), &perm);
        let ploss = h_loss(&pb, &pm, &flow, &net, 0.7).unwrap();
        assert_relative_eq!(loss, ploss, max_relative = 1e-12);
    }

    #[test]
    fn lambda_shift_is_linear_in_mean_log_likelihood() {
        let mut rng = RngStream::new(16);
        let flow = FlowModel::init(3, 2, None, &mut rng).unwrap();
        let net = LatentNet::init(3, LatentInit::Uniform, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((4, 3), |_| rng.gen_range(0.05..0.95));
        let mask = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) % 4 == 0);

        let (l1, l2) = (0.3, 1.9);
        let loss1 = h_loss(&batch, &mask, &flow, &net, l1).unwrap();
        let loss2 = h_loss(&batch, &mask, &flow, &net, l2).unwrap();

        let (z_dot, _) = flow.forward(&batch).unwrap();
        let x_hat = flow.inverse(&net.forward(&z_dot).unwrap()).unwrap();
        let mean_ll = flow.log_likelihood(&x_hat).unwrap().mean().unwrap();
        assert_relative_eq!(loss2 - loss1, -(l2 - l1) * mean_ll, max_relative = 1e-10);
    }

    #[test]
    fn graph_matches_pure_evaluation() {
        let mut rng = RngStream::new(23);
        let flow = FlowModel::init(4, 3, None, &mut rng).unwrap();
        let net = LatentNet::init(4, LatentInit::IdentitySkip, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((6, 4), |_| rng.gen_range(0.05..0.95));
        let mask = Array2::from_shape_fn((6, 4), |(i, j)| (i + 2 * j) % 5 == 0);
        let lambda = 1.3;

        let pure = h_loss(&batch, &mask, &flow, &net, lambda).unwrap();

        let mut merged = ParamSet::new();
        merged.extend_prefixed("flow.", &flow.param_set()).unwrap();
        merged.extend_prefixed("latent.", &net.param_set()).unwrap();
        let mut tape = Tape::new();
        let nodes = ParamNodes::insert_leaves(&mut tape, &merged).unwrap();
        let flow_ids = flow.ids_from_nodes(&nodes, "flow.").unwrap();
        let stopped = flow_ids.stopped(&mut tape).unwrap();
        let net_ids = net.ids_from_nodes(&nodes, "latent.").unwrap();
        let x = tape.constant(batch.clone()).unwrap();
        let loss =
            h_loss_graph(&mut tape, x, &mask, &flow, &stopped, &net, &net_ids, lambda).unwrap();
        assert_relative_eq!(tape.scalar(loss).unwrap(), pure, max_relative = 1e-12);
    }

    #[test]
    fn gradients_update_only_the_embedding_network() {
        let mut rng = RngStream::new(20);
        let flow = FlowModel::init(3, 2, Some(4), &mut rng).unwrap();
        let net = LatentNet::init(3, LatentInit::IdentitySkip, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((5, 3), |_| rng.gen_range(0.05..0.95));
        let mask = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) % 3 == 0);
        let lambda = 1.0;

        let mut merged = ParamSet::new();
        merged.extend_prefixed("flow.", &flow.param_set()).unwrap();
        merged.extend_prefixed("latent.", &net.param_set()).unwrap();
        let build = |tape: &mut Tape, nodes: &ParamNodes| {
            let flow_ids = flow.ids_from_nodes(nodes, "flow.")?;
            let stopped = flow_ids.stopped(tape)?;
            let net_ids = net.ids_from_nodes(nodes, "latent.")?;
            let x = tape.constant(batch.clone())?;
            h_loss_graph(tape, x, &mask, &flow, &stopped, &net, &net_ids, lambda)
        };
        let (_, grads) = evaluate_with_gradients(&merged, build).unwrap();
        for (name, g) in grads.iter() {
            if name.starts_with("flow.") {
                assert!(
                    g.iter().all(|&v| v == 0.0),
                    "flow parameter {name} received gradient"
                );
            }
        }
        let latent_mass: f64 = grads
            .iter()
            .filter(|(n, _)| n.starts_with("latent."))
            .map(|(_, g)| g.iter().map(|v| v.abs()).sum::<f64>())
            .sum();
        assert!(latent_mass > 0.0, "embedding network received no gradient");
    }

    #[test]
    fn latent_gradients_match_finite_differences() {
        // Flow parameters enter as constants here so the check exercises
        // exactly the coordinates the training loop updates.
        let mut rng = RngStream::new(20);
        let flow = FlowModel::init(3, 2, Some(4), &mut rng).unwrap();
        let net = LatentNet::init(3, LatentInit::IdentitySkip, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((5, 3), |_| rng.gen_range(0.05..0.95));
        let mask = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) % 3 == 0);
        let lambda = 1.0;

        let params = net.param_set();
        let build = |tape: &mut Tape, nodes: &ParamNodes| {
            let flow_ids = flow.collect_ids(|name| {
                let v = flow.param_set().get(name).unwrap().clone();
                tape.constant(v)
            })?;
            let net_ids = net.ids_from_nodes(nodes, "")?;
            let x = tape.constant(batch.clone())?;
            h_loss_graph(tape, x, &mask, &flow, &flow_ids, &net, &net_ids, lambda)
        };
        let (_, analytic) = evaluate_with_gradients(&params, build).unwrap();
        let numeric = finite_difference_gradient(&params, build, 1e-3).unwrap();
        let gap = max_relative_gap(&analytic, &numeric, 1e-8);
        assert!(gap < 1e-4, "max relative gradient gap {gap}");
    }
}
