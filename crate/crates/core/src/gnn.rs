//! Siamese graph neural network encoder and matching head.
//!
//! Each layer applies every operator in the generator family to the current
//! node features, mixes the results through per-generator weight matrices,
//! normalizes, and applies the split ReLU/identity nonlinearity (the linear
//! half doubles as a concatenated residual path and lets the network express
//! power iterations). The two towers share weights. Final embeddings are
//! row-wise l2-normalized; the matching head takes the outer product of the
//! two embedding matrices, row-softmaxes it into a soft correspondence, and
//! decodes a node assignment from it.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assign::lap_solve;
use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graphgen::{Graph, Permutation};
use crate::operators::{self, OperatorFamily};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Scalar node feature the first layer consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFeature {
    /// Node degree.
    Degree,
    /// Number of distinct nodes within distance two, excluding the node
    /// itself. Breaks ties on regular graphs where plain degree is constant.
    TwoHopDegree,
}

/// Where batch normalization takes its statistics from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Statistics of the current input. Training always uses this; it also
    /// makes the encoder exactly equivariant to node relabelling, so it is
    /// the evaluation default.
    BatchStats,
    /// Frozen running statistics accumulated during training.
    RunningStats,
}

/// How a permutation estimate is read off the soft correspondence matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    /// Row argmax; may produce a non-bijective map, which recovery scoring
    /// accepts as-is.
    Argmax,
    /// Exact linear assignment on the negated soft correspondence.
    Lap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub layers: usize,
    pub feat: usize,
    pub j_powers: usize,
    pub input_feature: InputFeature,
    pub bn_mode: BnMode,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: 20,
            feat: 20,
            j_powers: 2,
            input_feature: InputFeature::Degree,
            bn_mode: BnMode::BatchStats,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.feat == 0 || !self.feat.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "feat must be a positive even number (split nonlinearity), got {}",
                self.feat
            )));
        }
        Ok(())
    }

    /// Input width of layer `k` (a single scalar feature feeds layer 0).
    fn d_in(&self, k: usize) -> usize {
        if k == 0 {
            1
        } else {
            self.feat
        }
    }

    fn family_size(&self) -> usize {
        OperatorFamily::size_for(self.j_powers)
    }
}

/// One layer: generator-stacked mixing weights plus batch-norm state. The
/// weight matrix holds the per-generator blocks `theta_B` stacked in family
/// order, block `b` in rows `[b*d_in, (b+1)*d_in)`.
#[derive(Debug, Clone)]
struct GnnLayer {
    theta: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
}

/// Trainable model. Parameter order is fixed: for each layer,
/// `[theta, gamma, beta]`.
#[derive(Debug, Clone)]
pub struct GnnModel {
    cfg: GnnConfig,
    layers: Vec<GnnLayer>,
}

/// Soft correspondence plus decoded assignment for one graph pair.
#[derive(Debug, Clone)]
pub struct MatchOutcome {
    /// Row-stochastic n x n matrix.
    pub soft: Tensor,
    /// Decoded map, row i of graph 1 to node `perm_hat[i]` of graph 2. Always
    /// bijective under LAP decoding, possibly not under argmax.
    pub perm_hat: Vec<usize>,
    /// Fraction of correctly matched nodes, when ground truth was supplied.
    pub recovery: Option<f64>,
}

/// Fraction of rows whose decoded match agrees with the planted permutation.
pub fn recovery_fraction(assignment: &[usize], truth: &Permutation) -> f64 {
    let hits = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| truth.apply(i) == j)
        .count();
    hits as f64 / assignment.len() as f64
}

/// Per-sample training output.
pub struct SampleGrad {
    pub loss: f64,
    pub recovery: f64,
    pub grads: Vec<Tensor>,
    /// Per-layer batch statistics (mean, var), averaged over the two towers,
    /// for running-average tracking.
    pub bn_stats: Vec<(Array1<f64>, Array1<f64>)>,
}

struct LayerIds {
    theta: NodeId,
    gamma: NodeId,
    beta: NodeId,
}

impl GnnModel {
    /// Fresh model with uniform `±sqrt(6/(d_in + d_out))` weights, unit
    /// batch-norm scale and zero shift.
    pub fn new(cfg: GnnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::seed::rng(seed);
        let m = cfg.family_size();
        let layers = (0..cfg.layers)
            .map(|k| {
                let d_in = cfg.d_in(k);
                let d_out = cfg.feat;
                let bound = (6.0 / (d_in + d_out) as f64).sqrt();
                let theta = Tensor::from_shape_fn((m * d_in, d_out), |_| {
                    rng.random::<f64>() * 2.0 * bound - bound
                });
                GnnLayer {
                    theta,
                    gamma: Tensor::ones((1, d_out)),
                    beta: Tensor::zeros((1, d_out)),
                    running_mean: Array1::zeros(d_out),
                    running_var: Array1::ones(d_out),
                }
            })
            .collect();
        Ok(Self { cfg, layers })
    }

    pub fn cfg(&self) -> &GnnConfig {
        &self.cfg
    }

    /// Trainable parameters in fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.theta, &l.gamma, &l.beta])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.theta, &mut l.gamma, &mut l.beta])
            .collect()
    }

    /// Checkpoint entries: per-generator weight blocks (sliced out of the
    /// stacked matrix, in family order), batch-norm parameters, and running
    /// statistics.
    pub fn export_params(&self) -> Vec<(String, Tensor)> {
        let names = OperatorFamily::names(self.cfg.j_powers);
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let d_in = self.cfg.d_in(k);
            for (b, gen) in names.iter().enumerate() {
                let block = layer
                    .theta
                    .slice(s![b * d_in..(b + 1) * d_in, ..])
                    .to_owned();
                out.push((format!("layer{k}.theta.{gen}"), block));
            }
            out.push((format!("layer{k}.bn.gamma"), layer.gamma.clone()));
            out.push((format!("layer{k}.bn.beta"), layer.beta.clone()));
            out.push((
                format!("layer{k}.bn.running_mean"),
                layer.running_mean.clone().insert_axis(ndarray::Axis(0)),
            ));
            out.push((
                format!("layer{k}.bn.running_var"),
                layer.running_var.clone().insert_axis(ndarray::Axis(0)),
            ));
        }
        out
    }

    /// Rebuilds a model from checkpoint entries.
    pub fn from_params(
        cfg: GnnConfig,
        params: &std::collections::HashMap<String, Tensor>,
    ) -> Result<Self> {
        cfg.validate()?;
        let names = OperatorFamily::names(cfg.j_powers);
        let m = cfg.family_size();
        let fetch = |key: &str, dim: (usize, usize)| -> Result<Tensor> {
            let t = params
                .get(key)
                .ok_or_else(|| Error::Config(format!("checkpoint missing {key}")))?;
            if t.dim() != dim {
                return Err(Error::Config(format!(
                    "checkpoint entry {key} has shape {:?}, expected {:?}",
                    t.dim(),
                    dim
                )));
            }
            Ok(t.clone())
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for k in 0..cfg.layers {
            let d_in = cfg.d_in(k);
            let d_out = cfg.feat;
            let mut theta = Tensor::zeros((m * d_in, d_out));
            for (b, gen) in names.iter().enumerate() {
                let block = fetch(&format!("layer{k}.theta.{gen}"), (d_in, d_out))?;
                theta
                    .slice_mut(s![b * d_in..(b + 1) * d_in, ..])
                    .assign(&block);
            }
            layers.push(GnnLayer {
                theta,
                gamma: fetch(&format!("layer{k}.bn.gamma"), (1, d_out))?,
                beta: fetch(&format!("layer{k}.bn.beta"), (1, d_out))?,
                running_mean: fetch(&format!("layer{k}.bn.running_mean"), (1, d_out))?
                    .remove_axis(ndarray::Axis(0)),
                running_var: fetch(&format!("layer{k}.bn.running_var"), (1, d_out))?
                    .remove_axis(ndarray::Axis(0)),
            });
        }
        Ok(Self { cfg, layers })
    }

    /// Folds fresh batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(Array1<f64>, Array1<f64>)]) {
        for (layer, (mean, var)) in self.layers.iter_mut().zip(stats) {
            layer.running_mean = &layer.running_mean * (1.0 - BN_MOMENTUM) + &(mean * BN_MOMENTUM);
            layer.running_var = &layer.running_var * (1.0 - BN_MOMENTUM) + &(var * BN_MOMENTUM);
        }
    }

    fn insert_params(&self, tape: &mut Tape) -> Result<Vec<LayerIds>> {
        self.layers
            .iter()
            .map(|l| {
                Ok(LayerIds {
                    theta: tape.leaf(l.theta.clone())?,
                    gamma: tape.leaf(l.gamma.clone())?,
                    beta: tape.leaf(l.beta.clone())?,
                })
            })
            .collect()
    }

    /// Runs the encoder on a tape. Returns the embedding node and the
    /// batch-norm node of every layer.
    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        params: &[LayerIds],
        g: &Graph,
        mode: BnMode,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let fam = operators::build_family(g, self.cfg.j_powers);
        let m = fam.len();
        let stacked = tape.leaf(fam.stacked())?;
        let features = init_features(g, self.cfg.input_feature);
        let mut x = tape.leaf(features)?;
        let mut bn_nodes = Vec::with_capacity(self.layers.len());
        for (k, (layer, ids)) in self.layers.iter().zip(params).enumerate() {
            let at = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("layer {k}: {msg}")),
                other => other,
            };
            let sx = tape.matmul(stacked, x).map_err(at)?;
            let rx = tape.regroup(sx, m).map_err(at)?;
            let z = tape.matmul(rx, ids.theta).map_err(at)?;
            let running = match mode {
                BnMode::BatchStats => None,
                BnMode::RunningStats => Some((&layer.running_mean, &layer.running_var)),
            };
            let zb = tape
                .batch_norm(z, ids.gamma, ids.beta, BN_EPS, running)
                .map_err(at)?;
            bn_nodes.push(zb);
            x = tape.split_relu(zb).map_err(at)?;
        }
        let emb = tape.row_normalize(x)?;
        Ok((emb, bn_nodes))
    }

    /// Normalized node embeddings, using the configured batch-norm mode.
    pub fn encode(&self, g: &Graph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.insert_params(&mut tape)?;
        let (emb, _) = self.encode_on_tape(&mut tape, &params, g, self.cfg.bn_mode)?;
        Ok(tape.value(emb).clone())
    }

    /// Embeds both graphs with shared weights and decodes a matching.
    pub fn match_graphs(
        &self,
        g1: &Graph,
        g2: &Graph,
        decode: DecodeRule,
        truth: Option<&Permutation>,
    ) -> Result<MatchOutcome> {
        if g1.n() != g2.n() {
            return Err(Error::Parameter(format!(
                "graph sizes differ: {} vs {}",
                g1.n(),
                g2.n()
            )));
        }
        let e1 = self.encode(g1)?;
        let e2 = self.encode(g2)?;
        let soft = crate::diffcore::row_softmax_mat(&e1.dot(&e2.t()));
        decode_outcome(soft, decode, truth)
    }

    /// Cross-entropy of the soft correspondence against the planted
    /// permutation, for one sample.
    pub fn loss_sample(&self, g1: &Graph, g2: &Graph, pi: &Permutation) -> Result<f64> {
        let (loss, ..) = self.forward_loss(g1, g2, pi, self.cfg.bn_mode)?;
        Ok(loss)
    }

    /// Loss, argmax training recovery, and parameter gradients for one
    /// sample. Always uses batch statistics, as training does.
    pub fn loss_and_grads(&self, g1: &Graph, g2: &Graph, pi: &Permutation) -> Result<SampleGrad> {
        let mut tape = Tape::new();
        let params = self.insert_params(&mut tape)?;
        let (e1, bn1) = self.encode_on_tape(&mut tape, &params, g1, BnMode::BatchStats)?;
        let (e2, bn2) = self.encode_on_tape(&mut tape, &params, g2, BnMode::BatchStats)?;
        let logits = tape.matmul_nt(e1, e2)?;
        let soft = tape.row_softmax(logits)?;
        let loss = tape.cross_entropy(soft, pi)?;

        let recovery = recovery_fraction(&argmax_rows(tape.value(soft)), pi);
        let grads_all = tape.backward(loss)?;
        let mut grads = Vec::with_capacity(self.layers.len() * 3);
        for (ids, layer) in params.iter().zip(&self.layers) {
            grads.push(grads_all.get_or_zeros(ids.theta, layer.theta.dim()));
            grads.push(grads_all.get_or_zeros(ids.gamma, layer.gamma.dim()));
            grads.push(grads_all.get_or_zeros(ids.beta, layer.beta.dim()));
        }
        let bn_stats = bn1
            .iter()
            .zip(&bn2)
            .map(|(&a, &b)| {
                let (m1, v1) = tape.bn_batch_stats(a).unwrap();
                let (m2, v2) = tape.bn_batch_stats(b).unwrap();
                ((m1 + m2) * 0.5, (v1 + v2) * 0.5)
            })
            .collect();
        Ok(SampleGrad {
            loss: tape.value(loss)[[0, 0]],
            recovery,
            grads,
            bn_stats,
        })
    }

    /// Loss evaluated with explicit parameter values (in `params()` order)
    /// under batch statistics, the mode training differentiates through.
    /// Exists so derivative checks can probe the full model numerically.
    pub fn loss_with_params(
        &self,
        params: &[Tensor],
        g1: &Graph,
        g2: &Graph,
        pi: &Permutation,
    ) -> Result<f64> {
        let mut probe = self.clone();
        if params.len() != probe.params().len() {
            return Err(Error::Parameter(format!(
                "expected {} parameter tensors, got {}",
                probe.params().len(),
                params.len()
            )));
        }
        for (slot, p) in probe.params_mut().into_iter().zip(params) {
            *slot = p.clone();
        }
        probe
            .forward_loss(g1, g2, pi, BnMode::BatchStats)
            .map(|(l, _)| l)
    }

    fn forward_loss(
        &self,
        g1: &Graph,
        g2: &Graph,
        pi: &Permutation,
        mode: BnMode,
    ) -> Result<(f64, Tensor)> {
        if g1.n() != g2.n() || pi.len() != g1.n() {
            return Err(Error::Parameter("sample sizes disagree".into()));
        }
        let mut tape = Tape::new();
        let params = self.insert_params(&mut tape)?;
        let (e1, _) = self.encode_on_tape(&mut tape, &params, g1, mode)?;
        let (e2, _) = self.encode_on_tape(&mut tape, &params, g2, mode)?;
        let logits = tape.matmul_nt(e1, e2)?;
        let soft = tape.row_softmax(logits)?;
        let loss = tape.cross_entropy(soft, pi)?;
        Ok((tape.value(loss)[[0, 0]], tape.value(soft).clone()))
    }
}

/// Scalar input column for the first layer.
pub fn init_features(g: &Graph, kind: InputFeature) -> Tensor {
    let n = g.n();
    match kind {
        InputFeature::Degree => Array2::from_shape_fn((n, 1), |(i, _)| g.degree(i)),
        InputFeature::TwoHopDegree => {
            // Nodes at distance one or two: support of A + A^2, diagonal
            // excluded.
            let a = g.adj();
            let a2 = a.dot(a);
            Array2::from_shape_fn((n, 1), |(i, _)| {
                (0..n)
                    .filter(|&j| j != i && (a[[i, j]] > 0.0 || a2[[i, j]] > 0.0))
                    .count() as f64
            })
        }
    }
}

fn argmax_rows(m: &Tensor) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap()
        })
        .collect()
}

fn decode_outcome(
    soft: Tensor,
    decode: DecodeRule,
    truth: Option<&Permutation>,
) -> Result<MatchOutcome> {
    let perm_hat = match decode {
        DecodeRule::Argmax => argmax_rows(&soft),
        DecodeRule::Lap => {
            let (perm, _) = lap_solve(&soft.mapv(|v| -v))?;
            perm.as_slice().to_vec()
        }
    };
    let recovery = truth.map(|t| recovery_fraction(&perm_hat, t));
    Ok(MatchOutcome {
        soft,
        perm_hat,
        recovery,
    })
}

/// Builds a `MatchOutcome` from a raw similarity matrix: soft scores via row
/// softmax, assignment via exact LAP. The spectral baselines share this.
pub(crate) fn outcome_from_similarity(
    similarity: &Tensor,
    truth: Option<&Permutation>,
) -> Result<MatchOutcome> {
    let (perm, _) = lap_solve(&similarity.mapv(|v| -v))?;
    let soft = crate::diffcore::row_softmax_mat(similarity);
    let recovery = truth.map(|t| recovery_fraction(perm.as_slice(), t));
    Ok(MatchOutcome {
        soft,
        perm_hat: perm.as_slice().to_vec(),
        recovery,
    })
}
