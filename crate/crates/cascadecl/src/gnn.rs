//! The graph classifier: stacked propagation layers with differentiable
//! hierarchical pooling and a linear head over two classes.
//!
//! Each pooling level runs a two-layer embedding GNN and a one-layer
//! assignment GNN over the current (normalized) adjacency, softmaxes the
//! assignment into a soft cluster matrix S, and coarsens the graph with
//! A' = SᵀAS, H' = SᵀZ. Auxiliary link-prediction and assignment-entropy
//! losses regularize S. After the last level the cluster embeddings are
//! mean-pooled and mapped to logits.
//!
//! Cluster counts shrink per graph as `ceil(ratio * n)` but assignment
//! weight matrices need fixed shapes, so each level has a capacity derived
//! from `max_nodes`; a graph only ever uses the first `n'` columns.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffError, Tape, Var};
use crate::cascade::PropagationGraph;
use crate::optim::{OptimError, ParamLayout};
use crate::records::Label;

pub const CLASSES: usize = 2;

/// Architecture description; immutable once a model is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Number of pooling levels, 2..=4.
    pub pool_layers: usize,
    /// Width of the first propagation layer per level, 16..=128.
    pub hidden_dim: usize,
    /// Width of the level embeddings, 16..=128.
    pub embed_dim: usize,
    /// Next cluster count = ceil(pool_ratio * n), at least 1.
    pub pool_ratio: f64,
    /// Sizing bound for assignment capacities; graphs above it still run
    /// but pool straight to the capacity.
    pub max_nodes: usize,
    pub aux_link_weight: f64,
    pub aux_entropy_weight: f64,
    /// Propagate over the directed adjacency instead of its symmetrization.
    pub directed: bool,
}

impl ModelConfig {
    /// Defaults: 3 levels, 64/64 dims, ratio 0.25, aux weights 0.1.
    pub fn new(input_dim: usize) -> Self {
        ModelConfig {
            input_dim,
            pool_layers: 3,
            hidden_dim: 64,
            embed_dim: 64,
            pool_ratio: 0.25,
            max_nodes: 2048,
            aux_link_weight: 0.1,
            aux_entropy_weight: 0.1,
            directed: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.input_dim == 0 {
            return bad("input_dim must be at least 1".into());
        }
        if !(2..=4).contains(&self.pool_layers) {
            return bad(format!("pool_layers must be in 2..=4, got {}", self.pool_layers));
        }
        if !(16..=128).contains(&self.hidden_dim) {
            return bad(format!("hidden_dim must be in 16..=128, got {}", self.hidden_dim));
        }
        if !(16..=128).contains(&self.embed_dim) {
            return bad(format!("embed_dim must be in 16..=128, got {}", self.embed_dim));
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio < 1.0) {
            return bad(format!("pool_ratio must lie in (0,1), got {}", self.pool_ratio));
        }
        if self.max_nodes < 2 {
            return bad(format!("max_nodes must be at least 2, got {}", self.max_nodes));
        }
        if self.aux_link_weight < 0.0 || self.aux_entropy_weight < 0.0 {
            return bad("auxiliary loss weights must be nonnegative".into());
        }
        Ok(())
    }

    /// Assignment capacity per level: repeated `ceil(ratio * previous)`
    /// starting from `max_nodes`.
    pub fn level_capacities(&self) -> Vec<usize> {
        let mut caps = Vec::with_capacity(self.pool_layers);
        let mut cur = self.max_nodes;
        for _ in 0..self.pool_layers {
            cur = next_cluster_count(cur, self.pool_ratio);
            caps.push(cur);
        }
        caps
    }

    /// Per-graph cluster counts for a graph of `n` nodes, clamped by the
    /// level capacities.
    pub fn level_sizes(&self, n: usize) -> Vec<usize> {
        let caps = self.level_capacities();
        let mut sizes = Vec::with_capacity(self.pool_layers);
        let mut cur = n;
        for cap in caps {
            cur = next_cluster_count(cur, self.pool_ratio).min(cap);
            sizes.push(cur);
        }
        sizes
    }
}

/// `ceil(ratio * n)`, at least 1.
pub fn next_cluster_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio).ceil() as usize).max(1)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("empty graph")]
    EmptyGraph,
    #[error("graph feature dimension {got} does not match model input dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Dense 0/1 adjacency of a propagation graph; symmetrized (A or Aᵀ)
/// unless `directed`.
pub fn adjacency_matrix(g: &PropagationGraph, directed: bool) -> Array2<f64> {
    let mut a = Array2::zeros((g.n, g.n));
    for &(s, d) in &g.edges {
        a[(s as usize, d as usize)] = 1.0;
        if !directed {
            a[(d as usize, s as usize)] = 1.0;
        }
    }
    a
}

/// Symmetric degree normalization with self-loops:
/// `D^(-1/2) (A + I) D^(-1/2)` where `D` holds the row sums of `A + I`.
/// Isolated nodes keep a self-loop of weight 1.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols(), "adjacency must be square");
    debug_assert!((0..n).all(|i| a[(i, i)] == 0.0), "adjacency must have zero diagonal");
    let mut tilde = a.clone();
    for i in 0..n {
        tilde[(i, i)] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| tilde.row(i).sum().sqrt().recip())
        .collect();
    for i in 0..n {
        for j in 0..n {
            tilde[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    tilde
}

/// One propagation layer: `ReLU(A_norm · H · W)`.
pub fn propagate(tape: &mut Tape, a_norm: Var, h: Var, w: Var) -> Result<Var, DiffError> {
    let ah = tape.matmul(a_norm, h)?;
    let ahw = tape.matmul(ah, w)?;
    Ok(tape.relu(ahw))
}

/// Outputs of one pooling level.
pub struct DiffPoolOutput {
    pub assign: Var,
    pub a_next: Var,
    pub h_next: Var,
    pub link_loss: Var,
    pub entropy_loss: Var,
}

/// Coarsens `(a, z)` with the soft assignment `softmax(s_logits)`:
/// `A' = SᵀAS`, `H' = SᵀZ`, link loss `|A − SSᵀ|²_F / n²` and mean
/// assignment-row entropy.
pub fn diffpool_level(
    tape: &mut Tape,
    a: Var,
    z: Var,
    s_logits: Var,
) -> Result<DiffPoolOutput, DiffError> {
    let n = tape.value(a).nrows();
    let s = tape.row_softmax(s_logits);
    let st = tape.transpose(s);
    let sa = tape.matmul(st, a)?;
    let a_next = tape.matmul(sa, s)?;
    let h_next = tape.matmul(st, z)?;
    let sst = tape.matmul(s, st)?;
    let neg_sst = tape.scale(sst, -1.0);
    let diff = tape.add(a, neg_sst)?;
    let fro = tape.frobenius_sq(diff);
    let link_loss = tape.scale(fro, 1.0 / (n * n) as f64);
    let entropy_loss = tape.entropy_rows(s);
    Ok(DiffPoolOutput {
        assign: s,
        a_next,
        h_next,
        link_loss,
        entropy_loss,
    })
}

/// Logits plus weighted auxiliary loss of one graph on a tape.
pub struct GraphTerms {
    pub logits: Var,
    pub aux: Var,
}

/// The hierarchical-pooling classifier.
///
/// Parameters per level: `W_embed1 (d_k × hidden)`, `W_embed2
/// (hidden × embed)`, `W_assign (d_k × capacity_k)`; plus the classifier
/// head `W_cls (embed × 2)`.
#[derive(Debug, Clone)]
pub struct DiffPoolModel {
    pub config: ModelConfig,
    params: Vec<Array2<f64>>,
    layout: ParamLayout,
}

impl DiffPoolModel {
    /// Builds a model with uniform Glorot initialization
    /// (± sqrt(6 / (fan_in + fan_out))), deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let caps = config.level_capacities();
        let mut d_in = config.input_dim;
        for &cap in &caps {
            params.push(glorot(&mut rng, d_in, config.hidden_dim));
            params.push(glorot(&mut rng, config.hidden_dim, config.embed_dim));
            params.push(glorot(&mut rng, d_in, cap));
            d_in = config.embed_dim;
        }
        params.push(glorot(&mut rng, config.embed_dim, CLASSES));
        let layout = ParamLayout::of(&params);
        Ok(DiffPoolModel {
            config,
            params,
            layout,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total_len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layout.flatten(&self.params).expect("layout matches params")
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), OptimError> {
        self.params = self.layout.unflatten(flat)?;
        Ok(())
    }

    /// Places every parameter matrix on the tape; `trainable` controls
    /// whether gradients flow to them.
    pub fn insert_params_on(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>, DiffError> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// Runs the forward pass for one graph against parameter vars already
    /// on the tape, yielding logits (1×2) and the weighted auxiliary loss.
    pub fn graph_terms_on(
        &self,
        tape: &mut Tape,
        param_vars: &[Var],
        g: &PropagationGraph,
    ) -> Result<GraphTerms, ModelError> {
        if g.n == 0 {
            return Err(ModelError::EmptyGraph);
        }
        if g.features.ncols() != self.config.input_dim {
            return Err(ModelError::DimMismatch {
                expected: self.config.input_dim,
                got: g.features.ncols(),
            });
        }

        let a_hat = normalize_adjacency(&adjacency_matrix(g, self.config.directed));
        let mut a = tape.constant(a_hat)?;
        let mut h = tape.constant(g.features.clone())?;
        let mut n_cur = g.n;

        let caps = self.config.level_capacities();
        let mut aux: Option<Var> = None;
        for (k, &cap) in caps.iter().enumerate() {
            let w1 = param_vars[3 * k];
            let w2 = param_vars[3 * k + 1];
            let wp = param_vars[3 * k + 2];

            let hidden = propagate(tape, a, h, w1)?;
            let z = propagate(tape, a, hidden, w2)?;

            let ah = tape.matmul(a, h)?;
            let s_full = tape.matmul(ah, wp)?;
            let n_next = next_cluster_count(n_cur, self.config.pool_ratio).min(cap);
            let s_logits = if n_next == cap {
                s_full
            } else {
                let selector = column_selector(cap, n_next);
                let sel = tape.constant(selector)?;
                tape.matmul(s_full, sel)?
            };

            let out = diffpool_level(tape, a, z, s_logits)?;
            let link_w = tape.scale(out.link_loss, self.config.aux_link_weight);
            let ent_w = tape.scale(out.entropy_loss, self.config.aux_entropy_weight);
            let level_aux = tape.add(link_w, ent_w)?;
            aux = Some(match aux {
                Some(acc) => tape.add(acc, level_aux)?,
                None => level_aux,
            });

            a = out.a_next;
            h = out.h_next;
            n_cur = n_next;
        }

        let readout = tape.mean_rows(h);
        let w_cls = param_vars[param_vars.len() - 1];
        let logits = tape.matmul(readout, w_cls)?;
        Ok(GraphTerms {
            logits,
            aux: aux.expect("at least two pooling levels"),
        })
    }

    /// Forward logits without gradient bookkeeping.
    pub fn logits(&self, g: &PropagationGraph) -> Result<[f64; CLASSES], ModelError> {
        let mut tape = Tape::new();
        let pv = self.insert_params_on(&mut tape, false)?;
        let terms = self.graph_terms_on(&mut tape, &pv, g)?;
        let v = tape.value(terms.logits);
        Ok([v[(0, 0)], v[(0, 1)]])
    }

    /// Predicted label: the argmax class, ties resolved to `Real`.
    pub fn predict(&self, g: &PropagationGraph) -> Result<Label, ModelError> {
        let l = self.logits(g)?;
        Ok(if l[1] > l[0] { Label::Fake } else { Label::Real })
    }

    /// Training loss of one graph: cross-entropy plus auxiliary terms.
    pub fn loss(&self, g: &PropagationGraph) -> Result<f64, ModelError> {
        self.batch_loss(&[g])
    }

    /// Mean training loss over a batch, no gradients.
    pub fn batch_loss(&self, graphs: &[&PropagationGraph]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let pv = self.insert_params_on(&mut tape, false)?;
        let loss = self.batch_loss_on(&mut tape, &pv, graphs)?;
        Ok(tape.scalar(loss))
    }

    /// Mean training loss over a batch plus its flat gradient.
    pub fn batch_loss_grad(
        &self,
        graphs: &[&PropagationGraph],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let pv = self.insert_params_on(&mut tape, true)?;
        let loss = self.batch_loss_on(&mut tape, &pv, graphs)?;
        tape.backward(loss)?;
        let grads: Vec<Array2<f64>> = pv.iter().map(|&v| tape.grad(v)).collect();
        Ok((tape.scalar(loss), self.layout.flatten(&grads)?))
    }

    /// Like [`batch_loss_grad`](Self::batch_loss_grad), but differentiates
    /// each graph on its own tape so the per-graph passes can run in
    /// parallel. Per-graph results are averaged in index order, making the
    /// output independent of thread count; it can differ from the
    /// single-tape value only by floating-point summation order.
    pub fn batch_loss_grad_par(
        &self,
        graphs: &[&PropagationGraph],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        assert!(!graphs.is_empty(), "batch must be non-empty");
        let per: Vec<(f64, Vec<f64>)> = graphs
            .par_iter()
            .map(|g| {
                let mut tape = Tape::new();
                let pv = self.insert_params_on(&mut tape, true)?;
                let loss = self.batch_loss_on(&mut tape, &pv, &[g])?;
                tape.backward(loss)?;
                let grads: Vec<Array2<f64>> = pv.iter().map(|&v| tape.grad(v)).collect();
                Ok((tape.scalar(loss), self.layout.flatten(&grads)?))
            })
            .collect::<Result<_, ModelError>>()?;
        let scale = 1.0 / graphs.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.param_count()];
        for (l, g) in &per {
            loss += l;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
        for v in &mut grad {
            *v *= scale;
        }
        Ok((loss * scale, grad))
    }

    /// Predictions for a slice of graphs, computed in parallel in index
    /// order.
    pub fn predict_all(&self, graphs: &[&PropagationGraph]) -> Result<Vec<Label>, ModelError> {
        graphs.par_iter().map(|g| self.predict(g)).collect()
    }

    /// Builds the mean batch loss (cross-entropy + aux) on an existing tape.
    pub fn batch_loss_on(
        &self,
        tape: &mut Tape,
        param_vars: &[Var],
        graphs: &[&PropagationGraph],
    ) -> Result<Var, ModelError> {
        assert!(!graphs.is_empty(), "batch must be non-empty");
        let mut total: Option<Var> = None;
        for g in graphs {
            let terms = self.graph_terms_on(tape, param_vars, g)?;
            let ce = tape.cross_entropy(terms.logits, g.label.index())?;
            let one = tape.add(ce, terms.aux)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, one)?,
                None => one,
            });
        }
        Ok(tape.scale(total.expect("non-empty batch"), 1.0 / graphs.len() as f64))
    }

    /// Cross-entropy loss and flat gradient for a single graph under an
    /// explicit label, without auxiliary terms. This is the score function
    /// used for Fisher-information estimation.
    pub fn ce_loss_grad(
        &self,
        g: &PropagationGraph,
        label: Label,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let mut tape = Tape::new();
        let pv = self.insert_params_on(&mut tape, true)?;
        let terms = self.graph_terms_on(&mut tape, &pv, g)?;
        let ce = tape.cross_entropy(terms.logits, label.index())?;
        tape.backward(ce)?;
        let grads: Vec<Array2<f64>> = pv.iter().map(|&v| tape.grad(v)).collect();
        Ok((tape.scalar(ce), self.layout.flatten(&grads)?))
    }

    /// Class probability of `Fake` for one graph.
    pub fn prob_fake(&self, g: &PropagationGraph) -> Result<f64, ModelError> {
        let l = self.logits(g)?;
        let m = l[0].max(l[1]);
        let e0 = (l[0] - m).exp();
        let e1 = (l[1] - m).exp();
        Ok(e1 / (e0 + e1))
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// 0/1 matrix picking the first `keep` of `total` columns.
fn column_selector(total: usize, keep: usize) -> Array2<f64> {
    let mut m = Array2::zeros((total, keep));
    for i in 0..keep {
        m[(i, i)] = 1.0;
    }
    m
}
