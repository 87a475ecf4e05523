//! Reverse-mode automatic differentiation over dense 64-bit matrices.
//!
//! A [`Tape`] records every primitive application; [`Tape::backward`] then
//! propagates adjoints from a scalar loss to every parameter in one reverse
//! sweep. The primitive set is exactly what the graph classifier needs:
//! matrix multiply, addition, ReLU, row-softmax, row means, scalar scaling,
//! elementwise product, squared Frobenius norm, cross-entropy, transpose and
//! mean row entropy. Scalars are represented as 1×1 matrices.
//!
//! A tape is cheap and short-lived: build one per training step, add the
//! parameters, run the forward composition, call `backward`, read the
//! gradients, drop the tape.

use ndarray::{Array2, Axis};
use thiserror::Error;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {a:?} and {b:?}")]
    ShapeMismatch {
        op: &'static str,
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("non-finite value rejected at tape insertion")]
    NonFiniteInput,
    #[error("cross_entropy: label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward requires a 1x1 scalar loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("loss does not depend on any parameter on this tape")]
    DisconnectedLoss,
}

/// Probabilities below this are clamped inside logarithms.
const LOG_EPS: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Relu(Var),
    RowSoftmax(Var),
    MeanRows(Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    FrobeniusSq(Var),
    CrossEntropy(Var, usize),
    Transpose(Var),
    EntropyRows(Var),
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Record of primitive applications in topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Result<Var, DiffError> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFiniteInput);
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// Inserts a value that gradients flow *to* (a trainable parameter).
    pub fn param(&mut self, value: Array2<f64>) -> Result<Var, DiffError> {
        self.leaf(value, true)
    }

    /// Inserts a value treated as a constant (no gradient).
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var, DiffError> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The forward value of a 1×1 node as a plain float.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.dim(), (1, 1));
        self.nodes[v.0].value[(0, 0)]
    }

    /// Gradient of the last `backward` loss with respect to `v`; zero matrix
    /// if the loss did not reach it.
    pub fn grad(&self, v: Var) -> Array2<f64> {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Array2::zeros(node.value.dim()))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                a: (ar, ac),
                b: (br, bc),
            });
        }
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op: "add",
                a: self.shape(a),
                b: self.shape(b),
            });
        }
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v.max(0.0));
        let rg = self.needs(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Softmax over each row; rows sum to 1 and the result is invariant to
    /// adding a constant to a row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = row_softmax_value(&self.nodes[a.0].value);
        let rg = self.needs(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    /// Column-wise mean over rows: n×d becomes 1×d.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.shape(a).0 as f64;
        let value = self.nodes[a.0]
            .value
            .sum_axis(Axis(0))
            .insert_axis(Axis(0))
            / n;
        let rg = self.needs(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::ShapeMismatch {
                op: "hadamard",
                a: self.shape(a),
                b: self.shape(b),
            });
        }
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Hadamard(a, b), rg))
    }

    /// Sum of squared entries as a 1×1 scalar.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.iter().map(|v| v * v).sum();
        let rg = self.needs(a);
        self.push(Array2::from_elem((1, 1), s), Op::FrobeniusSq(a), rg)
    }

    /// `-log softmax(logits)[label]` for a 1×c logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, DiffError> {
        let (r, c) = self.shape(logits);
        if r != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "cross_entropy",
                a: (r, c),
                b: (1, c),
            });
        }
        if label >= c {
            return Err(DiffError::LabelOutOfRange { label, classes: c });
        }
        let probs = row_softmax_value(&self.nodes[logits.0].value);
        let loss = -probs[(0, label)].max(LOG_EPS).ln();
        let rg = self.needs(logits);
        Ok(self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy(logits, label),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        let rg = self.needs(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Mean Shannon entropy of the rows of a row-stochastic matrix, as a
    /// 1×1 scalar. Inputs are clamped away from zero inside the logarithm.
    pub fn entropy_rows(&mut self, a: Var) -> Var {
        let m = &self.nodes[a.0].value;
        let n = m.nrows() as f64;
        let total: f64 = m.iter().map(|&p| -p * p.max(LOG_EPS).ln()).sum();
        let rg = self.needs(a);
        self.push(Array2::from_elem((1, 1), total / n), Op::EntropyRows(a), rg)
    }

    fn accumulate(&mut self, v: Var, delta: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reverse sweep: fills the gradient of `loss` with respect to every
    /// parameter reachable on the tape. `loss` must be 1×1 and depend on at
    /// least one parameter.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        let dim = self.shape(loss);
        if dim != (1, 1) {
            return Err(DiffError::NotScalar(dim));
        }
        if !self.needs(loss) {
            return Err(DiffError::DisconnectedLoss);
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match self.nodes[idx].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[b.0].value.t());
                    let db = self.nodes[a.0].value.t().dot(&g);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::Relu(a) => {
                    // derivative at exactly 0 defined as 0
                    let mask = self.nodes[a.0].value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    self.accumulate(a, g * mask);
                }
                Op::RowSoftmax(a) => {
                    let y = self.nodes[idx].value.clone();
                    let mut da = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| g[(r, c)] * y[(r, c)]).sum();
                        for c in 0..y.ncols() {
                            da[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::MeanRows(a) => {
                    let (n, d) = self.shape(a);
                    let mut da = Array2::zeros((n, d));
                    for r in 0..n {
                        for c in 0..d {
                            da[(r, c)] = g[(0, c)] / n as f64;
                        }
                    }
                    self.accumulate(a, da);
                }
                Op::Scale(a, c) => {
                    self.accumulate(a, g * c);
                }
                Op::Hadamard(a, b) => {
                    let da = &g * &self.nodes[b.0].value;
                    let db = &g * &self.nodes[a.0].value;
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::FrobeniusSq(a) => {
                    let da = &self.nodes[a.0].value * (2.0 * g[(0, 0)]);
                    self.accumulate(a, da);
                }
                Op::CrossEntropy(a, label) => {
                    let mut da = row_softmax_value(&self.nodes[a.0].value);
                    da[(0, label)] -= 1.0;
                    self.accumulate(a, da * g[(0, 0)]);
                }
                Op::Transpose(a) => {
                    self.accumulate(a, g.t().to_owned());
                }
                Op::EntropyRows(a) => {
                    let m = &self.nodes[a.0].value;
                    let n = m.nrows() as f64;
                    let da = m.mapv(|p| -(p.max(LOG_EPS).ln() + 1.0) / n) * g[(0, 0)];
                    self.accumulate(a, da);
                }
            }
        }
        Ok(())
    }
}

fn row_softmax_value(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| {
            // keep magnitudes away from the ReLU kink at 0
            let v: f64 = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
    }

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let a = t.constant(array![[-1.0, 2.0]]).unwrap();
        let r = t.relu(a);
        assert_eq!(t.value(r), &array![[0.0, 2.0]]);
    }

    #[test]
    fn row_softmax_uniform_and_shift_invariant() {
        let mut t = Tape::new();
        let a = t.constant(array![[0.0, 0.0]]).unwrap();
        let s = t.row_softmax(a);
        assert_eq!(t.value(s), &array![[0.5, 0.5]]);

        let b = t.constant(array![[1.0, 3.0, 2.0], [100.0, 102.0, 101.0]]).unwrap();
        let sb = t.row_softmax(b);
        let v = t.value(sb);
        for r in 0..2 {
            let sum: f64 = (0..3).map(|c| v[(r, c)]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // second row is first row shifted by +99
        for c in 0..3 {
            assert!((v[(0, c)] - v[(1, c)]).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        let mut t = Tape::new();
        let va = t.constant(a.clone()).unwrap();
        let vb = t.constant(b.clone()).unwrap();
        let vc = t.matmul(va, vb).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let naive: f64 = (0..4).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((t.value(vc)[(i, j)] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frobenius_grad_is_twice_value() {
        let mut t = Tape::new();
        let w = t.param(array![[3.0]]).unwrap();
        let loss = t.frobenius_sq(w);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w), array![[6.0]]);
    }

    #[test]
    fn cross_entropy_softmax_minus_onehot() {
        let mut t = Tape::new();
        let logits = t.param(array![[0.0, 0.0]]).unwrap();
        let loss = t.cross_entropy(logits, 0).unwrap();
        assert!((t.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-12);
        t.backward(loss).unwrap();
        let g = t.grad(logits);
        assert!((g[(0, 0)] - (-0.5)).abs() < 1e-12);
        assert!((g[(0, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disconnected_loss_rejected() {
        let mut t = Tape::new();
        let c = t.constant(array![[2.0]]).unwrap();
        let loss = t.frobenius_sq(c);
        assert_eq!(t.backward(loss), Err(DiffError::DisconnectedLoss));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let p = t.param(array![[1.0, 2.0]]).unwrap();
        assert_eq!(t.backward(p), Err(DiffError::NotScalar((1, 2))));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut t = Tape::new();
        assert_eq!(
            t.constant(array![[f64::NAN]]).unwrap_err(),
            DiffError::NonFiniteInput
        );
        assert_eq!(
            t.param(array![[f64::INFINITY]]).unwrap_err(),
            DiffError::NonFiniteInput
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0]]).unwrap();
        let b = t.constant(array![[1.0], [2.0]]).unwrap();
        assert!(matches!(t.add(a, b), Err(DiffError::ShapeMismatch { .. })));
        assert!(matches!(t.hadamard(a, b), Err(DiffError::ShapeMismatch { .. })));
        assert!(matches!(t.matmul(a, a), Err(DiffError::ShapeMismatch { .. })));
    }

    /// Central finite differences over every parameter entry.
    fn finite_diff_check(
        build: impl Fn(&mut Tape, &[Array2<f64>]) -> Var,
        params: &[Array2<f64>],
        tol: f64,
    ) {
        let eval = |ps: &[Array2<f64>]| -> f64 {
            let mut t = Tape::new();
            let loss = build(&mut t, ps);
            t.scalar(loss)
        };
        // analytic gradients
        let mut t = Tape::new();
        let loss = build(&mut t, params);
        t.backward(loss).unwrap();
        let analytic: Vec<Array2<f64>> = (0..params.len())
            .map(|i| t.grad(Var(i)))
            .collect();

        let eps = 1e-5;
        for (pi, p) in params.iter().enumerate() {
            for r in 0..p.nrows() {
                for c in 0..p.ncols() {
                    let mut plus = params.to_vec();
                    plus[pi][(r, c)] += eps;
                    let mut minus = params.to_vec();
                    minus[pi][(r, c)] -= eps;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                    let an = analytic[pi][(r, c)];
                    assert!(
                        rel_err(an, fd) < tol,
                        "param {pi} entry ({r},{c}): analytic {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    /// The builder convention: parameters are inserted first, in order, so
    /// `Var(i)` addresses parameter `i` inside `finite_diff_check`.
    fn insert_params(t: &mut Tape, ps: &[Array2<f64>]) -> Vec<Var> {
        ps.iter().map(|p| t.param(p.clone()).unwrap()).collect()
    }

    #[test]
    fn finite_difference_each_primitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for seed in 0..5 {
            let _ = seed;
            let a = rand_mat(&mut rng, 3, 4);
            let b = rand_mat(&mut rng, 4, 3);
            let sq = rand_mat(&mut rng, 3, 3);

            // matmul -> frobenius
            finite_diff_check(
                |t, ps| {
                    let vs = insert_params(t, ps);
                    let m = t.matmul(vs[0], vs[1]).unwrap();
                    t.frobenius_sq(m)
                },
                &[a.clone(), b.clone()],
                1e-4,
            );
            // add + hadamard + scale
            finite_diff_check(
                |t, ps| {
                    let vs = insert_params(t, ps);
                    let s = t.add(vs[0], vs[1]).unwrap();
                    let h = t.hadamard(s, vs[0]).unwrap();
                    let sc = t.scale(h, 0.37);
                    t.frobenius_sq(sc)
                },
                &[sq.clone(), rand_mat(&mut rng, 3, 3)],
                1e-4,
            );
            // relu (inputs bounded away from 0)
            finite_diff_check(
                |t, ps| {
                    let vs = insert_params(t, ps);
                    let r = t.relu(vs[0]);
                    t.frobenius_sq(r)
                },
                &[rand_mat(&mut rng, 4, 4)],
                1e-4,
            );
            // row_softmax + entropy_rows
            finite_diff_check(
                |t, ps| {
                    let vs = insert_params(t, ps);
                    let s = t.row_softmax(vs[0]);
                    t.entropy_rows(s)
                },
                &[rand_mat(&mut rng, 5, 3)],
                1e-4,
            );
            // mean_rows + transpose
            finite_diff_check(
                |t, ps| {
                    let vs = insert_params(t, ps);
                    let tr = t.transpose(vs[0]);
                    let m = t.mean_rows(tr);
                    t.frobenius_sq(m)
                },
                &[rand_mat(&mut rng, 3, 6)],
                1e-4,
            );
            // cross_entropy
            finite_diff_check(
                |t, ps| {
                    let vs = insert_params(t, ps);
                    t.cross_entropy(vs[0], 1).unwrap()
                },
                &[rand_mat(&mut rng, 1, 4)],
                1e-4,
            );
        }
    }

    #[test]
    fn finite_difference_two_layer_net() {
        // toy 2-layer network with exactly 10 parameters (2x2 + 2x2 + 1x2
        // input is constant): x relu(x W1) W2 -> cross entropy
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w1 = rand_mat(&mut rng, 2, 3);
        let w2 = rand_mat(&mut rng, 3, 2);
        let x = rand_mat(&mut rng, 1, 2);
        finite_diff_check(
            |t, ps| {
                let vs = insert_params(t, ps);
                let xc = t.constant(x.clone()).unwrap();
                let h = t.matmul(xc, vs[0]).unwrap();
                let h = t.relu(h);
                let logits = t.matmul(h, vs[1]).unwrap();
                t.cross_entropy(logits, 0).unwrap()
            },
            &[w1, w2],
            1e-4,
        );
    }

    #[test]
    fn finite_difference_random_dags() {
        // random compositions of depth <= 6 built from the primitive pool
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        for round in 0..10 {
            let n = 4;
            let p0 = rand_mat(&mut rng, n, n);
            let p1 = rand_mat(&mut rng, n, n);
            let choices: Vec<u8> = (0..6).map(|_| rng.gen_range(0..5)).collect();
            let choices2 = choices.clone();
            finite_diff_check(
                move |t, ps| {
                    let vs = insert_params(t, ps);
                    let mut cur = vs[0];
                    for &c in &choices2 {
                        cur = match c {
                            0 => t.matmul(cur, vs[1]).unwrap(),
                            1 => t.add(cur, vs[1]).unwrap(),
                            2 => t.hadamard(cur, vs[1]).unwrap(),
                            3 => t.transpose(cur),
                            _ => t.scale(cur, 0.5),
                        };
                    }
                    // softmax keeps the final reduction well-conditioned
                    let s = t.row_softmax(cur);
                    let e = t.entropy_rows(s);
                    let f = t.frobenius_sq(cur);
                    let fscaled = t.scale(f, 0.01);
                    t.add(e, fscaled).unwrap()
                },
                &[p0, p1],
                1e-4,
            );
            let _ = round;
        }
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        // loss = fro(W) + fro(W) -> gradient 4W
        let mut t = Tape::new();
        let w = t.param(array![[1.5]]).unwrap();
        let f1 = t.frobenius_sq(w);
        let f2 = t.frobenius_sq(w);
        let loss = t.add(f1, f2).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w), array![[6.0]]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let a = rand_mat(&mut rng, 6, 6);
            let b = rand_mat(&mut rng, 6, 6);
            let mut t = Tape::new();
            let va = t.param(a).unwrap();
            let vb = t.param(b).unwrap();
            let m = t.matmul(va, vb).unwrap();
            let s = t.row_softmax(m);
            let e = t.entropy_rows(s);
            t.scalar(e).to_bits()
        };
        assert_eq!(run(), run());
    }
}
