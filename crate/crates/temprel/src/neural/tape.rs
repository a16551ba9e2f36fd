//! A small reverse-mode autodiff tape over [`Tensor`] values, with exactly
//! the operations the pair classifier and the Siamese encoder need.
//!
//! Parameters live outside the tape in a [`ParamSet`]; a tape node created
//! with [`Tape::param`] snapshots the current value and `backward`
//! accumulates into the parameter's gradient buffer.

use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    pub params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let grad = Tensor::zeros(&value.shape);
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn by_name(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param(usize),
    /// Row of a matrix parameter (embedding tables, marker vectors).
    ParamRow(usize, usize),
    /// matrix * vector.
    MatVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Scale(Var, f64),
    /// Cross-entropy of softmax(logits) against a fixed target distribution.
    SoftmaxCe(Var, Vec<f64>),
    /// Weighted binary cross-entropy of sigmoid(logit) against a target.
    SigmoidBce(Var, f64, f64),
    Sum(Vec<Var>),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn param(&mut self, ps: &ParamSet, idx: usize) -> Var {
        self.push(Op::Param(idx), ps.params[idx].value.clone())
    }

    pub fn param_row(&mut self, ps: &ParamSet, idx: usize, row: usize) -> Var {
        let value = Tensor::vector(ps.params[idx].value.row(row).to_vec());
        self.push(Op::ParamRow(idx, row), value)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Var {
        let mat = self.value(m);
        let vec = self.value(v);
        assert_eq!(mat.cols(), vec.len(), "matvec shape mismatch");
        let rows = mat.rows();
        let mut out = vec![0.0; rows];
        for (i, o) in out.iter_mut().enumerate() {
            *o = mat
                .row(i)
                .iter()
                .zip(&vec.data)
                .map(|(a, b)| a * b)
                .sum();
        }
        self.push(Op::MatVec(m, v), Tensor::vector(out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape,
            self.value(b).shape,
            "add shape mismatch"
        );
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape.clone();
        self.push(Op::Add(a, b), Tensor { shape, data })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape,
            self.value(b).shape,
            "mul shape mismatch"
        );
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape.clone();
        self.push(Op::Mul(a, b), Tensor { shape, data })
    }

    pub fn sigmoid(&mut self, v: Var) -> Var {
        let t = self.value(v);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&x| sigmoid(x)).collect(),
        };
        self.push(Op::Sigmoid(v), out)
    }

    pub fn tanh(&mut self, v: Var) -> Var {
        let t = self.value(v);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&x| x.tanh()).collect(),
        };
        self.push(Op::Tanh(v), out)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(data))
    }

    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Var {
        let data = self.value(v).data[start..start + len].to_vec();
        self.push(Op::Slice(v, start, len), Tensor::vector(data))
    }

    pub fn scale(&mut self, v: Var, c: f64) -> Var {
        let t = self.value(v);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&x| x * c).collect(),
        };
        self.push(Op::Scale(v, c), out)
    }

    /// Loss = -sum target_i * log softmax(logits)_i, with max subtraction.
    pub fn softmax_ce(&mut self, logits: Var, target: &[f64]) -> Var {
        let l = &self.value(logits).data;
        assert_eq!(l.len(), target.len(), "softmax_ce shape mismatch");
        assert!(l.iter().all(|x| x.is_finite()), "non-finite logits");
        let loss = softmax_ce_loss(l, target);
        self.push(Op::SoftmaxCe(logits, target.to_vec()), Tensor::scalar(loss))
    }

    /// Numerically stable `weight * bce(sigmoid(logit), target)`.
    pub fn sigmoid_bce(&mut self, logit: Var, target: f64, weight: f64) -> Var {
        let x = self.value(logit).item();
        let loss = weight * (x.max(0.0) - x * target + (-x.abs()).exp().ln_1p());
        self.push(Op::SigmoidBce(logit, target, weight), Tensor::scalar(loss))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total: f64 = parts.iter().map(|&p| self.value(p).item()).sum();
        self.push(Op::Sum(parts.to_vec()), Tensor::scalar(total))
    }

    /// Accumulates d(loss)/d(param) into each parameter's gradient buffer.
    pub fn backward(&self, loss: Var, ps: &mut ParamSet) {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(p) => {
                    for (gp, gv) in ps.params[*p].grad.data.iter_mut().zip(&g.data) {
                        *gp += gv;
                    }
                }
                Op::ParamRow(p, row) => {
                    for (gp, gv) in ps.params[*p].grad.row_mut(*row).iter_mut().zip(&g.data) {
                        *gp += gv;
                    }
                }
                Op::MatVec(m, v) => {
                    let mat = &self.nodes[m.0].value;
                    let vec = &self.nodes[v.0].value;
                    let (rows, cols) = (mat.rows(), mat.cols());
                    {
                        let gm = accum(&mut grads, *m, &mat.shape.clone());
                        for r in 0..rows {
                            for c in 0..cols {
                                gm.data[r * cols + c] += g.data[r] * vec.data[c];
                            }
                        }
                    }
                    let mut gv = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            gv[c] += mat.data[r * cols + c] * g.data[r];
                        }
                    }
                    add_into(accum(&mut grads, *v, &[cols]), &gv);
                }
                Op::Add(a, b) => {
                    let shape = g.shape.clone();
                    add_into(accum(&mut grads, *a, &shape), &g.data);
                    add_into(accum(&mut grads, *b, &shape), &g.data);
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.data.clone();
                    let bv = self.nodes[b.0].value.data.clone();
                    let shape = g.shape.clone();
                    {
                        let ga = accum(&mut grads, *a, &shape);
                        for (x, (gi, bi)) in ga.data.iter_mut().zip(g.data.iter().zip(&bv)) {
                            *x += gi * bi;
                        }
                    }
                    let gb = accum(&mut grads, *b, &shape);
                    for (x, (gi, ai)) in gb.data.iter_mut().zip(g.data.iter().zip(&av)) {
                        *x += gi * ai;
                    }
                }
                Op::Sigmoid(v) => {
                    let y = self.nodes[i].value.data.clone();
                    let shape = g.shape.clone();
                    let gv = accum(&mut grads, *v, &shape);
                    for (x, (gi, yi)) in gv.data.iter_mut().zip(g.data.iter().zip(&y)) {
                        *x += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(v) => {
                    let y = self.nodes[i].value.data.clone();
                    let shape = g.shape.clone();
                    let gv = accum(&mut grads, *v, &shape);
                    for (x, (gi, yi)) in gv.data.iter_mut().zip(g.data.iter().zip(&y)) {
                        *x += gi * (1.0 - yi * yi);
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let piece = g.data[offset..offset + len].to_vec();
                        add_into(accum(&mut grads, p, &[len]), &piece);
                        offset += len;
                    }
                }
                Op::Slice(v, start, len) => {
                    let (v, start, len) = (*v, *start, *len);
                    let total = self.nodes[v.0].value.len();
                    let gv = accum(&mut grads, v, &[total]);
                    for k in 0..len {
                        gv.data[start + k] += g.data[k];
                    }
                }
                Op::Scale(v, c) => {
                    let scaled: Vec<f64> = g.data.iter().map(|x| x * c).collect();
                    let shape = g.shape.clone();
                    add_into(accum(&mut grads, *v, &shape), &scaled);
                }
                Op::SoftmaxCe(logits, target) => {
                    let (logits, target) = (*logits, target.clone());
                    let probs = softmax(&self.nodes[logits.0].value.data);
                    let gs = g.item();
                    let n = probs.len();
                    let gl = accum(&mut grads, logits, &[n]);
                    for k in 0..n {
                        gl.data[k] += gs * (probs[k] - target[k]);
                    }
                }
                Op::SigmoidBce(logit, target, weight) => {
                    let (logit, target, weight) = (*logit, *target, *weight);
                    let x = self.nodes[logit.0].value.item();
                    let gs = g.item();
                    let gl = accum(&mut grads, logit, &[1]);
                    gl.data[0] += gs * weight * (sigmoid(x) - target);
                }
                Op::Sum(parts) => {
                    let gs = g.item();
                    for p in parts.clone() {
                        let gv = accum(&mut grads, p, &[1]);
                        gv.data[0] += gs;
                    }
                }
            }
        }
    }
}

fn accum<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn add_into(t: &mut Tensor, data: &[f64]) {
    for (x, d) in t.data.iter_mut().zip(data) {
        *x += d;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_ce_loss(logits: &[f64], target: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    -target
        .iter()
        .zip(logits)
        .map(|(&t, &x)| t * (x - log_sum))
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0, 4.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_loss_is_ln4() {
        let loss = softmax_ce_loss(&[0.0; 4], &[0.0, 0.0, 1.0, 0.0]);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn known_loss_value() {
        // ln(sum e^{1..4}) - x_3
        let loss = softmax_ce_loss(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 0.0, 1.0]);
        assert!((loss - 0.440189698561195).abs() < 1e-9);
    }

    #[test]
    fn gradient_zero_at_stationary_target() {
        let logits = [0.3, -1.2, 0.7, 0.2];
        let target = softmax(&logits);
        let mut ps = ParamSet::new();
        let idx = ps.add("logits", Tensor::vector(logits.to_vec()));
        let mut tape = Tape::new();
        let v = tape.param(&ps, idx);
        let loss = tape.softmax_ce(v, &target);
        tape.backward(loss, &mut ps);
        for g in &ps.params[idx].grad.data {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_backward_matches_finite_differences() {
        let mut ps = ParamSet::new();
        let m = ps.add("m", Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.2, -0.3]));
        let x = ps.add("x", Tensor::vector(vec![1.0, -2.0, 0.5]));

        let f = |ps: &ParamSet| {
            let mut tape = Tape::new();
            let mv = tape.param(ps, m);
            let xv = tape.param(ps, x);
            let y = tape.matvec(mv, xv);
            let s = tape.sigmoid(y);
            let sq = tape.mul(s, s);
            let a = tape.slice(sq, 0, 1);
            let b = tape.slice(sq, 1, 1);
            let loss = tape.sum(&[a, b]);
            (tape, loss)
        };
        let (tape, loss) = f(&ps);
        tape.backward(loss, &mut ps);

        let eps = 1e-6;
        for p in 0..2 {
            for k in 0..ps.params[p].value.len() {
                let orig = ps.params[p].value.data[k];
                ps.params[p].value.data[k] = orig + eps;
                let (t1, l1) = f(&ps);
                let up = t1.value(l1).item();
                ps.params[p].value.data[k] = orig - eps;
                let (t2, l2) = f(&ps);
                let down = t2.value(l2).item();
                ps.params[p].value.data[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = ps.params[p].grad.data[k];
                assert!(
                    (numeric - analytic).abs() < 1e-6,
                    "param {p} component {k}: {numeric} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn sigmoid_bce_gradient() {
        let mut ps = ParamSet::new();
        let idx = ps.add("x", Tensor::scalar(0.7));
        let mut tape = Tape::new();
        let v = tape.param(&ps, idx);
        let loss = tape.sigmoid_bce(v, 0.3, 2.0);
        tape.backward(loss, &mut ps);
        let expected = 2.0 * (sigmoid(0.7) - 0.3);
        assert!((ps.params[idx].grad.data[0] - expected).abs() < 1e-12);
    }
}
