//! Minimal reverse-mode autodiff with the primitives the pair classifier
//! needs: LSTM, fully connected layers, softmax cross-entropy, Adam, step
//! learning-rate decay, and a finite-difference gradient checker.
//!
//! All compute is 64-bit; embeddings are upcast on entry.

mod checkpoint;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointParam, CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, step_lr, AdamState, TrainConfig};
pub use tape::{sigmoid, softmax, softmax_ce_loss, ParamSet, Parameter, Tape, Var};
pub use tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..len).map(|_| rng.gen_range(-bound..bound)).collect(),
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reversed,
}

/// Parameter indices of one LSTM direction. The weight matrix stacks the
/// input, forget, cell-candidate and output gates as four h-row blocks.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w: usize, // 4h x d
    pub u: usize, // 4h x h
    pub b: usize, // 4h
    pub hidden: usize,
    pub input: usize,
}

impl LstmParams {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> LstmParams {
        let w = ps.add(
            format!("{prefix}.w"),
            init_uniform(&[4 * hidden, input], input, rng),
        );
        let u = ps.add(
            format!("{prefix}.u"),
            init_uniform(&[4 * hidden, hidden], hidden, rng),
        );
        let b = ps.add(format!("{prefix}.b"), Tensor::zeros(&[4 * hidden]));
        LstmParams {
            w,
            u,
            b,
            hidden,
            input,
        }
    }
}

/// Runs the standard LSTM recurrence over `inputs` (one d-vector per step)
/// from zero initial state and returns one hidden-state var per step,
/// realigned to input order when `Reversed`.
pub fn lstm_forward(
    tape: &mut Tape,
    ps: &ParamSet,
    lstm: &LstmParams,
    inputs: &[Var],
    direction: Direction,
) -> Vec<Var> {
    assert!(!inputs.is_empty(), "lstm needs at least one step");
    let h = lstm.hidden;
    let w = tape.param(ps, lstm.w);
    let u = tape.param(ps, lstm.u);
    let b = tape.param(ps, lstm.b);
    let mut h_prev = tape.constant(Tensor::zeros(&[h]));
    let mut c_prev = tape.constant(Tensor::zeros(&[h]));
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..inputs.len()).collect(),
        Direction::Reversed => (0..inputs.len()).rev().collect(),
    };
    let mut states = vec![h_prev; inputs.len()];
    for t in order {
        let x = inputs[t];
        assert_eq!(tape.value(x).len(), lstm.input, "lstm input width mismatch");
        let wx = tape.matvec(w, x);
        let uh = tape.matvec(u, h_prev);
        let pre = tape.add(wx, uh);
        let z = tape.add(pre, b);
        let zi = tape.slice(z, 0, h);
        let zf = tape.slice(z, h, h);
        let zg = tape.slice(z, 2 * h, h);
        let zo = tape.slice(z, 3 * h, h);
        let i_gate = tape.sigmoid(zi);
        let f_gate = tape.sigmoid(zf);
        let g_cand = tape.tanh(zg);
        let o_gate = tape.sigmoid(zo);
        let fc = tape.mul(f_gate, c_prev);
        let ig = tape.mul(i_gate, g_cand);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h_new = tape.mul(o_gate, tc);
        states[t] = h_new;
        h_prev = h_new;
        c_prev = c;
    }
    states
}

/// Parameter indices of a one-hidden-layer FFNN: tanh hidden, linear output.
#[derive(Debug, Clone, Copy)]
pub struct FfnnParams {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

impl FfnnParams {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> FfnnParams {
        FfnnParams {
            w1: ps.add(
                format!("{prefix}.w1"),
                init_uniform(&[hidden, input], input, rng),
            ),
            b1: ps.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: ps.add(
                format!("{prefix}.w2"),
                init_uniform(&[output, hidden], hidden, rng),
            ),
            b2: ps.add(format!("{prefix}.b2"), Tensor::zeros(&[output])),
        }
    }
}

pub fn ffnn_forward(tape: &mut Tape, ps: &ParamSet, ffnn: &FfnnParams, input: Var) -> Var {
    let w1 = tape.param(ps, ffnn.w1);
    let b1 = tape.param(ps, ffnn.b1);
    let w2 = tape.param(ps, ffnn.w2);
    let b2 = tape.param(ps, ffnn.b2);
    let z1 = tape.matvec(w1, input);
    let z1b = tape.add(z1, b1);
    let hidden = tape.tanh(z1b);
    let z2 = tape.matvec(w2, hidden);
    tape.add(z2, b2)
}

/// Compares analytic gradients against central finite differences and
/// returns the max relative error over every parameter component.
///
/// The closure must compute the loss from the current parameter values and,
/// when `accumulate` is set, leave the analytic gradients in the grad
/// buffers (they are zeroed first).
pub fn grad_check<F>(ps: &mut ParamSet, mut loss: F, eps: f64) -> f64
where
    F: FnMut(&mut ParamSet, bool) -> f64,
{
    ps.zero_grad();
    loss(ps, true);
    let analytic: Vec<Vec<f64>> = ps.params.iter().map(|p| p.grad.data.clone()).collect();
    let mut max_rel = 0.0f64;
    for p in 0..ps.params.len() {
        for k in 0..ps.params[p].value.len() {
            let orig = ps.params[p].value.data[k];
            ps.params[p].value.data[k] = orig + eps;
            let up = loss(ps, false);
            ps.params[p].value.data[k] = orig - eps;
            let down = loss(ps, false);
            ps.params[p].value.data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[p][k];
            let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_inputs(tape: &mut Tape, rows: &[Vec<f64>]) -> Vec<Var> {
        rows.iter()
            .map(|r| tape.constant(Tensor::vector(r.clone())))
            .collect()
    }

    #[test]
    fn zero_weight_lstm_outputs_zeros() {
        let mut ps = ParamSet::new();
        let lstm = LstmParams {
            w: ps.add("w", Tensor::zeros(&[8, 2])),
            u: ps.add("u", Tensor::zeros(&[8, 2])),
            b: ps.add("b", Tensor::zeros(&[8])),
            hidden: 2,
            input: 2,
        };
        let mut tape = Tape::new();
        let inputs = const_inputs(&mut tape, &[vec![1.0, -1.0]]);
        let states = lstm_forward(&mut tape, &ps, &lstm, &inputs, Direction::Forward);
        assert_eq!(tape.value(states[0]).data, vec![0.0, 0.0]);
    }

    #[test]
    fn lstm_output_shape() {
        let mut rng = seeded_rng(3);
        let mut ps = ParamSet::new();
        let lstm = LstmParams::init(&mut ps, "lstm", 2, 4, &mut rng);
        let mut tape = Tape::new();
        let inputs = const_inputs(
            &mut tape,
            &[vec![0.1, 0.2], vec![0.3, -0.4], vec![0.0, 1.0]],
        );
        let states = lstm_forward(&mut tape, &ps, &lstm, &inputs, Direction::Forward);
        assert_eq!(states.len(), 3);
        for s in states {
            assert_eq!(tape.value(s).len(), 4);
        }
    }

    /// Independent scalar recurrence with h = 1: every gate is a plain
    /// scalar expression, evaluated without the tape.
    #[test]
    fn lstm_matches_scalar_recurrence_oracle() {
        let (wi, wf, wg, wo) = (0.5, -0.3, 0.8, 0.2);
        let (ui, uf, ug, uo) = (0.1, 0.4, -0.2, 0.3);
        let (bi, bf, bg, bo) = (0.05, -0.1, 0.2, 0.0);
        let xs = [0.7, -1.2];

        let mut ps = ParamSet::new();
        let lstm = LstmParams {
            w: ps.add("w", Tensor::matrix(4, 1, vec![wi, wf, wg, wo])),
            u: ps.add("u", Tensor::matrix(4, 1, vec![ui, uf, ug, uo])),
            b: ps.add("b", Tensor::vector(vec![bi, bf, bg, bo])),
            hidden: 1,
            input: 1,
        };
        let mut tape = Tape::new();
        let inputs = const_inputs(&mut tape, &[vec![xs[0]], vec![xs[1]]]);
        let states = lstm_forward(&mut tape, &ps, &lstm, &inputs, Direction::Forward);

        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for &x in &xs {
            let i = sigmoid(wi * x + ui * h + bi);
            let f = sigmoid(wf * x + uf * h + bf);
            let g = (wg * x + ug * h + bg).tanh();
            let o = sigmoid(wo * x + uo * h + bo);
            c = f * c + i * g;
            h = o * c.tanh();
            expected.push(h);
        }
        for (s, e) in states.iter().zip(expected) {
            assert!((tape.value(*s).data[0] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn reversed_direction_on_palindrome_mirrors_forward() {
        let mut rng = seeded_rng(11);
        let mut ps = ParamSet::new();
        let lstm = LstmParams::init(&mut ps, "lstm", 2, 3, &mut rng);
        let palindrome = [vec![0.5, -0.2], vec![1.0, 1.0], vec![0.5, -0.2]];
        let mut tape = Tape::new();
        let inputs = const_inputs(&mut tape, &palindrome);
        let fwd = lstm_forward(&mut tape, &ps, &lstm, &inputs, Direction::Forward);
        let bwd = lstm_forward(&mut tape, &ps, &lstm, &inputs, Direction::Reversed);
        for t in 0..3 {
            let f = tape.value(fwd[t]).data.clone();
            let b = tape.value(bwd[2 - t]).data.clone();
            for (x, y) in f.iter().zip(&b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ffnn_zero_weights_zero_output() {
        let mut ps = ParamSet::new();
        let ffnn = FfnnParams {
            w1: ps.add("w1", Tensor::zeros(&[3, 2])),
            b1: ps.add("b1", Tensor::zeros(&[3])),
            w2: ps.add("w2", Tensor::zeros(&[4, 3])),
            b2: ps.add("b2", Tensor::zeros(&[4])),
        };
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let out = ffnn_forward(&mut tape, &ps, &ffnn, x);
        assert_eq!(tape.value(out).data, vec![0.0; 4]);
    }

    #[test]
    fn ffnn_identity_passes_tanh() {
        let mut ps = ParamSet::new();
        let ffnn = FfnnParams {
            w1: ps.add("w1", Tensor::matrix(1, 1, vec![1.0])),
            b1: ps.add("b1", Tensor::zeros(&[1])),
            w2: ps.add("w2", Tensor::matrix(1, 1, vec![1.0])),
            b2: ps.add("b2", Tensor::zeros(&[1])),
        };
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.9));
        let out = ffnn_forward(&mut tape, &ps, &ffnn, x);
        assert!((tape.value(out).item() - 0.9f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn ffnn_matches_matrix_oracle() {
        let w1 = [[0.3, -0.5], [0.7, 0.1]];
        let b1 = [0.1, -0.2];
        let w2 = [[1.0, -1.0]];
        let b2 = [0.25];
        let x = [0.4, -0.9];

        let mut ps = ParamSet::new();
        let ffnn = FfnnParams {
            w1: ps.add("w1", Tensor::matrix(2, 2, w1.concat())),
            b1: ps.add("b1", Tensor::vector(b1.to_vec())),
            w2: ps.add("w2", Tensor::matrix(1, 2, w2.concat())),
            b2: ps.add("b2", Tensor::vector(b2.to_vec())),
        };
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::vector(x.to_vec()));
        let out = ffnn_forward(&mut tape, &ps, &ffnn, xv);

        let h0 = (w1[0][0] * x[0] + w1[0][1] * x[1] + b1[0]).tanh();
        let h1 = (w1[1][0] * x[0] + w1[1][1] * x[1] + b1[1]).tanh();
        let expected = w2[0][0] * h0 + w2[0][1] * h1 + b2[0];
        assert!((tape.value(out).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn grad_check_quadratic_is_exact() {
        let mut ps = ParamSet::new();
        ps.add("theta", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let err = grad_check(
            &mut ps,
            |ps, accumulate| {
                let loss: f64 = ps.params[0].value.data.iter().map(|x| 0.5 * x * x).sum();
                if accumulate {
                    for k in 0..3 {
                        ps.params[0].grad.data[k] += ps.params[0].value.data[k];
                    }
                }
                loss
            },
            1e-5,
        );
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn grad_check_constant_loss() {
        let mut ps = ParamSet::new();
        ps.add("theta", Tensor::vector(vec![1.0, 2.0]));
        let err = grad_check(&mut ps, |_, _| 3.5, 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_lstm_through_softmax() {
        let mut rng = seeded_rng(5);
        let mut ps = ParamSet::new();
        let lstm = LstmParams::init(&mut ps, "lstm", 3, 4, &mut rng);
        let inputs_data = vec![
            vec![0.2, -0.7, 0.5],
            vec![1.1, 0.0, -0.3],
        ];
        let target = [0.0, 1.0, 0.0, 0.0];
        let err = grad_check(
            &mut ps,
            |ps, accumulate| {
                let mut tape = Tape::new();
                let inputs = const_inputs(&mut tape, &inputs_data);
                let states = lstm_forward(&mut tape, ps, &lstm, &inputs, Direction::Forward);
                let last = *states.last().unwrap();
                let loss = tape.softmax_ce(last, &target);
                let value = tape.value(loss).item();
                if accumulate {
                    tape.backward(loss, ps);
                }
                value
            },
            1e-5,
        );
        assert!(err < 1e-4, "relative error {err}");
    }
}
