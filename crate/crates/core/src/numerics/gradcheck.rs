//! Central-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CignError, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

pub const MIN_STEP: f64 = 1e-7;
pub const MAX_STEP: f64 = 1e-3;
pub const DEFAULT_STEP: f64 = 1e-6;

/// Scalar-valued function of several tensors, recorded on a tape.
pub trait TapeFn: Fn(&mut Tape, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape, &[Var]) -> Result<Var>> TapeFn for F {}

fn evaluate<F: TapeFn>(f: &F, inputs: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Analytic gradients of `f` at `inputs`, one tensor per input.
pub fn analytic_gradients<F: TapeFn>(
    mut tape: Tape,
    f: &F,
    inputs: &[Tensor],
) -> Result<Vec<Tensor>> {
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}

/// Maximum over all coordinates of `|analytic - central difference| / max(1, |analytic|)`.
pub fn grad_check_many_on<F: TapeFn>(
    tape: Tape,
    f: F,
    inputs: &[Tensor],
    h: f64,
) -> Result<f64> {
    if !(MIN_STEP..=MAX_STEP).contains(&h) {
        return Err(CignError::config(format!(
            "finite-difference step {h:e} outside [{MIN_STEP:e}, {MAX_STEP:e}]"
        )));
    }
    let analytic = analytic_gradients(tape, &f, inputs)?;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (which, grad) in analytic.iter().enumerate() {
        for k in 0..grad.numel() {
            let orig = probe[which].data()[k];
            probe[which].data_mut()[k] = orig + h;
            let up = evaluate(&f, &probe)?;
            probe[which].data_mut()[k] = orig - h;
            let down = evaluate(&f, &probe)?;
            probe[which].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

pub fn grad_check_many<F: TapeFn>(f: F, inputs: &[Tensor], h: f64) -> Result<f64> {
    grad_check_many_on(Tape::new(), f, inputs, h)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|t: &mut Tape, v: &[Var]| f(t, v[0]), std::slice::from_ref(x), h)
}

type OpBody = fn(&mut Tape, &[Var]) -> Result<Var>;

/// One differentiable tape operation with an input generator and a scalar
/// readout.
pub struct OpCase {
    pub name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    body: OpBody,
}

impl OpCase {
    pub fn sample_inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        (self.inputs)(rng)
    }

    /// Worst relative error over `trials` seeded random inputs.
    pub fn check(&self, seed: u64, trials: usize, corrupt: bool) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let inputs = self.sample_inputs(&mut rng);
            let tape = if corrupt {
                Tape::with_corrupted_backward()
            } else {
                Tape::new()
            };
            let body = self.body;
            let err = grad_check_many_on(tape, body, &inputs, DEFAULT_STEP)?;
            worst = worst.max(err);
        }
        Ok(worst)
    }
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = randn(shape, rng);
    t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
    t
}

/// Values whose pairwise gaps and distances to `avoid` all exceed `gap`.
fn spread(shape: &[usize], avoid: &[f64], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let n = t.numel();
    let mut taken: Vec<f64> = avoid.to_vec();
    for k in 0..n {
        let v = loop {
            let c: f64 = rng.gen_range(-2.0..2.0);
            if taken.iter().all(|x| (x - c).abs() > gap) {
                break c;
            }
        };
        taken.push(v);
        t.data_mut()[k] = v;
    }
    t
}

/// `sum(out ⊙ w)` with `w` appended as the last input, so every output
/// coordinate carries a distinct weight.
fn readout(tape: &mut Tape, out: Var, w: Var) -> Result<Var> {
    let p = tape.mul(out, w)?;
    Ok(tape.sum_all(p))
}

macro_rules! case {
    ($name:expr, |$rng:ident| $gen:expr, |$t:ident, $v:ident| $body:expr) => {
        OpCase {
            name: $name,
            inputs: |$rng: &mut ChaCha8Rng| $gen,
            body: |$t: &mut Tape, $v: &[Var]| -> Result<Var> {
                let w = *$v.last().unwrap();
                let out = $body;
                readout($t, out, w)
            },
        }
    };
}

/// Every differentiable operation the tape supports, each exactly once.
///
/// `straight_through_one_hot` is omitted: its forward pass is piecewise
/// constant, so finite differences cannot see the gradient it passes on.
pub fn op_registry() -> Vec<OpCase> {
    vec![
        case!("matmul", |r| vec![randn(&[3, 4], r), randn(&[4, 2], r), randn(&[3, 2], r)],
            |t, v| t.matmul(v[0], v[1])?),
        case!("transpose", |r| vec![randn(&[3, 2], r), randn(&[2, 3], r)],
            |t, v| t.transpose(v[0])?),
        case!("add", |r| vec![randn(&[3, 4], r), randn(&[1, 4], r), randn(&[3, 4], r)],
            |t, v| t.add(v[0], v[1])?),
        case!("sub", |r| vec![randn(&[1, 4], r), randn(&[3, 4], r), randn(&[3, 4], r)],
            |t, v| t.sub(v[0], v[1])?),
        case!("mul", |r| vec![randn(&[3, 4], r), randn(&[3, 4], r), randn(&[3, 4], r)],
            |t, v| t.mul(v[0], v[1])?),
        case!("div", |r| vec![randn(&[3, 4], r), positive(&[1, 4], r), randn(&[3, 4], r)],
            |t, v| t.div(v[0], v[1])?),
        case!("scale", |r| vec![randn(&[2, 3], r), randn(&[2, 3], r)],
            |t, v| t.scale(v[0], -1.7)),
        case!("shift", |r| vec![randn(&[2, 3], r), randn(&[2, 3], r)],
            |t, v| t.shift(v[0], 0.3)),
        case!("exp", |r| vec![randn(&[5], r), randn(&[5], r)],
            |t, v| t.exp(v[0])),
        case!("log", |r| vec![positive(&[5], r), randn(&[5], r)],
            |t, v| t.log(v[0])?),
        case!("sigmoid", |r| vec![randn(&[5], r), randn(&[5], r)],
            |t, v| t.sigmoid(v[0])),
        case!("softmax", |r| vec![randn(&[5], r), randn(&[5], r)],
            |t, v| t.softmax(v[0], 0)?),
        case!("log_softmax", |r| vec![randn(&[3, 4], r), randn(&[3, 4], r)],
            |t, v| t.log_softmax(v[0], 1)?),
        case!("sum", |r| vec![randn(&[3, 4], r), randn(&[3, 1], r)],
            |t, v| t.sum(v[0], 1)?),
        case!("mean", |r| vec![randn(&[3, 4], r), randn(&[1, 4], r)],
            |t, v| t.mean(v[0], 0)?),
        case!("max", |r| vec![spread(&[3, 4], &[], 1e-2, r), randn(&[3, 1], r)],
            |t, v| t.max(v[0], 1)?),
        case!("sum_all", |r| vec![randn(&[2, 3], r), randn(&[1], r)],
            |t, v| t.sum_all(v[0])),
        case!("concat", |r| vec![randn(&[1, 3], r), randn(&[2, 3], r), randn(&[3, 3], r)],
            |t, v| t.concat(&[v[0], v[1]], 0)?),
        case!("slice_rows", |r| vec![randn(&[4, 3], r), randn(&[2, 3], r)],
            |t, v| t.slice_rows(v[0], 1, 3)?),
        case!("reshape", |r| vec![randn(&[2, 3], r), randn(&[3, 2], r)],
            |t, v| t.reshape(v[0], &[3, 2])?),
        case!("clamp", |r| vec![spread(&[6], &[-0.5, 0.5], 1e-2, r), randn(&[6], r)],
            |t, v| t.clamp(v[0], -0.5, 0.5)),
        case!("cosine_sim", |r| vec![randn(&[5], r), randn(&[5], r), randn(&[1], r)],
            |t, v| t.cosine_sim(v[0], v[1])?),
    ]
}
