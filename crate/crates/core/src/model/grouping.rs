//! Grouping of features into class-aware embeddings, one per class token.
//!
//! For features `f_l` and aggregated tokens `c_i` the block computes
//!
//! ```text
//! A[l, i] = softmax_i( (f_l Wq) · (c_i Wk) )
//! g_i     = c_i + ( Σ_l A[l, i] (f_l Wv) / Σ_l A[l, i] ) Wo
//! ```
//!
//! Projections act on row vectors (`x ↦ x W`). The soft weights
//! `A[l, i] / Σ_l A[l, i]` are evaluated as `softmax_l(log A[l, i])`, which
//! needs no ε and is exactly 1 for a single feature row. In hard mode `A` is
//! a straight-through one-hot of its argmax over tokens, and the mass of a
//! token no row picked is floored at ε.

use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};
use crate::numerics::{Tape, Var};

/// Floor on the per-token assignment mass in hard mode.
pub const GROUP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMode {
    #[default]
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingBlock<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
    pub wo: P,
}

/// Output of one grouping block.
#[derive(Debug, Clone, Copy)]
pub struct GroupOutput {
    /// `[K, D]` class-aware embeddings.
    pub embeddings: Var,
    /// `[L, K]` assignment of each feature row over the tokens.
    pub assignment: Var,
}

impl GroupingBlock<Var> {
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: Var,
        tokens: Option<Var>,
        mode: AssignmentMode,
    ) -> Result<GroupOutput> {
        let tokens =
            tokens.ok_or_else(|| CignError::config("grouping requires at least one class token"))?;
        if tape.shape(features)[1] != tape.shape(tokens)[1] {
            return Err(CignError::Shape {
                op: "group",
                lhs: tape.shape(features).to_vec(),
                rhs: tape.shape(tokens).to_vec(),
            });
        }
        let q = tape.matmul(features, self.wq)?;
        let k = tape.matmul(tokens, self.wk)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let (assignment, weights) = match mode {
            AssignmentMode::Soft => {
                let log_a = tape.log_softmax(logits, 1)?;
                let a = tape.exp(log_a);
                (a, tape.softmax(log_a, 0)?)
            }
            AssignmentMode::Hard => {
                let soft = tape.softmax(logits, 1)?;
                let a = tape.straight_through_one_hot(soft, 1)?;
                let mass = tape.sum(a, 0)?;
                let mass = tape.clamp(mass, GROUP_EPS, f64::INFINITY);
                (a, tape.div(a, mass)?)
            }
        };
        let values = tape.matmul(features, self.wv)?;
        let wt = tape.transpose(weights)?;
        let pooled = tape.matmul(wt, values)?;
        let out = tape.matmul(pooled, self.wo)?;
        let embeddings = tape.add(tokens, out)?;
        Ok(GroupOutput {
            embeddings,
            assignment,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        feat: Tensor,
        tokens: Tensor,
        w: [Tensor; 4],
    }

    fn fixture(l: usize, k: usize, d: usize, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Fixture {
            feat: Tensor::randn(&[l, d], 1.0, &mut rng),
            tokens: Tensor::randn(&[k, d], 1.0, &mut rng),
            w: std::array::from_fn(|_| Tensor::randn(&[d, d], 0.3, &mut rng)),
        }
    }

    fn run(fx: &Fixture, mode: AssignmentMode) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let f = tape.constant(fx.feat.clone());
        let c = tape.constant(fx.tokens.clone());
        let [wq, wk, wv, wo] = fx.w.clone().map(|w| tape.constant(w));
        let block = GroupingBlock { wq, wk, wv, wo };
        let out = block.forward(&mut tape, f, Some(c), mode).unwrap();
        (
            tape.value(out.embeddings).clone(),
            tape.value(out.assignment).clone(),
        )
    }

    fn vec_mat(x: &[f64], w: &Tensor) -> Vec<f64> {
        let (d_in, d_out) = w.dims2();
        (0..d_out)
            .map(|c| (0..d_in).map(|r| x[r] * w.get2(r, c)).sum())
            .collect()
    }

    #[test]
    fn audio_ratio_cancels() {
        let fx = fixture(1, 3, 5, 9);
        let (g, _) = run(&fx, AssignmentMode::Soft);
        let wv_f = vec_mat(fx.feat.row(0), &fx.w[2]);
        let shared = vec_mat(&wv_f, &fx.w[3]);
        for i in 0..3 {
            for d in 0..5 {
                let expected = fx.tokens.get2(i, d) + shared[d];
                assert!((g.get2(i, d) - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn audio_cancellation_survives_sharp_assignments() {
        let mut sharp = fixture(1, 5, 8, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (g_ref, _) = run(&sharp, AssignmentMode::Soft);
        sharp.w[0] = Tensor::randn(&[8, 8], 4.0, &mut rng);
        sharp.w[1] = Tensor::randn(&[8, 8], 4.0, &mut rng);
        let (g, a) = run(&sharp, AssignmentMode::Soft);
        assert!(a.data().iter().any(|&v| v < 1e-8));
        assert!(g.max_abs_diff(&g_ref) <= 1e-12);
    }

    #[test]
    fn single_token_pools_the_patch_mean() {
        let fx = fixture(4, 1, 5, 10);
        let (g, a) = run(&fx, AssignmentMode::Soft);
        assert!(a.data().iter().all(|&v| v == 1.0));
        let mean: Vec<f64> = (0..5)
            .map(|d| (0..4).map(|l| fx.feat.get2(l, d)).sum::<f64>() / 4.0)
            .collect();
        let pooled = vec_mat(&vec_mat(&mean, &fx.w[2]), &fx.w[3]);
        for d in 0..5 {
            assert!((g.get2(0, d) - fx.tokens.get2(0, d) - pooled[d]).abs() <= 1e-12);
        }
        let (gh, _) = run(&fx, AssignmentMode::Hard);
        assert!(g.max_abs_diff(&gh) <= 1e-12);
    }

    #[test]
    fn soft_assignment_is_row_stochastic_and_hard_is_one_hot() {
        let fx = fixture(4, 3, 8, 11);
        let (_, a) = run(&fx, AssignmentMode::Soft);
        for l in 0..4 {
            let s: f64 = a.row(l).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
        let (_, h) = run(&fx, AssignmentMode::Hard);
        for l in 0..4 {
            let row = h.row(l);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
    }

    #[test]
    fn zero_tokens_is_a_configuration_error() {
        let fx = fixture(2, 1, 3, 12);
        let mut tape = Tape::new();
        let f = tape.constant(fx.feat.clone());
        let [wq, wk, wv, wo] = fx.w.clone().map(|w| tape.constant(w));
        let block = GroupingBlock { wq, wk, wv, wo };
        assert!(matches!(
            block.forward(&mut tape, f, None, AssignmentMode::Soft),
            Err(CignError::Config(_))
        ));
    }
}
