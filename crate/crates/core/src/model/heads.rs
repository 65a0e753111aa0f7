use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};
use crate::numerics::{Tape, Var};

/// Affine map `x W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<P> {
    pub w: P,
    pub b: P,
}

impl Linear<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.w)?;
        tape.add(y, self.b)
    }

    /// Per-row binary probability: `sigmoid(g_i W + b)`, shape `[K, 1]`.
    pub fn classify(&self, tape: &mut Tape, embeddings: Var) -> Result<Var> {
        let logits = self.forward(tape, embeddings)?;
        Ok(tape.sigmoid(logits))
    }

    /// Softmax over current-task class slots for each new token, shape
    /// `[K_new, K_task]`.
    pub fn token_class_probs(&self, tape: &mut Tape, new_tokens: Var) -> Result<Var> {
        let logits = self.forward(tape, new_tokens)?;
        tape.softmax(logits, 1)
    }
}

/// Audio-visual score `p_a ⊙ p_v`.
pub fn predict_av(tape: &mut Tape, p_audio: Var, p_visual: Var) -> Result<Var> {
    if tape.shape(p_audio) != tape.shape(p_visual) {
        return Err(CignError::Shape {
            op: "predict_av",
            lhs: tape.shape(p_audio).to_vec(),
            rhs: tape.shape(p_visual).to_vec(),
        });
    }
    tape.mul(p_audio, p_visual)
}

/// Plain-value form of [`predict_av`].
pub fn fuse_scores(p_audio: &[f64], p_visual: &[f64]) -> Result<Vec<f64>> {
    if p_audio.len() != p_visual.len() {
        return Err(CignError::Shape {
            op: "predict_av",
            lhs: vec![p_audio.len()],
            rhs: vec![p_visual.len()],
        });
    }
    Ok(p_audio.iter().zip(p_visual).map(|(a, v)| a * v).collect())
}

/// Index of the largest score; the first one on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}
