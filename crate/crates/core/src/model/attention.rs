//! Token-augmented self-attention over `[features; class tokens]`.

use serde::{Deserialize, Serialize};

use crate::error::{CignError, Result};
use crate::numerics::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    /// `x_j + Softmax(x_j Xᵀ / √D) X` with no learned projections.
    #[default]
    Literal,
    /// Query/key/value projections per layer.
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

/// Per-layer projections of the projected variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection<P> {
    pub wq: P,
    pub wk: P,
    pub wv: P,
}

/// Stack of `depth` residual self-attention layers for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionAggregator<P> {
    pub modality: Modality,
    pub depth: usize,
    /// Empty for [`AttentionVariant::Literal`], `depth` entries otherwise.
    pub layers: Vec<Projection<P>>,
}

impl<P> AttentionAggregator<P> {
    pub fn variant(&self) -> AttentionVariant {
        if self.layers.is_empty() {
            AttentionVariant::Literal
        } else {
            AttentionVariant::Projected
        }
    }
}

impl AttentionAggregator<Var> {
    pub fn literal(modality: Modality, depth: usize) -> Self {
        AttentionAggregator {
            modality,
            depth,
            layers: Vec::new(),
        }
    }

    /// Runs the stack over `[features; tokens]` and splits the result back
    /// into `(feature rows, token rows)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        features: Var,
        tokens: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        if self.depth == 0 {
            return Err(CignError::config("attention depth must be at least 1"));
        }
        let feat_rows = tape.shape(features)[0];
        let mut x = match tokens {
            Some(t) => {
                if tape.shape(t)[1] != tape.shape(features)[1] {
                    return Err(CignError::Shape {
                        op: "aggregate",
                        lhs: tape.shape(features).to_vec(),
                        rhs: tape.shape(t).to_vec(),
                    });
                }
                tape.concat(&[features, t], 0)?
            }
            None => features,
        };
        let dim = tape.shape(x)[1];
        let inv_sqrt_d = 1.0 / (dim as f64).sqrt();
        for layer in 0..self.depth {
            let (q, k, v) = match self.layers.get(layer) {
                Some(p) => (tape.matmul(x, p.wq)?, tape.matmul(x, p.wk)?, tape.matmul(x, p.wv)?),
                None => (x, x, x),
            };
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, inv_sqrt_d);
            let attn = tape.softmax(scores, 1)?;
            let y = tape.matmul(attn, v)?;
            x = tape.add(x, y)?;
        }
        let total = tape.shape(x)[0];
        let feat_out = tape.slice_rows(x, 0, feat_rows)?;
        let token_out = if total > feat_rows {
            Some(tape.slice_rows(x, feat_rows, total)?)
        } else {
            None
        };
        Ok((feat_out, token_out))
    }
}
