//! The grouping network: shared class tokens, per-modality attention
//! aggregation and grouping, and the classifier heads.

pub mod attention;
pub mod bank;
pub mod checkpoint;
pub mod grouping;
pub mod heads;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attention::{AttentionAggregator, AttentionVariant, Modality, Projection};
pub use bank::ClassTokenBank;
pub use grouping::{AssignmentMode, GroupOutput, GroupingBlock, GROUP_EPS};
pub use heads::{argmax, fuse_scores, predict_av, Linear};

use crate::error::{CignError, Result};
use crate::numerics::{Tape, Tensor, Var};

pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub patches: usize,
    pub depth: usize,
    pub assignment: AssignmentMode,
    pub attention: AttentionVariant,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            patches: 4,
            depth: 3,
            assignment: AssignmentMode::Soft,
            attention: AttentionVariant::Literal,
            init_std: DEFAULT_INIT_STD,
        }
    }
}

/// Every trainable tensor except the class tokens, generic over storage so
/// the same layout serves owned values (`Tensor`) and tape handles (`Var`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<P> {
    pub audio_agg: Vec<Projection<P>>,
    pub visual_agg: Vec<Projection<P>>,
    pub audio_group: GroupingBlock<P>,
    pub visual_group: GroupingBlock<P>,
    pub audio_head: Linear<P>,
    pub visual_head: Linear<P>,
    /// Sized for the current task's classes; replaced at every task.
    pub token_head: Option<Linear<P>>,
}

impl<P> Params<P> {
    pub fn map<'a, Q>(&'a self, f: &mut dyn FnMut(String, &'a P) -> Q) -> Params<Q> {
        let proj = |prefix: &str, layers: &'a [Projection<P>], f: &mut dyn FnMut(String, &'a P) -> Q| {
            layers
                .iter()
                .enumerate()
                .map(|(i, p)| Projection {
                    wq: f(format!("{prefix}.layer{i}.wq"), &p.wq),
                    wk: f(format!("{prefix}.layer{i}.wk"), &p.wk),
                    wv: f(format!("{prefix}.layer{i}.wv"), &p.wv),
                })
                .collect()
        };
        let group = |prefix: &str, g: &'a GroupingBlock<P>, f: &mut dyn FnMut(String, &'a P) -> Q| {
            GroupingBlock {
                wq: f(format!("{prefix}.wq"), &g.wq),
                wk: f(format!("{prefix}.wk"), &g.wk),
                wv: f(format!("{prefix}.wv"), &g.wv),
                wo: f(format!("{prefix}.wo"), &g.wo),
            }
        };
        let linear = |prefix: &str, l: &'a Linear<P>, f: &mut dyn FnMut(String, &'a P) -> Q| Linear {
            w: f(format!("{prefix}.w"), &l.w),
            b: f(format!("{prefix}.b"), &l.b),
        };
        Params {
            audio_agg: proj("audio_agg", &self.audio_agg, f),
            visual_agg: proj("visual_agg", &self.visual_agg, f),
            audio_group: group("audio_group", &self.audio_group, f),
            visual_group: group("visual_group", &self.visual_group, f),
            audio_head: linear("audio_head", &self.audio_head, f),
            visual_head: linear("visual_head", &self.visual_head, f),
            token_head: self
                .token_head
                .as_ref()
                .map(|l| linear("token_head", l, f)),
        }
    }

    /// Mutable traversal in the same order as [`Params::map`].
    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut P)) {
        for (prefix, layers) in [("audio_agg", &mut self.audio_agg), ("visual_agg", &mut self.visual_agg)] {
            for (i, p) in layers.iter_mut().enumerate() {
                f(format!("{prefix}.layer{i}.wq"), &mut p.wq);
                f(format!("{prefix}.layer{i}.wk"), &mut p.wk);
                f(format!("{prefix}.layer{i}.wv"), &mut p.wv);
            }
        }
        for (prefix, g) in [("audio_group", &mut self.audio_group), ("visual_group", &mut self.visual_group)] {
            f(format!("{prefix}.wq"), &mut g.wq);
            f(format!("{prefix}.wk"), &mut g.wk);
            f(format!("{prefix}.wv"), &mut g.wv);
            f(format!("{prefix}.wo"), &mut g.wo);
        }
        let mut heads = vec![("audio_head", &mut self.audio_head), ("visual_head", &mut self.visual_head)];
        if let Some(t) = self.token_head.as_mut() {
            heads.push(("token_head", t));
        }
        for (prefix, l) in heads {
            f(format!("{prefix}.w"), &mut l.w);
            f(format!("{prefix}.b"), &mut l.b);
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a P)) {
        let _ = self.map(&mut |name, p| f(name, p));
    }
}

pub const TOKENS_NAME: &str = "tokens";

#[derive(Debug, Clone, PartialEq)]
pub struct CignModel {
    pub config: ModelConfig,
    pub bank: ClassTokenBank,
    pub params: Params<Tensor>,
}

/// Per-class scores for one audio-visual pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub p_audio: Vec<f64>,
    pub p_visual: Vec<f64>,
    pub p_av: Vec<f64>,
}

impl Prediction {
    /// Predicted token slot per modality, in (audio, visual, audio-visual) order.
    pub fn slots(&self) -> [usize; 3] {
        [argmax(&self.p_audio), argmax(&self.p_visual), argmax(&self.p_av)]
    }
}

impl CignModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        if config.dim == 0 || config.patches == 0 || config.depth == 0 {
            return Err(CignError::config("dim, patches and depth must be positive"));
        }
        let d = config.dim;
        let s = config.init_std;
        let mut square = || Tensor::randn(&[d, d], s, rng);
        let proj_stack = |rng_sq: &mut dyn FnMut() -> Tensor| match config.attention {
            AttentionVariant::Literal => Vec::new(),
            AttentionVariant::Projected => (0..config.depth)
                .map(|_| Projection {
                    wq: rng_sq(),
                    wk: rng_sq(),
                    wv: rng_sq(),
                })
                .collect(),
        };
        let audio_agg = proj_stack(&mut square);
        let visual_agg = proj_stack(&mut square);
        let mut block = || GroupingBlock {
            wq: square(),
            wk: square(),
            wv: square(),
            wo: square(),
        };
        let audio_group = block();
        let visual_group = block();
        let audio_head = Linear {
            w: Tensor::randn(&[d, 1], s, rng),
            b: Tensor::zeros(&[1, 1]),
        };
        let visual_head = Linear {
            w: Tensor::randn(&[d, 1], s, rng),
            b: Tensor::zeros(&[1, 1]),
        };
        Ok(CignModel {
            config,
            bank: ClassTokenBank::new(d),
            params: Params {
                audio_agg,
                visual_agg,
                audio_group,
                visual_group,
                audio_head,
                visual_head,
                token_head: None,
            },
        })
    }

    /// Adds tokens for a new task and replaces the token-constraint head
    /// with a fresh one over the task's classes.
    pub fn begin_task<R: Rng + ?Sized>(&mut self, class_ids: &[usize], rng: &mut R) -> Result<()> {
        self.bank.expand(class_ids, self.config.init_std, rng)?;
        let d = self.config.dim;
        self.params.token_head = Some(Linear {
            w: Tensor::randn(&[d, class_ids.len()], self.config.init_std, rng),
            b: Tensor::zeros(&[1, class_ids.len()]),
        });
        Ok(())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(t) = self.bank.tokens() {
            out.push((TOKENS_NAME.to_string(), t));
        }
        self.params.visit(&mut |name, t| out.push((name, t)));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Some(t) = self.bank.tokens_mut() {
            out.push((TOKENS_NAME.to_string(), t));
        }
        self.params.visit_mut(&mut |name, t| out.push((name, t)));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let tokens = self
            .bank
            .tokens()
            .map(|t| tape.leaf(t.clone(), trainable));
        let params = self
            .params
            .map(&mut |_, t| tape.leaf(t.clone(), trainable));
        BoundModel {
            config: self.config,
            tokens,
            old_count: self.bank.old_count(),
            params,
        }
    }

    /// Rebinds this model's layout onto existing handles, given in the order
    /// of [`CignModel::named_params`].
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundModel> {
        let expected = self.named_params().len();
        if vars.len() != expected {
            return Err(CignError::config(format!(
                "expected {expected} parameter handles, got {}",
                vars.len()
            )));
        }
        let mut iter = vars.iter().copied();
        let tokens = self.bank.tokens().map(|_| iter.next().expect("length checked"));
        let params = self.params.map(&mut |_, _| iter.next().expect("length checked"));
        Ok(BoundModel {
            config: self.config,
            tokens,
            old_count: self.bank.old_count(),
            params,
        })
    }

    pub fn forward_values(&self, audio: &Tensor, visual: &Tensor) -> Result<(Tape, SampleForward)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = bound.forward_sample(&mut tape, audio, visual)?;
        Ok((tape, out))
    }

    pub fn predict(&self, audio: &Tensor, visual: &Tensor) -> Result<Prediction> {
        let (tape, out) = self.forward_values(audio, visual)?;
        let p_audio = tape.value(out.p_audio).data().to_vec();
        let p_visual = tape.value(out.p_visual).data().to_vec();
        let p_av = fuse_scores(&p_audio, &p_visual)?;
        Ok(Prediction {
            p_audio,
            p_visual,
            p_av,
        })
    }

    /// Class-aware embeddings `(g_audio, g_visual)`, each `[K, D]`.
    pub fn embeddings(&self, audio: &Tensor, visual: &Tensor) -> Result<(Tensor, Tensor)> {
        let (tape, out) = self.forward_values(audio, visual)?;
        Ok((
            tape.value(out.audio.embeddings).clone(),
            tape.value(out.visual.embeddings).clone(),
        ))
    }
}

/// Tape-resident view of a [`CignModel`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub config: ModelConfig,
    pub tokens: Option<Var>,
    pub old_count: usize,
    pub params: Params<Var>,
}

/// Everything one sample contributes to the losses.
#[derive(Debug, Clone, Copy)]
pub struct SampleForward {
    pub audio: GroupOutput,
    pub visual: GroupOutput,
    /// `[K, 1]` sigmoid scores.
    pub p_audio: Var,
    pub p_visual: Var,
}

impl BoundModel {
    /// Handles in the order of [`CignModel::named_params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.tokens.into_iter().collect();
        self.params.visit(&mut |_, v| out.push(*v));
        out
    }

    fn aggregator(&self, modality: Modality) -> AttentionAggregator<Var> {
        let layers = match modality {
            Modality::Audio => &self.params.audio_agg,
            Modality::Visual => &self.params.visual_agg,
        };
        AttentionAggregator {
            modality,
            depth: self.config.depth,
            layers: layers.clone(),
        }
    }

    pub fn forward_modality(
        &self,
        tape: &mut Tape,
        modality: Modality,
        features: Var,
    ) -> Result<(GroupOutput, Var)> {
        let (block, head) = match modality {
            Modality::Audio => (&self.params.audio_group, &self.params.audio_head),
            Modality::Visual => (&self.params.visual_group, &self.params.visual_head),
        };
        let (feat, toks) = self.aggregator(modality).forward(tape, features, self.tokens)?;
        let grouped = block.forward(tape, feat, toks, self.config.assignment)?;
        let p = head.classify(tape, grouped.embeddings)?;
        Ok((grouped, p))
    }

    pub fn forward_sample(&self, tape: &mut Tape, audio: &Tensor, visual: &Tensor) -> Result<SampleForward> {
        let d = self.config.dim;
        if audio.shape() != [1, d] {
            return Err(CignError::Shape {
                op: "audio features",
                lhs: audio.shape().to_vec(),
                rhs: vec![1, d],
            });
        }
        if visual.rank() != 2 || visual.shape()[1] != d {
            return Err(CignError::Shape {
                op: "visual features",
                lhs: visual.shape().to_vec(),
                rhs: vec![self.config.patches, d],
            });
        }
        let a = tape.constant(audio.clone());
        let v = tape.constant(visual.clone());
        let (audio, p_audio) = self.forward_modality(tape, Modality::Audio, a)?;
        let (visual, p_visual) = self.forward_modality(tape, Modality::Visual, v)?;
        Ok(SampleForward {
            audio,
            visual,
            p_audio,
            p_visual,
        })
    }

    /// `e = softmax(FC(c_i))` for the tokens added by the current task.
    pub fn token_class_probs(&self, tape: &mut Tape) -> Result<Option<Var>> {
        let (Some(tokens), Some(head)) = (self.tokens, self.params.token_head.as_ref()) else {
            return Ok(None);
        };
        let k = tape.shape(tokens)[0];
        if k == self.old_count {
            return Ok(None);
        }
        let new_tokens = tape.slice_rows(tokens, self.old_count, k)?;
        head.token_class_probs(tape, new_tokens).map(Some)
    }
}
