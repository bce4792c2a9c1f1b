//! GPT-style trajectory model: token + continuous-age (+ flag) embeddings,
//! pre-norm blocks under the causal/same-time mask, a next-event head over
//! the predictable tokens and a log-rate head.

mod encoding;
pub(crate) mod engine;
mod real;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sequence::{Mode, TokenSequence};
use crate::vocab::N_CONTEXT_ONLY;

pub use encoding::{
    age_encoding, age_frequencies, attention_mask, attention_mask_padded, DEFAULT_AGE_SCALE_DAYS,
};
pub use real::{matmul, Real};

/// Lower bound applied to the log-rate head output.
pub const LOG_RATE_FLOOR: f64 = -30.0;
/// Default initial rate-head bias: one event per year.
pub const DEFAULT_LOG_RATE_INIT: f64 = -5.903_089_986_991_944; // ln(1/365.25)

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("ages decrease at position {position}")]
    AgesNotSorted { position: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub mode: Mode,
    pub age_scale_days: f64,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads, width 64.
    pub fn desk(vocab_size: usize, mode: Mode) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            embed_dim: 64,
            context_len: mode.default_context_len(),
            vocab_size,
            mode,
            age_scale_days: DEFAULT_AGE_SCALE_DAYS,
        }
    }

    /// Full-size configuration: 12 layers, 12 heads, width 120.
    pub fn paper_scale(vocab_size: usize, mode: Mode) -> Self {
        ModelConfig {
            n_layers: 12,
            n_heads: 12,
            embed_dim: 120,
            ..Self::desk(vocab_size, mode)
        }
    }

    pub fn n_predictable(&self) -> usize {
        self.vocab_size - N_CONTEXT_ONLY
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_layers == 0 || self.n_heads == 0 || self.embed_dim == 0 {
            return bad("layers, heads and width must be positive");
        }
        if self.embed_dim % self.n_heads != 0 {
            return bad("embed_dim must be divisible by n_heads");
        }
        if self.embed_dim % 2 != 0 {
            return bad("embed_dim must be even");
        }
        if self.vocab_size <= N_CONTEXT_ONLY {
            return bad("vocabulary has no predictable tokens");
        }
        if self.context_len == 0 {
            return bad("context_len must be positive");
        }
        if !(self.age_scale_days > 0.0 && self.age_scale_days.is_finite()) {
            return bad("age_scale_days must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements within the flat parameter vector.
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockIx {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Ix {
    pub tok: Range<usize>,
    pub flag: Option<Range<usize>>,
    pub blocks: Vec<BlockIx>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub ev_w: Range<usize>,
    pub ev_b: Range<usize>,
    pub rate_w: Range<usize>,
    pub rate_b: Range<usize>,
}

/// Ordered tensor list for a config, plus typed ranges into it.
fn layout(cfg: &ModelConfig) -> (Vec<TensorInfo>, Ix) {
    let d = cfg.embed_dim;
    let mut tensors = Vec::new();
    let mut off = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let t = TensorInfo {
            name,
            shape,
            offset: off,
        };
        off += t.len();
        let r = t.range();
        tensors.push(t);
        r
    };
    let tok = push("tok_emb".into(), vec![cfg.vocab_size, d]);
    let flag = (cfg.mode == Mode::AllOcc).then(|| push("flag_emb".into(), vec![3, d]));
    let blocks = (0..cfg.n_layers)
        .map(|l| {
            let p = |s: &str| format!("blocks.{l}.{s}");
            BlockIx {
                ln1_g: push(p("ln1.gamma"), vec![d]),
                ln1_b: push(p("ln1.beta"), vec![d]),
                qkv_w: push(p("attn.qkv.weight"), vec![d, 3 * d]),
                qkv_b: push(p("attn.qkv.bias"), vec![3 * d]),
                proj_w: push(p("attn.proj.weight"), vec![d, d]),
                proj_b: push(p("attn.proj.bias"), vec![d]),
                ln2_g: push(p("ln2.gamma"), vec![d]),
                ln2_b: push(p("ln2.beta"), vec![d]),
                fc_w: push(p("mlp.fc.weight"), vec![d, 4 * d]),
                fc_b: push(p("mlp.fc.bias"), vec![4 * d]),
                out_w: push(p("mlp.proj.weight"), vec![4 * d, d]),
                out_b: push(p("mlp.proj.bias"), vec![d]),
            }
        })
        .collect();
    let lnf_g = push("ln_f.gamma".into(), vec![d]);
    let lnf_b = push("ln_f.beta".into(), vec![d]);
    let ev_w = push("head.event.weight".into(), vec![d, cfg.n_predictable()]);
    let ev_b = push("head.event.bias".into(), vec![cfg.n_predictable()]);
    let rate_w = push("head.rate.weight".into(), vec![d, 1]);
    let rate_b = push("head.rate.bias".into(), vec![1]);
    let ix = Ix {
        tok,
        flag,
        blocks,
        lnf_g,
        lnf_b,
        ev_w,
        ev_b,
        rate_w,
        rate_b,
    };
    (tensors, ix)
}

/// Parameter count implied by a config, without allocating.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    layout(cfg).0.iter().map(TensorInfo::len).sum()
}

/// Model parameters as one flat vector with a named tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T: Real> {
    pub config: ModelConfig,
    pub tensors: Vec<TensorInfo>,
    pub params: Vec<T>,
    pub(crate) ix: Ix,
}

impl<T: Real> ModelState<T> {
    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (tensors, ix) = layout(&config);
        let n = tensors.iter().map(TensorInfo::len).sum();
        Ok(ModelState {
            config,
            tensors,
            params: vec![T::zero(); n],
            ix,
        })
    }

    /// Normal(0, 0.02) weights and embeddings, residual projections scaled by
    /// `1/sqrt(2·n_layers)`, unit layer-norm gains, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut s = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let proj_scale = 1.0 / (2.0 * s.config.n_layers as f64).sqrt();
        for t in s.tensors.clone() {
            let r = t.range();
            if t.name.ends_with(".gamma") {
                s.params[r].fill(T::one());
            } else if t.name.ends_with("_emb") || t.name.ends_with(".weight") {
                let k = if t.name.ends_with("proj.weight") { proj_scale } else { 1.0 };
                for v in &mut s.params[r] {
                    *v = T::of(normal.sample(&mut rng) * k);
                }
            }
        }
        s.set_rate_bias(DEFAULT_LOG_RATE_INIT);
        Ok(s)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor_info(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<&[T], ModelError> {
        let t = self
            .tensor_info(name)
            .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))?;
        Ok(&self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut [T], ModelError> {
        let r = self
            .tensor_info(name)
            .ok_or_else(|| ModelError::UnknownTensor(name.to_string()))?
            .range();
        Ok(&mut self.params[r])
    }

    pub fn set_rate_bias(&mut self, log_rate: f64) {
        let r = self.ix.rate_b.clone();
        self.params[r].fill(T::of(log_rate));
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            tensors: self.tensors.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
            ix: self.ix.clone(),
        }
    }

    /// Rebuilds a state from a config and a flat parameter vector.
    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self, ModelError> {
        let mut s = Self::zeros(config)?;
        if params.len() != s.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                s.params.len(),
                params.len()
            )));
        }
        s.params = params;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionOutput {
    /// Logits over the predictable tokens (diseases and death).
    pub event_logits: Vec<f64>,
    /// Natural log of the total event rate, in events/day.
    pub log_total_rate: f64,
}

impl PositionOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.event_logits)
    }

    pub fn total_rate(&self) -> f64 {
        self.log_total_rate.exp()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-token rates `λ_k = exp(log_total_rate) · softmax(logits)_k`, events/day.
pub fn disease_rate(output: &PositionOutput) -> Vec<f64> {
    let total = output.total_rate();
    output.probabilities().into_iter().map(|p| p * total).collect()
}

/// Probability of at least one event within `horizon_days` at a constant rate.
pub fn horizon_risk(rate: f64, horizon_days: f64) -> f64 {
    -(-rate * horizon_days).exp_m1()
}

fn outputs_of<T: Real>(tape: &engine::Tape<T>, k: usize) -> Vec<Vec<PositionOutput>> {
    tape.segs
        .iter()
        .map(|&(start, len)| {
            (start..start + len)
                .map(|r| PositionOutput {
                    event_logits: tape.logits[r * k..(r + 1) * k].iter().map(|v| v.f64()).collect(),
                    log_total_rate: tape.log_rate(r).f64(),
                })
                .collect()
        })
        .collect()
}

/// One output per position of `seq`.
pub fn forward<T: Real>(state: &ModelState<T>, seq: &TokenSequence) -> Result<Vec<PositionOutput>, ModelError> {
    Ok(forward_many(state, &[seq])?.pop().expect("one sequence"))
}

/// Forward over several sequences packed into one pass.
pub fn forward_many<T: Real>(
    state: &ModelState<T>,
    seqs: &[&TokenSequence],
) -> Result<Vec<Vec<PositionOutput>>, ModelError> {
    let tape = engine::forward_tape(state, seqs)?;
    Ok(outputs_of(&tape, state.config.n_predictable()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::Flag;

    fn seq(ids: &[u32], ages: &[u32], flags: &[Flag]) -> TokenSequence {
        TokenSequence {
            patient_id: "p".into(),
            token_ids: ids.to_vec(),
            ages: ages.to_vec(),
            flags: flags.to_vec(),
            target_mask: ids.iter().map(|&i| i >= 11).collect(),
        }
    }

    #[test]
    fn paper_scale_parameter_count() {
        let n = parameter_count(&ModelConfig::paper_scale(1380, Mode::FirstOcc));
        assert!((2_000_000..=2_500_000).contains(&n), "{n}");
        let n_all = parameter_count(&ModelConfig::paper_scale(1380, Mode::AllOcc));
        assert_eq!(n_all, n + 3 * 120);
    }

    #[test]
    fn rate_functions() {
        let o = PositionOutput {
            event_logits: vec![0.0, 0.0],
            log_total_rate: 2f64.ln(),
        };
        let r = disease_rate(&o);
        assert!((r[0] - 1.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        let o = PositionOutput {
            event_logits: vec![0.25f64.ln(), 0.75f64.ln()],
            log_total_rate: 2f64.ln(),
        };
        let r = disease_rate(&o);
        assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 1.5).abs() < 1e-12);
        let o = PositionOutput {
            event_logits: vec![1.0, -1.0],
            log_total_rate: -700.0,
        };
        assert!(disease_rate(&o).iter().all(|&x| x < 1e-300));

        assert_eq!(horizon_risk(0.0, 365.0), 0.0);
        assert!((horizon_risk(0.001, 365.0) - 0.305_803_349_122_021_1).abs() < 1e-12);
        assert!(horizon_risk(0.001, 730.0) > horizon_risk(0.001, 365.0));
    }

    #[test]
    fn forward_shapes_and_errors() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            embed_dim: 8,
            context_len: 6,
            vocab_size: 15,
            mode: Mode::AllOcc,
            age_scale_days: DEFAULT_AGE_SCALE_DAYS,
        };
        let st = ModelState::<f32>::init(cfg, 1).unwrap();
        use Flag::*;
        let s = seq(&[2, 5, 8, 12, 13], &[0, 0, 0, 100, 200], &[StaticOrNoEvent, StaticOrNoEvent, StaticOrNoEvent, NewOnset, Recurrent]);
        let out = forward(&st, &s).unwrap();
        assert_eq!(out.len(), 5);
        for o in &out {
            assert_eq!(o.event_logits.len(), 4);
            let sum: f64 = o.probabilities().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(o.total_rate() > 0.0);
        }
        let mut long = s.clone();
        for _ in 0..2 {
            long.token_ids.push(12);
            long.ages.push(300);
            long.flags.push(NewOnset);
            long.target_mask.push(true);
        }
        assert!(matches!(forward(&st, &long), Err(ModelError::SequenceTooLong { .. })));
        let mut bad = s.clone();
        bad.token_ids[3] = 15;
        assert!(matches!(forward(&st, &bad), Err(ModelError::IdOutOfRange { .. })));
        let mut unsorted = s.clone();
        unsorted.ages[4] = 50;
        assert!(matches!(forward(&st, &unsorted), Err(ModelError::AgesNotSorted { .. })));
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk(40, Mode::FirstOcc);
        c.n_heads = 3;
        assert!(ModelState::<f32>::zeros(c).is_err());
        assert!(ModelState::<f32>::zeros(ModelConfig::desk(11, Mode::FirstOcc)).is_err());
    }
}
