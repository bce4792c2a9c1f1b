//! Loss, exact gradients, AdamW with warmup + cosine decay, and the training
//! loop with validation-based checkpoint selection.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::model::engine::{backward, forward_tape};
use crate::model::{ModelError, ModelState, Real};
use crate::seed::{derive_seed, rng_from_seed};
use crate::sequence::{crop_to_window, TokenSequence};
use crate::vocab::{predictable_index, PADDING};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("no position in the batch has a prediction target")]
    NoContributingPositions,
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("training diverged at iteration {iter}: loss {loss}")]
    DivergedLoss { iter: usize, loss: f64 },
    #[error("{0} set has no sequence with a prediction target")]
    EmptyDataset(&'static str),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_iters: usize,
    pub max_iters: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_interval: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    /// Set the rate-head bias to the log of the pooled rate MLE before training.
    pub init_rate_bias: bool,
    /// Set the event-head bias to log target frequencies before training.
    pub init_event_bias: bool,
    /// Tensors excluded from updates.
    pub freeze: Vec<String>,
    /// Train every tensor except these (takes precedence when non-empty).
    pub train_only: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 6e-4,
            lr_min: 6e-5,
            warmup_iters: 1000,
            max_iters: 10_000,
            weight_decay: 0.2,
            batch_size: 64,
            seed: 42,
            eval_interval: 250,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            grad_clip: 1.0,
            init_rate_bias: false,
            init_event_bias: false,
            freeze: Vec::new(),
            train_only: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr_min < self.lr_max) {
            return bad("lr_min must be below lr_max");
        }
        if self.warmup_iters >= self.max_iters {
            return bad("warmup_iters must be below max_iters");
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return bad("batch_size and eval_interval must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }

    fn is_trainable(&self, name: &str) -> bool {
        if !self.train_only.is_empty() {
            return self.train_only.iter().any(|n| n == name);
        }
        !self.freeze.iter().any(|n| n == name)
    }
}

/// Linear warmup, cosine decay to `lr_min`, constant afterwards.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    if iter < cfg.warmup_iters {
        return cfg.lr_max * (iter + 1) as f64 / cfg.warmup_iters as f64;
    }
    if iter >= cfg.max_iters {
        return cfg.lr_min;
    }
    let progress = (iter - cfg.warmup_iters) as f64 / (cfg.max_iters - cfg.warmup_iters) as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * progress).cos())
}

/// Prediction target of each position: the class and waiting time of the
/// next non-padding token, when that token is a target.
pub fn position_targets(seq: &TokenSequence) -> Vec<Option<(usize, f64)>> {
    let mut out = vec![None; seq.len()];
    let mut next: Option<usize> = None;
    for p in (0..seq.len()).rev() {
        if seq.token_ids[p] == PADDING {
            continue;
        }
        if let Some(q) = next {
            if seq.target_mask[q] {
                let class = predictable_index(seq.token_ids[q]).expect("target tokens are predictable");
                out[p] = Some((class, f64::from(seq.ages[q] - seq.ages[p])));
            }
        }
        next = Some(p);
    }
    out
}

pub fn n_contributing(seq: &TokenSequence) -> usize {
    position_targets(seq).iter().flatten().count()
}

/// Fixed-length batch: sequences padded to a common length, with per-position
/// next-token targets and waiting times.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub seqs: Vec<TokenSequence>,
    pub targets: Vec<Vec<Option<usize>>>,
    pub dt: Vec<Vec<f64>>,
}

impl Batch {
    /// Pads to the longest member. Sequences with no prediction target are
    /// dropped.
    pub fn new(seqs: &[TokenSequence]) -> Batch {
        let kept: Vec<&TokenSequence> = seqs.iter().filter(|s| n_contributing(s) > 0).collect();
        let len = kept.iter().map(|s| s.without_padding().len()).max().unwrap_or(0);
        let mut b = Batch {
            seqs: Vec::with_capacity(kept.len()),
            targets: Vec::with_capacity(kept.len()),
            dt: Vec::with_capacity(kept.len()),
        };
        for s in kept {
            let c = s.without_padding();
            let padded = if c.len() == len { c } else { crop_to_window(&c, len, true) };
            let t = position_targets(&padded);
            b.targets.push(t.iter().map(|x| x.map(|(c, _)| c)).collect());
            b.dt.push(t.iter().map(|x| x.map_or(0.0, |(_, d)| d)).collect());
            b.seqs.push(padded);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn n_contributing(&self) -> usize {
        self.targets.iter().flatten().flatten().count()
    }
}

/// Loss value with its gradient in the parameter layout of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub loss: f64,
    pub values: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn tensor<'a>(&'a self, state: &ModelState<T>, name: &str) -> Option<&'a [T]> {
        state.tensor_info(name).map(|t| &self.values[t.range()])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt()
    }
}

struct Compact {
    seqs: Vec<TokenSequence>,
    /// (row in the packed matrix, class, Δt)
    targets: Vec<(usize, usize, f64)>,
}

/// Padding never influences non-padding positions, so the packed pass runs on
/// the unpadded sequences.
fn compact(seqs: &[&TokenSequence]) -> Compact {
    let mut out = Compact {
        seqs: Vec::with_capacity(seqs.len()),
        targets: Vec::new(),
    };
    let mut row = 0;
    for s in seqs {
        let c = s.without_padding();
        for (p, t) in position_targets(&c).into_iter().enumerate() {
            if let Some((class, dt)) = t {
                out.targets.push((row + p, class, dt));
            }
        }
        row += c.len();
        out.seqs.push(c);
    }
    out
}

/// Sum of per-position losses and, if requested, the gradients of that sum
/// scaled by `scale`.
fn loss_sum<T: Real>(
    state: &ModelState<T>,
    c: &Compact,
    grad_scale: Option<f64>,
) -> Result<(f64, Option<Vec<T>>), TrainError> {
    let refs: Vec<&TokenSequence> = c.seqs.iter().collect();
    let tape = forward_tape(state, &refs)?;
    let k = state.config.n_predictable();
    let mut total = 0.0;
    let mut dlogits = grad_scale.map(|_| vec![T::zero(); tape.n * k]);
    let mut dz = grad_scale.map(|_| vec![T::zero(); tape.n]);
    for &(row, class, dt) in &c.targets {
        let logits = &tape.logits[row * k..(row + 1) * k];
        let mx = logits.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|v| (v.f64() - mx).exp()).sum();
        let lse = mx + sum_exp.ln();
        let z = tape.log_rate(row).f64();
        let rate = z.exp();
        total += lse - logits[class].f64() + rate * dt - z;
        if let (Some(s), Some(dl), Some(dzv)) = (grad_scale, dlogits.as_mut(), dz.as_mut()) {
            let out = &mut dl[row * k..(row + 1) * k];
            for (j, o) in out.iter_mut().enumerate() {
                let p = (logits[j].f64() - lse).exp();
                let onehot = if j == class { 1.0 } else { 0.0 };
                *o = T::of((p - onehot) * s);
            }
            dzv[row] = T::of((rate * dt - 1.0) * s);
        }
    }
    if !total.is_finite() {
        return Err(TrainError::NonFiniteLoss(total));
    }
    let grads = match (dlogits, dz) {
        (Some(dl), Some(dzv)) => Some(backward(state, &tape, &dl, &dzv)),
        _ => None,
    };
    Ok((total, grads))
}

/// Mean combined loss (cross-entropy + exponential waiting-time NLL) over the
/// contributing positions of the batch.
pub fn loss<T: Real>(state: &ModelState<T>, batch: &Batch) -> Result<f64, TrainError> {
    let refs: Vec<&TokenSequence> = batch.seqs.iter().collect();
    let c = compact(&refs);
    if c.targets.is_empty() {
        return Err(TrainError::NoContributingPositions);
    }
    let (s, _) = loss_sum(state, &c, None)?;
    Ok(s / c.targets.len() as f64)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn gradients<T: Real>(state: &ModelState<T>, batch: &Batch) -> Result<Gradients<T>, TrainError> {
    let refs: Vec<&TokenSequence> = batch.seqs.iter().collect();
    gradients_of(state, &refs)
}

fn gradients_of<T: Real>(state: &ModelState<T>, seqs: &[&TokenSequence]) -> Result<Gradients<T>, TrainError> {
    let c = compact(seqs);
    if c.targets.is_empty() {
        return Err(TrainError::NoContributingPositions);
    }
    let n = c.targets.len() as f64;
    let (s, g) = loss_sum(state, &c, Some(1.0 / n))?;
    Ok(Gradients {
        loss: s / n,
        values: g.expect("gradients requested"),
    })
}

/// Mean loss over a whole dataset, evaluated in chunks.
pub fn dataset_loss<T: Real>(state: &ModelState<T>, seqs: &[TokenSequence], chunk: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for part in seqs.chunks(chunk.max(1)) {
        let refs: Vec<&TokenSequence> = part.iter().collect();
        let c = compact(&refs);
        if c.targets.is_empty() {
            continue;
        }
        total += loss_sum(state, &c, None)?.0;
        count += c.targets.len();
    }
    if count == 0 {
        return Err(TrainError::NoContributingPositions);
    }
    Ok(total / count as f64)
}

/// Pooled MLE of a constant rate: contributing positions / total waiting time.
pub fn pooled_rate(seqs: &[TokenSequence]) -> f64 {
    let (mut n, mut t) = (0.0, 0.0);
    for s in seqs {
        for (_, dt) in position_targets(s).into_iter().flatten() {
            n += 1.0;
            t += dt;
        }
    }
    n / t.max(1.0)
}

/// Log of smoothed marginal target frequencies per predictable class.
pub fn log_class_frequencies(seqs: &[TokenSequence], k: usize) -> Vec<f64> {
    let mut counts = vec![0.5; k];
    for s in seqs {
        for (c, _) in position_targets(s).into_iter().flatten() {
            counts[c] += 1.0;
        }
    }
    let tot: f64 = counts.iter().sum();
    counts.into_iter().map(|c| (c / tot).ln()).collect()
}

struct AdamW<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    decay: Vec<bool>,
    trainable: Vec<bool>,
}

impl<T: Real> AdamW<T> {
    fn new(state: &ModelState<T>, cfg: &TrainConfig) -> Self {
        let n = state.params.len();
        let mut decay = vec![false; n];
        let mut trainable = vec![false; n];
        for t in &state.tensors {
            let r = t.range();
            decay[r.clone()].fill(t.name.ends_with(".weight"));
            trainable[r].fill(cfg.is_trainable(&t.name));
        }
        AdamW {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            decay,
            trainable,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - cfg.beta1.powi(self.t));
        let bc2 = T::of(1.0 - cfg.beta2.powi(self.t));
        let lr_t = T::of(lr);
        let wd = T::of(lr * cfg.weight_decay);
        let eps = T::of(cfg.eps);
        for i in 0..params.len() {
            if !self.trainable[i] {
                continue;
            }
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            if self.decay[i] {
                params[i] -= wd * params[i];
            }
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr_t * mh / (vh.sqrt() + eps);
        }
    }
}

/// Rescales the trainable part of the gradient to at most `max_norm`;
/// returns the norm before clipping.
fn clip(grad: &mut [f32], trainable: &[bool], max_norm: f64) -> f64 {
    let norm = grad
        .iter()
        .zip(trainable)
        .filter(|(_, t)| **t)
        .map(|(g, _)| f64::from(*g) * f64::from(*g))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iter: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelState<f32>,
    pub best_iter: usize,
    pub best_val_loss: f64,
    pub curve: Vec<CurvePoint>,
    /// Training loss of the first batch, before any update.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub clipped_steps: usize,
}

/// Writes the loss curve as CSV (`iter,train_loss,val_loss,lr`).
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("iter,train_loss,val_loss,lr\n");
    for p in curve {
        s.push_str(&format!("{},{},{},{}\n", p.iter, p.train_loss, p.val_loss, p.lr));
    }
    s
}

/// Trains from `state`, returning the parameters with the lowest validation
/// loss seen at any evaluation point (including before the first update).
pub fn train(
    mut state: ModelState<f32>,
    train_data: &[TokenSequence],
    val_data: &[TokenSequence],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train_set: Vec<&TokenSequence> = train_data.iter().filter(|s| n_contributing(s) > 0).collect();
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if !val_data.iter().any(|s| n_contributing(s) > 0) {
        return Err(TrainError::EmptyDataset("validation"));
    }
    let owned: Vec<TokenSequence> = train_set.iter().map(|s| (*s).clone()).collect();
    if cfg.init_rate_bias && cfg.is_trainable("head.rate.bias") {
        state.set_rate_bias(pooled_rate(&owned).ln());
    }
    if cfg.init_event_bias && cfg.is_trainable("head.event.bias") {
        let f = log_class_frequencies(&owned, state.config.n_predictable());
        for (b, v) in state.tensor_mut("head.event.bias")?.iter_mut().zip(f) {
            *b = v as f32;
        }
    }
    drop(owned);

    let eval_chunk = cfg.batch_size.max(64);
    let mut opt = AdamW::new(&state, cfg);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "batches"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();

    let mut curve = Vec::new();
    let mut best_val = dataset_loss(&state, val_data, eval_chunk)?;
    let mut best = state.clone();
    let mut best_iter = 0;
    let mut window = (0.0, 0usize);
    let mut initial = f64::NAN;
    let mut last_train = f64::NAN;
    let mut clipped = 0;
    curve.push(CurvePoint {
        iter: 0,
        train_loss: f64::NAN,
        val_loss: best_val,
        lr: 0.0,
    });
    progress(curve.last().unwrap());

    for iter in 0..cfg.max_iters {
        let mut batch: Vec<&TokenSequence> = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train_set[order[cursor]]);
            cursor += 1;
        }
        let mut g = gradients_of(&state, &batch).map_err(|e| match e {
            TrainError::NonFiniteLoss(l) => TrainError::DivergedLoss { iter, loss: l },
            other => other,
        })?;
        if iter == 0 {
            initial = g.loss;
        }
        if clip(&mut g.values, &opt.trainable, cfg.grad_clip) > cfg.grad_clip {
            clipped += 1;
        }
        let lr = lr_at(iter, cfg);
        opt.step(&mut state.params, &g.values, lr, cfg);
        if !state.all_finite() {
            return Err(TrainError::DivergedLoss { iter, loss: f64::NAN });
        }
        window.0 += g.loss;
        window.1 += 1;

        let done = iter + 1;
        if done % cfg.eval_interval == 0 || done == cfg.max_iters {
            let val = dataset_loss(&state, val_data, eval_chunk)?;
            if !val.is_finite() {
                return Err(TrainError::DivergedLoss { iter, loss: val });
            }
            last_train = window.0 / window.1 as f64;
            window = (0.0, 0);
            curve.push(CurvePoint {
                iter: done,
                train_loss: last_train,
                val_loss: val,
                lr,
            });
            progress(curve.last().unwrap());
            if val < best_val {
                best_val = val;
                best = state.clone();
                best_iter = done;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_iter,
        best_val_loss: best_val,
        curve,
        initial_train_loss: initial,
        final_train_loss: last_train,
        clipped_steps: clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, DEFAULT_AGE_SCALE_DAYS};
    use crate::sequence::{Flag, Mode};

    fn cfg_small(mode: Mode) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 8,
            context_len: 16,
            vocab_size: 16,
            mode,
            age_scale_days: DEFAULT_AGE_SCALE_DAYS,
        }
    }

    fn seq(tokens: &[(u32, u32, Flag, bool)]) -> TokenSequence {
        TokenSequence {
            patient_id: "p".into(),
            token_ids: tokens.iter().map(|t| t.0).collect(),
            ages: tokens.iter().map(|t| t.1).collect(),
            flags: tokens.iter().map(|t| t.2).collect(),
            target_mask: tokens.iter().map(|t| t.3).collect(),
        }
    }

    fn example() -> TokenSequence {
        use Flag::*;
        seq(&[
            (2, 0, StaticOrNoEvent, false),
            (5, 0, StaticOrNoEvent, false),
            (8, 0, StaticOrNoEvent, false),
            (12, 100, NewOnset, true),
            (1, 400, StaticOrNoEvent, false),
            (13, 500, NewOnset, true),
            (12, 600, Recurrent, false),
            (11, 900, NewOnset, true),
        ])
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig {
            max_iters: 3000,
            ..TrainConfig::default()
        };
        assert!((lr_at(1000, &cfg) - 6e-4).abs() < 1e-15);
        assert!((lr_at(999, &cfg) - 6e-4).abs() < 1e-15);
        assert!((lr_at(3000, &cfg) - 6e-5).abs() < 1e-15);
        assert!((lr_at(2000, &cfg) - 3.3e-4).abs() < 1e-12);
        assert!((lr_at(10_000, &cfg) - 6e-5).abs() < 1e-15);
        assert!((lr_at(0, &cfg) - 6e-7).abs() < 1e-15);
    }

    #[test]
    fn targets_skip_masked_tokens() {
        let t = position_targets(&example());
        let classes: Vec<Option<usize>> = t.iter().map(|x| x.map(|(c, _)| c)).collect();
        // next tokens: static, static, E(12), no-event, E(13), recurrent, death, none
        assert_eq!(classes, vec![None, None, Some(1), None, Some(2), None, Some(0), None]);
        assert_eq!(t[2].unwrap().1, 100.0);
        assert_eq!(t[4].unwrap().1, 100.0);
        assert_eq!(t[6].unwrap().1, 300.0);
    }

    #[test]
    fn padding_does_not_change_loss() {
        let st = ModelState::<f64>::init(cfg_small(Mode::AllOcc), 3).unwrap();
        let s = example();
        let a = loss(&st, &Batch::new(&[s.clone()])).unwrap();
        let mut short = s.clone();
        short.token_ids.truncate(5);
        short.ages.truncate(5);
        short.flags.truncate(5);
        short.target_mask.truncate(5);
        let b = Batch::new(&[s.clone(), short.clone()]);
        assert_eq!(b.seqs[1].len(), 8);
        let both = loss(&st, &b).unwrap();
        let only_short = loss(&st, &Batch::new(&[short])).unwrap();
        let expected = (a * 3.0 + only_short * 1.0) / 4.0;
        assert!((both - expected).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_loss() {
        // K = 2, zero weights: uniform logits, λ = 1/day, Δt = 1, target class 0.
        let mut c = cfg_small(Mode::FirstOcc);
        c.vocab_size = 13;
        let mut st = ModelState::<f64>::zeros(c).unwrap();
        st.set_rate_bias(0.0);
        use Flag::*;
        let s = seq(&[(12, 0, NewOnset, false), (11, 1, NewOnset, true)]);
        let l = loss(&st, &Batch::new(&[s])).unwrap();
        assert!((l - (2f64.ln() + 1.0)).abs() < 1e-12);
        let s0 = seq(&[(12, 5, NewOnset, false), (11, 5, NewOnset, true)]);
        let l0 = loss(&st, &Batch::new(&[s0])).unwrap();
        assert!((l0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_batch_is_an_error() {
        use Flag::*;
        let st = ModelState::<f64>::init(cfg_small(Mode::FirstOcc), 3).unwrap();
        let s = seq(&[(2, 0, StaticOrNoEvent, false), (1, 100, StaticOrNoEvent, false)]);
        let b = Batch {
            seqs: vec![s],
            targets: vec![vec![None, None]],
            dt: vec![vec![0.0, 0.0]],
        };
        assert_eq!(loss(&st, &b), Err(TrainError::NoContributingPositions));
        assert!(Batch::new(&b.seqs).is_empty());
    }

    #[test]
    fn recurrent_targets_carry_no_loss() {
        use Flag::*;
        let st = ModelState::<f64>::init(cfg_small(Mode::AllOcc), 5).unwrap();
        let base = [
            (2, 0, StaticOrNoEvent, false),
            (5, 0, StaticOrNoEvent, false),
            (8, 0, StaticOrNoEvent, false),
            (12, 100, NewOnset, true),
            (12, 200, Recurrent, false),
        ];
        let mut other = base;
        other[4].0 = 14;
        let l1 = loss(&st, &Batch::new(&[seq(&base)])).unwrap();
        let l2 = loss(&st, &Batch::new(&[seq(&other)])).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(n_contributing(&seq(&base)), 1);
        assert_eq!(position_targets(&example())[5], None);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let st = ModelState::<f64>::init(cfg_small(Mode::AllOcc), 9).unwrap();
        let b = Batch::new(&[example()]);
        let g = gradients(&st, &b).unwrap();
        let h = 1e-5;
        for idx in (0..st.params.len()).step_by(7) {
            let mut p = st.clone();
            p.params[idx] += h;
            let up = loss(&p, &b).unwrap();
            p.params[idx] -= 2.0 * h;
            let dn = loss(&p, &b).unwrap();
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g.values[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", g.values[idx]);
        }
    }

    #[test]
    fn duplicated_rows_keep_the_mean() {
        let st = ModelState::<f64>::init(cfg_small(Mode::AllOcc), 2).unwrap();
        let one = gradients(&st, &Batch::new(&[example()])).unwrap();
        let two = gradients(&st, &Batch::new(&[example(), example()])).unwrap();
        assert!((one.loss - two.loss).abs() < 1e-12);
        for (a, b) in one.values.iter().zip(&two.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_gives_equal_rows_for_unseen_classes() {
        let mut st = ModelState::<f64>::init(cfg_small(Mode::AllOcc), 4).unwrap();
        st.tensor_mut("head.event.weight").unwrap().fill(0.0);
        st.tensor_mut("head.event.bias").unwrap().fill(0.0);
        let g = gradients(&st, &Batch::new(&[example()])).unwrap();
        let w = g.tensor(&st, "head.event.weight").unwrap();
        let k = st.config.n_predictable();
        // classes 3 and 4 never appear as targets
        for r in 0..st.config.embed_dim {
            assert_eq!(w[r * k + 3], w[r * k + 4]);
        }
    }

    #[test]
    fn batch_order_invariance() {
        let st = ModelState::<f64>::init(cfg_small(Mode::AllOcc), 6).unwrap();
        let mut s2 = example();
        s2.ages.iter_mut().skip(3).for_each(|a| *a += 50);
        let a = loss(&st, &Batch::new(&[example(), s2.clone()])).unwrap();
        let b = loss(&st, &Batch::new(&[s2, example()])).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.lr_min = 1.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            warmup_iters: 10,
            max_iters: 10,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let parsed: TrainConfig = toml::from_str("max_iters = 500\nbatch_size = 8").unwrap();
        assert_eq!(parsed.max_iters, 500);
        assert_eq!(parsed.lr_max, 6e-4);
    }
}
