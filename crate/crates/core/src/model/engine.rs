//! Packed forward pass with an activation tape, and its exact reverse pass.
//!
//! A batch is laid out as one `N×D` matrix of token rows (all sequences
//! concatenated), so every linear layer is a single GEMM. Attention runs per
//! sequence and per head under that sequence's mask.

use crate::sequence::TokenSequence;

use super::encoding::{age_frequencies, attention_mask_padded};
use super::real::{matmul, Real};
use super::{Ix, ModelError, ModelState, LOG_RATE_FLOOR};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) struct LnTape<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub(crate) struct LayerTape<T> {
    ln1: LnTape<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    /// Attention weights per (segment, head), row-major `L×L`.
    probs: Vec<Vec<T>>,
    attn: Vec<T>,
    ln2: LnTape<T>,
    m: Vec<T>,
    h: Vec<T>,
    g: Vec<T>,
}

pub(crate) struct Tape<T> {
    pub n: usize,
    pub segs: Vec<(usize, usize)>,
    masks: Vec<Vec<bool>>,
    ids: Vec<usize>,
    flags: Vec<usize>,
    layers: Vec<LayerTape<T>>,
    lnf: LnTape<T>,
    xf: Vec<T>,
    /// `N×K` event logits.
    pub logits: Vec<T>,
    /// Log-rate head output before the floor.
    pub z_raw: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn log_rate(&self, row: usize) -> T {
        self.z_raw[row].max(T::of(LOG_RATE_FLOOR))
    }
}

fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], n: usize, d: usize) -> (Vec<T>, LnTape<T>) {
    let mut out = vec![T::zero(); n * d];
    let mut xhat = vec![T::zero(); n * d];
    let mut rstd = vec![T::zero(); n];
    let dn = T::of(d as f64);
    let eps = T::of(LN_EPS);
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[r * d + c] = xh;
            out[r * d + c] = xh * gamma[c] + beta[c];
        }
    }
    (out, LnTape { xhat, rstd })
}

/// Accumulates parameter gradients and returns `dx`.
fn layer_norm_back<T: Real>(
    dy: &[T],
    tape: &LnTape<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    n: usize,
    d: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); n * d];
    let dn = T::of(d as f64);
    let mut dxh = vec![T::zero(); d];
    for r in 0..n {
        let xh = &tape.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for c in 0..d {
            dgamma[c] += g[c] * xh[c];
            dbeta[c] += g[c];
            dxh[c] = g[c] * gamma[c];
            mean_dxh += dxh[c];
            mean_dxh_xh += dxh[c] * xh[c];
        }
        mean_dxh = mean_dxh / dn;
        mean_dxh_xh = mean_dxh_xh / dn;
        let rs = tape.rstd[r];
        for c in 0..d {
            dx[r * d + c] = rs * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
        }
    }
    dx
}

fn add_bias<T: Real>(y: &mut [T], b: &[T]) {
    let w = b.len();
    for row in y.chunks_mut(w) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += *bb;
        }
    }
}

fn col_sum_into<T: Real>(dy: &[T], db: &mut [T]) {
    let w = db.len();
    for row in dy.chunks(w) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += *v;
        }
    }
}

/// `y = x·W + b` with `W` stored `[in, out]`.
fn linear<T: Real>(x: &[T], w: &[T], b: &[T], n: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); n * dout];
    matmul(n, din, dout, x, false, w, false, &mut y, T::zero());
    add_bias(&mut y, b);
    y
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy`, returns `dx = dy·Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn linear_back<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    n: usize,
    din: usize,
    dout: usize,
) -> Vec<T> {
    matmul(din, n, dout, x, true, dy, false, dw, T::one());
    col_sum_into(dy, db);
    let mut dx = vec![T::zero(); n * din];
    matmul(n, dout, din, dy, false, w, true, &mut dx, T::zero());
    dx
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// Validates a sequence against the model's limits.
pub(crate) fn check_input<T: Real>(state: &ModelState<T>, seq: &TokenSequence) -> Result<(), ModelError> {
    let cfg = &state.config;
    if seq.len() > cfg.context_len {
        return Err(ModelError::SequenceTooLong {
            len: seq.len(),
            max: cfg.context_len,
        });
    }
    if let Some(&id) = seq.token_ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::IdOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

pub(crate) fn forward_tape<T: Real>(
    state: &ModelState<T>,
    seqs: &[&TokenSequence],
) -> Result<Tape<T>, ModelError> {
    let cfg = &state.config;
    let ix: &Ix = &state.ix;
    let p = &state.params;
    let d = cfg.embed_dim;
    let nh = cfg.n_heads;
    let hd = d / nh;
    let k_out = cfg.n_predictable();

    let mut segs = Vec::with_capacity(seqs.len());
    let mut masks = Vec::with_capacity(seqs.len());
    let mut ids = Vec::new();
    let mut flags = Vec::new();
    let mut ages = Vec::new();
    for s in seqs {
        check_input(state, s)?;
        let m = attention_mask_padded(&s.ages, &s.flags, &s.padding_mask())?;
        segs.push((ids.len(), s.len()));
        masks.push(m.into_iter().flatten().collect::<Vec<bool>>());
        ids.extend(s.token_ids.iter().map(|&t| t as usize));
        flags.extend(s.flags.iter().map(|f| f.index()));
        ages.extend(s.ages.iter().copied());
    }
    let n = ids.len();

    // embeddings
    let freqs = age_frequencies(d, cfg.age_scale_days);
    let tok = &p[ix.tok.clone()];
    let mut x = vec![T::zero(); n * d];
    for r in 0..n {
        let row = &mut x[r * d..(r + 1) * d];
        let e = &tok[ids[r] * d..(ids[r] + 1) * d];
        for (i, w) in freqs.iter().enumerate() {
            let a = ages[r] as f64 * w;
            row[2 * i] = e[2 * i] + T::of(a.sin());
            row[2 * i + 1] = e[2 * i + 1] + T::of(a.cos());
        }
        if let Some(fr) = &ix.flag {
            let fe = &p[fr.clone()][flags[r] * d..(flags[r] + 1) * d];
            for (v, f) in row.iter_mut().zip(fe) {
                *v += *f;
            }
        }
    }

    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for b in &ix.blocks {
        let (a, ln1) = layer_norm(&x, &p[b.ln1_g.clone()], &p[b.ln1_b.clone()], n, d);
        let qkv = linear(&a, &p[b.qkv_w.clone()], &p[b.qkv_b.clone()], n, d, 3 * d);
        let mut attn = vec![T::zero(); n * d];
        let mut probs = Vec::with_capacity(segs.len() * nh);
        for (si, &(start, len)) in segs.iter().enumerate() {
            let mask = &masks[si];
            for h in 0..nh {
                let mut pm = vec![T::zero(); len * len];
                for j in 0..len {
                    let q = &qkv[(start + j) * 3 * d + h * hd..][..hd];
                    let mut mx = T::neg_infinity();
                    for i in 0..len {
                        if mask[j * len + i] {
                            let kk = &qkv[(start + i) * 3 * d + d + h * hd..][..hd];
                            let s = q.iter().zip(kk).map(|(x, y)| *x * *y).sum::<T>() * scale;
                            pm[j * len + i] = s;
                            if s > mx {
                                mx = s;
                            }
                        }
                    }
                    let mut tot = T::zero();
                    for i in 0..len {
                        if mask[j * len + i] {
                            let e = (pm[j * len + i] - mx).exp();
                            pm[j * len + i] = e;
                            tot += e;
                        }
                    }
                    let out = &mut attn[(start + j) * d + h * hd..][..hd];
                    for i in 0..len {
                        if mask[j * len + i] {
                            let w = pm[j * len + i] / tot;
                            pm[j * len + i] = w;
                            let v = &qkv[(start + i) * 3 * d + 2 * d + h * hd..][..hd];
                            for (o, vv) in out.iter_mut().zip(v) {
                                *o += w * *vv;
                            }
                        }
                    }
                }
                probs.push(pm);
            }
        }
        let proj = linear(&attn, &p[b.proj_w.clone()], &p[b.proj_b.clone()], n, d, d);
        for (xv, pv) in x.iter_mut().zip(&proj) {
            *xv += *pv;
        }
        let (m, ln2) = layer_norm(&x, &p[b.ln2_g.clone()], &p[b.ln2_b.clone()], n, d);
        let h = linear(&m, &p[b.fc_w.clone()], &p[b.fc_b.clone()], n, d, 4 * d);
        let g: Vec<T> = h.iter().map(|&v| gelu(v)).collect();
        let out = linear(&g, &p[b.out_w.clone()], &p[b.out_b.clone()], n, 4 * d, d);
        for (xv, ov) in x.iter_mut().zip(&out) {
            *xv += *ov;
        }
        layers.push(LayerTape {
            ln1,
            a,
            qkv,
            probs,
            attn,
            ln2,
            m,
            h,
            g,
        });
    }
    let (xf, lnf) = layer_norm(&x, &p[ix.lnf_g.clone()], &p[ix.lnf_b.clone()], n, d);
    let logits = linear(&xf, &p[ix.ev_w.clone()], &p[ix.ev_b.clone()], n, d, k_out);
    let z_raw = linear(&xf, &p[ix.rate_w.clone()], &p[ix.rate_b.clone()], n, d, 1);
    Ok(Tape {
        n,
        segs,
        masks,
        ids,
        flags,
        layers,
        lnf,
        xf,
        logits,
        z_raw,
    })
}

/// Reverse pass. `dlogits` is `∂L/∂logits` (`N×K`); `dz` is `∂L/∂z` for the
/// floored log-rate. Returns gradients in the parameter layout.
pub(crate) fn backward<T: Real>(state: &ModelState<T>, tape: &Tape<T>, dlogits: &[T], dz: &[T]) -> Vec<T> {
    let cfg = &state.config;
    let ix = &state.ix;
    let p = &state.params;
    let d = cfg.embed_dim;
    let nh = cfg.n_heads;
    let hd = d / nh;
    let k_out = cfg.n_predictable();
    let n = tape.n;
    let mut grad = vec![T::zero(); p.len()];

    let floor = T::of(LOG_RATE_FLOOR);
    let dz_raw: Vec<T> = dz
        .iter()
        .zip(&tape.z_raw)
        .map(|(&g, &z)| if z < floor { T::zero() } else { g })
        .collect();

    let mut dxf = {
        let (dw, db) = split2(&mut grad, &ix.ev_w, &ix.ev_b);
        linear_back(&tape.xf, &p[ix.ev_w.clone()], dlogits, dw, db, n, d, k_out)
    };
    {
        let (dw, db) = split2(&mut grad, &ix.rate_w, &ix.rate_b);
        let dx2 = linear_back(&tape.xf, &p[ix.rate_w.clone()], &dz_raw, dw, db, n, d, 1);
        for (a, b) in dxf.iter_mut().zip(&dx2) {
            *a += *b;
        }
    }
    let mut dx = {
        let (dg, db) = split2(&mut grad, &ix.lnf_g, &ix.lnf_b);
        layer_norm_back(&dxf, &tape.lnf, &p[ix.lnf_g.clone()], dg, db, n, d)
    };

    let scale = T::of(1.0 / (hd as f64).sqrt());
    for (b, lt) in ix.blocks.iter().zip(&tape.layers).rev() {
        // feed-forward
        let dg = {
            let (dw, db) = split2(&mut grad, &b.out_w, &b.out_b);
            linear_back(&lt.g, &p[b.out_w.clone()], &dx, dw, db, n, 4 * d, d)
        };
        let dh: Vec<T> = dg.iter().zip(&lt.h).map(|(&g, &h)| g * gelu_grad(h)).collect();
        let dm = {
            let (dw, db) = split2(&mut grad, &b.fc_w, &b.fc_b);
            linear_back(&lt.m, &p[b.fc_w.clone()], &dh, dw, db, n, d, 4 * d)
        };
        let dres = {
            let (dgm, dbt) = split2(&mut grad, &b.ln2_g, &b.ln2_b);
            layer_norm_back(&dm, &lt.ln2, &p[b.ln2_g.clone()], dgm, dbt, n, d)
        };
        for (a, r) in dx.iter_mut().zip(&dres) {
            *a += *r;
        }

        // attention
        let dattn = {
            let (dw, db) = split2(&mut grad, &b.proj_w, &b.proj_b);
            linear_back(&lt.attn, &p[b.proj_w.clone()], &dx, dw, db, n, d, d)
        };
        let mut dqkv = vec![T::zero(); n * 3 * d];
        let qkv = &lt.qkv;
        for (si, &(start, len)) in tape.segs.iter().enumerate() {
            let mask = &tape.masks[si];
            for h in 0..nh {
                let pm = &lt.probs[si * nh + h];
                let mut dp = vec![T::zero(); len];
                for j in 0..len {
                    let dout = &dattn[(start + j) * d + h * hd..][..hd];
                    let mut dot_pdp = T::zero();
                    for i in 0..len {
                        if mask[j * len + i] {
                            let v = &qkv[(start + i) * 3 * d + 2 * d + h * hd..][..hd];
                            let g = dout.iter().zip(v).map(|(x, y)| *x * *y).sum::<T>();
                            dp[i] = g;
                            dot_pdp += pm[j * len + i] * g;
                            let w = pm[j * len + i];
                            let dv = &mut dqkv[(start + i) * 3 * d + 2 * d + h * hd..][..hd];
                            for (a, o) in dv.iter_mut().zip(dout) {
                                *a += w * *o;
                            }
                        }
                    }
                    for i in 0..len {
                        if mask[j * len + i] {
                            let ds = pm[j * len + i] * (dp[i] - dot_pdp) * scale;
                            let (qrow, krow) = ((start + j) * 3 * d + h * hd, (start + i) * 3 * d + d + h * hd);
                            for t in 0..hd {
                                let kv = qkv[krow + t];
                                let qv = qkv[qrow + t];
                                dqkv[qrow + t] += ds * kv;
                                dqkv[krow + t] += ds * qv;
                            }
                        }
                    }
                }
            }
        }
        let da = {
            let (dw, db) = split2(&mut grad, &b.qkv_w, &b.qkv_b);
            linear_back(&lt.a, &p[b.qkv_w.clone()], &dqkv, dw, db, n, d, 3 * d)
        };
        let dres = {
            let (dgm, dbt) = split2(&mut grad, &b.ln1_g, &b.ln1_b);
            layer_norm_back(&da, &lt.ln1, &p[b.ln1_g.clone()], dgm, dbt, n, d)
        };
        for (a, r) in dx.iter_mut().zip(&dres) {
            *a += *r;
        }
    }

    // embeddings
    for r in 0..n {
        let row = &dx[r * d..(r + 1) * d];
        let t0 = ix.tok.start + tape.ids[r] * d;
        for (g, v) in grad[t0..t0 + d].iter_mut().zip(row) {
            *g += *v;
        }
        if let Some(fr) = &ix.flag {
            let f0 = fr.start + tape.flags[r] * d;
            for (g, v) in grad[f0..f0 + d].iter_mut().zip(row) {
                *g += *v;
            }
        }
    }
    grad
}

/// Two disjoint mutable views into the gradient buffer.
fn split2<'a, T>(
    buf: &'a mut [T],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.end <= b.start || b.end <= a.start, "ranges overlap");
    if a.start < b.start {
        let (lo, hi) = buf.split_at_mut(b.start);
        (&mut lo[a.clone()], &mut hi[..b.len()])
    } else {
        let (lo, hi) = buf.split_at_mut(a.start);
        (&mut hi[..a.len()], &mut lo[b.clone()])
    }
}
