//! Continuous-age encoding and the causal/same-time attention mask.

use crate::sequence::Flag;

use super::ModelError;

pub const DEFAULT_AGE_SCALE_DAYS: f64 = 36525.0;

/// Frequencies `1 / s^(2i/d)` for `i in 0..d/2`.
pub fn age_frequencies(embed_dim: usize, age_scale_days: f64) -> Vec<f64> {
    (0..embed_dim / 2)
        .map(|i| age_scale_days.powf(-(2.0 * i as f64) / embed_dim as f64))
        .collect()
}

/// Sinusoidal encoding of an age in days: sin on even, cos on odd components.
pub fn age_encoding(age_days: f64, embed_dim: usize, age_scale_days: f64) -> Vec<f64> {
    assert!(embed_dim % 2 == 0, "embed_dim must be even");
    let mut out = vec![0.0; embed_dim];
    for (i, w) in age_frequencies(embed_dim, age_scale_days).into_iter().enumerate() {
        let a = age_days * w;
        out[2 * i] = a.sin();
        out[2 * i + 1] = a.cos();
    }
    out
}

/// `m[j][i]` is true when position `j` may attend to position `i`.
pub fn attention_mask(ages: &[u32], flags: &[Flag]) -> Result<Vec<Vec<bool>>, ModelError> {
    attention_mask_padded(ages, flags, &vec![false; ages.len()])
}

/// As [`attention_mask`], with padding positions isolated: they see only
/// themselves and nobody sees them.
pub fn attention_mask_padded(
    ages: &[u32],
    flags: &[Flag],
    padding: &[bool],
) -> Result<Vec<Vec<bool>>, ModelError> {
    let n = ages.len();
    assert_eq!(flags.len(), n, "flags length");
    assert_eq!(padding.len(), n, "padding length");
    if let Some(p) = ages.windows(2).position(|w| w[1] < w[0]) {
        return Err(ModelError::AgesNotSorted { position: p + 1 });
    }
    let mut m = vec![vec![false; n]; n];
    for j in 0..n {
        m[j][j] = true;
        if padding[j] {
            continue;
        }
        for i in 0..j {
            if padding[i] {
                continue;
            }
            let static_exempt = flags[i] == Flag::StaticOrNoEvent && ages[i] == 0;
            m[j][i] = ages[i] < ages[j] || static_exempt;
        }
    }
    Ok(m)
}
