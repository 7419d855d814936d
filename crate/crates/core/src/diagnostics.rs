//! Top-K intersection ratio between the norm ranking of visual tokens and
//! per-layer attention rankings captured from a decoder.

use crate::tokens::top_k_indices;
use crate::{Error, Result};

/// Pre-pooled attention received by each visual token, one row per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    scores: Vec<f64>,
    layers: usize,
    tokens: usize,
}

impl AttentionDump {
    pub fn new(scores: Vec<f64>, layers: usize, tokens: usize) -> Result<Self> {
        if layers == 0 || tokens == 0 || layers.checked_mul(tokens) != Some(scores.len()) {
            return Err(Error::invalid(format!(
                "attention dump shape {layers}x{tokens} does not fit {} values",
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("attention dump has non-finite entries"));
        }
        Ok(Self {
            scores,
            layers,
            tokens,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let tokens = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != tokens) {
            return Err(Error::invalid("attention rows have differing lengths"));
        }
        Self::new(rows.concat(), rows.len(), tokens)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.scores[l * self.tokens..(l + 1) * self.tokens]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TirCurve {
    /// Overlap with each layer's own top-K.
    pub layerwise: Vec<f64>,
    /// Overlap with the union of top-K sets from layers `0..=l`.
    pub cumulative: Vec<f64>,
}

/// Top-K intersection ratios; ties in either ranking go to the lower index.
pub fn tir(norms: &[f64], attn: &AttentionDump, k: usize) -> Result<TirCurve> {
    let n = norms.len();
    if n != attn.tokens() {
        return Err(Error::invalid(format!(
            "{n} norms but attention covers {} tokens",
            attn.tokens()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("K must lie in 1..={n}, got {k}")));
    }
    if norms.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("norms contain non-finite values"));
    }

    let mut by_norm = vec![false; n];
    for i in top_k_indices(norms, k) {
        by_norm[i] = true;
    }
    let mut seen = vec![false; n];
    let mut union_hits = 0usize;
    let mut curve = TirCurve {
        layerwise: Vec::with_capacity(attn.layers()),
        cumulative: Vec::with_capacity(attn.layers()),
    };
    for l in 0..attn.layers() {
        let top = top_k_indices(attn.layer(l), k);
        let hits = top.iter().filter(|&&i| by_norm[i]).count();
        for i in top {
            if !seen[i] {
                seen[i] = true;
                union_hits += usize::from(by_norm[i]);
            }
        }
        curve.layerwise.push(hits as f64 / k as f64);
        curve.cumulative.push(union_hits as f64 / k as f64);
    }
    Ok(curve)
}

/// `round(3N/8)`, the K used for the reference analysis.
pub fn three_eighths(n: usize) -> usize {
    ((3 * n) as f64 / 8.0).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    // Scores that put the listed tokens on top.
    fn picks(n: usize, top: &[usize]) -> Vec<f64> {
        (0..n)
            .map(|i| if top.contains(&i) { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn identical_rankings() {
        let norms = vec![3.0, 1.0, 4.0, 1.5, 9.0];
        let attn =
            AttentionDump::from_rows(&[norms.iter().map(|v| v * 2.0).collect(), norms.clone()])
                .unwrap();
        let c = tir(&norms, &attn, 2).unwrap();
        assert_eq!(c.layerwise, vec![1.0, 1.0]);
        assert_eq!(c.cumulative, vec![1.0, 1.0]);
    }

    #[test]
    fn set_arithmetic_examples() {
        let norms = picks(4, &[0, 1]);
        let attn = AttentionDump::from_rows(&[picks(4, &[2, 3]), picks(4, &[0, 2])]).unwrap();
        let c = tir(&norms, &attn, 2).unwrap();
        assert_eq!(c.layerwise, vec![0.0, 0.5]);
        assert_eq!(c.cumulative, vec![0.0, 0.5]);

        let attn = AttentionDump::from_rows(&[picks(4, &[0, 2]), picks(4, &[1, 3])]).unwrap();
        let c = tir(&norms, &attn, 2).unwrap();
        assert_eq!(c.layerwise, vec![0.5, 0.5]);
        assert_eq!(c.cumulative, vec![0.5, 1.0]);
    }

    #[test]
    fn k_bounds() {
        let attn = AttentionDump::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(tir(&[1.0, 2.0], &attn, 0).is_err());
        assert!(tir(&[1.0, 2.0], &attn, 3).is_err());
        assert!(tir(&[1.0], &attn, 1).is_err());
        assert_eq!(tir(&[1.0, 2.0], &attn, 2).unwrap().layerwise, vec![1.0]);
    }

    #[test]
    fn three_eighths_of_mode_sizes() {
        assert_eq!(three_eighths(256), 96);
        assert_eq!(three_eighths(100), 38);
    }
}
