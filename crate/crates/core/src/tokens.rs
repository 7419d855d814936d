//! Embedding-matrix primitives: norms, cosine similarity, mean pairwise
//! similarity and dominant-token selection.

use std::cmp::Ordering;

use crate::parallel::map_indexed;
use crate::{Error, Result};

/// Row-major `N x D` matrix of token embeddings, one row per image patch in
/// raster order. All entries are finite and both dimensions are at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl TokenMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "token matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::invalid(format!(
                "buffer of {} values does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("rows have differing lengths"));
        }
        Self::new(rows.concat(), rows.len(), cols)
    }

    /// Widens an `f32` buffer, the storage type of tensor files.
    pub fn from_f32(data: &[f32], rows: usize, cols: usize) -> Result<Self> {
        Self::new(data.iter().map(|&v| f64::from(v)).collect(), rows, cols)
    }

    /// Narrows back to `f32`. Exact for matrices built by [`Self::from_f32`].
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    /// Token count `N`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Embedding dimension `D`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// Copies the listed rows, in the given order, into a new matrix.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &k in indices {
            if k >= self.rows {
                return Err(Error::invalid(format!(
                    "row index {k} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(k));
        }
        Self::new(data, indices.len(), self.cols)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// ℓ2-norm of every row; the selection criterion.
pub fn token_norms(tokens: &TokenMatrix) -> Vec<f64> {
    map_indexed(tokens.rows(), tokens.cols(), |k| l2_norm(tokens.row(k)))
}

/// Cosine similarity of two rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// At least one operand was the zero vector; `value` is then 0.
    pub degenerate: bool,
}

/// `a·b / (|a| |b|)`, clamped to `[-1, 1]`. A zero operand yields 0 with the
/// degenerate flag set.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "row lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in cosine operand"));
    }
    Ok(cosine_from_parts(dot(a, b), l2_norm(a), l2_norm(b)))
}

pub(crate) fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> Cosine {
    if norm_a == 0.0 || norm_b == 0.0 {
        return Cosine {
            value: 0.0,
            degenerate: true,
        };
    }
    Cosine {
        value: (dot / (norm_a * norm_b)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Mean cosine similarity over all `N(N-1)/2` unordered token pairs.
pub fn mean_pairwise_similarity(tokens: &TokenMatrix) -> Result<f64> {
    let n = tokens.rows();
    if n < 2 {
        return Err(Error::invalid(
            "mean pairwise similarity needs at least two tokens",
        ));
    }
    let norms = token_norms(tokens);
    // Per-row partial sums over j > i, then a fixed-order total.
    let partial = map_indexed(n, (n / 2) * tokens.cols(), |i| {
        let ri = tokens.row(i);
        ((i + 1)..n)
            .map(|j| cosine_from_parts(dot(ri, tokens.row(j)), norms[i], norms[j]).value)
            .sum::<f64>()
    });
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((partial.iter().sum::<f64>() / pairs).clamp(-1.0, 1.0))
}

/// Partition of token indices produced by [`select_dominant`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Ascending.
    pub kept_indices: Vec<usize>,
    /// Ascending.
    pub pruned_indices: Vec<usize>,
    pub norms: Vec<f64>,
    pub ratio: f64,
}

impl SelectionResult {
    /// Kept count `M`.
    pub fn kept(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn pruned(&self) -> usize {
        self.pruned_indices.len()
    }

    pub fn total(&self) -> usize {
        self.norms.len()
    }
}

/// `M = clamp(round(N (1 - r)), 1, N)`.
pub fn kept_count(n: usize, ratio: f64) -> usize {
    let m = (n as f64 * (1.0 - ratio)).round();
    (m.max(1.0) as usize).min(n)
}

pub(crate) fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!(
            "pruning ratio must lie in [0, 1), got {ratio}"
        )));
    }
    Ok(())
}

/// Larger score first; equal scores keep the lower index first.
pub(crate) fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Indices of the `k` largest scores (ties toward lower index), ascending.
pub(crate) fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

/// Keeps the `M` tokens with the largest ℓ2-norms.
pub fn select_dominant(tokens: &TokenMatrix, ratio: f64) -> Result<SelectionResult> {
    check_ratio(ratio)?;
    let norms = token_norms(tokens);
    let m = kept_count(tokens.rows(), ratio);
    let kept_indices = top_k_indices(&norms, m);

    let mut is_kept = vec![false; norms.len()];
    for &k in &kept_indices {
        is_kept[k] = true;
    }
    let pruned_indices = (0..norms.len()).filter(|&k| !is_kept[k]).collect();

    Ok(SelectionResult {
        kept_indices,
        pruned_indices,
        norms,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> TokenMatrix {
        TokenMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn norms_of_simple_rows() {
        let t = matrix(&[&[3.0, 4.0, 0.0, 0.0], &[0.0; 4], &[1.0, 1.0, 1.0, 1.0]]);
        assert_eq!(token_norms(&t), vec![5.0, 0.0, 2.0]);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(TokenMatrix::new(vec![1.0, f64::NAN], 1, 2).is_err());
        assert!(TokenMatrix::new(vec![f64::INFINITY], 1, 1).is_err());
        assert!(TokenMatrix::new(vec![], 0, 3).is_err());
        assert!(TokenMatrix::new(vec![1.0; 5], 2, 3).is_err());
        assert!(TokenMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let c = |a: &[f64], b: &[f64]| cosine_similarity(a, b).unwrap().value;
        assert_eq!(c(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(c(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((c(&[3.0, 4.0], &[4.0, 3.0]) - 0.96).abs() < 1e-15);
    }

    #[test]
    fn cosine_with_zero_row_is_flagged() {
        let c = cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(c.degenerate);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_similarity(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn mean_similarity_examples() {
        let same = matrix(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert!((mean_pairwise_similarity(&same).unwrap() - 1.0).abs() < 1e-12);

        let e = matrix(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert!((mean_pairwise_similarity(&e).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let ortho = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(mean_pairwise_similarity(&ortho).unwrap(), 0.0);

        assert!(mean_pairwise_similarity(&matrix(&[&[1.0]])).is_err());
    }

    #[test]
    fn selection_examples() {
        let t = matrix(&[&[3.0, 4.0], &[1.0, 0.0], &[0.0, 2.0]]);
        let sel = select_dominant(&t, 1.0 / 3.0).unwrap();
        assert_eq!(sel.kept(), 2);
        assert_eq!(sel.kept_indices, vec![0, 2]);
        assert_eq!(sel.pruned_indices, vec![1]);

        let all = select_dominant(&t, 0.0).unwrap();
        assert_eq!(all.kept_indices, vec![0, 1, 2]);
        assert!(all.pruned_indices.is_empty());

        let tie = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(select_dominant(&tie, 0.5).unwrap().kept_indices, vec![0]);
    }

    #[test]
    fn selection_rejects_bad_ratio() {
        let t = matrix(&[&[1.0]]);
        for r in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(select_dominant(&t, r).is_err(), "ratio {r}");
        }
    }

    #[test]
    fn kept_count_matches_mode_sizes() {
        assert_eq!(kept_count(256, 0.25), 192);
        assert_eq!(kept_count(400, 0.25), 300);
        assert_eq!(kept_count(64, 0.25), 48);
        assert_eq!(kept_count(100, 0.25), 75);
        assert_eq!(kept_count(3, 0.99), 1);
    }

    #[test]
    fn gather_checks_bounds() {
        let t = matrix(&[&[1.0], &[2.0]]);
        assert_eq!(t.gather(&[1, 0]).unwrap().as_slice(), &[2.0, 1.0]);
        assert!(t.gather(&[2]).is_err());
    }
}
