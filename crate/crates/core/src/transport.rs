//! Dustbin-augmented optimal-transport matching between kept and
//! proposed-to-prune tokens.
//!
//! Scores are cosine similarities. One extra row and column filled with a
//! constant `z` act as dustbins so that a token with no good partner can be
//! left unmatched. The entropy-regularized problem is solved with log-space
//! Sinkhorn iterations over the marginals
//!
//! ```text
//! log mu = [0; M] ++ [ln(N - M)]      (kept rows, then the dustbin row)
//! log nu = [0; N - M] ++ [ln M]       (pruned columns, then the dustbin column)
//! ```
//!
//! and the dustbins are dropped from the resulting plan before merging.

use crate::parallel::map_indexed;
use crate::tokens::{cosine_from_parts, SelectionResult, TokenMatrix};
use crate::{Error, Result};

/// Cosine scores between kept tokens (rows) and pruned tokens (columns),
/// both in ascending original-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl ScoreMatrix {
    pub fn new(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(Error::invalid(format!(
                "score matrix shape {rows}x{cols} does not fit {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("score matrix has non-finite entries"));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("score rows have differing lengths"));
        }
        Self::new(rows.concat(), rows.len(), cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Scores with the dustbin row and column appended; shape `(M+1) x (N-M+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedScoreMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    dustbin: f64,
}

impl AugmentedScoreMatrix {
    /// Row count including the dustbin row.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Column count including the dustbin column.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dustbin(&self) -> f64 {
        self.dustbin
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub iterations: usize,
    /// Dustbin score `z`.
    pub dustbin_score: f64,
    /// Scores are divided by this before exponentiation.
    pub temperature: f64,
    /// Merge strength `alpha`.
    pub merge_strength: f64,
    /// Stop once the augmented row residual drops below this value.
    pub early_exit: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            dustbin_score: 0.2,
            temperature: 1.0,
            merge_strength: 0.1,
            early_exit: None,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("sinkhorn needs at least one iteration"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if !self.dustbin_score.is_finite() {
            return Err(Error::invalid("dustbin score must be finite"));
        }
        if !(self.merge_strength.is_finite() && self.merge_strength >= 0.0) {
            return Err(Error::invalid(format!(
                "merge strength must be non-negative, got {}",
                self.merge_strength
            )));
        }
        if let Some(tol) = self.early_exit {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(Error::invalid("early-exit threshold must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Coupling between kept (rows) and pruned (columns) tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Augmented plan, row-major `(M+1) x (N-M+1)`, dustbins included.
    augmented: Vec<f64>,
    kept: usize,
    pruned: usize,
    /// Row sums of the dustbin-free plan; length `M`.
    pub row_mass: Vec<f64>,
    /// Column sums of the dustbin-free plan; length `N - M`.
    pub col_mass: Vec<f64>,
    pub iterations: usize,
    /// Largest absolute marginal violation of the augmented plan.
    pub converged_residual: f64,
}

impl TransportPlan {
    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn pruned(&self) -> usize {
        self.pruned
    }

    /// Entry of the dustbin-free plan.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.kept && j < self.pruned);
        self.augmented[i * (self.pruned + 1) + j]
    }

    /// Row `i` of the dustbin-free plan.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (self.pruned + 1);
        &self.augmented[start..start + self.pruned]
    }

    /// Entry of the augmented plan; `i == M` or `j == N - M` addresses a dustbin.
    pub fn augmented(&self, i: usize, j: usize) -> f64 {
        self.augmented[i * (self.pruned + 1) + j]
    }

    /// Row sums of the augmented plan.
    pub fn augmented_row_sums(&self) -> Vec<f64> {
        self.augmented
            .chunks_exact(self.pruned + 1)
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Column sums of the augmented plan.
    pub fn augmented_col_sums(&self) -> Vec<f64> {
        let cols = self.pruned + 1;
        (0..cols)
            .map(|j| (0..=self.kept).map(|i| self.augmented[i * cols + j]).sum())
            .collect()
    }
}

/// Cosine scores between every kept and every pruned token.
pub fn build_scores(tokens: &TokenMatrix, sel: &SelectionResult) -> Result<ScoreMatrix> {
    if sel.total() != tokens.rows() || sel.kept() + sel.pruned() != tokens.rows() {
        return Err(Error::invalid(
            "selection does not partition the token matrix",
        ));
    }
    if sel.pruned() == 0 {
        return Err(Error::EmptyPruneSet);
    }
    if sel.kept() == 0 {
        return Err(Error::invalid("selection kept no tokens"));
    }
    let (kept, pruned) = (&sel.kept_indices, &sel.pruned_indices);
    let rows = map_indexed(kept.len(), pruned.len() * tokens.cols(), |i| {
        let ki = kept[i];
        let a = tokens.row(ki);
        pruned
            .iter()
            .map(|&pj| {
                let dot = a.iter().zip(tokens.row(pj)).map(|(x, y)| x * y).sum();
                cosine_from_parts(dot, sel.norms[ki], sel.norms[pj]).value
            })
            .collect::<Vec<f64>>()
    });
    ScoreMatrix::new(rows.concat(), kept.len(), pruned.len())
}

/// Appends a dustbin row and column filled with `z`.
pub fn augment(scores: &ScoreMatrix, z: f64) -> AugmentedScoreMatrix {
    let (rows, cols) = (scores.rows + 1, scores.cols + 1);
    let mut data = Vec::with_capacity(rows * cols);
    for r in scores.data.chunks_exact(scores.cols) {
        data.extend_from_slice(r);
        data.push(z);
    }
    data.resize(rows * cols, z);
    AugmentedScoreMatrix {
        data,
        rows,
        cols,
        dustbin: z,
    }
}

/// Max-shifted log-sum-exp.
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn ensure_finite(values: &[f64], what: &str, iteration: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalFailure(format!(
            "non-finite {what} potential after iteration {iteration}"
        )))
    }
}

fn max_row_violation(plan: &[f64], cols: usize, log_mu: &[f64]) -> f64 {
    plan.chunks_exact(cols)
        .zip(log_mu)
        .map(|(r, lm)| (r.iter().sum::<f64>() - lm.exp()).abs())
        .fold(0.0, f64::max)
}

/// Log-space Sinkhorn on the augmented scores.
///
/// Each iteration updates the row potentials `u` and then the column
/// potentials `v`; the final column update makes the augmented column sums
/// match `nu` to rounding error.
pub fn sinkhorn(scores: &AugmentedScoreMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let (rows, cols) = (scores.rows, scores.cols);
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(
            "augmented score matrix needs at least one kept and one pruned token",
        ));
    }
    if scores.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "augmented score matrix has non-finite entries",
        ));
    }
    let (kept, pruned) = (rows - 1, cols - 1);

    let z: Vec<f64> = scores.data.iter().map(|s| s / cfg.temperature).collect();
    let mut zt = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            zt[j * rows + i] = z[i * cols + j];
        }
    }

    let mut log_mu = vec![0.0; rows];
    log_mu[kept] = (pruned as f64).ln();
    let mut log_nu = vec![0.0; cols];
    log_nu[pruned] = (kept as f64).ln();

    let mut u = vec![0.0; rows];
    let mut v = vec![0.0; cols];
    let mut performed = 0;
    for t in 1..=cfg.iterations {
        u = map_indexed(rows, cols, |i| {
            let zi = &z[i * cols..(i + 1) * cols];
            log_mu[i] - log_sum_exp(zi.iter().zip(&v).map(|(a, b)| a + b))
        });
        ensure_finite(&u, "row", t)?;
        v = map_indexed(cols, rows, |j| {
            let zj = &zt[j * rows..(j + 1) * rows];
            log_nu[j] - log_sum_exp(zj.iter().zip(&u).map(|(a, b)| a + b))
        });
        ensure_finite(&v, "column", t)?;
        performed = t;

        if let Some(tol) = cfg.early_exit {
            if t < cfg.iterations
                && max_row_violation(&exp_plan(&z, &u, &v, cols), cols, &log_mu) < tol
            {
                break;
            }
        }
    }

    let augmented = exp_plan(&z, &u, &v, cols);
    if augmented.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericalFailure("transport plan overflowed".into()));
    }

    let plan = TransportPlan {
        augmented,
        kept,
        pruned,
        row_mass: Vec::new(),
        col_mass: Vec::new(),
        iterations: performed,
        converged_residual: 0.0,
    };
    let row_sums = plan.augmented_row_sums();
    let col_sums = plan.augmented_col_sums();
    let violation = |sums: &[f64], log_m: &[f64]| {
        sums.iter()
            .zip(log_m)
            .map(|(s, lm)| (s - lm.exp()).abs())
            .fold(0.0, f64::max)
    };
    let converged_residual = violation(&row_sums, &log_mu).max(violation(&col_sums, &log_nu));
    let row_mass = (0..kept).map(|i| plan.row(i).iter().sum()).collect();
    let col_mass = (0..pruned)
        .map(|j| (0..kept).map(|i| plan.get(i, j)).sum())
        .collect();

    Ok(TransportPlan {
        row_mass,
        col_mass,
        converged_residual,
        ..plan
    })
}

fn exp_plan(z: &[f64], u: &[f64], v: &[f64], cols: usize) -> Vec<f64> {
    z.chunks_exact(cols)
        .zip(u)
        .flat_map(|(zi, ui)| zi.iter().zip(v).map(move |(zij, vj)| (zij + ui + vj).exp()))
        .collect()
}

/// Folds pruned tokens into kept tokens: `kept_i + alpha * sum_j P_ij pruned_j`.
///
/// Output rows follow the ascending original index of the kept tokens. With
/// `alpha == 0` the kept rows are returned bit-for-bit.
pub fn merge(
    tokens: &TokenMatrix,
    sel: &SelectionResult,
    plan: &TransportPlan,
    alpha: f64,
) -> Result<TokenMatrix> {
    if sel.total() != tokens.rows() {
        return Err(Error::invalid(
            "selection was made on a different token matrix",
        ));
    }
    if plan.kept() != sel.kept() || plan.pruned() != sel.pruned() {
        return Err(Error::invalid(format!(
            "plan shape {}x{} does not match selection {}x{}",
            plan.kept(),
            plan.pruned(),
            sel.kept(),
            sel.pruned()
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "merge strength must be non-negative, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return tokens.gather(&sel.kept_indices);
    }

    let dim = tokens.cols();
    let rows = map_indexed(sel.kept(), sel.pruned() * dim, |i| {
        let mut absorbed = vec![0.0; dim];
        for (&pj, &weight) in sel.pruned_indices.iter().zip(plan.row(i)) {
            for (acc, x) in absorbed.iter_mut().zip(tokens.row(pj)) {
                *acc += weight * x;
            }
        }
        tokens
            .row(sel.kept_indices[i])
            .iter()
            .zip(&absorbed)
            .map(|(k, a)| k + alpha * a)
            .collect::<Vec<f64>>()
    });
    TokenMatrix::new(rows.concat(), sel.kept(), dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::select_dominant;

    fn low_temp(z: f64) -> SinkhornConfig {
        SinkhornConfig {
            dustbin_score: z,
            temperature: 0.01,
            ..SinkhornConfig::default()
        }
    }

    fn selection(kept: Vec<usize>, pruned: Vec<usize>, tokens: &TokenMatrix) -> SelectionResult {
        SelectionResult {
            kept_indices: kept,
            pruned_indices: pruned,
            norms: crate::tokens::token_norms(tokens),
            ratio: 0.0,
        }
    }

    #[test]
    fn score_examples() {
        let t = TokenMatrix::from_rows(&[vec![3.0, 4.0], vec![4.0, 3.0], vec![0.0, 5.0]]).unwrap();
        let sel = selection(vec![0], vec![1, 2], &t);
        let s = build_scores(&t, &sel).unwrap();
        assert_eq!((s.rows(), s.cols()), (1, 2));
        assert!((s.get(0, 0) - 0.96).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.8).abs() < 1e-15);

        let same = TokenMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            build_scores(&same, &selection(vec![0], vec![1], &same))
                .unwrap()
                .get(0, 0),
            1.0
        );
        let ortho = TokenMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            build_scores(&ortho, &selection(vec![0], vec![1], &ortho))
                .unwrap()
                .get(0, 0),
            0.0
        );
    }

    #[test]
    fn empty_prune_set_is_reported() {
        let t = TokenMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let sel = select_dominant(&t, 0.0).unwrap();
        assert!(matches!(build_scores(&t, &sel), Err(Error::EmptyPruneSet)));
    }

    #[test]
    fn augment_examples() {
        let a = augment(&ScoreMatrix::from_rows(&[vec![0.5]]).unwrap(), 0.2);
        assert_eq!(a.data, vec![0.5, 0.2, 0.2, 0.2]);

        let s = ScoreMatrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]]).unwrap();
        let a = augment(&s, 0.0);
        assert_eq!((a.rows(), a.cols()), (3, 4));
        for i in 0..3 {
            for j in 0..4 {
                let want = if i < 2 && j < 3 { s.get(i, j) } else { 0.0 };
                assert_eq!(a.get(i, j), want);
            }
        }

        let a = augment(&ScoreMatrix::from_rows(&[vec![1.0]]).unwrap(), 1.0);
        assert_eq!(a.data, vec![1.0; 4]);
    }

    #[test]
    fn symmetric_instance_gives_half_mass() {
        let a = augment(&ScoreMatrix::from_rows(&[vec![0.3]]).unwrap(), 0.3);
        let plan = sinkhorn(&a, &SinkhornConfig::default()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((plan.augmented(i, j) - 0.5).abs() < 1e-15);
            }
        }
        assert!((plan.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn low_temperature_identity() {
        // The row deficit decays like 1/(2T) here, so 100 iterations leave 5e-3.
        let s = ScoreMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cfg = SinkhornConfig {
            iterations: 1000,
            ..low_temp(0.0)
        };
        let plan = sinkhorn(&augment(&s, 0.0), &cfg).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (plan.get(i, j) - want).abs() < 1e-3,
                    "P[{i}][{j}] = {}",
                    plan.get(i, j)
                );
            }
        }
    }

    #[test]
    fn column_marginals_hold_after_final_update() {
        let s = ScoreMatrix::from_rows(&[
            vec![0.9, -0.2, 0.4, 0.1, 0.0],
            vec![0.3, 0.8, -0.7, 0.2, 0.5],
            vec![-0.1, 0.6, 0.2, 0.95, -0.4],
        ])
        .unwrap();
        let plan = sinkhorn(&augment(&s, 0.2), &SinkhornConfig::default()).unwrap();
        let cols = plan.augmented_col_sums();
        for (j, c) in cols.iter().enumerate() {
            let want = if j < 5 { 1.0 } else { 3.0 };
            assert!((c - want).abs() <= 1e-12);
        }
        assert!(plan.converged_residual <= 1e-6);
        assert_eq!(plan.iterations, 100);
    }

    #[test]
    fn early_exit_stays_close() {
        let s = ScoreMatrix::from_rows(&[vec![0.9, 0.1, 0.4], vec![0.2, 0.7, 0.3]]).unwrap();
        let full = sinkhorn(&augment(&s, 0.2), &SinkhornConfig::default()).unwrap();
        let cfg = SinkhornConfig {
            early_exit: Some(1e-12),
            ..SinkhornConfig::default()
        };
        let early = sinkhorn(&augment(&s, 0.2), &cfg).unwrap();
        assert!(early.iterations < full.iterations);
        for i in 0..2 {
            for j in 0..3 {
                assert!((early.get(i, j) - full.get(i, j)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let a = augment(&ScoreMatrix::from_rows(&[vec![0.5]]).unwrap(), 0.2);
        for cfg in [
            SinkhornConfig {
                iterations: 0,
                ..Default::default()
            },
            SinkhornConfig {
                temperature: 0.0,
                ..Default::default()
            },
            SinkhornConfig {
                temperature: f64::NAN,
                ..Default::default()
            },
            SinkhornConfig {
                merge_strength: -1.0,
                ..Default::default()
            },
        ] {
            assert!(sinkhorn(&a, &cfg).is_err());
        }
    }

    #[test]
    fn extreme_temperature_is_stable() {
        let s = ScoreMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let cfg = SinkhornConfig {
            temperature: 1e-12,
            ..SinkhornConfig::default()
        };
        let plan = sinkhorn(&augment(&s, 0.2), &cfg).unwrap();
        assert!(plan.augmented.iter().all(|p| p.is_finite() && *p >= 0.0));
    }

    fn plan_from(rows: &[Vec<f64>]) -> TransportPlan {
        let kept = rows.len();
        let pruned = rows[0].len();
        let mut augmented = Vec::new();
        for r in rows {
            augmented.extend_from_slice(r);
            augmented.push(0.0);
        }
        augmented.extend(std::iter::repeat_n(0.0, pruned + 1));
        TransportPlan {
            augmented,
            kept,
            pruned,
            row_mass: vec![],
            col_mass: vec![],
            iterations: 0,
            converged_residual: 0.0,
        }
    }

    #[test]
    fn merge_examples() {
        let t = TokenMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let sel = selection(vec![0], vec![1], &t);
        let out = merge(&t, &sel, &plan_from(&[vec![1.0]]), 0.1).unwrap();
        assert_eq!(out.row(0)[0], 1.0);
        assert!((out.row(0)[1] - 0.2).abs() < 1e-15);

        let t = TokenMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let sel = selection(vec![0], vec![1, 2], &t);
        let out = merge(&t, &sel, &plan_from(&[vec![0.5, 0.5]]), 0.1).unwrap();
        assert!((out.row(0)[1] - 0.2).abs() < 1e-15);

        let out = merge(&t, &sel, &plan_from(&[vec![0.5, 0.5]]), 0.0).unwrap();
        assert_eq!(out.row(0), t.row(0));
    }

    #[test]
    fn merge_rejects_shape_mismatch() {
        let t = TokenMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let sel = selection(vec![0], vec![1, 2], &t);
        assert!(merge(&t, &sel, &plan_from(&[vec![1.0]]), 0.1).is_err());
        assert!(merge(&t, &sel, &plan_from(&[vec![0.5, 0.5]]), -0.1).is_err());
    }
}
