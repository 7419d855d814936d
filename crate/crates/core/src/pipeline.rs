//! End-to-end pruning: optional dynamic ratio, dominant-token selection,
//! transport and merge.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::density::{dynamic_ratio, text_density, DynamicRatioConfig, GrayImage, PatchGrid};
use crate::tokens::{check_ratio, mean_pairwise_similarity, select_dominant, TokenMatrix};
use crate::transport::{augment, build_scores, merge, sinkhorn, SinkhornConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioMode {
    Fixed(f64),
    /// Derive the ratio from token similarity and page text density.
    Dynamic(DynamicRatioConfig),
}

/// Page image aligned with the token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PageImage {
    pub image: GrayImage,
    pub grid: PatchGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRequest {
    pub tokens: TokenMatrix,
    /// Required by [`RatioMode::Dynamic`].
    pub image: Option<PageImage>,
    pub ratio_mode: RatioMode,
    pub sinkhorn: SinkhornConfig,
}

impl PruneRequest {
    pub fn new(tokens: TokenMatrix, ratio_mode: RatioMode) -> Self {
        Self {
            tokens,
            image: None,
            ratio_mode,
            sinkhorn: SinkhornConfig::default(),
        }
    }

    pub fn with_image(mut self, image: GrayImage, grid: PatchGrid) -> Self {
        self.image = Some(PageImage { image, grid });
        self
    }

    pub fn with_sinkhorn(mut self, cfg: SinkhornConfig) -> Self {
        self.sinkhorn = cfg;
        self
    }
}

/// Wall-clock milliseconds per stage. Excluded from determinism checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub density: f64,
    pub similarity: f64,
    pub selection: f64,
    pub transport: f64,
    pub merge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub applied_r: f64,
    pub input_tokens: usize,
    pub kept: usize,
    pub kept_indices: Vec<usize>,
    pub phi: Option<f64>,
    pub rho: Option<f64>,
    /// Absent when the transport stage was skipped.
    pub sinkhorn_residual: Option<f64>,
    pub sinkhorn_iterations: Option<usize>,
    /// Row sums of the dustbin-free plan, one per kept token.
    pub merged_mass_per_kept: Vec<f64>,
    pub timing_ms: StageTimings,
}

impl PruneReport {
    /// Copy with timings zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        Self {
            timing_ms: StageTimings::default(),
            ..self.clone()
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Prunes `req.tokens` down to `M = clamp(round(N (1 - r)), 1, N)` rows.
///
/// Output rows are the merged kept tokens in ascending original index.
pub fn rtprune(req: &PruneRequest) -> Result<(TokenMatrix, PruneReport)> {
    req.sinkhorn.validate()?;
    let tokens = &req.tokens;
    let mut timing = StageTimings::default();

    let (ratio, phi, rho) = match req.ratio_mode {
        RatioMode::Fixed(r) => {
            check_ratio(r)?;
            (r, None, None)
        }
        RatioMode::Dynamic(cfg) => {
            cfg.validate()?;
            let page = req
                .image
                .as_ref()
                .ok_or_else(|| Error::invalid("dynamic ratio requires a page image"))?;
            if page.grid.patches() != tokens.rows() {
                return Err(Error::invalid(format!(
                    "patch grid {} covers {} patches but there are {} tokens",
                    page.grid,
                    page.grid.patches(),
                    tokens.rows()
                )));
            }
            let start = Instant::now();
            let rho = text_density(&page.image, page.grid, cfg.tau)?.mean;
            timing.density = elapsed_ms(start);

            let start = Instant::now();
            let phi = if tokens.rows() >= 2 {
                mean_pairwise_similarity(tokens)?
            } else {
                // A single token has nothing to be redundant with.
                cfg.phi_lo
            };
            timing.similarity = elapsed_ms(start);
            (dynamic_ratio(phi, rho, &cfg), Some(phi), Some(rho))
        }
    };

    let start = Instant::now();
    let sel = select_dominant(tokens, ratio)?;
    timing.selection = elapsed_ms(start);

    let mut report = PruneReport {
        applied_r: ratio,
        input_tokens: tokens.rows(),
        kept: sel.kept(),
        kept_indices: sel.kept_indices.clone(),
        phi,
        rho,
        sinkhorn_residual: None,
        sinkhorn_iterations: None,
        merged_mass_per_kept: vec![0.0; sel.kept()],
        timing_ms: StageTimings::default(),
    };

    if sel.pruned() == 0 {
        report.timing_ms = timing;
        return Ok((tokens.clone(), report));
    }

    let start = Instant::now();
    let scores = build_scores(tokens, &sel)?;
    let plan = sinkhorn(&augment(&scores, req.sinkhorn.dustbin_score), &req.sinkhorn)?;
    timing.transport = elapsed_ms(start);

    let start = Instant::now();
    let merged = merge(tokens, &sel, &plan, req.sinkhorn.merge_strength)?;
    timing.merge = elapsed_ms(start);

    report.sinkhorn_residual = Some(plan.converged_residual);
    report.sinkhorn_iterations = Some(plan.iterations);
    report.merged_mass_per_kept = plan.row_mass;
    report.timing_ms = timing;
    Ok((merged, report))
}
