//! Full pipeline with a content-dependent ratio: redundant tokens on a sparse
//! page are pruned hard, the same tokens on a dense page are kept.
//!
//! cargo run --example dynamic_prune

use rtprune::density::{DynamicRatioConfig, GrayImage, PatchGrid};
use rtprune::pipeline::{rtprune, PruneRequest, RatioMode};
use rtprune::tokens::TokenMatrix;

const SIDE: usize = 8;

fn tokens() -> TokenMatrix {
    // A shared direction plus a deterministic per-token offset.
    let wobble = |i: usize, step: usize, period: usize| {
        2.0 * (((i * step) % period) as f64 / (period - 1) as f64 - 0.5)
    };
    let rows: Vec<Vec<f64>> = (0..SIDE * SIDE)
        .map(|i| vec![1.0, wobble(i, 37, 11), wobble(i, 53, 13), wobble(i, 29, 7)])
        .collect();
    TokenMatrix::from_rows(&rows).unwrap()
}

/// Two-pixel "text lines" every `line_pitch` rows.
fn page(line_pitch: usize) -> GrayImage {
    let w = SIDE * 8;
    let px = (0..w * w)
        .map(|k| if (k / w) % line_pitch < 2 { 0.0 } else { 1.0 })
        .collect();
    GrayImage::new(w, w, px).unwrap()
}

fn main() -> rtprune::Result<()> {
    let cfg = DynamicRatioConfig::default();
    let grid = PatchGrid::new(SIDE, SIDE)?;
    for (label, image) in [("sparse page", page(32)), ("dense page", page(8))] {
        let req = PruneRequest::new(tokens(), RatioMode::Dynamic(cfg)).with_image(image, grid);
        let (out, report) = rtprune(&req)?;
        println!(
            "{label}: phi = {:.3}, rho = {:.3}, r = {:.3}, kept {} of {}",
            report.phi.unwrap(),
            report.rho.unwrap(),
            report.applied_r,
            out.rows(),
            report.input_tokens
        );
    }
    Ok(())
}
