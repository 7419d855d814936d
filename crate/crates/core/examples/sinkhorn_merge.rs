//! Match pruned tokens to kept ones with dustbin-augmented Sinkhorn, then
//! fold them into their matches.
//!
//! cargo run --example sinkhorn_merge

use rtprune::tokens::{select_dominant, TokenMatrix};
use rtprune::transport::{augment, build_scores, merge, sinkhorn, SinkhornConfig};

fn main() -> rtprune::Result<()> {
    // Two strong tokens and three weak ones: two echo the strong tokens, one
    // points somewhere else and should end up in the dustbin.
    let tokens = TokenMatrix::from_rows(&[
        vec![8.0, 0.0, 0.0],
        vec![0.0, 8.0, 0.0],
        vec![0.9, 0.1, 0.0],
        vec![0.1, 0.9, 0.0],
        vec![0.0, 0.0, 1.0],
    ])?;
    let sel = select_dominant(&tokens, 0.6)?;
    println!(
        "kept {:?}, pruned {:?}",
        sel.kept_indices, sel.pruned_indices
    );

    let cfg = SinkhornConfig {
        temperature: 0.05,
        ..SinkhornConfig::default()
    };
    let scores = build_scores(&tokens, &sel)?;
    let plan = sinkhorn(&augment(&scores, cfg.dustbin_score), &cfg)?;

    println!("augmented plan (last row and column are the dustbin):");
    for i in 0..=plan.kept() {
        let row: Vec<String> = (0..=plan.pruned())
            .map(|j| format!("{:7.4}", plan.augmented(i, j)))
            .collect();
        println!("  {}", row.join(" "));
    }
    println!(
        "residual after {} iterations: {:.2e}",
        plan.iterations, plan.converged_residual
    );

    let merged = merge(&tokens, &sel, &plan, cfg.merge_strength)?;
    for (row, &k) in sel.kept_indices.iter().enumerate() {
        println!("token {k}: {:?} -> {:.3?}", tokens.row(k), merged.row(row));
    }
    Ok(())
}
