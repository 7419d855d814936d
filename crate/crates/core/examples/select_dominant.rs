//! Rank tokens by L2 norm and keep the strongest ones.
//!
//! cargo run --example select_dominant

use rtprune::tokens::{select_dominant, token_norms, TokenMatrix};

fn main() -> rtprune::Result<()> {
    let tokens = TokenMatrix::from_rows(&[
        vec![0.1, 0.2],
        vec![3.0, 4.0],
        vec![1.0, 0.0],
        vec![0.0, 5.0],
        vec![0.3, 0.4],
        vec![-2.0, 2.0],
    ])?;

    for (i, n) in token_norms(&tokens).iter().enumerate() {
        println!("token {i}: |t| = {n:.3}");
    }

    for ratio in [0.0, 0.25, 0.5, 0.9] {
        let sel = select_dominant(&tokens, ratio)?;
        println!(
            "r = {ratio:<4} keep {:?} prune {:?}",
            sel.kept_indices, sel.pruned_indices
        );
    }
    Ok(())
}
