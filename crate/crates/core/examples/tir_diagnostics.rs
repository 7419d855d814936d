//! How well does the norm ranking agree with what the decoder attends to?
//!
//! cargo run --example tir_diagnostics

use rtprune::diagnostics::{three_eighths, tir, AttentionDump};

fn main() -> rtprune::Result<()> {
    let n = 16;
    let norms: Vec<f64> = (0..n).map(|i| ((i * 7) % n) as f64).collect();

    // Early layers attend almost by norm; later ones drift away.
    let layers: Vec<Vec<f64>> = (0..6)
        .map(|l| {
            (0..n)
                .map(|i| norms[i] * (6 - l) as f64 + ((i * 5 + l * 3) % n) as f64 * l as f64)
                .collect()
        })
        .collect();
    let attn = AttentionDump::from_rows(&layers)?;

    let k = three_eighths(n);
    let curve = tir(&norms, &attn, k)?;
    println!("K = {k}");
    println!("layer  layerwise  cumulative");
    for l in 0..attn.layers() {
        println!(
            "{l:>5}  {:>9.3}  {:>10.3}",
            curve.layerwise[l], curve.cumulative[l]
        );
    }
    Ok(())
}
