//! Prefill cost of the MoE decoder, and what pruning at each layer saves.
//!
//! cargo run --example flops_model

use rtprune::costmodel::{prune_at_layer_flops, total_flops, DecoderCostConfig};

fn main() -> rtprune::Result<()> {
    let cfg = DecoderCostConfig::default();
    println!("calibrated standard-FFN width m = {}", cfg.m);

    // Total sequence lengths (visual plus prompt tokens) before and after
    // pruning a quarter of the visual tokens.
    for (mode, full, pruned) in [("base", 283, 219), ("large", 431, 331)] {
        let (a, b) = (total_flops(full, &cfg), total_flops(pruned, &cfg));
        let saved = 100.0 * (1.0 - b.0 as f64 / a.0 as f64);
        println!("\n{mode}: {full} tokens {a}, {pruned} tokens {b} ({saved:.1}% less)");
        println!("prune after layer l:");
        for layer in 0..cfg.layers() {
            println!(
                "  l = {layer:>2}: {}",
                prune_at_layer_flops(full, pruned, layer, &cfg)?
            );
        }
    }
    Ok(())
}
