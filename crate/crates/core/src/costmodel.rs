//! Analytic prefill FLOPs of a dense-then-MoE decoder stack.
//!
//! Per layer over `n` tokens with hidden size `d`:
//!
//! ```text
//! attention           8 n d^2 + 4 n^2 d
//! standard FFN        6 n d m
//! MoE FFN             6 n d (k m1 + m2)     k routed experts + one shared expert
//! ```
//!
//! The stack is `T1` standard layers followed by `T2` MoE layers. Arithmetic
//! is exact in `u128`; only calibration goes through `f64`.
//!
//! The standard-FFN width `m` is not published for the reference decoder, so
//! [`DecoderCostConfig::default`] calibrates it against the reference
//! measurement [`BASE_TOTAL_TOKENS`] / [`BASE_TOTAL_FLOPS`].

use std::fmt;

use crate::{Error, Result};

/// Visual tokens (256) plus prompt overhead for the reference base mode.
pub const BASE_TOTAL_TOKENS: u64 = 283;
/// Reference prefill cost at [`BASE_TOTAL_TOKENS`].
pub const BASE_TOTAL_FLOPS: f64 = 235.7e9;
/// Non-visual tokens in the reference prompt.
pub const DEFAULT_PROMPT_OVERHEAD: u64 = 27;

/// Exact FLOP count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Flops(pub u128);

impl Flops {
    pub fn gflops(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

impl std::ops::Add for Flops {
    type Output = Flops;

    fn add(self, rhs: Flops) -> Flops {
        Flops(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Flops {
    fn sum<I: Iterator<Item = Flops>>(iter: I) -> Flops {
        iter.fold(Flops(0), |a, b| a + b)
    }
}

impl fmt::Display for Flops {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} GFLOPs", self.gflops())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderCostConfig {
    /// Hidden size.
    pub d: u64,
    /// Standard-FFN intermediate size.
    pub m: u64,
    /// Routed-expert intermediate size.
    pub m1: u64,
    /// Shared-expert intermediate size.
    pub m2: u64,
    /// Routed experts activated per token.
    pub k: u64,
    /// Standard decoder layers (run first).
    pub t1: u64,
    /// MoE decoder layers.
    pub t2: u64,
}

impl DecoderCostConfig {
    /// Architecture without a value for `m` (set to 0).
    pub const fn uncalibrated() -> Self {
        Self {
            d: 1280,
            m: 0,
            m1: 896,
            m2: 1792,
            k: 6,
            t1: 1,
            t2: 11,
        }
    }

    pub fn layers(&self) -> u64 {
        self.t1 + self.t2
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("d", self.d),
            ("m", self.m),
            ("m1", self.m1),
            ("m2", self.m2),
            ("k", self.k),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.layers() == 0 {
            return Err(Error::invalid("decoder needs at least one layer"));
        }
        Ok(())
    }

    /// FLOPs of layer `layer` (0-based) over `n` tokens.
    pub fn layer_flops(&self, layer: u64, n: u64) -> Flops {
        let ffn = if layer < self.t1 {
            ffn_flops(n, self.d, self.m)
        } else {
            moe_flops(n, self.d, self.k, self.m1, self.m2)
        };
        attn_flops(n, self.d) + ffn
    }
}

impl Default for DecoderCostConfig {
    /// Reference architecture with `m` calibrated from the base measurement.
    fn default() -> Self {
        let mut cfg = Self::uncalibrated();
        cfg.m = calibrate_m(BASE_TOTAL_TOKENS, BASE_TOTAL_FLOPS, &cfg)
            .expect("reference measurement exceeds the m-independent cost");
        cfg
    }
}

/// `8 n d^2 + 4 n^2 d`.
pub fn attn_flops(n: u64, d: u64) -> Flops {
    let (n, d) = (u128::from(n), u128::from(d));
    Flops(8 * n * d * d + 4 * n * n * d)
}

/// `6 n d m`: gate, up and down projections.
pub fn ffn_flops(n: u64, d: u64, m: u64) -> Flops {
    Flops(6 * u128::from(n) * u128::from(d) * u128::from(m))
}

/// `6 n d (k m1 + m2)`.
pub fn moe_flops(n: u64, d: u64, k: u64, m1: u64, m2: u64) -> Flops {
    let width = u128::from(k) * u128::from(m1) + u128::from(m2);
    Flops(6 * u128::from(n) * u128::from(d) * width)
}

/// `T1 (attn + ffn) + T2 (attn + moe)`.
pub fn total_flops(n: u64, cfg: &DecoderCostConfig) -> Flops {
    let standard = attn_flops(n, cfg.d) + ffn_flops(n, cfg.d, cfg.m);
    let moe = attn_flops(n, cfg.d) + moe_flops(n, cfg.d, cfg.k, cfg.m1, cfg.m2);
    Flops(u128::from(cfg.t1) * standard.0 + u128::from(cfg.t2) * moe.0)
}

/// Standard-FFN width that makes [`total_flops`] hit `target` at `n` tokens,
/// rounded to the nearest integer. `cfg.m` is ignored.
pub fn calibrate_m(n: u64, target: f64, cfg: &DecoderCostConfig) -> Result<u64> {
    if n == 0 || cfg.t1 == 0 || cfg.d == 0 {
        return Err(Error::invalid(
            "calibration needs n > 0, d > 0 and at least one standard layer",
        ));
    }
    if !target.is_finite() {
        return Err(Error::invalid("calibration target must be finite"));
    }
    let attn = attn_flops(n, cfg.d).0 * u128::from(cfg.layers());
    let moe = moe_flops(n, cfg.d, cfg.k, cfg.m1, cfg.m2).0 * u128::from(cfg.t2);
    let fixed = (attn + moe) as f64;
    let numerator = target - fixed;
    if numerator <= 0.0 {
        return Err(Error::InfeasibleCalibration(format!(
            "target {target:.4e} does not exceed the m-independent cost {fixed:.4e}"
        )));
    }
    let per_unit = 6.0 * n as f64 * cfg.d as f64 * cfg.t1 as f64;
    let m = (numerator / per_unit).round();
    if m < 1.0 {
        return Err(Error::InfeasibleCalibration(format!(
            "target {target:.4e} implies a standard-FFN width below 1"
        )));
    }
    Ok(m as u64)
}

/// Cost when layers `0..=layer` see `n_full` tokens and later layers see
/// `n_pruned`. Layer indices count standard layers first.
pub fn prune_at_layer_flops(
    n_full: u64,
    n_pruned: u64,
    layer: u64,
    cfg: &DecoderCostConfig,
) -> Result<Flops> {
    if layer >= cfg.layers() {
        return Err(Error::invalid(format!(
            "layer {layer} out of range for a {}-layer decoder",
            cfg.layers()
        )));
    }
    Ok((0..cfg.layers())
        .map(|l| cfg.layer_flops(l, if l <= layer { n_full } else { n_pruned }))
        .sum())
}
