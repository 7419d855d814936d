//! The `rtprune` command line.
//!
//! Exit codes: 0 success, 1 internal numerical failure, 2 malformed or
//! inconsistent input file, 3 conflicting or invalid configuration.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::costmodel::{
    calibrate_m, prune_at_layer_flops, total_flops, DecoderCostConfig, Flops, BASE_TOTAL_FLOPS,
    BASE_TOTAL_TOKENS, DEFAULT_PROMPT_OVERHEAD,
};
use crate::density::{text_density, DynamicRatioConfig, PatchGrid};
use crate::diagnostics::tir;
use crate::io::{pnm, rtt};
use crate::parallel::{threads_from_env, with_threads};
use crate::pipeline::{rtprune, PruneReport, PruneRequest, RatioMode};
use crate::tokens::token_norms;
use crate::transport::SinkhornConfig;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rtprune", version, about = "Visual-token pruning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune an N x D token tensor down to M rows.
    Prune(PruneArgs),
    /// Sobel text density of a page image per token patch.
    Density(DensityArgs),
    /// Decoder prefill FLOPs, or calibration of the standard-FFN width.
    Flops(FlopsArgs),
    /// Top-K intersection ratio between token norms and attention rankings.
    Tir(TirArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["ratio", "dynamic"])))]
pub struct PruneArgs {
    /// N x D token tensor (.rtt).
    #[arg(long)]
    pub tokens: PathBuf,
    /// Where to write the M x D result (.rtt).
    #[arg(long)]
    pub out: PathBuf,
    /// Binary PGM or PPM page aligned with the token grid.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Patch grid as GHxGW; defaults to a square grid when N is a perfect square.
    #[arg(long)]
    pub grid: Option<String>,
    /// Fixed pruning ratio in [0, 1).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Derive the ratio from token similarity and page text density.
    #[arg(long)]
    pub dynamic: bool,
    /// Dustbin score.
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    pub z: f64,
    /// Merge strength.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Gradient threshold for text density.
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    /// Sinkhorn iterations.
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    /// Sinkhorn temperature; scores are divided by it.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Lower clamp on the dynamic ratio.
    #[arg(long, default_value_t = 0.0)]
    pub r_min: f64,
    /// Upper clamp on the dynamic ratio.
    #[arg(long, default_value_t = 0.5)]
    pub r_max: f64,
    /// Similarity mapped to 0 before scaling by (1 - rho).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub phi_lo: f64,
    /// Similarity mapped to 1.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub phi_hi: f64,
    /// Write a JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    /// Binary PGM or PPM page.
    #[arg(long)]
    pub image: PathBuf,
    /// Patch grid as GHxGW; must divide the page evenly.
    #[arg(long)]
    pub grid: String,
    /// Gradient threshold.
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    /// Print one JSON object instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("tokens_in").required(true).args(["n", "visual"])))]
pub struct FlopsArgs {
    /// Total tokens in the prefill sequence.
    #[arg(long)]
    pub n: Option<u64>,
    /// Visual tokens; the prompt overhead is added to obtain n.
    #[arg(long, conflicts_with = "n")]
    pub visual: Option<u64>,
    /// Non-visual tokens added to --visual and --visual-pruned.
    #[arg(long, default_value_t = DEFAULT_PROMPT_OVERHEAD)]
    pub prompt_overhead: u64,
    /// Total tokens after pruning.
    #[arg(long, conflicts_with = "visual_pruned")]
    pub n_pruned: Option<u64>,
    /// Visual tokens after pruning.
    #[arg(long)]
    pub visual_pruned: Option<u64>,
    /// Last layer that still sees the unpruned sequence.
    #[arg(long)]
    pub layer: Option<u64>,
    /// Solve for the standard-FFN width that yields this many FLOPs at n.
    #[arg(long, conflicts_with_all = ["layer", "n_pruned", "visual_pruned", "m"])]
    pub calibrate: Option<f64>,
    /// Hidden size [default: 1280].
    #[arg(long)]
    pub d: Option<u64>,
    /// Standard-FFN width [default: calibrated from 283 tokens, 235.7 GFLOPs].
    #[arg(long)]
    pub m: Option<u64>,
    /// Routed-expert width [default: 896].
    #[arg(long)]
    pub m1: Option<u64>,
    /// Shared-expert width [default: 1792].
    #[arg(long)]
    pub m2: Option<u64>,
    /// Routed experts per token [default: 6].
    #[arg(long)]
    pub k: Option<u64>,
    /// Standard layers [default: 1].
    #[arg(long)]
    pub t1: Option<u64>,
    /// MoE layers [default: 11].
    #[arg(long)]
    pub t2: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TirArgs {
    /// 1-D norm tensor, or a 2-D token tensor whose row norms are used.
    #[arg(long)]
    pub norms: PathBuf,
    /// 2-D layers x tokens attention tensor.
    #[arg(long)]
    pub attn: PathBuf,
    /// Size of the compared top-K sets.
    #[arg(long)]
    pub k: usize,
    /// Print one JSON object instead of a table.
    #[arg(long)]
    pub json: bool,
}

/// Configuration echoed into the prune report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfigEcho {
    pub mode: String,
    pub ratio: Option<f64>,
    pub grid: Option<String>,
    pub z: f64,
    pub alpha: f64,
    pub tau: f64,
    pub iterations: usize,
    pub temperature: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub phi_lo: f64,
    pub phi_hi: f64,
}

/// JSON document written by `prune --report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool: String,
    pub version: String,
    pub config: PruneConfigEcho,
    pub report: PruneReport,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::NumericalFailure(_) | Error::EmptyPruneSet => EXIT_NUMERICAL,
            Error::InfeasibleCalibration(_) => EXIT_CONFIG,
            Error::InvalidInput(_) | Error::Format { .. } | Error::Io(_) => EXIT_BAD_INPUT,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Error::from(err).into()
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
            } else {
                let _ = write!(out, "{rendered}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Prune(args) => cmd_prune(&args, out),
        Command::Density(args) => cmd_density(&args, out),
        Command::Flops(args) => cmd_flops(&args, out),
        Command::Tir(args) => cmd_tir(&args, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "rtprune: {}", f.message);
            f.code
        }
    }
}

fn parse_grid(text: &str) -> Result<PatchGrid, Failure> {
    text.parse::<PatchGrid>()
        .map_err(|e| Failure::config(e.to_string()))
}

fn square_grid(n: usize) -> Option<PatchGrid> {
    let side = (n as f64).sqrt().round() as usize;
    (side * side == n)
        .then(|| PatchGrid::new(side, side).ok())
        .flatten()
}

fn cmd_prune(args: &PruneArgs, out: &mut dyn Write) -> CliResult {
    if args.dynamic && args.image.is_none() {
        return Err(Failure::config("--dynamic requires --image"));
    }
    let sinkhorn = SinkhornConfig {
        iterations: args.iters,
        dustbin_score: args.z,
        temperature: args.temperature,
        merge_strength: args.alpha,
        early_exit: None,
    };
    sinkhorn
        .validate()
        .map_err(|e| Failure::config(e.to_string()))?;
    let dynamic = DynamicRatioConfig {
        tau: args.tau,
        phi_lo: args.phi_lo,
        phi_hi: args.phi_hi,
        r_min: args.r_min,
        r_max: args.r_max,
    };
    let mode = match args.ratio {
        Some(r) if (0.0..1.0).contains(&r) => RatioMode::Fixed(r),
        Some(r) => {
            return Err(Failure::config(format!(
                "--ratio must lie in [0, 1), got {r}"
            )))
        }
        None => {
            dynamic
                .validate()
                .map_err(|e| Failure::config(e.to_string()))?;
            RatioMode::Dynamic(dynamic)
        }
    };

    let tokens = rtt::read_file(&args.tokens)?.into_matrix()?;
    let grid = match &args.grid {
        Some(text) => Some(parse_grid(text)?),
        None => None,
    };

    let mut req = PruneRequest::new(tokens, mode).with_sinkhorn(sinkhorn);
    let mut grid_used = None;
    if args.dynamic {
        let path = args.image.as_ref().expect("checked above");
        let image = pnm::read_file(path)?.to_gray()?;
        let grid = match grid.or_else(|| square_grid(req.tokens.rows())) {
            Some(g) => g,
            None => {
                return Err(Failure::config(format!(
                    "--grid is required for {} tokens",
                    req.tokens.rows()
                )))
            }
        };
        grid_used = Some(grid.to_string());
        req = req.with_image(image, grid);
    }

    let (pruned, report) = with_threads(threads_from_env(), || rtprune(&req))?;
    rtt::write_file(&args.out, &rtt::Tensor::from_matrix(&pruned))?;

    if let Some(path) = &args.report {
        let file = ReportFile {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: PruneConfigEcho {
                mode: if args.dynamic { "dynamic" } else { "fixed" }.to_string(),
                ratio: args.ratio,
                grid: grid_used,
                z: args.z,
                alpha: args.alpha,
                tau: args.tau,
                iterations: args.iters,
                temperature: args.temperature,
                r_min: args.r_min,
                r_max: args.r_max,
                phi_lo: args.phi_lo,
                phi_hi: args.phi_hi,
            },
            report: report.clone(),
        };
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Failure::from(Error::NumericalFailure(e.to_string())))?;
        std::fs::write(path, json + "\n")?;
    }

    writeln!(
        out,
        "kept {} of {} tokens (r = {})",
        report.kept, report.input_tokens, report.applied_r
    )?;
    if let (Some(phi), Some(rho)) = (report.phi, report.rho) {
        writeln!(out, "phi = {phi}, rho = {rho}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DensityJson<'a> {
    grid: String,
    tau: f64,
    rho: f64,
    per_patch: &'a [f64],
}

fn cmd_density(args: &DensityArgs, out: &mut dyn Write) -> CliResult {
    let grid = parse_grid(&args.grid)?;
    if !args.tau.is_finite() {
        return Err(Failure::config("--tau must be finite"));
    }
    let image = pnm::read_file(&args.image)?.to_gray()?;
    let density = text_density(&image, grid, args.tau)?;
    if args.json {
        let doc = DensityJson {
            grid: grid.to_string(),
            tau: args.tau,
            rho: density.mean,
            per_patch: &density.per_patch,
        };
        let json = serde_json::to_string(&doc)
            .map_err(|e| Failure::from(Error::NumericalFailure(e.to_string())))?;
        writeln!(out, "{json}")?;
    } else {
        writeln!(out, "rho {}", density.mean)?;
        for row in density.per_patch.chunks(grid.grid_w) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            writeln!(out, "{}", cells.join(" "))?;
        }
    }
    Ok(())
}

fn cost_config(args: &FlopsArgs) -> Result<DecoderCostConfig, Failure> {
    let base = DecoderCostConfig::uncalibrated();
    let mut cfg = DecoderCostConfig {
        d: args.d.unwrap_or(base.d),
        m: 0,
        m1: args.m1.unwrap_or(base.m1),
        m2: args.m2.unwrap_or(base.m2),
        k: args.k.unwrap_or(base.k),
        t1: args.t1.unwrap_or(base.t1),
        t2: args.t2.unwrap_or(base.t2),
    };
    cfg.m = match args.m {
        Some(m) => m,
        None if args.calibrate.is_some() => 1,
        None if cfg.t1 == 0 => 1,
        None => calibrate_m(BASE_TOTAL_TOKENS, BASE_TOTAL_FLOPS, &cfg)?,
    };
    cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

fn print_flops(out: &mut dyn Write, label: &str, flops: Flops) -> std::io::Result<()> {
    writeln!(
        out,
        "{label}: {:.1} GFLOPs ({} FLOPs)",
        flops.gflops(),
        flops.0
    )
}

fn cmd_flops(args: &FlopsArgs, out: &mut dyn Write) -> CliResult {
    let cfg = cost_config(args)?;
    let n = match (args.n, args.visual) {
        (Some(n), _) => n,
        (None, Some(v)) => v + args.prompt_overhead,
        (None, None) => unreachable!("clap requires --n or --visual"),
    };
    let n_pruned = args
        .n_pruned
        .or(args.visual_pruned.map(|v| v + args.prompt_overhead));

    if let Some(target) = args.calibrate {
        let m = calibrate_m(n, target, &cfg)?;
        writeln!(out, "m = {m}")?;
        return Ok(());
    }

    match (n_pruned, args.layer) {
        (Some(np), Some(layer)) => {
            let flops = prune_at_layer_flops(n, np, layer, &cfg)
                .map_err(|e| Failure::config(e.to_string()))?;
            print_flops(
                out,
                &format!("n = {n} through layer {layer}, then {np}"),
                flops,
            )?;
        }
        (None, Some(_)) => {
            return Err(Failure::config(
                "--layer requires --n-pruned or --visual-pruned",
            ))
        }
        (Some(np), None) => {
            let full = total_flops(n, &cfg);
            let pruned = total_flops(np, &cfg);
            print_flops(out, &format!("n = {n}"), full)?;
            print_flops(out, &format!("n = {np}"), pruned)?;
            let saved = 1.0 - pruned.0 as f64 / full.0 as f64;
            writeln!(out, "reduction: {:.2}%", saved * 100.0)?;
        }
        (None, None) => print_flops(out, &format!("n = {n}"), total_flops(n, &cfg))?,
    }
    Ok(())
}

#[derive(Serialize)]
struct TirJson<'a> {
    k: usize,
    layerwise: &'a [f64],
    cumulative: &'a [f64],
}

fn cmd_tir(args: &TirArgs, out: &mut dyn Write) -> CliResult {
    let norms_tensor = rtt::read_file(&args.norms)?;
    let norms: Vec<f64> = match norms_tensor.dims.len() {
        1 => norms_tensor.data.iter().map(|&v| f64::from(v)).collect(),
        2 => token_norms(&norms_tensor.into_matrix()?),
        _ => {
            return Err(Error::invalid(format!(
                "norms tensor must be 1-D or 2-D, got shape {:?}",
                norms_tensor.dims
            ))
            .into())
        }
    };
    let attn = rtt::read_file(&args.attn)?.into_attention()?;
    if args.k == 0 || args.k > norms.len() {
        return Err(Failure::config(format!(
            "--k must lie in 1..={}, got {}",
            norms.len(),
            args.k
        )));
    }
    let curve = tir(&norms, &attn, args.k)?;
    if args.json {
        let doc = TirJson {
            k: args.k,
            layerwise: &curve.layerwise,
            cumulative: &curve.cumulative,
        };
        let json = serde_json::to_string(&doc)
            .map_err(|e| Failure::from(Error::NumericalFailure(e.to_string())))?;
        writeln!(out, "{json}")?;
    } else {
        writeln!(out, "layer layerwise cumulative")?;
        for (l, (a, b)) in curve.layerwise.iter().zip(&curve.cumulative).enumerate() {
            writeln!(out, "{l} {a:.4} {b:.4}")?;
        }
    }
    Ok(())
}
