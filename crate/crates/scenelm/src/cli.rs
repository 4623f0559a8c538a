//! Command-line entry point: dataset generation, training, decoding, and
//! benchmarking as reproducible subcommands.
//!
//! Config precedence is defaults < config file < command-line flags; every
//! run echoes its effective configuration into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::decoding::{decode, DecodePolicy, Strategy};
use crate::dsl;
use crate::encoder::{encode_context, voxelize};
use crate::eval::{
    alpha_stats, benchmark, bin_scores, softmax_score_split, write_histogram_csv, BenchSpec,
};
use crate::model::{DecoderConfig, Model};
use crate::scenegen::{load_cloud, load_split, write_dataset, GenParams};
use crate::training::{init_mtp_from_ntp, prepare_scenes, train, TrainConfig};

#[derive(Parser)]
#[command(name = "scenelm", about = "Structured-language scene-layout modeling", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset.
    GenData(GenDataArgs),
    /// Train a model (next-token, or multi-token fine-tune).
    Train(TrainArgs),
    /// Decode one point cloud into a layout.
    Decode(DecodeArgs),
    /// Evaluate one checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Benchmark a strategy matrix over one or more checkpoints.
    Bench(BenchArgs),
}

pub fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn pick<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

fn load_file_cfg<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str(&text).with_context(|| format!("config file {}", p.display()))
        }
    }
}

fn echo_config<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    let path = out.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap())
        .with_context(|| path.display().to_string())?;
    Ok(())
}

fn ensure_output_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| out.display().to_string())?
            .next()
            .is_some();
        if non_empty && !force {
            bail!("output directory {} is not empty (use --force to overwrite)", out.display());
        }
    }
    fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    Ok(())
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    let norm = s.replace('_', "-");
    let norm = if norm == "mtp" { "mtp-vanilla".to_string() } else { norm };
    norm.parse::<Strategy>().map_err(anyhow::Error::msg)
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON config file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene counts per split: TRAIN,VAL,TEST.
    #[arg(long)]
    scenes: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Point-cloud sampling density (points per square meter).
    #[arg(long)]
    density: Option<f32>,
    /// Gaussian point noise sigma in meters.
    #[arg(long)]
    noise: Option<f32>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct GenDataFileCfg {
    scenes: Option<String>,
    seed: Option<u64>,
    density: Option<f32>,
    noise: Option<f32>,
}

#[derive(Serialize)]
struct GenDataEffective {
    scenes: Vec<usize>,
    seed: u64,
    density: f32,
    noise: f32,
}

fn parse_scene_counts(s: &str) -> Result<Vec<usize>> {
    let counts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| anyhow::anyhow!("bad scene count {p:?}: {e}")))
        .collect::<Result<_>>()?;
    if counts.len() != 3 {
        bail!("--scenes expects TRAIN,VAL,TEST (three counts), got {s:?}");
    }
    Ok(counts)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let file: GenDataFileCfg = load_file_cfg(&args.config)?;
    let eff = GenDataEffective {
        scenes: parse_scene_counts(&pick(args.scenes, file.scenes, "2000,200,200".into()))?,
        seed: pick(args.seed, file.seed, 7),
        density: pick(args.density, file.density, 256.0),
        noise: pick(args.noise, file.noise, 0.01),
    };
    if eff.scenes.iter().sum::<usize>() == 0 {
        bail!("--scenes 0,0,0 would produce an empty dataset");
    }
    ensure_output_dir(&args.out, args.force)?;
    let params = GenParams { seed: eff.seed, ..GenParams::default() };
    let splits = [
        ("train".to_string(), eff.scenes[0]),
        ("val".to_string(), eff.scenes[1]),
        ("test".to_string(), eff.scenes[2]),
    ];
    let manifest = write_dataset(&args.out, &params, eff.density, eff.noise, &splits)?;
    echo_config(&args.out, &eff)?;
    let total: usize = manifest.splits.iter().map(|(_, c)| c).sum();
    println!("wrote {total} scenes to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (from gen-data).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint and log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// ntp | mtp | mtp+confidence
    #[arg(long)]
    mode: Option<String>,
    /// MTP fan-out (heads); must exceed 1 for mtp modes.
    #[arg(long)]
    n: Option<usize>,
    /// Checkpoint directory of a trained next-token model (mtp modes).
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Give each head its own token-head/projection parameters.
    #[arg(long)]
    unshared_heads: bool,
    /// Pin trunk/encoder weights during an mtp fine-tune, keeping the
    /// first head identical to the initializer.
    #[arg(long)]
    freeze_trunk: bool,
    /// Learning-rate multiplier for pretrained weights during an mtp
    /// fine-tune (fresh head parameters always use the full rate).
    #[arg(long)]
    trunk_lr_scale: Option<f32>,
    /// Calibration pass: train only the confidence heads of an existing
    /// mtp+confidence checkpoint.
    #[arg(long)]
    conf_only: bool,
    /// Train draft heads against head 1's own predictions instead of the
    /// ground truth (raises speculative acceptance rates).
    #[arg(long)]
    distill_drafts: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    lambda_h: Option<f32>,
    #[arg(long)]
    lambda_c: Option<f32>,
    /// Numeric tolerance in bins for confidence targets.
    #[arg(long)]
    tau: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_seq: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct TrainFileCfg {
    mode: Option<String>,
    n: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f32>,
    lambda_h: Option<f32>,
    lambda_c: Option<f32>,
    tau: Option<u32>,
    seed: Option<u64>,
    layers: Option<usize>,
    width: Option<usize>,
    heads: Option<usize>,
    max_seq: Option<usize>,
    grid: Option<usize>,
}

#[derive(Serialize)]
struct TrainEffective {
    mode: String,
    model: DecoderConfig,
    train: TrainConfig,
    init_from: Option<PathBuf>,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file: TrainFileCfg = load_file_cfg(&args.config)?;
    let mode = pick(args.mode, file.mode, "ntp".into());
    let is_mtp = matches!(mode.as_str(), "mtp" | "mtp+confidence");
    if !is_mtp && mode != "ntp" {
        bail!("unknown --mode {mode:?} (expected ntp, mtp, or mtp+confidence)");
    }
    let n = pick(args.n, file.n, if is_mtp { 8 } else { 1 });
    if is_mtp && n < 2 {
        bail!("--mode {mode} requires --n greater than 1");
    }
    if is_mtp && args.init_from.is_none() {
        bail!("--mode {mode} requires --init-from <ntp checkpoint dir>");
    }
    let desk = DecoderConfig::desk(n);
    let model_cfg = DecoderConfig {
        layers: pick(args.layers, file.layers, desk.layers),
        width: pick(args.width, file.width, desk.width),
        heads: pick(args.heads, file.heads, desk.heads),
        max_seq: pick(args.max_seq, file.max_seq, desk.max_seq),
        grid: pick(args.grid, file.grid, desk.grid),
        n,
        head_sharing: !args.unshared_heads,
        confidence_heads: mode == "mtp+confidence",
        ..desk
    };
    let train_cfg = TrainConfig {
        epochs: pick(args.epochs, file.epochs, if is_mtp { 20 } else { 40 }),
        batch_size: pick(args.batch_size, file.batch_size, 16),
        lr: pick(args.lr, file.lr, 1e-3),
        lambda_h: pick(args.lambda_h, file.lambda_h, 0.8),
        lambda_c: pick(args.lambda_c, file.lambda_c, 0.5),
        tau: pick(args.tau, file.tau, 2),
        freeze_trunk: args.freeze_trunk,
        conf_only: args.conf_only,
        distill_drafts: args.distill_drafts,
        trunk_lr_scale: args
            .trunk_lr_scale
            .unwrap_or(if args.init_from.is_some() { 0.1 } else { 1.0 }),
        seed: pick(args.seed, file.seed, 0),
        ..TrainConfig::default()
    };
    ensure_output_dir(&args.out, args.force)?;
    echo_config(
        &args.out,
        &TrainEffective {
            mode: mode.clone(),
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            init_from: args.init_from.clone(),
        },
    )?;
    let mut model = match &args.init_from {
        Some(dir) => {
            let src = Model::load(dir).with_context(|| format!("loading {}", dir.display()))?;
            if src.config == model_cfg {
                // matching architecture: resume training as-is
                src
            } else {
                init_mtp_from_ntp(&src, model_cfg, train_cfg.seed)?
            }
        }
        None => Model::new(model_cfg, train_cfg.seed)?,
    };
    let train_records = load_split(&args.data, "train")?;
    let val_records = load_split(&args.data, "val")?;
    let train_scenes = prepare_scenes(&train_records, &model.config);
    let val_scenes = prepare_scenes(&val_records, &model.config);
    println!(
        "training {} model: {} train / {} val scenes, {} epochs",
        mode,
        train_scenes.len(),
        val_scenes.len(),
        train_cfg.epochs
    );
    let report = train(
        &mut model,
        &train_scenes,
        &val_scenes,
        &train_cfg,
        Some(&args.out.join("train_log.jsonl")),
    )?;
    model.save(&args.out)?;
    println!(
        "done: best val loss {:.4}, final train loss {:.4}, checkpoint at {}",
        report.best_val,
        report.final_train.loss_total,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DecodeArgs {
    /// Checkpoint directory (model.json + model.fssc).
    #[arg(long)]
    ckpt: PathBuf,
    /// Point cloud file (.xyz).
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// ntp | mtp | ssd | cgd | product_thre | softmax_thre
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    tau: Option<u32>,
    #[arg(long)]
    epsilon: Option<f32>,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Enable nucleus sampling with the given mass (ntp only).
    #[arg(long)]
    nucleus_p: Option<f32>,
    #[arg(long)]
    grammar_mask: bool,
    #[arg(long)]
    no_bonus_token: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct DecodeFileCfg {
    strategy: Option<String>,
    tau: Option<u32>,
    epsilon: Option<f32>,
    threshold: Option<f32>,
    max_tokens: Option<usize>,
    seed: Option<u64>,
}

fn build_policy(
    strategy: Strategy,
    tau: Option<u32>,
    epsilon: Option<f32>,
    threshold: Option<f32>,
    max_tokens: Option<usize>,
    nucleus_p: Option<f32>,
    grammar_mask: bool,
    bonus_token: bool,
    seed: Option<u64>,
) -> DecodePolicy {
    let base = DecodePolicy::greedy(strategy);
    DecodePolicy {
        strategy,
        tau: tau.unwrap_or(base.tau),
        epsilon: epsilon.unwrap_or(base.epsilon),
        score_threshold: threshold.unwrap_or(base.score_threshold),
        max_tokens: max_tokens.unwrap_or(base.max_tokens),
        nucleus_p,
        grammar_mask,
        bonus_token,
        seed: seed.unwrap_or(base.seed),
    }
}

fn cmd_decode(args: DecodeArgs) -> Result<()> {
    let file: DecodeFileCfg = load_file_cfg(&args.config)?;
    let strategy = parse_strategy(&pick(args.strategy, file.strategy, "ntp".into()))?;
    let policy = build_policy(
        strategy,
        args.tau.or(file.tau),
        args.epsilon.or(file.epsilon),
        args.threshold.or(file.threshold),
        args.max_tokens.or(file.max_tokens),
        args.nucleus_p,
        args.grammar_mask,
        !args.no_bonus_token,
        args.seed.or(file.seed),
    );
    let model = Model::load(&args.ckpt).with_context(|| format!("loading {}", args.ckpt.display()))?;
    let cloud = load_cloud(&args.cloud)?;
    let grid = voxelize(&cloud, model.config.grid, model.config.extent);
    let context = encode_context(&model.store, &grid)?;
    ensure_output_dir(&args.out, args.force)?;
    echo_config(&args.out, &policy)?;
    let trace = decode(&model, &context, &policy)?;
    let (layout, diags) = trace.layout();
    fs::write(args.out.join("layout.txt"), dsl::format_layout(&layout))?;
    fs::write(args.out.join("tokens.txt"), dsl::format_tokens(&trace.tokens))?;
    trace.write_jsonl(&args.out.join("trace.jsonl"))?;
    println!(
        "{}: {} tokens in {} passes (alpha {:.2}), {} walls / {} doors / {} windows, {} diagnostics{}",
        strategy,
        trace.emitted(),
        trace.num_passes(),
        trace.alpha(),
        layout.walls.len(),
        layout.doors.len(),
        layout.windows.len(),
        diags.len(),
        if trace.truncated { " [truncated]" } else { "" }
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval / bench
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "ntp")]
    strategy: String,
    #[arg(long)]
    tau: Option<u32>,
    #[arg(long)]
    epsilon: Option<f32>,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Restrict greedy choices to grammatically legal tokens.
    #[arg(long)]
    grammar_mask: bool,
    #[arg(long)]
    force: bool,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let strategy = parse_strategy(&args.strategy)?;
    let policy = build_policy(
        strategy,
        args.tau,
        args.epsilon,
        args.threshold,
        args.max_tokens,
        None,
        args.grammar_mask,
        true,
        None,
    );
    let model = Model::load(&args.ckpt).with_context(|| format!("loading {}", args.ckpt.display()))?;
    let records = load_split(&args.data, &args.split)?;
    ensure_output_dir(&args.out, args.force)?;
    echo_config(&args.out, &policy)?;
    let specs = vec![BenchSpec { method: strategy.name().into(), model: &model, policy }];
    let (report, _) = benchmark(&specs, &records)?;
    report.write(&args.out)?;
    print!("{}", report.to_text_table());
    Ok(())
}

#[derive(Args)]
struct BenchArgs {
    /// Checkpoint directories; repeat for multiple models.
    #[arg(long)]
    ckpt: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "val")]
    split: String,
    /// Comma-separated strategy list.
    #[arg(long, default_value = "ntp,ssd,cgd")]
    strategies: String,
    #[arg(long)]
    tau: Option<u32>,
    #[arg(long)]
    epsilon: Option<f32>,
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Print full-scale (L=8, d=512) parameter counts and exit.
    #[arg(long)]
    full_scale_params_only: bool,
    #[arg(long)]
    force: bool,
}

fn full_scale_param_table() -> String {
    let mut rows = Vec::new();
    let count = |cfg: DecoderConfig| Model::new(cfg, 0).unwrap().count_params().decoder_side();
    rows.push(("ntp", 1, count(DecoderConfig::full_scale(1))));
    rows.push(("mtp-unshared", 8, {
        let mut c = DecoderConfig::full_scale(8);
        c.head_sharing = false;
        count(c)
    }));
    rows.push(("ssd-shared", 8, count(DecoderConfig::full_scale(8))));
    rows.push(("cgd-shared", 8, {
        let mut c = DecoderConfig::full_scale(8);
        c.confidence_heads = true;
        count(c)
    }));
    rows.push(("cgd-unshared", 8, {
        let mut c = DecoderConfig::full_scale(8);
        c.confidence_heads = true;
        c.head_sharing = false;
        count(c)
    }));
    let mut out = format!("{:<14} {:>3} {:>12} {:>9}\n", "method", "n", "params", "millions");
    for (name, n, p) in rows {
        out.push_str(&format!("{:<14} {:>3} {:>12} {:>8.2}M\n", name, n, p, p as f64 / 1e6));
    }
    out
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.full_scale_params_only {
        print!("{}", full_scale_param_table());
        return Ok(());
    }
    let data = args.data.clone().context("--data is required unless --full-scale-params-only")?;
    let out = args.out.clone().context("--out is required unless --full-scale-params-only")?;
    if args.ckpt.is_empty() {
        bail!("at least one --ckpt is required");
    }
    let strategies: Vec<Strategy> = args
        .strategies
        .split(',')
        .map(|s| parse_strategy(s.trim()))
        .collect::<Result<_>>()?;
    let models: Vec<(String, Model)> = args
        .ckpt
        .iter()
        .map(|dir| {
            let model = Model::load(dir).with_context(|| format!("loading {}", dir.display()))?;
            let label = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string());
            Ok((label, model))
        })
        .collect::<Result<_>>()?;
    let records = load_split(&data, &args.split)?;
    ensure_output_dir(&out, args.force)?;
    let mut specs = Vec::new();
    for (label, model) in &models {
        for &strategy in &strategies {
            let policy = build_policy(
                strategy,
                args.tau,
                args.epsilon,
                args.threshold,
                args.max_tokens,
                None,
                false,
                true,
                None,
            );
            let method = if models.len() == 1 {
                strategy.name().to_string()
            } else {
                format!("{label}/{strategy}")
            };
            specs.push(BenchSpec { method, model, policy });
        }
    }
    let (report, traces) = benchmark(&specs, &records)?;
    report.write(&out)?;
    for (spec, traces) in specs.iter().zip(&traces) {
        let stats = alpha_stats(traces)?;
        let tag = spec.method.replace('/', "_");
        write_histogram_csv(stats.histogram.iter().copied(), &out.join(format!("hist_accept_{tag}.csv")))?;
        if spec.policy.strategy == Strategy::Cgd
            || spec.policy.strategy == Strategy::ProductThre
            || spec.policy.strategy == Strategy::SoftmaxThre
        {
            let (accepted, rejected) = softmax_score_split(traces);
            let bins = 20;
            let label = |b: usize| format!("{:.2}", b as f32 / bins as f32);
            write_histogram_csv(
                bin_scores(&accepted, bins).into_iter().enumerate().map(|(b, c)| (label(b), c)),
                &out.join(format!("hist_scores_accepted_{tag}.csv")),
            )?;
            write_histogram_csv(
                bin_scores(&rejected, bins).into_iter().enumerate().map(|(b, c)| (label(b), c)),
                &out.join(format!("hist_scores_rejected_{tag}.csv")),
            )?;
        }
    }
    print!("{}", report.to_text_table());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_aliases() {
        assert_eq!(parse_strategy("product_thre").unwrap(), Strategy::ProductThre);
        assert_eq!(parse_strategy("mtp").unwrap(), Strategy::MtpVanilla);
        assert_eq!(parse_strategy("ssd").unwrap(), Strategy::Ssd);
        assert!(parse_strategy("beam").is_err());
    }

    #[test]
    fn scene_counts_validation() {
        assert_eq!(parse_scene_counts("2000,200,200").unwrap(), vec![2000, 200, 200]);
        assert!(parse_scene_counts("1,2").is_err());
        assert!(parse_scene_counts("a,b,c").is_err());
    }

    #[test]
    fn full_scale_table_mentions_all_methods() {
        let table = full_scale_param_table();
        for m in ["ntp", "mtp-unshared", "ssd-shared", "cgd-shared", "cgd-unshared"] {
            assert!(table.contains(m));
        }
    }
}
