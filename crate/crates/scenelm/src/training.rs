//! Losses and the optimization loop.
//!
//! The multi-token loss is a weighted sum of per-head cross-entropies: head i
//! predicts the token i positions ahead and is weighted by lambda_h^(i-1).
//! Confidence heads are trained with binary cross-entropy against on-the-fly
//! targets: does head i's greedy token at position k agree (within tau bins)
//! with head 1's greedy token at position k+i-1?

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::dsl;
use crate::encoder::{self, voxelize, OccupancyGrid};
use crate::error::ModelError;
use crate::model::{head_tag, DecoderConfig, Model};
use crate::scenegen::{substream, SceneRecord};
use crate::tensor::{AdamConfig, Tape, Var};

pub struct TrainScene {
    pub tokens: Vec<u32>,
    pub grid: OccupancyGrid,
}

/// Tokenizes layouts and voxelizes point clouds for the given model config.
pub fn prepare_scenes(records: &[SceneRecord], cfg: &DecoderConfig) -> Vec<TrainScene> {
    records
        .iter()
        .map(|r| TrainScene {
            tokens: dsl::encode_layout(&r.layout),
            grid: voxelize(&r.cloud, cfg.grid, cfg.extent),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Per-head loss decay.
    pub lambda_h: f32,
    /// Confidence-loss weight.
    pub lambda_c: f32,
    /// Numeric tolerance (in bins) for confidence targets.
    pub tau: u32,
    pub grad_clip: f32,
    pub weight_decay: f32,
    /// Update only the fresh head-assembly parameters (projections,
    /// confidence heads, unshared extra token heads); trunk, encoder, and
    /// the first head's token head stay fixed, so a fine-tuned model's
    /// first head stays bit-identical to its initializer.
    pub freeze_trunk: bool,
    /// Learning-rate multiplier for the pretrained parameters when
    /// `freeze_trunk` is off; fresh head-assembly parameters always train
    /// at the full rate. Lets a fine-tune adapt the trunk gently without
    /// starving the from-scratch heads.
    pub trunk_lr_scale: f32,
    /// Calibration phase: update only the confidence heads, leaving every
    /// other weight (and therefore the agreement targets) fixed.
    pub conf_only: bool,
    /// Train draft heads (2..n) against head 1's own teacher-forced
    /// choices instead of the ground truth. Raises draft/verifier
    /// agreement, which is what speculative acceptance rates depend on;
    /// head 1 keeps its ground-truth loss.
    pub distill_drafts: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 16,
            lr: 1e-3,
            lambda_h: 0.8,
            lambda_c: 0.5,
            tau: 0,
            grad_clip: 1.0,
            weight_decay: 0.01,
            freeze_trunk: false,
            trunk_lr_scale: 1.0,
            conf_only: false,
            distill_drafts: false,
            seed: 0,
        }
    }
}

/// Parameters copied from a next-token initializer: trunk, encoder, and
/// head 1's token head (the shared token head when sharing is enabled).
/// Pinned by `freeze_trunk`, slowed by `trunk_lr_scale`.
fn pretrained_param(name: &str) -> bool {
    name.starts_with("decoder.")
        || name.starts_with("encoder.")
        || (name.starts_with("token_head.") && !name.starts_with("token_head.h"))
        || name.starts_with("token_head.h1.")
}

/// Step decay: x0.1 at 60% and again at 85% of the epoch budget.
pub fn lr_at_epoch(base: f32, epoch: usize, total: usize) -> f32 {
    let frac = (epoch as f32 + 0.5) / total.max(1) as f32;
    if frac >= 0.85 {
        base * 0.01
    } else if frac >= 0.60 {
        base * 0.1
    } else {
        base
    }
}

pub struct BatchLoss {
    pub total: Var,
    pub loss_mtp: f32,
    pub loss_conf: f32,
}

fn argmax_row(row: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Shift-i next-token targets and validity mask for a padded batch.
fn head_targets(
    scenes: &[&TrainScene],
    seq_len: usize,
    i: usize,
) -> (Vec<usize>, Vec<f32>) {
    let b = scenes.len();
    let mut targets = vec![0usize; b * seq_len];
    let mut mask = vec![0f32; b * seq_len];
    for (s, sc) in scenes.iter().enumerate() {
        for k in 0..seq_len {
            if k + i < sc.tokens.len() {
                targets[s * seq_len + k] = sc.tokens[k + i] as usize;
                mask[s * seq_len + k] = 1.0;
            }
        }
    }
    (targets, mask)
}

/// Confidence targets for head `i`: 1 where head i's greedy token at k agrees
/// with head 1's greedy token at k+i-1 under the tolerance, else 0.
pub fn confidence_targets(
    head1_argmax: &[u32],
    headi_argmax: &[u32],
    mask: &[f32],
    seq_len: usize,
    i: usize,
    tau: u32,
) -> Vec<f32> {
    let mut targets = vec![0f32; headi_argmax.len()];
    for (idx, t) in targets.iter_mut().enumerate() {
        if mask[idx] == 0.0 {
            continue;
        }
        let k = idx % seq_len;
        let verifier = head1_argmax[idx - k + (k + i - 1)];
        if dsl::tokens_agree(headi_argmax[idx], verifier, tau).unwrap_or(false) {
            *t = 1.0;
        }
    }
    targets
}

/// Builds the full forward graph for one batch and returns the scalar loss
/// node plus the detached loss components.
pub fn batch_loss(
    model: &Model,
    tape: &mut Tape,
    scenes: &[&TrainScene],
    cfg: &TrainConfig,
) -> Result<BatchLoss, ModelError> {
    if scenes.is_empty() {
        return Err(ModelError::Other("empty batch".into()));
    }
    let mcfg = &model.config;
    let n = mcfg.n;
    let seq_len = scenes.iter().map(|s| s.tokens.len() - 1).max().unwrap();
    let b = scenes.len();
    let mut inputs = vec![dsl::PAD; b * seq_len];
    for (s, sc) in scenes.iter().enumerate() {
        let inp = &sc.tokens[..sc.tokens.len() - 1];
        inputs[s * seq_len..s * seq_len + inp.len()].copy_from_slice(inp);
    }
    let contexts: Vec<Var> = scenes
        .iter()
        .map(|s| encoder::encode_context_tape(tape, &model.store, &s.grid))
        .collect::<Result<_, _>>()?;
    let out = model.forward_train(tape, &inputs, b, seq_len, &contexts)?;

    let mut total: Option<Var> = None;
    let mut loss_mtp = 0.0;
    let head1_argmax: Vec<u32> = tape
        .value(out.head_logits[0])
        .chunks(mcfg.vocab)
        .map(argmax_row)
        .collect();
    let mut loss_conf = 0.0;
    for i in 1..=n {
        let (mut targets, mask) = head_targets(scenes, seq_len, i);
        if mask.iter().all(|&m| m == 0.0) {
            continue;
        }
        if i >= 2 && cfg.distill_drafts {
            for idx in 0..targets.len() {
                if mask[idx] != 0.0 {
                    let k = idx % seq_len;
                    targets[idx] = head1_argmax[idx - k + (k + i - 1)] as usize;
                }
            }
        }
        let ce = tape.cross_entropy(out.head_logits[i - 1], &targets, &mask)?;
        let weighted = tape.scale(ce, cfg.lambda_h.powi(i as i32 - 1));
        loss_mtp += tape.value(weighted)[0];
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
        if i >= 2 && mcfg.confidence_heads {
            let headi_argmax: Vec<u32> = tape
                .value(out.head_logits[i - 1])
                .chunks(mcfg.vocab)
                .map(argmax_row)
                .collect();
            let ct = confidence_targets(&head1_argmax, &headi_argmax, &mask, seq_len, i, cfg.tau);
            let bce = tape.binary_cross_entropy(out.head_conf[i - 2], &ct, &mask)?;
            loss_conf += tape.value(bce)[0];
            let weighted = tape.scale(bce, cfg.lambda_c);
            let t = total.unwrap();
            total = Some(tape.add(t, weighted)?);
        }
    }
    let total = total.ok_or_else(|| ModelError::Other("no unmasked targets in batch".into()))?;
    Ok(BatchLoss { total, loss_mtp, loss_conf })
}

#[derive(Clone, Copy, Debug, Serialize, Default)]
pub struct EpochStats {
    pub loss_mtp: f32,
    pub loss_conf: f32,
    pub loss_total: f32,
}

#[derive(Serialize)]
struct LogRow<'a> {
    epoch: usize,
    split: &'a str,
    loss_mtp: f32,
    loss_conf: f32,
    loss_total: f32,
    lr: f32,
    wall_seconds: f64,
}

pub struct TrainReport {
    pub epochs: usize,
    pub best_val: f32,
    pub final_train: EpochStats,
    pub history: Vec<(EpochStats, EpochStats)>,
}

fn accumulate(stats: &mut EpochStats, bl: &BatchLoss, lambda_c: f32, weight: f32) {
    stats.loss_mtp += bl.loss_mtp * weight;
    stats.loss_conf += bl.loss_conf * weight;
    stats.loss_total += (bl.loss_mtp + lambda_c * bl.loss_conf) * weight;
}

/// Evaluates the mean loss over a split without touching gradients.
pub fn evaluate(model: &Model, scenes: &[TrainScene], cfg: &TrainConfig) -> Result<EpochStats, ModelError> {
    let mut stats = EpochStats::default();
    if scenes.is_empty() {
        return Ok(stats);
    }
    let refs: Vec<&TrainScene> = scenes.iter().collect();
    let mut seen = 0usize;
    for chunk in refs.chunks(cfg.batch_size) {
        let mut tape = Tape::new();
        let bl = batch_loss(model, &mut tape, chunk, cfg)?;
        accumulate(&mut stats, &bl, cfg.lambda_c, chunk.len() as f32);
        seen += chunk.len();
    }
    stats.loss_mtp /= seen as f32;
    stats.loss_conf /= seen as f32;
    stats.loss_total /= seen as f32;
    Ok(stats)
}

/// AdamW training loop with shuffled minibatches, step lr decay, gradient
/// clipping, a JSONL metrics log, and best-validation weight selection.
pub fn train(
    model: &mut Model,
    train_set: &[TrainScene],
    val_set: &[TrainScene],
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainReport, ModelError> {
    if train_set.is_empty() {
        return Err(ModelError::Other("training split is empty".into()));
    }
    let start = Instant::now();
    let mut log = match log_path {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| ModelError::Other(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut write_row = |row: &LogRow| {
        if let Some(f) = log.as_mut() {
            let _ = writeln!(f, "{}", serde_json::to_string(row).unwrap());
        }
    };
    model.store.reset_opt_state();
    let mut rng = substream(cfg.seed, "train-shuffle", 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best_val = f32::INFINITY;
    let mut best_params = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut final_train = EpochStats::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.lr, epoch, cfg.epochs);
        let adam = AdamConfig { lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
        order.shuffle(&mut rng);
        let mut stats = EpochStats::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainScene> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut tape = Tape::new();
            let bl = batch_loss(model, &mut tape, &batch, cfg)?;
            model.store.zero_grads();
            tape.backward(bl.total)?;
            let mut grad_err = None;
            tape.export_grads(|name, grad| {
                if grad_err.is_none() {
                    if let Err(e) = model.store.accumulate_grad(name, grad) {
                        grad_err = Some(e);
                    }
                }
            });
            if let Some(e) = grad_err {
                return Err(e.into());
            }
            if cfg.conf_only {
                model.store.zero_grads_where(|n| !n.starts_with("conf_head"));
                model.store.clip_grad_norm(cfg.grad_clip);
                model.store.adam_step_where(&adam, |n| n.starts_with("conf_head"));
            } else if cfg.freeze_trunk {
                model.store.zero_grads_where(pretrained_param);
                model.store.clip_grad_norm(cfg.grad_clip);
                model.store.adam_step_where(&adam, |n| !pretrained_param(n));
            } else {
                model.store.clip_grad_norm(cfg.grad_clip);
                if cfg.trunk_lr_scale != 1.0 {
                    model.store.adam_step_scaled(&adam, |n| {
                        if pretrained_param(n) { cfg.trunk_lr_scale } else { 1.0 }
                    });
                } else {
                    model.store.adam_step(&adam);
                }
            }
            accumulate(&mut stats, &bl, cfg.lambda_c, batch.len() as f32);
        }
        let n = train_set.len() as f32;
        stats.loss_mtp /= n;
        stats.loss_conf /= n;
        stats.loss_total /= n;
        write_row(&LogRow {
            epoch,
            split: "train",
            loss_mtp: stats.loss_mtp,
            loss_conf: stats.loss_conf,
            loss_total: stats.loss_total,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        let val_stats = evaluate(model, val_set, cfg)?;
        if !val_set.is_empty() {
            write_row(&LogRow {
                epoch,
                split: "val",
                loss_mtp: val_stats.loss_mtp,
                loss_conf: val_stats.loss_conf,
                loss_total: val_stats.loss_total,
                lr,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            if val_stats.loss_total < best_val {
                best_val = val_stats.loss_total;
                best_params = Some(model.store.clone());
            }
        }
        final_train = stats;
        history.push((stats, val_stats));
    }
    if let Some(p) = best_params {
        model.store = p;
    }
    Ok(TrainReport { epochs: cfg.epochs, best_val, final_train, history })
}

/// Builds an MTP model whose trunk, embeddings, encoder, and token heads are
/// copied from a trained next-token model; projection and confidence
/// parameters start fresh. The architectures must agree on every field that
/// shapes the copied tensors.
pub fn init_mtp_from_ntp(ntp: &Model, target: DecoderConfig, seed: u64) -> Result<Model, ModelError> {
    let src = &ntp.config;
    let mut bad = Vec::new();
    if src.layers != target.layers {
        bad.push("layers".to_string());
    }
    if src.width != target.width {
        bad.push("width".to_string());
    }
    if src.heads != target.heads {
        bad.push("heads".to_string());
    }
    if src.vocab != target.vocab {
        bad.push("vocab".to_string());
    }
    if src.max_seq != target.max_seq {
        bad.push("max_seq".to_string());
    }
    if src.grid != target.grid {
        bad.push("grid".to_string());
    }
    if !bad.is_empty() {
        return Err(ModelError::ConfigMismatch(bad));
    }
    let mut model = Model::new(target.clone(), seed)?;
    for (name, param) in ntp.store.iter() {
        if (name.starts_with("decoder.") || name.starts_with("encoder."))
            && model.store.contains(name)
        {
            model.store.get_mut(name)?.value = param.value.clone();
        }
    }
    let src_head = head_tag(src, "token_head", 1);
    let dst_heads: Vec<usize> = if target.head_sharing { vec![1] } else { (1..=target.n).collect() };
    for i in dst_heads {
        let dst = head_tag(&target, "token_head", i);
        for suffix in ["w1", "b1", "w2", "b2", "w3", "b3"] {
            let value = ntp.store.get(&format!("{src_head}.{suffix}"))?.value.clone();
            model.store.get_mut(&format!("{dst}.{suffix}"))?.value = value;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Session;
    use crate::scenegen::{sample_point_cloud, GenParams};

    fn tiny_config(n: usize, conf: bool) -> DecoderConfig {
        DecoderConfig {
            layers: 2,
            width: 32,
            heads: 2,
            vocab: dsl::VOCAB_SIZE,
            max_seq: 128,
            n,
            head_sharing: true,
            confidence_heads: conf,
            grid: 4,
            patch: 1,
            extent: 6.4,
        }
    }

    fn toy_scenes(count: usize, cfg: &DecoderConfig) -> Vec<TrainScene> {
        let params = GenParams { seed: 42, ..GenParams::default() };
        let records: Vec<SceneRecord> = (0..count)
            .map(|i| {
                let layout = crate::scenegen::generate_scene(&params, i as u64).unwrap();
                let cloud = sample_point_cloud(&layout, 200.0, 0.0, i as u64);
                SceneRecord { index: i, layout, cloud }
            })
            .collect();
        prepare_scenes(&records, cfg)
    }

    #[test]
    fn lr_schedule_milestones() {
        assert_eq!(lr_at_epoch(1.0, 0, 100), 1.0);
        assert_eq!(lr_at_epoch(1.0, 59, 100), 1.0);
        assert_eq!(lr_at_epoch(1.0, 60, 100), 0.1);
        assert_eq!(lr_at_epoch(1.0, 84, 100), 0.1);
        assert!((lr_at_epoch(1.0, 85, 100) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn head_targets_shift() {
        let cfg = tiny_config(2, false);
        let scene = TrainScene {
            tokens: vec![1, 3, 10, 11, 2],
            grid: voxelize(&Default::default(), cfg.grid, cfg.extent),
        };
        let scenes = vec![&scene];
        let (t1, m1) = head_targets(&scenes, 4, 1);
        assert_eq!(t1, vec![3, 10, 11, 2]);
        assert_eq!(m1, vec![1.0; 4]);
        let (t2, m2) = head_targets(&scenes, 4, 2);
        assert_eq!(t2[..3], [10, 11, 2]);
        assert_eq!(m2, vec![1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn confidence_target_agreement_rules() {
        // head 1 greedy at positions 1..: [20, 4, 2, 2]
        let head1 = vec![9, 20, 4, 2, 2];
        // head 2 greedy at positions 0..: [21, 4, 30, 2, 2]
        let head2 = vec![21, 4, 30, 2, 2];
        let mask = vec![1.0, 1.0, 1.0, 0.0, 0.0];
        let t0 = confidence_targets(&head1, &head2, &mask, 5, 2, 0);
        // 21 vs 20 (numeric, off by one bin), 4 vs 4 exact, 30 vs 2 mixed
        assert_eq!(t0, vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let t1 = confidence_targets(&head1, &head2, &mask, 5, 2, 1);
        assert_eq!(t1, vec![1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mtp_loss_weights_decay_per_head() {
        let cfg = tiny_config(3, false);
        let model = Model::new(cfg.clone(), 0).unwrap();
        let scenes = toy_scenes(2, &cfg);
        let refs: Vec<&TrainScene> = scenes.iter().collect();
        let mut tc = TrainConfig { lambda_h: 0.0, ..TrainConfig::default() };
        let mut tape = Tape::new();
        let only_head1 = batch_loss(&model, &mut tape, &refs, &tc).unwrap();
        tc.lambda_h = 0.8;
        let mut tape = Tape::new();
        let all_heads = batch_loss(&model, &mut tape, &refs, &tc).unwrap();
        // lambda 0 keeps only head 1 (0^0 = 1); adding heads adds loss
        assert!(all_heads.loss_mtp > only_head1.loss_mtp);
        // untrained model: every head's CE is near ln(V)
        let uniform = (dsl::VOCAB_SIZE as f32).ln();
        assert!((only_head1.loss_mtp - uniform).abs() < 0.5);
        let expected_all = uniform * (1.0 + 0.8 + 0.8 * 0.8);
        assert!((all_heads.loss_mtp - expected_all).abs() < 1.5);
    }

    #[test]
    fn training_reduces_loss() {
        let cfg = tiny_config(1, false);
        let mut model = Model::new(cfg.clone(), 7).unwrap();
        let scenes = toy_scenes(4, &cfg);
        let tc = TrainConfig { epochs: 80, batch_size: 2, seed: 1, ..TrainConfig::default() };
        let before = evaluate(&model, &scenes, &tc).unwrap();
        let report = train(&mut model, &scenes, &scenes, &tc, None).unwrap();
        assert!(report.best_val < before.loss_total * 0.5, "{} vs {}", report.best_val, before.loss_total);
    }

    #[test]
    fn confidence_loss_active_only_with_heads() {
        let cfg = tiny_config(2, true);
        let model = Model::new(cfg.clone(), 0).unwrap();
        let scenes = toy_scenes(2, &cfg);
        let refs: Vec<&TrainScene> = scenes.iter().collect();
        let tc = TrainConfig::default();
        let mut tape = Tape::new();
        let bl = batch_loss(&model, &mut tape, &refs, &tc).unwrap();
        assert!(bl.loss_conf > 0.0);
        let total = tape.value(bl.total)[0];
        assert!((total - (bl.loss_mtp + tc.lambda_c * bl.loss_conf)).abs() < 1e-4);
    }

    #[test]
    fn warm_start_copies_trunk_and_heads() {
        let ntp_cfg = tiny_config(1, false);
        let ntp = Model::new(ntp_cfg.clone(), 3).unwrap();
        let mut mtp_cfg = tiny_config(4, true);
        let mtp = init_mtp_from_ntp(&ntp, mtp_cfg.clone(), 9).unwrap();
        for name in ["decoder.tok_emb", "decoder.block0.self.wq", "encoder.pos", "token_head.w3"] {
            assert_eq!(
                ntp.store.get(name).unwrap().value,
                mtp.store.get(name).unwrap().value,
                "{name} not copied"
            );
        }
        assert!(mtp.store.contains("proj.ff0.w1"));
        assert!(mtp.store.contains("conf_head.w3"));

        mtp_cfg.width = 64;
        let err = match init_mtp_from_ntp(&ntp, mtp_cfg, 9) {
            Ok(_) => panic!("mismatched width must fail"),
            Err(e) => e,
        };
        match err {
            ModelError::ConfigMismatch(fields) => {
                assert!(fields.contains(&"width".to_string()))
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn frozen_finetune_keeps_first_head_fixed() {
        let ntp_cfg = tiny_config(1, false);
        let mut ntp = Model::new(ntp_cfg.clone(), 5).unwrap();
        let scenes = toy_scenes(3, &ntp_cfg);
        let tc = TrainConfig { epochs: 3, batch_size: 3, ..TrainConfig::default() };
        train(&mut ntp, &scenes, &[], &tc, None).unwrap();
        let mtp_cfg = tiny_config(4, true);
        let mut mtp = init_mtp_from_ntp(&ntp, mtp_cfg.clone(), 11).unwrap();
        let ft = TrainConfig { epochs: 4, batch_size: 3, freeze_trunk: true, ..tc };
        let scenes4 = toy_scenes(3, &mtp_cfg);
        train(&mut mtp, &scenes4, &[], &ft, None).unwrap();
        for name in ["decoder.tok_emb", "decoder.block0.self.wq", "encoder.pos", "token_head.w3"] {
            assert_eq!(
                ntp.store.get(name).unwrap().value,
                mtp.store.get(name).unwrap().value,
                "{name} drifted"
            );
        }
        // fresh projections must have moved
        let init = init_mtp_from_ntp(&ntp, mtp_cfg, 11).unwrap();
        assert_ne!(
            init.store.get("proj.ff0.w1").unwrap().value,
            mtp.store.get("proj.ff0.w1").unwrap().value
        );
        let ctx = encoder::encode_context(&ntp.store, &scenes[0].grid).unwrap();
        let mut sa = Session::new(&ntp, &ctx).unwrap();
        let mut sb = Session::new(&mtp, &ctx).unwrap();
        let ha = sa.forward_tokens(&[dsl::START, dsl::MAKE_WALL]).unwrap();
        let hb = sb.forward_tokens(&[dsl::START, dsl::MAKE_WALL]).unwrap();
        let la = sa.mtp_heads(ha.last().unwrap()).unwrap();
        let lb = sb.mtp_heads(hb.last().unwrap()).unwrap();
        assert_eq!(la.logits[0], lb.logits[0]);
    }

    #[test]
    fn warm_start_preserves_next_token_behavior() {
        let ntp_cfg = tiny_config(1, false);
        let mut ntp = Model::new(ntp_cfg.clone(), 5).unwrap();
        let scenes = toy_scenes(3, &ntp_cfg);
        let tc = TrainConfig { epochs: 3, batch_size: 3, ..TrainConfig::default() };
        train(&mut ntp, &scenes, &[], &tc, None).unwrap();
        let mtp = init_mtp_from_ntp(&ntp, tiny_config(4, true), 11).unwrap();
        let ctx = encoder::encode_context(&ntp.store, &scenes[0].grid).unwrap();
        let mut sa = Session::new(&ntp, &ctx).unwrap();
        let mut sb = Session::new(&mtp, &ctx).unwrap();
        let ha = sa.forward_tokens(&[dsl::START, dsl::MAKE_WALL]).unwrap();
        let hb = sb.forward_tokens(&[dsl::START, dsl::MAKE_WALL]).unwrap();
        let la = sa.mtp_heads(ha.last().unwrap()).unwrap();
        let lb = sb.mtp_heads(hb.last().unwrap()).unwrap();
        assert_eq!(la.logits[0], lb.logits[0]);
        assert_eq!(lb.logits.len(), 4);
    }
}
