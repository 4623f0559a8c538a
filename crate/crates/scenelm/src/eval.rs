//! Geometric F1 evaluation, acceptance statistics, and the benchmark harness.
//!
//! Predicted and ground-truth layouts are compared per entity class with a
//! greedy one-to-one matcher under a distance threshold; F1 is averaged over
//! thresholds 0.05 m to 1.00 m in 0.05 m steps. The benchmark decodes a
//! dataset split under several (model, policy) pairs and emits a JSON report
//! plus aligned text table and histogram CSVs.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::decoding::{decode, DecodePolicy, DecodeTrace};
use crate::dsl::{EntityClass, Opening, SceneLayout, Wall};
use crate::encoder::{encode_context, voxelize};
use crate::error::EvalError;
use crate::model::Model;
use crate::scenegen::SceneRecord;

pub const F1_THRESHOLDS: usize = 20;
pub const F1_STEP: f32 = 0.05;

#[derive(Clone, Copy, Debug)]
pub enum EntityRef<'a> {
    Wall(&'a Wall),
    Door(&'a Opening),
    Window(&'a Opening),
}

impl<'a> EntityRef<'a> {
    pub fn class(&self) -> EntityClass {
        match self {
            EntityRef::Wall(_) => EntityClass::Wall,
            EntityRef::Door(_) => EntityClass::Door,
            EntityRef::Window(_) => EntityClass::Window,
        }
    }
}

fn dist3(a: [f32; 3], b: [f32; 3]) -> f32 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn wall_endpoints(w: &Wall) -> ([f32; 3], [f32; 3]) {
    ([w.x1, w.y1, w.z1], [w.x2, w.y2, w.z2])
}

fn opening_center(o: &Opening) -> [f32; 3] {
    [o.cx, o.cy, o.cz]
}

/// Walls: min over the two endpoint orderings of the max endpoint distance.
/// Openings: center distance. Height/thickness are ignored.
pub fn entity_distance(a: EntityRef, b: EntityRef) -> Result<f32, EvalError> {
    match (a, b) {
        (EntityRef::Wall(x), EntityRef::Wall(y)) => {
            let (x1, x2) = wall_endpoints(x);
            let (y1, y2) = wall_endpoints(y);
            let forward = dist3(x1, y1).max(dist3(x2, y2));
            let reversed = dist3(x1, y2).max(dist3(x2, y1));
            Ok(forward.min(reversed))
        }
        (EntityRef::Door(x), EntityRef::Door(y)) | (EntityRef::Window(x), EntityRef::Window(y)) => {
            Ok(dist3(opening_center(x), opening_center(y)))
        }
        _ => Err(EvalError::ClassMismatch { a: a.class().name(), b: b.class().name() }),
    }
}

fn class_entities(layout: &SceneLayout, class: EntityClass) -> Vec<EntityRef<'_>> {
    match class {
        EntityClass::Wall => layout.walls.iter().map(EntityRef::Wall).collect(),
        EntityClass::Door => layout.doors.iter().map(EntityRef::Door).collect(),
        EntityClass::Window => layout.windows.iter().map(EntityRef::Window).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrF1 {
    pub precision: f32,
    pub recall: f32,
    pub f1: f32,
}

fn score(matches: usize, n_pred: usize, n_gt: usize) -> PrF1 {
    if n_pred == 0 && n_gt == 0 {
        return PrF1 { precision: 1.0, recall: 1.0, f1: 1.0 };
    }
    if n_pred == 0 || n_gt == 0 {
        return PrF1 { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let precision = matches as f32 / n_pred as f32;
    let recall = matches as f32 / n_gt as f32;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    PrF1 { precision, recall, f1 }
}

/// All same-class pairs sorted ascending by distance, ties broken by
/// (pred index, gt index).
fn sorted_pairs(pred: &[EntityRef], gt: &[EntityRef]) -> Vec<(f32, usize, usize)> {
    let mut pairs = Vec::with_capacity(pred.len() * gt.len());
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            pairs.push((entity_distance(*p, *g).unwrap(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    pairs
}

fn greedy_matches(pairs: &[(f32, usize, usize)], n_pred: usize, n_gt: usize, d: f32) -> usize {
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut matches = 0;
    for &(dist, i, j) in pairs {
        if dist > d {
            break;
        }
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            matches += 1;
        }
    }
    matches
}

pub fn f1_at_threshold(pred: &SceneLayout, gt: &SceneLayout, class: EntityClass, d: f32) -> PrF1 {
    let p = class_entities(pred, class);
    let g = class_entities(gt, class);
    let pairs = sorted_pairs(&p, &g);
    score(greedy_matches(&pairs, p.len(), g.len(), d), p.len(), g.len())
}

/// Mean F1 over thresholds 0.05, 0.10, ..., 1.00.
pub fn f1_averaged(pred: &SceneLayout, gt: &SceneLayout, class: EntityClass) -> f32 {
    let p = class_entities(pred, class);
    let g = class_entities(gt, class);
    let pairs = sorted_pairs(&p, &g);
    let mut sum = 0.0;
    for t in 1..=F1_THRESHOLDS {
        let d = t as f32 * F1_STEP;
        sum += score(greedy_matches(&pairs, p.len(), g.len(), d), p.len(), g.len()).f1;
    }
    sum / F1_THRESHOLDS as f32
}

/// Mean of the three per-class averaged F1 scores.
pub fn f1_mean(pred: &SceneLayout, gt: &SceneLayout) -> f32 {
    EntityClass::ALL.iter().map(|&c| f1_averaged(pred, gt, c)).sum::<f32>() / 3.0
}

/// Maximum bipartite matching (augmenting paths) under a threshold, used as
/// the exactness oracle for the greedy matcher on small scenes.
pub fn optimal_matches(pred: &[EntityRef], gt: &[EntityRef], d: f32) -> usize {
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| {
            gt.iter()
                .enumerate()
                .filter(|(_, g)| entity_distance(*p, **g).unwrap() <= d)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut match_gt = vec![usize::MAX; gt.len()];
    fn augment(i: usize, adj: &[Vec<usize>], match_gt: &mut [usize], seen: &mut [bool]) -> bool {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                if match_gt[j] == usize::MAX || augment(match_gt[j], adj, match_gt, seen) {
                    match_gt[j] = i;
                    return true;
                }
            }
        }
        false
    }
    let mut total = 0;
    for i in 0..pred.len() {
        let mut seen = vec![false; gt.len()];
        if augment(i, &adj, &mut match_gt, &mut seen) {
            total += 1;
        }
    }
    total
}

pub fn f1_at_threshold_optimal(pred: &SceneLayout, gt: &SceneLayout, class: EntityClass, d: f32) -> PrF1 {
    let p = class_entities(pred, class);
    let g = class_entities(gt, class);
    score(optimal_matches(&p, &g, d), p.len(), g.len())
}

#[derive(Clone, Debug, Serialize)]
pub struct AlphaStats {
    pub alpha: f32,
    pub total_tokens: usize,
    pub total_passes: usize,
    /// (tokens committed in a pass, number of such passes)
    pub histogram: Vec<(usize, usize)>,
}

/// Mean accepted tokens per forward pass plus the per-pass commit histogram.
pub fn alpha_stats(traces: &[DecodeTrace]) -> Result<AlphaStats, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::EmptyTraces);
    }
    let mut total_tokens = 0;
    let mut total_passes = 0;
    let mut counts: Vec<usize> = Vec::new();
    for t in traces {
        total_tokens += t.emitted();
        total_passes += t.num_passes();
        for p in &t.passes {
            let c = p.committed.len();
            if c >= counts.len() {
                counts.resize(c + 1, 0);
            }
            counts[c] += 1;
        }
    }
    if total_passes == 0 {
        return Err(EvalError::EmptyTraces);
    }
    let histogram = counts
        .iter()
        .enumerate()
        .filter(|&(bin, &n)| bin > 0 && n > 0)
        .map(|(bin, &n)| (bin, n))
        .collect();
    Ok(AlphaStats {
        alpha: total_tokens as f32 / total_passes as f32,
        total_tokens,
        total_passes,
        histogram,
    })
}

/// Softmax scores of (a) the first rejected head position per pass and
/// (b) every accepted position, over all passes that carried scores.
pub fn softmax_score_split(traces: &[DecodeTrace]) -> (Vec<f32>, Vec<f32>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for t in traces {
        for p in &t.passes {
            if p.scores.is_empty() {
                continue;
            }
            let a = p.committed.len().min(p.scores.len());
            accepted.extend_from_slice(&p.scores[..a]);
            if a < p.scores.len() {
                rejected.push(p.scores[a]);
            }
        }
    }
    (accepted, rejected)
}

/// Counts per uniform bin over [0, 1].
pub fn bin_scores(scores: &[f32], bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let b = ((s * bins as f32) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

pub fn write_histogram_csv<I, B>(rows: I, path: &Path) -> Result<(), EvalError>
where
    I: IntoIterator<Item = (B, usize)>,
    B: std::fmt::Display,
{
    let mut out = String::from("bin,count\n");
    for (bin, count) in rows {
        out.push_str(&format!("{bin},{count}\n"));
    }
    fs::write(path, out).map_err(|e| EvalError::Other(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub n: usize,
    pub params: usize,
    pub passes_mean: f32,
    pub latency_ms: f32,
    pub alpha: f32,
    pub f1_wall: f32,
    pub f1_window: f32,
    pub f1_door: f32,
    pub f1_mean: f32,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub struct BenchSpec<'a> {
    pub method: String,
    pub model: &'a Model,
    pub policy: DecodePolicy,
}

/// Builds a rayon pool sized by `FSS_THREADS` when set.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("FSS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().expect("rayon pool")
}

/// Decodes every scene under every (model, policy) pair and aggregates one
/// report row per pair. Also returns the raw traces, in spec order, for
/// histogram exports.
pub fn benchmark(
    specs: &[BenchSpec],
    records: &[SceneRecord],
) -> Result<(EvalReport, Vec<Vec<DecodeTrace>>), EvalError> {
    if records.is_empty() {
        return Err(EvalError::Other("no scenes to evaluate".into()));
    }
    let pool = thread_pool();
    let mut rows = Vec::with_capacity(specs.len());
    let mut all_traces = Vec::with_capacity(specs.len());
    for spec in specs {
        let model = spec.model;
        let per_scene: Vec<(DecodeTrace, f32, f64)> = pool.install(|| {
            records
                .par_iter()
                .map(|rec| {
                    let grid = voxelize(&rec.cloud, model.config.grid, model.config.extent);
                    let context = encode_context(&model.store, &grid)?;
                    let start = Instant::now();
                    let trace = decode(model, &context, &spec.policy)?;
                    let latency = start.elapsed().as_secs_f64() * 1e3;
                    let (layout, _) = trace.layout();
                    let f1 = f1_mean(&layout, &rec.layout);
                    Ok((trace, f1, latency))
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })?;
        let traces: Vec<DecodeTrace> = per_scene.iter().map(|(t, _, _)| t.clone()).collect();
        let stats = alpha_stats(&traces)?;
        let m = records.len() as f32;
        let mut f1_by_class = [0.0f32; 3];
        for ((trace, _, _), rec) in per_scene.iter().zip(records) {
            let (layout, _) = trace.layout();
            for (k, &class) in EntityClass::ALL.iter().enumerate() {
                f1_by_class[k] += f1_averaged(&layout, &rec.layout, class);
            }
        }
        for v in &mut f1_by_class {
            *v /= m;
        }
        rows.push(ReportRow {
            method: spec.method.clone(),
            n: model.config.n,
            params: model.count_params().decoder_side(),
            passes_mean: stats.total_passes as f32 / m,
            latency_ms: (per_scene.iter().map(|(_, _, l)| l).sum::<f64>() / m as f64) as f32,
            alpha: stats.alpha,
            f1_wall: f1_by_class[0],
            f1_door: f1_by_class[1],
            f1_window: f1_by_class[2],
            f1_mean: (f1_by_class[0] + f1_by_class[1] + f1_by_class[2]) / 3.0,
        });
        all_traces.push(traces);
    }
    Ok((EvalReport { rows }, all_traces))
}

impl EvalReport {
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<14} {:>3} {:>10} {:>8} {:>9} {:>6} {:>8} {:>9} {:>8} {:>8}\n",
            "method", "n", "params", "passes", "lat_ms", "alpha", "f1_wall", "f1_window", "f1_door", "f1_mean"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>3} {:>10} {:>8.1} {:>9.2} {:>6.2} {:>8.3} {:>9.3} {:>8.3} {:>8.3}\n",
                r.method, r.n, r.params, r.passes_mean, r.latency_ms, r.alpha, r.f1_wall, r.f1_window, r.f1_door, r.f1_mean
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir).map_err(|e| EvalError::Other(format!("{}: {e}", dir.display())))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self).unwrap())
            .map_err(|e| EvalError::Other(format!("{}: {e}", json.display())))?;
        let txt = dir.join("report.txt");
        fs::write(&txt, self.to_text_table())
            .map_err(|e| EvalError::Other(format!("{}: {e}", txt.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_scene, substream, GenParams};
    use rand::Rng;

    fn wall(x1: f32, y1: f32, x2: f32, y2: f32) -> Wall {
        Wall { x1, y1, z1: 0.0, x2, y2, z2: 0.0, height: 2.8, thickness: 0.1 }
    }

    #[test]
    fn wall_distance_ordering_invariant() {
        let a = wall(0.0, 0.0, 4.0, 0.0);
        let same = wall(0.0, 0.0, 4.0, 0.0);
        let reversed = wall(4.0, 0.0, 0.0, 0.0);
        let ra = EntityRef::Wall(&a);
        assert_eq!(entity_distance(ra, EntityRef::Wall(&same)).unwrap(), 0.0);
        assert_eq!(entity_distance(ra, EntityRef::Wall(&reversed)).unwrap(), 0.0);
    }

    #[test]
    fn opening_distance_is_center_distance() {
        let a = Opening { cx: 0.0, cy: 0.0, cz: 0.0, width: 1.0, height: 1.0 };
        let b = Opening { cx: 3.0, cy: 4.0, cz: 0.0, width: 0.5, height: 2.0 };
        let d = entity_distance(EntityRef::Door(&a), EntityRef::Door(&b)).unwrap();
        assert!((d - 5.0).abs() < 1e-6);
    }

    #[test]
    fn class_mismatch_errors() {
        let w = wall(0.0, 0.0, 1.0, 0.0);
        let o = Opening { cx: 0.0, cy: 0.0, cz: 0.0, width: 1.0, height: 1.0 };
        assert!(entity_distance(EntityRef::Wall(&w), EntityRef::Door(&o)).is_err());
        assert!(entity_distance(EntityRef::Door(&o), EntityRef::Window(&o)).is_err());
    }

    #[test]
    fn f1_spec_examples() {
        let gt = SceneLayout {
            walls: vec![wall(0.0, 0.0, 4.0, 0.0), wall(4.0, 0.0, 4.0, 3.0)],
            ..Default::default()
        };
        // exact prediction
        let r = f1_at_threshold(&gt, &gt, EntityClass::Wall, 0.05);
        assert_eq!(r.f1, 1.0);
        assert!((f1_averaged(&gt, &gt, EntityClass::Wall) - 1.0).abs() < 1e-6);
        // one correct of two
        let pred = SceneLayout { walls: vec![wall(0.0, 0.0, 4.0, 0.0)], ..Default::default() };
        let r = f1_at_threshold(&pred, &gt, EntityClass::Wall, 0.05);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-6);
        // empty prediction against nonempty gt
        let empty = SceneLayout::default();
        assert_eq!(f1_at_threshold(&empty, &gt, EntityClass::Wall, 1.0).f1, 0.0);
        // empty against empty
        assert_eq!(f1_at_threshold(&empty, &empty, EntityClass::Wall, 1.0).f1, 1.0);
    }

    #[test]
    fn offset_half_meter_averages_11_of_20() {
        let gt = SceneLayout { walls: vec![wall(0.0, 0.0, 4.0, 0.0)], ..Default::default() };
        let pred = SceneLayout { walls: vec![wall(0.5, 0.0, 4.5, 0.0)], ..Default::default() };
        let avg = f1_averaged(&pred, &gt, EntityClass::Wall);
        assert!((avg - 11.0 / 20.0).abs() < 1e-6, "{avg}");
    }

    #[test]
    fn f1_monotone_in_threshold_and_symmetric() {
        let params = GenParams::default();
        for s in 0..20u64 {
            let a = generate_scene(&params, s).unwrap();
            let b = generate_scene(&params, s + 100).unwrap();
            for class in EntityClass::ALL {
                let mut prev = 0.0;
                for t in 1..=F1_THRESHOLDS {
                    let d = t as f32 * F1_STEP;
                    let fwd = f1_at_threshold(&a, &b, class, d);
                    assert!(fwd.f1 >= prev - 1e-6);
                    prev = fwd.f1;
                    let rev = f1_at_threshold(&b, &a, class, d);
                    assert!((fwd.precision - rev.recall).abs() < 1e-6);
                    assert!((fwd.recall - rev.precision).abs() < 1e-6);
                    assert!((fwd.f1 - rev.f1).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn greedy_close_to_optimal_on_random_small_scenes() {
        let mut rng = substream(99, "eval-oracle", 0);
        for _ in 0..60 {
            let gen_layout = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut l = SceneLayout::default();
                for _ in 0..rng.gen_range(0..=6usize) {
                    l.walls.push(wall(
                        rng.gen_range(0.0..6.0),
                        rng.gen_range(0.0..6.0),
                        rng.gen_range(0.0..6.0),
                        rng.gen_range(0.0..6.0),
                    ));
                }
                l
            };
            let pred = gen_layout(&mut rng);
            let gt = gen_layout(&mut rng);
            for t in 1..=F1_THRESHOLDS {
                let d = t as f32 * F1_STEP;
                let g = f1_at_threshold(&pred, &gt, EntityClass::Wall, d);
                let o = f1_at_threshold_optimal(&pred, &gt, EntityClass::Wall, d);
                assert!(o.f1 >= g.f1 - 1e-6);
                assert!(o.f1 - g.f1 <= 0.02 + 1e-6, "greedy {} vs optimal {}", g.f1, o.f1);
            }
        }
    }

    #[test]
    fn alpha_stats_counts_and_histogram_mass() {
        use crate::decoding::{PassRecord, Strategy};
        let pass = |committed: Vec<u32>, idx: usize| PassRecord {
            pass_index: idx,
            drafted: Vec::new(),
            committed,
            verifier_tokens: Vec::new(),
            confidences: Vec::new(),
            scores: Vec::new(),
        };
        let trace = DecodeTrace {
            strategy: Strategy::Ssd,
            tokens: vec![1, 3, 10, 11, 12, 2],
            passes: vec![pass(vec![3], 0), pass(vec![10, 11], 1), pass(vec![12, 2], 2)],
            truncated: false,
        };
        let stats = alpha_stats(&[trace]).unwrap();
        assert_eq!(stats.total_tokens, 5);
        assert_eq!(stats.total_passes, 3);
        assert!((stats.alpha - 5.0 / 3.0).abs() < 1e-6);
        let mass: usize = stats.histogram.iter().map(|&(_, c)| c).sum();
        assert_eq!(mass, stats.total_passes);
        assert!(alpha_stats(&[]).is_err());
    }

    #[test]
    fn score_split_conserves_mass() {
        use crate::decoding::{PassRecord, Strategy};
        let p1 = PassRecord {
            pass_index: 0,
            drafted: vec![3, 10, 11, 12],
            committed: vec![3, 10],
            verifier_tokens: Vec::new(),
            confidences: Vec::new(),
            scores: vec![0.9, 0.8, 0.3, 0.2],
        };
        let p2 = PassRecord { committed: vec![11, 12, 2, 13], scores: vec![0.7, 0.6, 0.5, 0.4], pass_index: 1, ..p1.clone() };
        let trace = DecodeTrace {
            strategy: Strategy::Cgd,
            tokens: vec![1, 3, 10, 11, 12, 2, 13],
            passes: vec![p1, p2],
            truncated: false,
        };
        let (accepted, rejected) = softmax_score_split(&[trace]);
        assert_eq!(accepted.len(), 6);
        assert_eq!(rejected, vec![0.3]);
        let binned = bin_scores(&accepted, 20);
        assert_eq!(binned.iter().sum::<usize>(), 6);
    }

    #[test]
    fn benchmark_on_untrained_model_is_deterministic() {
        use crate::decoding::Strategy;
        use crate::model::DecoderConfig;
        use crate::scenegen::sample_point_cloud;
        let cfg = DecoderConfig {
            layers: 2,
            width: 16,
            heads: 2,
            vocab: crate::dsl::VOCAB_SIZE,
            max_seq: 64,
            n: 4,
            head_sharing: true,
            confidence_heads: true,
            grid: 4,
            patch: 1,
            extent: 6.4,
        };
        let model = Model::new(cfg, 0).unwrap();
        let params = GenParams::default();
        let records: Vec<SceneRecord> = (0..3)
            .map(|i| {
                let layout = generate_scene(&params, i).unwrap();
                let cloud = sample_point_cloud(&layout, 100.0, 0.0, i);
                SceneRecord { index: i as usize, layout, cloud }
            })
            .collect();
        let mut policy = DecodePolicy::greedy(Strategy::Ntp);
        policy.max_tokens = 30;
        let specs = vec![
            BenchSpec { method: "ntp".into(), model: &model, policy: policy.clone() },
            BenchSpec {
                method: "ssd".into(),
                model: &model,
                policy: DecodePolicy { strategy: Strategy::Ssd, ..policy.clone() },
            },
        ];
        let (r1, traces) = benchmark(&specs, &records).unwrap();
        let (r2, _) = benchmark(&specs, &records).unwrap();
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            // everything except wall-clock latency is bit-reproducible
            assert_eq!(a.method, b.method);
            assert_eq!(a.passes_mean.to_bits(), b.passes_mean.to_bits());
            assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
            assert_eq!(a.f1_mean.to_bits(), b.f1_mean.to_bits());
        }
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].len(), 3);
        // ssd(tau=0) emits the same sequences as ntp
        for (a, b) in traces[0].iter().zip(&traces[1]) {
            assert_eq!(a.tokens, b.tokens);
        }
        for row in &r1.rows {
            assert!(row.f1_mean >= 0.0 && row.f1_mean <= 1.0);
        }
        let dir = tempfile::tempdir().unwrap();
        r1.write(dir.path()).unwrap();
        assert!(dir.path().join("report.json").exists());
        assert!(dir.path().join("report.txt").exists());
    }
}
