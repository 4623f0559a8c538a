//! Runs the benchmark harness over a small split and prints the report
//! table plus the acceptance histogram.
//!
//! Run with: cargo run --release --example benchmark_eval

use scenelm::decoding::{DecodePolicy, Strategy};
use scenelm::eval::{alpha_stats, benchmark, BenchSpec};
use scenelm::model::{DecoderConfig, Model};
use scenelm::scenegen::{generate_scene, sample_point_cloud, GenParams, SceneRecord};
use scenelm::training::{prepare_scenes, train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let params = GenParams::default();
    let make = |range: std::ops::Range<u64>| -> Vec<SceneRecord> {
        range
            .map(|i| {
                let layout = generate_scene(&params, i).unwrap();
                let cloud = sample_point_cloud(&layout, 64.0, 0.01, i);
                SceneRecord { index: i as usize, layout, cloud }
            })
            .collect()
    };
    let train_records = make(0..48);
    let eval_records = make(1000..1012);
    let cfg = DecoderConfig { layers: 2, width: 64, heads: 2, grid: 8, n: 4, ..DecoderConfig::desk(4) };
    let mut model = Model::new(cfg.clone(), 0)?;
    let scenes = prepare_scenes(&train_records, &cfg);
    let tc = TrainConfig { epochs: 20, batch_size: 16, ..TrainConfig::default() };
    train(&mut model, &scenes, &[], &tc, None)?;

    let specs: Vec<BenchSpec> = [Strategy::Ntp, Strategy::MtpVanilla, Strategy::Ssd]
        .iter()
        .map(|&s| BenchSpec {
            method: s.name().to_string(),
            model: &model,
            policy: DecodePolicy { max_tokens: 200, tau: 2, ..DecodePolicy::greedy(s) },
        })
        .collect();
    let (report, traces) = benchmark(&specs, &eval_records)?;
    print!("{}", report.to_text_table());
    let ssd_stats = alpha_stats(&traces[2])?;
    println!("\nssd acceptance histogram (tokens per pass -> passes):");
    for (bin, count) in &ssd_stats.histogram {
        println!("  {bin}: {count}");
    }
    Ok(())
}
