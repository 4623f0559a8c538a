//! Decodes one scene with every strategy and compares pass counts.
//!
//! The model here is only briefly trained, so layouts are rough; the point
//! is the trace accounting: speculative and confidence-gated decoding take
//! far fewer passes than plain next-token decoding.
//!
//! Run with: cargo run --release --example decode_strategies

use scenelm::decoding::{decode, DecodePolicy, Strategy};
use scenelm::encoder::{encode_context, voxelize};
use scenelm::model::DecoderConfig;
use scenelm::scenegen::{generate_scene, sample_point_cloud, GenParams, SceneRecord};
use scenelm::training::{init_mtp_from_ntp, prepare_scenes, train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let params = GenParams::default();
    let records: Vec<SceneRecord> = (0..48)
        .map(|i| {
            let layout = generate_scene(&params, i).unwrap();
            let cloud = sample_point_cloud(&layout, 64.0, 0.01, i);
            SceneRecord { index: i as usize, layout, cloud }
        })
        .collect();
    let ntp_cfg = DecoderConfig { layers: 2, width: 64, heads: 2, grid: 8, ..DecoderConfig::desk(1) };
    let mut ntp = scenelm::model::Model::new(ntp_cfg.clone(), 0)?;
    let scenes = prepare_scenes(&records, &ntp_cfg);
    let tc = TrainConfig { epochs: 20, batch_size: 16, ..TrainConfig::default() };
    train(&mut ntp, &scenes, &[], &tc, None)?;

    let mut mtp_cfg = ntp_cfg.clone();
    mtp_cfg.n = 4;
    mtp_cfg.confidence_heads = true;
    let mut mtp = init_mtp_from_ntp(&ntp, mtp_cfg, 1)?;
    let tc2 = TrainConfig { epochs: 10, ..tc };
    train(&mut mtp, &scenes, &[], &tc2, None)?;

    let probe = &records[0];
    let grid = voxelize(&probe.cloud, mtp.config.grid, mtp.config.extent);
    let context = encode_context(&mtp.store, &grid)?;
    println!("{:<14} {:>7} {:>7} {:>6}", "strategy", "tokens", "passes", "alpha");
    for strategy in Strategy::ALL {
        let policy = DecodePolicy { max_tokens: 200, tau: 2, ..DecodePolicy::greedy(strategy) };
        let trace = decode(&mtp, &context, &policy)?;
        println!(
            "{:<14} {:>7} {:>7} {:>6.2}",
            strategy.name(),
            trace.emitted(),
            trace.num_passes(),
            trace.alpha()
        );
    }
    Ok(())
}
