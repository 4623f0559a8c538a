//! Trains a very small next-token model on a handful of scenes and shows
//! the loss falling.
//!
//! Run with: cargo run --release --example train_tiny

use scenelm::model::{DecoderConfig, Model};
use scenelm::scenegen::{generate_scene, sample_point_cloud, GenParams, SceneRecord};
use scenelm::training::{evaluate, prepare_scenes, train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let cfg = DecoderConfig { layers: 2, width: 64, heads: 2, grid: 8, ..DecoderConfig::desk(1) };
    let mut model = Model::new(cfg.clone(), 0)?;
    let params = GenParams::default();
    let records: Vec<SceneRecord> = (0..32)
        .map(|i| {
            let layout = generate_scene(&params, i).unwrap();
            let cloud = sample_point_cloud(&layout, 64.0, 0.01, i);
            SceneRecord { index: i as usize, layout, cloud }
        })
        .collect();
    let scenes = prepare_scenes(&records, &cfg);
    let (train_set, val_set) = scenes.split_at(24);
    let tc = TrainConfig { epochs: 15, batch_size: 8, ..TrainConfig::default() };
    let before = evaluate(&model, val_set, &tc)?;
    let report = train(&mut model, train_set, val_set, &tc, None)?;
    println!("val loss before: {:.3}", before.loss_total);
    for (epoch, (tr, va)) in report.history.iter().enumerate() {
        println!("epoch {epoch:2}: train {:.3}  val {:.3}", tr.loss_total, va.loss_total);
    }
    println!("best val loss: {:.3}", report.best_val);
    Ok(())
}
