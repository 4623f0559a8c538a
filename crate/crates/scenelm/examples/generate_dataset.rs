//! Generates a small synthetic dataset and prints what was written.
//!
//! Run with: cargo run --example generate_dataset

use scenelm::scenegen::{load_split, write_dataset, GenParams};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("scenelm_example_dataset");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    let params = GenParams { seed: 7, ..GenParams::default() };
    let splits = [("train".to_string(), 20), ("val".to_string(), 5), ("test".to_string(), 5)];
    let manifest = write_dataset(&dir, &params, 64.0, 0.01, &splits)?;
    println!("dataset at {}", dir.display());
    for (split, count) in &manifest.splits {
        let records = load_split(&dir, split)?;
        assert_eq!(records.len(), *count);
        let walls: usize = records.iter().map(|r| r.layout.walls.len()).sum();
        let points: usize = records.iter().map(|r| r.cloud.points.len()).sum();
        println!(
            "  {split}: {count} scenes, {walls} walls total, {:.0} points/scene",
            points as f32 / *count as f32
        );
    }
    Ok(())
}
