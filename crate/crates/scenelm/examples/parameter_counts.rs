//! Prints the parameter breakdown for the full-scale (L=8, d=512)
//! configuration across head setups.
//!
//! Run with: cargo run --example parameter_counts

use scenelm::model::{DecoderConfig, Model};

fn main() -> anyhow::Result<()> {
    let variants: Vec<(&str, DecoderConfig)> = vec![
        ("ntp", DecoderConfig::full_scale(1)),
        ("ssd shared n=8", DecoderConfig::full_scale(8)),
        ("cgd shared n=8", {
            let mut c = DecoderConfig::full_scale(8);
            c.confidence_heads = true;
            c
        }),
        ("mtp unshared n=8", {
            let mut c = DecoderConfig::full_scale(8);
            c.head_sharing = false;
            c
        }),
        ("cgd unshared n=8", {
            let mut c = DecoderConfig::full_scale(8);
            c.head_sharing = false;
            c.confidence_heads = true;
            c
        }),
    ];
    println!(
        "{:<18} {:>11} {:>11} {:>11} {:>11} {:>12}",
        "variant", "decoder", "token heads", "conf heads", "projection", "total"
    );
    for (name, cfg) in variants {
        let p = Model::new(cfg, 0)?.count_params();
        println!(
            "{:<18} {:>11} {:>11} {:>11} {:>11} {:>12}",
            name,
            p.decoder,
            p.token_heads,
            p.conf_heads,
            p.projection,
            p.decoder_side()
        );
    }
    Ok(())
}
