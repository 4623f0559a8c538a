//! Encodes a generated layout into DSL tokens and decodes it back.
//!
//! Run with: cargo run --example tokenize_roundtrip

use scenelm::dsl::{decode_tokens, encode_layout, format_tokens};
use scenelm::scenegen::{generate_scene, GenParams};

fn main() -> anyhow::Result<()> {
    let params = GenParams::default();
    let layout = generate_scene(&params, 42)?;
    let tokens = encode_layout(&layout);
    println!("layout: {} walls, {} doors, {} windows", layout.walls.len(), layout.doors.len(), layout.windows.len());
    println!("tokens ({}): {}", tokens.len(), format_tokens(&tokens));
    let (decoded, diagnostics) = decode_tokens(&tokens);
    assert_eq!(decoded, layout, "grid-aligned layouts round-trip exactly");
    assert!(diagnostics.is_empty());
    println!("round trip exact, no diagnostics");
    Ok(())
}
