//! Structured-language vocabulary and the bidirectional mapping between
//! geometric scene layouts and token sequences.
//!
//! A layout token stream is `START`, then one fixed-arity record per entity
//! (command token followed by quantized numeric tokens), then `STOP`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const START: TokenId = 1;
pub const STOP: TokenId = 2;
pub const MAKE_WALL: TokenId = 3;
pub const MAKE_DOOR: TokenId = 4;
pub const MAKE_WINDOW: TokenId = 5;

/// First numeric-bin token id.
pub const BIN_BASE: TokenId = 6;
/// Number of numeric bins.
pub const NUM_BINS: u32 = 256;
/// Total vocabulary size.
pub const VOCAB_SIZE: usize = (BIN_BASE + NUM_BINS) as usize;
/// Meters per bin.
pub const BIN_RESOLUTION: f32 = 0.05;
/// Upper end of the representable coordinate range (exclusive).
pub const COORD_RANGE: f32 = NUM_BINS as f32 * BIN_RESOLUTION;

pub const WALL_ARITY: usize = 8;
pub const OPENING_ARITY: usize = 5;

#[derive(Debug, Error)]
pub enum DslError {
    #[error("cannot quantize NaN")]
    NanValue,
    #[error("token id {0} outside vocabulary (size {VOCAB_SIZE})")]
    UnknownToken(TokenId),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x1: f32,
    pub y1: f32,
    pub z1: f32,
    pub x2: f32,
    pub y2: f32,
    pub z2: f32,
    pub height: f32,
    pub thickness: f32,
}

/// Free-standing door or window: center plus width and height.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Opening {
    pub cx: f32,
    pub cy: f32,
    pub cz: f32,
    pub width: f32,
    pub height: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub walls: Vec<Wall>,
    pub doors: Vec<Opening>,
    pub windows: Vec<Opening>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityClass {
    Wall,
    Door,
    Window,
}

impl EntityClass {
    pub const ALL: [EntityClass; 3] = [EntityClass::Wall, EntityClass::Door, EntityClass::Window];

    pub fn name(&self) -> &'static str {
        match self {
            EntityClass::Wall => "wall",
            EntityClass::Door => "door",
            EntityClass::Window => "window",
        }
    }
}

impl SceneLayout {
    pub fn is_empty(&self) -> bool {
        self.walls.is_empty() && self.doors.is_empty() && self.windows.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.walls.len() + self.doors.len() + self.windows.len()
    }

    /// Checks the type invariants: coordinates in range, positive extents,
    /// distinct wall endpoints.
    pub fn validate(&self) -> Result<(), String> {
        let in_range = |v: f32| (0.0..COORD_RANGE).contains(&v);
        for (i, w) in self.walls.iter().enumerate() {
            for v in [w.x1, w.y1, w.z1, w.x2, w.y2, w.z2] {
                if !in_range(v) {
                    return Err(format!("wall {i}: coordinate {v} out of [0, {COORD_RANGE})"));
                }
            }
            if w.height <= 0.0 || w.thickness <= 0.0 {
                return Err(format!("wall {i}: non-positive height or thickness"));
            }
            if (w.x1, w.y1, w.z1) == (w.x2, w.y2, w.z2) {
                return Err(format!("wall {i}: zero length"));
            }
        }
        for (cls, list) in [("door", &self.doors), ("window", &self.windows)] {
            for (i, o) in list.iter().enumerate() {
                for v in [o.cx, o.cy, o.cz] {
                    if !in_range(v) {
                        return Err(format!("{cls} {i}: coordinate {v} out of range"));
                    }
                }
                if o.width <= 0.0 || o.height <= 0.0 {
                    return Err(format!("{cls} {i}: non-positive extent"));
                }
            }
        }
        Ok(())
    }
}

/// Quantizes a metric value to its numeric-bin token id (clamped to range).
pub fn quantize(value: f32) -> Result<TokenId, DslError> {
    if value.is_nan() {
        return Err(DslError::NanValue);
    }
    let clamped = value.clamp(0.0, (NUM_BINS - 1) as f32 * BIN_RESOLUTION);
    let bin = (clamped / BIN_RESOLUTION).round() as u32;
    Ok(BIN_BASE + bin.min(NUM_BINS - 1))
}

/// Metric value represented by a numeric token.
pub fn dequantize(token: TokenId) -> Result<f32, DslError> {
    if !is_numeric(token)? {
        return Err(DslError::UnknownToken(token));
    }
    Ok((token - BIN_BASE) as f32 * BIN_RESOLUTION)
}

/// Bin index of a numeric token (distance comparisons happen in bin units).
pub fn bin_index(token: TokenId) -> Option<u32> {
    if (BIN_BASE..BIN_BASE + NUM_BINS).contains(&token) {
        Some(token - BIN_BASE)
    } else {
        None
    }
}

pub fn is_numeric(token: TokenId) -> Result<bool, DslError> {
    if token as usize >= VOCAB_SIZE {
        return Err(DslError::UnknownToken(token));
    }
    Ok(token >= BIN_BASE)
}

/// Tolerance-based agreement between a drafted and a reference token.
/// Two numeric tokens agree when their bin indices differ by at most `tau`;
/// non-numeric tokens must match exactly; a numeric/non-numeric pair never
/// agrees.
pub fn tokens_agree(a: TokenId, b: TokenId, tau: u32) -> Result<bool, DslError> {
    Ok(match (is_numeric(a)?, is_numeric(b)?) {
        (true, true) => bin_index(a).unwrap().abs_diff(bin_index(b).unwrap()) <= tau,
        (false, false) => a == b,
        _ => false,
    })
}

pub fn command_arity(token: TokenId) -> Option<usize> {
    match token {
        MAKE_WALL => Some(WALL_ARITY),
        MAKE_DOOR | MAKE_WINDOW => Some(OPENING_ARITY),
        _ => None,
    }
}

/// Serializes a layout: START, walls, doors, windows (construction order),
/// STOP. Values are clamped/quantized to the bin grid.
pub fn encode_layout(layout: &SceneLayout) -> Vec<TokenId> {
    let mut seq = vec![START];
    let q = |v: f32| quantize(v).expect("layout coordinates must be finite");
    for w in &layout.walls {
        seq.push(MAKE_WALL);
        for v in [w.x1, w.y1, w.z1, w.x2, w.y2, w.z2, w.height, w.thickness] {
            seq.push(q(v));
        }
    }
    for (cmd, list) in [(MAKE_DOOR, &layout.doors), (MAKE_WINDOW, &layout.windows)] {
        for o in list {
            seq.push(cmd);
            for v in [o.cx, o.cy, o.cz, o.width, o.height] {
                seq.push(q(v));
            }
        }
    }
    seq.push(STOP);
    seq
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Diagnostic {
    /// A command record was cut short by another command, STOP, or the end of
    /// the sequence; the partial record is dropped.
    TruncatedRecord { position: usize, command: TokenId, got: usize, expected: usize },
    /// A numeric token appeared outside any record and was skipped.
    StrayNumeric { position: usize, token: TokenId },
    /// Token id outside the vocabulary; skipped.
    UnknownToken { position: usize, token: TokenId },
    /// Control token (START/PAD) in an unexpected spot; skipped.
    UnexpectedControl { position: usize, token: TokenId },
    /// Sequence did not terminate with STOP.
    MissingStop,
}

/// Greedy, total parse of a token sequence back into a layout. Malformed
/// stretches are dropped with diagnostics; this never fails on well-typed ids.
pub fn decode_tokens(seq: &[TokenId]) -> (SceneLayout, Vec<Diagnostic>) {
    let mut layout = SceneLayout::default();
    let mut diags = Vec::new();
    let mut i = 0;
    // skip a leading START if present
    if seq.first() == Some(&START) {
        i = 1;
    }
    let mut saw_stop = false;
    while i < seq.len() {
        let tok = seq[i];
        if tok == STOP {
            saw_stop = true;
            break;
        }
        if tok as usize >= VOCAB_SIZE {
            diags.push(Diagnostic::UnknownToken { position: i, token: tok });
            i += 1;
            continue;
        }
        if let Some(arity) = command_arity(tok) {
            let start = i;
            let mut args = Vec::with_capacity(arity);
            let mut j = i + 1;
            while j < seq.len() && args.len() < arity {
                match bin_index(seq[j]) {
                    Some(bin) => {
                        args.push(bin as f32 * BIN_RESOLUTION);
                        j += 1;
                    }
                    None => break,
                }
            }
            if args.len() < arity {
                diags.push(Diagnostic::TruncatedRecord {
                    position: start,
                    command: tok,
                    got: args.len(),
                    expected: arity,
                });
            } else {
                match tok {
                    MAKE_WALL => layout.walls.push(Wall {
                        x1: args[0],
                        y1: args[1],
                        z1: args[2],
                        x2: args[3],
                        y2: args[4],
                        z2: args[5],
                        height: args[6],
                        thickness: args[7],
                    }),
                    MAKE_DOOR | MAKE_WINDOW => {
                        let o = Opening { cx: args[0], cy: args[1], cz: args[2], width: args[3], height: args[4] };
                        if tok == MAKE_DOOR {
                            layout.doors.push(o);
                        } else {
                            layout.windows.push(o);
                        }
                    }
                    _ => unreachable!(),
                }
            }
            i = j;
        } else if bin_index(tok).is_some() {
            diags.push(Diagnostic::StrayNumeric { position: i, token: tok });
            i += 1;
        } else {
            diags.push(Diagnostic::UnexpectedControl { position: i, token: tok });
            i += 1;
        }
    }
    if !saw_stop {
        diags.push(Diagnostic::MissingStop);
    }
    (layout, diags)
}

/// Boolean mask over the vocabulary of grammatically legal next tokens for a
/// prefix beginning with START.
pub fn grammar_next_mask(prefix: &[TokenId]) -> Vec<bool> {
    let mut mask = vec![false; VOCAB_SIZE];
    // find how deep we are in the current record
    let mut remaining = 0usize;
    for &tok in prefix.iter().skip(1) {
        if remaining > 0 {
            remaining -= 1;
        } else if let Some(a) = command_arity(tok) {
            remaining = a;
        }
    }
    if remaining > 0 {
        for b in BIN_BASE..BIN_BASE + NUM_BINS {
            mask[b as usize] = true;
        }
    } else {
        mask[MAKE_WALL as usize] = true;
        mask[MAKE_DOOR as usize] = true;
        mask[MAKE_WINDOW as usize] = true;
        mask[STOP as usize] = true;
    }
    mask
}

pub fn token_name(tok: TokenId) -> String {
    match tok {
        PAD => "PAD".into(),
        START => "START".into(),
        STOP => "STOP".into(),
        MAKE_WALL => "MAKE_WALL".into(),
        MAKE_DOOR => "MAKE_DOOR".into(),
        MAKE_WINDOW => "MAKE_WINDOW".into(),
        t => match bin_index(t) {
            Some(b) => b.to_string(),
            None => format!("?{t}"),
        },
    }
}

/// Space-separated debug rendering (`START MAKE_WALL 40 52 ... STOP`).
pub fn format_tokens(seq: &[TokenId]) -> String {
    seq.iter().map(|&t| token_name(t)).collect::<Vec<_>>().join(" ")
}

/// Layout text format: one entity per line, 6 decimal places, `#` comments.
pub fn format_layout(layout: &SceneLayout) -> String {
    let mut out = String::new();
    for w in &layout.walls {
        out.push_str(&format!(
            "wall {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            w.x1, w.y1, w.z1, w.x2, w.y2, w.z2, w.height, w.thickness
        ));
    }
    for (name, list) in [("door", &layout.doors), ("window", &layout.windows)] {
        for o in list {
            out.push_str(&format!("{name} {:.6} {:.6} {:.6} {:.6} {:.6}\n", o.cx, o.cy, o.cz, o.width, o.height));
        }
    }
    out
}

pub fn parse_layout(text: &str) -> Result<SceneLayout, String> {
    let mut layout = SceneLayout::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap();
        let nums: Result<Vec<f32>, _> = parts.map(|p| p.parse::<f32>()).collect();
        let nums = nums.map_err(|e| format!("line {}: {e}", ln + 1))?;
        match kind {
            "wall" if nums.len() == 8 => layout.walls.push(Wall {
                x1: nums[0],
                y1: nums[1],
                z1: nums[2],
                x2: nums[3],
                y2: nums[4],
                z2: nums[5],
                height: nums[6],
                thickness: nums[7],
            }),
            "door" | "window" if nums.len() == 5 => {
                let o = Opening { cx: nums[0], cy: nums[1], cz: nums[2], width: nums[3], height: nums[4] };
                if kind == "door" {
                    layout.doors.push(o);
                } else {
                    layout.windows.push(o);
                }
            }
            _ => return Err(format!("line {}: unrecognized entity '{line}'", ln + 1)),
        }
    }
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.10).unwrap(), BIN_BASE + 2);
        assert_eq!(quantize(0.0).unwrap(), BIN_BASE);
        assert_eq!(quantize(99.0).unwrap(), BIN_BASE + 255);
        assert!(quantize(f32::NAN).is_err());
    }

    #[test]
    fn is_numeric_examples() {
        assert!(!is_numeric(MAKE_WALL).unwrap());
        assert!(is_numeric(8).unwrap());
        assert!(!is_numeric(STOP).unwrap());
        assert!(is_numeric(VOCAB_SIZE as TokenId).is_err());
    }

    fn one_wall_layout() -> SceneLayout {
        SceneLayout {
            walls: vec![Wall { x1: 0.5, y1: 0.5, z1: 0.0, x2: 3.0, y2: 0.5, z2: 0.0, height: 2.4, thickness: 0.1 }],
            ..Default::default()
        }
    }

    #[test]
    fn encode_lengths() {
        let empty = SceneLayout::default();
        assert_eq!(encode_layout(&empty), vec![START, STOP]);
        let seq = encode_layout(&one_wall_layout());
        assert_eq!(seq.len(), 11);
        assert_eq!(seq[0], START);
        assert_eq!(seq[1], MAKE_WALL);
        assert_eq!(*seq.last().unwrap(), STOP);
    }

    #[test]
    fn decode_examples() {
        let (l, d) = decode_tokens(&encode_layout(&one_wall_layout()));
        assert_eq!(l.walls.len(), 1);
        assert!(d.is_empty());

        // truncated record
        let seq = vec![START, MAKE_WALL, 10, 11, 12, STOP];
        let (l, d) = decode_tokens(&seq);
        assert!(l.walls.is_empty());
        assert_eq!(d.len(), 1);
        assert!(matches!(d[0], Diagnostic::TruncatedRecord { got: 3, expected: 8, .. }));

        let (l, d) = decode_tokens(&[START, STOP]);
        assert!(l.is_empty());
        assert!(d.is_empty());
    }

    #[test]
    fn grammar_mask_examples() {
        let m = grammar_next_mask(&[START]);
        assert!(m[MAKE_WALL as usize] && m[STOP as usize] && !m[BIN_BASE as usize]);
        let m = grammar_next_mask(&[START, MAKE_WALL]);
        assert!(!m[MAKE_WALL as usize] && !m[STOP as usize] && m[BIN_BASE as usize]);
        let mut prefix = vec![START, MAKE_WALL];
        prefix.extend(std::iter::repeat(BIN_BASE + 1).take(8));
        let m = grammar_next_mask(&prefix);
        assert!(m[MAKE_WALL as usize] && m[STOP as usize] && !m[BIN_BASE as usize]);
    }

    #[test]
    fn layout_text_round_trip() {
        let l = one_wall_layout();
        let text = format_layout(&l);
        let parsed = parse_layout(&text).unwrap();
        assert_eq!(l, parsed);
        assert!(parse_layout("# comment only\n").unwrap().is_empty());
    }

    fn grid_value() -> impl Strategy<Value = f32> {
        (0u32..NUM_BINS).prop_map(|b| b as f32 * BIN_RESOLUTION)
    }

    fn grid_wall() -> impl Strategy<Value = Wall> {
        (grid_value(), grid_value(), grid_value(), grid_value(), 1u32..60, 1u32..4).prop_map(
            |(x1, y1, x2, y2, h, t)| Wall {
                x1,
                y1,
                z1: 0.0,
                x2: if (x1, y1) == (x2, y2) { (x2 + BIN_RESOLUTION).min(COORD_RANGE - BIN_RESOLUTION) } else { x2 },
                y2,
                z2: 0.0,
                height: h as f32 * BIN_RESOLUTION,
                thickness: t as f32 * BIN_RESOLUTION,
            },
        )
    }

    fn grid_opening() -> impl Strategy<Value = Opening> {
        (grid_value(), grid_value(), grid_value(), 1u32..40, 1u32..40).prop_map(|(cx, cy, cz, w, h)| Opening {
            cx,
            cy,
            cz,
            width: w as f32 * BIN_RESOLUTION,
            height: h as f32 * BIN_RESOLUTION,
        })
    }

    proptest! {
        #[test]
        fn round_trip_grid_aligned(
            walls in proptest::collection::vec(grid_wall(), 0..6),
            doors in proptest::collection::vec(grid_opening(), 0..3),
            windows in proptest::collection::vec(grid_opening(), 0..3),
        ) {
            let layout = SceneLayout { walls, doors, windows };
            prop_assume!(layout.validate().is_ok());
            let (decoded, diags) = decode_tokens(&encode_layout(&layout));
            prop_assert!(diags.is_empty());
            prop_assert_eq!(decoded, layout);
        }

        #[test]
        fn quantization_error_bound(x in 0.0f32..12.75) {
            let tok = quantize(x).unwrap();
            let back = dequantize(tok).unwrap();
            prop_assert!((back - x).abs() <= BIN_RESOLUTION / 2.0 + 1e-6);
        }

        #[test]
        fn decode_is_total(seq in proptest::collection::vec(0u32..VOCAB_SIZE as u32, 0..60)) {
            let (_, _) = decode_tokens(&seq); // must not panic
        }
    }
}
