//! Voxel-occupancy context encoder.
//!
//! The point cloud becomes a G x G x G binary grid. Columns are grouped
//! into P x P patches; each patch's concatenated occupancy (P*P*G values)
//! is projected to the model width and summed with a learned 2-D positional
//! embedding, yielding (G/P)^2 context rows for cross-attention. Patching
//! keeps the attention cost fixed while the voxels stay fine enough to
//! resolve wall heights and door or window holes.

use rand_chacha::ChaCha8Rng;

use crate::error::ModelError;
use crate::scenegen::PointCloud;
use crate::tensor::{kernels, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    pub g: usize,
    pub extent: f32,
    /// 0/1 per voxel, indexed (x * g + y) * g + z.
    pub data: Vec<u8>,
}

impl OccupancyGrid {
    pub fn occupied_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Occupancy of column (x, y) as f32s over z.
    fn column(&self, x: usize, y: usize) -> impl Iterator<Item = f32> + '_ {
        let base = (x * self.g + y) * self.g;
        self.data[base..base + self.g].iter().map(|&v| v as f32)
    }
}

/// Marks a voxel occupied iff at least one clamped point falls inside it.
pub fn voxelize(cloud: &PointCloud, g: usize, extent: f32) -> OccupancyGrid {
    assert!(g >= 2, "grid must have at least 2 voxels per axis");
    let mut data = vec![0u8; g * g * g];
    let voxel = extent / g as f32;
    let max = g - 1;
    for p in &cloud.points {
        let idx = |v: f32| (((v.clamp(0.0, extent - 1e-6)) / voxel) as usize).min(max);
        let (x, y, z) = (idx(p[0]), idx(p[1]), idx(p[2]));
        data[(x * g + y) * g + z] = 1;
    }
    OccupancyGrid { g, extent, data }
}

pub const COL_PROJ_W: &str = "encoder.col_proj.w";
pub const COL_PROJ_B: &str = "encoder.col_proj.b";
pub const POS_2D: &str = "encoder.pos";

/// Explicit patch-center coordinate channels appended to each occupancy
/// row: linear ramps plus a short sinusoidal code. Attention can copy a
/// hole's position out of these instead of memorizing row identities,
/// which matters for rare entities like doors and windows.
pub const COORD_FEATS: usize = 8;

fn coord_feats(px: usize, py: usize, side: usize) -> [f32; COORD_FEATS] {
    let x = (px as f32 + 0.5) / side as f32;
    let y = (py as f32 + 0.5) / side as f32;
    let t = std::f32::consts::TAU;
    [
        x,
        y,
        (t * x).sin(),
        (t * x).cos(),
        (t * y).sin(),
        (t * y).cos(),
        (2.0 * t * x).sin(),
        (2.0 * t * y).sin(),
    ]
}

/// Per-column summary channels: largest empty run strictly inside the
/// occupied envelope (length, low edge, high edge) and the envelope top.
/// A door or window hole is exactly such a run, so these make openings
/// linearly salient instead of a subtle absence pattern.
pub const COLUMN_FEATS: usize = 4;

fn column_summary(grid: &OccupancyGrid, x: usize, y: usize) -> [f32; COLUMN_FEATS] {
    let g = grid.g;
    let base = (x * g + y) * g;
    let occ = |z: usize| grid.data[base + z] != 0;
    let mut lo = None;
    let mut hi = None;
    for z in 0..g {
        if occ(z) {
            if lo.is_none() {
                lo = Some(z);
            }
            hi = Some(z);
        }
    }
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return [0.0; COLUMN_FEATS];
    };
    let mut best = (0usize, 0usize, 0usize);
    let mut run_start: Option<usize> = None;
    for z in lo..=hi {
        if !occ(z) {
            run_start.get_or_insert(z);
        } else if let Some(s) = run_start.take() {
            if z - s > best.0 {
                best = (z - s, s, z);
            }
        }
    }
    let gf = g as f32;
    [best.0 as f32 / gf, best.1 as f32 / gf, best.2 as f32 / gf, (hi + 1) as f32 / gf]
}

fn feature_len(g: usize, patch: usize) -> usize {
    patch * patch * (g + COLUMN_FEATS) + COORD_FEATS
}

pub fn init_encoder(store: &mut ParamStore, g: usize, patch: usize, width: usize, rng: &mut ChaCha8Rng) {
    assert!(patch > 0 && g % patch == 0, "grid must be a multiple of patch");
    let side = g / patch;
    store.insert_normal(COL_PROJ_W, &[feature_len(g, patch), width], 0.02, rng);
    store.insert_zeros(COL_PROJ_B, &[width]);
    store.insert_normal(POS_2D, &[side * side, width], 0.02, rng);
}

fn occupancy_rows(grid: &OccupancyGrid, patch: usize) -> Vec<f32> {
    let g = grid.g;
    let side = g / patch;
    let mut occ = Vec::with_capacity(side * side * feature_len(g, patch));
    for px in 0..side {
        for py in 0..side {
            for dx in 0..patch {
                for dy in 0..patch {
                    occ.extend(grid.column(px * patch + dx, py * patch + dy));
                }
            }
            for dx in 0..patch {
                for dy in 0..patch {
                    occ.extend(column_summary(grid, px * patch + dx, py * patch + dy));
                }
            }
            occ.extend(coord_feats(px, py, side));
        }
    }
    occ
}

/// Patch size implied by the projection shape for a `g`-voxel grid.
fn infer_patch(grid: &OccupancyGrid, feature: usize) -> Result<usize, ModelError> {
    let g = grid.g;
    let per_col = g + COLUMN_FEATS;
    if feature > COORD_FEATS && (feature - COORD_FEATS) % per_col == 0 {
        let pp = (feature - COORD_FEATS) / per_col;
        let p = (pp as f32).sqrt().round() as usize;
        if p > 0 && p * p == pp && g % p == 0 {
            return Ok(p);
        }
    }
    Err(ModelError::ContextMismatch { got: g, expected: feature })
}

/// Training-path encoder: records on the tape so the projection and
/// positional embedding receive gradients.
pub fn encode_context_tape(
    tape: &mut Tape,
    store: &ParamStore,
    grid: &OccupancyGrid,
) -> Result<Var, ModelError> {
    let g = grid.g;
    let w = store.get(COL_PROJ_W)?;
    let patch = infer_patch(grid, w.shape[0])?;
    let rows = (g / patch) * (g / patch);
    let feature = w.shape[0];
    let width = w.shape[1];
    let occ = tape.constant(&[rows, feature], occupancy_rows(grid, patch))?;
    let wv = tape.param(COL_PROJ_W, &[feature, width], w.value.clone())?;
    let bv = tape.param(COL_PROJ_B, &[width], store.get(COL_PROJ_B)?.value.clone())?;
    let pos = tape.param(POS_2D, &[rows, width], store.get(POS_2D)?.value.clone())?;
    let proj = tape.matmul(occ, wv)?;
    let proj = tape.add_row(proj, bv)?;
    Ok(tape.add(proj, pos)?)
}

/// Inference-path encoder: plain buffers, deterministic accumulation order.
pub fn encode_context(store: &ParamStore, grid: &OccupancyGrid) -> Result<Vec<f32>, ModelError> {
    let g = grid.g;
    let w = store.get(COL_PROJ_W)?;
    let patch = infer_patch(grid, w.shape[0])?;
    let rows = (g / patch) * (g / patch);
    let feature = w.shape[0];
    let width = w.shape[1];
    let occ = occupancy_rows(grid, patch);
    let mut out = vec![0.0f32; rows * width];
    kernels::gemm_det(rows, feature, width, &occ, &w.value, &mut out);
    let b = &store.get(COL_PROJ_B)?.value;
    let pos = &store.get(POS_2D)?.value;
    for r in 0..rows {
        for c in 0..width {
            out[r * width + c] += b[c] + pos[r * width + c];
        }
    }
    Ok(out)
}
