//! Procedural synthetic scenes: axis-aligned rectangular rooms with doors and
//! windows on the walls, plus noisy point-cloud sampling of the geometry.
//!
//! Openings are cut out of the wall surface when sampling points, so a door
//! reads as a floor-to-lintel gap in the cloud and a window as a hole with
//! wall below the sill. All generated coordinates snap to a coarse grid
//! (default 0.4 m, a multiple of the 0.05 m token grid) so token round-trips
//! are exact and the voxel encoder can resolve the geometry.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{self, Opening, SceneLayout, Wall};
use crate::error::DataError;

/// Deterministic named RNG substream: (seed, tag, index) fully determines the
/// stream, so components can be reproduced in isolation.
pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h ^ index.wrapping_mul(0x9e3779b97f4a7c15))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    /// Inclusive range of rooms per scene.
    pub rooms: (usize, usize),
    /// Wall height choices are multiples of `snap` inside this range (m).
    pub wall_height: (f32, f32),
    pub wall_thickness: (f32, f32),
    pub doors: (usize, usize),
    pub windows: (usize, usize),
    /// Scene extent in meters (<= coordinate range).
    pub extent: f32,
    /// Placement grid in meters; a multiple of the 0.05 m token grid.
    pub snap: f32,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            seed: 0,
            rooms: (1, 2),
            wall_height: (2.4, 3.2),
            wall_thickness: (0.1, 0.1),
            doors: (0, 2),
            windows: (0, 2),
            extent: 6.4,
            snap: 0.4,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: &str| Err(DataError::InvalidParams(m.to_string()));
        if self.rooms.0 > self.rooms.1 || self.rooms.0 == 0 {
            return err("room count range empty");
        }
        if self.wall_height.0 > self.wall_height.1 || self.wall_height.0 <= 0.0 {
            return err("wall height range empty");
        }
        if self.wall_thickness.0 > self.wall_thickness.1 || self.wall_thickness.0 <= 0.0 {
            return err("wall thickness range empty");
        }
        if self.doors.0 > self.doors.1 || self.windows.0 > self.windows.1 {
            return err("door/window range empty");
        }
        if self.extent <= 0.0 || self.extent > dsl::COORD_RANGE {
            return err("extent outside vocabulary coordinate range");
        }
        if self.snap < dsl::BIN_RESOLUTION || (self.snap / dsl::BIN_RESOLUTION).fract().abs() > 1e-4 {
            return err("snap must be a multiple of the token grid");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
}

const MAX_ATTEMPTS: usize = 100;

fn snap_to(v: f32, snap: f32) -> f32 {
    (v / snap).round() * snap
}

/// Picks a multiple of `snap` in [lo, hi].
fn pick_snapped(rng: &mut ChaCha8Rng, lo: f32, hi: f32, snap: f32) -> f32 {
    let lo_i = (lo / snap).ceil() as i64;
    let hi_i = (hi / snap).floor() as i64;
    let i = if hi_i <= lo_i { lo_i } else { rng.gen_range(lo_i..=hi_i) };
    i as f32 * snap
}

/// Generates the layout for scene `index`. Deterministic in (seed, index);
/// all coordinates land on the 0.05 m token grid.
pub fn generate_scene(params: &GenParams, index: u64) -> Result<SceneLayout, DataError> {
    params.validate()?;
    let mut rng = substream(params.seed, "scene", index);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(layout) = try_generate(params, &mut rng) {
            debug_assert!(layout.validate().is_ok());
            return Ok(layout);
        }
    }
    Err(DataError::GenerationInfeasible {
        attempts: MAX_ATTEMPTS,
        reason: "could not place rooms/openings within the configured ranges".into(),
    })
}

/// Rounds a value onto the exact f32 the token grid will reproduce, so
/// encode/decode round-trips compare bit-equal.
fn canon(v: f32) -> f32 {
    dsl::dequantize(dsl::quantize(v).expect("finite")).expect("numeric")
}

fn try_generate(params: &GenParams, rng: &mut ChaCha8Rng) -> Option<SceneLayout> {
    let snap = params.snap;
    let margin = snap;
    let mut layout = SceneLayout::default();
    // wall index -> (ax, ay, bx, by, height); used for opening placement
    let mut segments: Vec<(f32, f32, f32, f32, f32)> = Vec::new();
    let n_rooms = rng.gen_range(params.rooms.0..=params.rooms.1);
    for _ in 0..n_rooms {
        let min_side = (4.0 * snap).max(1.2);
        let max_side = params.extent - 2.0 * margin;
        if max_side < min_side {
            return None;
        }
        let w = pick_snapped(rng, min_side, max_side, snap);
        let h = pick_snapped(rng, min_side, max_side, snap);
        let x0 = pick_snapped(rng, margin, params.extent - margin - w, snap);
        let y0 = pick_snapped(rng, margin, params.extent - margin - h, snap);
        let height = pick_snapped(rng, params.wall_height.0, params.wall_height.1, snap);
        let thickness = snap_to(
            rng.gen_range(params.wall_thickness.0..=params.wall_thickness.1),
            dsl::BIN_RESOLUTION,
        )
        .max(dsl::BIN_RESOLUTION);
        let (x1, y1) = (x0 + w, y0 + h);
        let corners = [(x0, y0, x1, y0), (x1, y0, x1, y1), (x1, y1, x0, y1), (x0, y1, x0, y0)];
        for (ax, ay, bx, by) in corners {
            let (ax, ay, bx, by) = (canon(ax), canon(ay), canon(bx), canon(by));
            let (height, thickness) = (canon(height), canon(thickness));
            layout.walls.push(Wall { x1: ax, y1: ay, z1: 0.0, x2: bx, y2: by, z2: 0.0, height, thickness });
            segments.push((ax, ay, bx, by, height));
        }
    }
    // track used intervals per wall so openings never overlap
    let mut used: Vec<Vec<(f32, f32)>> = vec![Vec::new(); segments.len()];
    let n_doors = rng.gen_range(params.doors.0..=params.doors.1);
    let n_windows = rng.gen_range(params.windows.0..=params.windows.1);
    for kind in 0..2 {
        let count = if kind == 0 { n_doors } else { n_windows };
        for _ in 0..count {
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS {
                let wi = rng.gen_range(0..segments.len());
                let (ax, ay, bx, by, wall_h) = segments[wi];
                let len = ((bx - ax).abs() + (by - ay).abs()).max(0.0); // axis-aligned
                let width = pick_snapped(rng, 0.8, 1.2, snap);
                if len < width + 2.0 * snap {
                    continue;
                }
                let (height, sill) = if kind == 0 {
                    let h = pick_snapped(rng, 1.6, (wall_h - snap).min(2.0), snap);
                    (h, 0.0)
                } else {
                    let h = pick_snapped(rng, 0.8, 1.2, snap);
                    let max_sill = wall_h - h - snap;
                    if max_sill < 0.8 {
                        continue;
                    }
                    (h, pick_snapped(rng, 0.8, max_sill.min(1.2), snap))
                };
                if height <= 0.0 || height + sill >= wall_h {
                    continue;
                }
                let u = pick_snapped(rng, snap, len - snap - width, snap);
                let interval = (u, u + width);
                if used[wi].iter().any(|&(a, b)| interval.0 < b && a < interval.1) {
                    continue;
                }
                used[wi].push(interval);
                let t = (u + width / 2.0) / len;
                let cx = ax + (bx - ax) * t;
                let cy = ay + (by - ay) * t;
                let opening = Opening {
                    cx: canon(cx),
                    cy: canon(cy),
                    cz: canon(sill + height / 2.0),
                    width: canon(width),
                    height: canon(height),
                };
                if kind == 0 {
                    layout.doors.push(opening);
                } else {
                    layout.windows.push(opening);
                }
                placed = true;
                break;
            }
            if !placed {
                return None;
            }
        }
    }
    layout.validate().ok()?;
    Some(layout)
}

/// Openings lying on a wall segment (center within `tol` of the segment line
/// and inside its span).
fn openings_on_wall(wall: &Wall, openings: &[Opening], tol: f32) -> Vec<Opening> {
    let (ax, ay, bx, by) = (wall.x1, wall.y1, wall.x2, wall.y2);
    let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
    openings
        .iter()
        .filter(|o| {
            let t = ((o.cx - ax) * (bx - ax) + (o.cy - ay) * (by - ay)) / (len * len);
            if !(0.0..=1.0).contains(&t) {
                return false;
            }
            let px = ax + (bx - ax) * t;
            let py = ay + (by - ay) * t;
            ((o.cx - px).powi(2) + (o.cy - py).powi(2)).sqrt() <= tol
        })
        .copied()
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f32) -> f32 {
    if sigma == 0.0 {
        return 0.0;
    }
    let u1: f32 = rng.gen_range(f32::EPSILON..1.0);
    let u2: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos() * sigma
}

/// Samples a noisy point cloud from the wall surfaces. Door and window
/// regions are cut out of their wall so openings are observable in occupancy.
pub fn sample_point_cloud(layout: &SceneLayout, density: f32, noise_sigma: f32, seed: u64) -> PointCloud {
    let mut rng = substream(seed, "cloud", 0);
    let mut points = Vec::new();
    let all_openings: Vec<Opening> =
        layout.doors.iter().chain(layout.windows.iter()).copied().collect();
    for wall in &layout.walls {
        let (ax, ay, bx, by) = (wall.x1, wall.y1, wall.x2, wall.y2);
        let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        if len <= 0.0 {
            continue;
        }
        let holes: Vec<(f32, f32, f32, f32)> = openings_on_wall(wall, &all_openings, wall.thickness + 0.05)
            .iter()
            .map(|o| {
                let t = ((o.cx - ax) * (bx - ax) + (o.cy - ay) * (by - ay)) / (len * len);
                let u = t * len;
                (u - o.width / 2.0, u + o.width / 2.0, o.cz - o.height / 2.0, o.cz + o.height / 2.0)
            })
            .collect();
        let area = len * wall.height;
        let n = (density * area).round() as usize;
        for _ in 0..n {
            let u = rng.gen_range(0.0..len);
            let z = rng.gen_range(0.0..wall.height);
            if holes.iter().any(|&(u0, u1, z0, z1)| u >= u0 && u <= u1 && z >= z0 && z <= z1) {
                continue; // inside an opening
            }
            let t = u / len;
            let x = ax + (bx - ax) * t + gaussian(&mut rng, noise_sigma);
            let y = ay + (by - ay) * t + gaussian(&mut rng, noise_sigma);
            let zz = wall.z1 + z + gaussian(&mut rng, noise_sigma);
            points.push([x, y, zz]);
        }
    }
    PointCloud { points }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub params: GenParams,
    pub density: f32,
    pub noise_sigma: f32,
    pub splits: Vec<(String, usize)>,
}

pub struct SceneRecord {
    pub index: usize,
    pub layout: SceneLayout,
    pub cloud: PointCloud,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

/// Writes a dataset directory: `scenes/{split}/{index}.layout` + `.xyz` and a
/// `manifest.json`. Scene indices are globally unique across splits so every
/// scene is distinct.
pub fn write_dataset(
    dir: &Path,
    params: &GenParams,
    density: f32,
    noise_sigma: f32,
    splits: &[(String, usize)],
) -> Result<Manifest, DataError> {
    params.validate()?;
    let mut global = 0u64;
    for (split, count) in splits {
        let sub = dir.join("scenes").join(split);
        fs::create_dir_all(&sub).map_err(io_err(&sub))?;
        for i in 0..*count {
            let layout = generate_scene(params, global)?;
            let cloud = sample_point_cloud(&layout, density, noise_sigma, params.seed ^ global);
            let lp = sub.join(format!("{i}.layout"));
            fs::write(&lp, dsl::format_layout(&layout)).map_err(io_err(&lp))?;
            let mut xyz = String::with_capacity(cloud.points.len() * 24);
            for p in &cloud.points {
                xyz.push_str(&format!("{:.4} {:.4} {:.4}\n", p[0], p[1], p[2]));
            }
            let xp = sub.join(format!("{i}.xyz"));
            fs::write(&xp, xyz).map_err(io_err(&xp))?;
            global += 1;
        }
    }
    let manifest = Manifest {
        params: params.clone(),
        density,
        noise_sigma,
        splits: splits.to_vec(),
    };
    let mp = dir.join("manifest.json");
    fs::write(&mp, serde_json::to_string_pretty(&manifest).unwrap()).map_err(io_err(&mp))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let mp = dir.join("manifest.json");
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        path: mp.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })
}

pub fn scene_paths(dir: &Path, split: &str, index: usize) -> (PathBuf, PathBuf) {
    let sub = dir.join("scenes").join(split);
    (sub.join(format!("{index}.layout")), sub.join(format!("{index}.xyz")))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f32>, _> = line.split_whitespace().map(|p| p.parse::<f32>()).collect();
        let vals = vals.map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: ln + 1,
            reason: e.to_string(),
        })?;
        if vals.len() != 3 {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: ln + 1,
                reason: format!("expected 3 floats, got {}", vals.len()),
            });
        }
        points.push([vals[0], vals[1], vals[2]]);
    }
    Ok(PointCloud { points })
}

pub fn load_split(dir: &Path, split: &str) -> Result<Vec<SceneRecord>, DataError> {
    let manifest = read_manifest(dir)?;
    let count = manifest
        .splits
        .iter()
        .find(|(s, _)| s == split)
        .map(|(_, c)| *c)
        .ok_or_else(|| DataError::InvalidParams(format!("split '{split}' not in manifest")))?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let (lp, xp) = scene_paths(dir, split, i);
        let text = fs::read_to_string(&lp).map_err(io_err(&lp))?;
        let layout = parse_layout_err(&text, &lp)?;
        let cloud = load_cloud(&xp)?;
        out.push(SceneRecord { index: i, layout, cloud });
    }
    Ok(out)
}

fn parse_layout_err(text: &str, path: &Path) -> Result<SceneLayout, DataError> {
    dsl::parse_layout(text).map_err(|reason| DataError::Parse {
        path: path.display().to_string(),
        line: 0,
        reason,
    })
}
