//! Height-field terrains: flat ground, ascending stairs and seeded value-noise roughness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::obsbuild::{HEIGHTMAP_COLS, HEIGHTMAP_DIM, HEIGHTMAP_ROWS};

/// Highest stair rise the generator accepts (m).
pub const MAX_STAIR_RISE: f64 = 0.18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainKind {
    Flat,
    Stairs,
    Rough,
}

impl std::str::FromStr for TerrainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(TerrainKind::Flat),
            "stairs" => Ok(TerrainKind::Stairs),
            "rough" => Ok(TerrainKind::Rough),
            other => Err(format!("unknown terrain `{other}` (expected flat, stairs or rough)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainParams {
    pub kind: TerrainKind,
    /// Side length of the square field, centred on the origin (m).
    pub size: f64,
    pub resolution: f64,
    pub friction_mu: f64,
    /// Ground height of flat terrain.
    pub flat_height: f64,
    pub stair_rise: f64,
    pub stair_run: f64,
    /// x coordinate of the first riser.
    pub stair_start: f64,
    pub stair_count: usize,
    /// Peak-to-peak amplitude of rough terrain.
    pub rough_amplitude: f64,
    /// Lattice spacing of the value noise (m).
    pub rough_cell: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        TerrainParams {
            kind: TerrainKind::Flat,
            size: 24.0,
            resolution: 0.05,
            friction_mu: 1.0,
            flat_height: 0.0,
            stair_rise: 0.10,
            stair_run: 0.30,
            stair_start: 1.0,
            stair_count: 12,
            rough_amplitude: 0.06,
            rough_cell: 0.4,
        }
    }
}

impl TerrainParams {
    /// Copy with the difficulty-dependent quantities scaled by `level ∈ [0, 1]`.
    pub fn at_difficulty(&self, level: f64) -> TerrainParams {
        let level = level.clamp(0.0, 1.0);
        TerrainParams {
            stair_rise: (self.stair_rise * level).clamp(1e-3, MAX_STAIR_RISE),
            rough_amplitude: self.rough_amplitude * level,
            ..self.clone()
        }
    }
}

/// Immutable terrain height grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainField {
    pub kind: TerrainKind,
    pub resolution: f64,
    /// World coordinates of grid cell (0, 0).
    pub origin: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    /// Row-major heights, `heights[ix * ny + iy]`.
    pub heights: Vec<f64>,
    pub friction_mu: f64,
    pub seed: u64,
}

pub fn make_terrain(params: &TerrainParams, seed: u64) -> Result<TerrainField, SimError> {
    if !(params.resolution.is_finite() && params.resolution > 0.0) {
        return Err(SimError::Terrain(format!("resolution must be > 0, got {}", params.resolution)));
    }
    if !(params.size.is_finite() && params.size > params.resolution) {
        return Err(SimError::Terrain(format!("size must exceed the resolution, got {}", params.size)));
    }
    if !(params.friction_mu.is_finite() && params.friction_mu > 0.0) {
        return Err(SimError::Terrain(format!("friction must be > 0, got {}", params.friction_mu)));
    }
    let n = (params.size / params.resolution).round() as usize + 1;
    let origin = [-params.size / 2.0, -params.size / 2.0];
    let coord = |i: usize, o: f64| o + i as f64 * params.resolution;

    let heights = match params.kind {
        TerrainKind::Flat => vec![params.flat_height; n * n],
        TerrainKind::Stairs => {
            if !(params.stair_rise > 0.0 && params.stair_rise <= MAX_STAIR_RISE) {
                return Err(SimError::Terrain(format!(
                    "stair rise must lie in (0, {MAX_STAIR_RISE}], got {}",
                    params.stair_rise
                )));
            }
            if !(params.stair_run > 0.0) {
                return Err(SimError::Terrain(format!("stair run must be > 0, got {}", params.stair_run)));
            }
            let mut h = Vec::with_capacity(n * n);
            for ix in 0..n {
                let x = coord(ix, origin[0]) - params.stair_start;
                let step = if x < 0.0 { 0 } else { ((x / params.stair_run).floor() as usize + 1).min(params.stair_count) };
                h.extend(std::iter::repeat_n(params.flat_height + params.stair_rise * step as f64, n));
            }
            h
        }
        TerrainKind::Rough => {
            if !(params.rough_amplitude >= 0.0) {
                return Err(SimError::Terrain(format!("amplitude must be >= 0, got {}", params.rough_amplitude)));
            }
            if !(params.rough_cell > 0.0) {
                return Err(SimError::Terrain(format!("noise cell must be > 0, got {}", params.rough_cell)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = (params.size / params.rough_cell).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..m * m).map(|_| rng.random_range(-0.5..0.5) * params.rough_amplitude).collect();
            let mut h = Vec::with_capacity(n * n);
            for ix in 0..n {
                for iy in 0..n {
                    let u = (ix as f64 * params.resolution) / params.rough_cell;
                    let v = (iy as f64 * params.resolution) / params.rough_cell;
                    let (i0, j0) = (u.floor() as usize, v.floor() as usize);
                    let (fu, fv) = (u - i0 as f64, v - j0 as f64);
                    // smoothstep weights keep the surface C1 between lattice points
                    let (su, sv) = (fu * fu * (3.0 - 2.0 * fu), fv * fv * (3.0 - 2.0 * fv));
                    let at = |i: usize, j: usize| lattice[i * m + j];
                    let a = at(i0, j0) * (1.0 - sv) + at(i0, j0 + 1) * sv;
                    let b = at(i0 + 1, j0) * (1.0 - sv) + at(i0 + 1, j0 + 1) * sv;
                    h.push(params.flat_height + a * (1.0 - su) + b * su);
                }
            }
            h
        }
    };
    Ok(TerrainField {
        kind: params.kind,
        resolution: params.resolution,
        origin,
        nx: n,
        ny: n,
        heights,
        friction_mu: params.friction_mu,
        seed,
    })
}

impl TerrainField {
    pub fn cell(&self, ix: usize, iy: usize) -> f64 {
        self.heights[ix * self.ny + iy]
    }

    /// Bilinear height lookup; points outside the grid are clamped to the edge.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        if self.kind == TerrainKind::Flat {
            return self.heights[0];
        }
        let u = ((x - self.origin[0]) / self.resolution).clamp(0.0, (self.nx - 1) as f64);
        let v = ((y - self.origin[1]) / self.resolution).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (u.floor() as usize).min(self.nx - 2);
        let j0 = (v.floor() as usize).min(self.ny - 2);
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let a = self.cell(i0, j0) * (1.0 - fv) + self.cell(i0, j0 + 1) * fv;
        let b = self.cell(i0 + 1, j0) * (1.0 - fv) + self.cell(i0 + 1, j0 + 1) * fv;
        a * (1.0 - fu) + b * fu
    }
}

pub const HEIGHTMAP_SPACING: f64 = 0.1;

/// 17 × 11 yaw-aligned grid (1.6 m along the heading, 1.0 m across) of
/// `terrain height − base z`, rows along the heading, row-major.
pub fn sample_heightmap(terrain: &TerrainField, base_pos: [f64; 3], base_yaw: f64) -> [f64; HEIGHTMAP_DIM] {
    let (s, c) = base_yaw.sin_cos();
    let mut out = [0.0; HEIGHTMAP_DIM];
    let x0 = -HEIGHTMAP_SPACING * (HEIGHTMAP_ROWS - 1) as f64 / 2.0;
    let y0 = -HEIGHTMAP_SPACING * (HEIGHTMAP_COLS - 1) as f64 / 2.0;
    for r in 0..HEIGHTMAP_ROWS {
        for k in 0..HEIGHTMAP_COLS {
            let (lx, ly) = (x0 + r as f64 * HEIGHTMAP_SPACING, y0 + k as f64 * HEIGHTMAP_SPACING);
            let wx = base_pos[0] + c * lx - s * ly;
            let wy = base_pos[1] + s * lx + c * ly;
            out[r * HEIGHTMAP_COLS + k] = terrain.height_at(wx, wy) - base_pos[2];
        }
    }
    out
}
