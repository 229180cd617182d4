//! Tile-binned CPU rasterizer: footprint computation, depth-sorted alpha
//! blending and the screen-space low-pass filter.
//!
//! A Gaussian contributes to a pixel only if the pixel center lies inside its
//! footprint disc of radius `k·√(λmax(Σ) + s)`. Tiles are an acceleration
//! structure only: the image does not depend on the tile size.

use rayon::prelude::*;

use crate::math::{eigenvalues_sym2, SymMat2, INVERSE_RIDGE};
use crate::model::CloudState;

pub const DEFAULT_TILE: usize = 16;
pub const DEFAULT_K: f64 = 3.0;
pub const DEFAULT_ALPHA_CUTOFF: f64 = 1.0 / 255.0;
pub const DEFAULT_MIN_TRANSMITTANCE: f64 = 1e-4;

/// Confidence multiplier beyond which `exp(−k²/2)` underflows to zero in
/// f64, so the footprint disc carries the Gaussian's whole numerical support.
pub const FULL_SUPPORT_K: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    /// Tile side in pixels.
    pub tile: usize,
    /// Low-pass filter value added to the covariance diagonal.
    pub s: f64,
    /// Footprint confidence multiplier.
    pub k: f64,
    pub background: [f64; 3],
    /// Contributions with `α·G' < alpha_cutoff` are skipped.
    pub alpha_cutoff: f64,
    /// Blending stops once transmittance drops below this.
    pub min_transmittance: f64,
}

impl RenderSettings {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            tile: DEFAULT_TILE,
            s: 0.3,
            k: DEFAULT_K,
            background: [0.0; 3],
            alpha_cutoff: DEFAULT_ALPHA_CUTOFF,
            min_transmittance: DEFAULT_MIN_TRANSMITTANCE,
        }
    }

    pub fn with_s(mut self, s: f64) -> Self {
        self.s = s;
        self
    }

    pub fn with_tile(mut self, tile: usize) -> Self {
        self.tile = tile;
        self
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    /// Disable the contribution cutoff and early termination.
    pub fn without_cutoffs(mut self) -> Self {
        self.alpha_cutoff = 0.0;
        self.min_transmittance = 0.0;
        self
    }

    /// Footprint disc covering the full f64 support (see [`FULL_SUPPORT_K`]).
    pub fn with_full_support(mut self) -> Self {
        self.k = FULL_SUPPORT_K;
        self
    }

    pub fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.tile.max(1))
    }

    pub fn tiles_y(&self) -> usize {
        self.height.div_ceil(self.tile.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major interleaved RGB.
    pub rgb: Vec<f64>,
    pub final_transmittance: Vec<f64>,
    /// Number of blended contributions per pixel.
    pub hit_count: Vec<u32>,
}

impl RenderOutput {
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// `k·√(λmax(cov) + s)`.
pub fn footprint_radius(cov: &SymMat2, s: f64, k: f64) -> f64 {
    let (lmax, _) = eigenvalues_sym2(cov);
    k * (lmax.max(0.0) + s).sqrt()
}

/// A Gaussian prepared for blending under the current settings.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    pub index: u32,
    pub mean: [f64; 2],
    /// `(Σ + (s + ridge)·I)⁻¹`
    pub conic: SymMat2,
    pub opacity: f64,
    pub color: [f64; 3],
    pub radius2: f64,
    /// `ln(alpha_cutoff / opacity)`: exponents below this are skipped without evaluating `exp`.
    pub min_power: f64,
}

/// Splats in ascending depth order plus per-tile lists of splat slots.
#[derive(Debug, Clone)]
pub(crate) struct Binned {
    pub splats: Vec<Splat>,
    pub tiles: Vec<Vec<u32>>,
}

/// Pixel-center rectangle `[x0, x1] × [y0, y1]` covered by a tile.
fn tile_rect(settings: &RenderSettings, tx: usize, ty: usize) -> [f64; 4] {
    let t = settings.tile;
    let x0 = (tx * t) as f64 + 0.5;
    let y0 = (ty * t) as f64 + 0.5;
    let x1 = (((tx + 1) * t).min(settings.width)) as f64 - 0.5;
    let y1 = (((ty + 1) * t).min(settings.height)) as f64 - 0.5;
    [x0, y0, x1, y1]
}

fn disc_hits_rect(center: [f64; 2], radius2: f64, rect: [f64; 4]) -> bool {
    let cx = center[0].clamp(rect[0], rect[2]);
    let cy = center[1].clamp(rect[1], rect[3]);
    let dx = center[0] - cx;
    let dy = center[1] - cy;
    dx * dx + dy * dy <= radius2
}

/// Depth order: ascending depth, array index breaking ties.
pub(crate) fn depth_order(cloud: &CloudState) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_by(|&a, &b| {
        cloud.gaussians[a]
            .depth
            .total_cmp(&cloud.gaussians[b].depth)
            .then(a.cmp(&b))
    });
    order
}

pub(crate) fn prepare(cloud: &CloudState, settings: &RenderSettings) -> Binned {
    assert!(settings.tile >= 1, "tile size must be at least 1");
    let (tiles_x, tiles_y) = (settings.tiles_x(), settings.tiles_y());
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let mut splats = Vec::new();
    let t = settings.tile as f64;

    for idx in depth_order(cloud) {
        let g = &cloud.gaussians[idx];
        let cov = g.covariance();
        let radius = footprint_radius(&cov, settings.s, settings.k);
        let conic = cov.add_diag(settings.s + INVERSE_RIDGE).inverse();
        if !(radius.is_finite() && g.pos[0].is_finite() && g.pos[1].is_finite()) {
            continue;
        }
        let opacity = g.opacity();
        let splat = Splat {
            index: idx as u32,
            mean: g.pos,
            conic,
            opacity,
            color: g.rgb(),
            radius2: radius * radius,
            min_power: (settings.alpha_cutoff / opacity).ln(),
        };

        // Candidate tile range from the disc's bounding box.
        let lo_x = ((g.pos[0] - radius - 0.5) / t).floor().max(0.0);
        let hi_x = ((g.pos[0] + radius - 0.5) / t).floor();
        let lo_y = ((g.pos[1] - radius - 0.5) / t).floor().max(0.0);
        let hi_y = ((g.pos[1] + radius - 0.5) / t).floor();
        if hi_x < 0.0 || hi_y < 0.0 || lo_x >= tiles_x as f64 || lo_y >= tiles_y as f64 {
            continue;
        }
        let (lo_x, lo_y) = (lo_x as usize, lo_y as usize);
        let hi_x = (hi_x as usize).min(tiles_x - 1);
        let hi_y = (hi_y as usize).min(tiles_y - 1);

        let slot = splats.len() as u32;
        let mut used = false;
        for ty in lo_y..=hi_y {
            for tx in lo_x..=hi_x {
                if disc_hits_rect(g.pos, splat.radius2, tile_rect(settings, tx, ty)) {
                    tiles[ty * tiles_x + tx].push(slot);
                    used = true;
                }
            }
        }
        if used {
            splats.push(splat);
        }
    }
    Binned { splats, tiles }
}

/// Per-tile Gaussian index lists (ascending depth) for the current cloud.
pub fn bin_gaussians(cloud: &CloudState, settings: &RenderSettings) -> Vec<Vec<usize>> {
    let binned = prepare(cloud, settings);
    binned
        .tiles
        .iter()
        .map(|list| {
            list.iter()
                .map(|&slot| binned.splats[slot as usize].index as usize)
                .collect()
        })
        .collect()
}

/// Per-tile record of which splats touched which pixel, kept for the
/// backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct TileTrace {
    /// Offsets into `entries`, one per tile-local splat plus a terminator.
    pub splat_start: Vec<u32>,
    /// `(tile-local pixel, G', transmittance before this contribution)`,
    /// grouped by splat in blend order, pixels in raster order.
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TraceEntry {
    pub pixel: u32,
    pub g: f64,
    pub trans: f64,
}

/// Forward data reused by the backward pass.
#[derive(Debug, Clone)]
pub struct RenderAux {
    pub(crate) binned: Binned,
    pub(crate) traces: Vec<TileTrace>,
}

impl RenderAux {
    /// Whether Gaussian `i` appears in at least one tile.
    pub fn visible_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for sp in &self.binned.splats {
            mask[sp.index as usize] = true;
        }
        mask
    }
}

struct TileResult {
    rgb: Vec<f64>,
    transmittance: Vec<f64>,
    hits: Vec<u32>,
    trace: TileTrace,
}

/// Pixel-index bounds `[x0, x1)` of a tile.
pub(crate) fn tile_bounds(settings: &RenderSettings, tile_index: usize) -> [usize; 4] {
    let tiles_x = settings.tiles_x();
    let (tx, ty) = (tile_index % tiles_x, tile_index / tiles_x);
    let t = settings.tile;
    [
        tx * t,
        ty * t,
        ((tx + 1) * t).min(settings.width),
        ((ty + 1) * t).min(settings.height),
    ]
}

/// Inclusive index range of pixel centers `i + 0.5` within `[a, b]`, clipped
/// to `[lo, hi)`, widened by one so the exact per-pixel tests decide.
#[inline]
fn span(a: f64, b: f64, lo: usize, hi: usize) -> Option<(usize, usize)> {
    // Clamp before converting so the integer casts below are exact floor/ceil;
    // `f64::floor` is a library call on baseline x86-64.
    let (lo_f, hi_f) = (lo as f64 - 1.0, hi as f64);
    let a = fmin(fmax(a - 1.5, lo_f), hi_f);
    let b = fmin(fmax(b + 0.5, lo_f), hi_f);
    let ai = {
        let t = a as i64;
        t + i64::from((t as f64) < a)
    };
    let bi = {
        let t = b as i64;
        t - i64::from((t as f64) > b)
    };
    let (ai, bi) = (ai.max(lo as i64), bi.min(hi as i64 - 1));
    (ai <= bi).then_some((ai as usize, bi as usize))
}

/// `max` without NaN handling, which compiles to one instruction; NaN in `a` yields `b`.
#[inline]
fn fmax(a: f64, b: f64) -> f64 {
    if a > b { a } else { b }
}

/// `min` counterpart of [`fmax`]; NaN in `a` yields `b`.
#[inline]
fn fmin(a: f64, b: f64) -> f64 {
    if a < b { a } else { b }
}

/// Slack on the ellipse bound so rounding never drops a pixel the exact
/// `power < min_power` test would keep.
const ELLIPSE_SLACK: f64 = 1.0 + 1e-9;

/// Blend one tile splat by splat. Each pixel keeps its own running color and
/// transmittance, so the per-pixel arithmetic is the same as a pixel-major
/// front-to-back loop, but only pixels inside a footprint are visited.
fn render_tile(
    settings: &RenderSettings,
    binned: &Binned,
    tile_index: usize,
    keep_trace: bool,
) -> TileResult {
    let [x0, y0, x1, y1] = tile_bounds(settings, tile_index);
    let tw = x1 - x0;
    let npix = tw * (y1 - y0);
    let list = &binned.tiles[tile_index];

    let mut color = vec![[0.0f64; 3]; npix];
    let mut trans = vec![1.0f64; npix];
    let mut hits = vec![0u32; npix];
    let mut done = vec![false; npix];
    let mut live = npix;
    let mut trace = TileTrace::default();
    if keep_trace {
        trace.splat_start.reserve(list.len() + 1);
    }

    for &slot in list {
        if keep_trace {
            trace.splat_start.push(trace.entries.len() as u32);
        }
        if live == 0 {
            continue;
        }
        let sp = &binned.splats[slot as usize];
        if sp.min_power > 0.0 {
            // Opacity below the cutoff: no pixel can pass.
            continue;
        }
        // Pixels with `power ≥ min_power` lie in the ellipse `q ≤ Q`,
        // Q = −2·min_power; iterate its intersection with the footprint disc.
        // Row `dy` of the ellipse is centered at `−b·dy/a` with half-width
        // `√(a·Q − det·dy²)/a`.
        let q_max = -2.0 * sp.min_power * ELLIPSE_SLACK;
        let bounded = q_max.is_finite();
        let r = sp.radius2.sqrt();
        let (inv_a, det) = (1.0 / sp.conic.a, sp.conic.det());
        let aq = sp.conic.a * q_max;
        // The disc only needs clipping when the ellipse pokes out of it:
        // the ellipse's farthest point is √(Q / λmin(conic)) from the center.
        let lmin = 0.5 * (sp.conic.a + sp.conic.c - (sp.conic.a - sp.conic.c).hypot(2.0 * sp.conic.b));
        let clip_disc = !bounded || !(q_max < sp.radius2 * lmin * (1.0 - 1e-9));
        let ry = if bounded { r.min((aq / det).sqrt()) } else { r };
        let Some((ya, yb)) = span(sp.mean[1] - ry, sp.mean[1] + ry, y0, y1) else {
            continue;
        };
        for y in ya..yb + 1 {
            let dy = y as f64 + 0.5 - sp.mean[1];
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            if clip_disc {
                let half = fmax(sp.radius2 - dy * dy, 0.0).sqrt();
                (lo, hi) = (-half, half);
            }
            if bounded {
                let d = aq - det * dy * dy;
                if d < 0.0 {
                    continue;
                }
                let (mid, ehalf) = (-sp.conic.b * dy * inv_a, d.sqrt() * inv_a);
                lo = fmax(lo, mid - ehalf);
                hi = fmin(hi, mid + ehalf);
            }
            let Some((xa, xb)) = span(sp.mean[0] + lo, sp.mean[0] + hi, x0, x1) else {
                continue;
            };
            let row = (y - y0) * tw;
            for x in xa..xb + 1 {
                let p = row + x - x0;
                if done[p] {
                    continue;
                }
                let dx = x as f64 + 0.5 - sp.mean[0];
                if dx * dx + dy * dy > sp.radius2 {
                    continue;
                }
                let power =
                    -0.5 * (sp.conic.a * dx * dx + sp.conic.c * dy * dy) - sp.conic.b * dx * dy;
                if power < sp.min_power {
                    continue;
                }
                let gv = power.exp();
                let a = sp.opacity * gv;
                if a < settings.alpha_cutoff {
                    continue;
                }
                let t = trans[p];
                let w = a * t;
                let c = &mut color[p];
                c[0] += sp.color[0] * w;
                c[1] += sp.color[1] * w;
                c[2] += sp.color[2] * w;
                trans[p] = t * (1.0 - a);
                hits[p] += 1;
                if keep_trace {
                    trace.entries.push(TraceEntry {
                        pixel: p as u32,
                        g: gv,
                        trans: t,
                    });
                }
                if trans[p] < settings.min_transmittance {
                    done[p] = true;
                    live -= 1;
                }
            }
        }
    }
    if keep_trace {
        trace.splat_start.push(trace.entries.len() as u32);
    }

    let bg = settings.background;
    let mut rgb = vec![0.0; 3 * npix];
    for p in 0..npix {
        for ch in 0..3 {
            rgb[3 * p + ch] = color[p][ch] + trans[p] * bg[ch];
        }
    }
    TileResult {
        rgb,
        transmittance: trans,
        hits,
        trace,
    }
}

fn render_impl(
    cloud: &CloudState,
    settings: &RenderSettings,
    keep_trace: bool,
) -> (RenderOutput, RenderAux) {
    let binned = prepare(cloud, settings);
    let ntiles = settings.tiles_x() * settings.tiles_y();
    let results: Vec<TileResult> = (0..ntiles)
        .into_par_iter()
        .map(|t| render_tile(settings, &binned, t, keep_trace))
        .collect();

    let (w, h) = (settings.width, settings.height);
    let mut out = RenderOutput {
        width: w,
        height: h,
        rgb: vec![0.0; 3 * w * h],
        final_transmittance: vec![1.0; w * h],
        hit_count: vec![0; w * h],
    };
    let mut traces = Vec::with_capacity(if keep_trace { ntiles } else { 0 });
    for (ti, res) in results.into_iter().enumerate() {
        let [x0, y0, x1, y1] = tile_bounds(settings, ti);
        let tw = x1 - x0;
        for (row, y) in (y0..y1).enumerate() {
            let src = row * tw;
            let dst = y * w + x0;
            out.rgb[3 * dst..3 * (dst + tw)].copy_from_slice(&res.rgb[3 * src..3 * (src + tw)]);
            out.final_transmittance[dst..dst + tw]
                .copy_from_slice(&res.transmittance[src..src + tw]);
            out.hit_count[dst..dst + tw].copy_from_slice(&res.hits[src..src + tw]);
        }
        if keep_trace {
            traces.push(res.trace);
        }
    }
    (out, RenderAux { binned, traces })
}

/// Depth-sorted alpha blending of the cloud.
pub fn render(cloud: &CloudState, settings: &RenderSettings) -> RenderOutput {
    render_impl(cloud, settings, false).0
}

/// Like [`render`], also returning the per-pixel blend trace used by the
/// backward pass.
pub fn render_with_aux(cloud: &CloudState, settings: &RenderSettings) -> (RenderOutput, RenderAux) {
    render_impl(cloud, settings, true)
}
