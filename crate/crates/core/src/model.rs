//! Domain types: the learnable splat population and the target image.

use crate::error::{Error, Result};
use crate::math::{covariance_from_params, sigmoid, SymMat2};
use serde::{Deserialize, Serialize};

/// Number of learnable scalars per Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 9;

/// Flat per-Gaussian parameter vector, in the order
/// `[pos.x, pos.y, log_scale.0, log_scale.1, rot, color.r, color.g, color.b, opacity_logit]`.
pub type ParamVec = [f64; PARAMS_PER_GAUSSIAN];

/// Parameter slots inside a [`ParamVec`].
pub mod slot {
    pub const POS: usize = 0;
    pub const LOG_SCALE: usize = 2;
    pub const ROT: usize = 4;
    pub const COLOR: usize = 5;
    pub const OPACITY: usize = 8;
}

/// One screen-space splat.
///
/// Colors and opacity are stored pre-activation; `depth` is an ordering key
/// that is never optimized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    /// Center in pixel coordinates; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub pos: [f64; 2],
    pub log_scale: [f64; 2],
    pub rot: f64,
    pub color: [f64; 3],
    pub opacity_logit: f64,
    pub depth: f64,
}

impl Gaussian2D {
    pub fn new(
        pos: [f64; 2],
        log_scale: [f64; 2],
        rot: f64,
        color: [f64; 3],
        opacity_logit: f64,
        depth: f64,
    ) -> Self {
        Self {
            pos,
            log_scale,
            rot,
            color,
            opacity_logit,
            depth,
        }
    }

    pub fn isotropic(
        pos: [f64; 2],
        log_scale: f64,
        color: [f64; 3],
        opacity_logit: f64,
        depth: f64,
    ) -> Self {
        Self::new(pos, [log_scale; 2], 0.0, color, opacity_logit, depth)
    }

    pub fn covariance(&self) -> SymMat2 {
        covariance_from_params(self.log_scale, self.rot)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rgb(&self) -> [f64; 3] {
        self.color.map(sigmoid)
    }

    /// Largest per-axis standard deviation in pixels.
    pub fn max_scale(&self) -> f64 {
        self.log_scale[0].max(self.log_scale[1]).exp()
    }

    pub fn params(&self) -> ParamVec {
        [
            self.pos[0],
            self.pos[1],
            self.log_scale[0],
            self.log_scale[1],
            self.rot,
            self.color[0],
            self.color[1],
            self.color[2],
            self.opacity_logit,
        ]
    }

    pub fn set_params(&mut self, p: &ParamVec) {
        self.pos = [p[0], p[1]];
        self.log_scale = [p[2], p[3]];
        self.rot = p[4];
        self.color = [p[5], p[6], p[7]];
        self.opacity_logit = p[8];
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite()) && self.depth.is_finite()
    }
}

/// The splat population plus the per-Gaussian optimizer moments and
/// densification statistics. All shadow arrays stay index-aligned with
/// `gaussians`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloudState {
    pub gaussians: Vec<Gaussian2D>,
    pub adam_m: Vec<ParamVec>,
    pub adam_v: Vec<ParamVec>,
    /// Running sum of screen-space positional gradient norms.
    pub grad_pos_accum: Vec<f64>,
    /// Number of backward passes in which the Gaussian was rendered.
    pub grad_pos_count: Vec<u32>,
}

impl CloudState {
    pub fn new(gaussians: Vec<Gaussian2D>) -> Self {
        let n = gaussians.len();
        Self {
            gaussians,
            adam_m: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            adam_v: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            grad_pos_accum: vec![0.0; n],
            grad_pos_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Append a Gaussian with fresh optimizer moments and statistics.
    pub fn push(&mut self, g: Gaussian2D) {
        self.gaussians.push(g);
        self.adam_m.push([0.0; PARAMS_PER_GAUSSIAN]);
        self.adam_v.push([0.0; PARAMS_PER_GAUSSIAN]);
        self.grad_pos_accum.push(0.0);
        self.grad_pos_count.push(0);
    }

    /// Keep the entries for which `keep[i]` is true, across every shadow array.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T>(v: &mut Vec<T>, keep: &[bool]) {
            let mut i = 0;
            v.retain(|_| {
                let k = keep[i];
                i += 1;
                k
            });
        }
        filter(&mut self.gaussians, keep);
        filter(&mut self.adam_m, keep);
        filter(&mut self.adam_v, keep);
        filter(&mut self.grad_pos_accum, keep);
        filter(&mut self.grad_pos_count, keep);
    }

    pub fn reset_stats(&mut self) {
        self.grad_pos_accum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_pos_count.iter_mut().for_each(|v| *v = 0);
    }

    /// Mean accumulated positional gradient norm per observation.
    pub fn mean_grad_norm(&self, i: usize) -> f64 {
        match self.grad_pos_count[i] {
            0 => 0.0,
            c => self.grad_pos_accum[i] / c as f64,
        }
    }

    pub fn is_aligned(&self) -> bool {
        let n = self.gaussians.len();
        self.adam_m.len() == n
            && self.adam_v.len() == n
            && self.grad_pos_accum.len() == n
            && self.grad_pos_count.len() == n
    }
}

/// Row-major RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
}

impl TargetImage {
    pub fn new(width: usize, height: usize, rgb: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image must be non-empty".into()));
        }
        if rgb.len() != 3 * width * height {
            return Err(Error::InvalidInput(format!(
                "expected {} values for {width}x{height} RGB, got {}",
                3 * width * height,
                rgb.len()
            )));
        }
        if let Some(v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn constant(width: usize, height: usize, color: [f64; 3]) -> Self {
        let rgb = (0..width * height).flat_map(|_| color).collect();
        Self { width, height, rgb }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }
}
