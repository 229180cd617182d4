//! Image losses and the backward pass through blending, the low-pass filter,
//! the activations and the covariance parametrization.
//!
//! Cutoff decisions (footprint disc, contribution cutoff, early termination)
//! are taken from the forward pass and held fixed, so the gradient is exact
//! inside each piecewise-smooth region.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CloudState, ParamVec, TargetImage, PARAMS_PER_GAUSSIAN};
use crate::raster::{render, render_with_aux, tile_bounds, RenderAux, RenderOutput, RenderSettings};
use crate::ssim::SsimReference;

/// Weights of the image loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    /// Weight on `(1 − SSIM)/2`.
    pub dssim: f64,
    /// Weight on the mean squared error.
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 1.0,
            dssim: 0.2,
            l2: 0.0,
        }
    }
}

impl LossWeights {
    pub fn l1_only() -> Self {
        Self {
            l1: 1.0,
            dssim: 0.0,
            l2: 0.0,
        }
    }
}

/// Per-Gaussian gradients, index-aligned with the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    /// Gradients in [`ParamVec`] layout (colors and opacity pre-activation).
    pub params: Vec<ParamVec>,
    /// `|∂L/∂μ|` measured in normalized device coordinates, see [`ndc_grad_norm`].
    pub screen_grad_norm: Vec<f64>,
    /// Whether the Gaussian took part in the render.
    pub visible: Vec<bool>,
}

impl GradBuffer {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            screen_grad_norm: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn d_pos(&self, i: usize) -> [f64; 2] {
        [self.params[i][0], self.params[i][1]]
    }

    pub fn d_log_scale(&self, i: usize) -> [f64; 2] {
        [self.params[i][2], self.params[i][3]]
    }

    pub fn d_rot(&self, i: usize) -> f64 {
        self.params[i][4]
    }

    pub fn d_color(&self, i: usize) -> [f64; 3] {
        [self.params[i][5], self.params[i][6], self.params[i][7]]
    }

    pub fn d_opacity_logit(&self, i: usize) -> f64 {
        self.params[i][8]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
    }
}

fn check_same_dims(render: &RenderOutput, target: &TargetImage) -> Result<()> {
    if render.width != target.width || render.height != target.height {
        return Err(Error::DimensionMismatch {
            left_w: render.width,
            left_h: render.height,
            right_w: target.width,
            right_h: target.height,
        });
    }
    Ok(())
}

/// Mean absolute per-channel difference.
pub fn loss_l1(render: &RenderOutput, target: &TargetImage) -> Result<f64> {
    check_same_dims(render, target)?;
    let sum: f64 = render
        .rgb
        .iter()
        .zip(&target.rgb)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / render.rgb.len() as f64)
}

/// `(1 − SSIM)/2` with an 11×11 Gaussian window (σ = 1.5).
pub fn loss_dssim(render: &RenderOutput, target: &TargetImage) -> Result<f64> {
    check_same_dims(render, target)?;
    let s = crate::ssim::ssim_rgb(&render.rgb, &target.rgb, render.width, render.height)?;
    Ok(0.5 * (1.0 - s))
}

/// A target image prepared for repeated loss evaluations: terms that depend
/// only on the target are computed once.
#[derive(Debug, Clone)]
pub struct LossTarget<'a> {
    pub image: &'a TargetImage,
    pub weights: LossWeights,
    ssim: Option<SsimReference>,
}

impl<'a> LossTarget<'a> {
    pub fn new(image: &'a TargetImage, weights: &LossWeights) -> Result<Self> {
        let ssim = if weights.dssim != 0.0 {
            Some(SsimReference::new(&image.rgb, image.width, image.height)?)
        } else {
            None
        };
        Ok(Self {
            image,
            weights: *weights,
            ssim,
        })
    }

    /// Weighted loss and its gradient with respect to every rendered channel value.
    pub fn loss_and_image_grad(&self, render: &RenderOutput) -> Result<(f64, Vec<f64>)> {
        let (target, weights) = (self.image, &self.weights);
        check_same_dims(render, target)?;
        let n = render.rgb.len() as f64;
        let mut grad = vec![0.0; render.rgb.len()];
        let mut loss = 0.0;
        if weights.l1 != 0.0 {
            let mut sum = 0.0;
            for ((g, a), b) in grad.iter_mut().zip(&render.rgb).zip(&target.rgb) {
                let r = a - b;
                sum += r.abs();
                // sign(0) = 0
                let sign = if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *g += weights.l1 * sign / n;
            }
            loss += weights.l1 * sum / n;
        }
        if weights.l2 != 0.0 {
            let mut sum = 0.0;
            for ((g, a), b) in grad.iter_mut().zip(&render.rgb).zip(&target.rgb) {
                let r = a - b;
                sum += r * r;
                *g += weights.l2 * 2.0 * r / n;
            }
            loss += weights.l2 * sum / n;
        }
        if let Some(reference) = &self.ssim {
            let (s, ds) = reference.ssim_with_grad(&render.rgb)?;
            loss += weights.dssim * 0.5 * (1.0 - s);
            for (g, d) in grad.iter_mut().zip(&ds) {
                *g -= weights.dssim * 0.5 * d;
            }
        }
        Ok((loss, grad))
    }
}

/// Weighted loss and its gradient with respect to every rendered channel value.
pub fn loss_and_image_grad(
    render: &RenderOutput,
    target: &TargetImage,
    weights: &LossWeights,
) -> Result<(f64, Vec<f64>)> {
    check_same_dims(render, target)?;
    LossTarget::new(target, weights)?.loss_and_image_grad(render)
}

/// Loss value only.
pub fn total_loss(render: &RenderOutput, target: &TargetImage, weights: &LossWeights) -> Result<f64> {
    check_same_dims(render, target)?;
    let mut loss = 0.0;
    if weights.l1 != 0.0 {
        loss += weights.l1 * loss_l1(render, target)?;
    }
    if weights.l2 != 0.0 {
        let sum: f64 = render
            .rgb
            .iter()
            .zip(&target.rgb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        loss += weights.l2 * sum / render.rgb.len() as f64;
    }
    if weights.dssim != 0.0 {
        loss += weights.dssim * loss_dssim(render, target)?;
    }
    Ok(loss)
}

/// Per-splat accumulators filled per pixel:
/// `[∂μx, ∂μy, ∂A, ∂B, ∂C, ∂α, ∂r, ∂g, ∂b]` where `A, B, C` are the conic entries.
type SplatAccum = [f64; 9];

/// Norm of a pixel-space mean gradient expressed in normalized device
/// coordinates (the image spans `[−1, 1]` on each axis), the scale the
/// conventional densification threshold is quoted in.
pub fn ndc_grad_norm(dx: f64, dy: f64, settings: &RenderSettings) -> f64 {
    (dx * 0.5 * settings.width as f64).hypot(dy * 0.5 * settings.height as f64)
}

/// Backward pass reusing a forward trace.
///
/// `d_image` is `∂L/∂rgb` in the render's interleaved layout. Per-tile
/// partial sums are merged in tile order, so the result does not depend on
/// the number of worker threads.
pub fn backward_from_aux(
    cloud: &CloudState,
    settings: &RenderSettings,
    aux: &RenderAux,
    d_image: &[f64],
) -> GradBuffer {
    let binned = &aux.binned;
    let w = settings.width;
    let bg = settings.background;

    let per_tile: Vec<Vec<SplatAccum>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|ti| {
            let list = &binned.tiles[ti];
            let trace = &aux.traces[ti];
            let mut acc = vec![[0.0; 9]; list.len()];
            if trace.entries.is_empty() {
                return acc;
            }
            let [x0, y0, x1, y1] = tile_bounds(settings, ti);
            let tw = x1 - x0;
            let npix = tw * (y1 - y0);
            let dl: Vec<[f64; 3]> = (0..npix)
                .map(|p| {
                    let gi = 3 * ((y0 + p / tw) * w + x0 + p % tw);
                    [d_image[gi], d_image[gi + 1], d_image[gi + 2]]
                })
                .collect();
            let px: Vec<f64> = (0..npix).map(|p| (x0 + p % tw) as f64 + 0.5).collect();
            let py: Vec<f64> = (0..npix).map(|p| (y0 + p / tw) as f64 + 0.5).collect();
            // Per pixel: light arriving from behind the splat being visited,
            // before that splat's own attenuation.
            let mut behind = vec![bg; npix];
            for li in (0..list.len()).rev() {
                let sp = &binned.splats[list[li] as usize];
                let entries = &trace.entries
                    [trace.splat_start[li] as usize..trace.splat_start[li + 1] as usize];
                let slot = &mut acc[li];
                for e in entries {
                    let p = e.pixel as usize;
                    let d = dl[p];
                    if d == [0.0; 3] {
                        continue;
                    }
                    let a = sp.opacity * e.g;
                    let tb = e.trans;
                    let b = &mut behind[p];
                    let mut dl_da = 0.0;
                    for ch in 0..3 {
                        dl_da += d[ch] * tb * (sp.color[ch] - b[ch]);
                        slot[6 + ch] += d[ch] * a * tb;
                        b[ch] = sp.color[ch] * a + (1.0 - a) * b[ch];
                    }
                    slot[5] += dl_da * e.g;
                    let dl_dpower = dl_da * a;
                    let dx = px[p] - sp.mean[0];
                    let dy = py[p] - sp.mean[1];
                    let q = sp.conic;
                    slot[0] += dl_dpower * (q.a * dx + q.b * dy);
                    slot[1] += dl_dpower * (q.b * dx + q.c * dy);
                    slot[2] -= 0.5 * dl_dpower * dx * dx;
                    slot[3] -= dl_dpower * dx * dy;
                    slot[4] -= 0.5 * dl_dpower * dy * dy;
                }
            }
            acc
        })
        .collect();

    let mut totals = vec![[0.0; 9]; binned.splats.len()];
    for (ti, acc) in per_tile.iter().enumerate() {
        for (li, a) in acc.iter().enumerate() {
            let slot = &mut totals[binned.tiles[ti][li] as usize];
            for j in 0..9 {
                slot[j] += a[j];
            }
        }
    }

    let mut out = GradBuffer::zeros(cloud.len());
    for (sp, acc) in binned.splats.iter().zip(&totals) {
        let i = sp.index as usize;
        let g = &cloud.gaussians[i];
        out.visible[i] = true;
        let q = sp.conic;
        // ∂L/∂M = −Q·G_Q·Q for M = Σ + (s + ridge)·I, with G_Q the full-matrix
        // gradient of the conic (off-diagonal split evenly).
        let gq = crate::math::SymMat2::new(acc[2], 0.5 * acc[3], acc[4]);
        let qg = mat_mul(&q, &gq);
        let gm = mat_mul_sym_result(&qg, &q);
        let gm = [[-gm[0][0], -gm[0][1]], [-gm[1][0], -gm[1][1]]];

        let l0 = (2.0 * g.log_scale[0]).exp();
        let l1 = (2.0 * g.log_scale[1]).exp();
        let (sin, cos) = g.rot.sin_cos();
        let v0 = [cos, sin];
        let v1 = [-sin, cos];
        let form = |u: [f64; 2], v: [f64; 2]| {
            u[0] * (gm[0][0] * v[0] + gm[0][1] * v[1]) + u[1] * (gm[1][0] * v[0] + gm[1][1] * v[1])
        };
        let d_l0 = form(v0, v0);
        let d_l1 = form(v1, v1);
        let d_rot = (l0 - l1) * (form(v0, v1) + form(v1, v0));

        let rgb = sp.color;
        let alpha = sp.opacity;
        out.params[i] = [
            acc[0],
            acc[1],
            2.0 * l0 * d_l0,
            2.0 * l1 * d_l1,
            d_rot,
            acc[6] * rgb[0] * (1.0 - rgb[0]),
            acc[7] * rgb[1] * (1.0 - rgb[1]),
            acc[8] * rgb[2] * (1.0 - rgb[2]),
            acc[5] * alpha * (1.0 - alpha),
        ];
        out.screen_grad_norm[i] = ndc_grad_norm(acc[0], acc[1], settings);
    }
    out
}

fn mat_mul(a: &crate::math::SymMat2, b: &crate::math::SymMat2) -> [[f64; 2]; 2] {
    [
        [a.a * b.a + a.b * b.b, a.a * b.b + a.b * b.c],
        [a.b * b.a + a.c * b.b, a.b * b.b + a.c * b.c],
    ]
}

fn mat_mul_sym_result(a: &[[f64; 2]; 2], b: &crate::math::SymMat2) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b.a + a[0][1] * b.b, a[0][0] * b.b + a[0][1] * b.c],
        [a[1][0] * b.a + a[1][1] * b.b, a[1][0] * b.b + a[1][1] * b.c],
    ]
}

/// Loss value plus gradients from a fresh forward pass.
#[derive(Debug, Clone)]
pub struct BackwardResult {
    pub loss: f64,
    pub render: RenderOutput,
    pub grads: GradBuffer,
}

/// Render, evaluate the weighted loss and differentiate it.
pub fn backward(
    cloud: &CloudState,
    settings: &RenderSettings,
    target: &TargetImage,
    weights: &LossWeights,
) -> Result<BackwardResult> {
    let (render, aux) = render_with_aux(cloud, settings);
    let (loss, d_image) = loss_and_image_grad(&render, target, weights)?;
    let grads = backward_from_aux(cloud, settings, &aux, &d_image);
    Ok(BackwardResult {
        loss,
        render,
        grads,
    })
}

/// Central-difference gradient of the loss, one coordinate at a time, with
/// the contribution cutoff and early termination disabled.
pub fn fd_gradient(
    cloud: &CloudState,
    settings: &RenderSettings,
    target: &TargetImage,
    weights: &LossWeights,
    h: f64,
) -> Result<GradBuffer> {
    if h <= 0.0 {
        return Err(Error::InvalidInput(format!("step h must be > 0, got {h}")));
    }
    let settings = settings.clone().without_cutoffs();
    let eval = |c: &CloudState| -> Result<f64> { total_loss(&render(c, &settings), target, weights) };
    let base_visible = render_with_aux(cloud, &settings).1.visible_mask(cloud.len());
    let mut out = GradBuffer::zeros(cloud.len());
    out.visible = base_visible;
    let mut work = cloud.clone();
    for i in 0..cloud.len() {
        let base = cloud.gaussians[i].params();
        for j in 0..PARAMS_PER_GAUSSIAN {
            let mut p = base;
            p[j] = base[j] + h;
            work.gaussians[i].set_params(&p);
            let plus = eval(&work)?;
            p[j] = base[j] - h;
            work.gaussians[i].set_params(&p);
            let minus = eval(&work)?;
            out.params[i][j] = (plus - minus) / (2.0 * h);
        }
        work.gaussians[i].set_params(&base);
        out.screen_grad_norm[i] = ndc_grad_norm(out.params[i][0], out.params[i][1], &settings);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::inverse_sigmoid;
    use crate::model::Gaussian2D;
    use approx::assert_relative_eq;

    fn image(w: usize, h: usize, f: impl Fn(usize) -> f64) -> TargetImage {
        TargetImage::new(w, h, (0..3 * w * h).map(f).collect()).unwrap()
    }

    fn as_render(t: &TargetImage) -> RenderOutput {
        RenderOutput {
            width: t.width,
            height: t.height,
            rgb: t.rgb.clone(),
            final_transmittance: vec![0.0; t.width * t.height],
            hit_count: vec![0; t.width * t.height],
        }
    }

    #[test]
    fn l1_examples() {
        let a = image(4, 4, |_| 0.3);
        assert_eq!(loss_l1(&as_render(&a), &a).unwrap(), 0.0);
        let zeros = image(4, 4, |_| 0.0);
        let ones = image(4, 4, |_| 1.0);
        assert_eq!(loss_l1(&as_render(&zeros), &ones).unwrap(), 1.0);
        let half = image(4, 4, |i| if i % 2 == 0 { 0.5 } else { 0.0 });
        assert_relative_eq!(loss_l1(&as_render(&half), &zeros).unwrap(), 0.25);
    }

    #[test]
    fn l1_dimension_mismatch() {
        let a = image(4, 4, |_| 0.0);
        let b = image(4, 5, |_| 0.0);
        assert!(matches!(
            loss_l1(&as_render(&a), &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dssim_examples() {
        let a = image(16, 16, |i| (i % 7) as f64 / 7.0);
        assert!(loss_dssim(&as_render(&a), &a).unwrap().abs() < 1e-12);

        let zeros = image(16, 16, |_| 0.0);
        let ones = image(16, 16, |_| 1.0);
        let c1 = 0.01f64 * 0.01;
        let ssim = c1 / (1.0 + c1);
        assert_relative_eq!(
            loss_dssim(&as_render(&zeros), &ones).unwrap(),
            0.5 * (1.0 - ssim),
            epsilon = 1e-12
        );
        let small = image(8, 16, |_| 0.0);
        assert!(matches!(
            loss_dssim(&as_render(&small), &small),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    /// One Gaussian over one pixel, L2 loss against a known target:
    /// C = c·a + (1 − a)·bg with a = σ(o)·G, so
    /// ∂L/∂o = 2(C − t)·(c − bg)·G·σ(o)(1 − σ(o)) per channel, averaged over channels.
    #[test]
    fn single_pixel_opacity_gradient_by_hand() {
        let settings = RenderSettings::new(1, 1)
            .with_background([0.2, 0.1, 0.0])
            .without_cutoffs();
        let o = 0.4;
        let color_pre = [0.5, -1.0, 2.0];
        let g = Gaussian2D::isotropic([0.9, 0.3], 0.2, color_pre, o, 0.5);
        let cloud = CloudState::new(vec![g.clone()]);
        let target = TargetImage::new(1, 1, vec![0.9, 0.2, 0.4]).unwrap();
        let weights = LossWeights {
            l1: 0.0,
            dssim: 0.0,
            l2: 1.0,
        };
        let res = backward(&cloud, &settings, &target, &weights).unwrap();

        let gv = crate::math::gaussian_eval(&g, [0.5, 0.5], settings.s);
        let alpha = crate::math::sigmoid(o);
        let a = alpha * gv;
        let rgb = g.rgb();
        let mut expected = 0.0;
        for ch in 0..3 {
            let c = rgb[ch] * a + (1.0 - a) * settings.background[ch];
            expected += 2.0 * (c - target.rgb[ch]) * (rgb[ch] - settings.background[ch]) * gv
                * alpha
                * (1.0 - alpha)
                / 3.0;
        }
        assert_relative_eq!(res.grads.d_opacity_logit(0), expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_opacity_gives_zero_color_gradient() {
        let settings = RenderSettings::new(12, 12);
        let g = Gaussian2D::isotropic([6.0, 6.0], 1.0, [0.3, 0.1, -0.2], -800.0, 0.5);
        let cloud = CloudState::new(vec![g]);
        let target = image(12, 12, |i| (i % 5) as f64 / 5.0);
        let fd = fd_gradient(&cloud, &settings, &target, &LossWeights::l1_only(), 1e-4).unwrap();
        assert_eq!(fd.d_color(0), [0.0; 3]);
        let an = backward(&cloud, &settings, &target, &LossWeights::l1_only()).unwrap();
        assert_eq!(an.grads.d_color(0), [0.0; 3]);
    }

    #[test]
    fn fd_exact_on_quadratic_structure() {
        // With an L2 loss and a single color channel parameter entering
        // linearly through σ(c), the central difference tracks the analytic
        // derivative to O(h²).
        let settings = RenderSettings::new(4, 4).without_cutoffs().with_full_support();
        let g = Gaussian2D::isotropic([2.0, 2.0], 1.5, [0.0, 0.0, 0.0], inverse_sigmoid(0.7), 0.5);
        let cloud = CloudState::new(vec![g]);
        let target = image(4, 4, |_| 0.25);
        let weights = LossWeights {
            l1: 0.0,
            dssim: 0.0,
            l2: 1.0,
        };
        let an = backward(&cloud, &settings, &target, &weights).unwrap().grads;
        for h in [1e-2, 1e-3] {
            let fd = fd_gradient(&cloud, &settings, &target, &weights, h).unwrap();
            let err = (fd.d_color(0)[0] - an.d_color(0)[0]).abs();
            assert!(err < 10.0 * h * h, "h={h} err={err}");
        }
        assert!(fd_gradient(&cloud, &settings, &target, &weights, 0.0).is_err());
    }

    #[test]
    fn exact_fit_is_stationary_for_smooth_losses() {
        let settings = RenderSettings::new(24, 24);
        let cloud = CloudState::new(vec![
            Gaussian2D::new([8.0, 9.0], [1.2, 0.6], 0.4, [1.0, -0.5, 0.2], 0.3, 0.2),
            Gaussian2D::new([15.0, 14.0], [0.9, 1.4], -0.7, [-1.0, 0.5, 0.8], 1.0, 0.6),
        ]);
        let out = render(&cloud, &settings);
        let target = TargetImage::new(24, 24, out.rgb.clone()).unwrap();
        let weights = LossWeights {
            l1: 0.0,
            dssim: 1.0,
            l2: 1.0,
        };
        let res = backward(&cloud, &settings, &target, &weights).unwrap();
        for v in res.grads.params.iter().flatten() {
            assert!(v.abs() <= 1e-8, "{v}");
        }
        // L1 at an exact fit: subgradient 0 by convention.
        let res = backward(&cloud, &settings, &target, &LossWeights::l1_only()).unwrap();
        assert!(res.grads.params.iter().flatten().all(|v| *v == 0.0));
    }
}
