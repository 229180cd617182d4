mod common;

use common::{brute_force_render, convolved_variance, gradient_check, max_abs_diff, random_cloud, random_image, rng};
use splatlab::grad::{backward, total_loss, LossWeights};
use splatlab::{RenderOutput, RenderSettings};

#[test]
fn analytic_matches_central_differences() {
    let t = gradient_check(21, 12, &mut |_, _| {});
    assert!(t.fraction() >= 0.99, "{t:?}");
}

#[test]
fn mse_gradient_on_oracle_renderer() {
    // Differentiate the brute-force renderer's loss directly, so the finite
    // differences share no rendering code with the analytic pass.
    let mut r = rng(22);
    let (w, h) = (16, 16);
    let cloud = random_cloud(&mut r, 6, w, h);
    let target = random_image(&mut r, w, h);
    let settings = RenderSettings::new(w, h).with_s(0.5).without_cutoffs().with_full_support();
    let weights = LossWeights { l1: 0.0, dssim: 0.0, l2: 1.0 };
    let res = backward(&cloud, &settings, &target, &weights).unwrap();
    let loss = |c: &splatlab::CloudState| {
        let rgb = brute_force_render(c, w, h, settings.s, settings.k, settings.background);
        let out = RenderOutput {
            width: w,
            height: h,
            final_transmittance: vec![0.0; w * h],
            hit_count: vec![0; w * h],
            rgb,
        };
        total_loss(&out, &target, &weights).unwrap()
    };
    let base = brute_force_render(&cloud, w, h, settings.s, settings.k, settings.background);
    assert!(max_abs_diff(&res.render.rgb, &base) < 1e-9);
    let step = 1e-5;
    let mut work = cloud.clone();
    for i in 0..cloud.len() {
        let p0 = cloud.gaussians[i].params();
        for j in 0..p0.len() {
            let mut p = p0;
            p[j] += step;
            work.gaussians[i].set_params(&p);
            let plus = loss(&work);
            p[j] = p0[j] - step;
            work.gaussians[i].set_params(&p);
            let minus = loss(&work);
            work.gaussians[i].set_params(&p0);
            let fd = (plus - minus) / (2.0 * step);
            let a = res.grads.params[i][j];
            assert!(
                (a - fd).abs() < 1e-6 || (a - fd).abs() < 1e-4 * a.abs().max(fd.abs()),
                "gaussian {i} param {j}: analytic {a} vs fd {fd}"
            );
        }
    }
}

#[test]
fn sampled_gaussian_convolution_adds_variances() {
    let v = convolved_variance(2.0, 3.0);
    assert!((v - 5.0).abs() / 5.0 < 1e-2, "{v}");
}
