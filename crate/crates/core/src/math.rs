//! Small 2×2 symmetric linear algebra kernel plus the Gaussian evaluation
//! shared by the renderer, the gradient code and the initializers.

use crate::model::Gaussian2D;

/// Numerical ridge added to both diagonal entries before inverting a
/// covariance. Kept separate from the modeled low-pass value `s`.
pub const INVERSE_RIDGE: f64 = 1e-9;

/// Symmetric matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymMat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SymMat2 {
    pub const IDENTITY: SymMat2 = SymMat2 {
        a: 1.0,
        b: 0.0,
        c: 1.0,
    };

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub const fn diag(a: f64, c: f64) -> Self {
        Self { a, b: 0.0, c }
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn trace(&self) -> f64 {
        self.a + self.c
    }

    pub fn add_diag(&self, s: f64) -> Self {
        Self {
            a: self.a + s,
            b: self.b,
            c: self.c + s,
        }
    }

    /// Inverse of an SPD matrix. Callers are expected to have added
    /// [`INVERSE_RIDGE`] (or a larger diagonal term) beforehand.
    pub fn inverse(&self) -> Self {
        let inv_det = 1.0 / self.det();
        Self {
            a: self.c * inv_det,
            b: -self.b * inv_det,
            c: self.a * inv_det,
        }
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad(&self, x: [f64; 2]) -> f64 {
        self.a * x[0] * x[0] + 2.0 * self.b * x[0] * x[1] + self.c * x[1] * x[1]
    }

    pub fn mul_vec(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.a * x[0] + self.b * x[1],
            self.b * x[0] + self.c * x[1],
        ]
    }

    /// `(λmax, λmin)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        eigenvalues_sym2(self)
    }
}

/// Eigenvalues of a symmetric 2×2 matrix, largest first.
///
/// `(tr ± √(tr² − 4·det)) / 2`, with the discriminant written as
/// `((a − c)/2)² + b²` so it cannot go negative under roundoff.
pub fn eigenvalues_sym2(m: &SymMat2) -> (f64, f64) {
    let mid = 0.5 * (m.a + m.c);
    let half_diff = 0.5 * (m.a - m.c);
    let disc = (half_diff * half_diff + m.b * m.b).max(0.0).sqrt();
    (mid + disc, mid - disc)
}

/// `R(θ)·diag(e^{2·ls₀}, e^{2·ls₁})·R(θ)ᵀ`.
pub fn covariance_from_params(log_scale: [f64; 2], rot: f64) -> SymMat2 {
    let l0 = (2.0 * log_scale[0]).exp();
    let l1 = (2.0 * log_scale[1]).exp();
    let (sin, cos) = rot.sin_cos();
    SymMat2 {
        a: l0 * cos * cos + l1 * sin * sin,
        b: (l0 - l1) * cos * sin,
        c: l0 * sin * sin + l1 * cos * cos,
    }
}

/// Low-passed Gaussian `exp(−½ (x−μ)ᵀ (Σ + sI)⁻¹ (x−μ))`.
pub fn gaussian_eval(g: &Gaussian2D, x: [f64; 2], s: f64) -> f64 {
    let conic = g
        .covariance()
        .add_diag(s + INVERSE_RIDGE)
        .inverse();
    let d = [x[0] - g.pos[0], x[1] - g.pos[1]];
    (-0.5 * conic.quad(d)).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    #[test]
    fn covariance_examples() {
        for rot in [0.0, 0.3, 1.7, -2.9] {
            let m = covariance_from_params([0.0, 0.0], rot);
            assert_relative_eq!(m.a, 1.0, epsilon = 1e-15);
            assert_relative_eq!(m.b, 0.0, epsilon = 1e-15);
            assert_relative_eq!(m.c, 1.0, epsilon = 1e-15);
        }
        let m = covariance_from_params([LN_2, 0.0], 0.0);
        assert_relative_eq!(m.a, 4.0, epsilon = 1e-14);
        assert_eq!(m.b, 0.0);
        assert_relative_eq!(m.c, 1.0, epsilon = 1e-14);

        let m = covariance_from_params([LN_2, 0.0], FRAC_PI_2);
        assert_relative_eq!(m.a, 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.b, 0.0, epsilon = 1e-14);
        assert_relative_eq!(m.c, 4.0, epsilon = 1e-14);
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(eigenvalues_sym2(&SymMat2::diag(1.0, 4.0)), (4.0, 1.0));
        let (hi, lo) = eigenvalues_sym2(&SymMat2::new(2.0, 1.0, 2.0));
        assert_relative_eq!(hi, 3.0, epsilon = 1e-15);
        assert_relative_eq!(lo, 1.0, epsilon = 1e-15);
        assert_eq!(eigenvalues_sym2(&SymMat2::IDENTITY), (1.0, 1.0));
    }

    #[test]
    fn gaussian_eval_examples() {
        let mut g = Gaussian2D::isotropic([3.0, -2.0], 0.0, [0.0; 3], 0.0, 0.5);
        assert_eq!(gaussian_eval(&g, [3.0, -2.0], 0.3), 1.0);

        // Σ + sI = I  (Σ = 0.5·I, s = 0.5)
        g.log_scale = [0.5f64.sqrt().ln(); 2];
        let v = gaussian_eval(&g, [4.0, -2.0], 0.5 - INVERSE_RIDGE);
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-12);

        // Σ = diag(1, 4), offset along the long axis
        g.log_scale = [0.0, LN_2];
        g.rot = 0.0;
        let v = gaussian_eval(&g, [3.0, 0.0], 0.0);
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-9);
        assert_relative_eq!(v, 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn near_singular_covariance_stays_finite() {
        let g = Gaussian2D::new([0.0, 0.0], [-40.0, -40.0], 0.2, [0.0; 3], 0.0, 0.1);
        for x in [[0.0, 0.0], [1e-12, 0.0], [1.0, 1.0], [1e3, -1e3]] {
            let v = gaussian_eval(&g, x, 0.0);
            assert!(v.is_finite() && (0.0..=1.0).contains(&v), "{v}");
        }
    }

    /// Numerically convolving sampled Gaussians of variance 2 and 3 gives a
    /// Gaussian of variance 5.
    #[test]
    fn convolution_adds_variances() {
        let sigma2_fit = convolved_variance(2.0, 3.0);
        assert!(((sigma2_fit - 5.0) / 5.0).abs() < 0.01, "{sigma2_fit}");
    }

    pub(crate) fn convolved_variance(v1: f64, v2: f64) -> f64 {
        let dx = 0.05;
        let half = 400;
        let sample = |v: f64| -> Vec<f64> {
            (-half..=half)
                .map(|i| {
                    let x = i as f64 * dx;
                    (-x * x / (2.0 * v)).exp()
                })
                .collect()
        };
        let a = sample(v1);
        let b = sample(v2);
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                out[i + j] += ai * bj * dx;
            }
        }
        let offset = (2 * half) as f64;
        let (mut m0, mut m2) = (0.0, 0.0);
        for (k, &v) in out.iter().enumerate() {
            let x = (k as f64 - offset) * dx;
            m0 += v;
            m2 += v * x * x;
        }
        m2 / m0
    }

    proptest! {
        #[test]
        fn covariance_is_spd(ls0 in -6.0f64..6.0, ls1 in -6.0f64..6.0, rot in -10.0f64..10.0) {
            let m = covariance_from_params([ls0, ls1], rot);
            prop_assert!(m.det() > 0.0);
            prop_assert!(m.trace() > 0.0);
        }

        #[test]
        fn eigen_trace_det(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0) {
            let m = SymMat2::new(a, b, c);
            let (hi, lo) = eigenvalues_sym2(&m);
            prop_assert!(hi >= lo);
            let scale = m.trace().abs().max(1.0);
            prop_assert!((hi + lo - m.trace()).abs() <= 1e-9 * scale);
            let dscale = (hi.abs() * lo.abs()).max(m.det().abs()).max(1.0);
            prop_assert!((hi * lo - m.det()).abs() <= 1e-9 * dscale);
        }

        #[test]
        fn eval_rotation_equivariant(
            ls0 in -1.0f64..2.0, ls1 in -1.0f64..2.0, rot in -3.0f64..3.0,
            phi in -3.0f64..3.0, dx in -5.0f64..5.0, dy in -5.0f64..5.0, s in 0.0f64..2.0,
        ) {
            let g = Gaussian2D::new([0.0, 0.0], [ls0, ls1], rot, [0.0; 3], 0.0, 0.5);
            let base = gaussian_eval(&g, [dx, dy], s);
            let mut rotated = g.clone();
            rotated.rot += phi;
            let (sp, cp) = phi.sin_cos();
            let x = [cp * dx - sp * dy, sp * dx + cp * dy];
            let v = gaussian_eval(&rotated, x, s);
            prop_assert!((v - base).abs() <= 1e-9);
        }
    }
}
