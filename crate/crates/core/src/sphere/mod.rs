//! Real spherical harmonics on the unit sphere, quadrature grids, transforms
//! and the differential operators used by the drop model.

mod coeffs;
mod grid;
pub mod legendre;

use std::sync::Arc;

pub use coeffs::{degree_order, index, n_coeffs, pairs, SphCoeffs, L_MAX_CAP};
pub use grid::{
    convention_self_test, covariant_hessian_at, dot3, eval_harmonic, project_tangent,
    PointHarmonics, QuadGrid, Vec3,
};

/// Nodal values on a quadrature grid.
#[derive(Clone, Debug)]
pub struct GridField {
    pub grid: Arc<QuadGrid>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn synthesize(grid: &Arc<QuadGrid>, c: &SphCoeffs) -> Self {
        Self { grid: grid.clone(), values: grid.synthesize(c) }
    }

    pub fn analyze(&self, l_out: usize) -> SphCoeffs {
        self.grid.analyze(&self.values, l_out)
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }
}

/// Tangent vector values on a quadrature grid.
#[derive(Clone, Debug)]
pub struct GridVectorField {
    pub grid: Arc<QuadGrid>,
    pub values: Vec<Vec3>,
}

impl GridVectorField {
    pub fn tangential_gradient(grid: &Arc<QuadGrid>, c: &SphCoeffs) -> Self {
        Self { grid: grid.clone(), values: grid.tangential_gradient(c) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_coeffs(l_max: usize, seed: u64) -> SphCoeffs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n_coeffs(l_max)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SphCoeffs::from_vec(l_max, data).unwrap()
    }

    fn unit(x: Vec3) -> Vec3 {
        let r = dot3(&x, &x).sqrt();
        [x[0] / r, x[1] / r, x[2] / r]
    }

    #[test]
    fn low_degree_harmonics_match_closed_forms() {
        let x = unit([0.3, -0.4, 0.6]);
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        let c2 = (15.0 / (4.0 * PI)).sqrt();
        let expected = [
            (0, 0, 1.0 / (4.0 * PI).sqrt()),
            (1, -1, c1 * x[1]),
            (1, 0, c1 * x[2]),
            (1, 1, c1 * x[0]),
            (2, -2, c2 * x[0] * x[1]),
            (2, -1, c2 * x[1] * x[2]),
            (2, 0, (5.0 / (16.0 * PI)).sqrt() * (3.0 * x[2] * x[2] - 1.0)),
            (2, 1, c2 * x[0] * x[2]),
            (2, 2, 0.5 * c2 * (x[0] * x[0] - x[1] * x[1])),
        ];
        for (l, m, v) in expected {
            assert!((eval_harmonic(l, m, x) - v).abs() < 1e-14, "({l}, {m})");
        }
    }

    #[test]
    fn weights_sum_to_sphere_area() {
        for l in [4, 8, 12, 32] {
            let g = QuadGrid::for_degree(l).unwrap();
            let total: f64 = g.weights().iter().sum();
            assert!((total - 4.0 * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        let g = QuadGrid::for_degree(10).unwrap();
        let tables: Vec<Vec<f64>> = pairs(10)
            .map(|(l, m)| g.synthesize(&SphCoeffs::basis(10, l, m)))
            .collect();
        for (a, ta) in tables.iter().enumerate() {
            for (b, tb) in tables.iter().enumerate() {
                let gram = g.inner(ta, tb);
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((gram - expected).abs() < 1e-12, "entry {a},{b}: {gram}");
            }
        }
    }

    #[test]
    fn grid_values_match_point_evaluation() {
        let c = random_coeffs(9, 3);
        let g = QuadGrid::for_degree(9).unwrap();
        let vals = g.synthesize(&c);
        let grads = g.tangential_gradient(&c);
        for k in (0..g.len()).step_by(7) {
            let ph = PointHarmonics::new(9, g.nodes()[k]);
            assert!((ph.eval(&c) - vals[k]).abs() < 1e-12);
            let pg = ph.eval_gradient(&c);
            for d in 0..3 {
                assert!((pg[d] - grads[k][d]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn sign_convention_holds() {
        convention_self_test().unwrap();
    }

    #[test]
    fn tangential_gradient_of_height_function() {
        let g = QuadGrid::for_degree(4).unwrap();
        let c = SphCoeffs::basis(4, 1, 0).scaled((4.0 * PI / 3.0).sqrt());
        let grad = g.tangential_gradient(&c);
        for (x, v) in g.nodes().iter().zip(&grad) {
            let exact = [-x[0] * x[2], -x[1] * x[2], 1.0 - x[2] * x[2]];
            for d in 0..3 {
                assert!((v[d] - exact[d]).abs() < 1e-13);
            }
        }
    }

    /// Degree-zero homogeneous extension evaluated off the sphere.
    fn homogeneous(c: &SphCoeffs, x: Vec3) -> f64 {
        PointHarmonics::new(c.l_max(), x).eval(c)
    }

    #[test]
    fn tangential_gradient_matches_finite_differences() {
        let c = random_coeffs(7, 11);
        let g = QuadGrid::for_degree(7).unwrap();
        let grad = g.tangential_gradient(&c);
        let h = 1e-6;
        for k in (0..g.len()).step_by(5) {
            let x = g.nodes()[k];
            for d in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let fd = (homogeneous(&c, xp) - homogeneous(&c, xm)) / (2.0 * h);
                assert!((fd - grad[k][d]).abs() < 1e-7, "node {k} comp {d}");
            }
        }
    }

    #[test]
    fn laplace_beltrami_matches_ambient_finite_differences() {
        let c = random_coeffs(6, 5);
        let lap = c.laplace_beltrami();
        let h = 1e-3;
        for x in [unit([0.2, 0.5, -0.7]), unit([-0.9, 0.1, 0.3])] {
            let mut fd = -6.0 * homogeneous(&c, x);
            for d in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                fd += homogeneous(&c, xp) + homogeneous(&c, xm);
            }
            fd /= h * h;
            let exact = PointHarmonics::new(6, x).eval(&lap);
            assert!((fd - exact).abs() < 1e-4 * (1.0 + exact.abs()), "{fd} vs {exact}");
        }
    }

    #[test]
    fn rotation_generator_matches_pointwise_derivative() {
        let c = random_coeffs(8, 2);
        let g = QuadGrid::for_degree(8).unwrap();
        let grad = g.tangential_gradient(&c);
        let spectral = g.synthesize(&c.rotation_generator());
        for ((x, v), s) in g.nodes().iter().zip(&grad).zip(&spectral) {
            let pointwise = x[0] * v[1] - x[1] * v[0];
            assert!((pointwise - s).abs() < 1e-11);
        }
    }

    #[test]
    fn hessian_form_matches_independent_routes() {
        let c = random_coeffs(6, 9).scaled(0.1);
        let g = QuadGrid::for_degree(12).unwrap();
        let form = g.hessian_quadratic_form(&c).unwrap();
        let grad = g.tangential_gradient(&c);
        let h = 1e-4;
        for k in (0..g.len()).step_by(13) {
            let x = g.nodes()[k];
            let v = grad[k];
            let closed = covariant_hessian_at(&c, x, v);
            assert!((closed - form[k]).abs() < 1e-12, "node {k}: {closed} vs {}", form[k]);
            // second difference of the homogeneous extension along v
            let at = |t: f64| homogeneous(&c, [x[0] + t * v[0], x[1] + t * v[1], x[2] + t * v[2]]);
            let fd = (at(h) - 2.0 * at(0.0) + at(-h)) / (h * h);
            assert!((fd - form[k]).abs() < 1e-6, "node {k}: fd {fd} vs {}", form[k]);
        }
    }

    #[test]
    fn coarse_grid_refuses_hessian() {
        let g = QuadGrid::for_degree(6).unwrap();
        assert!(g.hessian_quadratic_form(&SphCoeffs::zeros(6)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn analyze_inverts_synthesize(seed in any::<u64>(), l in 0usize..=14) {
            let c = random_coeffs(l, seed);
            let g = QuadGrid::for_degree(l).unwrap();
            let back = g.analyze(&g.synthesize(&c), l);
            prop_assert!((&back - &c).max_abs() < 1e-12);
        }

        #[test]
        fn parseval_identity(seed in any::<u64>(), l in 0usize..=12) {
            let c = random_coeffs(l, seed);
            let g = QuadGrid::for_degree(l).unwrap();
            let v = g.synthesize(&c);
            let lhs = g.inner(&v, &v);
            prop_assert!((lhs - c.dot(&c)).abs() < 1e-11 * (1.0 + lhs));
        }

        #[test]
        fn rotation_is_an_isometry(seed in any::<u64>(), theta in -7.0f64..7.0) {
            let c = random_coeffs(8, seed);
            prop_assert!((c.rotated(theta).norm() - c.norm()).abs() < 1e-12);
            let back = c.rotated(theta).rotated(-theta);
            prop_assert!((&back - &c).max_abs() < 1e-12);
        }

        #[test]
        fn rotation_matches_pointwise_composition(seed in any::<u64>(), theta in -3.2f64..3.2) {
            let c = random_coeffs(6, seed);
            let x = unit([0.4, -0.3, 0.5]);
            let (s, co) = theta.sin_cos();
            let rx = [co * x[0] - s * x[1], s * x[0] + co * x[1], x[2]];
            let lhs = PointHarmonics::new(6, x).eval(&c.rotated(theta));
            let rhs = PointHarmonics::new(6, rx).eval(&c);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
