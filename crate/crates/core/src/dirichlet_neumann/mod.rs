//! Dirichlet-Neumann operator of a star-shaped drop.
//!
//! The harmonic extension of boundary data is approximated by a sum of solid
//! harmonics up to degree `l_ext`, fitted in the quadrature-weighted least
//! squares sense at the boundary points of a collocation grid. The normal
//! derivative of the fitted harmonic function is then evaluated wherever it is
//! needed.

mod solid;

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

pub use solid::{laplacian, Monomials, SolidHarmonicBasis};

use crate::error::{Error, Result};
use crate::sphere::{degree_order, dot3, n_coeffs, QuadGrid, SphCoeffs, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnSettings {
    /// Degree of the solid harmonic basis.
    pub l_ext: usize,
    /// Largest accepted boundary misfit, relative to `max(1, max |psi|)`.
    pub misfit_tol: f64,
    /// Largest accepted condition estimate of the weighted collocation matrix.
    pub condition_max: f64,
}

impl DnSettings {
    pub fn for_degree(l_max: usize) -> Self {
        Self { l_ext: 2 * l_max + 4, misfit_tol: 1e-7, condition_max: 1e10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnReport {
    pub misfit: f64,
    pub condition: f64,
    pub l_ext: usize,
}

/// Precomputed basis tables on the collocation grid.
#[derive(Debug)]
pub struct DirichletNeumann {
    settings: DnSettings,
    collocation: Arc<QuadGrid>,
    /// `phi_k(x_q)` at the collocation nodes, one row per node.
    table: DMatrix<f64>,
    orders: Vec<(usize, i64)>,
    /// `cos(p phi_j)` and `sin(p phi_j)` for `p <= 2 l_ext`, row per longitude.
    lon_cos: Vec<f64>,
    lon_sin: Vec<f64>,
}

impl DirichletNeumann {
    pub fn new(settings: DnSettings) -> Result<Self> {
        let l = settings.l_ext;
        let collocation = QuadGrid::for_degree(l)?;
        let k = n_coeffs(l);
        let mut table = DMatrix::zeros(collocation.len(), k);
        for col in 0..k {
            let (dl, dm) = degree_order(col);
            let vals = collocation.synthesize(&SphCoeffs::basis(l, dl, dm));
            table.set_column(col, &DVector::from_vec(vals));
        }
        let orders = (0..k).map(degree_order).collect();
        let np = 2 * l + 1;
        let mut lon_cos = Vec::with_capacity(collocation.n_lon() * np);
        let mut lon_sin = Vec::with_capacity(collocation.n_lon() * np);
        for j in 0..collocation.n_lon() {
            let phi = collocation.longitude(j);
            for p in 0..np {
                let (s, c) = (p as f64 * phi).sin_cos();
                lon_cos.push(c);
                lon_sin.push(s);
            }
        }
        Ok(Self { settings, collocation, table, orders, lon_cos, lon_sin })
    }

    pub fn settings(&self) -> &DnSettings {
        &self.settings
    }

    pub fn collocation_grid(&self) -> &Arc<QuadGrid> {
        &self.collocation
    }

    fn radii(&self, eta: &SphCoeffs) -> Result<Vec<f64>> {
        if eta.l_max() > self.settings.l_ext {
            return Err(Error::InvalidArgument(format!(
                "surface degree {} exceeds extension degree {}",
                eta.l_max(),
                self.settings.l_ext
            )));
        }
        let radii: Vec<f64> = self.collocation.synthesize(eta).iter().map(|h| 1.0 + h).collect();
        for r in &radii {
            if !r.is_finite() {
                return Err(Error::NonFinite("surface radius".into()));
            }
            if *r <= 0.0 {
                return Err(Error::Domain(format!("1 + h = {r} is not positive")));
            }
        }
        Ok(radii)
    }

    /// Weighted normal matrix `sum_q w_q r_q^(l+l') phi_k(x_q) phi_k'(x_q)`.
    ///
    /// On each latitude ring the longitude sum of `r^s` against products of
    /// `cos`/`sin` factors reduces to Fourier sums of `r^s`, so the matrix is
    /// assembled from one small table per ring.
    fn normal_matrix(&self, radii: &[f64]) -> DMatrix<f64> {
        let g = &self.collocation;
        let l = self.settings.l_ext;
        let k = self.orders.len();
        let np = 2 * l + 1;
        let mut normal = DMatrix::zeros(k, k);
        let mut fc = vec![0.0; np * np];
        let mut fs = vec![0.0; np * np];
        let mut fac = vec![0.0; k];
        for i in 0..g.n_lat() {
            fc.iter_mut().for_each(|v| *v = 0.0);
            fs.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..g.n_lon() {
                let r = radii[i * g.n_lon() + j];
                let cs = &self.lon_cos[j * np..(j + 1) * np];
                let sn = &self.lon_sin[j * np..(j + 1) * np];
                let mut rp = 1.0;
                for s in 0..np {
                    let row = s * np;
                    for p in 0..np {
                        fc[row + p] += rp * cs[p];
                        fs[row + p] += rp * sn[p];
                    }
                    rp *= r;
                }
            }
            let w = g.weights()[i * g.n_lon()];
            for (c, &(dl, dm)) in self.orders.iter().enumerate() {
                fac[c] = g.ring_factor(i, dl, dm.unsigned_abs() as usize);
            }
            for c2 in 0..k {
                let (l2, m2) = self.orders[c2];
                let b = m2.unsigned_abs() as usize;
                let f2 = 0.5 * w * fac[c2];
                if f2 == 0.0 {
                    continue;
                }
                let mut col = normal.column_mut(c2);
                let col = col.as_mut_slice();
                for c1 in 0..=c2 {
                    let (l1, m1) = self.orders[c1];
                    let a = m1.unsigned_abs() as usize;
                    let row = (l1 + l2) * np;
                    let diff = a.abs_diff(b);
                    let t = match (m1 >= 0, m2 >= 0) {
                        (true, true) => fc[row + diff] + fc[row + a + b],
                        (false, false) => fc[row + diff] - fc[row + a + b],
                        (true, false) => {
                            let sd = if a >= b { fs[row + diff] } else { -fs[row + diff] };
                            fs[row + a + b] - sd
                        }
                        (false, true) => {
                            let sd = if a >= b { fs[row + diff] } else { -fs[row + diff] };
                            fs[row + a + b] + sd
                        }
                    };
                    col[c1] += fac[c1] * f2 * t;
                }
            }
        }
        normal.fill_lower_triangle_with_upper_triangle();
        normal
    }

    /// Factorizes the fitting problem for the surface `1 + eta`.
    pub fn prepare(&self, eta: &SphCoeffs) -> Result<HarmonicExtension<'_>> {
        let radii = self.radii(eta)?;
        let mut normal = self.normal_matrix(&radii);
        // column equilibration of the weighted collocation matrix
        let k = normal.nrows();
        let scale: Vec<f64> = (0..k)
            .map(|c| {
                let d = normal[(c, c)];
                if d > 0.0 {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        for c in 0..k {
            for r in 0..k {
                normal[(r, c)] *= scale[r] * scale[c];
            }
        }
        if normal.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("collocation normal matrix".into()));
        }
        let chol = Cholesky::new(normal.clone())
            .ok_or_else(|| Error::ExtensionRejected("normal matrix is not positive definite".into()))?;
        let condition = condition_estimate(&normal, &chol).sqrt();
        if !(condition <= self.settings.condition_max) {
            return Err(Error::ExtensionRejected(format!(
                "condition estimate {condition:.3e} exceeds {:.1e}",
                self.settings.condition_max
            )));
        }
        Ok(HarmonicExtension { solver: self, radii, scale, chol, condition })
    }
}

/// Power iterations on the normal matrix and its inverse.
fn condition_estimate(normal: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = normal.nrows();
    let start = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    let mut v = start.normalize();
    let mut lmax = 0.0;
    for _ in 0..30 {
        let w = normal * &v;
        lmax = w.norm();
        v = w / lmax;
    }
    let mut v = start.normalize();
    let mut inv_max = 0.0;
    for _ in 0..30 {
        let w = chol.solve(&v);
        inv_max = w.norm();
        v = w / inv_max;
    }
    lmax * inv_max
}

/// Harmonic extension operator for one surface.
pub struct HarmonicExtension<'a> {
    solver: &'a DirichletNeumann,
    radii: Vec<f64>,
    scale: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    condition: f64,
}

impl HarmonicExtension<'_> {
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Solid harmonic coefficients of the extension of `psi`.
    pub fn fit(&self, psi: &SphCoeffs) -> Result<(SphCoeffs, DnReport)> {
        let s = self.solver;
        let l_ext = s.settings.l_ext;
        if psi.l_max() > l_ext {
            return Err(Error::InvalidArgument("boundary data degree exceeds extension degree".into()));
        }
        let data = s.collocation.synthesize(psi);
        let weights = s.collocation.weights();
        let nq = data.len();
        // right-hand side, one degree block at a time
        let mut v: Vec<f64> = data.iter().zip(weights).map(|(d, w)| d * w).collect();
        let mut rhs = DVector::zeros(s.orders.len());
        for l in 0..=l_ext {
            let block = s.table.columns(l * l, 2 * l + 1);
            let part = block.tr_mul(&DVector::from_column_slice(&v));
            for (o, p) in part.iter().enumerate() {
                rhs[l * l + o] = p * self.scale[l * l + o];
            }
            for (x, r) in v.iter_mut().zip(&self.radii) {
                *x *= r;
            }
        }
        let y = self.chol.solve(&rhs);
        let coeffs: Vec<f64> = y.iter().zip(&self.scale).map(|(a, b)| a * b).collect();
        let mut fitted = vec![0.0; nq];
        let mut rp = vec![1.0; nq];
        for l in 0..=l_ext {
            let block = s.table.columns(l * l, 2 * l + 1);
            let part = block * DVector::from_column_slice(&coeffs[l * l..(l + 1) * (l + 1)]);
            for q in 0..nq {
                fitted[q] += rp[q] * part[q];
                rp[q] *= self.radii[q];
            }
        }
        let mut misfit = 0.0f64;
        let mut peak = 1.0f64;
        for q in 0..nq {
            misfit = misfit.max((fitted[q] - data[q]).abs());
            peak = peak.max(data[q].abs());
        }
        let report = DnReport { misfit, condition: self.condition, l_ext };
        if !misfit.is_finite() {
            return Err(Error::NonFinite("harmonic extension".into()));
        }
        if misfit > s.settings.misfit_tol * peak {
            return Err(Error::ExtensionRejected(format!(
                "boundary misfit {misfit:.3e} exceeds {:.1e}",
                s.settings.misfit_tol * peak
            )));
        }
        Ok((SphCoeffs::from_vec(l_ext, coeffs)?, report))
    }

    /// `G(h) psi` at the nodes of `grid`, given the surface height, its
    /// tangential gradient and metric factor at those nodes.
    pub fn normal_derivative(
        &self,
        psi: &SphCoeffs,
        grid: &QuadGrid,
        height: &[f64],
        gradient: &[Vec3],
        metric: &[f64],
    ) -> Result<(Vec<f64>, DnReport)> {
        if grid.l_max() < self.solver.settings.l_ext {
            return Err(Error::GridTooCoarse {
                degree: self.solver.settings.l_ext,
                detail: "evaluation grid cannot represent the extension".into(),
            });
        }
        let (c, report) = self.fit(psi)?;
        let radii: Vec<f64> = height.iter().map(|h| 1.0 + h).collect();
        let (_, grad_phi) = grid.solid_extension(&c, &radii);
        let out = grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let r = radii[k];
                let g = gradient[k];
                let nu = [r * x[0] - g[0], r * x[1] - g[1], r * x[2] - g[2]];
                dot3(&grad_phi[k], &nu) / metric[k]
            })
            .collect();
        Ok((out, report))
    }
}

/// `G(eta) psi` at the nodes of `grid` in one call.
pub fn dirichlet_neumann(
    solver: &DirichletNeumann,
    grid: &QuadGrid,
    eta: &SphCoeffs,
    psi: &SphCoeffs,
) -> Result<(Vec<f64>, DnReport)> {
    let ext = solver.prepare(eta)?;
    let height = grid.synthesize(eta);
    let gradient = grid.tangential_gradient(eta);
    let metric: Vec<f64> =
        height.iter().zip(&gradient).map(|(h, g)| ((1.0 + h).powi(2) + dot3(g, g)).sqrt()).collect();
    ext.normal_derivative(psi, grid, &height, &gradient, &metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{pairs, PointHarmonics};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_small(l_max: usize, scale: f64, seed: u64) -> SphCoeffs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = SphCoeffs::zeros(l_max);
        for l in 0..=l_max {
            let decay = scale / (1.0 + (l * l) as f64);
            for m in -(l as i64)..=l as i64 {
                c.set(l, m, decay * rng.gen_range(-1.0..1.0));
            }
        }
        c
    }

    #[test]
    fn ring_assembly_matches_dense_product() {
        let solver = DirichletNeumann::new(DnSettings { l_ext: 7, ..DnSettings::for_degree(3) }).unwrap();
        let eta = random_small(4, 0.3, 21);
        let radii = solver.radii(&eta).unwrap();
        let g = solver.collocation_grid();
        let mut dense = solver.table.clone();
        for q in 0..g.len() {
            for c in 0..dense.ncols() {
                dense[(q, c)] *= g.weights()[q].sqrt() * radii[q].powi(solver.orders[c].0 as i32);
            }
        }
        let expected = dense.tr_mul(&dense);
        let got = solver.normal_matrix(&radii);
        assert!((got - &expected).amax() < 1e-13 * expected.amax());
    }

    #[test]
    fn unit_ball_eigenvalues() {
        let l_max = 10;
        let solver = DirichletNeumann::new(DnSettings::for_degree(l_max)).unwrap();
        let grid = QuadGrid::for_degree(2 * l_max + 4).unwrap();
        let eta = SphCoeffs::zeros(l_max);
        for (l, m) in pairs(8) {
            let psi = SphCoeffs::basis(l_max, l, m);
            let (g, _) = dirichlet_neumann(&solver, &grid, &eta, &psi).unwrap();
            let back = grid.analyze(&g, l_max);
            let expected = psi.scaled(l as f64);
            assert!((&back - &expected).max_abs() < 1e-12, "({l}, {m})");
        }
    }

    #[test]
    fn concentric_ball_scales_eigenvalues() {
        let solver = DirichletNeumann::new(DnSettings::for_degree(6)).unwrap();
        let grid = QuadGrid::for_degree(16).unwrap();
        let c = 0.2;
        let mut eta = SphCoeffs::zeros(6);
        eta.set(0, 0, c * (4.0 * PI).sqrt());
        for (l, m) in [(1, 0), (3, -2), (6, 5)] {
            let psi = SphCoeffs::basis(6, l, m);
            let (g, _) = dirichlet_neumann(&solver, &grid, &eta, &psi).unwrap();
            let back = grid.analyze(&g, 6);
            assert!((&back - &psi.scaled(l as f64 / (1.0 + c))).max_abs() < 1e-12);
        }
    }

    /// Boundary trace of a harmonic polynomial on a deformed surface is band
    /// limited, and its normal derivative is known in closed form.
    #[test]
    fn harmonic_polynomial_on_deformed_surface() {
        let basis = SolidHarmonicBasis::new(4).unwrap();
        let eta = random_small(2, 0.15, 1);
        let l_psi = 2 + 3 * 3;
        let solver = DirichletNeumann::new(DnSettings { l_ext: l_psi, ..DnSettings::for_degree(l_psi) }).unwrap();
        let grid = QuadGrid::for_degree(2 * l_psi).unwrap();
        // Phi = sum of a few solid harmonics up to degree 3
        let terms = [(1usize, 1i64, 0.7), (2, -1, -0.4), (3, 2, 0.3), (3, 0, 0.2)];
        let phi = |y: Vec3| terms.iter().map(|&(l, m, a)| a * basis.value(l, m, y)).sum::<f64>();
        let grad_phi = |y: Vec3| {
            let mut g = [0.0; 3];
            for &(l, m, a) in &terms {
                let t = basis.gradient(l, m, y);
                for d in 0..3 {
                    g[d] += a * t[d];
                }
            }
            g
        };
        let h = grid.synthesize(&eta);
        let trace: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&h)
            .map(|(x, h)| phi([(1.0 + h) * x[0], (1.0 + h) * x[1], (1.0 + h) * x[2]]))
            .collect();
        let psi = grid.analyze(&trace, l_psi);
        let (g, report) = dirichlet_neumann(&solver, &grid, &eta.resized(l_psi), &psi).unwrap();
        assert!(report.misfit < 1e-12);
        for (k, x) in grid.nodes().iter().enumerate().step_by(11) {
            let ph = PointHarmonics::new(2, *x);
            let r = 1.0 + ph.eval(&eta);
            let gh = ph.eval_gradient(&eta);
            let j = (r * r + dot3(&gh, &gh)).sqrt();
            let nu = [(r * x[0] - gh[0]) / j, (r * x[1] - gh[1]) / j, (r * x[2] - gh[2]) / j];
            let exact = dot3(&grad_phi([r * x[0], r * x[1], r * x[2]]), &nu);
            assert!((g[k] - exact).abs() < 1e-10, "node {k}: {} vs {exact}", g[k]);
        }
    }

    #[test]
    fn energy_form_is_symmetric_and_nonnegative() {
        let l = 6;
        let solver = DirichletNeumann::new(DnSettings { l_ext: 20, ..DnSettings::for_degree(l) }).unwrap();
        let grid = QuadGrid::for_degree(20).unwrap();
        let eta = random_small(l, 0.05, 3);
        let a = random_small(l, 1.0, 4);
        let b = random_small(l, 1.0, 5);
        let h = grid.synthesize(&eta);
        let j = crate::geometry::metric_factor(&grid, &eta).unwrap();
        let (ga, _) = dirichlet_neumann(&solver, &grid, &eta, &a).unwrap();
        let (gb, _) = dirichlet_neumann(&solver, &grid, &eta, &b).unwrap();
        let va = grid.synthesize(&a);
        let vb = grid.synthesize(&b);
        let form = |u: &[f64], g: &[f64]| -> f64 {
            (0..u.len()).map(|k| grid.weights()[k] * u[k] * g[k] * (1.0 + h[k]) * j[k]).sum()
        };
        let ab = form(&va, &gb);
        let ba = form(&vb, &ga);
        assert!((ab - ba).abs() < 1e-8 * (1.0 + ab.abs()), "{ab} vs {ba}");
        assert!(form(&va, &ga) > 0.0);
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let l = 6;
        let solver = DirichletNeumann::new(DnSettings::for_degree(l)).unwrap();
        let grid = QuadGrid::for_degree(2 * l + 4).unwrap();
        let eta = random_small(l, 0.05, 8);
        let one = SphCoeffs::basis(l, 0, 0);
        let (g, _) = dirichlet_neumann(&solver, &grid, &eta, &one).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn collapsed_surface_is_rejected() {
        let solver = DirichletNeumann::new(DnSettings::for_degree(4)).unwrap();
        let mut eta = SphCoeffs::zeros(4);
        eta.set(0, 0, -2.0 * (4.0 * PI).sqrt());
        assert!(matches!(solver.prepare(&eta), Err(Error::Domain(_))));
    }

    #[test]
    fn rough_surface_fails_the_misfit_gate() {
        let solver = DirichletNeumann::new(DnSettings { l_ext: 10, ..DnSettings::for_degree(6) }).unwrap();
        let grid = QuadGrid::for_degree(12).unwrap();
        let mut eta = SphCoeffs::zeros(6);
        eta.set(6, 3, 0.6);
        let psi = SphCoeffs::basis(6, 5, 1);
        let res = dirichlet_neumann(&solver, &grid, &eta, &psi);
        assert!(matches!(res, Err(Error::ExtensionRejected(_))), "{res:?}");
    }
}
