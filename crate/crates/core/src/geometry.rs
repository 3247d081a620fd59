//! Geometry of a star-shaped drop `{(1 + h(x)) x}`: metric factor, normal,
//! mean curvature, conserved quantities, rotations, reflections and the
//! translation group acting on height functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{dot3, pairs, PointHarmonics, QuadGrid, SphCoeffs, Vec3};

/// Surface height `eta` and surface velocity potential `beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateFields", into = "StateFields")]
pub struct State {
    pub eta: SphCoeffs,
    pub beta: SphCoeffs,
}

#[derive(Serialize, Deserialize)]
struct StateFields {
    eta: SphCoeffs,
    beta: SphCoeffs,
}

impl TryFrom<StateFields> for State {
    type Error = String;
    fn try_from(raw: StateFields) -> std::result::Result<Self, String> {
        if raw.eta.l_max() != raw.beta.l_max() {
            return Err(format!(
                "eta has degree {} but beta has degree {}",
                raw.eta.l_max(),
                raw.beta.l_max()
            ));
        }
        Ok(State { eta: raw.eta, beta: raw.beta })
    }
}

impl From<State> for StateFields {
    fn from(s: State) -> Self {
        StateFields { eta: s.eta, beta: s.beta }
    }
}

/// Reflection across a coordinate plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reflection {
    /// `x2 -> -x2`, with the potential changing sign.
    X2,
    /// `x3 -> -x3`.
    X3,
}

impl State {
    pub fn zeros(l_max: usize) -> Self {
        Self { eta: SphCoeffs::zeros(l_max), beta: SphCoeffs::zeros(l_max) }
    }

    /// Seeded random state with coefficients uniform in
    /// `scale * [-1, 1] / (1 + l^2)`.
    pub fn random(l_max: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut field = || {
            let mut c = SphCoeffs::zeros(l_max);
            for (l, m) in pairs(l_max) {
                c.set(l, m, scale * rng.gen_range(-1.0..1.0) / (1.0 + (l * l) as f64));
            }
            c
        };
        let eta = field();
        Self { eta, beta: field() }
    }

    pub fn new(eta: SphCoeffs, beta: SphCoeffs) -> Result<Self> {
        if eta.l_max() != beta.l_max() {
            return Err(Error::InvalidArgument("eta and beta degrees differ".into()));
        }
        Ok(Self { eta, beta })
    }

    pub fn l_max(&self) -> usize {
        self.eta.l_max()
    }

    /// Number of real unknowns, `2 (l_max + 1)^2`.
    pub fn dim(&self) -> usize {
        2 * self.eta.len()
    }

    /// `eta` coefficients followed by `beta` coefficients.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.eta.as_slice().to_vec();
        v.extend_from_slice(self.beta.as_slice());
        v
    }

    pub fn from_slice(l_max: usize, v: &[f64]) -> Result<Self> {
        let n = crate::sphere::n_coeffs(l_max);
        if v.len() != 2 * n {
            return Err(Error::InvalidArgument(format!("expected {} entries, got {}", 2 * n, v.len())));
        }
        Ok(Self {
            eta: SphCoeffs::from_vec(l_max, v[..n].to_vec())?,
            beta: SphCoeffs::from_vec(l_max, v[n..].to_vec())?,
        })
    }

    pub fn resized(&self, l_max: usize) -> Self {
        Self { eta: self.eta.resized(l_max), beta: self.beta.resized(l_max) }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.eta.dot(&other.eta) + self.beta.dot(&other.beta)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.eta.max_abs().max(self.beta.max_abs())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { eta: self.eta.scaled(factor), beta: self.beta.scaled(factor) }
    }

    pub fn axpy(&mut self, factor: f64, other: &Self) {
        self.eta.axpy(factor, &other.eta);
        self.beta.axpy(factor, &other.beta);
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// Torus action: both components composed with the rotation by `theta`.
    pub fn rotated(&self, theta: f64) -> Self {
        Self { eta: self.eta.rotated(theta), beta: self.beta.rotated(theta) }
    }

    /// Generator of the torus action, applied componentwise.
    pub fn rotation_generator(&self) -> Self {
        Self { eta: self.eta.rotation_generator(), beta: self.beta.rotation_generator() }
    }

    pub fn reflected(&self, axis: Reflection) -> Self {
        let mut out = self.clone();
        for (l, m) in pairs(self.l_max()) {
            let (fe, fb) = match axis {
                Reflection::X3 => {
                    let s = if (l as i64 - m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    (s, s)
                }
                Reflection::X2 => {
                    let s = if m >= 0 { 1.0 } else { -1.0 };
                    (s, -s)
                }
            };
            out.eta.set(l, m, fe * self.eta.get(l, m));
            out.beta.set(l, m, fb * self.beta.get(l, m));
        }
        out
    }

    /// `||eta||_{H^{s+3/2}} + ||beta||_{H^{s+1}}`.
    pub fn ws_norm(&self, s: f64) -> f64 {
        self.eta.sobolev_norm(s + 1.5) + self.beta.sobolev_norm(s + 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.eta.is_finite() && self.beta.is_finite()
    }
}

/// Pointwise geometry of the surface at the nodes of a grid.
#[derive(Clone, Debug)]
pub struct SurfaceGeometry {
    pub height: Vec<f64>,
    pub gradient: Vec<Vec3>,
    pub laplacian: Vec<f64>,
    /// `<D^2 h grad h, grad h>` for the degree-zero extension.
    pub hessian_form: Vec<f64>,
    /// `sqrt((1+h)^2 + |grad h|^2)`.
    pub metric: Vec<f64>,
    pub mean_curvature: Vec<f64>,
}

impl SurfaceGeometry {
    pub fn new(grid: &QuadGrid, eta: &SphCoeffs) -> Result<Self> {
        let height = grid.synthesize(eta);
        check_radius(&height)?;
        let gradient = grid.tangential_gradient(eta);
        let laplacian = grid.synthesize(&eta.laplace_beltrami());
        let hessian_form = grid.hessian_quadratic_form(eta)?;
        let metric: Vec<f64> = height
            .iter()
            .zip(&gradient)
            .map(|(h, g)| ((1.0 + h).powi(2) + dot3(g, g)).sqrt())
            .collect();
        let mean_curvature = (0..height.len())
            .map(|k| {
                let r = 1.0 + height[k];
                let j = metric[k];
                let g2 = dot3(&gradient[k], &gradient[k]);
                -laplacian[k] / (r * j) + 2.0 / j + hessian_form[k] / (r * j.powi(3)) + g2 / j.powi(3)
            })
            .collect();
        Ok(Self { height, gradient, laplacian, hessian_form, metric, mean_curvature })
    }

    /// Outward unit normal at each node.
    pub fn normals(&self, grid: &QuadGrid) -> Vec<Vec3> {
        grid.nodes()
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let r = 1.0 + self.height[k];
                let g = self.gradient[k];
                let j = self.metric[k];
                [(r * x[0] - g[0]) / j, (r * x[1] - g[1]) / j, (r * x[2] - g[2]) / j]
            })
            .collect()
    }
}

fn check_radius(height: &[f64]) -> Result<()> {
    for h in height {
        if !h.is_finite() {
            return Err(Error::NonFinite("surface height".into()));
        }
        if 1.0 + h <= 0.0 {
            return Err(Error::Domain(format!("1 + h = {} is not positive", 1.0 + h)));
        }
    }
    Ok(())
}

/// Metric factor `J = sqrt((1+h)^2 + |grad h|^2)` at the grid nodes.
pub fn metric_factor(grid: &QuadGrid, eta: &SphCoeffs) -> Result<Vec<f64>> {
    let h = grid.synthesize(eta);
    check_radius(&h)?;
    let g = grid.tangential_gradient(eta);
    Ok(h.iter().zip(&g).map(|(h, g)| ((1.0 + h).powi(2) + dot3(g, g)).sqrt()).collect())
}

/// Mean curvature (sum of principal curvatures) at the grid nodes.
pub fn mean_curvature(grid: &QuadGrid, eta: &SphCoeffs) -> Result<Vec<f64>> {
    Ok(SurfaceGeometry::new(grid, eta)?.mean_curvature)
}

/// Boundary point `(1 + h(x)) x`.
pub fn boundary_point(eta: &SphCoeffs, x: Vec3) -> Vec3 {
    let ph = PointHarmonics::new(eta.l_max(), x);
    let x = ph.point();
    let r = 1.0 + ph.eval(eta);
    [r * x[0], r * x[1], r * x[2]]
}

/// Outward unit normal `((1+h) x - grad h) / J` at a point of the sphere.
pub fn outward_normal(eta: &SphCoeffs, x: Vec3) -> Vec3 {
    let ph = PointHarmonics::new(eta.l_max(), x);
    let x = ph.point();
    let r = 1.0 + ph.eval(eta);
    let g = ph.eval_gradient(eta);
    let j = (r * r + dot3(&g, &g)).sqrt();
    [(r * x[0] - g[0]) / j, (r * x[1] - g[1]) / j, (r * x[2] - g[2]) / j]
}

/// Enclosed volume `(1/3) int (1+eta)^3`.
pub fn volume(grid: &QuadGrid, eta: &SphCoeffs) -> f64 {
    let h = grid.synthesize(eta);
    h.iter().zip(grid.weights()).map(|(h, w)| w * (1.0 + h).powi(3)).sum::<f64>() / 3.0
}

/// Angular momentum about the vertical axis, `int (1+eta)^2 (M eta) beta`.
pub fn angular_momentum(grid: &QuadGrid, state: &State) -> f64 {
    let h = grid.synthesize(&state.eta);
    let mh = grid.synthesize(&state.eta.rotation_generator());
    let b = grid.synthesize(&state.beta);
    (0..h.len()).map(|k| grid.weights()[k] * (1.0 + h[k]).powi(2) * mh[k] * b[k]).sum()
}

/// Momentum of the barycenter, `(1/2) int (1+h)^2 grad psi`.
pub fn barycenter_momentum(grid: &QuadGrid, state: &State) -> Vec3 {
    let h = grid.synthesize(&state.eta);
    let gp = grid.tangential_gradient(&state.beta);
    let mut out = [0.0; 3];
    for k in 0..h.len() {
        let f = 0.5 * grid.weights()[k] * (1.0 + h[k]).powi(2);
        for d in 0..3 {
            out[d] += f * gp[k][d];
        }
    }
    out
}

/// Same quantity written as `int x (1+h)^2 psi - int (1+h) psi grad h`.
pub fn barycenter_momentum_by_parts(grid: &QuadGrid, state: &State) -> Vec3 {
    let h = grid.synthesize(&state.eta);
    let gh = grid.tangential_gradient(&state.eta);
    let p = grid.synthesize(&state.beta);
    let mut out = [0.0; 3];
    for (k, x) in grid.nodes().iter().enumerate() {
        let w = grid.weights()[k];
        let r = 1.0 + h[k];
        for d in 0..3 {
            out[d] += w * (x[d] * r * r * p[k] - r * p[k] * gh[k][d]);
        }
    }
    out
}

/// `max (|h| + |grad h|)` over the grid nodes.
pub fn w1_inf_norm(grid: &QuadGrid, eta: &SphCoeffs) -> f64 {
    let h = grid.synthesize(eta);
    let g = grid.tangential_gradient(eta);
    h.iter().zip(&g).fold(0.0, |acc, (h, g)| acc.max(h.abs() + dot3(g, g).sqrt()))
}

/// Result of reparametrizing a translated surface over the sphere.
#[derive(Clone, Debug)]
pub struct TranslatedSurface {
    /// `h_alpha` re-analyzed at the requested degree.
    pub height: SphCoeffs,
    /// `h_alpha` at the grid nodes.
    pub nodal_height: Vec<f64>,
    /// Preimages `g_alpha(xi)` on the sphere.
    pub preimages: Vec<Vec3>,
    /// Largest fixed-point residual `|x - phi(x)|` over the nodes.
    pub residual: f64,
    pub max_iterations: usize,
}

pub const TRANSLATION_TOL: f64 = 1e-13;
pub const TRANSLATION_MAX_ITER: usize = 60;

/// Height function of the surface translated by `alpha`: for every node `xi`
/// solves `x = (r(x) xi - alpha) / (1 + h(x))` by fixed-point iteration, where
/// `r(x)` is the positive root of `|r xi - alpha| = 1 + h(x)`.
pub fn translate_reparametrize(
    eta: &SphCoeffs,
    alpha: Vec3,
    grid: &QuadGrid,
    l_out: usize,
) -> Result<TranslatedSurface> {
    let a2 = dot3(&alpha, &alpha);
    if a2.sqrt() >= 0.25 {
        return Err(Error::InvalidArgument(format!("|alpha| = {} must be below 1/4", a2.sqrt())));
    }
    let w1 = w1_inf_norm(grid, eta);
    if w1 >= 1.0 / 6.0 {
        return Err(Error::InvalidArgument(format!("max(|h| + |grad h|) = {w1} must be below 1/6")));
    }
    let l = eta.l_max();
    let radius_at = |x: Vec3| -> (f64, Vec3) {
        let ph = PointHarmonics::new(l, x);
        (1.0 + ph.eval(eta), ph.point())
    };
    let n = grid.len();
    let mut nodal_height = Vec::with_capacity(n);
    let mut preimages = Vec::with_capacity(n);
    let mut worst = 0.0f64;
    let mut max_iterations = 0;
    for &xi in grid.nodes() {
        let ax = dot3(&xi, &alpha);
        let step = |x: Vec3| -> (Vec3, f64) {
            let (rh, _) = radius_at(x);
            let r = ax + (ax * ax - a2 + rh * rh).sqrt();
            let y = [(r * xi[0] - alpha[0]) / rh, (r * xi[1] - alpha[1]) / rh, (r * xi[2] - alpha[2]) / rh];
            (y, r)
        };
        let mut x = xi;
        let mut r = 1.0;
        let mut last = f64::INFINITY;
        let mut it = 0;
        while it < TRANSLATION_MAX_ITER {
            let (y, ry) = step(x);
            last = ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2) + (y[2] - x[2]).powi(2)).sqrt();
            x = y;
            r = ry;
            it += 1;
            if last <= TRANSLATION_TOL {
                break;
            }
        }
        if !(last <= TRANSLATION_TOL) {
            return Err(Error::NonContraction { iterations: it, last_step: last });
        }
        let (y, _) = step(x);
        worst = worst.max(((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2) + (y[2] - x[2]).powi(2)).sqrt());
        max_iterations = max_iterations.max(it);
        nodal_height.push(r - 1.0);
        preimages.push(x);
    }
    if l_out > grid.l_max() {
        return Err(Error::GridTooCoarse { degree: l_out, detail: "output degree exceeds grid".into() });
    }
    let height = grid.analyze(&nodal_height, l_out);
    Ok(TranslatedSurface { height, nodal_height, preimages, residual: worst, max_iterations })
}

/// Largest nodal mismatch `|(1 + h_alpha(xi)) xi - alpha - (1 + h(x)) x|`
/// with `x` the computed preimage of `xi`.
pub fn translation_residual(eta: &SphCoeffs, alpha: Vec3, grid: &QuadGrid, t: &TranslatedSurface) -> f64 {
    let mut worst = 0.0f64;
    for (k, xi) in grid.nodes().iter().enumerate() {
        let x = t.preimages[k];
        let r = 1.0 + PointHarmonics::new(eta.l_max(), x).eval(eta);
        let ra = 1.0 + t.nodal_height[k];
        let d: f64 = (0..3).map(|i| (ra * xi[i] - alpha[i] - r * x[i]).powi(2)).sum();
        worst = worst.max(d.sqrt());
    }
    worst
}

/// Translation acting on a state: `(h_alpha, psi o g_alpha)`, both re-analyzed
/// at degree `l_out` on `grid`.
pub fn translate_state(state: &State, alpha: Vec3, grid: &QuadGrid, l_out: usize) -> Result<State> {
    let t = translate_reparametrize(&state.eta, alpha, grid, l_out)?;
    let psi: Vec<f64> = t
        .preimages
        .iter()
        .map(|x| PointHarmonics::new(state.l_max(), *x).eval(&state.beta))
        .collect();
    Ok(State { eta: t.height, beta: grid.analyze(&psi, l_out) })
}
