//! Multi-start solves at fixed angular momentum, grouped into orbits of the
//! rotation group.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::reduction::{RangeSolver, Reduced};
use super::{parallel_map, BranchPoint, WaveSolver};
use crate::error::Result;
use crate::geometry::State;
use crate::sphere::index;

/// Invariants within this distance put two solutions in one class.
pub const ORBIT_TOL: f64 = 1e-8;
const THETA_SAMPLES: usize = 2048;
const FLOW_MAX_STEPS: usize = 80;
/// Stop the flow once the tangential gradient has dropped by this factor.
const FLOW_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitClass {
    /// Indices into [`OrbitScan::points`].
    pub members: Vec<usize>,
    pub hamiltonian_sigma0: f64,
    pub omega: f64,
    /// Rotation angle taking the first member to each member, and the
    /// remaining mismatch.
    pub thetas: Vec<f64>,
    pub fit_residuals: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitScan {
    pub a: f64,
    pub seed: u64,
    pub starts: Vec<Vec<f64>>,
    pub points: Vec<BranchPoint>,
    /// Start index and error message of each failed solve.
    pub failures: Vec<(usize, String)>,
    pub classes: Vec<OrbitClass>,
}

/// Rotation invariant profile: `sqrt(c_{l,m}^2 + c_{l,-m}^2)` for `eta` and
/// `beta`, over `l` and `m >= 0`.
pub fn orbit_profile(u: &State) -> Vec<f64> {
    let l_max = u.l_max();
    let mut out = Vec::new();
    for c in [&u.eta, &u.beta] {
        let s = c.as_slice();
        for l in 0..=l_max {
            out.push(s[index(l, 0)].abs());
            for m in 1..=l as i64 {
                out.push(s[index(l, m)].hypot(s[index(l, -m)]));
            }
        }
    }
    out
}

/// Angle `theta` minimizing `|T_theta a - b|`, and that minimum.
pub fn fit_rotation(a: &State, b: &State) -> (f64, f64) {
    let dist = |theta: f64| a.rotated(theta).sub(b).norm();
    let step = 2.0 * PI / THETA_SAMPLES as f64;
    let best = (0..THETA_SAMPLES)
        .map(|k| k as f64 * step)
        .min_by(|x, y| dist(*x).total_cmp(&dist(*y)))
        .unwrap_or(0.0);
    // golden section on the bracketing cell
    let (mut lo, mut hi) = (best - step, best + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (dist(x1), dist(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            (x2, f2) = (x1, f1);
            x1 = hi - g * (hi - lo);
            f1 = dist(x1);
        } else {
            lo = x1;
            (x1, f1) = (x2, f2);
            x2 = lo + g * (hi - lo);
            f2 = dist(x2);
        }
    }
    let theta = 0.5 * (lo + hi);
    (theta.rem_euclid(2.0 * PI), dist(theta))
}

fn same_class(p: &BranchPoint, q: &BranchPoint) -> bool {
    if (p.hamiltonian_sigma0 - q.hamiltonian_sigma0).abs() > ORBIT_TOL {
        return false;
    }
    let (a, b) = (orbit_profile(&p.state), orbit_profile(&q.state));
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= ORBIT_TOL)
}

/// Group points by orbit invariants and fit the rotation within each class.
pub fn classify(points: &[BranchPoint]) -> Vec<OrbitClass> {
    let mut classes: Vec<OrbitClass> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        match classes.iter_mut().find(|c| same_class(&points[c.members[0]], p)) {
            Some(c) => {
                let (theta, res) = fit_rotation(&points[c.members[0]].state, &p.state);
                c.members.push(i);
                c.thetas.push(theta);
                c.fit_residuals.push(res);
            }
            None => classes.push(OrbitClass {
                members: vec![i],
                hamiltonian_sigma0: p.hamiltonian_sigma0,
                omega: p.omega,
                thetas: vec![0.0],
                fit_residuals: vec![0.0],
            }),
        }
    }
    classes
}

impl WaveSolver {
    /// Solve from `starts` directions drawn uniformly on the unit sphere of
    /// the nondegenerate kernel and group the results into orbits.
    pub fn orbit_scan(&self, a: f64, starts: usize, seed: u64) -> Result<OrbitScan> {
        let dim = self.data.nondegenerate_kernel.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dirs = Vec::with_capacity(starts);
        while dirs.len() < starts {
            let y: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y = self.layout_direction(&y);
            if let Ok(y) = self.normalized_direction(&y) {
                dirs.push(y);
            }
        }
        let solve = |k: usize| -> Result<std::result::Result<BranchPoint, String>> {
            match self.critical_point(a, &dirs[k], k % 2 == 1) {
                Ok(p) => Ok(Ok(p)),
                Err(e) if e.is_numerical() => Ok(Err(e.to_string())),
                Err(e) => Err(e),
            }
        };
        let outcomes = parallel_map(starts, self.cfg.threads, solve)?;
        let mut points = Vec::new();
        let mut failures = Vec::new();
        for (k, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(p) => points.push(p),
                Err(e) => failures.push((k, e)),
            }
        }
        let classes = classify(&points);
        Ok(OrbitScan { a, seed, starts: dirs, points, failures, classes })
    }

    /// From the kernel direction `y`, follow the gradient of `H_sigma0` on
    /// `{I = a}` in kernel coordinates (descending, or ascending when
    /// `ascend`), with `w` slaved by the range equation, then polish the
    /// result by constrained Newton.
    pub fn critical_point(&self, a: f64, y: &[f64], ascend: bool) -> Result<BranchPoint> {
        let omega_bar = self.data.omega0;
        let v0 = self.predictor(a, y)?;
        let range = RangeSolver::new(self, omega_bar, &v0)?;
        let sign = if ascend { 1.0 } else { -1.0 };
        let coords = |s: &State| self.data.nondegenerate_coordinates(s);
        // rescale the kernel part until I(v + w) = a
        let on_shell = |v: State| -> Result<(State, Reduced)> {
            let mut v = v;
            let mut r = range.reduced(omega_bar, &v)?;
            for _ in 0..4 {
                let t = (a / r.angular_momentum).sqrt();
                if !t.is_finite() || (t - 1.0).abs() < 1e-12 {
                    break;
                }
                v = v.scaled(t);
                r = range.reduced(omega_bar, &v)?;
            }
            Ok((v, r))
        };
        // the flow preserves the rotational symmetry of the start; keep it exact
        let kernel = &self.data.nondegenerate_kernel;
        let fold = kernel
            .iter()
            .zip(y)
            .filter(|(_, c)| **c != 0.0)
            .fold(0, |g, (k, _)| gcd(g, k.m.unsigned_abs() as usize));
        let keep: Vec<bool> = kernel.iter().map(|k| fold == 0 || k.m.unsigned_abs() as usize % fold == 0).collect();
        let tangent = |r: &Reduced| -> Result<(Vec<f64>, f64)> {
            let mut g = coords(&r.kernel_residual)?;
            g.iter_mut().zip(&keep).filter(|(_, k)| !**k).for_each(|(x, _)| *x = 0.0);
            let mut n = coords(&r.grad_momentum)?;
            n.iter_mut().zip(&keep).filter(|(_, k)| !**k).for_each(|(x, _)| *x = 0.0);
            let nn: f64 = n.iter().map(|x| x * x).sum();
            let mu = g.iter().zip(&n).map(|(x, y)| x * y).sum::<f64>() / nn;
            Ok((g.iter().zip(&n).map(|(x, y)| x - mu * y).collect(), mu))
        };
        let energy = |r: &Reduced| r.hamiltonian_sigma0 - omega_bar * r.angular_momentum;
        let (mut v, mut r) = on_shell(v0)?;
        let (mut gt, mut mu) = tangent(&r)?;
        let norm = |x: &[f64]| x.iter().map(|t| t * t).sum::<f64>().sqrt();
        let g_first = norm(&gt);
        let mut alpha = 0.2;
        for _ in 0..FLOW_MAX_STEPS {
            let gn = norm(&gt);
            if gn <= FLOW_TOL * g_first || gn == 0.0 || alpha < 1e-8 {
                break;
            }
            let y = coords(&v)?;
            let scale = sign * alpha * norm(&y) / gn;
            let stepped: Vec<f64> = y
                .iter()
                .zip(&gt)
                .zip(&keep)
                .map(|((y, g), k)| if *k { y + scale * g } else { 0.0 })
                .collect();
            let trial = on_shell(self.data.from_nondegenerate_coordinates(&stepped)?);
            match trial {
                Ok((v_new, r_new)) if sign * (energy(&r_new) - energy(&r)) > 0.0 => {
                    v = v_new;
                    r = r_new;
                    (gt, mu) = tangent(&r)?;
                    alpha = (alpha * 1.5).min(0.5);
                }
                _ => alpha *= 0.5,
            }
        }
        self.constrained_newton(a, omega_bar + mu, &r.state, &r.state)
    }

    /// Number of nondegenerate kernel directions inside the symmetric subspace.
    pub(super) fn orbit_dimension(&self) -> usize {
        self.layout_direction(&vec![1.0; self.data.nondegenerate_kernel.len()])
            .iter()
            .filter(|c| **c != 0.0)
            .count()
    }

    /// Zero the coordinates of kernel vectors outside the symmetric subspace.
    fn layout_direction(&self, y: &[f64]) -> Vec<f64> {
        self.data
            .nondegenerate_kernel
            .iter()
            .zip(y)
            .map(|(k, v)| {
                let s = k.to_state(self.cfg.l_max);
                if self.layout.forbidden_max(&s) > 0.0 {
                    0.0
                } else {
                    *v
                }
            })
            .collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
