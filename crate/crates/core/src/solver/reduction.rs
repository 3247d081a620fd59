//! Lyapunov-Schmidt path: solve the range equation for `w in W`, reduce to a
//! scalar equation in `omega`, and fix the kernel amplitude by `I = a`.

use nalgebra::{DMatrix, DVector};

use super::{parallel_map, WaveSolver};
use crate::error::{Error, Result};
use crate::geometry::State;
use crate::hamiltonian::Functional;
use crate::linear::Space;

/// Basin of the range equation around `(omega0, 0)`.
const MAX_OMEGA_OFFSET: f64 = 0.5;
const MAX_KERNEL_NORM: f64 = 0.3;
const RANGE_TOL: f64 = 1e-12;
const RANGE_MAX_ITER: usize = 60;
const SECANT_MAX_ITER: usize = 40;

/// Output of [`RangeSolver::reduced`].
#[derive(Clone, Debug)]
pub struct Reduced {
    /// `v + w(omega, v)`.
    pub state: State,
    /// `Pi_{Z_N} F(omega, v + w)`.
    pub kernel_residual: State,
    /// Coefficients of the gradient of the angular momentum at `v + w`.
    pub grad_momentum: State,
    pub angular_momentum: f64,
    pub hamiltonian_sigma0: f64,
}

/// Chord iteration for `Pi_W F(omega, v + w) = 0`, `w in W`, with the
/// Jacobian frozen at a reference point.
pub struct RangeSolver<'s> {
    solver: &'s WaveSolver,
    kernel: Vec<State>,
    pinv: DMatrix<f64>,
}

impl<'s> RangeSolver<'s> {
    pub fn new(solver: &'s WaveSolver, omega: f64, v: &State) -> Result<Self> {
        let kernel: Vec<State> = solver
            .data
            .kernel_basis()
            .into_iter()
            .map(|k| solver.layout.scatter(&solver.layout.gather(&k)))
            .filter(|k| k.norm() > 0.5)
            .collect();
        let mut this = Self { solver, kernel, pinv: DMatrix::zeros(0, 0) };
        this.check(omega, v)?;
        let n = solver.layout.len();
        let w0 = State::zeros(solver.cfg.l_max);
        let r0 = this.rows(omega, v, &w0)?;
        let column = |j: usize| -> Result<DVector<f64>> {
            let h = solver.cfg.fd_step;
            let mut e = vec![0.0; n];
            e[j] = h;
            let w = solver.layout.scatter(&e);
            Ok((this.rows(omega, v, &w)? - &r0) / h)
        };
        let jac = DMatrix::from_columns(&parallel_map(n, solver.cfg.threads, column)?);
        let svd = jac.svd(true, true);
        let s = &svd.singular_values;
        if !(s.min() > 1e-12 * s.max()) {
            return Err(Error::RankCollapse(s.min() / s.max()));
        }
        this.pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(this)
    }

    fn check(&self, omega: f64, v: &State) -> Result<()> {
        let data = &self.solver.data;
        if (omega - data.omega0).abs() > MAX_OMEGA_OFFSET || v.norm() > MAX_KERNEL_NORM {
            return Err(Error::InvalidArgument(format!(
                "(omega, |v|) = ({omega}, {}) is outside the range-equation basin",
                v.norm()
            )));
        }
        let off = data.project(v, Space::W)?.norm();
        if off > 1e-12 * v.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!("v has a range component of size {off:.3e}")));
        }
        Ok(())
    }

    /// `Pi_W F(omega, v + w)` on the allowed coefficients, then `<w, v_k>`.
    fn rows(&self, omega: f64, v: &State, w: &State) -> Result<DVector<f64>> {
        let s = self.solver;
        let f = s.evaluate(omega, &v.add(w))?.f;
        let mut r = s.layout.gather(&s.data.project(&f, Space::W)?);
        r.extend(self.kernel.iter().map(|k| k.dot(w)));
        Ok(DVector::from_vec(r))
    }

    pub fn solve(&self, omega: f64, v: &State) -> Result<State> {
        self.check(omega, v)?;
        let s = self.solver;
        let mut w = State::zeros(s.cfg.l_max);
        let mut previous = f64::INFINITY;
        let mut growth = 0;
        for _ in 0..RANGE_MAX_ITER {
            let r = self.rows(omega, v, &w)?;
            let norm = r.norm();
            if norm <= RANGE_TOL {
                return Ok(w);
            }
            growth = if norm >= previous { growth + 1 } else { 0 };
            if growth >= 3 {
                break;
            }
            previous = norm;
            let dw = &self.pinv * r;
            w = w.sub(&s.layout.scatter(dw.as_slice()));
        }
        Err(Error::NotConverged { iterations: RANGE_MAX_ITER, residual: previous, constraint: 0.0 })
    }

    /// Range solution and the quantities the reduced problem needs at `v`.
    pub fn reduced(&self, omega: f64, v: &State) -> Result<Reduced> {
        let s = self.solver;
        let w = self.solve(omega, v)?;
        let u = v.add(&w);
        let fields = s.model.nodal_fields(&u)?;
        let (f1, f2) = fields.grad_operator(omega);
        let g = s.model.grid();
        let l = s.cfg.l_max;
        let f = State::new(g.analyze(&f1, l), g.analyze(&f2, l))?;
        let (gh, gp) = s.model.functional_gradient(Functional::AngularMomentum, &fields);
        let grad_momentum = State::new(g.analyze(&gh, l), g.analyze(&gp, l))?;
        let inv = fields.invariants(g, s.cfg.sigma0);
        Ok(Reduced {
            state: u,
            kernel_residual: s.data.project(&f, Space::ZN)?,
            grad_momentum,
            angular_momentum: inv.angular_momentum,
            hamiltonian_sigma0: inv.hamiltonian_sigma0,
        })
    }

    /// `<Pi_{Z_N} F(omega, v + w), grad I(v + w)>` with `w = w(omega, v)`.
    pub fn scalar(&self, omega: f64, v: &State) -> Result<f64> {
        let r = self.reduced(omega, v)?;
        Ok(r.kernel_residual.dot(&r.grad_momentum))
    }

    /// Root of `omega -> scalar(omega, v)` by a safeguarded secant started at `omega0`.
    pub fn omega_of_v(&self, v: &State) -> Result<f64> {
        let omega0 = self.solver.data.omega0;
        let mut x0 = omega0;
        let mut f0 = self.scalar(x0, v)?;
        let mut x1 = omega0 * (1.0 + 1e-3);
        let mut f1 = self.scalar(x1, v)?;
        for _ in 0..SECANT_MAX_ITER {
            if f1 == 0.0 || (x1 - x0).abs() <= 1e-15 * x1.abs() {
                return Ok(x1);
            }
            if f1 == f0 {
                break;
            }
            let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
            if !x2.is_finite() || (x2 - omega0).abs() > MAX_OMEGA_OFFSET {
                break;
            }
            (x0, f0) = (x1, f1);
            x1 = x2;
            f1 = self.scalar(x1, v)?;
        }
        Err(Error::NotConverged { iterations: SECANT_MAX_ITER, residual: f1.abs(), constraint: 0.0 })
    }
}

impl WaveSolver {
    /// `w(omega, v)` solving the range equation.
    pub fn range_solve(&self, omega: f64, v: &State) -> Result<State> {
        RangeSolver::new(self, omega, v)?.solve(omega, v)
    }

    /// The scalar bifurcation function `F(omega, v)`.
    pub fn scalar_reduction(&self, omega: f64, v: &State) -> Result<f64> {
        RangeSolver::new(self, omega, v)?.scalar(omega, v)
    }

    pub fn omega_of_v(&self, v: &State) -> Result<f64> {
        RangeSolver::new(self, self.data.omega0, v)?.omega_of_v(v)
    }

    /// Point with `I(u) = a` on the kernel ray through `Lambda y`, found by
    /// a secant in the ray parameter. Returns `(omega, u)`.
    pub fn reduction_point(&self, a: f64, y: &[f64]) -> Result<(f64, State)> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidArgument(format!("amplitude {a} must be positive")));
        }
        let ray = self.predictor(1.0, y)?;
        let range = RangeSolver::new(self, self.data.omega0, &ray.scaled(a.sqrt()))?;
        let at = |t: f64| -> Result<(f64, State, f64)> {
            let v = ray.scaled(t);
            let omega = range.omega_of_v(&v)?;
            let u = v.add(&range.solve(omega, &v)?);
            let momentum = self.evaluate(omega, &u)?.angular_momentum;
            Ok((omega, u, momentum - a))
        };
        let mut t0 = a.sqrt();
        let mut g0 = at(t0)?.2;
        let mut t1 = t0 * (1.0 + 1e-3);
        let (mut omega, mut u, mut g1) = at(t1)?;
        for _ in 0..SECANT_MAX_ITER {
            if g1.abs() <= 0.1 * self.cfg.tol_constraint {
                return Ok((omega, u));
            }
            if g1 == g0 {
                break;
            }
            let t2 = t1 - g1 * (t1 - t0) / (g1 - g0);
            (t0, g0) = (t1, g1);
            t1 = t2;
            (omega, u, g1) = at(t1)?;
        }
        Err(Error::NotConverged { iterations: SECANT_MAX_ITER, residual: 0.0, constraint: g1.abs() })
    }
}
