//! Rotating traveling waves: constrained Gauss-Newton continuation in the
//! angular momentum, a Lyapunov-Schmidt path used for cross-checks, and
//! multi-start orbit scans.

mod orbit;
mod reduction;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use orbit::{orbit_profile, OrbitClass, OrbitScan};
pub use reduction::RangeSolver;

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::hamiltonian::{Discretization, Model, NodalFields, PhysicalParams, Surface};
use crate::linear::ResonanceData;
use crate::sphere::{pairs, SphCoeffs};

/// Invariant subspace the unknowns are restricted to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    #[default]
    None,
    /// Even in `x2` for `eta`, odd for `beta`.
    Y2,
    /// Even in `x3`.
    Y3,
    Y23,
    /// Invariant under rotation by `2 pi / k`.
    KFold(usize),
}

impl Symmetry {
    /// Whether the coefficient `(l, m)` of `eta` (or of `beta`) may be nonzero.
    pub fn allows(&self, is_eta: bool, l: usize, m: i64) -> bool {
        let y2 = if is_eta { m >= 0 } else { m < 0 };
        let y3 = (l as i64 - m).rem_euclid(2) == 0;
        match *self {
            Symmetry::None => true,
            Symmetry::Y2 => y2,
            Symmetry::Y3 => y3,
            Symmetry::Y23 => y2 && y3,
            Symmetry::KFold(k) => m.rem_euclid(k as i64) == 0,
        }
    }

    fn check_seed(&self, l0: usize, m0: i64) -> Result<()> {
        match *self {
            Symmetry::KFold(0) => Err(Error::InvalidArgument("k-fold symmetry needs k >= 1".into())),
            Symmetry::KFold(k) if m0.rem_euclid(k as i64) != 0 => {
                Err(Error::InvalidArgument(format!("m0 = {m0} is not a multiple of k = {k}")))
            }
            Symmetry::Y3 | Symmetry::Y23 if (l0 as i64 - m0).rem_euclid(2) != 0 => Err(Error::InvalidArgument(
                format!("x3 reflection needs l0 - m0 even, got ({l0}, {m0})"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub sigma0: f64,
    pub l0: usize,
    pub m0: i64,
    pub l_max: usize,
    /// Extension degree of the Dirichlet-Neumann solver; `None` means `2 L + 4`.
    pub l_ext: Option<usize>,
    pub amplitudes: Vec<f64>,
    pub tol_residual: f64,
    pub tol_constraint: f64,
    pub max_iterations: usize,
    pub symmetry: Symmetry,
    /// Start direction in the coordinates of the nondegenerate kernel
    /// vectors; `None` points along the seed mode.
    pub direction: Option<Vec<f64>>,
    pub fd_step: f64,
    pub threads: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            l0: 3,
            m0: 2,
            l_max: 8,
            l_ext: None,
            amplitudes: vec![1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2],
            tol_residual: 1e-9,
            tol_constraint: 1e-11,
            max_iterations: 20,
            symmetry: Symmetry::None,
            direction: None,
            fd_step: 1e-6,
            threads: 1,
        }
    }
}

impl SolveConfig {
    pub fn discretization(&self) -> Discretization {
        match self.l_ext {
            Some(l_ext) => Discretization::new(self.l_max).with_l_ext(l_ext),
            None => Discretization::new(self.l_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {v} must be positive")))
            }
        };
        positive("sigma0", self.sigma0)?;
        positive("tol_residual", self.tol_residual)?;
        positive("tol_constraint", self.tol_constraint)?;
        positive("fd_step", self.fd_step)?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        validate_amplitudes(&self.amplitudes)?;
        self.symmetry.check_seed(self.l0, self.m0)?;
        self.discretization().validate()
    }
}

/// Amplitudes must be positive, finite and strictly increasing.
pub fn validate_amplitudes(amplitudes: &[f64]) -> Result<()> {
    if amplitudes.is_empty() {
        return Err(Error::InvalidArgument("amplitude list is empty".into()));
    }
    for (k, a) in amplitudes.iter().enumerate() {
        if !(*a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidArgument(format!("amplitude {a} must be positive")));
        }
        if k > 0 && *a <= amplitudes[k - 1] {
            return Err(Error::InvalidArgument("amplitudes must increase".into()));
        }
    }
    Ok(())
}

/// Diagnostics of one Newton iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub residual: f64,
    pub constraint: f64,
    /// `<F, (0, 1)>`, `<F, vertical translation>` and `<F, M u>`.
    pub orthogonality: [f64; 3],
    /// Largest coefficient of the state, and of `F`, outside the symmetric subspace.
    pub forbidden_state: f64,
    pub forbidden_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub a: f64,
    pub omega: f64,
    pub state: State,
    /// Coefficient norm of `F(omega, u)`.
    pub residual: f64,
    pub angular_momentum: f64,
    pub volume: f64,
    pub barycenter3: f64,
    pub hamiltonian_sigma0: f64,
    pub iterations: usize,
    pub trace: Vec<IterateRecord>,
}

impl BranchPoint {
    pub fn constraint(&self) -> f64 {
        (self.angular_momentum - self.a).abs()
    }
}

/// Outcome of a continuation run; `failure` is set when it stopped early.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub failure: Option<String>,
}

/// Rows weight of the scalar constraints relative to the rows of `F`.
const CONSTRAINT_WEIGHT: f64 = 1e3;
/// Relative singular value below which the bordered Jacobian is treated as singular.
const RANK_TOL: f64 = 1e-13;
const MAX_BISECTIONS: usize = 5;

/// Positions of the unknown coefficients allowed by the symmetry.
#[derive(Clone, Debug)]
struct Layout {
    l_max: usize,
    eta: Vec<usize>,
    beta: Vec<usize>,
}

impl Layout {
    fn new(l_max: usize, symmetry: Symmetry) -> Self {
        let mut eta = Vec::new();
        let mut beta = Vec::new();
        for (k, (l, m)) in pairs(l_max).enumerate() {
            if symmetry.allows(true, l, m) {
                eta.push(k);
            }
            if symmetry.allows(false, l, m) {
                beta.push(k);
            }
        }
        Self { l_max, eta, beta }
    }

    fn len(&self) -> usize {
        self.eta.len() + self.beta.len()
    }

    fn gather(&self, u: &State) -> Vec<f64> {
        let e = u.eta.as_slice();
        let b = u.beta.as_slice();
        self.eta.iter().map(|&k| e[k]).chain(self.beta.iter().map(|&k| b[k])).collect()
    }

    fn scatter(&self, values: &[f64]) -> State {
        let mut u = State::zeros(self.l_max);
        let (ve, vb) = values.split_at(self.eta.len());
        for (&k, v) in self.eta.iter().zip(ve) {
            u.eta.as_mut_slice()[k] = *v;
        }
        for (&k, v) in self.beta.iter().zip(vb) {
            u.beta.as_mut_slice()[k] = *v;
        }
        u
    }

    /// Largest coefficient outside the layout.
    fn forbidden_max(&self, u: &State) -> f64 {
        let kept = self.scatter(&self.gather(u));
        u.sub(&kept).max_abs()
    }
}

/// Phase and pinning data of one Newton solve.
#[derive(Clone, Debug)]
struct Anchor {
    state: State,
    tangent: Option<State>,
}

impl Anchor {
    fn new(state: &State, layout: &Layout) -> Self {
        let t = state.rotation_generator();
        let t = layout.scatter(&layout.gather(&t));
        let n = t.norm();
        let tangent = (n > 1e-14 * state.norm().max(1e-300)).then(|| t.scaled(1.0 / n));
        Self { state: state.clone(), tangent }
    }
}

/// Everything computed from one evaluation of the nonlinear operator.
struct Evaluation {
    f: State,
    angular_momentum: f64,
}

pub struct WaveSolver {
    cfg: SolveConfig,
    model: Model,
    data: ResonanceData,
    layout: Layout,
    /// Start direction, normalized.
    direction: Vec<f64>,
}

impl std::fmt::Debug for WaveSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WaveSolver").field("cfg", &self.cfg).finish()
    }
}

impl WaveSolver {
    pub fn new(cfg: SolveConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(PhysicalParams::new(cfg.sigma0)?, cfg.discretization())?;
        let data = ResonanceData::new(cfg.l0, cfg.m0, cfg.sigma0, cfg.l_max)?;
        let layout = Layout::new(cfg.l_max, cfg.symmetry);
        let n_dir = data.nondegenerate_kernel.len();
        let direction = match &cfg.direction {
            Some(d) => d.clone(),
            None => data.nondegenerate_kernel.iter().map(|v| f64::from(v.l == cfg.l0 && v.m == cfg.m0)).collect(),
        };
        let solver = Self { cfg, model, data, layout, direction: Vec::new() };
        let direction = solver.normalized_direction(&direction)?;
        debug_assert_eq!(direction.len(), n_dir);
        Ok(Self { direction, ..solver })
    }

    pub fn config(&self) -> &SolveConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn resonance(&self) -> &ResonanceData {
        &self.data
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// Normalize a start direction and check it lies in the symmetric subspace.
    pub fn normalized_direction(&self, y: &[f64]) -> Result<Vec<f64>> {
        let k = &self.data.nondegenerate_kernel;
        if y.len() != k.len() {
            return Err(Error::InvalidArgument(format!(
                "direction has {} entries, the nondegenerate kernel has dimension {}",
                y.len(),
                k.len()
            )));
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("direction must be a nonzero finite vector".into()));
        }
        let y: Vec<f64> = y.iter().map(|v| v / norm).collect();
        let v = self.data.from_nondegenerate_coordinates(&y)?;
        if self.layout.forbidden_max(&v) > 1e-14 {
            return Err(Error::InvalidArgument("direction leaves the symmetric subspace".into()));
        }
        Ok(y)
    }

    /// Small-amplitude start `sqrt(a) Lambda y` at `omega0`.
    pub fn predictor(&self, a: f64, y: &[f64]) -> Result<State> {
        let y = self.normalized_direction(y)?;
        let v = self.data.from_nondegenerate_coordinates(&y)?;
        Ok(self.data.lambda_map(&v)?.scaled(a.sqrt()))
    }

    fn evaluate_on(&self, surface: &Surface<'_>, omega: f64, beta: &SphCoeffs) -> Result<(Evaluation, NodalFields)> {
        let fields = surface.nodal_fields(beta)?;
        let (f1, f2) = fields.grad_operator(omega);
        let g = self.model.grid();
        let l = self.cfg.l_max;
        let f = State::new(g.analyze(&f1, l), g.analyze(&f2, l))?;
        let angular_momentum = fields.angular_momentum(g);
        Ok((Evaluation { f, angular_momentum }, fields))
    }

    fn evaluate(&self, omega: f64, u: &State) -> Result<Evaluation> {
        let surface = self.model.surface(&u.eta)?;
        Ok(self.evaluate_on(&surface, omega, &u.beta)?.0)
    }

    fn residual_vector(&self, u: &State, eval: &Evaluation, a: f64, anchor: &Anchor) -> DVector<f64> {
        let mut r = self.layout.gather(&eval.f);
        r.push(CONSTRAINT_WEIGHT * (eval.angular_momentum - a));
        if let Some(t) = &anchor.tangent {
            r.push(CONSTRAINT_WEIGHT * u.sub(&anchor.state).dot(t));
        }
        if self.cfg.symmetry.allows(false, 0, 0) {
            r.push(CONSTRAINT_WEIGHT * u.beta.get(0, 0));
        }
        if self.cfg.symmetry.allows(true, 1, 0) {
            r.push(CONSTRAINT_WEIGHT * u.eta.get(1, 0));
        }
        DVector::from_vec(r)
    }

    fn unknowns(&self, omega: f64, u: &State) -> DVector<f64> {
        let mut x = self.layout.gather(u);
        x.push(omega);
        DVector::from_vec(x)
    }

    fn split(&self, x: &DVector<f64>) -> (f64, State) {
        let n = self.layout.len();
        (x[n], self.layout.scatter(&x.as_slice()[..n]))
    }

    /// Forward-difference Jacobian of the bordered residual. Columns that only
    /// perturb `beta` or `omega` reuse the harmonic extension of the base surface.
    fn jacobian(&self, x: &DVector<f64>, r0: &DVector<f64>, a: f64, anchor: &Anchor) -> Result<DMatrix<f64>> {
        let n = x.len();
        let n_eta = self.layout.eta.len();
        let (_, u0) = self.split(x);
        let base = self.model.surface(&u0.eta)?;
        let column = |j: usize| -> Result<DVector<f64>> {
            let h = self.cfg.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let (omega, u) = self.split(&xp);
            let eval = if j < n_eta {
                self.evaluate(omega, &u)?
            } else {
                self.evaluate_on(&base, omega, &u.beta)?.0
            };
            let r = self.residual_vector(&u, &eval, a, anchor);
            Ok((r - r0) / h)
        };
        let columns = parallel_map(n, self.cfg.threads, column)?;
        Ok(DMatrix::from_columns(&columns))
    }

    fn record(&self, omega: f64, u: &State, fields: &NodalFields, eval: &Evaluation, a: f64) -> IterateRecord {
        let (o1, o2) = self.model.orthogonality_residuals(omega, fields);
        IterateRecord {
            residual: eval.f.norm(),
            constraint: (eval.angular_momentum - a).abs(),
            orthogonality: [o1, o2, eval.f.dot(&u.rotation_generator())],
            forbidden_state: self.layout.forbidden_max(u),
            forbidden_residual: self.layout.forbidden_max(&eval.f),
        }
    }

    fn converged(&self, u: &State, rec: &IterateRecord, anchor: &Anchor) -> bool {
        let phase = anchor.tangent.as_ref().map_or(0.0, |t| u.sub(&anchor.state).dot(t).abs());
        rec.residual <= self.cfg.tol_residual
            && rec.constraint <= self.cfg.tol_constraint
            && phase <= self.cfg.tol_constraint
            && u.beta.get(0, 0).abs() <= self.cfg.tol_constraint
            && u.eta.get(1, 0).abs() <= self.cfg.tol_constraint
    }

    /// Gauss-Newton on `F(omega, u) = 0`, `I(u) = a`, the phase condition
    /// against `anchor` and the two pinning rows.
    pub fn constrained_newton(&self, a: f64, omega: f64, start: &State, anchor: &State) -> Result<BranchPoint> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidArgument(format!("amplitude {a} must be positive")));
        }
        if start.l_max() != self.cfg.l_max || anchor.l_max() != self.cfg.l_max {
            return Err(Error::InvalidArgument("start degree does not match the configuration".into()));
        }
        let anchor = Anchor::new(anchor, &self.layout);
        let mut x = self.unknowns(omega, start);
        let mut trace = Vec::new();
        let mut last = (f64::NAN, f64::NAN);
        // Jacobian of the latest Newton step, reused once for a final chord step
        let mut chord: Option<DMatrix<f64>> = None;
        for iteration in 0..=self.cfg.max_iterations {
            let (omega, u) = self.split(&x);
            let surface = self.model.surface(&u.eta)?;
            let (eval, fields) = self.evaluate_on(&surface, omega, &u.beta)?;
            let rec = self.record(omega, &u, &fields, &eval, a);
            last = (rec.residual, rec.constraint);
            trace.push(rec.clone());
            let done = self.converged(&u, &rec, &anchor);
            if done {
                if let Some(jac) = chord.take().filter(|_| iteration < self.cfg.max_iterations) {
                    // the residual gate alone leaves the weakly determined
                    // kernel directions loose; one more cheap step tightens them
                    let r = self.residual_vector(&u, &eval, a, &anchor);
                    if let Ok(dx) = least_squares_step(&jac, &r) {
                        let trial = &x + dx;
                        let (o, v) = self.split(&trial);
                        if let Ok(e) = self.evaluate(o, &v) {
                            if self.residual_vector(&v, &e, a, &anchor).norm() <= r.norm() {
                                x = trial;
                                continue;
                            }
                        }
                    }
                }

                let inv = fields.invariants(self.model.grid(), self.cfg.sigma0);
                return Ok(BranchPoint {
                    a,
                    omega,
                    state: u,
                    residual: rec.residual,
                    angular_momentum: inv.angular_momentum,
                    volume: inv.volume,
                    barycenter3: inv.barycenter[2],
                    hamiltonian_sigma0: inv.hamiltonian_sigma0,
                    iterations: iteration,
                    trace,
                });
            }
            if iteration == self.cfg.max_iterations {
                break;
            }
            drop(surface);
            let r = self.residual_vector(&u, &eval, a, &anchor);
            let jac = self.jacobian(&x, &r, a, &anchor)?;
            let dx = least_squares_step(&jac, &r)?;
            x = self.damped_update(&x, &dx, r.norm(), a, &anchor);
            chord = Some(jac);
        }
        Err(Error::NotConverged { iterations: self.cfg.max_iterations, residual: last.0, constraint: last.1 })
    }

    /// Full step when it lowers the residual, otherwise up to six halvings.
    fn damped_update(&self, x: &DVector<f64>, dx: &DVector<f64>, r_norm: f64, a: f64, anchor: &Anchor) -> DVector<f64> {
        let mut t = 1.0;
        for _ in 0..6 {
            let trial = x + dx * t;
            let (omega, u) = self.split(&trial);
            if let Ok(eval) = self.evaluate(omega, &u) {
                if self.residual_vector(&u, &eval, a, anchor).norm() < r_norm {
                    return trial;
                }
            }
            t *= 0.5;
        }
        x + dx * t
    }

    /// Continuation along the configured amplitudes, with a secant predictor
    /// in `sqrt(a)` and up to five bisections of a failed step.
    pub fn branch_continue(&self) -> Result<Branch> {
        self.branch_from(&self.cfg.amplitudes, &self.direction)
    }

    pub fn branch_from(&self, amplitudes: &[f64], direction: &[f64]) -> Result<Branch> {
        validate_amplitudes(amplitudes)?;
        let direction = self.normalized_direction(direction)?;
        let omega0 = self.data.omega0;
        let mut points: Vec<BranchPoint> = Vec::new();
        for &target in amplitudes {
            let mut pending = vec![(target, 0usize)];
            while let Some((a, depth)) = pending.pop() {
                let (omega, start) = match points.len() {
                    0 => (omega0, self.predictor(a, &direction)?),
                    1 => {
                        let p = &points[0];
                        let t = (a / p.a).sqrt();
                        (omega0 + t * (p.omega - omega0), p.state.scaled(t))
                    }
                    k => {
                        let (p, q) = (&points[k - 2], &points[k - 1]);
                        let t = (a.sqrt() - q.a.sqrt()) / (q.a.sqrt() - p.a.sqrt());
                        let mut u = q.state.clone();
                        u.axpy(t, &q.state.sub(&p.state));
                        (q.omega + t * (q.omega - p.omega), u)
                    }
                };
                let anchor = points.last().map_or_else(|| start.clone(), |p| p.state.clone());
                // with several kernel orbits a bare kernel ray is not close to a
                // solution, so the first point relaxes to a critical point first
                let solved = if points.is_empty() && self.orbit_dimension() > 2 {
                    self.critical_point(a, &direction, false)
                } else {
                    self.constrained_newton(a, omega, &start, &anchor)
                };
                match solved {
                    Ok(p) => points.push(p),
                    Err(e) if e.is_numerical() && depth < MAX_BISECTIONS => {
                        let previous = points.last().map_or(0.0, |p| p.a);
                        let mid = (0.5 * (previous.sqrt() + a.sqrt())).powi(2);
                        pending.push((a, depth + 1));
                        pending.push((mid, depth + 1));
                    }
                    Err(e) if e.is_numerical() => {
                        return Ok(Branch { points, failure: Some(format!("a = {a:.6e}: {e}")) });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(Branch { points, failure: None })
    }
}

/// Least-squares solution of `J dx = -r` with column equilibration.
fn least_squares_step(jac: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = DVector::from_iterator(
        jac.ncols(),
        jac.column_iter().map(|c| {
            let n = c.norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        }),
    );
    let scaled = jac * DMatrix::from_diagonal(&scale);
    let svd = scaled.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > RANK_TOL * s_max) {
        return Err(Error::RankCollapse(s_min / s_max));
    }
    let y = svd.solve(&(-r), 0.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(y.component_mul(&scale))
}

/// Map `0..n` through `f` on up to `threads` scoped threads, preserving order.
fn parallel_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if threads <= 1 || n < 2 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(threads);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let f = &f;
                s.spawn(move || (start..(start + chunk).min(n)).map(f).collect::<Result<Vec<T>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Thread cap from `DROPWAVES_THREADS`, defaulting to one.
pub fn threads_from_env() -> usize {
    std::env::var("DROPWAVES_THREADS").ok().and_then(|v| v.parse().ok()).filter(|n| *n > 0).unwrap_or(1)
}

#[cfg(test)]
mod tests;
