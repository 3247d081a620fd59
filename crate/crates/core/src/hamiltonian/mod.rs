//! Nonlinear vector fields of the drop, the conserved functionals, the
//! gradient operator `F(omega, u)` whose zeros are rotating waves, Poisson
//! brackets and time integration.
//!
//! All nonlinear quantities are formed pointwise on an evaluation grid of
//! degree `max(2 L, l_ext)` and projected back to degree `L` by quadrature.

mod evolve;

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use evolve::{evolve, relative_drift, EvolutionLog, EvolveSettings};

use crate::dirichlet_neumann::{DirichletNeumann, DnReport, DnSettings, HarmonicExtension};
use crate::error::{Error, Result};
use crate::geometry::{State, SurfaceGeometry};
use crate::sphere::{dot3, n_coeffs, QuadGrid, SphCoeffs, Vec3, L_MAX_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Capillarity coefficient.
    pub sigma0: f64,
}

impl PhysicalParams {
    pub fn new(sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma0 = {sigma0} must be positive")));
        }
        Ok(Self { sigma0 })
    }
}

/// Truncation degree of states plus the resolution of the nonlinear terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    pub l_max: usize,
    pub dn: DnSettings,
}

impl Discretization {
    pub fn new(l_max: usize) -> Self {
        Self { l_max, dn: DnSettings::for_degree(l_max) }
    }

    pub fn with_l_ext(mut self, l_ext: usize) -> Self {
        self.dn.l_ext = l_ext;
        self
    }

    /// Degree of the evaluation grid.
    pub fn grid_degree(&self) -> usize {
        (2 * self.l_max).max(self.dn.l_ext)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_max > L_MAX_CAP {
            return Err(Error::DegreeCap { requested: self.l_max, cap: L_MAX_CAP });
        }
        if self.dn.l_ext < self.l_max {
            return Err(Error::InvalidArgument(format!(
                "extension degree {} is below the state degree {}",
                self.dn.l_ext, self.l_max
            )));
        }
        if !(self.dn.misfit_tol > 0.0) || !(self.dn.condition_max > 1.0) {
            return Err(Error::InvalidArgument("extension tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar functionals with known `L^2` gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Functional {
    Hamiltonian,
    HamiltonianSigma0,
    Volume,
    AngularMomentum,
    /// Component `k` of the barycenter momentum.
    Barycenter(usize),
}

/// Conserved quantities of a state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Invariants {
    pub hamiltonian: f64,
    pub hamiltonian_sigma0: f64,
    pub volume: f64,
    pub angular_momentum: f64,
    pub barycenter: Vec3,
}

pub struct Model {
    params: PhysicalParams,
    disc: Discretization,
    grid: Arc<QuadGrid>,
    dn: DirichletNeumann,
    /// `phi_k` at the grid nodes, one column per coefficient of degree `<= L`.
    basis_table: DMatrix<f64>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model").field("params", &self.params).field("disc", &self.disc).finish()
    }
}

impl Model {
    pub fn new(params: PhysicalParams, disc: Discretization) -> Result<Self> {
        PhysicalParams::new(params.sigma0)?;
        disc.validate()?;
        let grid = QuadGrid::for_degree(disc.grid_degree())?;
        let dn = DirichletNeumann::new(disc.dn)?;
        let k = n_coeffs(disc.l_max);
        let mut basis_table = DMatrix::zeros(grid.len(), k);
        for c in 0..k {
            let mut e = SphCoeffs::zeros(disc.l_max);
            e.as_mut_slice()[c] = 1.0;
            basis_table.set_column(c, &DVector::from_vec(grid.synthesize(&e)));
        }
        Ok(Self { params, disc, grid, dn, basis_table })
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn sigma0(&self) -> f64 {
        self.params.sigma0
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn l_max(&self) -> usize {
        self.disc.l_max
    }

    pub fn grid(&self) -> &Arc<QuadGrid> {
        &self.grid
    }

    pub fn dirichlet_neumann(&self) -> &DirichletNeumann {
        &self.dn
    }

    fn check_state(&self, u: &State) -> Result<()> {
        if u.l_max() != self.disc.l_max {
            return Err(Error::InvalidArgument(format!(
                "state has degree {} but the model uses {}",
                u.l_max(),
                self.disc.l_max
            )));
        }
        if !u.is_finite() {
            return Err(Error::NonFinite("state coefficients".into()));
        }
        Ok(())
    }

    /// Geometry and harmonic extension operator for the surface `1 + eta`.
    pub fn surface(&self, eta: &SphCoeffs) -> Result<Surface<'_>> {
        if eta.l_max() != self.disc.l_max {
            return Err(Error::InvalidArgument("surface degree does not match the model".into()));
        }
        let geometry = SurfaceGeometry::new(&self.grid, eta)?;
        let extension = self.dn.prepare(eta)?;
        Ok(Surface { model: self, eta: eta.clone(), geometry, extension })
    }

    pub fn nodal_fields(&self, u: &State) -> Result<NodalFields> {
        self.check_state(u)?;
        self.surface(&u.eta)?.nodal_fields(&u.beta)
    }

    pub fn field_x1(&self, u: &State) -> Result<SphCoeffs> {
        let f = self.nodal_fields(u)?;
        Ok(self.grid.analyze(&f.x1, self.disc.l_max))
    }

    pub fn field_x2(&self, u: &State) -> Result<SphCoeffs> {
        let f = self.nodal_fields(u)?;
        Ok(self.grid.analyze(&f.x2, self.disc.l_max))
    }

    /// Kinetic plus capillary energy.
    pub fn hamiltonian(&self, u: &State) -> Result<f64> {
        Ok(self.nodal_fields(u)?.hamiltonian(&self.grid, self.sigma0()))
    }

    /// `H - 2 sigma0 V`.
    pub fn hamiltonian_sigma0(&self, u: &State) -> Result<f64> {
        let f = self.nodal_fields(u)?;
        Ok(f.hamiltonian(&self.grid, self.sigma0()) - 2.0 * self.sigma0() * f.volume(&self.grid))
    }

    pub fn invariants(&self, u: &State) -> Result<Invariants> {
        let f = self.nodal_fields(u)?;
        Ok(f.invariants(&self.grid, self.sigma0()))
    }

    /// `F(omega, u)` projected to degree `L`.
    pub fn grad_operator(&self, omega: f64, u: &State) -> Result<State> {
        self.check_state(u)?;
        self.surface(&u.eta)?.grad_operator(omega, &u.beta)
    }

    /// `<F(omega, u), (0, 1)>` and `<F(omega, u), (x3, 0) - ((d3 eta), (d3 beta)) / (1 + eta)>`,
    /// both from the pointwise values of `F`.
    pub fn check_orthogonality(&self, omega: f64, u: &State) -> Result<(f64, f64)> {
        Ok(self.orthogonality_residuals(omega, &self.nodal_fields(u)?))
    }

    pub fn orthogonality_residuals(&self, omega: f64, f: &NodalFields) -> (f64, f64) {
        let (f1, f2) = f.grad_operator(omega);
        let g = &self.grid;
        let mut r1 = 0.0;
        let mut r2 = 0.0;
        for (k, x) in g.nodes().iter().enumerate() {
            let w = g.weights()[k];
            let r = 1.0 + f.height[k];
            r1 += w * f2[k];
            r2 += w * (f1[k] * (x[2] - f.grad_height[k][2] / r) - f2[k] * f.grad_beta[k][2] / r);
        }
        (r1, r2)
    }

    /// Pointwise `L^2` gradients `(d_h A, d_psi A)` of a functional.
    pub fn functional_gradient(&self, a: Functional, f: &NodalFields) -> (Vec<f64>, Vec<f64>) {
        let n = f.height.len();
        let s0 = self.sigma0();
        let mut gh = vec![0.0; n];
        let mut gp = vec![0.0; n];
        for k in 0..n {
            let r = 1.0 + f.height[k];
            let r2 = r * r;
            let x = self.grid.nodes()[k];
            match a {
                Functional::Hamiltonian => {
                    gh[k] = -r2 * f.x2[k];
                    gp[k] = r2 * f.x1[k];
                }
                Functional::HamiltonianSigma0 => {
                    gh[k] = -r2 * (f.x2[k] + 2.0 * s0);
                    gp[k] = r2 * f.x1[k];
                }
                Functional::Volume => {
                    gh[k] = r2;
                }
                Functional::AngularMomentum => {
                    gh[k] = -r2 * f.rot_beta[k];
                    gp[k] = r2 * f.rot_height[k];
                }
                Functional::Barycenter(i) => {
                    gh[k] = r * f.grad_beta[k][i];
                    gp[k] = x[i] * r2 - r * f.grad_height[k][i];
                }
            }
        }
        (gh, gp)
    }

    /// `{A, B} = <d_h A, (1+h)^-2 d_psi B> - <d_psi A, (1+h)^-2 d_h B>`.
    pub fn poisson_bracket(&self, a: Functional, b: Functional, u: &State) -> Result<f64> {
        for f in [a, b] {
            if let Functional::Barycenter(i) = f {
                if i > 2 {
                    return Err(Error::InvalidArgument(format!("barycenter component {i} out of range")));
                }
            }
        }
        let f = self.nodal_fields(u)?;
        let (ah, ap) = self.functional_gradient(a, &f);
        let (bh, bp) = self.functional_gradient(b, &f);
        let g = &self.grid;
        Ok((0..g.len())
            .map(|k| {
                let r2 = (1.0 + f.height[k]).powi(2);
                g.weights()[k] * (ah[k] * bp[k] - ap[k] * bh[k]) / r2
            })
            .sum())
    }

    /// Weighted mass matrix `P_L (1 + eta)^2 P_L` in the coefficient basis.
    pub fn mass_matrix(&self, height: &[f64]) -> DMatrix<f64> {
        let mut weighted = self.basis_table.clone();
        for (q, h) in height.iter().enumerate() {
            let w = self.grid.weights()[q] * (1.0 + h).powi(2);
            weighted.row_mut(q).scale_mut(w);
        }
        self.basis_table.tr_mul(&weighted)
    }

    /// Time derivative of the Galerkin system
    /// `P_L[(1+eta)^2 d_t eta] = P_L[d_psi H]`, `P_L[(1+eta)^2 d_t beta] = -P_L[d_h H_sigma0]`.
    pub fn vector_field(&self, u: &State) -> Result<State> {
        Ok(self.field_and_invariants(u)?.0)
    }

    /// Vector field and invariants at `u` from a single surface solve.
    pub fn field_and_invariants(&self, u: &State) -> Result<(State, Invariants)> {
        self.check_state(u)?;
        let surface = self.surface(&u.eta)?;
        let fields = surface.nodal_fields(&u.beta)?;
        let (f1, f2) = fields.grad_operator(0.0);
        let l = self.disc.l_max;
        let (f_eta, f_beta) = (self.grid.analyze(&f1, l), self.grid.analyze(&f2, l));
        let mass = self.mass_matrix(&surface.geometry.height);
        let chol = Cholesky::new(mass).ok_or_else(|| Error::Domain("mass matrix is not positive definite".into()))?;
        let eta_dot = chol.solve(&DVector::from_column_slice(f_beta.as_slice()));
        let beta_dot = -chol.solve(&DVector::from_column_slice(f_eta.as_slice()));
        let field = State::new(
            SphCoeffs::from_vec(l, eta_dot.as_slice().to_vec())?,
            SphCoeffs::from_vec(l, beta_dot.as_slice().to_vec())?,
        )?;
        Ok((field, fields.invariants(&self.grid, self.sigma0())))
    }
}

/// Surface-dependent data shared by every potential on the same `eta`.
pub struct Surface<'a> {
    model: &'a Model,
    eta: SphCoeffs,
    pub geometry: SurfaceGeometry,
    extension: HarmonicExtension<'a>,
}

impl Surface<'_> {
    pub fn eta(&self) -> &SphCoeffs {
        &self.eta
    }

    pub fn nodal_fields(&self, beta: &SphCoeffs) -> Result<NodalFields> {
        let m = self.model;
        let g = &m.grid;
        let geo = &self.geometry;
        let (dn, report) =
            self.extension.normal_derivative(beta, g, &geo.height, &geo.gradient, &geo.metric)?;
        let (beta_values, grad_beta) = g.synthesize_with_gradient(beta);
        let rot_height = g.synthesize(&self.eta.rotation_generator());
        let rot_beta = g.synthesize(&beta.rotation_generator());
        let s0 = m.sigma0();
        let n = g.len();
        let mut x1 = vec![0.0; n];
        let mut x2 = vec![0.0; n];
        for k in 0..n {
            let r = 1.0 + geo.height[k];
            let j = geo.metric[k];
            let gb = grad_beta[k];
            x1[k] = j / r * dn[k];
            let t = dn[k] + dot3(&gb, &geo.gradient[k]) / (r * j);
            x2[k] = 0.5 * t * t - dot3(&gb, &gb) / (2.0 * r * r) - s0 * geo.mean_curvature[k];
        }
        if x1.iter().chain(&x2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector fields".into()));
        }
        Ok(NodalFields {
            height: geo.height.clone(),
            grad_height: geo.gradient.clone(),
            metric: geo.metric.clone(),
            beta: beta_values,
            grad_beta,
            rot_height,
            rot_beta,
            dirichlet_neumann: dn,
            x1,
            x2,
            sigma0: s0,
            report,
        })
    }

    pub fn grad_operator(&self, omega: f64, beta: &SphCoeffs) -> Result<State> {
        let f = self.nodal_fields(beta)?;
        let (f1, f2) = f.grad_operator(omega);
        let g = &self.model.grid;
        let l = self.model.disc.l_max;
        State::new(g.analyze(&f1, l), g.analyze(&f2, l))
    }
}

/// Pointwise fields on the evaluation grid.
#[derive(Clone, Debug)]
pub struct NodalFields {
    pub height: Vec<f64>,
    pub grad_height: Vec<Vec3>,
    pub metric: Vec<f64>,
    pub beta: Vec<f64>,
    pub grad_beta: Vec<Vec3>,
    /// Rotation generator applied to `eta` and `beta`.
    pub rot_height: Vec<f64>,
    pub rot_beta: Vec<f64>,
    pub dirichlet_neumann: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub sigma0: f64,
    pub report: DnReport,
}

impl NodalFields {
    /// Pointwise `F1 = -(1+h)^2 (X2 + 2 sigma0 - omega M beta)` and
    /// `F2 = (1+h)^2 (X1 - omega M eta)`.
    pub fn grad_operator(&self, omega: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.height.len();
        let mut f1 = vec![0.0; n];
        let mut f2 = vec![0.0; n];
        for k in 0..n {
            let r2 = (1.0 + self.height[k]).powi(2);
            f1[k] = -r2 * (self.x2[k] + 2.0 * self.sigma0 - omega * self.rot_beta[k]);
            f2[k] = r2 * (self.x1[k] - omega * self.rot_height[k]);
        }
        (f1, f2)
    }

    pub fn hamiltonian(&self, grid: &QuadGrid, sigma0: f64) -> f64 {
        (0..self.height.len())
            .map(|k| {
                let area = (1.0 + self.height[k]) * self.metric[k];
                grid.weights()[k] * area * (0.5 * self.beta[k] * self.dirichlet_neumann[k] + sigma0)
            })
            .sum()
    }

    pub fn kinetic_energy(&self, grid: &QuadGrid) -> f64 {
        (0..self.height.len())
            .map(|k| {
                let area = (1.0 + self.height[k]) * self.metric[k];
                grid.weights()[k] * area * 0.5 * self.beta[k] * self.dirichlet_neumann[k]
            })
            .sum()
    }

    pub fn volume(&self, grid: &QuadGrid) -> f64 {
        grid.integrate(&self.height.iter().map(|h| (1.0 + h).powi(3)).collect::<Vec<_>>()) / 3.0
    }

    pub fn angular_momentum(&self, grid: &QuadGrid) -> f64 {
        (0..self.height.len())
            .map(|k| grid.weights()[k] * (1.0 + self.height[k]).powi(2) * self.rot_height[k] * self.beta[k])
            .sum()
    }

    pub fn barycenter(&self, grid: &QuadGrid) -> Vec3 {
        let mut out = [0.0; 3];
        for k in 0..self.height.len() {
            let f = 0.5 * grid.weights()[k] * (1.0 + self.height[k]).powi(2);
            for d in 0..3 {
                out[d] += f * self.grad_beta[k][d];
            }
        }
        out
    }

    pub fn invariants(&self, grid: &QuadGrid, sigma0: f64) -> Invariants {
        let hamiltonian = self.hamiltonian(grid, sigma0);
        let volume = self.volume(grid);
        Invariants {
            hamiltonian,
            hamiltonian_sigma0: hamiltonian - 2.0 * sigma0 * volume,
            volume,
            angular_momentum: self.angular_momentum(grid),
            barycenter: self.barycenter(grid),
        }
    }
}

#[cfg(test)]
mod tests;
