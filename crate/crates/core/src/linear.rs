//! Linearization at the round drop: the bifurcation frequency, the resonance
//! set, the block structure of the linear operator, its kernel and the
//! projections onto kernel and range.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::sphere::{index, pairs};

fn check_seed(l0: usize, m0: i64) -> Result<()> {
    if l0 < 2 {
        return Err(Error::InvalidArgument(format!("seed degree {l0} must be at least 2")));
    }
    if m0 == 0 {
        return Err(Error::InvalidArgument("seed order must be nonzero".into()));
    }
    if m0.unsigned_abs() as usize > l0 {
        return Err(Error::InvalidArgument(format!("|m0| = {} exceeds l0 = {l0}", m0.abs())));
    }
    Ok(())
}

/// `(l + 2)(l - 1)`, the eigenvalue of `-(2 + Laplacian)` on degree `l`.
pub fn curvature_eigenvalue(l: usize) -> f64 {
    (l as f64 + 2.0) * (l as f64 - 1.0)
}

/// Angular velocity at which the mode `(l0, m0)` becomes stationary:
/// `sqrt(sigma0 (l0+2)(l0-1) l0) / m0`.
pub fn bifurcation_frequency(l0: usize, m0: i64, sigma0: f64) -> Result<f64> {
    check_seed(l0, m0)?;
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma0 = {sigma0} must be positive")));
    }
    Ok(sigma0.sqrt() * (curvature_eigenvalue(l0) * l0 as f64).sqrt() / m0 as f64)
}

/// Pairs `(l, m)` with `(l+2)(l-1) l m0^2 = (l0+2)(l0-1) l0 m^2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub l0: usize,
    pub m0: i64,
    /// `(l0+2)(l0-1) l0`; the resonance constant is this over `m0^2`.
    pub numerator: u64,
    pub denominator: u64,
    /// Largest degree that can satisfy the relation with `|m| <= l`.
    pub l_bound: usize,
    /// All pairs, sorted by degree then order.
    pub pairs: Vec<(usize, i64)>,
    pub degenerate: Vec<(usize, i64)>,
    pub nondegenerate: Vec<(usize, i64)>,
    /// Number of nondegenerate pairs with `m > 0`.
    pub n: usize,
}

impl ResonanceSet {
    pub fn contains(&self, l: usize, m: i64) -> bool {
        self.pairs.contains(&(l, m))
    }

    pub fn constant(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }
}

fn resonance_lhs(l: usize) -> u64 {
    // (l+2)(l-1)l, which vanishes at l = 0 and l = 1
    if l < 1 {
        return 0;
    }
    (l as u64 + 2) * (l as u64 - 1) * l as u64
}

/// Exact enumeration of the resonance set.
pub fn resonance_set(l0: usize, m0: i64) -> Result<ResonanceSet> {
    check_seed(l0, m0)?;
    let numerator = resonance_lhs(l0);
    let denominator = (m0 as i64 * m0 as i64) as u64;
    // (l+2)(l-1) <= c0 l, cleared of the denominator; (l+2)(l-1)/l is increasing for l >= 1
    let mut l_bound = 1;
    while (l_bound as u64 + 3) * (l_bound as u64) * denominator <= numerator * (l_bound as u64 + 1) {
        l_bound += 1;
    }
    let mut found = Vec::new();
    for l in 0..=l_bound {
        for m in -(l as i64)..=l as i64 {
            let m2 = (m as i64 * m as i64) as u64;
            if resonance_lhs(l) * denominator == numerator * m2 {
                found.push((l, m));
            }
        }
    }
    let (degenerate, nondegenerate): (Vec<_>, Vec<_>) = found.iter().copied().partition(|(_, m)| *m == 0);
    let n = nondegenerate.iter().filter(|(_, m)| *m > 0).count();
    Ok(ResonanceSet { l0, m0, numerator, denominator, l_bound, pairs: found, degenerate, nondegenerate, n })
}

/// Apply the linearized operator
/// `(eta, beta) -> (sigma0 (l+2)(l-1) eta + omega M beta, -omega M eta + l beta)`.
pub fn linear_apply(omega: f64, sigma0: f64, u: &State) -> State {
    let mut eta = u.eta.curvature_multiplier().scaled(sigma0);
    eta.axpy(omega, &u.beta.rotation_generator());
    let mut beta = u.beta.unit_ball_dirichlet_neumann();
    beta.axpy(-omega, &u.eta.rotation_generator());
    State { eta, beta }
}

/// Coefficient indices coupled by the block of `(l, |m|)`, in the order
/// `eta_{l,m}, eta_{l,-m}, beta_{l,m}, beta_{l,-m}` (two entries when `m = 0`).
pub fn block_unknowns(l: usize, m: usize) -> Vec<(bool, usize, i64)> {
    let m = m as i64;
    if m == 0 {
        vec![(true, l, 0), (false, l, 0)]
    } else {
        vec![(true, l, m), (true, l, -m), (false, l, m), (false, l, -m)]
    }
}

/// Matrix of the linearized operator on the unknowns of [`block_unknowns`].
pub fn linear_block(omega: f64, sigma0: f64, l: usize, m: usize) -> Result<DMatrix<f64>> {
    if m > l {
        return Err(Error::InvalidArgument(format!("order {m} exceeds degree {l}")));
    }
    let c = sigma0 * curvature_eigenvalue(l);
    let lf = l as f64;
    if m == 0 {
        return Ok(DMatrix::from_row_slice(2, 2, &[c, 0.0, 0.0, lf]));
    }
    let w = omega * m as f64;
    #[rustfmt::skip]
    let rows = [
        c,   0.0, 0.0, w,
        0.0, c,   -w,  0.0,
        0.0, -w,  lf,  0.0,
        w,   0.0, 0.0, lf,
    ];
    Ok(DMatrix::from_row_slice(4, 4, &rows))
}

/// Closed form of the block determinant: `sigma0 (l+2)(l-1) l` for `m = 0`,
/// `(sigma0 (l+2)(l-1) l - omega^2 m^2)^2` otherwise.
pub fn block_determinant(omega: f64, sigma0: f64, l: usize, m: usize) -> f64 {
    let d = sigma0 * curvature_eigenvalue(l) * l as f64;
    if m == 0 {
        d
    } else {
        let r = d - omega * omega * (m * m) as f64;
        r * r
    }
}

/// Unit null vector `(l phi_{l,m}, -omega0 m phi_{l,-m}) / sqrt(l^2 + omega0^2 m^2)`,
/// stored by its two nonzero coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelVector {
    pub l: usize,
    pub m: i64,
    pub eta: f64,
    pub beta: f64,
}

impl KernelVector {
    pub fn new(l: usize, m: i64, omega0: f64) -> Self {
        if l == 0 {
            return Self { l, m, eta: 0.0, beta: 1.0 };
        }
        let lf = l as f64;
        let wm = omega0 * m as f64;
        let norm = (lf * lf + wm * wm).sqrt();
        Self { l, m, eta: lf / norm, beta: -wm / norm }
    }

    fn eta_index(&self) -> usize {
        index(self.l, self.m)
    }

    fn beta_index(&self) -> usize {
        index(self.l, -self.m)
    }

    pub fn dot(&self, u: &State) -> f64 {
        self.eta * u.eta.as_slice()[self.eta_index()] + self.beta * u.beta.as_slice()[self.beta_index()]
    }

    fn add_to(&self, u: &mut State, factor: f64) {
        u.eta.as_mut_slice()[self.eta_index()] += factor * self.eta;
        u.beta.as_mut_slice()[self.beta_index()] += factor * self.beta;
    }

    pub fn to_state(&self, l_max: usize) -> State {
        let mut u = State::zeros(l_max);
        self.add_to(&mut u, 1.0);
        u
    }
}

/// Subspaces of the kernel/range splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Kernel of the linearized operator.
    V,
    /// Its orthogonal complement, which is also the range.
    W,
    /// Kernel directions from the nondegenerate pairs.
    ZN,
    /// Kernel directions of mass and vertical translation.
    ZD,
}

/// Resonance analysis for one seed at a fixed truncation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResonanceData {
    pub l0: usize,
    pub m0: i64,
    pub sigma0: f64,
    pub omega0: f64,
    pub c0: f64,
    pub set: ResonanceSet,
    pub l_max: usize,
    /// Kernel vectors of the degenerate pairs, then of the nondegenerate ones.
    pub degenerate_kernel: Vec<KernelVector>,
    pub nondegenerate_kernel: Vec<KernelVector>,
    /// Resonant pairs above the truncation degree.
    pub truncated: Vec<(usize, i64)>,
}

impl ResonanceData {
    pub fn new(l0: usize, m0: i64, sigma0: f64, l_max: usize) -> Result<Self> {
        let omega0 = bifurcation_frequency(l0, m0, sigma0)?;
        let set = resonance_set(l0, m0)?;
        if l_max < l0 {
            return Err(Error::InvalidArgument(format!("truncation {l_max} is below the seed degree {l0}")));
        }
        let kernel = |list: &[(usize, i64)]| -> Vec<KernelVector> {
            list.iter().filter(|(l, _)| *l <= l_max).map(|&(l, m)| KernelVector::new(l, m, omega0)).collect()
        };
        let truncated = set.pairs.iter().copied().filter(|(l, _)| *l > l_max).collect();
        Ok(Self {
            l0,
            m0,
            sigma0,
            omega0,
            c0: set.constant(),
            degenerate_kernel: kernel(&set.degenerate),
            nondegenerate_kernel: kernel(&set.nondegenerate),
            set,
            l_max,
            truncated,
        })
    }

    pub fn n(&self) -> usize {
        self.set.n
    }

    pub fn kernel(&self) -> impl Iterator<Item = &KernelVector> {
        self.degenerate_kernel.iter().chain(&self.nondegenerate_kernel)
    }

    pub fn kernel_basis(&self) -> Vec<State> {
        self.kernel().map(|v| v.to_state(self.l_max)).collect()
    }

    pub fn kernel_vector(&self, l: usize, m: i64) -> Result<State> {
        self.kernel()
            .find(|v| v.l == l && v.m == m)
            .map(|v| v.to_state(self.l_max))
            .ok_or_else(|| Error::Resonance(format!("({l}, {m}) is not a resolved resonant pair")))
    }

    fn check_degree(&self, u: &State) -> Result<()> {
        if u.l_max() != self.l_max {
            return Err(Error::InvalidArgument(format!(
                "state has degree {} but the resonance data uses {}",
                u.l_max(),
                self.l_max
            )));
        }
        Ok(())
    }

    fn vectors(&self, space: Space) -> &[KernelVector] {
        match space {
            Space::ZN => &self.nondegenerate_kernel,
            Space::ZD => &self.degenerate_kernel,
            Space::V | Space::W => unreachable!(),
        }
    }

    fn kernel_part(&self, u: &State, vectors: &[KernelVector]) -> State {
        let mut out = State::zeros(self.l_max);
        for v in vectors {
            v.add_to(&mut out, v.dot(u));
        }
        out
    }

    /// Orthogonal projection onto a subspace.
    pub fn project(&self, u: &State, space: Space) -> Result<State> {
        self.check_degree(u)?;
        Ok(match space {
            Space::V => {
                let mut out = self.kernel_part(u, &self.degenerate_kernel);
                let n = self.kernel_part(u, &self.nondegenerate_kernel);
                out.axpy(1.0, &n);
                out
            }
            Space::W => {
                let mut out = u.clone();
                for v in self.kernel() {
                    v.add_to(&mut out, -v.dot(u));
                }
                out
            }
            Space::ZN | Space::ZD => self.kernel_part(u, self.vectors(space)),
        })
    }

    /// Coordinates of `u` along the nondegenerate kernel vectors.
    pub fn nondegenerate_coordinates(&self, u: &State) -> Result<Vec<f64>> {
        self.check_degree(u)?;
        Ok(self.nondegenerate_kernel.iter().map(|v| v.dot(u)).collect())
    }

    pub fn from_nondegenerate_coordinates(&self, coords: &[f64]) -> Result<State> {
        if coords.len() != self.nondegenerate_kernel.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                self.nondegenerate_kernel.len(),
                coords.len()
            )));
        }
        let mut out = State::zeros(self.l_max);
        for (v, c) in self.nondegenerate_kernel.iter().zip(coords) {
            v.add_to(&mut out, *c);
        }
        Ok(out)
    }

    fn nondegenerate_support(&self, v: &State) -> Result<Vec<f64>> {
        let coords = self.nondegenerate_coordinates(v)?;
        let rest = v.sub(&self.from_nondegenerate_coordinates(&coords)?);
        if rest.norm() > 1e-12 * v.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "vector has a component of size {:.3e} outside the nondegenerate kernel",
                rest.norm()
            )));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::InvalidArgument("quadratic angular momentum needs omega0 > 0".into()));
        }
        Ok(coords)
    }

    /// `omega0 m^2 l / (l^2 + omega0^2 m^2)`, the angular momentum weight of a kernel vector.
    pub fn angular_weight(&self, v: &KernelVector) -> f64 {
        let (l, m) = (v.l as f64, v.m as f64);
        self.omega0 * m * m * l / (l * l + self.omega0 * self.omega0 * m * m)
    }

    /// `sqrt(l^2 + omega0^2 m^2) / sqrt(omega0 m^2 l)`.
    pub fn lambda(&self, v: &KernelVector) -> f64 {
        1.0 / self.angular_weight(v).sqrt()
    }

    /// The diagonal map rescaling nondegenerate coordinates so that the
    /// quadratic angular momentum becomes the squared norm.
    pub fn lambda_map(&self, v: &State) -> Result<State> {
        let coords = self.nondegenerate_support(v)?;
        let scaled: Vec<f64> =
            self.nondegenerate_kernel.iter().zip(&coords).map(|(k, c)| self.lambda(k) * c).collect();
        self.from_nondegenerate_coordinates(&scaled)
    }

    /// Quadratic part of the angular momentum on the kernel. Only the
    /// nondegenerate directions contribute.
    pub fn i0_quadratic(&self, v: &State) -> Result<f64> {
        self.check_degree(v)?;
        let rest = self.project(v, Space::W)?;
        if rest.norm() > 1e-12 * v.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "vector has a component of size {:.3e} outside the kernel",
                rest.norm()
            )));
        }
        let coords = self.nondegenerate_coordinates(v)?;
        Ok(self.nondegenerate_kernel.iter().zip(&coords).map(|(k, c)| self.angular_weight(k) * c * c).sum())
    }

    fn block_is_resonant(&self, l: usize, m: usize) -> Vec<&KernelVector> {
        self.kernel().filter(|v| v.l == l && v.m.unsigned_abs() as usize == m).collect()
    }

    /// Least singular value of the linearized operator at `omega0` restricted
    /// to the complement of the kernel, measured from the `W^s` norm
    /// (`eta` in `H^{s+3/2}`, `beta` in `H^{s+1}`) to the `R^s` norm
    /// (`H^{s-1/2}` and `H^s`).
    pub fn restricted_invertibility(&self, s: f64) -> Result<f64> {
        let weight = |l: usize, p: f64| if l == 0 { 1.0 } else { (l as f64).powf(p) };
        let mut least = f64::INFINITY;
        for l in 0..=self.l_max {
            for m in 0..=l {
                let unknowns = block_unknowns(l, m);
                let k = unknowns.len();
                let block = linear_block(self.omega0, self.sigma0, l, m)?;
                // orthonormal basis of the block minus its kernel vectors
                let kernel = self.block_is_resonant(l, m);
                let mut basis = DMatrix::<f64>::identity(k, k);
                if !kernel.is_empty() {
                    let mut kmat = DMatrix::<f64>::zeros(k, kernel.len());
                    for (c, v) in kernel.iter().enumerate() {
                        let u = v.to_state(self.l_max);
                        for (r, &(is_eta, l, m)) in unknowns.iter().enumerate() {
                            kmat[(r, c)] = if is_eta { u.eta.get(l, m) } else { u.beta.get(l, m) };
                        }
                    }
                    let mut augmented = DMatrix::zeros(k, k + kernel.len());
                    augmented.columns_mut(0, kernel.len()).copy_from(&kmat);
                    augmented.columns_mut(kernel.len(), k).fill_with_identity();
                    // the k x k orthogonal factor; columns after the kernel span its complement
                    let q = augmented.qr().q();
                    basis = q.columns(kernel.len(), k - kernel.len()).into_owned();
                }
                if basis.ncols() == 0 {
                    continue;
                }
                let d_in = DVector::from_iterator(
                    k,
                    unknowns.iter().map(|&(e, l, _)| if e { weight(l, s + 1.5) } else { weight(l, s + 1.0) }),
                );
                let d_out = DVector::from_iterator(
                    k,
                    unknowns.iter().map(|&(e, l, _)| if e { weight(l, s - 0.5) } else { weight(l, s) }),
                );
                let weighted_basis = DMatrix::from_diagonal(&d_in) * &basis;
                let orth = weighted_basis.qr().q();
                let op = DMatrix::from_diagonal(&d_out) * &block * DMatrix::from_diagonal(&d_in.map(|x| 1.0 / x)) * orth;
                let sv = op.singular_values();
                least = least.min(sv.min());
            }
        }
        Ok(least)
    }
}

/// Coefficient vector of a state restricted to the unknowns of one block.
pub fn block_coordinates(u: &State, l: usize, m: usize) -> DVector<f64> {
    let unknowns = block_unknowns(l, m);
    DVector::from_iterator(
        unknowns.len(),
        unknowns.iter().map(|&(e, l, m)| if e { u.eta.get(l, m) } else { u.beta.get(l, m) }),
    )
}

/// All `(l, m)` with `m >= 0`, one per block.
pub fn blocks(l_max: usize) -> impl Iterator<Item = (usize, usize)> {
    pairs(l_max).filter(|(_, m)| *m >= 0).map(|(l, m)| (l, m as usize))
}
