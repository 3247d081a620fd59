use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported truncation degree for states.
pub const L_MAX_CAP: usize = 32;

/// Flat position of `(l, m)`: degree-major, order from `-l` to `l`.
#[inline]
pub fn index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m) as usize
}

#[inline]
pub fn n_coeffs(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Inverse of [`index`].
pub fn degree_order(k: usize) -> (usize, i64) {
    let l = (k as f64).sqrt().floor() as usize;
    let l = if (l + 1) * (l + 1) <= k { l + 1 } else if l * l > k { l - 1 } else { l };
    (l, k as i64 - (l * l + l) as i64)
}

/// Iterator over all `(l, m)` pairs up to `l_max` in storage order.
pub fn pairs(l_max: usize) -> impl Iterator<Item = (usize, i64)> {
    (0..=l_max).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m)))
}

/// Coefficients of a real function on the unit sphere in the orthonormal real
/// harmonic basis, truncated at degree `l_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphCoeffs {
    l_max: usize,
    data: Vec<f64>,
}

impl SphCoeffs {
    pub fn zeros(l_max: usize) -> Self {
        Self { l_max, data: vec![0.0; n_coeffs(l_max)] }
    }

    pub fn from_vec(l_max: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_coeffs(l_max) {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients for degree {l_max}, got {}",
                n_coeffs(l_max),
                data.len()
            )));
        }
        Ok(Self { l_max, data })
    }

    /// Single basis function `phi_{l,m}`.
    pub fn basis(l_max: usize, l: usize, m: i64) -> Self {
        let mut c = Self::zeros(l_max);
        c.set(l, m, 1.0);
        c
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, l: usize, m: i64) -> f64 {
        if l > self.l_max {
            return 0.0;
        }
        self.data[index(l, m)]
    }

    #[inline]
    pub fn set(&mut self, l: usize, m: i64, value: f64) {
        self.data[index(l, m)] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Zero-padded or truncated copy at another degree.
    pub fn resized(&self, l_max: usize) -> Self {
        let mut out = Self::zeros(l_max);
        let n = n_coeffs(l_max.min(self.l_max));
        out.data[..n].copy_from_slice(&self.data[..n]);
        out
    }

    /// L2 inner product on the sphere (the basis is orthonormal).
    pub fn dot(&self, other: &Self) -> f64 {
        let n = self.data.len().min(other.data.len());
        self.data[..n].iter().zip(&other.data[..n]).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { l_max: self.l_max, data: self.data.iter().map(|v| v * factor).collect() }
    }

    /// `self += factor * other`, with other truncated or padded to this degree.
    pub fn axpy(&mut self, factor: f64, other: &Self) {
        let n = self.data.len().min(other.data.len());
        for (a, b) in self.data[..n].iter_mut().zip(&other.data[..n]) {
            *a += factor * b;
        }
    }

    fn map_degree(&self, f: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for l in 0..=self.l_max {
            let factor = f(l);
            for m in -(l as i64)..=l as i64 {
                out.data[index(l, m)] *= factor;
            }
        }
        out
    }

    /// Laplace-Beltrami operator: multiplies degree `l` by `-l(l+1)`.
    pub fn laplace_beltrami(&self) -> Self {
        self.map_degree(|l| -((l * (l + 1)) as f64))
    }

    /// `-(2 + Laplacian)`: multiplies degree `l` by `(l+2)(l-1)`.
    pub fn curvature_multiplier(&self) -> Self {
        self.map_degree(|l| ((l + 2) as f64) * (l as f64 - 1.0))
    }

    /// Dirichlet-Neumann operator of the unit ball: multiplies degree `l` by `l`.
    pub fn unit_ball_dirichlet_neumann(&self) -> Self {
        self.map_degree(|l| l as f64)
    }

    /// Rotation generator about the vertical axis, `x1 d/dx2 - x2 d/dx1`.
    /// It maps `phi_{l,m}` to `-m phi_{l,-m}`.
    pub fn rotation_generator(&self) -> Self {
        let mut out = Self::zeros(self.l_max);
        for (l, m) in pairs(self.l_max) {
            out.data[index(l, m)] = m as f64 * self.data[index(l, -m)];
        }
        out
    }

    /// Rotation about the vertical axis: `f -> f(R(theta) x)`.
    pub fn rotated(&self, theta: f64) -> Self {
        let mut out = self.clone();
        for l in 0..=self.l_max {
            for m in 1..=l as i64 {
                let (s, c) = (m as f64 * theta).sin_cos();
                let a = self.data[index(l, m)];
                let b = self.data[index(l, -m)];
                out.data[index(l, m)] = c * a + s * b;
                out.data[index(l, -m)] = -s * a + c * b;
            }
        }
        out
    }

    /// Sobolev norm with weights `1` at degree zero and `l^(2s)` otherwise.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let mut total = self.data[0] * self.data[0];
        for l in 1..=self.l_max {
            let w = (l as f64).powf(2.0 * s);
            for m in -(l as i64)..=l as i64 {
                let v = self.data[index(l, m)];
                total += w * v * v;
            }
        }
        total.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Add for &SphCoeffs {
    type Output = SphCoeffs;
    fn add(self, rhs: &SphCoeffs) -> SphCoeffs {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SphCoeffs {
    type Output = SphCoeffs;
    fn sub(self, rhs: &SphCoeffs) -> SphCoeffs {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl AddAssign<&SphCoeffs> for SphCoeffs {
    fn add_assign(&mut self, rhs: &SphCoeffs) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&SphCoeffs> for SphCoeffs {
    fn sub_assign(&mut self, rhs: &SphCoeffs) {
        self.axpy(-1.0, rhs);
    }
}

impl Mul<f64> for &SphCoeffs {
    type Output = SphCoeffs;
    fn mul(self, rhs: f64) -> SphCoeffs {
        self.scaled(rhs)
    }
}

impl Neg for &SphCoeffs {
    type Output = SphCoeffs;
    fn neg(self) -> SphCoeffs {
        self.scaled(-1.0)
    }
}

#[derive(Serialize, Deserialize)]
struct SphCoeffsJson {
    #[serde(rename = "L_max")]
    l_max: usize,
    coeffs: Vec<(usize, i64, f64)>,
}

impl Serialize for SphCoeffs {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let coeffs = pairs(self.l_max).map(|(l, m)| (l, m, self.get(l, m))).collect();
        SphCoeffsJson { l_max: self.l_max, coeffs }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SphCoeffs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = SphCoeffsJson::deserialize(deserializer)?;
        if raw.l_max > L_MAX_CAP {
            return Err(D::Error::custom(format!("L_max {} exceeds cap {L_MAX_CAP}", raw.l_max)));
        }
        let mut out = SphCoeffs::zeros(raw.l_max);
        let mut seen = vec![false; out.len()];
        for (l, m, v) in raw.coeffs {
            if l > raw.l_max || m.unsigned_abs() as usize > l {
                return Err(D::Error::custom(format!("entry ({l}, {m}) outside degree {}", raw.l_max)));
            }
            let k = index(l, m);
            if seen[k] {
                return Err(D::Error::custom(format!("duplicate entry ({l}, {m})")));
            }
            if !v.is_finite() {
                return Err(D::Error::custom(format!("non-finite entry ({l}, {m})")));
            }
            seen[k] = true;
            out.data[k] = v;
        }
        Ok(out)
    }
}
