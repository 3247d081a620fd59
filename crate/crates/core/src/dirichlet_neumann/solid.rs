//! Solid harmonics `r^l phi_{l,m}(x/r)` as explicit trivariate polynomials.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sphere::{index, n_coeffs, pairs, Vec3};

/// Exponents `(a, b, c)` of `x^a y^b z^c` mapped to coefficients.
pub type Monomials = BTreeMap<(u32, u32, u32), f64>;

#[derive(Clone, Debug)]
pub struct SolidHarmonicBasis {
    l_max: usize,
    polys: Vec<Vec<((u32, u32, u32), f64)>>,
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Coefficients in `z` of the polynomial factor `Q_lm`, built with the same
/// three-term recurrence as the numeric tables.
fn q_polynomials(l_max: usize) -> Vec<Vec<Vec<f64>>> {
    use std::f64::consts::PI;
    // q[m][l - m] = coefficient vector
    let mut out = Vec::with_capacity(l_max + 1);
    let mut diag = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            diag *= ((2.0 * m as f64 + 1.0) / (2.0 * m as f64)).sqrt();
        }
        let mut col: Vec<Vec<f64>> = vec![vec![diag]];
        if m < l_max {
            col.push(vec![0.0, (2.0 * m as f64 + 3.0).sqrt() * diag]);
        }
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let p1 = &col[l - 1 - m];
            let p2 = &col[l - 2 - m];
            let mut next = vec![0.0; l - m + 1];
            for (k, v) in p1.iter().enumerate() {
                next[k + 1] += a * v;
            }
            for (k, v) in p2.iter().enumerate() {
                next[k] -= a * b * v;
            }
            col.push(next);
        }
        if m > 0 {
            for p in col.iter_mut() {
                p.iter_mut().for_each(|v| *v *= std::f64::consts::SQRT_2);
            }
        }
        out.push(col);
    }
    out
}

fn add_term(poly: &mut Monomials, e: (u32, u32, u32), c: f64) {
    if c != 0.0 {
        *poly.entry(e).or_insert(0.0) += c;
    }
}

/// `(x^2 + y^2 + z^2)^j` expanded.
fn radius_power(j: u32) -> Monomials {
    let mut out = Monomials::new();
    for a in 0..=j {
        for b in 0..=(j - a) {
            let c = j - a - b;
            let multinomial = binomial(j, a) * binomial(j - a, b);
            add_term(&mut out, (2 * a, 2 * b, 2 * c), multinomial);
        }
    }
    out
}

fn multiply(p: &Monomials, q: &Monomials) -> Monomials {
    let mut out = Monomials::new();
    for (ea, ca) in p {
        for (eb, cb) in q {
            add_term(&mut out, (ea.0 + eb.0, ea.1 + eb.1, ea.2 + eb.2), ca * cb);
        }
    }
    out
}

/// Laplacian of a polynomial.
pub fn laplacian(p: &Monomials) -> Monomials {
    let mut out = Monomials::new();
    for (&(a, b, c), &v) in p {
        if a >= 2 {
            add_term(&mut out, (a - 2, b, c), v * (a * (a - 1)) as f64);
        }
        if b >= 2 {
            add_term(&mut out, (a, b - 2, c), v * (b * (b - 1)) as f64);
        }
        if c >= 2 {
            add_term(&mut out, (a, b, c - 2), v * (c * (c - 1)) as f64);
        }
    }
    out
}

impl SolidHarmonicBasis {
    /// Builds the tables and checks that every polynomial is harmonic.
    pub fn new(l_max: usize) -> Result<Self> {
        let qpolys = q_polynomials(l_max);
        let mut polys = vec![Vec::new(); n_coeffs(l_max)];
        for (l, m) in pairs(l_max) {
            let am = m.unsigned_abs() as usize;
            let qz = &qpolys[am][l - am];
            // r^(l-m) Q(z/r) = sum_k q_k z^k r^(l-m-k), only even powers of r occur
            let mut radial = Monomials::new();
            for (k, &qk) in qz.iter().enumerate() {
                if qk == 0.0 {
                    continue;
                }
                let rest = l - am - k;
                if rest % 2 != 0 {
                    continue;
                }
                let rp = radius_power((rest / 2) as u32);
                for (e, c) in rp {
                    add_term(&mut radial, (e.0, e.1, e.2 + k as u32), c * qk);
                }
            }
            // Re or Im of (x + i y)^|m|
            let mut angular = Monomials::new();
            let amu = am as u32;
            for t in 0..=amu {
                let coef = binomial(amu, t);
                let (take, sign) = match (m >= 0, t % 4) {
                    (true, 0) => (true, 1.0),
                    (true, 2) => (true, -1.0),
                    (false, 1) => (true, 1.0),
                    (false, 3) => (true, -1.0),
                    _ => (false, 0.0),
                };
                if take {
                    add_term(&mut angular, (amu - t, t, 0), sign * coef);
                }
            }
            let poly = multiply(&radial, &angular);
            polys[index(l, m)] = poly.into_iter().filter(|(_, c)| *c != 0.0).collect();
        }
        let basis = Self { l_max, polys };
        let defect = basis.harmonic_defect();
        if defect > 1e-10 {
            return Err(Error::ExtensionRejected(format!("solid harmonic table not harmonic: {defect:.3e}")));
        }
        Ok(basis)
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn monomials(&self, l: usize, m: i64) -> &[((u32, u32, u32), f64)] {
        &self.polys[index(l, m)]
    }

    /// Largest Laplacian coefficient relative to the largest table coefficient.
    pub fn harmonic_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for poly in &self.polys {
            let p: Monomials = poly.iter().cloned().collect();
            let scale = p.values().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let lap = laplacian(&p);
            let d = lap.values().fold(0.0f64, |a, v| a.max(v.abs()));
            worst = worst.max(d / scale);
        }
        worst
    }

    fn powers(&self, y: Vec3) -> [Vec<f64>; 3] {
        let mut out = [vec![1.0; self.l_max + 1], vec![1.0; self.l_max + 1], vec![1.0; self.l_max + 1]];
        for d in 0..3 {
            for k in 1..=self.l_max {
                out[d][k] = out[d][k - 1] * y[d];
            }
        }
        out
    }

    pub fn value(&self, l: usize, m: i64, y: Vec3) -> f64 {
        let p = self.powers(y);
        self.polys[index(l, m)]
            .iter()
            .map(|&((a, b, c), v)| v * p[0][a as usize] * p[1][b as usize] * p[2][c as usize])
            .sum()
    }

    /// Gradient by termwise differentiation of the monomials.
    pub fn gradient(&self, l: usize, m: i64, y: Vec3) -> Vec3 {
        let p = self.powers(y);
        let mut g = [0.0; 3];
        for &((a, b, c), v) in &self.polys[index(l, m)] {
            let (a, b, c) = (a as usize, b as usize, c as usize);
            if a > 0 {
                g[0] += v * a as f64 * p[0][a - 1] * p[1][b] * p[2][c];
            }
            if b > 0 {
                g[1] += v * b as f64 * p[0][a] * p[1][b - 1] * p[2][c];
            }
            if c > 0 {
                g[2] += v * c as f64 * p[0][a] * p[1][b] * p[2][c - 1];
            }
        }
        g
    }
}
