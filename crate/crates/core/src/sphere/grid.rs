use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use super::coeffs::{index, SphCoeffs};
use super::legendre::{gauss_legendre, q_second_derivative_table, q_table, tri, tri_len};
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Gauss-Legendre in `x3` times uniform longitudes. Ring tables of the
/// harmonic factors are cached up to `l_max`.
#[derive(Debug)]
pub struct QuadGrid {
    l_max: usize,
    n_lat: usize,
    n_lon: usize,
    mu: Vec<f64>,
    lat_weights: Vec<f64>,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    // per ring, triangular (l, m) layout
    q: Vec<f64>,
    dq: Vec<f64>,
    // per ring: rho^m for m = 0..=l_max
    rho_pow: Vec<f64>,
    // per longitude: cos(m phi), sin(m phi) for m = 0..=l_max
    cos_m: Vec<f64>,
    sin_m: Vec<f64>,
}

impl QuadGrid {
    /// Default resolution for degree `l_max`: `l_max + 2` latitudes and
    /// `2 l_max + 2` longitudes.
    pub fn for_degree(l_max: usize) -> Result<Arc<Self>> {
        Self::new(l_max, l_max + 2, 2 * l_max + 2)
    }

    pub fn new(l_max: usize, n_lat: usize, n_lon: usize) -> Result<Arc<Self>> {
        if n_lat < l_max + 1 || n_lon < 2 * l_max + 1 {
            return Err(Error::GridTooCoarse {
                degree: l_max,
                detail: format!("need at least {} x {} nodes, got {n_lat} x {n_lon}", l_max + 1, 2 * l_max + 1),
            });
        }
        convention_self_test()?;
        let (mu, gw) = gauss_legendre(n_lat);
        let lon_w = 2.0 * PI / n_lon as f64;
        let nt = tri_len(l_max);
        let mut q = Vec::with_capacity(n_lat * nt);
        let mut dq = Vec::with_capacity(n_lat * nt);
        let mut rho_pow = Vec::with_capacity(n_lat * (l_max + 1));
        for &z in &mu {
            let (qi, dqi) = q_table(l_max, z);
            q.extend_from_slice(&qi);
            dq.extend_from_slice(&dqi);
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let mut p = 1.0;
            for _ in 0..=l_max {
                rho_pow.push(p);
                p *= rho;
            }
        }
        let mut cos_m = Vec::with_capacity(n_lon * (l_max + 1));
        let mut sin_m = Vec::with_capacity(n_lon * (l_max + 1));
        for j in 0..n_lon {
            let phi = lon_w * j as f64;
            for m in 0..=l_max {
                let (s, c) = (m as f64 * phi).sin_cos();
                cos_m.push(c);
                sin_m.push(s);
            }
        }
        let mut nodes = Vec::with_capacity(n_lat * n_lon);
        let mut weights = Vec::with_capacity(n_lat * n_lon);
        for (i, &z) in mu.iter().enumerate() {
            let rho = (1.0 - z * z).max(0.0).sqrt();
            for j in 0..n_lon {
                let (s, c) = (lon_w * j as f64).sin_cos();
                nodes.push([rho * c, rho * s, z]);
                weights.push(gw[i] * lon_w);
            }
        }
        Ok(Arc::new(Self {
            l_max,
            n_lat,
            n_lon,
            mu,
            lat_weights: gw,
            nodes,
            weights,
            q,
            dq,
            rho_pow,
            cos_m,
            sin_m,
        }))
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn latitudes(&self) -> &[f64] {
        &self.mu
    }

    pub fn latitude_weights(&self) -> &[f64] {
        &self.lat_weights
    }

    /// Highest degree whose pairwise products this grid integrates exactly.
    pub fn exact_product_degree(&self) -> usize {
        (2 * self.n_lat - 1).min(self.n_lon - 1)
    }

    fn check_degree(&self, l: usize) -> Result<()> {
        if l > self.l_max {
            return Err(Error::GridTooCoarse {
                degree: l,
                detail: format!("grid tables only reach degree {}", self.l_max),
            });
        }
        Ok(())
    }

    #[inline]
    fn ring_q(&self, i: usize) -> &[f64] {
        let nt = tri_len(self.l_max);
        &self.q[i * nt..(i + 1) * nt]
    }

    #[inline]
    fn ring_dq(&self, i: usize) -> &[f64] {
        let nt = tri_len(self.l_max);
        &self.dq[i * nt..(i + 1) * nt]
    }

    #[inline]
    fn ring_rho(&self, i: usize) -> &[f64] {
        &self.rho_pow[i * (self.l_max + 1)..(i + 1) * (self.l_max + 1)]
    }

    #[inline]
    fn lon_cos(&self, j: usize) -> &[f64] {
        &self.cos_m[j * (self.l_max + 1)..(j + 1) * (self.l_max + 1)]
    }

    #[inline]
    fn lon_sin(&self, j: usize) -> &[f64] {
        &self.sin_m[j * (self.l_max + 1)..(j + 1) * (self.l_max + 1)]
    }

    /// Latitude factor of `phi_{l,+-m}` on ring `i`; the longitude factor is
    /// `cos(m phi)` or `sin(m phi)`.
    pub fn ring_factor(&self, i: usize, l: usize, m: usize) -> f64 {
        self.ring_q(i)[tri(l, m)] * self.ring_rho(i)[m]
    }

    /// Longitude of column `j`.
    pub fn longitude(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_lon as f64
    }

    /// Quadrature of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Quadrature of a pointwise product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weights).map(|((x, y), w)| x * y * w).sum()
    }

    /// Nodal values of a band-limited function.
    pub fn synthesize(&self, c: &SphCoeffs) -> Vec<f64> {
        let l_max = c.l_max();
        assert!(l_max <= self.l_max, "degree {l_max} exceeds grid tables {}", self.l_max);
        let mut out = vec![0.0; self.len()];
        let mut a = vec![0.0; l_max + 1];
        let mut b = vec![0.0; l_max + 1];
        for i in 0..self.n_lat {
            let q = self.ring_q(i);
            let rho = self.ring_rho(i);
            for m in 0..=l_max {
                let (mut sa, mut sb) = (0.0, 0.0);
                for l in m..=l_max {
                    let f = q[tri(l, m)];
                    sa += f * c.get(l, m as i64);
                    if m > 0 {
                        sb += f * c.get(l, -(m as i64));
                    }
                }
                a[m] = sa * rho[m];
                b[m] = sb * rho[m];
            }
            let row = &mut out[i * self.n_lon..(i + 1) * self.n_lon];
            for (j, v) in row.iter_mut().enumerate() {
                let cs = self.lon_cos(j);
                let sn = self.lon_sin(j);
                let mut acc = a[0];
                for m in 1..=l_max {
                    acc += a[m] * cs[m] + b[m] * sn[m];
                }
                *v = acc;
            }
        }
        out
    }

    /// Quadrature projection of nodal values onto degrees `<= l_out`.
    pub fn analyze(&self, values: &[f64], l_out: usize) -> SphCoeffs {
        assert!(l_out <= self.l_max, "degree {l_out} exceeds grid tables {}", self.l_max);
        assert_eq!(values.len(), self.len());
        let mut out = SphCoeffs::zeros(l_out);
        let mut fa = vec![0.0; l_out + 1];
        let mut fb = vec![0.0; l_out + 1];
        for i in 0..self.n_lat {
            fa.iter_mut().for_each(|v| *v = 0.0);
            fb.iter_mut().for_each(|v| *v = 0.0);
            let row = &values[i * self.n_lon..(i + 1) * self.n_lon];
            for (j, &v) in row.iter().enumerate() {
                let cs = self.lon_cos(j);
                let sn = self.lon_sin(j);
                for m in 0..=l_out {
                    fa[m] += v * cs[m];
                    fb[m] += v * sn[m];
                }
            }
            let w = self.weights[i * self.n_lon];
            let q = self.ring_q(i);
            let rho = self.ring_rho(i);
            for m in 0..=l_out {
                let sa = fa[m] * rho[m] * w;
                let sb = fb[m] * rho[m] * w;
                for l in m..=l_out {
                    let f = q[tri(l, m)];
                    let s = out.as_mut_slice();
                    s[index(l, m as i64)] += f * sa;
                    if m > 0 {
                        s[index(l, -(m as i64))] += f * sb;
                    }
                }
            }
        }
        out
    }

    /// Ambient gradient of the Cartesian extension `sum c Q(x3) Re/Im[(x1+ix2)^m]`
    /// at the nodes, before tangential projection.
    fn extension_gradient(&self, c: &SphCoeffs) -> Vec<Vec3> {
        let l_max = c.l_max();
        assert!(l_max <= self.l_max, "degree {l_max} exceeds grid tables {}", self.l_max);
        let mut out = vec![[0.0; 3]; self.len()];
        let n = l_max + 1;
        let (mut a, mut b, mut da, mut db) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..self.n_lat {
            let q = self.ring_q(i);
            let dq = self.ring_dq(i);
            let rho = self.ring_rho(i);
            for m in 0..=l_max {
                let (mut sa, mut sb, mut sda, mut sdb) = (0.0, 0.0, 0.0, 0.0);
                for l in m..=l_max {
                    let ca = c.get(l, m as i64);
                    let cb = if m > 0 { c.get(l, -(m as i64)) } else { 0.0 };
                    sa += q[tri(l, m)] * ca;
                    sb += q[tri(l, m)] * cb;
                    sda += dq[tri(l, m)] * ca;
                    sdb += dq[tri(l, m)] * cb;
                }
                a[m] = sa;
                b[m] = sb;
                da[m] = sda;
                db[m] = sdb;
            }
            for j in 0..self.n_lon {
                let cs = self.lon_cos(j);
                let sn = self.lon_sin(j);
                let mut g = [0.0, 0.0, da[0]];
                for m in 1..=l_max {
                    let cm = rho[m] * cs[m];
                    let sm = rho[m] * sn[m];
                    let cm1 = rho[m - 1] * cs[m - 1];
                    let sm1 = rho[m - 1] * sn[m - 1];
                    let mf = m as f64;
                    g[0] += mf * (a[m] * cm1 + b[m] * sm1);
                    g[1] += mf * (-a[m] * sm1 + b[m] * cm1);
                    g[2] += da[m] * cm + db[m] * sm;
                }
                out[i * self.n_lon + j] = g;
            }
        }
        out
    }

    /// Tangential gradient at the nodes.
    pub fn tangential_gradient(&self, c: &SphCoeffs) -> Vec<Vec3> {
        let mut g = self.extension_gradient(c);
        for (v, x) in g.iter_mut().zip(&self.nodes) {
            let r = dot3(v, x);
            for k in 0..3 {
                v[k] -= r * x[k];
            }
        }
        g
    }

    /// Values and tangential gradients at the nodes.
    pub fn synthesize_with_gradient(&self, c: &SphCoeffs) -> (Vec<f64>, Vec<Vec3>) {
        (self.synthesize(c), self.tangential_gradient(c))
    }

    /// Value and gradient of the solid harmonic extension
    /// `Phi(y) = sum c_lm |y|^l phi_lm(y/|y|)` at the points `radii[q] * x_q`.
    /// Uses `grad Phi(r x) = r^(l-1) (l phi x + grad_S phi)` termwise.
    pub fn solid_extension(&self, c: &SphCoeffs, radii: &[f64]) -> (Vec<f64>, Vec<Vec3>) {
        let l_max = c.l_max();
        assert!(l_max <= self.l_max, "degree {l_max} exceeds grid tables {}", self.l_max);
        assert_eq!(radii.len(), self.len());
        let n = l_max + 1;
        let mut values = vec![0.0; self.len()];
        let mut grads = vec![[0.0; 3]; self.len()];
        let mut rpow = vec![0.0; n + 1];
        // per order: value, radial, tangential and z-derivative sums for +m and -m
        let mut acc = vec![[0.0f64; 8]; n];
        for i in 0..self.n_lat {
            let q = self.ring_q(i);
            let dq = self.ring_dq(i);
            let rho = self.ring_rho(i);
            for j in 0..self.n_lon {
                let k = i * self.n_lon + j;
                let r = radii[k];
                // rpow[l] = r^(l-1), rpow[0] unused
                rpow[0] = 1.0 / r;
                for l in 1..=n {
                    rpow[l] = rpow[l - 1] * r;
                }
                for m in 0..=l_max {
                    let mut s = [0.0f64; 8];
                    for l in m..=l_max {
                        let ca = c.get(l, m as i64);
                        let cb = if m > 0 { c.get(l, -(m as i64)) } else { 0.0 };
                        if ca == 0.0 && cb == 0.0 {
                            continue;
                        }
                        let t = tri(l, m);
                        let rl1 = rpow[l];
                        let fq = q[t] * rl1;
                        let fdq = dq[t] * rl1;
                        s[0] += ca * fq * r;
                        s[1] += cb * fq * r;
                        s[2] += ca * fq * l as f64;
                        s[3] += cb * fq * l as f64;
                        s[4] += ca * fq;
                        s[5] += cb * fq;
                        s[6] += ca * fdq;
                        s[7] += cb * fdq;
                    }
                    acc[m] = s;
                }
                let cs = self.lon_cos(j);
                let sn = self.lon_sin(j);
                let x = self.nodes[k];
                let mut value = acc[0][0];
                let mut radial = acc[0][2];
                let mut e = [0.0, 0.0, acc[0][6]];
                for m in 1..=l_max {
                    let s = &acc[m];
                    let cm = rho[m] * cs[m];
                    let sm = rho[m] * sn[m];
                    let cm1 = rho[m - 1] * cs[m - 1];
                    let sm1 = rho[m - 1] * sn[m - 1];
                    let mf = m as f64;
                    value += s[0] * cm + s[1] * sm;
                    radial += s[2] * cm + s[3] * sm;
                    e[0] += mf * (s[4] * cm1 + s[5] * sm1);
                    e[1] += mf * (-s[4] * sm1 + s[5] * cm1);
                    e[2] += s[6] * cm + s[7] * sm;
                }
                let en = dot3(&e, &x);
                values[k] = value;
                grads[k] = [
                    radial * x[0] + e[0] - en * x[0],
                    radial * x[1] + e[1] - en * x[1],
                    radial * x[2] + e[2] - en * x[2],
                ];
            }
        }
        (values, grads)
    }

    /// `<D^2 h grad h, grad h>` for the degree-zero homogeneous extension of `h`,
    /// computed as `sum_i g_i <grad g_i, g>` with `g` the tangential gradient.
    /// The components of `g` have degree `l + 1`, so this grid must resolve it.
    pub fn hessian_quadratic_form(&self, c: &SphCoeffs) -> Result<Vec<f64>> {
        let l_g = c.l_max() + 1;
        self.check_degree(l_g)?;
        if self.exact_product_degree() < 2 * l_g {
            return Err(Error::GridTooCoarse {
                degree: l_g,
                detail: "gradient components cannot be analyzed exactly".into(),
            });
        }
        let g = self.tangential_gradient(c);
        let mut out = vec![0.0; self.len()];
        for comp in 0..3 {
            let values: Vec<f64> = g.iter().map(|v| v[comp]).collect();
            let gc = self.analyze(&values, l_g);
            let grad = self.tangential_gradient(&gc);
            for (k, o) in out.iter_mut().enumerate() {
                *o += g[k][comp] * dot3(&grad[k], &g[k]);
            }
        }
        Ok(out)
    }
}

/// Harmonic factors at an arbitrary point of the sphere.
pub struct PointHarmonics {
    l_max: usize,
    x: Vec3,
    q: Vec<f64>,
    dq: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl PointHarmonics {
    /// `x` is normalized to the unit sphere first.
    pub fn new(l_max: usize, x: Vec3) -> Self {
        let r = dot3(&x, &x).sqrt();
        let x = [x[0] / r, x[1] / r, x[2] / r];
        let (q, dq) = q_table(l_max, x[2]);
        let mut re = Vec::with_capacity(l_max + 1);
        let mut im = Vec::with_capacity(l_max + 1);
        let (mut cr, mut ci) = (1.0, 0.0);
        for _ in 0..=l_max {
            re.push(cr);
            im.push(ci);
            let nr = cr * x[0] - ci * x[1];
            ci = cr * x[1] + ci * x[0];
            cr = nr;
        }
        Self { l_max, x, q, dq, re, im }
    }

    pub fn point(&self) -> Vec3 {
        self.x
    }

    /// `phi_{l,m}` at the point.
    pub fn value(&self, l: usize, m: i64) -> f64 {
        let am = m.unsigned_abs() as usize;
        let f = self.q[tri(l, am)];
        if m >= 0 {
            f * self.re[am]
        } else {
            f * self.im[am]
        }
    }

    /// Ambient gradient of the Cartesian extension of `phi_{l,m}`.
    pub fn extension_gradient(&self, l: usize, m: i64) -> Vec3 {
        let am = m.unsigned_abs() as usize;
        let f = self.q[tri(l, am)];
        let df = self.dq[tri(l, am)];
        if am == 0 {
            return [0.0, 0.0, df];
        }
        let mf = am as f64;
        let (c1, s1) = (self.re[am - 1], self.im[am - 1]);
        if m > 0 {
            [f * mf * c1, -f * mf * s1, df * self.re[am]]
        } else {
            [f * mf * s1, f * mf * c1, df * self.im[am]]
        }
    }

    /// Tangential gradient of `phi_{l,m}`.
    pub fn gradient(&self, l: usize, m: i64) -> Vec3 {
        project_tangent(self.extension_gradient(l, m), &self.x)
    }

    pub fn eval(&self, c: &SphCoeffs) -> f64 {
        assert!(c.l_max() <= self.l_max);
        let mut acc = 0.0;
        for l in 0..=c.l_max() {
            for m in -(l as i64)..=l as i64 {
                acc += c.get(l, m) * self.value(l, m);
            }
        }
        acc
    }

    pub fn eval_gradient(&self, c: &SphCoeffs) -> Vec3 {
        assert!(c.l_max() <= self.l_max);
        let mut g = [0.0; 3];
        for l in 1..=c.l_max() {
            for m in -(l as i64)..=l as i64 {
                let v = c.get(l, m);
                if v != 0.0 {
                    let e = self.extension_gradient(l, m);
                    for k in 0..3 {
                        g[k] += v * e[k];
                    }
                }
            }
        }
        project_tangent(g, &self.x)
    }
}

#[inline]
pub fn project_tangent(v: Vec3, x: &Vec3) -> Vec3 {
    let r = dot3(&v, x);
    [v[0] - r * x[0], v[1] - r * x[1], v[2] - r * x[2]]
}

/// Value of `phi_{l,m}` at a point of the sphere.
pub fn eval_harmonic(l: usize, m: i64, x: Vec3) -> f64 {
    PointHarmonics::new(l, x).value(l, m)
}

/// Covariant Hessian quadratic form `Hess h(v, v)` at `x`, from second
/// derivatives of the Cartesian extension. Used to cross-check the grid route.
pub fn covariant_hessian_at(c: &SphCoeffs, x: Vec3, v: Vec3) -> f64 {
    let ph = PointHarmonics::new(c.l_max(), x);
    let x = ph.point();
    let d2q = q_second_derivative_table(c.l_max(), x[2]);
    let mut hess = [[0.0; 3]; 3];
    let mut grad = [0.0; 3];
    for l in 0..=c.l_max() {
        for m in -(l as i64)..=l as i64 {
            let coef = c.get(l, m);
            if coef == 0.0 {
                continue;
            }
            let am = m.unsigned_abs() as usize;
            let t = tri(l, am);
            let (f, df, ddf) = (ph.q[t], ph.dq[t], d2q[t]);
            // angular factor P = Re or Im of (x1 + i x2)^m and its derivatives
            let pick = |k: usize| if m >= 0 { ph.re[k] } else { ph.im[k] };
            let pick_other = |k: usize| if m >= 0 { ph.im[k] } else { ph.re[k] };
            let sign = if m >= 0 { -1.0 } else { 1.0 };
            let mf = am as f64;
            let p = pick(am);
            let (p1, p2) = if am >= 1 {
                (mf * pick(am - 1), sign * mf * pick_other(am - 1))
            } else {
                (0.0, 0.0)
            };
            let (p11, p12, p22) = if am >= 2 {
                let q0 = mf * (mf - 1.0) * pick(am - 2);
                let q1 = sign * mf * (mf - 1.0) * pick_other(am - 2);
                (q0, q1, -q0)
            } else {
                (0.0, 0.0, 0.0)
            };
            let e = ph.extension_gradient(l, m);
            for k in 0..3 {
                grad[k] += coef * e[k];
            }
            hess[0][0] += coef * f * p11;
            hess[0][1] += coef * f * p12;
            hess[1][1] += coef * f * p22;
            hess[0][2] += coef * df * p1;
            hess[1][2] += coef * df * p2;
            hess[2][2] += coef * ddf * p;
        }
    }
    hess[1][0] = hess[0][1];
    hess[2][0] = hess[0][2];
    hess[2][1] = hess[1][2];
    let mut quad = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            quad += v[a] * hess[a][b] * v[b];
        }
    }
    quad - dot3(&grad, &x) * dot3(&v, &v)
}

static CONVENTION: OnceLock<std::result::Result<(), String>> = OnceLock::new();

/// Checks `M phi_{l,m} = -m phi_{l,-m}` at a few points, where `M` is the
/// rotation generator `x1 d2 - x2 d1`.
pub fn convention_self_test() -> Result<()> {
    CONVENTION
        .get_or_init(|| {
            let points = [[0.3, -0.5, 0.81], [-0.7, 0.2, -0.1], [0.05, 0.9, 0.4]];
            for x in points {
                let ph = PointHarmonics::new(4, x);
                let x = ph.point();
                for l in 1..=4usize {
                    for m in -(l as i64)..=l as i64 {
                        let g = ph.extension_gradient(l, m);
                        let rot = x[0] * g[1] - x[1] * g[0];
                        let expected = -(m as f64) * ph.value(l, -m);
                        if (rot - expected).abs() > 1e-12 {
                            return Err(format!("(l, m) = ({l}, {m}): {rot} vs {expected}"));
                        }
                    }
                }
            }
            Ok(())
        })
        .clone()
        .map_err(Error::ConventionMismatch)
}
