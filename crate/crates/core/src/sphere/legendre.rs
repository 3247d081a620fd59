//! Normalized associated Legendre factors and Gauss-Legendre quadrature.
//!
//! The real harmonic of degree `l` and order `m >= 0` is written as
//! `Q_lm(x3) * Re[(x1 + i x2)^m]` (order `-m` uses the imaginary part), where
//! `Q_lm` is a polynomial in `x3`. The factor `sin(theta)^m` that usually sits
//! inside the associated Legendre function is carried by `(x1 + i x2)^m`
//! instead, so evaluation is smooth through the poles.

use std::f64::consts::PI;

/// Position of `(l, m)` with `0 <= m <= l` in a triangular table.
#[inline]
pub fn tri(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

pub fn tri_len(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 2) / 2
}

/// `Q_lm(z)` and `dQ_lm/dz` for `0 <= m <= l <= l_max`, unit L2 normalization of
/// the resulting real harmonics on the sphere.
pub fn q_table(l_max: usize, z: f64) -> (Vec<f64>, Vec<f64>) {
    let mut q = vec![0.0; tri_len(l_max)];
    let mut dq = vec![0.0; tri_len(l_max)];
    let mut diag = 1.0 / (4.0 * PI).sqrt();
    for m in 0..=l_max {
        if m > 0 {
            let mf = m as f64;
            diag *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
        }
        q[tri(m, m)] = diag;
        dq[tri(m, m)] = 0.0;
        if m < l_max {
            let c = (2.0 * m as f64 + 3.0).sqrt();
            q[tri(m + 1, m)] = c * z * diag;
            dq[tri(m + 1, m)] = c * diag;
        }
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let p1 = q[tri(l - 1, m)];
            let p2 = q[tri(l - 2, m)];
            q[tri(l, m)] = a * (z * p1 - b * p2);
            dq[tri(l, m)] = a * (p1 + z * dq[tri(l - 1, m)] - b * dq[tri(l - 2, m)]);
        }
    }
    // Real harmonics with m > 0 carry an extra sqrt(2).
    let s2 = std::f64::consts::SQRT_2;
    for l in 1..=l_max {
        for m in 1..=l {
            q[tri(l, m)] *= s2;
            dq[tri(l, m)] *= s2;
        }
    }
    (q, dq)
}

/// Second derivative table `d^2 Q_lm / dz^2`, obtained by differentiating the
/// same recurrence once more.
pub fn q_second_derivative_table(l_max: usize, z: f64) -> Vec<f64> {
    let (_, dq) = q_table(l_max, z);
    let mut d2 = vec![0.0; tri_len(l_max)];
    for m in 0..=l_max {
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            d2[tri(l, m)] =
                a * (2.0 * dq[tri(l - 1, m)] + z * d2[tri(l - 1, m)] - b * d2[tri(l - 2, m)]);
        }
    }
    d2
}

/// Gauss-Legendre nodes on [-1, 1] in increasing order, with weights summing to 2.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess for the i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
