//! Files written by the subcommands.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dropwaves::geometry::State;
use dropwaves::solver::BranchPoint;
use dropwaves::sphere::PointHarmonics;
use serde::Serialize;

use crate::failure::{Failure, Outcome};

pub fn create_dir(dir: &Path) -> Outcome<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Outcome {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_branch(path: &Path) -> Outcome<Vec<BranchPoint>> {
    let file = File::open(path).map_err(|e| Failure::Usage(format!("cannot open {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|e| Failure::Usage(format!("{}:{}: {e}", path.display(), k + 1)))?;
        points.push(p);
    }
    Ok(points)
}

fn num(x: f64) -> String {
    format!("{x:.17e}")
}

/// Summary table: amplitude, frequency, Sobolev norms of both components,
/// energy and residual.
pub fn write_branch_csv(path: &Path, points: &[BranchPoint], s: f64) -> Outcome {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["a", "omega", "eta_norm", "beta_norm", "hamiltonian_sigma0", "residual"])?;
    for p in points {
        w.write_record([
            num(p.a),
            num(p.omega),
            num(p.state.eta.sobolev_norm(s + 1.5)),
            num(p.state.beta.sobolev_norm(s + 1.0)),
            num(p.hamiltonian_sigma0),
            num(p.residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `omega - omega0` and `|u| / sqrt(a)` against `sqrt(a)`. Points with
/// `a = 0` get an empty ratio.
pub fn write_series_csv(path: &Path, points: &[BranchPoint], omega0: f64, s: f64) -> Outcome {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["a", "sqrt_a", "omega", "omega_shift", "ws_norm", "norm_over_sqrt_a"])?;
    for p in points {
        let norm = p.state.ws_norm(s);
        let ratio = if p.a > 0.0 { num(norm / p.a.sqrt()) } else { String::new() };
        w.write_record([num(p.a), num(p.a.sqrt()), num(p.omega), num(p.omega - omega0), num(norm), ratio])?;
    }
    w.flush()?;
    Ok(())
}

/// Radius `1 + eta` on the equator at `samples` longitudes and on the
/// meridian `phi = 0` at `samples` colatitudes in `[0, pi]`.
pub fn profiles(u: &State, samples: usize) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let l = u.l_max();
    let radius = |x: [f64; 3]| 1.0 + PointHarmonics::new(l, x).eval(&u.eta);
    let equator = (0..samples)
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / samples as f64;
            (phi, radius([phi.cos(), phi.sin(), 0.0]))
        })
        .collect();
    let meridian = (0..samples)
        .map(|j| {
            let theta = PI * j as f64 / (samples.max(2) - 1) as f64;
            (theta, radius([theta.sin(), 0.0, theta.cos()]))
        })
        .collect();
    (equator, meridian)
}

pub fn write_profiles_csv(path: &Path, points: &[BranchPoint], samples: usize) -> Outcome {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["point", "a", "curve", "angle", "radius"])?;
    for (k, p) in points.iter().enumerate() {
        let (equator, meridian) = profiles(&p.state, samples);
        for (curve, data) in [("equator", equator), ("meridian", meridian)] {
            for (angle, r) in data {
                w.write_record([k.to_string(), num(p.a), curve.to_string(), num(angle), num(r)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
