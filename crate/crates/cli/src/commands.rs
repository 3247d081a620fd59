use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use dropwaves::geometry::State;
use dropwaves::hamiltonian::{evolve, EvolveSettings, Model, PhysicalParams};
use dropwaves::linear::{
    bifurcation_frequency, block_determinant, blocks, curvature_eigenvalue, linear_block, resonance_set,
    KernelVector, ResonanceData,
};
use dropwaves::solver::{threads_from_env, BranchPoint, WaveSolver};
use dropwaves::sphere::SphCoeffs;
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{
    create_dir, read_branch, write_branch_csv, write_json, write_jsonl, write_profiles_csv, write_series_csv,
};
use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};

pub fn env_threads() -> Option<usize> {
    std::env::var("DROPWAVES_THREADS").is_ok().then(threads_from_env)
}

pub fn resonance(l0: usize, m0: i64, sigma0: f64, l_max: Option<usize>) -> Outcome<serde_json::Value> {
    let omega0 = bifurcation_frequency(l0, m0, sigma0)?;
    let set = resonance_set(l0, m0)?;
    let mut report = json!({
        "l0": l0,
        "m0": m0,
        "sigma0": sigma0,
        "omega0": omega0,
        "n": set.n,
        "constant": set.constant(),
        "l_bound": set.l_bound,
        "pairs": set.pairs,
        "degenerate": set.degenerate,
        "nondegenerate": set.nondegenerate,
    });
    if let Some(l_max) = l_max {
        let data = ResonanceData::new(l0, m0, sigma0, l_max)?;
        report["l_max"] = json!(l_max);
        report["truncated"] = json!(data.truncated);
    }
    Ok(report)
}

#[derive(Serialize)]
struct BlockReport {
    l: usize,
    m: usize,
    determinant: f64,
    least_singular_value: f64,
    resonant: bool,
}

pub fn linearize(
    l0: usize,
    m0: i64,
    sigma0: f64,
    l_max: usize,
    omega: Option<f64>,
    sobolev_s: f64,
) -> Outcome<serde_json::Value> {
    let data = ResonanceData::new(l0, m0, sigma0, l_max)?;
    let omega = omega.unwrap_or(data.omega0);
    if !omega.is_finite() {
        return Err(Failure::Usage("omega must be finite".into()));
    }
    let mut out = Vec::new();
    for (l, m) in blocks(l_max) {
        let block = linear_block(omega, sigma0, l, m)?;
        // resonant when the closed-form determinant vanishes relative to its scale
        let scale = (sigma0 * curvature_eigenvalue(l) * l as f64).max(omega * omega * (m * m) as f64).max(1.0);
        let determinant = block_determinant(omega, sigma0, l, m) + 0.0;
        let resonant = if m == 0 { determinant == 0.0 } else { determinant <= 1e-24 * scale * scale };
        out.push(BlockReport {
            l,
            m,
            determinant,
            least_singular_value: block.singular_values().min(),
            resonant,
        });
    }
    let at_bifurcation = omega == data.omega0;
    let kernel: Vec<KernelVector> = if at_bifurcation { data.kernel().copied().collect() } else { Vec::new() };
    let mut report = json!({
        "l0": l0,
        "m0": m0,
        "sigma0": sigma0,
        "l_max": l_max,
        "omega": omega,
        "omega0": data.omega0,
        "blocks": out,
        "kernel": kernel,
    });
    if at_bifurcation {
        report["sobolev_s"] = json!(sobolev_s);
        report["restricted_invertibility"] = json!(data.restricted_invertibility(sobolev_s)?);
        report["truncated"] = json!(data.truncated);
    }
    Ok(report)
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    omega0: f64,
    n: usize,
    truncated: &'a [(usize, i64)],
    points: usize,
    failure: Option<String>,
}

fn run_record<'a>(command: &'a str, cfg: &'a RunConfig, solver: &'a WaveSolver, points: usize) -> RunRecord<'a> {
    let data = solver.resonance();
    RunRecord {
        command,
        seed: cfg.solver.seed,
        config: cfg,
        omega0: data.omega0,
        n: data.n(),
        truncated: &data.truncated,
        points,
        failure: None,
    }
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = create_dir(out)?;
    let solver = WaveSolver::new(cfg.solve_config(env_threads()))?;
    if !solver.resonance().truncated.is_empty() {
        warn!("resonant pairs above the truncation degree: {:?}", solver.resonance().truncated);
    }
    info!("continuation over {} amplitudes", cfg.solver.amplitudes.len());
    let branch = solver.branch_continue()?;
    for p in &branch.points {
        info!("a = {:.3e}  omega = {:.12}  residual = {:.2e}  iterations = {}", p.a, p.omega, p.residual, p.iterations);
    }
    write_jsonl(&dir.join("branch.jsonl"), &branch.points)?;
    write_branch_csv(&dir.join("branch.csv"), &branch.points, cfg.output.sobolev_s)?;
    let mut record = run_record("solve", cfg, &solver, branch.points.len());
    record.failure = branch.failure.clone();
    write_json(&dir.join("run.json"), &record)?;
    match branch.failure {
        Some(f) => Err(Failure::Numerical(f)),
        None => Ok(()),
    }
}

pub fn scan(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = create_dir(out)?;
    let solver = WaveSolver::new(cfg.solve_config(env_threads()))?;
    let s = &cfg.solver;
    info!("orbit scan at a = {:.3e} from {} starts, seed {}", s.scan_amplitude, s.scan_starts, s.seed);
    let scan = solver.orbit_scan(s.scan_amplitude, s.scan_starts, s.seed)?;
    write_json(&dir.join("scan.json"), &scan)?;
    let mut w = csv::Writer::from_path(dir.join("scan_classes.csv"))?;
    w.write_record(["class", "members", "hamiltonian_sigma0", "omega", "max_fit_residual"])?;
    for (k, c) in scan.classes.iter().enumerate() {
        let members: Vec<String> = c.members.iter().map(|m| m.to_string()).collect();
        let fit = c.fit_residuals.iter().fold(0.0f64, |a, b| a.max(*b));
        w.write_record([
            k.to_string(),
            members.join(" "),
            format!("{:.17e}", c.hamiltonian_sigma0),
            format!("{:.17e}", c.omega),
            format!("{fit:.3e}"),
        ])?;
    }
    w.flush()?;
    let mut record = run_record("scan", cfg, &solver, scan.points.len());
    if !scan.failures.is_empty() {
        record.failure = Some(format!("{} of {} starts failed", scan.failures.len(), s.scan_starts));
    }
    write_json(&dir.join("run.json"), &record)?;
    info!("{} orbit classes from {} converged starts", scan.classes.len(), scan.points.len());
    println!("{}", scan.classes.len());
    Ok(())
}

/// Initial state and its period from the `[evolution]` section.
fn initial_state(cfg: &RunConfig, l_max: usize) -> Outcome<(State, Option<f64>)> {
    let e = &cfg.evolution;
    if let Some(path) = &e.branch {
        let points = read_branch(path)?;
        let p: &BranchPoint = points.get(e.branch_index).ok_or_else(|| {
            Failure::Usage(format!("{} has no point {}", path.display(), e.branch_index))
        })?;
        let period = (p.omega != 0.0).then(|| 2.0 * PI / p.omega.abs());
        if p.state.l_max() != l_max {
            warn!("branch point has degree {}, resampled to {l_max}", p.state.l_max());
        }
        return Ok((p.state.resized(l_max), period));
    }
    let (l, m) = e.mode;
    if l > l_max || m.unsigned_abs() as usize > l {
        return Err(Failure::Usage(format!("mode ({l}, {m}) is not a harmonic of degree at most {l_max}")));
    }
    let mut eta = SphCoeffs::zeros(l_max);
    eta.set(l, m, e.epsilon);
    let rate = cfg.physics.sigma0 * curvature_eigenvalue(l) * l as f64;
    let period = (rate > 0.0).then(|| 2.0 * PI / rate.sqrt());
    Ok((State::new(eta, SphCoeffs::zeros(l_max))?, period))
}

pub fn run_evolve(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = create_dir(out)?;
    let solve = cfg.solve_config(env_threads());
    let model = Model::new(PhysicalParams::new(solve.sigma0)?, solve.discretization())?;
    let (u0, period) = initial_state(cfg, solve.l_max)?;
    let e = &cfg.evolution;
    let t_end = match (e.t_end, period) {
        (Some(t), _) => t,
        (None, Some(p)) => e.periods * p,
        (None, None) => return Err(Failure::Usage("t_end is required for a mode without oscillation".into())),
    };
    let settings = EvolveSettings { dt: e.dt, t_end, snapshot_every: e.snapshot_every };
    info!("evolving to t = {t_end:.6} with {} steps", settings.steps()?);
    let log = evolve(&model, &u0, &settings)?;
    log.write_csv(std::fs::File::create(dir.join("evolution.csv"))?)?;
    if !log.snapshots.is_empty() {
        write_jsonl(&dir.join("snapshots.jsonl"), &log.snapshots)?;
    }
    let return_gap = log.final_state.sub(&u0).max_abs();
    let summary = json!({
        "seed": cfg.solver.seed,
        "config": cfg,
        "dt": log.dt,
        "t_end": t_end,
        "steps": log.times.len().saturating_sub(1),
        "max_drift": {
            "hamiltonian_sigma0": log.max_drift()[0],
            "volume": log.max_drift()[1],
            "angular_momentum": log.max_drift()[2],
            "barycenter3": log.max_drift()[3],
        },
        "initial": log.initial,
        "return_gap": return_gap,
        "final_state": log.final_state,
        "aborted": log.aborted,
    });
    write_json(&dir.join("evolution.json"), &summary)?;
    info!("max drift {:?}, return gap {return_gap:.3e}", log.max_drift());
    match log.aborted {
        Some(reason) => Err(Failure::Numerical(reason)),
        None => Ok(()),
    }
}

/// `omega0` from the `run.json` next to a branch file.
fn sibling_omega0(branch: &Path) -> Option<f64> {
    let run = branch.parent()?.join("run.json");
    let text = std::fs::read_to_string(run).ok()?;
    serde_json::from_str::<serde_json::Value>(&text).ok()?.get("omega0")?.as_f64()
}

pub fn plotdata(branch: &Path, omega0: Option<f64>, out: Option<PathBuf>, s: f64, samples: usize) -> Outcome {
    if samples < 2 {
        return Err(Failure::Usage("at least two profile samples are needed".into()));
    }
    let points = read_branch(branch)?;
    let omega0 = omega0.or_else(|| sibling_omega0(branch)).ok_or_else(|| {
        Failure::Usage("omega0 is needed: pass --omega0 or keep run.json next to the branch file".into())
    })?;
    let dir = create_dir(&out.unwrap_or_else(|| branch.parent().unwrap_or(Path::new(".")).to_path_buf()))?;
    write_series_csv(&dir.join("series.csv"), &points, omega0, s)?;
    write_profiles_csv(&dir.join("profiles.csv"), &points, samples)?;
    info!("{} points written to {}", points.len(), dir.display());
    Ok(())
}
