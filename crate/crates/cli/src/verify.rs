//! Invariant suite run by `verify`.

use std::f64::consts::PI;
use std::path::Path;

use dropwaves::geometry::{translate_reparametrize, translation_residual, State};
use dropwaves::hamiltonian::{evolve, EvolveSettings, Functional};
use dropwaves::solver::{Branch, Symmetry, WaveSolver};
use dropwaves::sphere::QuadGrid;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifacts::{create_dir, write_branch_csv, write_json, write_jsonl};
use crate::config::RunConfig;
use crate::failure::{Failure, Outcome};

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value <= tolerance }
    }

    fn failed(name: &str, reason: &str) -> Self {
        info!("{name}: {reason}");
        Self { name: name.into(), value: f64::INFINITY, tolerance: 0.0, pass: false }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    seed: u64,
    config: &'a RunConfig,
    checks: &'a [Check],
    pass: bool,
}

const ORTHOGONALITY_TOL: f64 = 1e-6;
const BRACKET_TOL: f64 = 1e-7;
const TRANSLATION_RESIDUAL_TOL: f64 = 1e-10;
const GROUP_LAW_TOL: f64 = 1e-9;
/// Steps per period of the traveling-wave check.
const STEPS_PER_PERIOD: f64 = 400.0;

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0f64, f64::max)
}

fn branch_checks(solver: &WaveSolver, branch: &Branch) -> Outcome<Vec<Check>> {
    let cfg = solver.config();
    let tol_f = cfg.tol_residual;
    let points = &branch.points;
    let mut checks = vec![
        Check::new("branch_residual", max_of(points.iter().map(|p| p.residual)), tol_f),
        Check::new("branch_constraint", max_of(points.iter().map(|p| p.constraint())), cfg.tol_constraint),
        Check::new(
            "orthogonality_along_iterates",
            max_of(points.iter().flat_map(|p| &p.trace).flat_map(|r| r.orthogonality.map(f64::abs))),
            ORTHOGONALITY_TOL,
        ),
    ];
    let model = solver.model();
    let residual = |omega: f64, u: &State| -> Outcome<f64> { Ok(model.grad_operator(omega, u)?.norm()) };
    let mut reversal = 0.0f64;
    let mut rotation = 0.0f64;
    for p in points {
        let reversed = State::new(p.state.eta.clone(), p.state.beta.scaled(-1.0))?;
        reversal = reversal.max(residual(-p.omega, &reversed)?);
        for theta in [0.5, 1.7, 3.9] {
            rotation = rotation.max(residual(p.omega, &p.state.rotated(theta))?);
        }
    }
    checks.push(Check::new("time_reversal", reversal, tol_f));
    checks.push(Check::new("rotation_equivariance", rotation, tol_f));
    if cfg.symmetry != Symmetry::None {
        let forbidden = points
            .iter()
            .flat_map(|p| &p.trace)
            .map(|r| r.forbidden_state.max(r.forbidden_residual));
        checks.push(Check::new("symmetric_subspace", max_of(forbidden), 1e-12));
    }
    if let Some(p) = points.first() {
        // one period of the smallest wave rotates it back onto itself
        let period = 2.0 * PI / p.omega.abs();
        let settings = EvolveSettings { dt: period / STEPS_PER_PERIOD, t_end: period, snapshot_every: 0 };
        let log = evolve(model, &p.state, &settings)?;
        checks.push(match log.aborted {
            Some(reason) => Check::failed("traveling_wave_period", &reason),
            None => Check::new("traveling_wave_period", log.final_state.sub(&p.state).max_abs(), 10.0 * tol_f),
        });
    }
    Ok(checks)
}

fn bracket_checks(solver: &WaveSolver, seed: u64) -> Outcome<Vec<Check>> {
    let model = solver.model();
    let l = model.l_max();
    let (mut ib3, mut vh, mut b3h, mut ib1) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..20 {
        let u = State::random(l, 0.02, seed.wrapping_add(k));
        let b = model.invariants(&u)?.barycenter;
        let bracket = |a, c| model.poisson_bracket(a, c, &u);
        ib3 = ib3.max(bracket(Functional::AngularMomentum, Functional::Barycenter(2))?.abs());
        vh = vh.max(bracket(Functional::Volume, Functional::Hamiltonian)?.abs());
        b3h = b3h.max(bracket(Functional::Barycenter(2), Functional::Hamiltonian)?.abs());
        ib1 = ib1.max((bracket(Functional::AngularMomentum, Functional::Barycenter(0))? + b[1]).abs());
    }
    Ok(vec![
        Check::new("bracket_momentum_barycenter3", ib3, BRACKET_TOL),
        Check::new("bracket_volume_energy", vh, BRACKET_TOL),
        Check::new("bracket_barycenter3_energy", b3h, BRACKET_TOL),
        Check::new("bracket_momentum_barycenter1", ib1, BRACKET_TOL),
    ])
}

fn translation_checks(seed: u64) -> Outcome<Vec<Check>> {
    let grid = QuadGrid::for_degree(32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shift = || -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(-0.03..0.03)) };
    let (mut residual, mut gap) = (0.0f64, 0.0f64);
    for k in 0..10 {
        let eta = State::random(5, 0.02, seed.wrapping_add(100 + k)).eta;
        let (alpha, beta) = (shift(), shift());
        let sum = std::array::from_fn(|i| alpha[i] + beta[i]);
        let ta = translate_reparametrize(&eta, alpha, &grid, 32)?;
        residual = residual.max(translation_residual(&eta, alpha, &grid, &ta));
        let tab = translate_reparametrize(&ta.height, beta, &grid, 32)?;
        let ts = translate_reparametrize(&eta, sum, &grid, 32)?;
        gap = gap.max(max_of(tab.nodal_height.iter().zip(&ts.nodal_height).map(|(x, y)| (x - y).abs())));
    }
    Ok(vec![
        Check::new("translation_residual", residual, TRANSLATION_RESIDUAL_TOL),
        Check::new("translation_group_law", gap, GROUP_LAW_TOL),
    ])
}

fn round_trip_check(seed: u64) -> Outcome<Check> {
    let u = State::random(6, 1.0, seed);
    let back: State = serde_json::from_str(&serde_json::to_string(&u)?)?;
    Ok(Check::new("state_round_trip", if back == u { 0.0 } else { 1.0 }, 0.0))
}

pub fn verify(cfg: &RunConfig, threads: Option<usize>, out: &Path) -> Outcome {
    let dir = create_dir(out)?;
    let solver = WaveSolver::new(cfg.solve_config(threads))?;
    let seed = cfg.solver.seed;
    info!("solving the branch");
    let branch = solver.branch_continue()?;
    write_jsonl(&dir.join("branch.jsonl"), &branch.points)?;
    write_branch_csv(&dir.join("branch.csv"), &branch.points, cfg.output.sobolev_s)?;
    let mut checks = Vec::new();
    checks.push(match &branch.failure {
        Some(f) => Check::failed("branch_complete", f),
        None => Check::new("branch_complete", 0.0, 0.0),
    });
    checks.extend(branch_checks(&solver, &branch)?);
    info!("structural identities");
    checks.extend(bracket_checks(&solver, seed)?);
    checks.extend(translation_checks(seed)?);
    checks.push(round_trip_check(seed)?);
    for c in &checks {
        println!("{} {} {:.3e} (tolerance {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    let pass = checks.iter().all(|c| c.pass);
    write_json(&dir.join("verify.json"), &Report { seed, config: cfg, checks: &checks, pass })?;
    if pass {
        Ok(())
    } else {
        Err(Failure::Numerical("some invariant checks failed, see verify.json".into()))
    }
}
