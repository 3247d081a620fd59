use std::f64::consts::PI;
use std::sync::OnceLock;

use super::orbit::{classify, fit_rotation};
use super::*;
use crate::geometry::Reflection;
use crate::linear::Space;

fn config(l0: usize, m0: i64, l_max: usize) -> SolveConfig {
    SolveConfig { l0, m0, l_max, ..SolveConfig::default() }
}

fn solver_32() -> &'static WaveSolver {
    static S: OnceLock<WaveSolver> = OnceLock::new();
    S.get_or_init(|| WaveSolver::new(config(3, 2, 5)).unwrap())
}

/// Converged (3, 2) point at `a = 1e-4`.
fn point_32() -> &'static BranchPoint {
    static P: OnceLock<BranchPoint> = OnceLock::new();
    P.get_or_init(|| {
        let s = solver_32();
        let start = s.predictor(1e-4, s.direction()).unwrap();
        s.constrained_newton(1e-4, s.resonance().omega0, &start, &start).unwrap()
    })
}

fn residual(s: &WaveSolver, omega: f64, u: &State) -> f64 {
    s.evaluate(omega, u).unwrap().f.norm()
}

#[test]
fn symmetry_masks() {
    assert!(Symmetry::Y2.allows(true, 2, 1) && !Symmetry::Y2.allows(true, 2, -1));
    assert!(Symmetry::Y2.allows(false, 2, -1) && !Symmetry::Y2.allows(false, 2, 1));
    assert!(Symmetry::Y3.allows(true, 3, 1) && !Symmetry::Y3.allows(true, 3, 2));
    assert!(Symmetry::Y3.allows(false, 3, -1) && !Symmetry::Y3.allows(false, 3, 0));
    assert!(!Symmetry::Y23.allows(true, 3, -1) && Symmetry::Y23.allows(false, 3, -1));
    assert!(Symmetry::KFold(3).allows(true, 4, -3) && !Symmetry::KFold(3).allows(false, 4, 2));
    assert!((0..=5).all(|l| (-(l as i64)..=l as i64).all(|m| Symmetry::None.allows(true, l, m))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SolveConfig { amplitudes: vec![], ..SolveConfig::default() },
        SolveConfig { amplitudes: vec![1e-3, 1e-4], ..SolveConfig::default() },
        SolveConfig { amplitudes: vec![-1e-3], ..SolveConfig::default() },
        SolveConfig { symmetry: Symmetry::Y3, ..SolveConfig::default() },
        SolveConfig { symmetry: Symmetry::KFold(0), ..SolveConfig::default() },
        SolveConfig { symmetry: Symmetry::KFold(3), ..SolveConfig::default() },
        SolveConfig { sigma0: 0.0, ..SolveConfig::default() },
        SolveConfig { threads: 0, ..SolveConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))), "{cfg:?}");
    }
    assert!(matches!(WaveSolver::new(config(1, 1, 4)), Err(Error::InvalidArgument(_))));
    assert!(SolveConfig { symmetry: Symmetry::Y23, ..config(3, 1, 5) }.validate().is_ok());
}

#[test]
fn config_rejects_unknown_keys() {
    assert!(serde_json::from_str::<SolveConfig>(r#"{"l_maxx": 4}"#).is_err());
    let cfg: SolveConfig = serde_json::from_str(r#"{"l0": 2, "m0": 1, "symmetry": "y23"}"#).unwrap();
    assert_eq!((cfg.l0, cfg.m0, cfg.symmetry, cfg.l_max), (2, 1, Symmetry::Y23, 8));
}

#[test]
fn layout_round_trip_respects_symmetry() {
    let l = Layout::new(4, Symmetry::Y23);
    let u = State::from_slice(4, &(0..50).map(|k| k as f64 + 1.0).collect::<Vec<_>>()).unwrap();
    let kept = l.scatter(&l.gather(&u));
    for (l_, m) in pairs(4) {
        let (e, b) = (kept.eta.get(l_, m), kept.beta.get(l_, m));
        assert_eq!(e != 0.0, Symmetry::Y23.allows(true, l_, m));
        assert_eq!(b != 0.0, Symmetry::Y23.allows(false, l_, m));
    }
    assert_eq!(l.forbidden_max(&kept), 0.0);
    assert_eq!(l.gather(&kept), l.gather(&u));
}

#[test]
fn predictor_has_quadratic_momentum_a() {
    let s = solver_32();
    for a in [1e-6, 1e-3, 0.4] {
        let u = s.predictor(a, s.direction()).unwrap();
        assert!((s.resonance().i0_quadratic(&u).unwrap() - a).abs() <= 1e-14 * a.max(1.0));
    }
    assert!(s.normalized_direction(&[1.0]).is_err());
    assert!(s.normalized_direction(&[0.0, 0.0]).is_err());
}

#[test]
fn least_squares_step_solves_and_detects_rank_loss() {
    let j = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1e3, 1.0, 0.0]);
    let x = DVector::from_vec(vec![0.3, -0.7]);
    let r = -(&j * &x);
    assert!((least_squares_step(&j, &r).unwrap() - &x).norm() < 1e-12);
    let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    assert!(matches!(least_squares_step(&singular, &r.rows(0, 2).into()), Err(Error::RankCollapse(_))));
}

#[test]
fn parallel_map_keeps_order_and_errors() {
    let out = parallel_map(10, 3, |k| Ok(k * k)).unwrap();
    assert_eq!(out, (0..10).map(|k| k * k).collect::<Vec<_>>());
    let err = parallel_map(10, 4, |k| if k == 7 { Err(Error::NonFinite("x".into())) } else { Ok(k) });
    assert!(err.is_err());
}

#[test]
fn range_solution_vanishes_at_zero_and_stays_in_range() {
    let s = solver_32();
    let omega0 = s.resonance().omega0;
    let w = s.range_solve(omega0, &State::zeros(5)).unwrap();
    assert!(w.norm() <= 1e-14);
    let v = s.resonance().lambda_map(&s.predictor(1e-4, s.direction()).unwrap()).unwrap();
    let v = v.scaled(1e-2 / v.norm());
    let w = s.range_solve(omega0 + 1e-3, &v).unwrap();
    assert!(w.norm() > 0.0);
    assert!(s.resonance().project(&w, Space::V).unwrap().norm() <= 1e-12 * w.norm().max(1e-12));
}

#[test]
fn range_solution_commutes_with_rotation() {
    let s = solver_32();
    let omega = s.resonance().omega0 + 2e-3;
    let v = s.predictor(1e-3, s.direction()).unwrap();
    let range = RangeSolver::new(s, omega, &v).unwrap();
    let w = range.solve(omega, &v).unwrap();
    for theta in [0.3, 1.1, 2.5] {
        let wr = range.solve(omega, &v.rotated(theta)).unwrap();
        assert!(wr.sub(&w.rotated(theta)).norm() <= 1e-8, "theta {theta}");
    }
}

#[test]
fn range_solution_is_quadratic_in_v() {
    let s = solver_32();
    let omega0 = s.resonance().omega0;
    let v = s.predictor(1.0, s.direction()).unwrap();
    let v = v.scaled(1.0 / v.norm());
    let range = RangeSolver::new(s, omega0, &v.scaled(0.02)).unwrap();
    let sizes: Vec<f64> =
        [0.04, 0.02, 0.01, 0.005].iter().map(|t| range.solve(omega0, &v.scaled(*t)).unwrap().norm()).collect();
    for k in 1..sizes.len() {
        let ratio = sizes[k - 1] / sizes[k];
        assert!((3.5..4.5).contains(&ratio), "{sizes:?}");
    }
}

#[test]
fn scalar_reduction_properties() {
    let s = solver_32();
    let omega0 = s.resonance().omega0;
    assert_eq!(s.scalar_reduction(omega0 + 0.01, &State::zeros(5)).unwrap(), 0.0);
    let v = s.predictor(1e-4, s.direction()).unwrap();
    let range = RangeSolver::new(s, omega0, &v).unwrap();
    let f = range.scalar(omega0, &v).unwrap();
    for theta in [0.7, 2.0] {
        assert!((range.scalar(omega0, &v.rotated(theta)).unwrap() - f).abs() <= 1e-8);
    }
    let h = 1e-4;
    let slope = (range.scalar(omega0 + h, &v).unwrap() - range.scalar(omega0 - h, &v).unwrap()) / (2.0 * h);
    assert!(slope < 0.0, "slope {slope}");
}

#[test]
fn frequency_of_kernel_vector() {
    let s = solver_32();
    let omega0 = s.resonance().omega0;
    let v = s.predictor(1.0, s.direction()).unwrap();
    let v = v.scaled(1.0 / v.norm());
    let range = RangeSolver::new(s, omega0, &v.scaled(8e-3)).unwrap();
    let omega = range.omega_of_v(&v.scaled(1e-3)).unwrap();
    assert!((omega - omega0).abs() <= 1e-4);
    let rotated = range.omega_of_v(&v.scaled(1e-3).rotated(0.9)).unwrap();
    assert!((rotated - omega).abs() <= 1e-9);
    let ratios: Vec<f64> = [8e-3, 4e-3, 2e-3, 1e-3]
        .iter()
        .map(|t| (range.omega_of_v(&v.scaled(*t)).unwrap() - omega0).abs() / t)
        .collect();
    assert!(ratios.iter().all(|r| *r <= 1.5 * ratios[0]), "{ratios:?}");
}

#[test]
fn newton_from_predictor_at_two_orbits() {
    // the (4, 3) mode spans a 3-fold symmetric orbit of exact solutions
    let s = WaveSolver::new(SolveConfig { l_ext: Some(16), ..config(2, 1, 4) }).unwrap();
    let y: Vec<f64> = s.resonance().nondegenerate_kernel.iter().map(|k| f64::from(k.l == 4 && k.m == 3)).collect();
    for a in [1e-4, 1e-3] {
        let start = s.predictor(a, &y).unwrap();
        let p = s.constrained_newton(a, s.resonance().omega0, &start, &start).unwrap();
        assert!(p.iterations <= 10);
        assert!(p.residual <= 1e-9 && p.constraint() <= 1e-11);
    }
}

#[test]
fn converged_point_satisfies_invariants() {
    let p = point_32();
    let s = solver_32();
    assert!(p.residual <= s.config().tol_residual);
    assert!(p.constraint() <= s.config().tol_constraint);
    assert!(p.state.beta.get(0, 0).abs() <= 1e-11 && p.state.eta.get(1, 0).abs() <= 1e-11);
    let last = p.trace.last().unwrap();
    assert!(last.orthogonality.iter().all(|o| o.abs() <= 1e-6), "{:?}", last.orthogonality);
    assert!((p.omega - s.resonance().omega0).abs() < 1e-3);
}

#[test]
fn rotated_solution_is_a_solution() {
    let (s, p) = (solver_32(), point_32());
    for theta in [0.4, 1.9, 4.0] {
        assert!(residual(s, p.omega, &p.state.rotated(theta)) <= s.config().tol_residual);
    }
}

#[test]
fn time_reversal_maps_solutions() {
    let (s, p) = (solver_32(), point_32());
    let reversed = State::new(p.state.eta.clone(), p.state.beta.scaled(-1.0)).unwrap();
    assert!(residual(s, -p.omega, &reversed) <= s.config().tol_residual);
    assert!(residual(s, p.omega, &reversed) > 1e-6);
}

#[test]
fn reflection_symmetric_branch_stays_symmetric() {
    let cfg = SolveConfig { symmetry: Symmetry::Y23, amplitudes: vec![1e-4, 4e-4], ..config(3, 1, 5) };
    let s = WaveSolver::new(cfg).unwrap();
    let b = s.branch_continue().unwrap();
    assert!(b.failure.is_none());
    for p in &b.points {
        for r in &p.trace {
            assert!(r.forbidden_state <= 1e-12 && r.forbidden_residual <= 1e-12);
        }
        let u = &p.state;
        assert!(u.reflected(Reflection::X2).sub(u).max_abs() <= 1e-12);
        assert!(u.reflected(Reflection::X3).sub(u).max_abs() <= 1e-12);
    }
}

#[test]
fn fit_rotation_recovers_angle() {
    let p = point_32();
    let theta = 1.234;
    let (fit, res) = fit_rotation(&p.state, &p.state.rotated(theta));
    // (3, 2) is invariant under rotation by pi
    let d = (fit - theta).rem_euclid(PI);
    assert!(d.min(PI - d) <= 1e-7, "{fit}");
    assert!(res <= 1e-10);
}

#[test]
fn classify_groups_rotated_copies() {
    let p = point_32().clone();
    let mut q = p.clone();
    q.state = p.state.rotated(0.8);
    let mut other = p.clone();
    other.hamiltonian_sigma0 += 1e-6;
    let classes = classify(&[p, q, other]);
    assert_eq!(classes.len(), 2);
    assert_eq!(classes[0].members, vec![0, 1]);
    assert!(classes[0].fit_residuals[1] <= 1e-10);
}

#[test]
fn orbit_profile_is_rotation_invariant() {
    let u = &point_32().state;
    let (a, b) = (orbit_profile(u), orbit_profile(&u.rotated(2.2)));
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-14));
}
