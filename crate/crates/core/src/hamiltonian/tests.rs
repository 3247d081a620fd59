use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::Reflection;

fn model(l_max: usize) -> Model {
    Model::new(PhysicalParams::new(1.0).unwrap(), Discretization::new(l_max)).unwrap()
}

fn random_state(l_max: usize, scale: f64, seed: u64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = || {
        let mut c = SphCoeffs::zeros(l_max);
        for l in 0..=l_max {
            for m in -(l as i64)..=l as i64 {
                c.set(l, m, scale * rng.gen_range(-1.0..1.0) / (1.0 + (l * l) as f64));
            }
        }
        c
    };
    let eta = field();
    let beta = field();
    State::new(eta, beta).unwrap()
}

fn constant(l_max: usize, value: f64) -> SphCoeffs {
    SphCoeffs::basis(l_max, 0, 0).scaled(value * (4.0 * PI).sqrt())
}

#[test]
fn x1_on_the_sphere_is_the_degree() {
    let m = model(6);
    for (l, o) in [(1usize, 0i64), (2, -1), (4, 3), (6, -6)] {
        let u = State::new(SphCoeffs::zeros(6), SphCoeffs::basis(6, l, o)).unwrap();
        let x1 = m.field_x1(&u).unwrap();
        assert!((&x1 - &SphCoeffs::basis(6, l, o).scaled(l as f64)).max_abs() < 1e-12);
    }
    assert!(m.field_x1(&State::zeros(6)).unwrap().max_abs() < 1e-14);
}

#[test]
fn x1_on_a_concentric_ball() {
    let m = model(6);
    let u = State::new(constant(6, 0.1), SphCoeffs::basis(6, 2, 1)).unwrap();
    let x1 = m.field_x1(&u).unwrap();
    assert!((&x1 - &SphCoeffs::basis(6, 2, 1).scaled(2.0 / 1.1)).max_abs() < 1e-7);
}

#[test]
fn x2_on_spheres() {
    let m = model(6);
    let x2 = m.field_x2(&State::zeros(6)).unwrap();
    assert!((&x2 + &constant(6, 2.0)).max_abs() < 1e-12);

    let c = 0.1;
    let x2 = m.field_x2(&State::new(constant(6, c), SphCoeffs::zeros(6)).unwrap()).unwrap();
    let expected = -(2.0 / (1.0 + c) - 2.0);
    assert!((&(&x2 + &constant(6, 2.0)) - &constant(6, expected)).max_abs() < 1e-12);
    assert!((expected - 0.181818).abs() < 1e-6);
}

#[test]
fn x2_is_quadratic_in_a_translation_potential() {
    let m = model(6);
    let defect = |eps: f64| {
        let u = State::new(SphCoeffs::zeros(6), SphCoeffs::basis(6, 1, 0).scaled(eps)).unwrap();
        (&m.field_x2(&u).unwrap() + &constant(6, 2.0)).norm()
    };
    let (a, b) = (defect(1e-2), defect(5e-3));
    assert!(a > 0.0);
    assert!((a / b - 4.0).abs() < 1e-6, "ratio {}", a / b);
}

#[test]
fn hamiltonian_of_the_sphere_is_its_area() {
    let m = model(6);
    let h = m.hamiltonian(&State::zeros(6)).unwrap();
    assert!((h - 4.0 * PI).abs() < 1e-12);
    let hs = m.hamiltonian_sigma0(&State::zeros(6)).unwrap();
    assert!((hs - (4.0 * PI - 8.0 * PI / 3.0)).abs() < 1e-12);
}

#[test]
fn kinetic_energy_is_nonnegative() {
    let m = model(6);
    for seed in 0..5 {
        let u = random_state(6, 0.02, seed);
        let f = m.nodal_fields(&u).unwrap();
        assert!(f.kinetic_energy(m.grid()) >= -1e-9);
    }
}

#[test]
fn hamiltonian_invariances() {
    let m = model(6);
    let u = random_state(6, 0.02, 7);
    let h = m.hamiltonian(&u).unwrap();
    for theta in [0.3, 1.7, -2.5] {
        assert!((m.hamiltonian(&u.rotated(theta)).unwrap() - h).abs() < 1e-8);
    }
    let shifted = State::new(u.eta.clone(), &u.beta + &constant(6, 0.37)).unwrap();
    assert!((m.hamiltonian(&shifted).unwrap() - h).abs() < 1e-9);
}

#[test]
fn trivial_state_solves_for_every_speed() {
    let m = model(6);
    for omega in [0.0, 1.0, 2.7386] {
        assert!(m.grad_operator(omega, &State::zeros(6)).unwrap().norm() < 1e-9);
    }
}

/// `<F(omega, u), d>` against central differences of `H_sigma0 - omega I`.
#[test]
fn grad_operator_is_the_gradient_of_the_energy() {
    let m = model(6);
    let omega = 2.5;
    for seed in 0..3 {
        let u = random_state(6, 0.03, 10 + seed);
        let d = random_state(6, 1.0, 20 + seed);
        let d = d.scaled(1.0 / d.norm());
        let f = m.grad_operator(omega, &u).unwrap();
        let energy = |v: &State| {
            let inv = m.invariants(v).unwrap();
            inv.hamiltonian_sigma0 - omega * inv.angular_momentum
        };
        let h = 1e-5 * (1.0 + u.norm());
        let mut up = u.clone();
        up.axpy(h, &d);
        let mut um = u.clone();
        um.axpy(-h, &d);
        let fd = (energy(&up) - energy(&um)) / (2.0 * h);
        assert!((fd - f.dot(&d)).abs() < 1e-5, "fd {fd} vs {}", f.dot(&d));
    }
}

/// `X1 = (1+h)^-2 d_psi H` and `X2 = -(1+h)^-2 d_h H`, tested in the weak form
/// `<(1+h)^2 X, d>` against finite differences of `H`.
#[test]
fn vector_fields_are_hamiltonian() {
    let m = model(6);
    let u = random_state(6, 0.03, 31);
    let f = m.nodal_fields(&u).unwrap();
    let g = m.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let mut dir = SphCoeffs::zeros(6);
        dir.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let dir = dir.scaled(1.0 / dir.norm());
        let dv = g.synthesize(&dir);
        let weak = |x: &[f64]| -> f64 {
            (0..g.len()).map(|k| g.weights()[k] * (1.0 + f.height[k]).powi(2) * x[k] * dv[k]).sum()
        };
        let h = 1e-5 * (1.0 + u.norm());
        let along = |eta_dir: bool, t: f64| {
            let mut v = u.clone();
            if eta_dir {
                v.eta.axpy(t, &dir);
            } else {
                v.beta.axpy(t, &dir);
            }
            m.hamiltonian(&v).unwrap()
        };
        let d_psi = (along(false, h) - along(false, -h)) / (2.0 * h);
        let d_h = (along(true, h) - along(true, -h)) / (2.0 * h);
        assert!((d_psi - weak(&f.x1)).abs() < 1e-5, "psi: {d_psi} vs {}", weak(&f.x1));
        assert!((d_h + weak(&f.x2)).abs() < 1e-5, "h: {d_h} vs {}", -weak(&f.x2));
    }
}

#[test]
fn linearization_at_zero_matches_the_block_operator() {
    let m = model(6);
    let omega = 2.2;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = State::new(
        SphCoeffs::from_vec(6, (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        SphCoeffs::from_vec(6, (0..49).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
    )
    .unwrap();
    let h = 1e-6;
    let fp = m.grad_operator(omega, &d.scaled(h)).unwrap();
    let fm = m.grad_operator(omega, &d.scaled(-h)).unwrap();
    let fd = fp.sub(&fm).scaled(0.5 / h);
    let expected = State::new(
        &d.eta.curvature_multiplier() + &d.beta.rotation_generator().scaled(omega),
        &d.beta.unit_ball_dirichlet_neumann() - &d.eta.rotation_generator().scaled(omega),
    )
    .unwrap();
    assert!(fd.sub(&expected).max_abs() < 1e-6, "{}", fd.sub(&expected).max_abs());
}

#[test]
fn structural_poisson_brackets_vanish() {
    let m = model(6);
    for seed in 0..4 {
        let u = random_state(6, 0.02, 40 + seed);
        let b = m.invariants(&u).unwrap().barycenter;
        let ib3 = m.poisson_bracket(Functional::AngularMomentum, Functional::Barycenter(2), &u).unwrap();
        let ib1 = m.poisson_bracket(Functional::AngularMomentum, Functional::Barycenter(0), &u).unwrap();
        let ib2 = m.poisson_bracket(Functional::AngularMomentum, Functional::Barycenter(1), &u).unwrap();
        let vh = m.poisson_bracket(Functional::Volume, Functional::Hamiltonian, &u).unwrap();
        let b3h = m.poisson_bracket(Functional::Barycenter(2), Functional::Hamiltonian, &u).unwrap();
        assert!(ib3.abs() < 1e-7, "{{I, B3}} = {ib3}");
        assert!((ib1 + b[1]).abs() < 1e-7, "{{I, B1}} + B2 = {}", ib1 + b[1]);
        assert!((ib2 - b[0]).abs() < 1e-7, "{{I, B2}} - B1 = {}", ib2 - b[0]);
        assert!(vh.abs() < 1e-7, "{{V, H}} = {vh}");
        assert!(b3h.abs() < 1e-7, "{{B3, H}} = {b3h}");
    }
}

#[test]
fn brackets_reject_bad_components() {
    let m = model(4);
    assert!(m.poisson_bracket(Functional::Barycenter(3), Functional::Volume, &State::zeros(4)).is_err());
}

#[test]
fn orthogonality_identities() {
    let m = model(6);
    assert_eq!(m.check_orthogonality(1.0, &State::zeros(6)).unwrap(), (0.0, 0.0));
    for seed in 0..4 {
        let u = random_state(6, 0.03, 50 + seed);
        let omega = 1.0 + seed as f64;
        let f = m.grad_operator(omega, &u).unwrap().norm();
        let (r1, r2) = m.check_orthogonality(omega, &u).unwrap();
        assert!(r1.abs() <= 1e-6 * (1.0 + f) && r2.abs() <= 1e-6 * (1.0 + f), "{r1} {r2}");
    }
}

#[test]
fn state_degree_must_match_model() {
    let m = model(4);
    assert!(matches!(m.grad_operator(1.0, &State::zeros(5)), Err(Error::InvalidArgument(_))));
    assert!(PhysicalParams::new(0.0).is_err());
    assert!(Model::new(PhysicalParams::new(1.0).unwrap(), Discretization::new(4).with_l_ext(3)).is_err());
}

#[test]
fn mass_matrix_is_the_identity_on_the_sphere() {
    let m = model(5);
    let mass = m.mass_matrix(&vec![0.0; m.grid().len()]);
    let n = mass.nrows();
    assert!((mass - DMatrix::identity(n, n)).amax() < 1e-12);
}

#[test]
fn rest_state_is_stationary() {
    let m = model(4);
    let log = evolve(&m, &State::zeros(4), &EvolveSettings { dt: 0.01, t_end: 0.1, snapshot_every: 0 }).unwrap();
    assert!(log.final_state.max_abs() < 1e-12);
    assert!(log.aborted.is_none());
}

/// Energy error of RK4 scales like `dt^4` once it is above roundoff.
#[test]
fn rk4_energy_error_is_fourth_order() {
    let m = Model::new(PhysicalParams::new(1.0).unwrap(), Discretization::new(4).with_l_ext(20)).unwrap();
    let mut eta = SphCoeffs::zeros(4);
    eta.set(2, 0, 0.05);
    eta.set(3, 1, 0.02);
    let u0 = State::new(eta, SphCoeffs::zeros(4)).unwrap();
    let drift = |dt: f64| {
        let log = evolve(&m, &u0, &EvolveSettings { dt, t_end: 0.4, snapshot_every: 0 }).unwrap();
        assert!(log.aborted.is_none(), "{:?}", log.aborted);
        *log.drift_hamiltonian.last().unwrap()
    };
    let (a, b) = (drift(0.1), drift(0.05));
    assert!(a > 1e-11, "coarse drift {a} is at roundoff");
    assert!(a / b > 12.0, "ratio {}", a / b);
}

#[test]
fn mid_run_failure_keeps_a_partial_log() {
    let m = model(4);
    let mut eta = SphCoeffs::zeros(4);
    eta.set(2, 0, 0.3);
    let u0 = State::new(eta, SphCoeffs::basis(4, 2, 0).scaled(40.0)).unwrap();
    let log = evolve(&m, &u0, &EvolveSettings { dt: 0.05, t_end: 5.0, snapshot_every: 1 }).unwrap();
    assert!(log.aborted.is_some());
    assert!(!log.times.is_empty());
    assert_eq!(log.times.len(), log.drift_volume.len());
}

#[test]
fn evolution_log_csv_has_the_documented_columns() {
    let m = model(3);
    let log = evolve(&m, &State::zeros(3), &EvolveSettings { dt: 0.1, t_end: 0.2, snapshot_every: 1 }).unwrap();
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,dH,dV,dI,dB3\n"));
    assert_eq!(text.lines().count(), 4);
    assert_eq!(log.snapshots.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn grad_operator_commutes_with_rotations(seed in any::<u64>(), theta in -3.0f64..3.0) {
        let m = model(5);
        let u = random_state(5, 0.03, seed);
        let lhs = m.grad_operator(2.0, &u.rotated(theta)).unwrap();
        let rhs = m.grad_operator(2.0, &u).unwrap().rotated(theta);
        prop_assert!(lhs.sub(&rhs).max_abs() < 1e-7);
    }

    #[test]
    fn grad_operator_commutes_with_reflections(seed in any::<u64>()) {
        let m = model(5);
        let u = random_state(5, 0.03, seed);
        for axis in [Reflection::X2, Reflection::X3] {
            let lhs = m.grad_operator(2.0, &u.reflected(axis)).unwrap();
            let rhs = m.grad_operator(2.0, &u).unwrap().reflected(axis);
            prop_assert!(lhs.sub(&rhs).max_abs() < 1e-7);
        }
    }
}
