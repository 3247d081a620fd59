use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Invariants, Model};
use crate::error::{Error, Result};
use crate::geometry::State;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveSettings {
    /// Requested step; the actual step is `t_end / round(t_end / dt)`.
    pub dt: f64,
    pub t_end: f64,
    /// Keep a state snapshot every this many steps (0 keeps none).
    pub snapshot_every: usize,
}

impl EvolveSettings {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidArgument(format!("t_end = {} must be non-negative", self.t_end)));
        }
        Ok(((self.t_end / self.dt).round() as usize).max(usize::from(self.t_end > 0.0)))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub state: State,
}

/// Drift of the conserved quantities at every accepted step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvolutionLog {
    pub dt: f64,
    pub initial: Invariants,
    pub times: Vec<f64>,
    pub drift_hamiltonian: Vec<f64>,
    pub drift_volume: Vec<f64>,
    pub drift_angular_momentum: Vec<f64>,
    pub drift_barycenter: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: State,
    /// Set when the run stopped early; the log holds every step before it.
    pub aborted: Option<String>,
}

/// `|q - q0| / max(|q0|, 1)`.
pub fn relative_drift(q: f64, q0: f64) -> f64 {
    (q - q0).abs() / q0.abs().max(1.0)
}

impl EvolutionLog {
    fn record(&mut self, t: f64, inv: &Invariants) {
        let i0 = &self.initial;
        self.times.push(t);
        self.drift_hamiltonian.push(relative_drift(inv.hamiltonian_sigma0, i0.hamiltonian_sigma0));
        self.drift_volume.push(relative_drift(inv.volume, i0.volume));
        self.drift_angular_momentum.push(relative_drift(inv.angular_momentum, i0.angular_momentum));
        self.drift_barycenter.push(relative_drift(inv.barycenter[2], i0.barycenter[2]));
    }

    /// Largest drift over the run, per quantity: `[H_sigma0, V, I, B3]`.
    pub fn max_drift(&self) -> [f64; 4] {
        let peak = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(*b));
        [
            peak(&self.drift_hamiltonian),
            peak(&self.drift_volume),
            peak(&self.drift_angular_momentum),
            peak(&self.drift_barycenter),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "dH", "dV", "dI", "dB3"]).map_err(csv_error)?;
        for k in 0..self.times.len() {
            w.write_record(&[
                format!("{:.17e}", self.times[k]),
                format!("{:.17e}", self.drift_hamiltonian[k]),
                format!("{:.17e}", self.drift_volume[k]),
                format!("{:.17e}", self.drift_angular_momentum[k]),
                format!("{:.17e}", self.drift_barycenter[k]),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

/// One RK4 step given the field `k1` at `u`.
fn rk4_step(model: &Model, u: &State, k1: &State, dt: f64) -> Result<State> {
    let k2 = model.vector_field(&u.add(&k1.scaled(0.5 * dt)))?;
    let k3 = model.vector_field(&u.add(&k2.scaled(0.5 * dt)))?;
    let k4 = model.vector_field(&u.add(&k3.scaled(dt)))?;
    let mut next = u.clone();
    next.axpy(dt / 6.0, k1);
    next.axpy(dt / 3.0, &k2);
    next.axpy(dt / 3.0, &k3);
    next.axpy(dt / 6.0, &k4);
    if !next.is_finite() {
        return Err(Error::NonFinite("time step".into()));
    }
    Ok(next)
}

/// Classical fixed-step RK4. A failure mid-run ends the integration and is
/// reported in [`EvolutionLog::aborted`].
pub fn evolve(model: &Model, u0: &State, settings: &EvolveSettings) -> Result<EvolutionLog> {
    let steps = settings.steps()?;
    let dt = if steps > 0 { settings.t_end / steps as f64 } else { settings.dt };
    let (mut field, initial) = model.field_and_invariants(u0)?;
    let mut log = EvolutionLog {
        dt,
        initial,
        times: Vec::with_capacity(steps + 1),
        drift_hamiltonian: Vec::with_capacity(steps + 1),
        drift_volume: Vec::with_capacity(steps + 1),
        drift_angular_momentum: Vec::with_capacity(steps + 1),
        drift_barycenter: Vec::with_capacity(steps + 1),
        snapshots: Vec::new(),
        final_state: u0.clone(),
        aborted: None,
    };
    log.record(0.0, &initial);
    if settings.snapshot_every > 0 {
        log.snapshots.push(Snapshot { t: 0.0, state: u0.clone() });
    }
    let mut u = u0.clone();
    for n in 1..=steps {
        let t = n as f64 * dt;
        // the field at the new state is the first stage of the next step
        let step = rk4_step(model, &u, &field, dt)
            .and_then(|next| model.field_and_invariants(&next).map(|(k, inv)| (next, k, inv)));
        match step {
            Ok((next, k, inv)) => {
                u = next;
                field = k;
                log.record(t, &inv);
                if settings.snapshot_every > 0 && n % settings.snapshot_every == 0 {
                    log.snapshots.push(Snapshot { t, state: u.clone() });
                }
            }
            Err(e) => {
                log.aborted = Some(format!("step {n} at t = {t}: {e}"));
                break;
            }
        }
    }
    log.final_state = u;
    Ok(log)
}
