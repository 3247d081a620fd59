//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use dropwaves::solver::{SolveConfig, Symmetry};
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, Outcome};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub physics: Physics,
    pub discretization: DiscretizationSection,
    pub solver: SolverSection,
    pub evolution: EvolutionSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub sigma0: f64,
    pub l0: usize,
    pub m0: i64,
}

impl Default for Physics {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self { sigma0: d.sigma0, l0: d.l0, m0: d.m0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSection {
    pub l_max: usize,
    /// Defaults to `2 l_max + 4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_ext: Option<usize>,
}

impl Default for DiscretizationSection {
    fn default() -> Self {
        Self { l_max: SolveConfig::default().l_max, l_ext: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub amplitudes: Vec<f64>,
    pub tol_residual: f64,
    pub tol_constraint: f64,
    pub max_iterations: usize,
    pub symmetry: Symmetry,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    pub fd_step: f64,
    /// Worker threads; `DROPWAVES_THREADS` caps it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Seed of the random start directions of `scan`.
    pub seed: u64,
    pub scan_amplitude: f64,
    pub scan_starts: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolveConfig::default();
        Self {
            amplitudes: d.amplitudes,
            tol_residual: d.tol_residual,
            tol_constraint: d.tol_constraint,
            max_iterations: d.max_iterations,
            symmetry: d.symmetry,
            direction: None,
            fd_step: d.fd_step,
            threads: None,
            seed: 0,
            scan_amplitude: 1e-3,
            scan_starts: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionSection {
    pub dt: f64,
    /// Defaults to `periods` periods of the initial state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub periods: f64,
    /// Initial state `epsilon * phi_{l,m}` in `eta`, unless `branch` is set.
    pub mode: (usize, i64),
    pub epsilon: f64,
    /// Branch file whose point `branch_index` is the initial state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<PathBuf>,
    pub branch_index: usize,
    pub snapshot_every: usize,
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: None,
            periods: 1.0,
            mode: (2, 0),
            epsilon: 1e-3,
            branch: None,
            branch_index: 0,
            snapshot_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Sobolev index of the norms in the branch summary.
    pub sobolev_s: f64,
    /// 0 warnings only, 1 progress, 2 per-iterate detail.
    pub verbosity: u8,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), sobolev_s: 2.0, verbosity: 1 }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Outcome<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Failure::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Outcome<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
            None => {
                let cfg = Self::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Outcome {
        self.solve_config(None).validate()?;
        let p = &self.physics;
        dropwaves::linear::bifurcation_frequency(p.l0, p.m0, p.sigma0)?;
        let e = &self.evolution;
        if !(e.dt > 0.0) || !(e.periods > 0.0) || e.t_end.is_some_and(|t| !(t >= 0.0)) {
            return Err(Failure::Usage("evolution dt, periods and t_end must be positive".into()));
        }
        if self.solver.scan_starts == 0 || !(self.solver.scan_amplitude > 0.0) {
            return Err(Failure::Usage("scan needs a positive amplitude and at least one start".into()));
        }
        if !self.output.sobolev_s.is_finite() {
            return Err(Failure::Usage("sobolev_s must be finite".into()));
        }
        Ok(())
    }

    /// Solver settings with the thread count capped by `env_threads`.
    pub fn solve_config(&self, env_threads: Option<usize>) -> SolveConfig {
        let s = &self.solver;
        let threads = match (s.threads, env_threads) {
            (Some(t), Some(cap)) => t.min(cap),
            (Some(t), None) => t,
            (None, cap) => cap.unwrap_or(1),
        };
        SolveConfig {
            sigma0: self.physics.sigma0,
            l0: self.physics.l0,
            m0: self.physics.m0,
            l_max: self.discretization.l_max,
            l_ext: self.discretization.l_ext,
            amplitudes: s.amplitudes.clone(),
            tol_residual: s.tol_residual,
            tol_constraint: s.tol_constraint,
            max_iterations: s.max_iterations,
            symmetry: s.symmetry,
            direction: s.direction.clone(),
            fd_step: s.fd_step,
            threads,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_solver_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        let solve = cfg.solve_config(None);
        assert_eq!(solve, SolveConfig::default());
    }

    #[test]
    fn sections_are_read() {
        let cfg = RunConfig::parse(
            r#"
            [physics]
            l0 = 2
            m0 = 1
            [discretization]
            l_max = 6
            l_ext = 18
            [solver]
            amplitudes = [1e-4, 1e-3]
            symmetry = "y2"
            seed = 42
            [evolution]
            mode = [3, 1]
            [output]
            dir = "runs/a"
            "#,
        )
        .unwrap();
        assert_eq!((cfg.physics.l0, cfg.physics.m0), (2, 1));
        assert_eq!(cfg.discretization.l_ext, Some(18));
        assert_eq!(cfg.solver.symmetry, Symmetry::Y2);
        assert_eq!(cfg.solver.seed, 42);
        assert_eq!(cfg.evolution.mode, (3, 1));
        assert_eq!(cfg.output.dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn bad_input_is_a_usage_error() {
        for text in [
            "[solver]\namplitudes = []",
            "[solver]\ntolerance = 1e-3",
            "[plotting]\nx = 1",
            "[physics]\nl0 = 1\nm0 = 1",
            "[physics]\nl0 = 3\nm0 = 2\n[solver]\nsymmetry = \"y3\"",
            "[evolution]\ndt = 0.0",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Failure::Usage(_))), "{text}");
        }
    }

    #[test]
    fn env_caps_threads() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.solve_config(Some(3)).threads, 3);
        cfg.solver.threads = Some(8);
        assert_eq!(cfg.solve_config(Some(2)).threads, 2);
        assert_eq!(cfg.solve_config(Some(16)).threads, 8);
        assert_eq!(cfg.solve_config(None).threads, 8);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.discretization.l_ext = Some(20);
        cfg.solver.seed = 9;
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
