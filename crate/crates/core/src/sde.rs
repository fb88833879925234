//! Itô SDEs `dX = μ(X) dt + ν(X) dW` and their Euler–Maruyama simulation.
//!
//! A system is either given directly by its drift and dispersion, or as the
//! pushforward of a hidden system through an observation map. Pushforward
//! systems are stepped in hidden coordinates and mapped back, which is exact
//! in law and avoids writing out the Itô correction terms.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{Purpose, SeedSpec, Stream};

/// Any coordinate beyond this magnitude aborts a simulation.
pub const BLOW_UP_THRESHOLD: f64 = 1e8;

/// Drift and dispersion coefficients of an SDE.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    /// Writes `μ(x)` into `out` (length `dim`).
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// Writes `ν(x)` into `out`, a `dim x noise_dim` matrix.
    fn dispersion(&self, x: &[f64], out: &mut Matrix);
}

/// Diffeomorphism `x = f(h)` from hidden to observed coordinates.
pub trait ObservationMap: Send + Sync {
    fn forward(&self, hidden: &[f64]) -> Vec<f64>;
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// Jacobian of `forward` at a hidden point.
    fn jacobian(&self, hidden: &[f64]) -> Matrix;
}

#[derive(Clone)]
pub enum Realization {
    Direct(Arc<dyn Dynamics>),
    Pushforward { hidden: Arc<dyn Dynamics>, map: Arc<dyn ObservationMap> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub name: String,
    pub dim: usize,
    pub noise_dim: usize,
    /// Time-scale separation; also the upper bound on the simulation step.
    pub eps: f64,
    pub slow_dim: usize,
    pub fast_dim: usize,
}

#[derive(Clone)]
pub struct SdeSystem {
    pub info: SystemInfo,
    pub realization: Realization,
}

impl fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSystem").field("info", &self.info).finish_non_exhaustive()
    }
}

impl SdeSystem {
    pub fn direct(info: SystemInfo, dynamics: Arc<dyn Dynamics>) -> Self {
        debug_assert_eq!(info.dim, dynamics.dim());
        Self { info, realization: Realization::Direct(dynamics) }
    }

    pub fn pushforward(info: SystemInfo, hidden: Arc<dyn Dynamics>, map: Arc<dyn ObservationMap>) -> Self {
        Self { info, realization: Realization::Pushforward { hidden, map } }
    }

    pub fn name(&self) -> &str {
        &self.info.name
    }

    pub fn dim(&self) -> usize {
        self.info.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.info.noise_dim
    }

    pub fn eps(&self) -> f64 {
        self.info.eps
    }

    /// Default step: a tenth of the fast time scale.
    pub fn default_dt(&self) -> f64 {
        self.info.eps / 10.0
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "state of length {} for the {}-dimensional system {}",
                x.len(),
                self.dim(),
                self.name()
            )));
        }
        Ok(())
    }

    /// `μ(x)`. Only available for directly specified systems.
    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match &self.realization {
            Realization::Direct(d) => {
                let mut out = vec![0.0; self.dim()];
                d.drift(x, &mut out);
                Ok(out)
            }
            Realization::Pushforward { .. } => Err(Error::Domain(format!(
                "{} is simulated through its hidden system; no observed drift is available",
                self.name()
            ))),
        }
    }

    /// `ν(x)`; for pushforward systems `J_f(f⁻¹(x)) ν_hidden(f⁻¹(x))`.
    pub fn dispersion(&self, x: &[f64]) -> Result<Matrix> {
        self.check_dim(x)?;
        match &self.realization {
            Realization::Direct(d) => {
                let mut out = Matrix::zeros(self.dim(), self.noise_dim());
                d.dispersion(x, &mut out);
                Ok(out)
            }
            Realization::Pushforward { hidden, map } => {
                let h = map.inverse(x)?;
                let mut nu = Matrix::zeros(hidden.dim(), hidden.noise_dim());
                hidden.dispersion(&h, &mut nu);
                crate::linalg::matmul(&map.jacobian(&h), &nu)
            }
        }
    }

    /// `σ(x) = ν(x) ν(x)ᵀ`.
    pub fn covariance(&self, x: &[f64]) -> Result<Matrix> {
        Ok(self.dispersion(x)?.gram_rows())
    }

    /// A single Euler–Maruyama step with externally drawn increments.
    pub fn em_step(&self, x: &[f64], dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if dw.len() != self.noise_dim() {
            return Err(Error::Dimension(format!("{} increments for {} noise channels", dw.len(), self.noise_dim())));
        }
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("time step must be positive, got {dt}")));
        }
        let mut stepper = Stepper::new(self);
        let mut state = stepper.enter(x)?;
        stepper.step(&mut state, dt, dw);
        let out = stepper.observe(&state);
        if let Some(coord) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Overflow { coord });
        }
        Ok(out)
    }

    fn check_step(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Argument(format!("time step must be positive, got {dt}")));
        }
        if dt >= self.eps() {
            return Err(Error::Argument(format!(
                "time step {dt} must be below the fast time scale {} of {}",
                self.eps(),
                self.name()
            )));
        }
        Ok(())
    }
}

/// Reusable scratch space for stepping one system.
struct Stepper<'a> {
    dynamics: &'a dyn Dynamics,
    map: Option<&'a dyn ObservationMap>,
    drift: Vec<f64>,
    nu: Matrix,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a SdeSystem) -> Self {
        let (dynamics, map): (&dyn Dynamics, Option<&dyn ObservationMap>) = match &sys.realization {
            Realization::Direct(d) => (d.as_ref(), None),
            Realization::Pushforward { hidden, map } => (hidden.as_ref(), Some(map.as_ref())),
        };
        Self {
            dynamics,
            map,
            drift: vec![0.0; dynamics.dim()],
            nu: Matrix::zeros(dynamics.dim(), dynamics.noise_dim()),
        }
    }

    /// Converts an observed state into the coordinates that are stepped.
    fn enter(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.map {
            None => Ok(x.to_vec()),
            Some(m) => m.inverse(x),
        }
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        match self.map {
            None => state.to_vec(),
            Some(m) => m.forward(state),
        }
    }

    #[inline]
    fn step(&mut self, state: &mut [f64], dt: f64, dw: &[f64]) {
        self.dynamics.drift(state, &mut self.drift);
        self.dynamics.dispersion(state, &mut self.nu);
        let m = self.nu.cols();
        let nu = self.nu.as_slice();
        for (i, s) in state.iter_mut().enumerate() {
            let row = &nu[i * m..(i + 1) * m];
            let noise: f64 = row.iter().zip(dw).map(|(a, b)| a * b).sum();
            *s += self.drift[i] * dt + noise;
        }
    }

    fn noise_dim(&self) -> usize {
        self.dynamics.noise_dim()
    }

    /// Runs `n_steps` steps from `state` in place, drawing increments from `rng`.
    fn run(&mut self, state: &mut [f64], dt: f64, n_steps: usize, rng: &mut Stream, mut visit: impl FnMut(&[f64])) -> Result<()> {
        let mut dw = vec![0.0; self.noise_dim()];
        let sd = dt.sqrt();
        for step in 1..=n_steps {
            rng.fill_normal(&mut dw, sd);
            self.step(state, dt, &dw);
            check_state(state, step)?;
            visit(state);
        }
        Ok(())
    }
}

fn check_state(state: &[f64], step: usize) -> Result<()> {
    for (coord, &value) in state.iter().enumerate() {
        if !(value.abs() <= BLOW_UP_THRESHOLD) {
            return Err(Error::BlowUp { step, coord, value });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub seed: SeedSpec,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// CSV with header `t,x1,...,xD`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim()).map(|d| format!("x{d}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (n, s) in self.states.iter().enumerate() {
            write!(w, "{}", n as f64 * self.dt)?;
            for v in s {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Sidecar record written next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub system: String,
    pub dt: f64,
    pub eps: f64,
    pub n_steps: usize,
    pub seed: SeedSpec,
}

/// Euler–Maruyama path with `n_steps + 1` states starting at `x0`.
pub fn simulate_path(sys: &SdeSystem, x0: &[f64], dt: f64, n_steps: usize, seed: &SeedSpec) -> Result<Trajectory> {
    sys.check_dim(x0)?;
    sys.check_step(dt)?;
    check_state(x0, 0)?;
    let mut stepper = Stepper::new(sys);
    let mut state = stepper.enter(x0)?;
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.to_vec());
    let mut rng = seed.derive(Purpose::Path, 0).stream();
    let map = stepper.map;
    let mut failure = None;
    stepper.run(&mut state, dt, n_steps, &mut rng, |s| {
        let x = match map {
            None => s.to_vec(),
            Some(m) => m.forward(s),
        };
        if failure.is_none() {
            if let Err(e) = check_state(&x, states.len()) {
                failure = Some(e);
            }
        }
        states.push(x);
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Trajectory { dt, states, seed: seed.clone() })
}

/// Final states of `reps` independent paths of `burst_steps` steps from `x0`.
///
/// Repetition `j` draws from the stream `seed / (Burst, j)`, so the result
/// does not depend on how the repetitions are scheduled across threads.
pub fn simulate_bursts(
    sys: &SdeSystem,
    x0: &[f64],
    dt: f64,
    burst_steps: usize,
    reps: usize,
    seed: &SeedSpec,
) -> Result<Vec<Vec<f64>>> {
    sys.check_dim(x0)?;
    sys.check_step(dt)?;
    if reps == 0 {
        return Err(Error::Argument("at least one burst repetition is required".into()));
    }
    let start = Stepper::new(sys).enter(x0)?;
    (0..reps)
        .into_par_iter()
        .map(|j| {
            let mut stepper = Stepper::new(sys);
            let mut state = start.clone();
            let mut rng = seed.derive(Purpose::Burst, j as u64).stream();
            stepper.run(&mut state, dt, burst_steps, &mut rng, |_| {})?;
            let x = stepper.observe(&state);
            check_state(&x, burst_steps)?;
            Ok(x)
        })
        .collect()
}

/// Serial variant of [`simulate_bursts`] with identical output; used where the
/// caller already parallelises over an outer loop.
pub(crate) fn simulate_bursts_serial(
    sys: &SdeSystem,
    x0: &[f64],
    dt: f64,
    burst_steps: usize,
    reps: usize,
    seed: &SeedSpec,
    mut visit: impl FnMut(&[f64]),
) -> Result<()> {
    sys.check_dim(x0)?;
    sys.check_step(dt)?;
    if reps == 0 {
        return Err(Error::Argument("at least one burst repetition is required".into()));
    }
    let mut stepper = Stepper::new(sys);
    let start = stepper.enter(x0)?;
    let mut state = start.clone();
    for j in 0..reps {
        state.copy_from_slice(&start);
        let mut rng = seed.derive(Purpose::Burst, j as u64).stream();
        stepper.run(&mut state, dt, burst_steps, &mut rng, |_| {})?;
        match stepper.map {
            None => {
                check_state(&state, burst_steps)?;
                visit(&state)
            }
            Some(m) => {
                let x = m.forward(&state);
                check_state(&x, burst_steps)?;
                visit(&x)
            }
        }
    }
    Ok(())
}
