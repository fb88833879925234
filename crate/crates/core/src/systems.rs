//! The hidden/observed test systems and their ground-truth slow maps.
//!
//! * `sin2d`: a periodic slow variable observed through `(y + sin z, z)`.
//! * `halfmoons`: decoupled slow drift and fast relaxation, wrapped into
//!   spirals by a polar-type map.
//! * `quad{N}s{M}f`: `N` unit-rate slow Brownian motions and `M` fast
//!   Ornstein–Uhlenbeck processes, with the first `N` slow coordinates
//!   shifted by the squares of the matching fast ones.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::sde::{Dynamics, ObservationMap, Realization, SdeSystem, SystemInfo};

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_HALFMOONS: [f64; 4] = [1e-3, 1e-3, 2.5e-2, 2.5e-2];

/// Observation map together with the ground-truth slow map.
pub trait SlowFastMap: ObservationMap {
    fn slow_map(&self, x: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone)]
pub struct ObservedPair {
    pub hidden: SdeSystem,
    pub observed: SdeSystem,
    map: Arc<dyn SlowFastMap>,
}

impl fmt::Debug for ObservedPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObservedPair").field("observed", &self.observed.info).finish_non_exhaustive()
    }
}

impl ObservedPair {
    pub fn name(&self) -> &str {
        self.observed.name()
    }

    pub fn slow_dim(&self) -> usize {
        self.observed.info.slow_dim
    }

    pub fn fast_dim(&self) -> usize {
        self.observed.info.fast_dim
    }

    /// `x = f(y, z)`.
    pub fn obs_map(&self, hidden: &[f64]) -> Vec<f64> {
        self.map.forward(hidden)
    }

    /// `(y, z) = f⁻¹(x)`.
    pub fn obs_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.map.inverse(x)
    }

    pub fn slow_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.map.slow_map(x)
    }

    pub fn obs_jacobian(&self, hidden: &[f64]) -> Matrix {
        self.map.jacobian(hidden)
    }

    /// The observed process realised by stepping the hidden system and
    /// mapping each state through `f`. Same law as `observed`, without the
    /// discretisation error of integrating the observed equations directly.
    pub fn exact_observed(&self) -> Result<SdeSystem> {
        let Realization::Direct(hidden) = &self.hidden.realization else {
            return Err(Error::Config("hidden system must be given by its coefficients".into()));
        };
        let map: Arc<dyn ObservationMap> = self.map.clone();
        Ok(SdeSystem::pushforward(self.observed.info.clone(), hidden.clone(), map))
    }

    /// The system that generates observed paths under `scheme`.
    pub fn simulator(&self, scheme: Scheme) -> Result<SdeSystem> {
        match scheme {
            Scheme::Observed => Ok(self.observed.clone()),
            Scheme::Hidden => self.exact_observed(),
        }
    }
}

/// How observed paths are integrated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler–Maruyama on the observed equations.
    #[default]
    Observed,
    /// Euler–Maruyama on the hidden equations, mapped through `f`.
    Hidden,
}

/// `J_f σ_hidden J_fᵀ` evaluated at `f⁻¹(x)`.
pub fn pushforward_covariance(pair: &ObservedPair, x: &[f64]) -> Result<Matrix> {
    let h = pair.obs_inverse(x)?;
    let nu = pair.hidden.dispersion(&h)?;
    let jnu = matmul(&pair.obs_jacobian(&h), &nu)?;
    Ok(jnu.gram_rows())
}

// ---------------------------------------------------------------- sin2d

struct Sin2dHidden {
    eps: f64,
}

impl Dynamics for Sin2dHidden {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn drift(&self, h: &[f64], out: &mut [f64]) {
        let (y, z) = (h[0], h[1]);
        out[0] = z.sin();
        out[1] = (y.sin() - z) / self.eps;
    }
    fn dispersion(&self, h: &[f64], out: &mut Matrix) {
        let z = h[1];
        out[(0, 0)] = (1.0 + 0.5 * z.sin()).sqrt();
        out[(0, 1)] = 0.0;
        out[(1, 0)] = 0.0;
        out[(1, 1)] = 1.0 / self.eps.sqrt();
    }
}

/// Observed sin2d dynamics, obtained from the hidden system by Itô's formula.
struct Sin2dObserved {
    eps: f64,
}

impl Dynamics for Sin2dObserved {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let (s2, c2) = x[1].sin_cos();
        let relax = ((x[0] - s2).sin() - x[1]) / self.eps;
        out[0] = s2 + c2 * relax - s2 / (2.0 * self.eps);
        out[1] = relax;
    }
    fn dispersion(&self, x: &[f64], out: &mut Matrix) {
        let (s2, c2) = x[1].sin_cos();
        let fast = 1.0 / self.eps.sqrt();
        out[(0, 0)] = (1.0 + 0.5 * s2).sqrt();
        out[(0, 1)] = c2 * fast;
        out[(1, 0)] = 0.0;
        out[(1, 1)] = fast;
    }
}

struct Sin2dMap;

impl ObservationMap for Sin2dMap {
    fn forward(&self, h: &[f64]) -> Vec<f64> {
        vec![h[0] + h[1].sin(), h[1]]
    }
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[0] - x[1].sin(), x[1]])
    }
    fn jacobian(&self, h: &[f64]) -> Matrix {
        Matrix::from_vec(2, 2, vec![1.0, h[1].cos(), 0.0, 1.0]).expect("2x2")
    }
}

impl SlowFastMap for Sin2dMap {
    fn slow_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![x[0] - x[1].sin()])
    }
}

pub fn make_sin2d(eps: f64) -> Result<ObservedPair> {
    check_eps(eps)?;
    let info = |name: &str| SystemInfo { name: name.into(), dim: 2, noise_dim: 2, eps, slow_dim: 1, fast_dim: 1 };
    Ok(ObservedPair {
        hidden: SdeSystem::direct(info("sin2d-hidden"), Arc::new(Sin2dHidden { eps })),
        observed: SdeSystem::direct(info("sin2d"), Arc::new(Sin2dObserved { eps })),
        map: Arc::new(Sin2dMap),
    })
}

// ------------------------------------------------------------ halfmoons

struct HalfMoonsHidden {
    a: [f64; 4],
}

impl Dynamics for HalfMoonsHidden {
    fn dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn drift(&self, h: &[f64], out: &mut [f64]) {
        out[0] = self.a[0];
        out[1] = self.a[2] * (1.0 - h[1]);
    }
    fn dispersion(&self, _h: &[f64], out: &mut Matrix) {
        out[(0, 0)] = self.a[1];
        out[(0, 1)] = 0.0;
        out[(1, 0)] = 0.0;
        out[(1, 1)] = self.a[3];
    }
}

struct HalfMoonsMap;

impl ObservationMap for HalfMoonsMap {
    fn forward(&self, h: &[f64]) -> Vec<f64> {
        let (y, z) = (h[0], h[1]);
        let (s, c) = (y + z - 1.0).sin_cos();
        vec![z * c, z * s]
    }

    /// Returns the branch with `y + z - 1` in `(-π, π]`.
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return Err(Error::Domain("half-moons observation map is not invertible at the origin".into()));
        }
        let theta = x[1].atan2(x[0]);
        Ok(vec![theta + 1.0 - r, r])
    }

    fn jacobian(&self, h: &[f64]) -> Matrix {
        let (y, z) = (h[0], h[1]);
        let (s, c) = (y + z - 1.0).sin_cos();
        Matrix::from_vec(2, 2, vec![-z * s, c - z * s, z * c, s + z * c]).expect("2x2")
    }
}

impl SlowFastMap for HalfMoonsMap {
    fn slow_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return Err(Error::Domain("half-moons slow map is undefined at the origin".into()));
        }
        Ok(vec![x[1].atan2(x[0]) + 1.0 - r])
    }
}

/// Half-moons pair. The observed system is realised by pushing hidden paths
/// through the observation map; its `eps` records the fast relaxation time
/// `1/a3`, which bounds the simulation step.
pub fn make_halfmoons(a: [f64; 4]) -> Result<ObservedPair> {
    if !(a[2] > 0.0) || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("half-moons constants must be finite with a3 > 0, got {a:?}")));
    }
    let eps = 1.0 / a[2];
    let info = |name: &str| SystemInfo { name: name.into(), dim: 2, noise_dim: 2, eps, slow_dim: 1, fast_dim: 1 };
    let hidden: Arc<dyn Dynamics> = Arc::new(HalfMoonsHidden { a });
    let map = Arc::new(HalfMoonsMap);
    Ok(ObservedPair {
        hidden: SdeSystem::direct(info("halfmoons-hidden"), hidden.clone()),
        observed: SdeSystem::pushforward(info("halfmoons"), hidden, map.clone()),
        map,
    })
}

// ----------------------------------------------------------------- quad

struct QuadHidden {
    slow: usize,
    fast: usize,
    eps: f64,
}

impl Dynamics for QuadHidden {
    fn dim(&self) -> usize {
        self.slow + self.fast
    }
    fn noise_dim(&self) -> usize {
        self.slow + self.fast
    }
    fn drift(&self, h: &[f64], out: &mut [f64]) {
        out[..self.slow].fill(1.0);
        for d in self.slow..self.dim() {
            out[d] = -h[d] / self.eps;
        }
    }
    fn dispersion(&self, _h: &[f64], out: &mut Matrix) {
        out.as_mut_slice().fill(0.0);
        let fast = 1.0 / self.eps.sqrt();
        for d in 0..self.dim() {
            out[(d, d)] = if d < self.slow { 1.0 } else { fast };
        }
    }
}

struct QuadObserved {
    slow: usize,
    fast: usize,
    eps: f64,
}

impl Dynamics for QuadObserved {
    fn dim(&self) -> usize {
        self.slow + self.fast
    }
    fn noise_dim(&self) -> usize {
        self.slow + self.fast
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        let s = self.slow;
        for d in 0..s {
            let z = x[s + d];
            out[d] = (1.0 + self.eps - 2.0 * z * z) / self.eps;
        }
        for d in s..self.dim() {
            out[d] = -x[d] / self.eps;
        }
    }
    fn dispersion(&self, x: &[f64], out: &mut Matrix) {
        out.as_mut_slice().fill(0.0);
        let s = self.slow;
        let fast = 1.0 / self.eps.sqrt();
        for d in 0..s {
            out[(d, d)] = 1.0;
            out[(d, s + d)] = 2.0 * x[s + d] * fast;
        }
        for d in s..self.dim() {
            out[(d, d)] = fast;
        }
    }
}

struct QuadMap {
    slow: usize,
    fast: usize,
}

impl ObservationMap for QuadMap {
    fn forward(&self, h: &[f64]) -> Vec<f64> {
        let mut x = h.to_vec();
        for d in 0..self.slow {
            let z = h[self.slow + d];
            x[d] += z * z;
        }
        x
    }
    fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for d in 0..self.slow {
            let z = x[self.slow + d];
            h[d] -= z * z;
        }
        Ok(h)
    }
    fn jacobian(&self, h: &[f64]) -> Matrix {
        let n = self.slow + self.fast;
        let mut j = Matrix::identity(n);
        for d in 0..self.slow {
            j[(d, self.slow + d)] = 2.0 * h[self.slow + d];
        }
        j
    }
}

impl SlowFastMap for QuadMap {
    fn slow_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.slow)
            .map(|d| {
                let z = x[self.slow + d];
                x[d] - z * z
            })
            .collect())
    }
}

pub fn make_quad(slow: usize, fast: usize, eps: f64) -> Result<ObservedPair> {
    check_eps(eps)?;
    if slow == 0 || slow > fast {
        return Err(Error::Config(format!(
            "quadratic system needs 1 <= slow dimension <= fast dimension, got {slow} and {fast}"
        )));
    }
    let dim = slow + fast;
    let info = |name: String| SystemInfo { name, dim, noise_dim: dim, eps, slow_dim: slow, fast_dim: fast };
    Ok(ObservedPair {
        hidden: SdeSystem::direct(info(format!("quad{slow}s{fast}f-hidden")), Arc::new(QuadHidden { slow, fast, eps })),
        observed: SdeSystem::direct(info(format!("quad{slow}s{fast}f")), Arc::new(QuadObserved { slow, fast, eps })),
        map: Arc::new(QuadMap { slow, fast }),
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("time-scale separation must be positive, got {eps}")));
    }
    Ok(())
}

// ------------------------------------------------------------- registry

/// Parameters that select and configure a registered system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// `sin2d`, `halfmoons`, or `quad{N}s{M}f`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Half-moons constants `a1..a4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<[f64; 4]>,
}

impl SystemSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.into(), eps: None, a: None }
    }

    /// Fills in the documented defaults.
    pub fn resolved(&self) -> Result<SystemSpec> {
        let mut s = self.clone();
        match parse_name(&self.name)? {
            Kind::Sin2d | Kind::Quad(..) => {
                s.eps.get_or_insert(DEFAULT_EPS);
            }
            Kind::HalfMoons => {
                s.a.get_or_insert(DEFAULT_HALFMOONS);
            }
        }
        Ok(s)
    }

    pub fn build(&self) -> Result<ObservedPair> {
        let s = self.resolved()?;
        match parse_name(&s.name)? {
            Kind::Sin2d => make_sin2d(s.eps.unwrap_or(DEFAULT_EPS)),
            Kind::HalfMoons => make_halfmoons(s.a.unwrap_or(DEFAULT_HALFMOONS)),
            Kind::Quad(slow, fast) => make_quad(slow, fast, s.eps.unwrap_or(DEFAULT_EPS)),
        }
    }
}

enum Kind {
    Sin2d,
    HalfMoons,
    Quad(usize, usize),
}

fn parse_name(name: &str) -> Result<Kind> {
    match name {
        "sin2d" => return Ok(Kind::Sin2d),
        "halfmoons" => return Ok(Kind::HalfMoons),
        _ => {}
    }
    let bad = || Error::Config(format!("unknown system `{name}` (expected sin2d, halfmoons or quadNsMf)"));
    let rest = name.strip_prefix("quad").ok_or_else(bad)?;
    let rest = rest.strip_suffix('f').unwrap_or(rest);
    let (slow, fast) = rest.split_once('s').ok_or_else(bad)?;
    let slow = slow.parse().map_err(|_| bad())?;
    let fast = fast.parse().map_err(|_| bad())?;
    Ok(Kind::Quad(slow, fast))
}

/// Looks a system up by registry name with default parameters.
pub fn by_name(name: &str) -> Result<ObservedPair> {
    SystemSpec::named(name).build()
}
