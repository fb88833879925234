//! Supervised datasets of `(x, P(x), σ(x))` triplets.
//!
//! States come from subsampling one long trajectory of the observed system.
//! Each state is paired with its projection onto the slow manifold, taken as
//! the mean endpoint of many short bursts of horizon `τ`, and with the local
//! noise covariance.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix};
use crate::rng::{Purpose, SeedSpec};
use crate::sde::{simulate_bursts_serial, simulate_path, SdeSystem, Trajectory};
use crate::systems::{ObservedPair, Scheme};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BURSTS: usize = 1000;
pub const DEFAULT_TAU_MULTIPLE: f64 = 5.0;
pub const DEFAULT_COV_REPS: usize = 100_000;
/// Smallest consecutive-eigenvalue ratio accepted as a spectral gap.
pub const DEFAULT_GAP_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetInstance {
    pub x: Vec<f64>,
    pub px: Vec<f64>,
    pub cov: Matrix,
}

impl DatasetInstance {
    /// Finite entries and a positive semidefinite covariance.
    pub fn validate(&self) -> Result<()> {
        let d = self.x.len();
        if self.px.len() != d || self.cov.rows() != d || self.cov.cols() != d {
            return Err(Error::Dimension(format!("instance with state of length {d} has inconsistent parts")));
        }
        if self.x.iter().chain(&self.px).any(|v| !v.is_finite()) || !self.cov.is_finite() {
            return Err(Error::Format("instance has non-finite entries".into()));
        }
        let eig = sym_eig(&self.cov)?;
        let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if eig.eigenvalues[0] < -1e-10 * scale {
            return Err(Error::Format(format!("covariance is not positive semidefinite (eigenvalue {})", eig.eigenvalues[0])));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub system: String,
    pub dt: f64,
    pub tau: Option<f64>,
    #[serde(rename = "J")]
    pub bursts: usize,
    #[serde(rename = "M")]
    pub count: usize,
    pub seed: u64,
    pub eps: f64,
    pub format_version: u32,
    #[serde(default)]
    pub x0: Vec<f64>,
    #[serde(default)]
    pub n_steps: usize,
    #[serde(default)]
    pub empirical_covariance: bool,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub part: String,
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub instances: Vec<DatasetInstance>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    x: Vec<f64>,
    px: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.instances.first().map(|i| i.x.len())
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.instances.iter().map(|i| i.x.clone()).collect()
    }

    pub fn targets(&self) -> Vec<Vec<f64>> {
        self.instances.iter().map(|i| i.px.clone()).collect()
    }

    /// Newline-delimited JSON: one metadata line, then one line per instance.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.meta)?;
        writeln!(w)?;
        for inst in &self.instances {
            let rec = Record { x: inst.x.clone(), px: inst.px.clone(), cov: inst.cov.to_rows() };
            serde_json::to_writer(&mut w, &rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_ndjson_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(buf)
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Dataset> {
        let mut lines = r.lines();
        let head = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let raw: serde_json::Value = serde_json::from_str(&head)?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(Error::Format(format!("unsupported dataset format_version {v}"))),
            None => return Err(Error::Format("dataset metadata line lacks format_version".into())),
        }
        let meta: DatasetMeta = serde_json::from_value(raw)?;
        let mut instances = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("dataset record {}: {e}", n + 1)))?;
            let cov = Matrix::from_rows(&rec.cov)?;
            let inst = DatasetInstance { x: rec.x, px: rec.px, cov };
            inst.validate()?;
            instances.push(inst);
        }
        if let Some(first) = instances.first() {
            let d = first.x.len();
            if instances.iter().any(|i| i.x.len() != d) {
                return Err(Error::Format("dataset mixes state dimensions".into()));
            }
        }
        Ok(Dataset { meta, instances })
    }
}

/// `m` distinct trajectory states chosen uniformly, kept in time order.
pub fn subsample(traj: &Trajectory, m: usize, seed: &SeedSpec) -> Result<Vec<Vec<f64>>> {
    let n = traj.len();
    if m > n {
        return Err(Error::Argument(format!("cannot select {m} points from a trajectory of {n} states")));
    }
    let mut rng = seed.derive(Purpose::Subsample, 0).stream();
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| traj.states[i].clone()).collect())
}

/// Burst horizon: `c` times the mean of `1/|λ|` over the `fast_dim` largest
/// eigenvalues of every covariance.
pub fn choose_tau(covariances: &[Matrix], fast_dim: usize, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Argument(format!("tau multiple must be positive, got {c}")));
    }
    if fast_dim == 0 {
        return Err(Error::Argument("at least one fast direction is required".into()));
    }
    if covariances.is_empty() {
        return Err(Error::Argument("no covariances to choose tau from".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for cov in covariances {
        let eig = sym_eig(cov)?;
        let n = eig.dim();
        if fast_dim > n {
            return Err(Error::Dimension(format!("{fast_dim} fast eigenvalues requested from a {n}x{n} covariance")));
        }
        for &lambda in &eig.eigenvalues[n - fast_dim..] {
            if lambda == 0.0 {
                return Err(Error::DegenerateSpectrum("zero eigenvalue in the fast cluster".into()));
            }
            sum += 1.0 / lambda.abs();
            count += 1;
        }
    }
    Ok(c * sum / count as f64)
}

/// Number of Euler steps in a burst of horizon `tau`.
pub fn burst_steps(tau: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be positive, got {dt}")));
    }
    if !(tau >= dt * (1.0 - 1e-12)) {
        return Err(Error::Argument(format!("burst horizon {tau} is shorter than the step {dt}")));
    }
    Ok((tau / dt).round() as usize)
}

/// Mean burst endpoint and the Monte-Carlo standard error of each coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstMean {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

pub fn burst_mean(sys: &SdeSystem, x: &[f64], tau: f64, dt: f64, reps: usize, seed: &SeedSpec) -> Result<BurstMean> {
    let steps = burst_steps(tau, dt)?;
    let d = sys.dim();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    // shift by x for a numerically stable second moment
    simulate_bursts_serial(sys, x, dt, steps, reps, seed, |end| {
        for k in 0..d {
            let v = end[k] - x[k];
            sum[k] += v;
            sq[k] += v * v;
        }
    })?;
    let n = reps as f64;
    let mean: Vec<f64> = (0..d).map(|k| x[k] + sum[k] / n).collect();
    let std_error = (0..d)
        .map(|k| {
            if reps < 2 {
                return 0.0;
            }
            let m = sum[k] / n;
            let var = ((sq[k] - n * m * m) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(BurstMean { mean, std_error })
}

/// `P(x)`: coordinate-wise mean of `reps` burst endpoints at horizon `tau`.
pub fn project_point(sys: &SdeSystem, x: &[f64], tau: f64, dt: f64, reps: usize, seed: &SeedSpec) -> Result<Vec<f64>> {
    Ok(burst_mean(sys, x, tau, dt, reps, seed)?.mean)
}

/// `σ(x) = ν(x) ν(x)ᵀ`.
pub fn covariance_analytic(sys: &SdeSystem, x: &[f64]) -> Result<Matrix> {
    sys.covariance(x)
}

/// Estimates `σ(x)` from `reps` one-step bursts: the sample covariance of the
/// endpoint cloud divided by `dt`.
pub fn covariance_empirical(sys: &SdeSystem, x: &[f64], dt: f64, reps: usize, seed: &SeedSpec) -> Result<Matrix> {
    if reps < 2 {
        return Err(Error::Argument("covariance estimation needs at least two repetitions".into()));
    }
    let d = sys.dim();
    let mut sum = vec![0.0; d];
    let mut outer = Matrix::zeros(d, d);
    simulate_bursts_serial(sys, x, dt, 1, reps, seed, |end| {
        for i in 0..d {
            let vi = end[i] - x[i];
            sum[i] += vi;
            for j in 0..=i {
                outer[(i, j)] += vi * (end[j] - x[j]);
            }
        }
    })?;
    let n = reps as f64;
    let mut cov = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = (outer[(i, j)] / n - (sum[i] / n) * (sum[j] / n)) / dt;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Slow dimension from covariance spectra (each sorted ascending).
///
/// At every point the largest ratio between consecutive eigenvalues is
/// located; if it exceeds `gap_ratio`, the eigenvalues below it count as slow.
/// The answer is the most common count among points with a gap, provided
/// such points are a strict majority.
pub fn estimate_slow_dim(spectra: &[Vec<f64>], gap_ratio: f64) -> Result<usize> {
    if !(gap_ratio > 1.0) {
        return Err(Error::Argument(format!("gap ratio must exceed 1, got {gap_ratio}")));
    }
    let d = spectra.first().map_or(0, Vec::len);
    if d < 2 || spectra.iter().any(|s| s.len() != d) {
        return Err(Error::Dimension("spectra must share a length of at least 2".into()));
    }
    let mut votes = vec![0usize; d];
    let mut gapped = 0;
    for s in spectra {
        if let Some(slow) = slow_count(s, gap_ratio) {
            votes[slow] += 1;
            gapped += 1;
        }
    }
    if 2 * gapped <= spectra.len() {
        return Err(Error::NoGap { ratio: gap_ratio, found: gapped, total: spectra.len() });
    }
    let best = (1..d).max_by_key(|&k| (votes[k], std::cmp::Reverse(k))).unwrap_or(1);
    Ok(best)
}

/// Number of eigenvalues below the largest multiplicative gap, if that gap
/// exceeds `gap_ratio`.
pub fn slow_count(spectrum: &[f64], gap_ratio: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for k in 0..spectrum.len().saturating_sub(1) {
        let lo = spectrum[k].abs().max(f64::MIN_POSITIVE);
        let ratio = spectrum[k + 1].abs() / lo;
        if best.map_or(true, |(r, _)| ratio > r) {
            best = Some((ratio, k + 1));
        }
    }
    best.filter(|&(r, _)| r > gap_ratio).map(|(_, k)| k)
}

/// Parameters of dataset generation. Unset fields take documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub x0: Vec<f64>,
    /// Defaults to a tenth of the system's fast time scale.
    #[serde(default)]
    pub dt: Option<f64>,
    pub n_steps: usize,
    #[serde(rename = "M")]
    pub count: usize,
    /// Burst horizon; chosen from the covariance spectra when unset.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_tau_multiple")]
    pub tau_multiple: f64,
    #[serde(default = "default_bursts", rename = "J")]
    pub bursts: usize,
    #[serde(default)]
    pub empirical_covariance: bool,
    #[serde(default = "default_cov_reps")]
    pub cov_reps: usize,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_tau_multiple() -> f64 {
    DEFAULT_TAU_MULTIPLE
}

fn default_bursts() -> usize {
    DEFAULT_BURSTS
}

fn default_cov_reps() -> usize {
    DEFAULT_COV_REPS
}

impl DatasetConfig {
    pub fn new(x0: Vec<f64>, n_steps: usize, count: usize) -> Self {
        Self {
            x0,
            dt: None,
            n_steps,
            count,
            tau: None,
            tau_multiple: DEFAULT_TAU_MULTIPLE,
            bursts: DEFAULT_BURSTS,
            empirical_covariance: false,
            cov_reps: DEFAULT_COV_REPS,
            scheme: Scheme::Observed,
        }
    }
}

/// Simulates, subsamples and labels a dataset for the observed system.
pub fn build_dataset(pair: &ObservedPair, cfg: &DatasetConfig, seed: &SeedSpec) -> Result<Dataset> {
    let sys = &pair.simulator(cfg.scheme)?;
    let dt = cfg.dt.unwrap_or_else(|| sys.default_dt());
    if cfg.bursts == 0 {
        return Err(Error::Config("J (burst repetitions) must be at least 1".into()));
    }
    let path = simulate_path(sys, &cfg.x0, dt, cfg.n_steps, seed)?;
    let points = subsample(&path, cfg.count, seed)?;

    let covs: Vec<Matrix> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if cfg.empirical_covariance {
                covariance_empirical(sys, x, dt, cfg.cov_reps, &seed.derive(Purpose::Covariance, i as u64))
            } else {
                covariance_analytic(sys, x)
            }
        })
        .collect::<Result<_>>()?;

    let tau = match (cfg.tau, covs.is_empty()) {
        (Some(t), _) => Some(t),
        (None, false) => Some(choose_tau(&covs, pair.fast_dim(), cfg.tau_multiple)?),
        (None, true) => None,
    };

    let projections: Vec<Vec<f64>> = match tau {
        Some(tau) => points
            .par_iter()
            .enumerate()
            .map(|(i, x)| project_point(sys, x, tau, dt, cfg.bursts, &seed.derive(Purpose::Projection, i as u64)))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let instances: Vec<DatasetInstance> = points
        .into_iter()
        .zip(projections)
        .zip(covs)
        .map(|((x, px), cov)| DatasetInstance { x, px, cov })
        .collect();
    for inst in &instances {
        inst.validate()?;
    }

    Ok(Dataset {
        meta: DatasetMeta {
            system: sys.name().to_string(),
            dt,
            tau,
            bursts: cfg.bursts,
            count: instances.len(),
            seed: seed.master_seed,
            eps: sys.eps(),
            format_version: FORMAT_VERSION,
            x0: cfg.x0.clone(),
            n_steps: cfg.n_steps,
            empirical_covariance: cfg.empirical_covariance,
            scheme: cfg.scheme,
            split: None,
        },
        instances,
    })
}

/// Size of the first part for a split fraction, robust to `0.7 * 2010`
/// landing a hair above an integer.
pub fn split_size(count: usize, fraction: f64) -> usize {
    let raw = fraction * count as f64;
    ((raw - 1e-9 * raw.max(1.0)).ceil().max(0.0) as usize).min(count)
}

/// Random disjoint partition into `ceil(fraction * M)` and the remainder,
/// each kept in original order.
pub fn split(ds: &Dataset, fraction: f64, seed: &SeedSpec) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = ds.len();
    let first = split_size(n, fraction);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seed.derive(Purpose::Split, 0).stream();
    idx.shuffle(&mut rng);
    let (a, b) = idx.split_at(first);
    let part = |ids: &[usize], name: &str| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        let mut meta = ds.meta.clone();
        meta.count = ids.len();
        meta.split = Some(SplitInfo { part: name.into(), fraction, seed: seed.master_seed });
        Dataset { meta, instances: ids.into_iter().map(|i| ds.instances[i].clone()).collect() }
    };
    Ok((part(a, "train"), part(b, "validation")))
}
