//! Evaluation of trained encoders.
//!
//! The central measure is the orthogonality error: at a point `x`, the fast
//! eigenvectors of the local noise covariance are stacked next to the
//! encoder gradient rows, and the error is how far that square matrix is
//! from orthogonal. The rest of the module summarises per-point values and
//! exports plot data.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{slow_count, Dataset, DatasetInstance};
use crate::error::{Error, Result};
use crate::linalg::{dot, frobenius_norm, matmul, norm2, sym_eig, Matrix};
use crate::rng::SeedSpec;
use crate::sde::{simulate_bursts, SdeSystem};
use crate::net::Network;

/// `‖UᵀU − I‖_F / √D` for `U = [fast | gradᵀ]`.
///
/// `fast` is `D x Df` with orthonormal columns and `grad` is `Ds x D`. With
/// `normalize`, the gradient rows are first orthonormalised by Gram–Schmidt.
pub fn ortho_error_from_parts(fast: &Matrix, grad: &Matrix, normalize: bool) -> Result<f64> {
    let d = fast.rows();
    if grad.cols() != d || fast.cols() + grad.rows() != d {
        return Err(Error::Dimension(format!(
            "{} fast directions and {} gradient rows do not span dimension {d}",
            fast.cols(),
            grad.rows()
        )));
    }
    let rows: Vec<Vec<f64>> = if normalize { orthonormal_rows(grad)? } else { grad.to_rows() };
    let mut u = Matrix::zeros(d, d);
    for i in 0..d {
        for c in 0..fast.cols() {
            u[(i, c)] = fast[(i, c)];
        }
        for (r, row) in rows.iter().enumerate() {
            u[(i, fast.cols() + r)] = row[i];
        }
    }
    let gram = matmul(&u.transpose(), &u)?;
    let dev = gram.sub(&Matrix::identity(d))?;
    Ok(frobenius_norm(&dev) / (d as f64).sqrt())
}

/// Modified Gram–Schmidt on the rows of `m`.
fn orthonormal_rows(m: &Matrix) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let orig = m.row(i);
        let scale = norm2(orig);
        let mut v = orig.to_vec();
        for q in &out {
            let p = dot(&v, q);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= p * qi;
            }
        }
        let n = norm2(&v);
        if !(n > 1e-12 * scale) || !n.is_finite() {
            return Err(Error::DegenerateEncoder(format!("encoder gradient row {i} is zero or dependent")));
        }
        out.push(v.into_iter().map(|x| x / n).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthoError {
    /// With orthonormalised gradient rows.
    pub normalized: f64,
    /// With the raw transposed Jacobian.
    pub raw: f64,
}

/// Orthogonality error of the encoder at `x` against the `fast_dim`
/// dominant eigenvectors of `cov`.
pub fn orthogonality_error(net: &Network, x: &[f64], cov: &Matrix, fast_dim: usize) -> Result<OrthoError> {
    if net.slow_dim() + fast_dim != x.len() {
        return Err(Error::Dimension(format!(
            "slow dimension {} plus fast dimension {fast_dim} differs from state dimension {}",
            net.slow_dim(),
            x.len()
        )));
    }
    let eig = sym_eig(cov)?;
    let fast = eig.top_eigenvectors(fast_dim);
    let jac = net.input_jacobian(x)?;
    Ok(OrthoError {
        normalized: ortho_error_from_parts(&fast, &jac, true)?,
        raw: ortho_error_from_parts(&fast, &jac, false)?,
    })
}

/// Errors at every dataset point, in dataset order.
pub fn orthogonality_errors(net: &Network, data: &[DatasetInstance], fast_dim: usize) -> Result<Vec<OrthoError>> {
    data.par_iter().map(|inst| orthogonality_error(net, &inst.x, &inst.cov, fast_dim)).collect()
}

pub fn ortho_csv(errors: &[OrthoError]) -> String {
    let mut out = String::from("index,E,E_raw\n");
    for (i, e) in errors.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{}", e.normalized, e.raw);
    }
    out
}

/// Box-plot statistics with type-7 quantiles and 1.5 IQR whiskers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub min: f64,
    pub lower_whisker: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub upper_whisker: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn error_stats(values: &[f64]) -> Result<ErrorStats> {
    if values.is_empty() {
        return Err(Error::Argument("statistics of an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument("statistics of a list containing NaN".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let lower_whisker = *s.iter().find(|&&v| v >= lo_fence).expect("q1 lies inside");
    let upper_whisker = *s.iter().rev().find(|&&v| v <= hi_fence).expect("q3 lies inside");
    Ok(ErrorStats {
        count: s.len(),
        min: s[0],
        lower_whisker: lower_whisker.min(q1),
        q1,
        median,
        q3,
        upper_whisker: upper_whisker.max(q3),
        max: s[s.len() - 1],
        mean: s.iter().sum::<f64>() / s.len() as f64,
    })
}

/// Least-squares affine map from true slow values to encoder values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    /// `coefficients[k][m]`: weight of slow component `m` in encoder output `k`.
    pub coefficients: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    pub r2_per_output: Vec<f64>,
    pub r2: f64,
}

/// Regresses `encoded` on `slow_true` with an intercept.
pub fn affine_fit(encoded: &[Vec<f64>], slow_true: &[Vec<f64>]) -> Result<AffineFit> {
    let n = encoded.len();
    if slow_true.len() != n {
        return Err(Error::Dimension(format!("{n} encoder values for {} slow values", slow_true.len())));
    }
    let m = slow_true.first().map_or(0, Vec::len);
    let k = encoded.first().map_or(0, Vec::len);
    if m == 0 || k == 0 {
        return Err(Error::Argument("affine fit needs non-empty vectors".into()));
    }
    if n < m + 2 {
        return Err(Error::Argument(format!("affine fit in {m} variables needs at least {} points, got {n}", m + 2)));
    }
    if encoded.iter().any(|e| e.len() != k) || slow_true.iter().any(|s| s.len() != m) {
        return Err(Error::Dimension("ragged input to affine fit".into()));
    }

    let mean = |rows: &[Vec<f64>], c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / n as f64;
    let mx: Vec<f64> = (0..m).map(|c| mean(slow_true, c)).collect();
    let my: Vec<f64> = (0..k).map(|c| mean(encoded, c)).collect();

    // thin QR of the centred design by modified Gram–Schmidt (columns in q)
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = vec![vec![0.0; m]; m];
    for c in 0..m {
        let mut v: Vec<f64> = slow_true.iter().map(|s| s[c] - mx[c]).collect();
        let scale = norm2(&v);
        for (j, qj) in q.iter().enumerate() {
            let p = dot(&v, qj);
            r[j][c] = p;
            for (vi, qi) in v.iter_mut().zip(qj) {
                *vi -= p * qi;
            }
        }
        let nv = norm2(&v);
        if !(nv > 1e-10 * scale) {
            return Err(Error::DegenerateFit(format!("slow component {c} is constant or collinear")));
        }
        r[c][c] = nv;
        q.push(v.into_iter().map(|x| x / nv).collect());
    }

    let mut coefficients = Vec::with_capacity(k);
    let mut intercept = Vec::with_capacity(k);
    let mut r2_per_output = Vec::with_capacity(k);
    for out in 0..k {
        let y: Vec<f64> = encoded.iter().map(|e| e[out] - my[out]).collect();
        let ss_tot = dot(&y, &y);
        if !(ss_tot > 0.0) {
            return Err(Error::DegenerateFit(format!("encoder output {out} is constant")));
        }
        let qty: Vec<f64> = q.iter().map(|qj| dot(qj, &y)).collect();
        let mut beta = vec![0.0; m];
        for i in (0..m).rev() {
            let s: f64 = ((i + 1)..m).map(|j| r[i][j] * beta[j]).sum();
            beta[i] = (qty[i] - s) / r[i][i];
        }
        let mut ss_res = 0.0;
        for (row, yi) in slow_true.iter().zip(&y) {
            let pred: f64 = (0..m).map(|c| beta[c] * (row[c] - mx[c])).sum();
            ss_res += (yi - pred) * (yi - pred);
        }
        intercept.push(my[out] - (0..m).map(|c| beta[c] * mx[c]).sum::<f64>());
        coefficients.push(beta);
        r2_per_output.push(1.0 - ss_res / ss_tot);
    }
    let r2 = r2_per_output.iter().sum::<f64>() / k as f64;
    Ok(AffineFit { coefficients, intercept, r2_per_output, r2 })
}

/// A 2-D slice through state space on which the encoder is tabulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: [usize; 2],
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub resolution: [usize; 2],
    /// Values of all coordinates; the two grid axes are overwritten.
    #[serde(default)]
    pub base: Vec<f64>,
}

/// Encoder values on a grid; `None` marks cells where the encoder is
/// undefined (the origin behind a polar layer).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `(y, x)`.
    pub values: Vec<Option<Vec<f64>>>,
}

fn linspace(range: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![range[0]];
    }
    (0..n).map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64).collect()
}

pub fn level_set_grid(net: &Network, spec: &GridSpec) -> Result<LevelSetGrid> {
    let d = net.input_dim();
    let base = if spec.base.is_empty() { vec![0.0; d] } else { spec.base.clone() };
    if base.len() != d {
        return Err(Error::Dimension(format!("grid base point has {} coordinates, expected {d}", base.len())));
    }
    if spec.axes[0] >= d || spec.axes[1] >= d || spec.axes[0] == spec.axes[1] {
        return Err(Error::Argument(format!("grid axes {:?} invalid for dimension {d}", spec.axes)));
    }
    if spec.resolution.contains(&0) {
        return Err(Error::Argument("grid resolution must be positive".into()));
    }
    if spec.x_range.iter().chain(&spec.y_range).any(|v| !v.is_finite()) {
        return Err(Error::Argument("grid bounds must be finite".into()));
    }
    let xs = linspace(spec.x_range, spec.resolution[0]);
    let ys = linspace(spec.y_range, spec.resolution[1]);
    let cells: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let values = cells
        .par_iter()
        .map(|&(x, y)| {
            let mut p = base.clone();
            p[spec.axes[0]] = x;
            p[spec.axes[1]] = y;
            match net.encode(&p) {
                Ok(v) => Ok(Some(v)),
                Err(Error::Domain(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelSetGrid { xs, ys, values })
}

impl LevelSetGrid {
    /// `x,y,value` rows (`value1,value2,…` for vector encoders).
    pub fn to_csv(&self, slow_dim: usize) -> String {
        let mut out = String::from("x,y");
        if slow_dim == 1 {
            out.push_str(",value");
        } else {
            for k in 1..=slow_dim {
                let _ = write!(out, ",value{k}");
            }
        }
        out.push('\n');
        for (i, v) in self.values.iter().enumerate() {
            let (x, y) = (self.xs[i % self.xs.len()], self.ys[i / self.xs.len()]);
            let _ = write!(out, "{x},{y}");
            match v {
                Some(v) => v.iter().for_each(|e| {
                    let _ = write!(out, ",{e}");
                }),
                None => (0..slow_dim).for_each(|_| out.push_str(",nan")),
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    /// Majority slow count among points with a gap, if any.
    pub slow_dim: Option<usize>,
    pub points_with_gap: usize,
    pub mean_slow: f64,
    pub mean_fast: f64,
    /// `mean_fast / mean_slow`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    /// Ascending eigenvalues of each instance's covariance.
    pub spectra: Vec<Vec<f64>>,
    pub summary: GapSummary,
}

pub fn spectrum_export(ds: &Dataset, gap_ratio: f64) -> Result<SpectrumTable> {
    if ds.is_empty() {
        return Err(Error::Argument("spectrum of an empty dataset".into()));
    }
    let spectra: Vec<Vec<f64>> =
        ds.instances.par_iter().map(|i| sym_eig(&i.cov).map(|e| e.eigenvalues)).collect::<Result<_>>()?;
    Ok(SpectrumTable { summary: gap_summary(&spectra, gap_ratio), spectra })
}

/// Splits every spectrum at its own gap and averages each side; points
/// without a gap do not contribute.
pub fn gap_summary(spectra: &[Vec<f64>], gap_ratio: f64) -> GapSummary {
    let d = spectra.first().map_or(0, Vec::len);
    let mut votes = vec![0usize; d + 1];
    let (mut slow_sum, mut slow_n, mut fast_sum, mut fast_n) = (0.0, 0usize, 0.0, 0usize);
    let mut with_gap = 0;
    for s in spectra {
        if let Some(k) = slow_count(s, gap_ratio) {
            with_gap += 1;
            votes[k] += 1;
            slow_sum += s[..k].iter().sum::<f64>();
            slow_n += k;
            fast_sum += s[k..].iter().sum::<f64>();
            fast_n += s.len() - k;
        }
    }
    let slow_dim = (1..d).max_by_key(|&k| (votes[k], std::cmp::Reverse(k))).filter(|&k| 2 * votes[k] > spectra.len());
    let mean_slow = if slow_n > 0 { slow_sum / slow_n as f64 } else { 0.0 };
    let mean_fast = if fast_n > 0 { fast_sum / fast_n as f64 } else { 0.0 };
    let ratio = if mean_slow > 0.0 { mean_fast / mean_slow } else { f64::NAN };
    GapSummary { slow_dim, points_with_gap: with_gap, mean_slow, mean_fast, ratio }
}

impl SpectrumTable {
    pub fn to_csv(&self) -> String {
        let d = self.spectra.first().map_or(0, Vec::len);
        let mut out = String::from("index");
        for k in 1..=d {
            let _ = write!(out, ",lambda{k}");
        }
        out.push('\n');
        for (i, s) in self.spectra.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in s {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Burst statistics for checking whether an observable is slow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowObsDiagnostic {
    /// Root-mean-square over components of the sample standard deviation of
    /// the observable at the burst endpoints.
    pub obs_spread: f64,
    /// Root of the summed sample variances of the endpoints themselves.
    pub fiber_spread: f64,
}

pub fn slowobs_diagnostic(
    sys: &SdeSystem,
    obs: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    x: &[f64],
    tau: f64,
    dt: f64,
    reps: usize,
    seed: &SeedSpec,
) -> Result<SlowObsDiagnostic> {
    if reps < 2 {
        return Err(Error::Argument("diagnostic needs at least two bursts".into()));
    }
    let steps = crate::dataset::burst_steps(tau, dt)?;
    let ends = simulate_bursts(sys, x, dt, steps, reps, seed)?;
    let values: Vec<Vec<f64>> = ends.iter().map(|e| obs(e)).collect::<Result<_>>()?;
    let var_sum = |rows: &[Vec<f64>]| -> f64 {
        let n = rows.len() as f64;
        let dim = rows[0].len();
        (0..dim)
            .map(|c| {
                let m = rows.iter().map(|r| r[c]).sum::<f64>() / n;
                rows.iter().map(|r| (r[c] - m) * (r[c] - m)).sum::<f64>() / (n - 1.0)
            })
            .sum()
    };
    let k = values[0].len().max(1) as f64;
    Ok(SlowObsDiagnostic { obs_spread: (var_sum(&values) / k).sqrt(), fiber_spread: var_sum(&ends).sqrt() })
}
