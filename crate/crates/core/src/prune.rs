//! Iterative global magnitude pruning.
//!
//! Weights and biases of the prunable layers are ranked together by absolute
//! value; each event masks a fixed fraction of the parameters still active.
//! Sparsity targets are measured over every parameter of the network, so the
//! bottleneck and output layers (never pruned) count in the denominator.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Layer, Network, TrainHook};

pub const DEFAULT_START_EPOCH: usize = 100;
pub const DEFAULT_INTERVAL_EPOCHS: usize = 50;
pub const DEFAULT_FRACTION_PER_EVENT: f64 = 0.04;
pub const DEFAULT_POST_PRUNE_SHARE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub start_epoch: usize,
    pub interval_epochs: usize,
    pub fraction_per_event: f64,
    pub target_sparsity: f64,
    pub prunable_layers: Vec<usize>,
    pub post_prune_epochs: usize,
}

/// Config-file form of a schedule; missing fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    #[serde(default = "default_start")]
    pub start_epoch: usize,
    #[serde(default = "default_interval")]
    pub interval_epochs: usize,
    #[serde(default = "default_fraction")]
    pub fraction_per_event: f64,
    pub target_sparsity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prunable_layers: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_prune_epochs: Option<usize>,
}

fn default_start() -> usize {
    DEFAULT_START_EPOCH
}
fn default_interval() -> usize {
    DEFAULT_INTERVAL_EPOCHS
}
fn default_fraction() -> f64 {
    DEFAULT_FRACTION_PER_EVENT
}

impl PruneConfig {
    pub fn new(target_sparsity: f64) -> Self {
        Self {
            start_epoch: DEFAULT_START_EPOCH,
            interval_epochs: DEFAULT_INTERVAL_EPOCHS,
            fraction_per_event: DEFAULT_FRACTION_PER_EVENT,
            target_sparsity,
            prunable_layers: None,
            post_prune_epochs: None,
        }
    }

    pub fn resolve(&self, net: &Network, max_epochs: usize) -> Result<PruneSchedule> {
        let sched = PruneSchedule {
            start_epoch: self.start_epoch,
            interval_epochs: self.interval_epochs,
            fraction_per_event: self.fraction_per_event,
            target_sparsity: self.target_sparsity,
            prunable_layers: self.prunable_layers.clone().unwrap_or_else(|| default_prunable_layers(net)),
            post_prune_epochs: self
                .post_prune_epochs
                .unwrap_or_else(|| (DEFAULT_POST_PRUNE_SHARE * max_epochs as f64).round() as usize),
        };
        sched.validate(net)?;
        Ok(sched)
    }
}

/// Dense layers other than the bottleneck and the output layer.
pub fn default_prunable_layers(net: &Network) -> Vec<usize> {
    net.dense_layers()
        .map(|(i, _)| i)
        .filter(|&i| i != net.bottleneck_index && i != net.output_index())
        .collect()
}

impl PruneSchedule {
    pub fn validate(&self, net: &Network) -> Result<()> {
        let bad = |msg: String| Err(Error::Schedule(msg));
        if self.prunable_layers.is_empty() {
            return bad("no prunable layers".into());
        }
        for &l in &self.prunable_layers {
            if l == net.bottleneck_index || l == net.output_index() {
                return bad(format!("layer {l} is the bottleneck or output layer and cannot be pruned"));
            }
            if net.layers.get(l).and_then(Layer::as_dense).is_none() {
                return bad(format!("layer {l} is not a dense layer of this network"));
            }
        }
        if !(self.fraction_per_event > 0.0 && self.fraction_per_event < 1.0) {
            return bad(format!("fraction per event {} is outside (0, 1)", self.fraction_per_event));
        }
        if !(self.target_sparsity > 0.0 && self.target_sparsity < 1.0) {
            return bad(format!("target sparsity {} is outside (0, 1)", self.target_sparsity));
        }
        if self.interval_epochs == 0 {
            return bad("interval must be at least one epoch".into());
        }
        let pool: usize = self.pool_size(net);
        if target_count(self.target_sparsity, net.param_count()) > pool {
            return bad(format!(
                "target sparsity {} needs more parameters than the {pool} prunable ones",
                self.target_sparsity
            ));
        }
        Ok(())
    }

    fn pool_size(&self, net: &Network) -> usize {
        self.prunable_layers.iter().filter_map(|&l| net.layers[l].as_dense()).map(|d| d.param_count()).sum()
    }

    /// Whether an event is due at `epoch` by the schedule alone.
    pub fn is_event_epoch(&self, epoch: usize) -> bool {
        epoch >= self.start_epoch && (epoch - self.start_epoch) % self.interval_epochs == 0
    }
}

fn target_count(target: f64, total: usize) -> usize {
    // tolerate representation error in products such as 0.55 * 100
    let raw = target * total as f64;
    let r = raw.round();
    if (raw - r).abs() < 1e-9 * total.max(1) as f64 {
        r as usize
    } else {
        raw.ceil() as usize
    }
}

/// Fraction of all network parameters that are masked.
pub fn global_sparsity(net: &Network) -> f64 {
    let total = net.param_count();
    if total == 0 {
        return 0.0;
    }
    pruned_total(net) as f64 / total as f64
}

fn pruned_total(net: &Network) -> usize {
    net.dense_layers().map(|(_, d)| d.pruned_count()).sum()
}

/// Masks the smallest-magnitude active parameters of the prunable pool:
/// `round(fraction * active)` of them (at least one), but never more than
/// the target requires. Returns the number masked.
pub fn global_l1_prune(net: &mut Network, sched: &PruneSchedule) -> Result<usize> {
    sched.validate(net)?;
    let total = net.param_count();
    let goal = target_count(sched.target_sparsity, total);
    let already = pruned_total(net);
    if already >= goal {
        return Err(Error::Schedule(format!("sparsity {already}/{total} already meets the target")));
    }

    // (|value|, layer, row, column, is_bias); a bias sits in column in_dim
    let mut pool: Vec<(f64, usize, usize, usize, bool)> = Vec::new();
    let mut layers = sched.prunable_layers.clone();
    layers.sort_unstable();
    layers.dedup();
    for &l in &layers {
        let d = net.layers[l].as_dense().expect("validated");
        let n_in = d.in_dim();
        for (k, (&w, &active)) in d.weights.as_slice().iter().zip(&d.weight_mask).enumerate() {
            if active {
                pool.push((w.abs(), l, k / n_in, k % n_in, false));
            }
        }
        for (o, (&b, &active)) in d.bias.iter().zip(&d.bias_mask).enumerate() {
            if active {
                pool.push((b.abs(), l, o, n_in, true));
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::Schedule("prunable pool has no active parameters".into()));
    }
    let per_event = ((sched.fraction_per_event * pool.len() as f64).round() as usize).max(1);
    let count = per_event.min(goal - already).min(pool.len());
    pool.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
    for &(_, l, row, col, is_bias) in &pool[..count] {
        let d = net.layers[l].as_dense_mut().expect("validated");
        if is_bias {
            d.bias_mask[row] = false;
        } else {
            let n_in = d.in_dim();
            d.weight_mask[row * n_in + col] = false;
        }
    }
    net.apply_masks();
    Ok(count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub pruned: usize,
    pub sparsity: f64,
}

/// Training hook that runs the schedule and stops training
/// `post_prune_epochs` after the target is reached.
#[derive(Debug, Clone)]
pub struct PruneHook {
    pub schedule: PruneSchedule,
    pub events: Vec<PruneEvent>,
    pub target_reached_at: Option<usize>,
}

impl PruneHook {
    pub fn new(schedule: PruneSchedule) -> Self {
        Self { schedule, events: Vec::new(), target_reached_at: None }
    }
}

/// Runs one scheduled event if it is due and the target is not yet met.
pub fn prune_hook(epoch: usize, net: &mut Network, sched: &PruneSchedule) -> Result<Option<PruneEvent>> {
    let goal = target_count(sched.target_sparsity, net.param_count());
    if !sched.is_event_epoch(epoch) || pruned_total(net) >= goal {
        return Ok(None);
    }
    let pruned = global_l1_prune(net, sched)?;
    Ok(Some(PruneEvent { epoch, pruned, sparsity: global_sparsity(net) }))
}

impl TrainHook for PruneHook {
    fn on_epoch_end(&mut self, epoch: usize, net: &mut Network) -> Result<bool> {
        let event = prune_hook(epoch, net, &self.schedule)?;
        let fired = event.is_some();
        if let Some(e) = event {
            self.events.push(e);
            if self.target_reached_at.is_none()
                && pruned_total(net) >= target_count(self.schedule.target_sparsity, net.param_count())
            {
                self.target_reached_at = Some(epoch);
            }
        }
        Ok(fired)
    }

    fn should_stop(&self, epoch: usize) -> bool {
        self.target_reached_at.is_some_and(|t| epoch >= t + self.schedule.post_prune_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub params: usize,
    pub pruned: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layers: Vec<LayerSparsity>,
    pub total_params: usize,
    pub total_pruned: usize,
    pub total_percent: f64,
    /// Zero-based input coordinates cut off from the network.
    pub dead_inputs: Vec<usize>,
}

pub fn sparsity_report(net: &Network) -> SparsityReport {
    let layers: Vec<LayerSparsity> = net
        .dense_layers()
        .map(|(i, d)| {
            let params = d.param_count();
            let pruned = d.pruned_count();
            LayerSparsity { layer: i, params, pruned, percent: 100.0 * pruned as f64 / params as f64 }
        })
        .collect();
    let total_params: usize = layers.iter().map(|l| l.params).sum();
    let total_pruned: usize = layers.iter().map(|l| l.pruned).sum();
    let total_percent = if total_params == 0 { 0.0 } else { 100.0 * total_pruned as f64 / total_params as f64 };
    SparsityReport { layers, total_params, total_pruned, total_percent, dead_inputs: dead_inputs(net) }
}

impl SparsityReport {
    /// `79 - 19 - 0 - 16 - 10 - 0`
    pub fn per_layer_string(&self) -> String {
        self.layers.iter().map(|l| format!("{:.0}", l.percent)).collect::<Vec<_>>().join(" - ")
    }

    /// Index of the most pruned layer among `candidates` (first on ties).
    pub fn most_pruned(&self, candidates: &[usize]) -> Option<usize> {
        self.layers
            .iter()
            .filter(|l| candidates.contains(&l.layer))
            .fold(None::<&LayerSparsity>, |best, l| match best {
                Some(b) if b.percent >= l.percent => Some(b),
                _ => Some(l),
            })
            .map(|l| l.layer)
    }
}

/// Rows of `(model, report)` rendered as a sparsity table.
pub fn render_sparsity_table(rows: &[(String, SparsityReport)]) -> String {
    let cells: Vec<(String, String, String)> = rows
        .iter()
        .map(|(name, r)| (name.clone(), r.per_layer_string(), format!("{:.0}", r.total_percent)))
        .collect();
    let w0 = cells.iter().map(|c| c.0.len()).chain([5]).max().unwrap_or(5);
    let w1 = cells.iter().map(|c| c.1.len()).chain([25]).max().unwrap_or(25);
    let mut out = String::new();
    let _ = writeln!(out, "{:<w0$} | {:^w1$} | Total sparsity [%]", "Model", "Sparsity per layer [%]");
    let _ = writeln!(out, "{}", "-".repeat(w0 + w1 + 24));
    for (a, b, c) in cells {
        let _ = writeln!(out, "{a:<w0$} | {b:^w1$} | {c:>18}");
    }
    out
}

/// Input coordinates whose every first-layer weight is masked.
///
/// Behind a polar layer the two inputs are mixed, so they are either both
/// dead or both alive.
pub fn dead_inputs(net: &Network) -> Vec<usize> {
    let Some((idx, first)) = net.dense_layers().next() else { return Vec::new() };
    let n_in = first.in_dim();
    let dead_cols: Vec<usize> = (0..n_in)
        .filter(|&c| (0..first.out_dim()).all(|r| !first.weight_mask[r * n_in + c]))
        .collect();
    if idx == 0 {
        dead_cols
    } else if dead_cols.len() == n_in {
        (0..net.input_dim()).collect()
    } else {
        Vec::new()
    }
}

/// First-layer activity grid, one row per input coordinate (1 = active).
pub fn first_layer_mask_grid(net: &Network) -> Vec<Vec<u8>> {
    let Some((_, first)) = net.dense_layers().next() else { return Vec::new() };
    let n_in = first.in_dim();
    (0..n_in).map(|c| (0..first.out_dim()).map(|r| first.weight_mask[r * n_in + c] as u8).collect()).collect()
}

pub fn mask_grid_csv(grid: &[Vec<u8>]) -> String {
    let mut out = String::new();
    for row in grid {
        let cells: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::net::{Activation, Architecture, Dense};
    use crate::rng::SeedSpec;

    fn three_layer(first: Matrix, first_bias: Vec<f64>) -> Network {
        let h = first.rows();
        let n = first.cols();
        Network::from_layers(
            vec![
                Layer::Dense(Dense::new(first, first_bias, Activation::Elu)),
                Layer::Dense(Dense::new(Matrix::zeros(1, h), vec![0.0], Activation::Identity)),
                Layer::Dense(Dense::new(Matrix::zeros(n, 1), vec![0.0; n], Activation::Identity)),
            ],
            1,
        )
        .unwrap()
    }

    fn sched(target: f64, fraction: f64) -> PruneSchedule {
        PruneSchedule {
            start_epoch: 100,
            interval_epochs: 50,
            fraction_per_event: fraction,
            target_sparsity: target,
            prunable_layers: vec![0],
            post_prune_epochs: 0,
        }
    }

    #[test]
    fn smallest_of_three_goes_first() {
        // two weights and one bias in the pool
        let mut net = three_layer(Matrix::from_rows(&[[5.0, -7.0]]).unwrap(), vec![0.1]);
        let n = global_l1_prune(&mut net, &sched(0.3, 1.0 / 3.0)).unwrap();
        assert_eq!(n, 1);
        let d = net.layers[0].as_dense().unwrap();
        assert_eq!(d.bias_mask, vec![false]);
        assert_eq!(d.weight_mask, vec![true, true]);
        assert_eq!(d.bias[0], 0.0);
    }

    #[test]
    fn ties_break_by_position() {
        let mut net = three_layer(Matrix::from_rows(&[[1.0, -1.0], [1.0, 1.0]]).unwrap(), vec![1.0, -1.0]);
        // pool of 6, total 6 + 3 + 4 = 13
        let n = global_l1_prune(&mut net, &sched(0.9 * 6.0 / 13.0, 0.5)).unwrap();
        assert_eq!(n, 3);
        let d = net.layers[0].as_dense().unwrap();
        // order: (0,0) (0,1) (0,bias) (1,0) ...
        assert_eq!(d.weight_mask, vec![false, false, true, true]);
        assert_eq!(d.bias_mask, vec![false, true]);
    }

    #[test]
    fn already_at_target_is_schedule_error() {
        let mut net = three_layer(Matrix::from_rows(&[[1.0, 2.0]]).unwrap(), vec![3.0]);
        let s = sched(1.0 / 9.0, 0.5);
        assert_eq!(global_l1_prune(&mut net, &s).unwrap(), 1);
        assert!(matches!(global_l1_prune(&mut net, &s), Err(Error::Schedule(_))));
    }

    #[test]
    fn excluded_layers_are_rejected() {
        let net = three_layer(Matrix::from_rows(&[[1.0, 2.0]]).unwrap(), vec![3.0]);
        for layers in [vec![], vec![1], vec![2], vec![7]] {
            let mut s = sched(0.1, 0.5);
            s.prunable_layers = layers;
            assert!(matches!(s.validate(&net), Err(Error::Schedule(_))));
        }
        let mut s = sched(0.9, 0.5);
        assert!(matches!(s.validate(&net), Err(Error::Schedule(_))));
        s.target_sparsity = 0.2;
        s.fraction_per_event = 1.0;
        assert!(s.validate(&net).is_err());
    }

    #[test]
    fn hook_schedule_arithmetic() {
        let arch: Architecture = "4-6-1-6-4".parse().unwrap();
        let mut net = Network::new(&arch, &SeedSpec::new(1));
        let s = PruneConfig::new(0.3).resolve(&net, 1000).unwrap();
        assert_eq!(s.prunable_layers, vec![0, 2]);
        assert_eq!(s.post_prune_epochs, 250);
        assert_eq!(prune_hook(99, &mut net, &s).unwrap(), None);
        assert!(prune_hook(100, &mut net, &s).unwrap().is_some());
        assert_eq!(prune_hook(120, &mut net, &s).unwrap(), None);
        assert!(prune_hook(150, &mut net, &s).unwrap().is_some());
        let mut e = 200;
        while prune_hook(e, &mut net, &s).unwrap().is_some() {
            e += 50;
        }
        assert_eq!(net.dense_layers().map(|(_, d)| d.pruned_count()).sum::<usize>(), target_count(0.3, net.param_count()));
        // target met: no more events
        assert_eq!(prune_hook(e + 50, &mut net, &s).unwrap(), None);
    }

    #[test]
    fn report_and_dead_inputs() {
        let arch: Architecture = "3-4-1-4-3".parse().unwrap();
        let mut net = Network::new(&arch, &SeedSpec::new(0));
        let r = sparsity_report(&net);
        assert_eq!(r.total_pruned, 0);
        assert!(r.layers.iter().all(|l| l.percent == 0.0));
        assert!(r.dead_inputs.is_empty());

        let d = net.layers[0].as_dense_mut().unwrap();
        for row in 0..4 {
            d.weight_mask[row * 3 + 2] = false;
        }
        net.apply_masks();
        assert_eq!(dead_inputs(&net), vec![2]);
        let grid = first_layer_mask_grid(&net);
        assert_eq!(grid[2], vec![0, 0, 0, 0]);
        assert_eq!(grid[0], vec![1, 1, 1, 1]);
        assert_eq!(mask_grid_csv(&grid[2..]), "0,0,0,0\n");

        let d = net.layers[0].as_dense_mut().unwrap();
        d.weight_mask.fill(false);
        d.bias_mask.fill(false);
        let r = sparsity_report(&net);
        assert_eq!(r.layers[0].percent, 100.0);
        assert_eq!(r.dead_inputs, vec![0, 1, 2]);
        assert_eq!(r.total_pruned, 16);
        assert_eq!(r.most_pruned(&[0, 2]), Some(0));
    }

    #[test]
    fn table_rendering() {
        let arch: Architecture = "2-4-1-4-2".parse().unwrap();
        let net = Network::new(&arch, &SeedSpec::new(0));
        let r = sparsity_report(&net);
        assert_eq!(r.per_layer_string(), "0 - 0 - 0 - 0");
        let t = render_sparsity_table(&[("Model 1p".into(), r)]);
        assert!(t.lines().next().unwrap().contains("Total sparsity [%]"));
        assert!(t.lines().nth(2).unwrap().starts_with("Model 1p"));
    }

    #[test]
    fn target_count_tolerates_rounding() {
        assert_eq!(target_count(0.55, 100), 55);
        assert_eq!(target_count(0.3, 276), 83);
        assert_eq!(target_count(0.7, 10), 7);
    }
}
