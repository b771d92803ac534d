//! Surplus consensus (Di-CS-AC) and the variance-reduced gradient-tracking
//! optimizer (Di-CS-SVRG) with its full-gradient and plain-SGD ablations.
//!
//! State is kept per node as `z_i = [x_i; y_i]`. Every step mixes `x` with
//! the row-stochastic `A_m` and `y` with the column-stochastic `B_m` for
//! each coordinate `m`; on the last step of each window the stored block
//! start surplus is moved back into the state with weight `gamma` and, when
//! optimizing, `alpha * g` is subtracted.

mod kernel;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixing::WindowAccumulator;
use crate::objectives::Dataset;
use crate::rng::{substream, Stream, StreamRng};
use crate::sparsifier::{kept_count, StepMasks};
use crate::topology::SnapshotSource;

pub use kernel::MixingPath;
use kernel::{comm_entries, pull, push, StepGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Consensus,
    Svrg,
    FullGrad,
    PlainSgd,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Consensus => "consensus",
            EngineKind::Svrg => "svrg",
            EngineKind::FullGrad => "full_grad",
            EngineKind::PlainSgd => "plain_sgd",
        }
    }
}

fn default_gamma() -> f64 {
    0.05
}

fn default_window() -> usize {
    1
}

fn default_q() -> f64 {
    1.0
}

/// Settings of an optimizing run. The run lasts `epochs * inner_steps`
/// steps; the snapshot `w` is refreshed every `inner_steps` steps (SVRG only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub kind: EngineKind,
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    pub inner_steps: usize,
    pub epochs: usize,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub seed: u64,
    /// Record metrics every this many steps. When unset, every block
    /// boundary and every 10th step is recorded.
    #[serde(default)]
    pub record_stride: Option<usize>,
    /// Keep full state at every block boundary.
    #[serde(default)]
    pub record_snapshots: bool,
    /// Compute the spectrum of every window's block products.
    #[serde(default)]
    pub track_window_spectra: bool,
    #[serde(default)]
    pub mixing_path: MixingPath,
}

impl EngineConfig {
    pub fn new(kind: EngineKind, alpha: f64, window: usize, inner_steps: usize, epochs: usize, q: f64) -> Self {
        EngineConfig {
            kind,
            alpha,
            gamma: default_gamma(),
            window,
            inner_steps,
            epochs,
            q,
            seed: 0,
            record_stride: None,
            record_snapshots: false,
            track_window_spectra: false,
            mixing_path: MixingPath::Sparse,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.inner_steps * self.epochs
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == EngineKind::Consensus {
            return Err(Error::invalid("consensus runs use ConsensusConfig"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha {} must be positive", self.alpha)));
        }
        check_common(self.gamma, self.q, self.window)?;
        if self.inner_steps == 0 || self.inner_steps % self.window != 0 {
            return Err(Error::invalid(format!(
                "inner steps {} must be a positive multiple of the window {}",
                self.inner_steps, self.window
            )));
        }
        if self.record_stride == Some(0) {
            return Err(Error::invalid("record stride must be positive"));
        }
        Ok(())
    }
}

fn check_common(gamma: f64, q: f64, window: usize) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma {gamma} outside (0, 1)")));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sparsification fraction {q} outside (0, 1]")));
    }
    if window == 0 {
        return Err(Error::invalid("window must be positive"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop once the residual falls to this value.
    #[serde(default)]
    pub stop_below: Option<f64>,
    #[serde(default)]
    pub record_stride: Option<usize>,
    #[serde(default)]
    pub record_snapshots: bool,
    #[serde(default)]
    pub mixing_path: MixingPath,
}

impl ConsensusConfig {
    pub fn new(gamma: f64, q: f64, steps: usize) -> Self {
        ConsensusConfig {
            gamma,
            q,
            steps,
            seed: 0,
            stop_below: None,
            record_stride: None,
            record_snapshots: false,
            mixing_path: MixingPath::Sparse,
        }
    }
}

/// Metrics at one recorded step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// `sqrt(sum_i |x_i - target|^2)` relative to its value at `t = 0`
    /// (absolute when that value is zero).
    pub residual: f64,
    /// `sum_i |zbar - x_i|^2` with `zbar = (1/n) sum_{i<=2n} z_i`.
    pub consensus_error: f64,
    /// `n |zbar - target|^2`.
    pub optimality_error: f64,
    /// `sum_{i,m} |g_im - gbar_m|^2 / L^2`; zero for consensus.
    pub tracking_error: f64,
    pub comm_entries_cum: u64,
    /// Component-gradient evaluations divided by the total sample count.
    pub grad_evals_cum: f64,
}

/// Full state at a block boundary `t = kB`, node-major `n * d` buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySnapshot {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub g: Vec<f64>,
    pub v: Vec<f64>,
    /// The SVRG snapshot `w` (the state itself for the other engines).
    pub tau: Vec<f64>,
}

/// Worst deviations of the invariants observed while running.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max |mass_t - mass_0| / max(|mass_0|, max|x0|)` over steps and coordinates.
    pub max_mass_drift: f64,
    /// `max |gbar - vbar| / max(1, max|g|, max|v|)` over block boundaries.
    pub max_tracking_gap: f64,
    /// `max |zbar_{k+1} - (zbar_k - alpha vbar_k)| / max(1, |zbar_k|)` over block boundaries.
    pub max_mean_gap: f64,
    /// Largest difference between the surplus from the matrix update and
    /// from the element-wise form `y+ = B y - (x+ - x)`.
    pub max_elementwise_divergence: f64,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    pub kind: EngineKind,
    pub nodes: usize,
    pub dim: usize,
    pub window: usize,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<BoundarySnapshot>,
    /// Largest sigma over coordinates, one entry per completed window.
    pub window_sigmas: Vec<f64>,
    pub diagnostics: Diagnostics,
    pub steps_run: usize,
    pub duration: Duration,
}

impl RunTrace {
    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.residual)
    }

    pub fn comm_entries_total(&self) -> u64 {
        self.records.last().map_or(0, |r| r.comm_entries_cum)
    }

    pub fn grad_evals_total(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.grad_evals_cum)
    }

    /// First recorded step whose residual is at most `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.records.iter().find(|r| r.residual <= threshold).map(|r| r.t)
    }
}

/// `v = (grad f_il(x) - grad f_il(w)) + mu` for sample `l` (0-based).
pub fn svrg_gradient_estimate(dataset: &Dataset, i: usize, x: &[f64], w_snapshot: &[f64], mu_full: &[f64], l: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut scratch = vec![0.0; x.len()];
    svrg_estimate_into(dataset, i, x, w_snapshot, mu_full, l, &mut out, &mut scratch);
    out
}

#[allow(clippy::too_many_arguments)]
fn svrg_estimate_into(
    dataset: &Dataset,
    i: usize,
    x: &[f64],
    w: &[f64],
    mu: &[f64],
    l: usize,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    dataset.component_grad_into(i, l, x, out);
    dataset.component_grad_into(i, l, w, scratch);
    for ((o, s), u) in out.iter_mut().zip(scratch.iter()).zip(mu) {
        *o = (*o - s) + u;
    }
}

/// One-shot tracking update over a window:
/// `g_i = sum_j [B_m]_ij g_j + v_new_i - v_old_i` for every coordinate `m`,
/// with `b_products[m]` the window product of the surplus weights.
pub fn gradient_tracking_update(
    g_prev: &[Vec<f64>],
    b_products: &[DMatrix<f64>],
    v_new: &[Vec<f64>],
    v_old: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = g_prev.len();
    let d = b_products.len();
    for rows in [v_new, v_old] {
        if rows.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: rows.len(),
            });
        }
    }
    if let Some(bad) = g_prev.iter().chain(v_new).chain(v_old).find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    if let Some(bad) = b_products.iter().find(|b| b.nrows() != n || b.ncols() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.nrows(),
        });
    }
    Ok((0..n)
        .map(|i| {
            (0..d)
                .map(|m| {
                    let mixed: f64 = (0..n).map(|j| b_products[m][(i, j)] * g_prev[j][m]).sum();
                    mixed + (v_new[i][m] - v_old[i][m])
                })
                .collect()
        })
        .collect())
}

fn flatten(rows: &[Vec<f64>], d: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

/// `(1/n) sum_{i<=2n} z_i`.
fn z_mean(x: &[f64], y: &[f64], n: usize, d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        for m in 0..d {
            out[m] += x[i * d + m] + y[i * d + m];
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
}

fn node_mean(a: &[f64], n: usize, d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for i in 0..n {
        for m in 0..d {
            out[m] += a[i * d + m];
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
}

fn stacked_distance(x: &[f64], target: &[f64], d: usize) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, v)| (v - target[k % d]).powi(2))
        .sum::<f64>()
        .sqrt()
}

struct Metrics<'a> {
    n: usize,
    d: usize,
    target: &'a [f64],
    initial_distance: f64,
    inv_l2: f64,
    zbar: Vec<f64>,
    gbar: Vec<f64>,
}

impl<'a> Metrics<'a> {
    fn new(n: usize, d: usize, target: &'a [f64], x0: &[f64], l: Option<f64>) -> Self {
        Metrics {
            n,
            d,
            target,
            initial_distance: stacked_distance(x0, target, d),
            inv_l2: l.map_or(0.0, |l| 1.0 / (l * l)),
            zbar: vec![0.0; d],
            gbar: vec![0.0; d],
        }
    }

    fn record(&mut self, t: usize, x: &[f64], y: &[f64], g: Option<&[f64]>, comm: u64, evals: f64) -> StepRecord {
        let (n, d) = (self.n, self.d);
        let dist = stacked_distance(x, self.target, d);
        // starting at the target leaves nothing to normalize by
        let residual = if self.initial_distance == 0.0 {
            dist
        } else {
            dist / self.initial_distance
        };
        z_mean(x, y, n, d, &mut self.zbar);
        let consensus_error = stacked_distance(x, &self.zbar, d).powi(2);
        let optimality_error = n as f64
            * self
                .zbar
                .iter()
                .zip(self.target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        let tracking_error = match g {
            Some(g) => {
                node_mean(g, n, d, &mut self.gbar);
                stacked_distance(g, &self.gbar, d).powi(2) * self.inv_l2
            }
            None => 0.0,
        };
        StepRecord {
            t,
            residual,
            consensus_error,
            optimality_error,
            tracking_error,
            comm_entries_cum: comm,
            grad_evals_cum: evals,
        }
    }
}

fn check_finite(step: usize, bufs: &[&[f64]]) -> Result<()> {
    if bufs.iter().all(|b| b.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Runs Di-CS-AC from `x0` (one vector per node) for `cfg.steps` steps or
/// until the residual to the initial average falls below `cfg.stop_below`.
pub fn consensus_run(source: &mut dyn SnapshotSource, x0: &[Vec<f64>], cfg: &ConsensusConfig) -> Result<RunTrace> {
    let started = Instant::now();
    let n = source.node_count();
    let b = source.window();
    check_common(cfg.gamma, cfg.q, b)?;
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    let d = x0.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::invalid("state dimension must be positive"));
    }
    let stride = cfg.record_stride.unwrap_or(1);
    if stride == 0 {
        return Err(Error::invalid("record stride must be positive"));
    }
    let mut mask_rng = substream(cfg.seed, Stream::Masks);
    let full_masks = (kept_count(d, cfg.q) == d).then(|| StepMasks::full(n, d));
    let mut graph = StepGraph::default();

    let mut x = flatten(x0, d)?;
    let mut y = vec![0.0; n * d];
    let mut y_stored = y.clone();
    let mut x_next = vec![0.0; n * d];
    let mut y_next = vec![0.0; n * d];

    let mut average = vec![0.0; d];
    node_mean(&x, n, d, &mut average);
    let mass_scale: Vec<f64> = (0..d)
        .map(|m| {
            let peak = (0..n).map(|i| x[i * d + m].abs()).fold(0.0, f64::max);
            average[m].abs().max(peak).max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut metrics = Metrics::new(n, d, &average, &x, None);
    let mut mass = vec![0.0; d];

    let mut trace = RunTrace {
        kind: EngineKind::Consensus,
        nodes: n,
        dim: d,
        window: b,
        records: Vec::new(),
        snapshots: Vec::new(),
        window_sigmas: Vec::new(),
        diagnostics: Diagnostics::default(),
        steps_run: 0,
        duration: Duration::ZERO,
    };
    let mut comm = 0u64;
    trace.records.push(metrics.record(0, &x, &y, None, 0, 0.0));
    if cfg.record_snapshots {
        trace.snapshots.push(snapshot(0, &x, &y, &[], &[], &x));
    }

    let already = cfg.stop_below.is_some_and(|th| trace.records[0].residual <= th);
    for t in 0..if already { 0 } else { cfg.steps } {
        if t % b == 0 {
            y_stored.copy_from_slice(&y);
        }
        let snap = source.next_snapshot()?;
        graph.rebuild(&snap, cfg.mixing_path == MixingPath::Dense);
        let drawn;
        let masks = match &full_masks {
            Some(full) => full,
            None => {
                drawn = StepMasks::draw(n, d, cfg.q, &mut mask_rng)?;
                &drawn
            }
        };
        comm += comm_entries(&graph, masks, 0);

        pull(&graph, &masks.x, d, cfg.mixing_path, &x, &mut x_next)?;
        push(&graph, &masks.y, d, cfg.mixing_path, &y, &mut y_next)?;
        for k in 0..n * d {
            y_next[k] += x[k] - x_next[k];
        }
        if t % b == b - 1 {
            for k in 0..n * d {
                x_next[k] += cfg.gamma * y_stored[k];
                y_next[k] -= cfg.gamma * y_stored[k];
            }
        }
        std::mem::swap(&mut x, &mut x_next);
        std::mem::swap(&mut y, &mut y_next);

        z_mean(&x, &y, n, d, &mut mass);
        for m in 0..d {
            let drift = (mass[m] - average[m]).abs() / mass_scale[m];
            trace.diagnostics.max_mass_drift = trace.diagnostics.max_mass_drift.max(drift);
        }
        let step = t + 1;
        check_finite(step, &[&x, &y])?;
        if cfg.record_snapshots && step % b == 0 {
            trace.snapshots.push(snapshot(step, &x, &y, &[], &[], &x));
        }
        trace.steps_run = step;
        let due = step % stride == 0 || step == cfg.steps;
        if due || cfg.stop_below.is_some() {
            let r = metrics.record(step, &x, &y, None, comm, 0.0);
            let reached = cfg.stop_below.is_some_and(|th| r.residual <= th);
            if due || reached {
                trace.records.push(r);
            }
            if reached {
                break;
            }
        }
    }
    trace.duration = started.elapsed();
    Ok(trace)
}

fn snapshot(t: usize, x: &[f64], y: &[f64], g: &[f64], v: &[f64], tau: &[f64]) -> BoundarySnapshot {
    BoundarySnapshot {
        t,
        x: x.to_vec(),
        y: y.to_vec(),
        g: g.to_vec(),
        v: v.to_vec(),
        tau: tau.to_vec(),
    }
}

/// What an optimizing run needs to know about the objective.
#[derive(Clone, Copy, Debug)]
pub struct OptimizationProblem<'a> {
    pub dataset: &'a Dataset,
    pub x_star: &'a [f64],
    /// Component smoothness, used to scale the tracking error.
    pub l: f64,
}

/// Di-CS-SVRG.
pub fn svrg_run(
    source: &mut dyn SnapshotSource,
    problem: &OptimizationProblem<'_>,
    x0: &[Vec<f64>],
    cfg: &EngineConfig,
) -> Result<RunTrace> {
    if cfg.kind != EngineKind::Svrg {
        return Err(Error::invalid(format!("svrg_run called with engine {}", cfg.kind.name())));
    }
    optimize_run(source, problem, x0, cfg)
}

/// The full-gradient or plain-SGD variant of the same machinery.
pub fn ablation_run(
    source: &mut dyn SnapshotSource,
    problem: &OptimizationProblem<'_>,
    x0: &[Vec<f64>],
    cfg: &EngineConfig,
) -> Result<RunTrace> {
    if !matches!(cfg.kind, EngineKind::FullGrad | EngineKind::PlainSgd) {
        return Err(Error::invalid(format!("ablation_run called with engine {}", cfg.kind.name())));
    }
    optimize_run(source, problem, x0, cfg)
}

/// Runs any optimizing engine.
///
/// `v_i` is refreshed at each block boundary `kB` from the state `x^{kB}`
/// reached there, so the tracking and mean identities hold with the `v`
/// evaluated at the block start, and `g^0 = v^0 = grad f_i(x^0)`.
pub fn optimize_run(
    source: &mut dyn SnapshotSource,
    problem: &OptimizationProblem<'_>,
    x0: &[Vec<f64>],
    cfg: &EngineConfig,
) -> Result<RunTrace> {
    let started = Instant::now();
    cfg.validate()?;
    let ds = problem.dataset;
    let n = source.node_count();
    let b = source.window();
    if b != cfg.window {
        return Err(Error::invalid(format!(
            "topology window {b} differs from the configured window {}",
            cfg.window
        )));
    }
    if ds.node_count() != n || x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if ds.node_count() != n { ds.node_count() } else { x0.len() },
        });
    }
    let d = ds.dim();
    if problem.x_star.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: problem.x_star.len(),
        });
    }
    let mut mask_rng = substream(cfg.seed, Stream::Masks);
    let full_masks = (kept_count(d, cfg.q) == d).then(|| StepMasks::full(n, d));
    let mut graph = StepGraph::default();
    let mut sample_rng = substream(cfg.seed, Stream::Samples);
    let total_samples = ds.total_samples() as f64;

    let mut x = flatten(x0, d)?;
    let mut y = vec![0.0; n * d];
    let mut x_next = vec![0.0; n * d];
    let mut y_next = vec![0.0; n * d];
    let mut y_stored = vec![0.0; n * d];
    let mut g_stored = vec![0.0; n * d];
    let mut g_next = vec![0.0; n * d];
    let mut w = x.clone();
    let mut mu = vec![0.0; n * d];
    let mut v_new = vec![0.0; n * d];
    let mut scratch = vec![0.0; d];
    let mut zbar_start = vec![0.0; d];
    let mut vbar_start = vec![0.0; d];
    let mut zbar = vec![0.0; d];
    let mut gbar = vec![0.0; d];
    let mut vbar = vec![0.0; d];

    for i in 0..n {
        ds.local_full_grad_into(i, &x[i * d..(i + 1) * d], &mut mu[i * d..(i + 1) * d]);
    }
    let mut evals = total_samples;
    let mut v = mu.clone();
    let mut g = mu.clone();

    let mut metrics = Metrics::new(n, d, problem.x_star, &x, Some(problem.l));
    let mut trace = RunTrace {
        kind: cfg.kind,
        nodes: n,
        dim: d,
        window: b,
        records: Vec::new(),
        snapshots: Vec::new(),
        window_sigmas: Vec::new(),
        diagnostics: Diagnostics::default(),
        steps_run: 0,
        duration: Duration::ZERO,
    };
    let mut comm = 0u64;
    trace.records.push(metrics.record(0, &x, &y, Some(&g), 0, evals / total_samples));
    let tau_of = |kind: EngineKind| kind == EngineKind::Svrg;
    if cfg.record_snapshots {
        trace.snapshots.push(snapshot(0, &x, &y, &g, &v, if tau_of(cfg.kind) { &w } else { &x }));
    }
    let mut spectra = cfg.track_window_spectra.then(|| WindowAccumulator::new(n, d, cfg.gamma));

    let steps = cfg.total_steps();
    for t in 0..steps {
        if t % b == 0 {
            y_stored.copy_from_slice(&y);
            g_stored.copy_from_slice(&g);
            z_mean(&x, &y, n, d, &mut zbar_start);
            node_mean(&v, n, d, &mut vbar_start);
        }
        let snap = source.next_snapshot()?;
        graph.rebuild(&snap, spectra.is_some() || cfg.mixing_path == MixingPath::Dense);
        let drawn;
        let masks = match &full_masks {
            Some(full) => full,
            None => {
                drawn = StepMasks::draw(n, d, cfg.q, &mut mask_rng)?;
                &drawn
            }
        };
        comm += comm_entries(&graph, masks, 1);
        if let Some(acc) = spectra.as_mut() {
            let w = graph.weights();
            acc.push_step(&w.w_in, &w.w_out, masks)?;
        }

        pull(&graph, &masks.x, d, cfg.mixing_path, &x, &mut x_next)?;
        push(&graph, &masks.y, d, cfg.mixing_path, &y, &mut y_next)?;
        push(&graph, &masks.y, d, cfg.mixing_path, &g, &mut g_next)?;
        let boundary = t % b == b - 1;
        if boundary {
            let mut divergence: f64 = 0.0;
            for k in 0..n * d {
                let mixed_y = y_next[k];
                x_next[k] += cfg.gamma * y_stored[k] - cfg.alpha * g_stored[k];
                y_next[k] += x[k] - x_next[k] - cfg.alpha * g_stored[k];
                // the element-wise form omits the alpha term above
                let elementwise = mixed_y - (x_next[k] - x[k]);
                divergence = divergence.max((elementwise - y_next[k]).abs());
            }
            trace.diagnostics.max_elementwise_divergence = trace.diagnostics.max_elementwise_divergence.max(divergence);
        } else {
            for k in 0..n * d {
                y_next[k] += x[k] - x_next[k];
            }
        }
        std::mem::swap(&mut x, &mut x_next);
        std::mem::swap(&mut y, &mut y_next);
        std::mem::swap(&mut g, &mut g_next);

        let step = t + 1;
        if boundary {
            if cfg.kind == EngineKind::Svrg && step % cfg.inner_steps == 0 && step < steps {
                w.copy_from_slice(&x);
                for i in 0..n {
                    ds.local_full_grad_into(i, &w[i * d..(i + 1) * d], &mut mu[i * d..(i + 1) * d]);
                }
                evals += total_samples;
            }
            for i in 0..n {
                let xi = &x[i * d..(i + 1) * d];
                let out = &mut v_new[i * d..(i + 1) * d];
                match cfg.kind {
                    EngineKind::Svrg => {
                        let l = sample_rng.random_range(0..ds.sample_count(i));
                        let wi = &w[i * d..(i + 1) * d];
                        let mui = &mu[i * d..(i + 1) * d];
                        svrg_estimate_into(ds, i, xi, wi, mui, l, out, &mut scratch);
                        evals += 2.0;
                    }
                    EngineKind::FullGrad => {
                        ds.local_full_grad_into(i, xi, out);
                        evals += ds.sample_count(i) as f64;
                    }
                    EngineKind::PlainSgd => {
                        let l = sample_rng.random_range(0..ds.sample_count(i));
                        ds.component_grad_into(i, l, xi, out);
                        evals += 1.0;
                    }
                    EngineKind::Consensus => unreachable!("rejected by validate"),
                }
            }
            for k in 0..n * d {
                g[k] += v_new[k] - v[k];
            }
            std::mem::swap(&mut v, &mut v_new);

            node_mean(&g, n, d, &mut gbar);
            node_mean(&v, n, d, &mut vbar);
            let scale = g.iter().chain(&v).fold(1.0f64, |a, u| a.max(u.abs()));
            for m in 0..d {
                let gap = (gbar[m] - vbar[m]).abs() / scale;
                trace.diagnostics.max_tracking_gap = trace.diagnostics.max_tracking_gap.max(gap);
            }
            z_mean(&x, &y, n, d, &mut zbar);
            for m in 0..d {
                let expected = zbar_start[m] - cfg.alpha * vbar_start[m];
                let gap = (zbar[m] - expected).abs() / zbar_start[m].abs().max(1.0);
                trace.diagnostics.max_mean_gap = trace.diagnostics.max_mean_gap.max(gap);
            }
            if let Some(acc) = spectra.as_mut() {
                let worst = acc.finish()?.iter().map(|r| r.sigma).fold(0.0, f64::max);
                trace.window_sigmas.push(worst);
            }
            check_finite(step, &[&x, &y, &g])?;
            if cfg.record_snapshots {
                trace.snapshots.push(snapshot(step, &x, &y, &g, &v, if tau_of(cfg.kind) { &w } else { &x }));
            }
        }
        let due = match cfg.record_stride {
            Some(s) => step % s == 0,
            None => boundary || step % 10 == 0,
        };
        if due || step == steps {
            check_finite(step, &[&x, &y, &g])?;
            trace.records.push(metrics.record(step, &x, &y, Some(&g), comm, evals / total_samples));
        }
        trace.steps_run = step;
    }
    trace.duration = started.elapsed();
    Ok(trace)
}

/// Standard-normal initial states, one per node.
pub fn gaussian_init(n: usize, d: usize, scale: f64, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
        .collect()
}

#[cfg(test)]
mod tests;
