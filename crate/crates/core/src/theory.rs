//! Convergence constants, the three-dimensional error system and its
//! empirical checks against engine traces.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engines::{BoundarySnapshot, RunTrace};
use crate::error::{Error, Result};
use crate::mixing::spectral_radius;

/// Problem constants entering the rate formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub sigma: f64,
    pub l: f64,
    pub mu: f64,
    pub q_tilde: f64,
    pub window: usize,
    pub nodes: usize,
}

impl TheoryInputs {
    pub fn new(sigma: f64, l: f64, mu: f64, window: usize, nodes: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma) {
            return Err(Error::invalid(format!("sigma must lie in [0, 1), got {sigma}")));
        }
        if !(mu > 0.0 && l >= mu && l.is_finite()) {
            return Err(Error::invalid(format!("need 0 < mu <= L, got mu = {mu}, L = {l}")));
        }
        if window == 0 || nodes == 0 {
            return Err(Error::invalid("window and node count must be positive"));
        }
        Ok(TheoryInputs {
            sigma,
            l,
            mu,
            q_tilde: l / mu,
            window,
            nodes,
        })
    }

    /// Inputs with a prescribed condition number and `mu = 1`.
    pub fn with_condition(sigma: f64, q_tilde: f64, window: usize, nodes: usize) -> Result<Self> {
        Self::new(sigma, q_tilde, 1.0, window, nodes)
    }

    fn gap(&self) -> f64 {
        1.0 - self.sigma * self.sigma
    }
}

/// `(1 - sigma^2)^2 / (187 Q L)`.
pub fn theorem1_alpha(inputs: &TheoryInputs) -> f64 {
    inputs.gap().powi(2) / (187.0 * inputs.q_tilde * inputs.l)
}

/// Epoch length `B ceil(1496 Q^2 ln(200 Q^2) / ((1 - sigma^2)^2 B))`.
pub fn corollary1_t(inputs: &TheoryInputs) -> usize {
    let q2 = inputs.q_tilde * inputs.q_tilde;
    let b = inputs.window as f64;
    let blocks = (1496.0 * q2 / (inputs.gap().powi(2) * b) * (200.0 * q2).ln()).ceil();
    inputs.window * blocks as usize
}

/// `8 Q^2 exp(-(1 - sigma^2)^2 T / (748 Q^2)) + 0.66`.
/// `t` is a real so the unrounded epoch length can be evaluated too.
pub fn lambda_rate(inputs: &TheoryInputs, t: f64) -> f64 {
    let q2 = inputs.q_tilde * inputs.q_tilde;
    8.0 * q2 * (-inputs.gap().powi(2) * t / (748.0 * q2)).exp() + 0.66
}

/// Largest step size for which the error system is stated.
pub fn prop1_alpha_bound(inputs: &TheoryInputs) -> f64 {
    inputs.mu * inputs.gap() / (14.0 * 2f64.sqrt() * inputs.l * inputs.l)
}

/// `u+ <= J u + H u~` with the weight vectors used to bound its norms.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    pub alpha: f64,
    pub j: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub q_weights: DVector<f64>,
    /// False when `alpha` exceeds [`prop1_alpha_bound`]; the matrices are
    /// still filled in.
    pub admissible: bool,
}

impl LtiSystem {
    /// `J u + H u_tilde`, or `J u` alone when `with_variance` is false.
    pub fn bound(&self, u: &[f64; 3], u_tilde: &[f64; 3], with_variance: bool) -> [f64; 3] {
        let u = DVector::from_row_slice(u);
        let mut rhs = &self.j * u;
        if with_variance {
            rhs += &self.h * DVector::from_row_slice(u_tilde);
        }
        [rhs[0], rhs[1], rhs[2]]
    }
}

pub fn build_lti(alpha: f64, inputs: &TheoryInputs) -> LtiSystem {
    let TheoryInputs { sigma, l, mu, q_tilde, nodes, .. } = *inputs;
    let s2 = sigma * sigma;
    let gap = inputs.gap();
    let n = nodes as f64;
    #[rustfmt::skip]
    let j = DMatrix::from_row_slice(3, 3, &[
        (1.0 + s2) / 2.0, 0.0, 2.0 * alpha * alpha * l * l / gap,
        2.0 * l * l * alpha / mu, 1.0 - mu * alpha / 2.0, 0.0,
        120.0 / gap, 89.0 / gap, (3.0 + s2) / 4.0,
    ]);
    let hv = 4.0 * l * l * alpha * alpha / n;
    #[rustfmt::skip]
    let h = DMatrix::from_row_slice(3, 3, &[
        0.0, 0.0, 0.0,
        hv, hv, 0.0,
        38.0 / gap, 38.0 / gap, 0.0,
    ]);
    let q2 = q_tilde * q_tilde;
    LtiSystem {
        alpha,
        j,
        h,
        delta: DVector::from_row_slice(&[1.0, 8.0 * q2, 6656.0 * q2 / (gap * gap)]),
        q_weights: DVector::from_row_slice(&[1.0, 1.0, 1457.0 / (gap * gap)]),
        admissible: (0.0..=prop1_alpha_bound(inputs)).contains(&alpha),
    }
}

/// Induced weighted infinity norm `max_i (sum_j |M_ij| w_j) / w_i`.
pub fn weighted_inf_norm(matrix: &DMatrix<f64>, weights: &DVector<f64>) -> Result<f64> {
    if matrix.nrows() != weights.len() || matrix.ncols() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: matrix.nrows().max(matrix.ncols()),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::invalid(format!("weights must be positive, got {w}")));
    }
    Ok(matrix
        .row_iter()
        .zip(weights.iter())
        .map(|(row, wi)| row.iter().zip(weights.iter()).map(|(m, w)| m.abs() * w).sum::<f64>() / wi)
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma5Report {
    pub alpha: f64,
    pub rho_j: f64,
    /// `|||J|||` in the `delta`-weighted norm.
    pub j_norm: f64,
    /// `1 - mu alpha / 4`.
    pub j_target: f64,
    /// `|||(I - J)^{-1} H|||` in the `q`-weighted norm.
    pub resolvent_norm: f64,
    /// `rho(J) < |||J||| <= 1 - mu alpha / 4`, the second up to rounding.
    pub contraction_ok: bool,
    /// `|||(I - J)^{-1} H||| < 0.66`.
    pub resolvent_ok: bool,
}

impl Lemma5Report {
    pub fn ok(&self) -> bool {
        self.contraction_ok && self.resolvent_ok
    }
}

pub fn lemma5_check(alpha: f64, inputs: &TheoryInputs) -> Result<Lemma5Report> {
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let lti = build_lti(alpha, inputs);
    let rho_j = spectral_radius(&lti.j)?;
    let j_norm = weighted_inf_norm(&lti.j, &lti.delta)?;
    let j_target = 1.0 - inputs.mu * alpha / 4.0;
    let resolvent = (DMatrix::identity(3, 3) - &lti.j).try_inverse().ok_or(Error::Singular)?;
    let resolvent_norm = weighted_inf_norm(&(resolvent * &lti.h), &lti.q_weights)?;
    Ok(Lemma5Report {
        alpha,
        rho_j,
        j_norm,
        j_target,
        resolvent_norm,
        // the optimality row of J delta equals (1 - mu alpha / 4) delta exactly
        contraction_ok: rho_j < j_norm && j_norm <= j_target * (1.0 + 1e-12),
        resolvent_ok: resolvent_norm < 0.66,
    })
}

/// Error components at one block boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector {
    pub t: usize,
    /// Consensus, optimality and scaled tracking error.
    pub u: [f64; 3],
    /// The same first two quantities for the SVRG snapshots; third entry 0.
    pub u_tilde: [f64; 3],
}

/// `(sum_i |zbar - a_i|^2, n |zbar - x*|^2)` with `zbar` the node mean of
/// `a` plus `b` spread over `n` nodes.
fn spread(a: &[f64], b: Option<&[f64]>, n: usize, d: usize, x_star: &[f64]) -> (f64, f64) {
    let mut zbar = vec![0.0; d];
    for i in 0..n {
        for m in 0..d {
            zbar[m] += a[i * d + m] + b.map_or(0.0, |b| b[i * d + m]);
        }
    }
    zbar.iter_mut().for_each(|z| *z /= n as f64);
    let consensus = (0..n)
        .map(|i| (0..d).map(|m| (zbar[m] - a[i * d + m]).powi(2)).sum::<f64>())
        .sum();
    let optimality = n as f64 * zbar.iter().zip(x_star).map(|(z, x)| (z - x).powi(2)).sum::<f64>();
    (consensus, optimality)
}

fn error_vector(s: &BoundarySnapshot, n: usize, d: usize, x_star: &[f64], l: f64) -> ErrorVector {
    let (c, o) = spread(&s.x, Some(&s.y), n, d, x_star);
    let mut tracking = 0.0;
    for m in 0..d {
        let gbar = (0..n).map(|i| s.g[i * d + m]).sum::<f64>() / n as f64;
        tracking += (0..n).map(|i| (s.g[i * d + m] - gbar).powi(2)).sum::<f64>();
    }
    let (tc, to) = spread(&s.tau, None, n, d, x_star);
    ErrorVector {
        t: s.t,
        u: [c, o, tracking / (l * l)],
        u_tilde: [tc, to, 0.0],
    }
}

/// Error vectors at every recorded block boundary of an optimizing run.
pub fn u_from_trace(trace: &RunTrace, x_star: &[f64], l: f64) -> Result<Vec<ErrorVector>> {
    if trace.snapshots.is_empty() {
        return Err(Error::MissingSnapshots);
    }
    if x_star.len() != trace.dim {
        return Err(Error::DimensionMismatch {
            expected: trace.dim,
            found: x_star.len(),
        });
    }
    Ok(trace
        .snapshots
        .iter()
        .map(|s| error_vector(s, trace.nodes, trace.dim, x_star, l))
        .collect())
}

/// Worst left-to-right ratio of a componentwise inequality check.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub transitions: usize,
    /// `max lhs / rhs` over transitions and components.
    pub worst_ratio: f64,
    /// Boundary step and component where the worst ratio occurred.
    pub worst_at: Option<(usize, usize)>,
}

impl RecursionReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.worst_ratio <= 1.0 + slack
    }

    fn observe(&mut self, t: usize, component: usize, lhs: f64, rhs: f64) {
        // both sides at rounding level count as equal
        let ratio = if lhs <= 1e-28 { 0.0 } else { lhs / rhs.max(1e-28) };
        if ratio > self.worst_ratio || self.worst_at.is_none() {
            self.worst_ratio = ratio;
            self.worst_at = Some((t, component));
        }
    }
}

/// Averages the error sequences of an ensemble (all runs share one
/// configuration) and checks `u+ <= J u + H u~` at every boundary.
/// Deterministic runs pass `with_variance = false`, dropping `H`.
pub fn verify_prop1(ensemble: &[Vec<ErrorVector>], lti: &LtiSystem, with_variance: bool) -> Result<RecursionReport> {
    let first = ensemble.first().ok_or(Error::MissingSnapshots)?;
    let len = first.len();
    if let Some(run) = ensemble.iter().find(|r| r.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: run.len(),
        });
    }
    let runs = ensemble.len() as f64;
    let mean: Vec<([f64; 3], [f64; 3])> = (0..len)
        .map(|k| {
            let mut u = [0.0; 3];
            let mut ut = [0.0; 3];
            for run in ensemble {
                for c in 0..3 {
                    u[c] += run[k].u[c] / runs;
                    ut[c] += run[k].u_tilde[c] / runs;
                }
            }
            (u, ut)
        })
        .collect();
    let mut report = RecursionReport::default();
    for k in 0..len.saturating_sub(1) {
        let rhs = lti.bound(&mean[k].0, &mean[k].1, with_variance);
        for c in 0..3 {
            report.observe(first[k + 1].t, c, mean[k + 1].0[c], rhs[c]);
        }
        report.transitions += 1;
    }
    Ok(report)
}

/// Pathwise consensus recursion
/// `sum |x+ - zbar+|^2 <= (1 + s^2)/2 sum |x - zbar|^2 + 2 alpha^2 / (1 - s^2) sum |g - gbar|^2`
/// with `s` the measured sigma of each window.
pub fn verify_lemma2(trace: &RunTrace, alpha: f64) -> Result<RecursionReport> {
    let snaps = &trace.snapshots;
    if snaps.len() < 2 || trace.window_sigmas.len() + 1 < snaps.len() {
        return Err(Error::MissingSnapshots);
    }
    let (n, d) = (trace.nodes, trace.dim);
    let zero = vec![0.0; d];
    let mut report = RecursionReport::default();
    for (k, pair) in snaps.windows(2).enumerate() {
        let e0 = error_vector(&pair[0], n, d, &zero, 1.0);
        let e1 = error_vector(&pair[1], n, d, &zero, 1.0);
        let s2 = trace.window_sigmas[k].powi(2);
        if s2 >= 1.0 {
            return Err(Error::invalid(format!("window {k} has sigma >= 1")));
        }
        let rhs = (1.0 + s2) / 2.0 * e0.u[0] + 2.0 * alpha * alpha / (1.0 - s2) * e0.u[2];
        report.observe(pair[1].t, 0, e1.u[0], rhs);
        report.transitions += 1;
    }
    Ok(report)
}
