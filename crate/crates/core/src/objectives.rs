//! Decentralized objectives `f(x) = (1/n) sum_i f_i(x)` with
//! `f_i(x) = (1/m_i) sum_j f_ij(x)`.
//!
//! Least squares components are `f_ij(x) = (y_ij - d_ij'x)^2`; logistic
//! components are `(reg/2)|x|^2 + ln(1 + exp(-y_ij d_ij'x))` with labels in
//! {-1, +1}.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    LeastSquares,
    Logistic { reg: f64 },
}

/// Samples held by one node, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeData {
    dim: usize,
    rows: Vec<f64>,
    targets: Vec<f64>,
}

impl NodeData {
    pub fn new(dim: usize, rows: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if targets.is_empty() {
            return Err(Error::invalid("a node needs at least one sample"));
        }
        if rows.len() != dim * targets.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * targets.len(),
                found: rows.len(),
            });
        }
        if rows.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample value"));
        }
        Ok(NodeData { dim, rows, targets })
    }

    pub fn sample_count(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j * self.dim..(j + 1) * self.dim]
    }

    pub fn target(&self, j: usize) -> f64 {
        self.targets[j]
    }

    /// One line per sample: features then the target, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.sample_count() {
            for v in self.row(j) {
                let _ = write!(out, "{v:.16e},");
            }
            let _ = writeln!(out, "{:.16e}", self.targets[j]);
        }
        out
    }

    /// Parses the format written by [`NodeData::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    what: "dataset csv",
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            let width = values.len();
            if width < 2 {
                return Err(Error::Parse {
                    what: "dataset csv",
                    line: lineno + 1,
                    message: "need at least one feature and a target".into(),
                });
            }
            match dim {
                None => dim = Some(width - 1),
                Some(d) if d != width - 1 => {
                    return Err(Error::Parse {
                        what: "dataset csv",
                        line: lineno + 1,
                        message: format!("expected {} columns, found {width}", d + 1),
                    })
                }
                _ => {}
            }
            rows.extend_from_slice(&values[..width - 1]);
            targets.push(values[width - 1]);
        }
        let dim = dim.ok_or(Error::Parse {
            what: "dataset csv",
            line: 0,
            message: "no samples".into(),
        })?;
        NodeData::new(dim, rows, targets)
    }
}

/// Smoothness and strong-convexity constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConstants {
    /// Smoothness of every component `f_ij`.
    pub l: f64,
    /// Strong convexity of the global `f`.
    pub mu: f64,
}

impl ObjectiveConstants {
    pub fn condition_number(&self) -> f64 {
        self.l / self.mu
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimumCertificate {
    pub x_star: Vec<f64>,
    pub gradient_norm: f64,
}

/// Cached `H_i = (2/m_i) D_i'D_i` and `c_i = (2/m_i) D_i'y_i` so that the
/// least-squares local gradient is `H_i x - c_i`.
#[derive(Clone, Debug)]
struct QuadraticForm {
    h: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    loss: Loss,
    dim: usize,
    nodes: Vec<NodeData>,
    quadratic: Vec<QuadraticForm>,
}

impl Dataset {
    pub fn new(loss: Loss, nodes: Vec<NodeData>) -> Result<Self> {
        let dim = nodes
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one node"))?
            .dim();
        if let Some(bad) = nodes.iter().find(|nd| nd.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        if let Loss::Logistic { reg } = loss {
            if !(reg > 0.0) {
                return Err(Error::invalid("logistic regularization must be positive"));
            }
        }
        let quadratic = match loss {
            Loss::LeastSquares => nodes.iter().map(|nd| quadratic_form(nd)).collect(),
            Loss::Logistic { .. } => Vec::new(),
        };
        Ok(Dataset {
            loss,
            dim,
            nodes,
            quadratic,
        })
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &NodeData {
        &self.nodes[i]
    }

    pub fn sample_count(&self, i: usize) -> usize {
        self.nodes[i].sample_count()
    }

    pub fn total_samples(&self) -> usize {
        self.nodes.iter().map(NodeData::sample_count).sum()
    }

    pub fn component_loss(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        let node = &self.nodes[i];
        let a = node.row(j);
        let y = node.target(j);
        let inner = dot(a, x);
        match self.loss {
            Loss::LeastSquares => (y - inner).powi(2),
            Loss::Logistic { reg } => 0.5 * reg * dot(x, x) + softplus(-y * inner),
        }
    }

    /// Writes `grad f_ij(x)` into `out`.
    pub fn component_grad_into(&self, i: usize, j: usize, x: &[f64], out: &mut [f64]) {
        let node = &self.nodes[i];
        let a = node.row(j);
        let y = node.target(j);
        let inner = dot(a, x);
        match self.loss {
            Loss::LeastSquares => {
                let s = 2.0 * (inner - y);
                for (o, &ak) in out.iter_mut().zip(a) {
                    *o = s * ak;
                }
            }
            Loss::Logistic { reg } => {
                let s = -y * sigmoid(-y * inner);
                for ((o, &ak), &xk) in out.iter_mut().zip(a).zip(x) {
                    *o = reg * xk + s * ak;
                }
            }
        }
    }

    pub fn component_grad(&self, i: usize, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.component_grad_into(i, j, x, &mut out);
        out
    }

    pub fn local_loss(&self, i: usize, x: &[f64]) -> f64 {
        let m = self.sample_count(i);
        (0..m).map(|j| self.component_loss(i, j, x)).sum::<f64>() / m as f64
    }

    /// Writes `grad f_i(x)`, the mean of the node's component gradients.
    pub fn local_full_grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        if let Some(q) = self.quadratic.get(i) {
            let d = self.dim;
            for (r, o) in out.iter_mut().enumerate() {
                *o = dot(&q.h[r * d..(r + 1) * d], x) - q.c[r];
            }
            return;
        }
        self.local_full_grad_by_samples(i, x, out);
    }

    /// Mean of component gradients, always summed sample by sample.
    pub fn local_full_grad_by_samples(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let m = self.sample_count(i);
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut g = vec![0.0; self.dim];
        for j in 0..m {
            self.component_grad_into(i, j, x, &mut g);
            for (o, gk) in out.iter_mut().zip(&g) {
                *o += gk;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    pub fn local_full_grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.local_full_grad_into(i, x, &mut out);
        out
    }

    pub fn global_loss(&self, x: &[f64]) -> f64 {
        let n = self.node_count();
        (0..n).map(|i| self.local_loss(i, x)).sum::<f64>() / n as f64
    }

    pub fn global_grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.node_count();
        let mut total = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for i in 0..n {
            self.local_full_grad_by_samples(i, x, &mut g);
            for (t, gk) in total.iter_mut().zip(&g) {
                *t += gk;
            }
        }
        total.iter_mut().for_each(|t| *t /= n as f64);
        total
    }

    /// Global Hessian `(1/n) sum_i (1/m_i) sum_j hess f_ij(x)`.
    fn global_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let n = self.node_count() as f64;
        let mut h = DMatrix::zeros(d, d);
        for node in &self.nodes {
            let m = node.sample_count() as f64;
            for j in 0..node.sample_count() {
                let a = node.row(j);
                let w = match self.loss {
                    Loss::LeastSquares => 2.0,
                    Loss::Logistic { .. } => {
                        let s = sigmoid(node.target(j) * dot(a, x));
                        s * (1.0 - s)
                    }
                } / (m * n);
                for r in 0..d {
                    let ar = w * a[r];
                    for c in 0..d {
                        h[(r, c)] += ar * a[c];
                    }
                }
            }
        }
        if let Loss::Logistic { reg } = self.loss {
            for r in 0..d {
                h[(r, r)] += reg;
            }
        }
        h
    }

    pub fn constants(&self) -> Result<ObjectiveConstants> {
        let max_row_norm2 = self
            .nodes
            .iter()
            .flat_map(|nd| (0..nd.sample_count()).map(move |j| dot(nd.row(j), nd.row(j))))
            .fold(0.0, f64::max);
        let (l, mu) = match self.loss {
            Loss::LeastSquares => {
                let h = self.global_hessian(&vec![0.0; self.dim]);
                let mu = h.symmetric_eigenvalues().min();
                (2.0 * max_row_norm2, mu)
            }
            Loss::Logistic { reg } => (max_row_norm2 / 4.0 + reg, reg),
        };
        if !(mu > 1e-14 * l.max(f64::MIN_POSITIVE)) {
            return Err(Error::NotStronglyConvex { mu });
        }
        Ok(ObjectiveConstants { l, mu })
    }

    /// Minimizer of the global objective with a gradient-norm certificate.
    ///
    /// Least squares solves the normal equations; logistic regression runs
    /// damped Newton iterations.
    pub fn centralized_optimum(&self) -> Result<OptimumCertificate> {
        let d = self.dim;
        let zero = vec![0.0; d];
        let g0 = norm(&self.global_grad(&zero));
        let tolerance = 1e-12 * g0.max(1.0);
        let x = match self.loss {
            Loss::LeastSquares => {
                let h = self.global_hessian(&zero);
                let g = DVector::from_vec(self.global_grad(&zero));
                let chol = h.clone().cholesky().ok_or(Error::NotStronglyConvex { mu: 0.0 })?;
                let mut x = chol.solve(&(-g));
                // one round of iterative refinement
                let r = DVector::from_vec(self.global_grad(x.as_slice()));
                x -= chol.solve(&r);
                x.as_slice().to_vec()
            }
            Loss::Logistic { .. } => self.newton(tolerance)?,
        };
        let gradient_norm = norm(&self.global_grad(&x));
        if gradient_norm > 1e-10 * g0.max(1.0) {
            return Err(Error::BudgetExhausted {
                iterations: 0,
                grad_norm: gradient_norm,
            });
        }
        Ok(OptimumCertificate {
            x_star: x,
            gradient_norm,
        })
    }

    fn newton(&self, tolerance: f64) -> Result<Vec<f64>> {
        const MAX_ITERATIONS: usize = 100;
        let mut x = vec![0.0; self.dim];
        let mut f = self.global_loss(&x);
        for _ in 0..MAX_ITERATIONS {
            let g = DVector::from_vec(self.global_grad(&x));
            if g.norm() <= tolerance {
                return Ok(x);
            }
            let h = self.global_hessian(&x);
            let step = h.cholesky().ok_or(Error::Singular)?.solve(&(-&g));
            let slope = g.dot(&step);
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
                let ft = self.global_loss(&trial);
                if ft <= f + 1e-4 * t * slope || t < 1e-10 {
                    x = trial;
                    f = ft;
                    break;
                }
                t *= 0.5;
            }
        }
        let grad_norm = norm(&self.global_grad(&x));
        if grad_norm <= tolerance * 100.0 {
            return Ok(x);
        }
        Err(Error::BudgetExhausted {
            iterations: MAX_ITERATIONS,
            grad_norm,
        })
    }
}

fn quadratic_form(node: &NodeData) -> QuadraticForm {
    let d = node.dim();
    let m = node.sample_count();
    let scale = 2.0 / m as f64;
    let mut h = vec![0.0; d * d];
    let mut c = vec![0.0; d];
    for j in 0..m {
        let a = node.row(j);
        let y = node.target(j);
        for r in 0..d {
            c[r] += scale * a[r] * y;
            for k in 0..d {
                h[r * d + k] += scale * a[r] * a[k];
            }
        }
    }
    QuadraticForm { h, c }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Synthetic linear regression: `y_i = D_i x + noise`, each row of `D_i`
/// standard normal rescaled to sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinregParams {
    pub nodes: usize,
    pub samples_per_node: usize,
    pub dim: usize,
    pub noise_variance: f64,
    /// Rows whose raw sum is smaller than this in magnitude are redrawn;
    /// dividing by a near-zero sum would blow up the smoothness constant.
    #[serde(default = "default_min_row_sum")]
    pub min_abs_row_sum: f64,
}

fn default_min_row_sum() -> f64 {
    1.0
}

impl LinregParams {
    pub fn new(nodes: usize, samples_per_node: usize, dim: usize, noise_variance: f64) -> Self {
        LinregParams {
            nodes,
            samples_per_node,
            dim,
            noise_variance,
            min_abs_row_sum: default_min_row_sum(),
        }
    }
}

/// Returns the dataset and the planted parameter vector.
pub fn gen_linreg<R: Rng + ?Sized>(params: &LinregParams, rng: &mut R) -> Result<(Dataset, Vec<f64>)> {
    let LinregParams {
        nodes,
        samples_per_node: m,
        dim: d,
        noise_variance,
        min_abs_row_sum,
    } = *params;
    if nodes == 0 || m == 0 || d == 0 {
        return Err(Error::invalid("nodes, samples and dimension must be positive"));
    }
    if !(noise_variance >= 0.0) || !(min_abs_row_sum >= 0.0) {
        return Err(Error::invalid("noise variance and row-sum threshold must be nonnegative"));
    }
    let planted: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let noise_sd = noise_variance.sqrt();
    let mut out = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        let mut rows = Vec::with_capacity(m * d);
        let mut targets = Vec::with_capacity(m);
        for _ in 0..m {
            let row = loop {
                let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let s: f64 = raw.iter().sum();
                if s != 0.0 && s.abs() >= min_abs_row_sum {
                    break raw.into_iter().map(|v| v / s).collect::<Vec<f64>>();
                }
            };
            let eta: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sd;
            targets.push(dot(&row, &planted) + eta);
            rows.extend(row);
        }
        out.push(NodeData::new(d, rows, targets)?);
    }
    Ok((Dataset::new(Loss::LeastSquares, out)?, planted))
}

/// Synthetic binary logistic regression with unit-norm features and
/// labels from a planted separator, a fraction of them flipped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogregParams {
    pub nodes: usize,
    pub samples_per_node: usize,
    pub dim: usize,
    pub reg: f64,
    #[serde(default = "default_flip")]
    pub label_flip: f64,
}

fn default_flip() -> f64 {
    0.1
}

impl LogregParams {
    pub fn new(nodes: usize, samples_per_node: usize, dim: usize, reg: f64) -> Self {
        LogregParams {
            nodes,
            samples_per_node,
            dim,
            reg,
            label_flip: default_flip(),
        }
    }
}

pub fn gen_logreg<R: Rng + ?Sized>(params: &LogregParams, rng: &mut R) -> Result<Dataset> {
    let LogregParams {
        nodes,
        samples_per_node: m,
        dim: d,
        reg,
        label_flip,
    } = *params;
    if nodes == 0 || m == 0 || d == 0 {
        return Err(Error::invalid("nodes, samples and dimension must be positive"));
    }
    if !(reg > 0.0) {
        return Err(Error::invalid("regularization must be positive"));
    }
    if !(0.0..=1.0).contains(&label_flip) {
        return Err(Error::invalid("label flip probability outside [0, 1]"));
    }
    let separator: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = Vec::with_capacity(nodes);
    for _ in 0..nodes {
        let mut rows = Vec::with_capacity(m * d);
        let mut targets = Vec::with_capacity(m);
        for _ in 0..m {
            let row = loop {
                let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let len = norm(&raw);
                if len > 0.0 {
                    break raw.into_iter().map(|v| v / len).collect::<Vec<f64>>();
                }
            };
            let mut label = if dot(&row, &separator) >= 0.0 { 1.0 } else { -1.0 };
            if rng.random_bool(label_flip) {
                label = -label;
            }
            targets.push(label);
            rows.extend(row);
        }
        out.push(NodeData::new(d, rows, targets)?);
    }
    Dataset::new(Loss::Logistic { reg }, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn small_linreg(noise: f64, seed: u64) -> (Dataset, Vec<f64>) {
        let mut rng = substream(seed, Stream::Data);
        gen_linreg(&LinregParams::new(3, 20, 4, noise), &mut rng).unwrap()
    }

    fn small_logreg(seed: u64) -> Dataset {
        let mut rng = substream(seed, Stream::Data);
        gen_logreg(&LogregParams::new(3, 15, 4, 1e-2), &mut rng).unwrap()
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut p = x.to_vec();
                let mut q = x.to_vec();
                p[k] += h;
                q[k] -= h;
                (f(&p) - f(&q)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn linreg_rows_sum_to_one() {
        let mut rng = substream(1, Stream::Data);
        let (ds, planted) = gen_linreg(&LinregParams::new(10, 200, 64, 0.01), &mut rng).unwrap();
        assert_eq!(ds.node_count(), 10);
        assert_eq!(ds.total_samples(), 2000);
        assert_eq!(planted.len(), 64);
        for i in 0..10 {
            for j in 0..200 {
                let s: f64 = ds.node(i).row(j).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_linreg_recovers_planted_vector() {
        let (ds, planted) = small_linreg(0.0, 3);
        let cert = ds.centralized_optimum().unwrap();
        for (a, b) in cert.x_star.iter().zip(&planted) {
            assert!((a - b).abs() <= 1e-10);
        }
        assert!(norm(&ds.local_full_grad(0, &planted)) < 1e-12);
    }

    #[test]
    fn component_gradient_examples() {
        let (ds, _) = small_linreg(0.01, 4);
        // x placing sample (0, 0) exactly on its target: x = y * a / |a|^2
        let a = ds.node(0).row(0).to_vec();
        let y = ds.node(0).target(0);
        let x: Vec<f64> = a.iter().map(|v| y * v / dot(&a, &a)).collect();
        assert!(norm(&ds.component_grad(0, 0, &x)) < 1e-12);

        let lg = small_logreg(5);
        let g = lg.component_grad(1, 2, &[0.0; 4]);
        let expect: Vec<f64> = lg.node(1).row(2).iter().map(|v| -lg.node(1).target(2) * v / 2.0).collect();
        assert_eq!(g, expect);
    }

    #[test]
    fn logistic_loss_by_hand() {
        let node = NodeData::new(2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 2.0], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let ds = Dataset::new(Loss::Logistic { reg: 0.5 }, vec![node]).unwrap();
        let x = [0.5, -1.0];
        // components: 0.25*|x|^2 + ln(1 + exp(-y a'x))
        let reg_term = 0.25 * 1.25;
        let expected = [
            reg_term + (1.0 + (-0.5f64).exp()).ln(),
            reg_term + (1.0 + (-1.0f64).exp()).ln(),
            reg_term + (1.0 + (0.5f64).exp()).ln(),
            reg_term + (1.0 + (-2.5f64).exp()).ln(),
        ];
        for (j, e) in expected.iter().enumerate() {
            assert!((ds.component_loss(0, j, &x) - e).abs() < 1e-14);
        }
        assert!((ds.local_loss(0, &x) - expected.iter().sum::<f64>() / 4.0).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (lin, _) = small_linreg(0.01, 6);
        let log = small_logreg(6);
        let mut rng = substream(6, Stream::Init);
        for ds in [&lin, &log] {
            for _ in 0..100 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let i = rng.random_range(0..3);
                let j = rng.random_range(0..ds.sample_count(i));
                let g = ds.component_grad(i, j, &x);
                let fd = central_difference(|p| ds.component_loss(i, j, p), &x, 1e-6);
                let err: f64 = norm(&g.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>());
                assert!(err <= 1e-4 * (1.0 + norm(&g)), "err {err}");
            }
        }
    }

    #[test]
    fn local_gradient_is_component_mean() {
        let (ds, _) = small_linreg(0.01, 7);
        let x = [0.3, -0.2, 1.0, 0.5];
        let mut mean = vec![0.0; 4];
        for j in 0..ds.sample_count(1) {
            for (a, b) in mean.iter_mut().zip(ds.component_grad(1, j, &x)) {
                *a += b / ds.sample_count(1) as f64;
            }
        }
        let cached = ds.local_full_grad(1, &x);
        for (a, b) in cached.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
        let single = Dataset::new(Loss::LeastSquares, vec![NodeData::new(2, vec![1.0, 2.0], vec![3.0]).unwrap()]).unwrap();
        assert_eq!(single.local_full_grad(0, &[1.0, 1.0]), single.component_grad(0, 0, &[1.0, 1.0]));
    }

    #[test]
    fn constant_examples() {
        let one = Dataset::new(Loss::LeastSquares, vec![NodeData::new(2, vec![1.0, 0.0], vec![0.0]).unwrap()]).unwrap();
        // rank deficient in the second coordinate
        assert!(matches!(one.constants(), Err(Error::NotStronglyConvex { .. })));
        let two = Dataset::new(
            Loss::LeastSquares,
            vec![NodeData::new(2, vec![1.0, 0.0, 0.0, 0.5], vec![0.0, 0.0]).unwrap()],
        )
        .unwrap();
        assert_eq!(two.constants().unwrap().l, 2.0);

        let zeros = Dataset::new(Loss::Logistic { reg: 0.3 }, vec![NodeData::new(3, vec![0.0; 6], vec![1.0, -1.0]).unwrap()]).unwrap();
        let c = zeros.constants().unwrap();
        assert_eq!(c.l, 0.3);
        assert_eq!(c.mu, 0.3);
        assert_eq!(c.condition_number(), 1.0);

        let log = small_logreg(8);
        assert!(log.constants().unwrap().mu >= 1e-2);
    }

    #[test]
    fn mu_matches_rayleigh_quotient_search() {
        let (ds, _) = small_linreg(0.01, 9);
        let mu = ds.constants().unwrap().mu;
        let h = ds.global_hessian(&[0.0; 4]);
        let mut rng = substream(9, Stream::Init);
        let mut best = f64::INFINITY;
        for _ in 0..1000 {
            let v = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
            best = best.min(v.dot(&(&h * &v)) / v.dot(&v));
        }
        assert!(best >= mu * (1.0 - 1e-12));
        // inverse iteration converges to the minimizing direction
        let chol = h.clone().cholesky().unwrap();
        let mut v = DVector::from_element(4, 1.0);
        for _ in 0..500 {
            v = chol.solve(&v);
            v /= v.norm();
        }
        let rq = v.dot(&(&h * &v));
        assert!((rq - mu).abs() <= 1e-10 * mu, "rayleigh {rq} vs {mu}");
    }

    #[test]
    fn linear_solve_matches_long_gradient_descent() {
        let (ds, _) = small_linreg(0.01, 10);
        let cert = ds.centralized_optimum().unwrap();
        assert!(cert.gradient_norm <= 1e-10);
        let c = ds.constants().unwrap();
        let lf = ds.global_hessian(&[0.0; 4]).symmetric_eigenvalues().max();
        let step = 1.0 / lf;
        let mut x = vec![0.0; 4];
        let mut g = vec![0.0; 4];
        for _ in 0..1_000_000 {
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..ds.node_count() {
                for (a, b) in g.iter_mut().zip(ds.local_full_grad(i, &x)) {
                    *a += b / ds.node_count() as f64;
                }
            }
            for (a, b) in x.iter_mut().zip(&g) {
                *a -= step * b;
            }
        }
        assert!(c.mu > 0.0);
        for (a, b) in x.iter().zip(&cert.x_star) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn optimum_is_minimal_and_strongly_convex() {
        let (lin, _) = small_linreg(0.05, 11);
        let log = small_logreg(11);
        let mut rng = substream(11, Stream::Init);
        for ds in [&lin, &log] {
            let cert = ds.centralized_optimum().unwrap();
            assert!(cert.gradient_norm <= 1e-10 * norm(&ds.global_grad(&[0.0; 4])).max(1.0));
            let fstar = ds.global_loss(&cert.x_star);
            let mu = ds.constants().unwrap().mu;
            for _ in 0..1000 {
                let x: Vec<f64> = cert.x_star.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
                assert!(ds.global_loss(&x) >= fstar);
                let x2: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g = ds.global_grad(&x);
                let diff: Vec<f64> = x2.iter().zip(&x).map(|(a, b)| a - b).collect();
                let lower = ds.global_loss(&x) + dot(&g, &diff) + 0.5 * mu * dot(&diff, &diff);
                assert!(ds.global_loss(&x2) >= lower - 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let (ds, _) = small_linreg(0.01, 12);
        let text = ds.node(2).to_csv();
        assert_eq!(NodeData::from_csv(&text).unwrap(), *ds.node(2));
        assert!(NodeData::from_csv("").is_err());
        assert!(NodeData::from_csv("1.0\n").is_err());
        assert!(NodeData::from_csv("1,2,3\n1,2\n").is_err());
        assert!(NodeData::from_csv("1,x\n").is_err());
        assert!(NodeData::from_csv("1,NaN\n").is_err());
    }
}
