//! Mask-aware mixing matrices and their spectral diagnostics.
//!
//! For each coordinate `m` and step `t`, the base weights are renormalized
//! around the coordinates that were actually transmitted: `A_m` (row
//! stochastic) mixes states, `B_m` (column stochastic) pushes surplus. They
//! are assembled into the 2n x 2n surplus matrix `[[A, 0], [I - A, B]]`,
//! whose columns sum to one.

pub mod eigen;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparsifier::{CoordinateMask, StepMasks};
use crate::topology::{base_weights, SnapshotSource};

pub use eigen::{eigenvalues, sorted_moduli, spectral_radius};

/// Row `i` keeps in-neighbors whose state mask transmitted `m`, plus `i`
/// itself, renormalized to sum to one.
pub fn normalize_in(w_in: &DMatrix<f64>, x_masks: &[CoordinateMask], m: usize) -> Result<DMatrix<f64>> {
    let n = check_square(w_in, x_masks.len())?;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            let w = w_in[(i, j)];
            if w != 0.0 && (j == i || x_masks[j].keeps(m)) {
                a[(i, j)] = w;
                total += w;
            }
        }
        if total <= 0.0 {
            return Err(Error::invalid(format!("row {i} of the in-weights has no self weight")));
        }
        for j in 0..n {
            a[(i, j)] /= total;
        }
    }
    Ok(a)
}

/// Column `j` keeps its full out-neighborhood when sender `j`'s surplus
/// mask transmitted `m`, and collapses to `e_j` otherwise.
pub fn normalize_out(w_out: &DMatrix<f64>, y_masks: &[CoordinateMask], m: usize) -> Result<DMatrix<f64>> {
    let n = check_square(w_out, y_masks.len())?;
    let mut b = DMatrix::zeros(n, n);
    for j in 0..n {
        if y_masks[j].keeps(m) {
            let total: f64 = w_out.column(j).sum();
            if total <= 0.0 {
                return Err(Error::invalid(format!("column {j} of the out-weights is empty")));
            }
            for i in 0..n {
                b[(i, j)] = w_out[(i, j)] / total;
            }
        } else {
            b[(j, j)] = 1.0;
        }
    }
    Ok(b)
}

fn check_square(w: &DMatrix<f64>, masks: usize) -> Result<usize> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: w.ncols(),
        });
    }
    if masks != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: masks,
        });
    }
    Ok(n)
}

/// The 2n x 2n matrix `[[A, 0], [I - A, B]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingMatrix {
    matrix: DMatrix<f64>,
}

impl MixingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn node_count(&self) -> usize {
        self.matrix.nrows() / 2
    }

    /// The surplus block `B`.
    pub fn surplus_block(&self) -> DMatrix<f64> {
        let n = self.node_count();
        self.matrix.view((n, n), (n, n)).into_owned()
    }
}

pub fn assemble_mixing(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<MixingMatrix> {
    let n = a.nrows();
    for dims in [a.ncols(), b.nrows(), b.ncols()] {
        if dims != n {
            return Err(Error::DimensionMismatch { expected: n, found: dims });
        }
    }
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((n, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) - a));
    m.view_mut((n, n), (n, n)).copy_from(b);
    Ok(MixingMatrix { matrix: m })
}

/// `F = [[0, I], [0, -I]]`: moves stored surplus into the state.
pub fn perturbation(n: usize) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        f[(i, n + i)] = 1.0;
        f[(n + i, n + i)] = -1.0;
    }
    f
}

/// Window product of mixing matrices plus the perturbation `gamma * F`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockProduct {
    pub matrix: DMatrix<f64>,
    pub window: usize,
    pub coordinate: usize,
}

/// `M^{last} ... M^{first} + gamma F`, with `mixings` in time order.
pub fn block_product(mixings: &[MixingMatrix], gamma: f64) -> Result<DMatrix<f64>> {
    let first = mixings
        .first()
        .ok_or_else(|| Error::invalid("block product of an empty window"))?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1)")));
    }
    let size = first.matrix.nrows();
    let mut product = DMatrix::identity(size, size);
    for mix in mixings {
        if mix.matrix.nrows() != size {
            return Err(Error::DimensionMismatch {
                expected: size,
                found: mix.matrix.nrows(),
            });
        }
        product = &mix.matrix * product;
    }
    Ok(product + perturbation(size / 2) * gamma)
}

/// Second-largest eigenvalue moduli of a window's state/surplus product
/// and its surplus-weight product.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralReport {
    pub sigma: f64,
    pub lambda2_m: f64,
    pub lambda2_b: f64,
    pub m_moduli: Vec<f64>,
    pub b_moduli: Vec<f64>,
    /// `1 - |lambda_2|` of the state/surplus product.
    pub spectral_gap: f64,
}

pub fn spectral_sigma(m_block: &DMatrix<f64>, b_block: &DMatrix<f64>) -> Result<SpectralReport> {
    let m_moduli = sorted_moduli(m_block)?;
    let b_moduli = sorted_moduli(b_block)?;
    let lambda2_m = m_moduli.get(1).copied().unwrap_or(0.0);
    let lambda2_b = b_moduli.get(1).copied().unwrap_or(0.0);
    Ok(SpectralReport {
        sigma: lambda2_m.max(lambda2_b),
        lambda2_m,
        lambda2_b,
        spectral_gap: 1.0 - lambda2_m,
        m_moduli,
        b_moduli,
    })
}

/// `[[11'/n, 11'/n], [0, 0]]`, the limit of powers of a block product.
pub fn rank_one_limit(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(2 * n, 2 * n);
    l.view_mut((0, 0), (n, 2 * n)).fill(1.0 / n as f64);
    l
}

/// Frobenius distance from `m_block^power` to the rank-one limit.
pub fn rank_one_limit_error(m_block: &DMatrix<f64>, power: u32) -> f64 {
    let size = m_block.nrows();
    let mut acc = DMatrix::identity(size, size);
    let mut base = m_block.clone();
    let mut k = power;
    while k > 0 {
        if k & 1 == 1 {
            acc = &acc * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    (acc - rank_one_limit(size / 2)).norm()
}

/// `||M z - zbar|| / ||z - zbar||` where `zbar = [mean * 1; 0]` and
/// `mean = (1/n) sum_i z_i` over all 2n entries.
///
/// Block products are generally non-normal, so this single-application
/// ratio can exceed `sigma`; it is reported as a diagnostic only.
pub fn contraction_ratio(m_block: &DMatrix<f64>, z: &[f64]) -> f64 {
    let size = m_block.nrows();
    let n = size / 2;
    let lift = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        (0..size)
            .map(|i| v[i] - if i < n { mean } else { 0.0 })
            .map(|e| e * e)
            .sum::<f64>()
            .sqrt()
    };
    let zv = nalgebra::DVector::from_column_slice(z);
    let mz = m_block * &zv;
    let before = lift(z);
    if before == 0.0 {
        return 0.0;
    }
    lift(mz.as_slice()) / before
}

/// Per-coordinate mixing matrices for one step.
pub fn step_mixings(
    w_in: &DMatrix<f64>,
    w_out: &DMatrix<f64>,
    masks: &StepMasks,
    d: usize,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    (0..d)
        .map(|m| Ok((normalize_in(w_in, &masks.x, m)?, normalize_out(w_out, &masks.y, m)?)))
        .collect()
}

/// Spectral summary of one (window, coordinate) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSpectrum {
    pub window: usize,
    pub coordinate: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma: f64,
    pub gap: f64,
}

/// Accumulates the per-coordinate window products of a run as it steps.
#[derive(Clone, Debug)]
pub struct WindowAccumulator {
    n: usize,
    gamma: f64,
    m_products: Vec<DMatrix<f64>>,
    b_products: Vec<DMatrix<f64>>,
}

impl WindowAccumulator {
    pub fn new(n: usize, d: usize, gamma: f64) -> Self {
        WindowAccumulator {
            n,
            gamma,
            m_products: vec![DMatrix::identity(2 * n, 2 * n); d],
            b_products: vec![DMatrix::identity(n, n); d],
        }
    }

    pub fn push_step(&mut self, w_in: &DMatrix<f64>, w_out: &DMatrix<f64>, masks: &StepMasks) -> Result<()> {
        for (m, (mp, bp)) in self.m_products.iter_mut().zip(self.b_products.iter_mut()).enumerate() {
            let a = normalize_in(w_in, &masks.x, m)?;
            let b = normalize_out(w_out, &masks.y, m)?;
            let mix = assemble_mixing(&a, &b)?;
            *mp = mix.matrix() * &*mp;
            *bp = &b * &*bp;
        }
        Ok(())
    }

    /// Closes the window: returns per-coordinate spectral reports and resets.
    pub fn finish(&mut self) -> Result<Vec<SpectralReport>> {
        let f = perturbation(self.n) * self.gamma;
        let reports = self
            .m_products
            .iter()
            .zip(&self.b_products)
            .map(|(mp, bp)| spectral_sigma(&(mp + &f), bp))
            .collect::<Result<Vec<_>>>()?;
        let (n, d) = (self.n, self.m_products.len());
        *self = WindowAccumulator::new(n, d, self.gamma);
        Ok(reports)
    }

    /// Current per-coordinate products including the perturbation.
    pub fn block_products(&self, window: usize) -> Vec<BlockProduct> {
        let f = perturbation(self.n) * self.gamma;
        self.m_products
            .iter()
            .enumerate()
            .map(|(m, mp)| BlockProduct {
                matrix: mp + &f,
                window,
                coordinate: m,
            })
            .collect()
    }

    pub fn surplus_products(&self) -> &[DMatrix<f64>] {
        &self.b_products
    }
}

/// Samples `windows` windows of a topology with fresh masks and reports the
/// spectrum of every (window, coordinate) block product.
pub fn sample_window_spectra<R: rand::Rng + ?Sized>(
    source: &mut dyn SnapshotSource,
    d: usize,
    q: f64,
    gamma: f64,
    windows: usize,
    mask_rng: &mut R,
) -> Result<Vec<WindowSpectrum>> {
    let n = source.node_count();
    let b = source.window();
    let mut acc = WindowAccumulator::new(n, d, gamma);
    let mut out = Vec::with_capacity(windows * d);
    for k in 0..windows {
        for _ in 0..b {
            let snap = source.next_snapshot()?;
            let w = base_weights(&snap);
            let masks = StepMasks::draw(n, d, q, mask_rng)?;
            acc.push_step(&w.w_in, &w.w_out, &masks)?;
        }
        for (m, r) in acc.finish()?.into_iter().enumerate() {
            out.push(WindowSpectrum {
                window: k,
                coordinate: m,
                lambda1: r.m_moduli.first().copied().unwrap_or(0.0),
                lambda2: r.lambda2_m,
                sigma: r.sigma,
                gap: r.spectral_gap,
            });
        }
    }
    Ok(out)
}

/// Largest sigma observed over `windows` sampled windows.
pub fn calibrate_sigma<R: rand::Rng + ?Sized>(
    source: &mut dyn SnapshotSource,
    d: usize,
    q: f64,
    gamma: f64,
    windows: usize,
    mask_rng: &mut R,
) -> Result<f64> {
    Ok(sample_window_spectra(source, d, q, gamma, windows, mask_rng)?
        .iter()
        .map(|s| s.sigma)
        .fold(0.0, f64::max))
}
