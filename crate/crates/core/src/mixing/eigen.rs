//! Eigenvalues of small dense nonsymmetric matrices.
//!
//! Balancing, Householder reduction to upper Hessenberg form, then the
//! Francis implicit double-shift QR iteration with deflation. Only
//! eigenvalues are produced.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

/// QR sweeps allowed per eigenvalue before giving up.
const MAX_SWEEPS: usize = 60;

pub fn eigenvalues(matrix: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: matrix.ncols(),
        });
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    // row-major scratch copy
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| matrix.row(i).iter().copied().collect()).collect();
    balance(&mut a);
    hessenberg(&mut a);
    hqr(a)
}

/// Eigenvalue moduli, largest first.
pub fn sorted_moduli(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut m: Vec<f64> = eigenvalues(matrix)?.iter().map(|z| z.norm()).collect();
    m.sort_by(|a, b| b.total_cmp(a));
    Ok(m)
}

pub fn spectral_radius(matrix: &DMatrix<f64>) -> Result<f64> {
    Ok(sorted_moduli(matrix)?.first().copied().unwrap_or(0.0))
}

fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let n = a.len();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for x in a[i].iter_mut() {
                    *x *= g;
                }
                for row in a.iter_mut() {
                    row[i] *= f;
                }
            }
        }
    }
}

fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let norm: f64 = (k + 1..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[k + 1][k] >= 0.0 { -norm } else { norm };
        v.iter_mut().for_each(|x| *x = 0.0);
        for i in k + 1..n {
            v[i] = a[i][k];
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A <- (I - 2vv'/v'v) A
        for j in 0..n {
            let dot: f64 = (k + 1..n).map(|i| v[i] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k + 1..n {
                a[i][j] -= f * v[i];
            }
        }
        // A <- A (I - 2vv'/v'v)
        for row in a.iter_mut() {
            let dot: f64 = (k + 1..n).map(|j| row[j] * v[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in k + 1..n {
                row[j] -= f * v[j];
            }
        }
        for i in k + 2..n {
            a[i][k] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroyed).
fn hqr(mut a: Vec<Vec<f64>>) -> Result<Vec<Complex<f64>>> {
    let n = a.len();
    let mut wr = vec![Complex::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(wr);
    }
    let eps = f64::EPSILON;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 0 {
        let mut its = 0;
        let mut l: isize;
        loop {
            l = nn;
            while l > 0 {
                let (lu, lm) = (l as usize, l as usize - 1);
                let mut s = a[lm][lm].abs() + a[lu][lu].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[lu][lm].abs() <= eps * s {
                    a[lu][lm] = 0.0;
                    break;
                }
                l -= 1;
            }
            let nu = nn as usize;
            x = a[nu][nu];
            if l == nn {
                wr[nu] = Complex::new(x + t, 0.0);
                nn -= 1;
            } else {
                y = a[nu - 1][nu - 1];
                w = a[nu][nu - 1] * a[nu - 1][nu];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nu - 1] = Complex::new(x + z, 0.0);
                        wr[nu] = wr[nu - 1];
                        if z != 0.0 {
                            wr[nu] = Complex::new(x - w / z, 0.0);
                        }
                    } else {
                        wr[nu] = Complex::new(x + p, -z);
                        wr[nu - 1] = wr[nu].conj();
                    }
                    nn -= 2;
                } else {
                    if its >= MAX_SWEEPS {
                        return Err(Error::EigenNoConvergence { size: n });
                    }
                    if its > 0 && its % 10 == 0 {
                        // exceptional shift
                        t += x;
                        for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                            row[i] -= x;
                        }
                        let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let lu = l as usize;
                    let mut m = nu - 2;
                    loop {
                        z = a[m][m];
                        let rr = x - z;
                        let ss = y - z;
                        p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - rr - ss;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == lu {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u <= eps * v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m..nu - 1 {
                        a[i + 2][i] = 0.0;
                        if i != m {
                            a[i + 2][i - 1] = 0.0;
                        }
                    }
                    for k in m..nu {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k + 1 != nu {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if lu != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nu {
                                let mut pp = a[k][j] + q * a[k + 1][j];
                                if k + 1 != nu {
                                    pp += r * a[k + 2][j];
                                    a[k + 2][j] -= pp * z;
                                }
                                a[k + 1][j] -= pp * y;
                                a[k][j] -= pp * x;
                            }
                            let mmin = if nu < k + 3 { nu } else { k + 3 };
                            for row in a.iter_mut().take(mmin + 1).skip(lu) {
                                let mut pp = x * row[k] + y * row[k + 1];
                                if k + 1 != nu {
                                    pp += z * row[k + 2];
                                    row[k + 2] -= pp * r;
                                }
                                row[k + 1] -= pp * q;
                                row[k] -= pp;
                            }
                        }
                    }
                }
            }
            if l + 1 >= nn {
                break;
            }
        }
    }
    Ok(wr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use rand::Rng;

    fn sorted_pairs(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn companion_matrix_roots() {
        // (x-1)(x-2)(x-3)(x^2+1) = x^5 - 6x^4 + 12x^3 - 12x^2 + 11x - 6
        let coeffs = [-6.0, 11.0, -12.0, 12.0, -6.0];
        let n = 5;
        let mut c = DMatrix::zeros(n, n);
        for i in 1..n {
            c[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            c[(i, n - 1)] = -coeffs[i];
        }
        let ev = sorted_pairs(eigenvalues(&c).unwrap());
        let expected = [
            Complex::new(0.0, -1.0),
            Complex::new(0.0, 1.0),
            Complex::new(1.0, 0.0),
            Complex::new(2.0, 0.0),
            Complex::new(3.0, 0.0),
        ];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn trivial_shapes() {
        assert!(eigenvalues(&DMatrix::zeros(0, 0)).unwrap().is_empty());
        assert_eq!(eigenvalues(&DMatrix::from_element(1, 1, 2.5)).unwrap()[0].re, 2.5);
        let m = sorted_moduli(&DMatrix::identity(6, 6)).unwrap();
        assert!(m.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(eigenvalues(&DMatrix::zeros(2, 3)).is_err());
        assert!(eigenvalues(&DMatrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn agrees_with_schur_decomposition_on_random_matrices() {
        let mut rng = substream(17, Stream::Data);
        for trial in 0..200 {
            let n = rng.random_range(2..=20);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let ours: Vec<f64> = {
                let mut v: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|z| z.norm()).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            let theirs: Vec<f64> = {
                let mut v: Vec<f64> = m.clone().complex_eigenvalues().iter().map(|z| z.norm()).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() < 1e-8, "trial {trial}: {a} vs {b}");
            }
            let trace: f64 = m.trace();
            let sum: f64 = eigenvalues(&m).unwrap().iter().map(|z| z.re).sum();
            assert!((trace - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn defective_block_triangular() {
        // [[A,0],[I-A,A]] with A = ones/2: spectrum {1,1,0,0}, zero is defective
        let a = DMatrix::from_element(2, 2, 0.5);
        let mut m = DMatrix::zeros(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(&a);
        m.view_mut((2, 2), (2, 2)).copy_from(&a);
        m.view_mut((2, 0), (2, 2)).copy_from(&(DMatrix::identity(2, 2) - &a));
        let mods = sorted_moduli(&m).unwrap();
        assert!((mods[0] - 1.0).abs() < 1e-7 && (mods[1] - 1.0).abs() < 1e-7);
        assert!(mods[2] < 1e-7 && mods[3] < 1e-7);
    }
}
