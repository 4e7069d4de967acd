//! Small dense symmetric linear algebra: Cholesky factorization and Jacobi
//! eigenvalues. The matrices in this crate are Gram matrices of embedding
//! dimension (tens of rows), so simple O(n^3) routines are sufficient and
//! keep the build free of external BLAS/LAPACK backends.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
///
/// Returns a numerical error if the matrix is not positive definite (a
/// non-positive pivot is encountered).
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = square_dim(a)?;
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::numerical(format!(
                        "matrix not positive definite (pivot {s:e} at index {i})"
                    )));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `A x = b` given the lower Cholesky factor `l` of `A`.
pub fn cholesky_solve(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    debug_assert_eq!(b.len(), n);
    // forward: L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    // backward: L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves a symmetric positive definite system `A x = b`.
pub fn solve_spd(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = square_dim(a)?;
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        e[j] = 0.0;
        for i in 0..n {
            inv[[i, j]] = col[i];
        }
    }
    // symmetrize to wash out round-off between columns
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    Ok(inv)
}

/// log(det A) for symmetric positive definite `A`, via Cholesky.
pub fn spd_log_det(a: &Array2<f64>) -> Result<f64> {
    let l = cholesky(a)?;
    let mut s = 0.0;
    for i in 0..l.nrows() {
        s += l[[i, i]].ln();
    }
    Ok(2.0 * s)
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
///
/// Convergence is declared when the off-diagonal Frobenius norm falls below
/// `1e-14` times the matrix scale; symmetric matrices of the sizes used here
/// converge in a handful of sweeps.
pub fn sym_eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    let n = square_dim(a)?;
    let mut m = a.clone();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            let mut ev: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
            ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
            return Ok(ev);
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::EPSILON * scale {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // stable rotation: t = sign(theta) / (|theta| + sqrt(theta^2 + 1))
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    Err(Error::numerical(
        "Jacobi eigenvalue iteration failed to converge".to_string(),
    ))
}

fn square_dim(a: &Array2<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::numerical(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn cholesky_roundtrip_identity() {
        let a = Array2::<f64>::eye(4);
        let l = cholesky(&a).unwrap();
        assert_eq!(l, Array2::<f64>::eye(4));
        let x = cholesky_solve(&l, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn known_2x2_eigenvalues() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let ev = sym_eigenvalues(&a).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_eigenvalues_sorted() {
        let a = array![[3.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 2.0]];
        let ev = sym_eigenvalues(&a).unwrap();
        assert_eq!(ev, vec![-1.0, 2.0, 3.0]);
    }

    fn random_spd(seed: u64, n: usize) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        let mut a = b.t().dot(&b);
        for i in 0..n {
            a[[i, i]] += 0.5;
        }
        a
    }

    proptest! {
        #[test]
        fn solve_spd_satisfies_system(seed in 0u64..500, n in 1usize..8) {
            let a = random_spd(seed, n);
            let b: Vec<f64> = (0..n).map(|i| (i as f64) - 1.5).collect();
            let x = solve_spd(&a, &b).unwrap();
            for i in 0..n {
                let mut r = -b[i];
                for j in 0..n {
                    r += a[[i, j]] * x[j];
                }
                prop_assert!(r.abs() < 1e-8, "residual {} at row {}", r, i);
            }
        }

        #[test]
        fn eigenvalues_match_trace_and_logdet(seed in 0u64..500, n in 1usize..8) {
            let a = random_spd(seed, n);
            let ev = sym_eigenvalues(&a).unwrap();
            let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
            let ev_sum: f64 = ev.iter().sum();
            prop_assert!((trace - ev_sum).abs() < 1e-9 * trace.abs().max(1.0));
            let ld = spd_log_det(&a).unwrap();
            let ev_ld: f64 = ev.iter().map(|v| v.ln()).sum();
            prop_assert!((ld - ev_ld).abs() < 1e-8 * ld.abs().max(1.0));
        }

        #[test]
        fn inverse_times_matrix_is_identity(seed in 0u64..200, n in 1usize..7) {
            let a = random_spd(seed, n);
            let inv = spd_inverse(&a).unwrap();
            let prod = a.dot(&inv);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((prod[[i, j]] - want).abs() < 1e-8);
                }
            }
        }
    }
}
