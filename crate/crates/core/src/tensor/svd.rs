//! Truncated SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working matrix are rotated pairwise until mutually
//! orthogonal; the accumulated rotations are the right singular vectors and
//! the final column norms are the singular values.

use super::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Svd {
    /// `n × k`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub s: Vec<f64>,
    /// `d × k`, orthonormal columns. In each column the entry of largest
    /// magnitude (lowest index on ties) is non-negative.
    pub v: Matrix,
}

pub fn truncated_svd(x: &Matrix, k: usize) -> Result<Svd> {
    let (n, d) = x.dim();
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "svd rank {k} outside 1..={} for a {n}x{d} matrix",
            n.min(d)
        )));
    }
    super::ensure_finite(x, "svd input")?;

    let (mut u, s, mut v) = if n >= d {
        jacobi_tall(x.clone())
    } else {
        let (vt, s, ut) = jacobi_tall(x.t().to_owned());
        (ut, s, vt)
    };

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let order = &order[..k];

    let u_k = u.select(ndarray::Axis(1), order);
    let v_k = v.select(ndarray::Axis(1), order);
    let s_k: Vec<f64> = order.iter().map(|&j| s[j]).collect();
    u = u_k;
    v = v_k;

    for j in 0..k {
        let col = v.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            v.column_mut(j).mapv_inplace(|e| -e);
            u.column_mut(j).mapv_inplace(|e| -e);
        }
    }
    Ok(Svd { u, s: s_k, v })
}

/// Full thin SVD of a matrix with `rows ≥ cols`: returns `(U, σ, V)` with
/// `U: rows × cols`, `V: cols × cols`, unsorted.
fn jacobi_tall(mut a: Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let d = a.ncols();
    let mut v = Matrix::eye(d);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (a.column(p), a.column(q));
                    (cp.dot(&cp), cq.dot(&cq), cp.dot(&cq))
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma = Vec::with_capacity(d);
    let mut degenerate = Vec::new();
    for j in 0..d {
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        sigma.push(norm);
        if norm > 0.0 {
            a.column_mut(j).mapv_inplace(|e| e / norm);
        } else {
            degenerate.push(j);
        }
    }
    complete_orthonormal(&mut a, &degenerate);
    (a, sigma, v)
}

fn rotate(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (mp, mq) = (m[[i, p]], m[[i, q]]);
        m[[i, p]] = c * mp - s * mq;
        m[[i, q]] = s * mp + c * mq;
    }
}

/// Replaces the listed (zero) columns with unit vectors orthogonal to every
/// other column, drawn from the standard basis by Gram-Schmidt.
fn complete_orthonormal(m: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = m.nrows();
    let mut filled: Vec<usize> = (0..m.ncols()).filter(|j| !missing.contains(j)).collect();
    let mut basis = 0;
    for &j in missing {
        while basis < rows {
            let mut cand = ndarray::Array1::<f64>::zeros(rows);
            cand[basis] = 1.0;
            basis += 1;
            // two passes of Gram-Schmidt for stability
            for _ in 0..2 {
                for &f in &filled {
                    let proj = m.column(f).dot(&cand);
                    cand.scaled_add(-proj, &m.column(f));
                }
            }
            let norm = cand.dot(&cand).sqrt();
            if norm > 1e-6 {
                m.column_mut(j).assign(&(cand / norm));
                filled.push(j);
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frob2(m: &Matrix) -> f64 {
        m.iter().map(|v| v * v).sum()
    }

    fn reconstruct(svd: &Svd) -> Matrix {
        let mut us = svd.u.clone();
        for (j, &s) in svd.s.iter().enumerate() {
            us.column_mut(j).mapv_inplace(|e| e * s);
        }
        us.dot(&svd.v.t())
    }

    #[test]
    fn rank_one_axis_aligned() {
        let x = array![[3.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let svd = truncated_svd(&x, 1).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-15);
        assert_eq!(svd.v, array![[1.0], [0.0]]);
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let svd = truncated_svd(&Matrix::eye(4), 4).unwrap();
        assert_eq!(svd.s, vec![1.0; 4]);
    }

    #[test]
    fn rejects_bad_rank_and_non_finite() {
        let x = Matrix::ones((3, 2));
        assert!(truncated_svd(&x, 0).is_err());
        assert!(truncated_svd(&x, 3).is_err());
        let mut y = x.clone();
        y[[1, 1]] = f64::NAN;
        assert!(matches!(truncated_svd(&y, 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn wide_and_rank_deficient_inputs_stay_orthonormal() {
        // rank 1, wide
        let x = array![[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]];
        let svd = truncated_svd(&x, 2).unwrap();
        assert!(svd.s[1].abs() < 1e-12);
        let vtv = svd.v.t().dot(&svd.v);
        let utu = svd.u.t().dot(&svd.u);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[[i, j]] - e).abs() < 1e-12);
                assert!((utu[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_identity_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.random_range(1..=12);
            let d = rng.random_range(1..=12);
            let x = Matrix::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
            let full = truncated_svd(&x, n.min(d)).unwrap();
            for k in 1..=n.min(d) {
                let svd = truncated_svd(&x, k).unwrap();
                let approx = reconstruct(&svd);
                let resid = frob2(&(&x - &approx));
                let tail: f64 = full.s[k..].iter().map(|s| s * s).sum();
                assert!((resid - tail).abs() < 1e-9);
                assert!((frob2(&approx) + tail - frob2(&x)).abs() < 1e-9);
                assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix::from_shape_fn((10, 6), |_| rng.random_range(-1.0..1.0));
        let a = truncated_svd(&x, 4).unwrap();
        let b = truncated_svd(&x, 4).unwrap();
        assert_eq!(a.v, b.v);
        for col in a.v.columns() {
            let best = col
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if v.abs() > col[b].abs() { i } else { b });
            assert!(col[best] >= 0.0);
        }
    }
}
