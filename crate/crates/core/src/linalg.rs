//! Truncated SVD by one-sided Jacobi rotations.
//!
//! Matrices reaching this module come from TT-SVD unfoldings of convolution
//! kernels, so they hold at most a few thousand entries. One-sided Jacobi is
//! slow asymptotically but accurate to working precision on such inputs and
//! needs no external LAPACK.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 100;

/// Thin SVD factors `u [m, r]`, `singular_values [r]`, `vt [r, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Tensor,
    pub singular_values: Vec<f64>,
    pub vt: Tensor,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `u · diag(s) · vt`.
    pub fn reconstruct(&self) -> Result<Tensor> {
        self.u.matmul(&self.s_vt()?)
    }

    /// `diag(s) · vt`, the factor TT-SVD carries to its next step.
    pub fn s_vt(&self) -> Result<Tensor> {
        let n = self.vt.shape()[1];
        let mut out = self.vt.clone();
        for (i, &s) in self.singular_values.iter().enumerate() {
            for v in &mut out.data_mut()[i * n..(i + 1) * n] {
                *v *= s;
            }
        }
        Ok(out)
    }
}

/// Rank-`min(r, m, n)` SVD of a 2-way tensor.
///
/// Sign convention: the largest-magnitude entry of every `u` column is made
/// non-negative (first index wins ties) and the matching `vt` row flipped
/// with it, so the output is a deterministic function of the input.
pub fn truncated_svd(a: &Tensor, r: usize) -> Result<SvdResult> {
    let (m, n) = match a.shape() {
        &[m, n] => (m, n),
        s => return shape_err(format!("truncated_svd: expected a matrix, got {s:?}")),
    };
    if r == 0 {
        return Err(Error::InvalidArgument(
            "truncated_svd: rank must be at least 1".into(),
        ));
    }
    if !a.is_finite() {
        return Err(Error::Numeric(
            "truncated_svd: input has non-finite entries".into(),
        ));
    }
    let keep = r.min(m).min(n);

    // Work on the orientation with at least as many rows as columns.
    let (u_cols, sigma, v_cols) = if m >= n {
        jacobi_tall(a.data(), m, n)?
    } else {
        let at = a.transpose()?;
        let (u, s, v) = jacobi_tall(at.data(), n, m)?;
        (v, s, u)
    };

    let mut u = vec![0.0; m * keep];
    let mut vt = vec![0.0; keep * n];
    let mut singular_values = Vec::with_capacity(keep);
    for j in 0..keep {
        let uc = &u_cols[j];
        let vc = &v_cols[j];
        let mut best = 0;
        for i in 1..m {
            if uc[i].abs() > uc[best].abs() {
                best = i;
            }
        }
        let sign = if uc[best] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..m {
            u[i * keep + j] = sign * uc[i];
        }
        for i in 0..n {
            vt[j * n + i] = sign * vc[i];
        }
        singular_values.push(sigma[j]);
    }
    Ok(SvdResult {
        u: Tensor::new(vec![m, keep], u)?,
        singular_values,
        vt: Tensor::new(vec![keep, n], vt)?,
    })
}

type Factors = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

/// Full thin SVD of a row-major `m x n` matrix with `m >= n`, returned as
/// column lists sorted by non-increasing singular value.
fn jacobi_tall(data: &[f64], m: usize, n: usize) -> Result<Factors> {
    debug_assert!(m >= n);
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| data[i * n + j]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = f64::EPSILON * (m as f64);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += a[i] * a[i];
                        beta += b[i] * b[i];
                        gamma += a[i] * b[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let sigma_max = norms[order[0]];
    let negligible = sigma_max * (m.max(n) as f64) * f64::EPSILON * 16.0;
    let mut u_out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s_out = Vec::with_capacity(n);
    let mut v_out = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for &j in &order {
        let s = norms[j];
        if s > negligible && s > 0.0 {
            u_out.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            pending.push(u_out.len());
            u_out.push(Vec::new());
        }
        s_out.push(s);
        v_out.push(v[j].clone());
    }
    complete_orthonormal(&mut u_out, &pending, m);
    Ok((u_out, s_out, v_out))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let a = &mut lo[p];
    let b = &mut hi[0];
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fill the columns listed in `pending` with unit vectors orthogonal to all
/// other columns, drawing candidates from the standard basis in index order.
fn complete_orthonormal(cols: &mut [Vec<f64>], pending: &[usize], m: usize) {
    let mut candidate = 0;
    for &slot in pending {
        loop {
            debug_assert!(candidate < m, "ran out of basis candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt for stability.
            for _ in 0..2 {
                for (k, c) in cols.iter().enumerate() {
                    if k == slot || c.is_empty() {
                        continue;
                    }
                    let d: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= d * ci;
                    }
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent reference singular values from nalgebra.
    fn oracle_singular_values(a: &Tensor) -> Vec<f64> {
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let mat = DMatrix::from_row_slice(m, n, a.data());
        let mut s: Vec<f64> = mat.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    fn gram_deviation(cols_as_rows: &Tensor) -> f64 {
        // max |G - I| for G = X X^T where X holds vectors as rows
        let g = cols_as_rows
            .matmul(&cols_as_rows.transpose().unwrap())
            .unwrap();
        let k = g.shape()[0];
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(&[i, j]) - target).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_matrix() {
        let mut a = Tensor::zeros(&[3, 3]).unwrap();
        a.set(&[0, 0], 3.0);
        a.set(&[1, 1], 2.0);
        a.set(&[2, 2], 1.0);
        let svd = truncated_svd(&a, 2).unwrap();
        assert_eq!(svd.rank(), 2);
        assert!((svd.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((svd.singular_values[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rank_one_matrix() {
        let mut r = rng(11);
        let u = Tensor::randn(&[5, 1], 1.0, &mut r).unwrap();
        let v = Tensor::randn(&[1, 4], 1.0, &mut r).unwrap();
        let a = u.matmul(&v).unwrap();
        let svd = truncated_svd(&a, 3).unwrap();
        assert_eq!(svd.rank(), 3);
        let expected = u.frobenius_norm() * v.frobenius_norm();
        assert!((svd.singular_values[0] - expected).abs() < 1e-12 * expected);
        assert!(svd.singular_values[1..].iter().all(|&s| s <= 1e-10));
        assert!(gram_deviation(&svd.u.transpose().unwrap()) < 1e-10);
        assert!(gram_deviation(&svd.vt) < 1e-10);
    }

    #[test]
    fn full_rank_round_trip() {
        let a = Tensor::randn(&[6, 4], 1.0, &mut rng(12)).unwrap();
        let svd = truncated_svd(&a, 4).unwrap();
        let rel = svd.reconstruct().unwrap().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(rel <= 1e-10, "relative error {rel}");
        let wide = a.transpose().unwrap();
        let svd = truncated_svd(&wide, 10).unwrap();
        assert_eq!(svd.rank(), 4);
        let rel = svd
            .reconstruct()
            .unwrap()
            .sub(&wide)
            .unwrap()
            .frobenius_norm()
            / wide.frobenius_norm();
        assert!(rel <= 1e-10);
    }

    #[test]
    fn errors() {
        let a = Tensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(
            truncated_svd(&a, 0),
            Err(Error::InvalidArgument(_))
        ));
        let nan = Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(truncated_svd(&nan, 1), Err(Error::Numeric(_))));
        let v = Tensor::zeros(&[4]).unwrap();
        assert!(matches!(truncated_svd(&v, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_matrix_still_orthonormal() {
        let a = Tensor::zeros(&[4, 3]).unwrap();
        let svd = truncated_svd(&a, 3).unwrap();
        assert!(svd.singular_values.iter().all(|&s| s == 0.0));
        assert!(gram_deviation(&svd.u.transpose().unwrap()) < 1e-12);
        assert!(gram_deviation(&svd.vt) < 1e-12);
    }

    #[test]
    fn sign_convention_is_applied() {
        let a = Tensor::randn(&[7, 5], 1.0, &mut rng(13)).unwrap();
        let svd = truncated_svd(&a, 5).unwrap();
        for j in 0..svd.rank() {
            let col: Vec<f64> = (0..7).map(|i| svd.u.get(&[i, j])).collect();
            let mut best = 0;
            for i in 1..7 {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            assert!(col[best] >= 0.0);
        }
        assert_eq!(truncated_svd(&a, 5).unwrap(), svd);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn eckart_young(m in 1usize..33, n in 1usize..33, r in 1usize..10, seed in 0u64..10_000) {
            let a = Tensor::randn(&[m, n], 1.0, &mut rng(seed)).unwrap();
            let svd = truncated_svd(&a, r).unwrap();
            let keep = r.min(m).min(n);
            prop_assert_eq!(svd.rank(), keep);
            prop_assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(svd.singular_values.iter().all(|&s| s >= 0.0));
            prop_assert!(gram_deviation(&svd.u.transpose().unwrap()) < 1e-10);
            prop_assert!(gram_deviation(&svd.vt) < 1e-10);

            let full = oracle_singular_values(&a);
            for (s, o) in svd.singular_values.iter().zip(&full) {
                prop_assert!((s - o).abs() <= 1e-10 * full[0].max(1.0));
            }
            let tail: f64 = full[keep..].iter().map(|s| s * s).sum();
            let err = svd.reconstruct().unwrap().sub(&a).unwrap().frobenius_norm().powi(2);
            let scale = a.frobenius_norm().powi(2);
            prop_assert!((err - tail).abs() <= 1e-8 * tail.max(1e-12 * scale) + 1e-20,
                "err {} tail {}", err, tail);
        }
    }
}
