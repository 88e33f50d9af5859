//! Minimal dense helpers for the small symmetric matrices used here.

/// Lower Cholesky factor of a row-major `n x n` symmetric matrix.
///
/// A pivot down to `-tol` is accepted as zero, so positive semidefinite
/// matrices (rank deficient within `tol`) factor without error. Returns
/// `None` when a pivot falls below `-tol`.
pub fn cholesky_psd(n: usize, a: &[f64], tol: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s < -tol {
                    return None;
                }
                l[i * n + i] = s.max(0.0).sqrt();
            } else {
                let d = l[j * n + j];
                l[i * n + j] = if d > 0.0 { s / d } else { 0.0 };
            }
        }
    }
    Some(l)
}

pub fn is_symmetric(n: usize, a: &[f64], tol: f64) -> bool {
    (0..n).all(|i| (0..i).all(|j| (a[i * n + j] - a[j * n + i]).abs() <= tol))
}

/// `y = L x` for a lower-triangular row-major `L`.
pub fn lower_mul(n: usize, l: &[f64], x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| (0..=i).map(|k| l[i * n + k] * x[k]).sum())
        .collect()
}

pub fn mat_vec(n: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
