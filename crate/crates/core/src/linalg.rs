//! Dense symmetric positive-definite solves for the ridge normal equations.
//! Systems here are tiny (one column per stratum at most), so a plain
//! row-major Cholesky is all that is needed.

/// Solves `a x = b` for symmetric positive-definite `a` (row-major, `d x d`).
/// Returns `None` if `a` is not numerically positive definite.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let d = b.len();
    debug_assert_eq!(a.len(), d * d);
    let scale = (0..d)
        .map(|i| a[i * d + i].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 1e-12 * scale {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * z[k];
        }
        z[i] = sum / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = z[i];
        for k in i + 1..d {
            sum -= l[k * d + i] * x[k];
        }
        x[i] = sum / l[i * d + i];
    }
    Some(x)
}
