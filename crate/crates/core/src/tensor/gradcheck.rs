//! Central finite differences for checking analytic gradients.
//!
//! Independent of the tape: only evaluates the scalar function.

use super::Matrix;

/// `∂f/∂x` estimated entrywise as `(f(x + h·e) − f(x − h·e)) / 2h`.
pub fn central_difference(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.dim());
    for (idx, &orig) in x.indexed_iter() {
        probe[idx] = orig + h;
        let plus = f(&probe);
        probe[idx] = orig - h;
        let minus = f(&probe);
        probe[idx] = orig;
        out[idx] = (plus - minus) / (2.0 * h);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` in the Frobenius norm; 0 when both are zero.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
