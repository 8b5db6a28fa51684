//! Finite-difference gradient verification.
//!
//! Independent of the tape's backward rules on purpose: it only needs a
//! closure that maps parameter values to a loss, so it can cross-examine
//! any analytic gradient the tape produces.

use crate::num::DenseMat;

/// Central finite differences of `loss` with respect to every entry of
/// every matrix in `params`.
///
/// Each entry is perturbed by `+h` and `-h` in turn and the symmetric
/// quotient `(loss(p+h) - loss(p-h)) / (2h)` recorded. The parameter values
/// are restored before returning.
pub fn finite_diff<F>(params: &mut [DenseMat], mut loss: F, h: f64) -> Vec<DenseMat>
where
    F: FnMut(&[DenseMat]) -> f64,
{
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let (rows, cols) = params[pi].shape();
        let mut grad = DenseMat::zeros(rows, cols);
        for idx in 0..rows * cols {
            let orig = params[pi].data()[idx];
            params[pi].data_mut()[idx] = orig + h;
            let plus = loss(params);
            params[pi].data_mut()[idx] = orig - h;
            let minus = loss(params);
            params[pi].data_mut()[idx] = orig;
            grad.data_mut()[idx] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// Largest elementwise relative error between an analytic and a numeric
/// gradient, with the denominator floored at 1e-4 so near-zero entries are
/// compared on an absolute scale. Returns infinity on shape mismatch.
pub fn max_rel_err(analytic: &DenseMat, numeric: &DenseMat) -> f64 {
    worst_entry(analytic, numeric).3
}

/// Location and magnitudes of the worst-matching entry:
/// `(flat index, analytic, numeric, relative error)`.
pub fn worst_entry(analytic: &DenseMat, numeric: &DenseMat) -> (usize, f64, f64, f64) {
    if analytic.shape() != numeric.shape() {
        return (0, f64::NAN, f64::NAN, f64::INFINITY);
    }
    let mut worst = (0, 0.0, 0.0, 0.0_f64);
    for (idx, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let denom = a.abs().max(n.abs()).max(1e-4);
        let err = (a - n).abs() / denom;
        if err > worst.3 {
            worst = (idx, a, n, err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_derivative_is_recovered() {
        // loss = sum(p^2) has gradient 2p.
        let mut params = vec![DenseMat::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap()];
        let grads = finite_diff(
            &mut params,
            |ps| ps[0].data().iter().map(|v| v * v).sum(),
            1e-6,
        );
        let want = params[0].map(|v| 2.0 * v);
        assert!(max_rel_err(&want, &grads[0]) < 1e-7);
        // Parameters were restored.
        assert_eq!(params[0].get(0, 1), -2.0);
    }

    #[test]
    fn rel_err_floors_tiny_denominators() {
        let a = DenseMat::from_rows(&[vec![0.0]]).unwrap();
        let b = DenseMat::from_rows(&[vec![1e-9]]).unwrap();
        assert!(max_rel_err(&a, &b) < 1e-4);
    }
}
