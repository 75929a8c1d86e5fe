//! Scalar activations and their derivatives.
//!
//! The gate activation is `tanh` (zero at zero, unit slope at zero); the layer
//! activation is the smooth Swish `u * sigmoid(u)`, which is zero at zero.

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[inline]
pub fn swish(u: f64) -> f64 {
    u * sigmoid(u)
}

/// `(swish(u), swish'(u), swish''(u))`.
#[inline]
pub fn swish3(u: f64) -> (f64, f64, f64) {
    let s = sigmoid(u);
    let ds = s * (1.0 - s);
    (u * s, s + u * ds, ds * (2.0 + u * (1.0 - 2.0 * s)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_and_layer_activations_vanish_at_zero() {
        assert_eq!(0f64.tanh(), 0.0);
        assert_eq!(swish(0.0), 0.0);
        let h = 1e-6;
        let dtanh = ((h as f64).tanh() - (-h as f64).tanh()) / (2.0 * h);
        assert!((dtanh - 1.0).abs() < 1e-10);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for &u in &[-6.0, -1.3, -0.2, 0.0, 0.4, 2.2, 7.5] {
            let (_, d1, d2) = swish3(u);
            let fd1 = (swish(u + h) - swish(u - h)) / (2.0 * h);
            let fd2 = (swish3(u + h).1 - swish3(u - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-8, "u={u}");
            assert!((d2 - fd2).abs() < 1e-8, "u={u}");
        }
    }
}
