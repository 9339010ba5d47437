//! Central finite-difference utilities. Reference implementation for
//! verifying backward rules; used by the test suite and the `selftest`
//! command, never by any forward/backward path itself.

/// Central finite-difference gradient of a scalar function at `x`.
pub fn finite_diff_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let fp = f(&probe);
        probe[i] = x[i] - step;
        let fm = f(&probe);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// max_i |got_i - want_i| / max(1, max_i |want_i|).
pub fn max_rel_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want
        .iter()
        .fold(1.0_f64, |m, &v| m.max(v.abs()));
    got.iter()
        .zip(want)
        .fold(0.0_f64, |m, (&a, &b)| m.max((a - b).abs()))
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum();
        let g = finite_diff_gradient(&mut f, &[1.0, -2.0], 1e-5);
        assert!(max_rel_error(&g, &[2.0, -4.0]) < 1e-8);
    }
}
