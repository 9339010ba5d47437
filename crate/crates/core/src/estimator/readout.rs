//! Correlation-map readouts: map normalization, full-map soft-argmax, and
//! the windowed circular expectation used by both estimation stages.

use std::rc::Rc;

use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::Result;

fn argmax_of<T: Scalar>(t: &Tensor<T>) -> usize {
    t.argmax()
}

/// Map a bin index to a signed circular shift in [-n/2, n/2).
pub fn signed_shift(idx: usize, n: usize) -> f64 {
    if idx < n.div_ceil(2) {
        idx as f64
    } else {
        idx as f64 - n as f64
    }
}

/// Zero-mean / unit-max normalization applied before the softmax; the
/// temperature defaults are calibrated against maps in this range.
pub fn normalize_map<T: Scalar>(tape: &Tape<T>, map: Var) -> Result<Var> {
    let m = tape.mean(map);
    let centered = tape.sub_bcast(map, m)?;
    let mx = tape.max(centered);
    tape.div_bcast_floor(centered, mx, T::from_f64(1e-12))
}

/// Expectation of grid coordinates under softmax(beta * map), with explicit
/// center and per-axis scales. Returns ([E_row, E_col], probability grid).
pub fn soft_argmax_2d<T: Scalar>(
    tape: &Tape<T>,
    map: Var,
    beta: f64,
    center: (f64, f64),
    axis_scales: (f64, f64),
) -> Result<(Var, Var)> {
    let (h, w) = tape.value(map).dims2()?;
    let prob = tape.softmax(map, T::from_f64(beta))?;
    let mut row_coords = Tensor::zeros(&[h, w]);
    let mut col_coords = Tensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            row_coords.set2(r, c, T::from_f64((r as f64 - center.0) * axis_scales.0));
            col_coords.set2(r, c, T::from_f64((c as f64 - center.1) * axis_scales.1));
        }
    }
    let er = tape.weighted_sum(prob, &row_coords)?;
    let ec = tape.weighted_sum(prob, &col_coords)?;
    let est = tape.stack_scalars(&[er, ec])?;
    Ok((est, prob))
}

/// Stage readout of a circular correlation surface.
pub struct Readout {
    /// Probability grid over the full normalized map (the KL supervision
    /// target's counterpart).
    pub prob: Var,
    /// [row, col] expectation in signed bin units (windowed, circular).
    pub est_bins: Var,
    /// Argmax in signed bin units.
    pub hard_bins: (f64, f64),
    /// Peak-minus-mean as a share of the map's above-mean mass: ~1 for a
    /// single spike, ~1/k for k rival peaks. Diagnostics only.
    pub sharpness: f64,
    /// The normalized map the probabilities were computed from.
    pub normalized: Var,
}

/// Normalize, softmax the full map, and take a windowed circular
/// expectation around the argmax. The window makes the expectation immune
/// to wrap-around bias on circular axes and doubles as sub-bin
/// interpolation.
pub fn correlation_readout<T: Scalar>(
    tape: &Tape<T>,
    corr: Var,
    beta: f64,
    half_window: usize,
) -> Result<Readout> {
    let (h, w) = tape.value(corr).dims2()?;
    let normalized = normalize_map(tape, corr)?;
    let prob = tape.softmax(normalized, T::from_f64(beta))?;

    let (argmax, sharpness) = {
        let raw = tape.value(corr);
        let mean = raw.mean_value().to_f64();
        let peak = raw.max_value().to_f64();
        // peak's share of the total above-mean mass: ~1 for a single spike,
        // ~1/k for k rival peaks, ~0 for a flat map
        let positive_mass: f64 = raw
            .data()
            .iter()
            .map(|&v| (v.to_f64() - mean).max(0.0))
            .sum();
        (argmax_of(&raw), (peak - mean) / (positive_mass + 1e-12))
    };
    let (r0, c0) = (argmax / w, argmax % w);

    let est_bins = windowed_expectation(tape, normalized, (r0, c0), beta, half_window)?;
    let hard = (signed_shift(r0, h), signed_shift(c0, w));

    Ok(Readout {
        prob,
        est_bins,
        hard_bins: hard,
        sharpness,
        normalized,
    })
}

/// Circular windowed soft-argmax around an explicit center bin. Returns a
/// [row, col] node in signed bin units (center + expected offset).
pub fn windowed_expectation<T: Scalar>(
    tape: &Tape<T>,
    normalized: Var,
    center: (usize, usize),
    beta: f64,
    half_window: usize,
) -> Result<Var> {
    let (h, w) = tape.value(normalized).dims2()?;
    let (r0, c0) = center;
    let hw = half_window.min((h - 1) / 2).min((w - 1) / 2);
    let side = 2 * hw + 1;
    let mut idx = Vec::with_capacity(side * side);
    for dr in -(hw as i64)..=(hw as i64) {
        let rr = (r0 as i64 + dr).rem_euclid(h as i64) as usize;
        for dc in -(hw as i64)..=(hw as i64) {
            let cc = (c0 as i64 + dc).rem_euclid(w as i64) as usize;
            idx.push(rr * w + cc);
        }
    }
    let window = tape.gather(normalized, Rc::new(idx), &[side, side])?;
    let wprob = tape.softmax(window, T::from_f64(beta))?;
    let mut roff = Tensor::zeros(&[side, side]);
    let mut coff = Tensor::zeros(&[side, side]);
    for (i, dr) in (-(hw as i64)..=(hw as i64)).enumerate() {
        for (j, dc) in (-(hw as i64)..=(hw as i64)).enumerate() {
            roff.data_mut()[i * side + j] = T::from_f64(dr as f64);
            coff.data_mut()[i * side + j] = T::from_f64(dc as f64);
        }
    }
    let dr = tape.weighted_sum(wprob, &roff)?;
    let dc = tape.weighted_sum(wprob, &coff)?;
    let er = tape.add_scalar_const(dr, T::from_f64(signed_shift(r0, h)));
    let ec = tape.add_scalar_const(dc, T::from_f64(signed_shift(c0, w)));
    tape.stack_scalars(&[er, ec])
}

/// Local maxima of a map outside exclusion zones around already-claimed
/// centers; rivals returned strongest-first with their values.
pub fn rival_peaks<T: Scalar>(
    map: &Tensor<T>,
    claimed: &[(usize, usize)],
    exclusion: usize,
    max_rivals: usize,
) -> Vec<((usize, usize), f64)> {
    let (h, w) = map.dims2().expect("2D map");
    let mut masked: Vec<(f64, usize)> = map
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v.to_f64(), i))
        .collect();
    let circ_near = |a: usize, b: usize, n: usize| -> bool {
        let d = a.abs_diff(b);
        d.min(n - d) <= exclusion
    };
    let mut claimed: Vec<(usize, usize)> = claimed.to_vec();
    let mut out = Vec::new();
    masked.sort_by(|a, b| b.0.total_cmp(&a.0));
    for &(v, i) in &masked {
        if out.len() >= max_rivals {
            break;
        }
        let (r, c) = (i / w, i % w);
        if claimed
            .iter()
            .any(|&(cr, cc)| circ_near(r, cr, h) && circ_near(c, cc, w))
        {
            continue;
        }
        claimed.push((r, c));
        out.push(((r, c), v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Tape, Tensor};

    #[test]
    fn signed_shift_wraps() {
        assert_eq!(signed_shift(0, 8), 0.0);
        assert_eq!(signed_shift(3, 8), 3.0);
        assert_eq!(signed_shift(4, 8), -4.0);
        assert_eq!(signed_shift(7, 8), -1.0);
    }

    #[test]
    fn soft_argmax_spike_is_exact() {
        let tape = Tape::<f64>::new();
        let mut m = Tensor::zeros(&[21, 21]);
        m.set2(10 + 7, 10 - 5, 50.0);
        let v = tape.constant(m);
        let (est, _) = soft_argmax_2d(&tape, v, 10.0, (10.0, 10.0), (1.0, 1.0)).unwrap();
        let e = tape.value_clone(est);
        assert!((e.data()[0] - 7.0).abs() < 1e-9);
        assert!((e.data()[1] + 5.0).abs() < 1e-9);
    }

    #[test]
    fn soft_argmax_uniform_is_centroid() {
        let tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::filled(&[9, 9], 1.0));
        let (est, _) = soft_argmax_2d(&tape, v, 5.0, (4.0, 4.0), (1.0, 1.0)).unwrap();
        let e = tape.value_clone(est);
        assert!(e.data()[0].abs() < 1e-12 && e.data()[1].abs() < 1e-12);
    }

    #[test]
    fn soft_argmax_two_spikes_cancel_and_flag() {
        let tape = Tape::<f64>::new();
        let mut m = Tensor::zeros(&[9, 9]);
        m.set2(4, 4 + 4, 10.0);
        m.set2(4, 4 - 4, 10.0);
        let v = tape.constant(m);
        let (est, _) = soft_argmax_2d(&tape, v, 3.0, (4.0, 4.0), (1.0, 1.0)).unwrap();
        let e = tape.value_clone(est);
        assert!(e.data()[0].abs() < 1e-9 && e.data()[1].abs() < 1e-9);
        // bimodal map scores low sharpness through the stage readout
        let r = correlation_readout(&tape, v, 3.0, 2).unwrap();
        assert!(r.sharpness < 0.6);
    }

    #[test]
    fn windowed_readout_recovers_wrapped_peak() {
        let tape = Tape::<f64>::new();
        let mut m = Tensor::zeros(&[16, 16]);
        m.set2(15, 1, 5.0); // signed (-1, +1)
        let v = tape.constant(m);
        let r = correlation_readout(&tape, v, 60.0, 3).unwrap();
        assert_eq!(r.hard_bins, (-1.0, 1.0));
        let e = tape.value_clone(r.est_bins);
        assert!((e.data()[0] + 1.0).abs() < 0.05, "{:?}", e.data());
        assert!((e.data()[1] - 1.0).abs() < 0.05);
    }
}
