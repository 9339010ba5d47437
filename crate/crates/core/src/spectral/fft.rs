//! Radix-2 iterative FFT, 1D and 2D, over split real/imaginary buffers.
//! Power-of-two lengths only; twiddle angles are evaluated in f64 before
//! narrowing to the working scalar type.

use crate::diff::Scalar;

pub fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place 1D transform. `inverse` applies the conjugate transform and
/// the 1/N normalization.
pub fn fft1d<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    let n = re.len();
    debug_assert_eq!(n, im.len());
    debug_assert!(is_power_of_two(n));
    if n <= 1 {
        return;
    }
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 0..n - 1 {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut mask = n >> 1;
        while j & mask != 0 {
            j &= !mask;
            mask >>= 1;
        }
        j |= mask;
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let ang_step = sign * std::f64::consts::TAU / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let ang = ang_step * k as f64;
                let (wr, wi) = (T::from_f64(ang.cos()), T::from_f64(ang.sin()));
                let (i0, i1) = (start + k, start + k + half);
                let tr = re[i1] * wr - im[i1] * wi;
                let ti = re[i1] * wi + im[i1] * wr;
                re[i1] = re[i0] - tr;
                im[i1] = im[i0] - ti;
                re[i0] = re[i0] + tr;
                im[i0] = im[i0] + ti;
            }
        }
        len <<= 1;
    }
    if inverse {
        let inv = T::from_f64(1.0 / n as f64);
        for v in re.iter_mut() {
            *v = *v * inv;
        }
        for v in im.iter_mut() {
            *v = *v * inv;
        }
    }
}

/// In-place 2D transform on row-major [h, w] buffers.
pub fn fft2d<T: Scalar>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(re.len(), h * w);
    for r in 0..h {
        fft1d(&mut re[r * w..(r + 1) * w], &mut im[r * w..(r + 1) * w], inverse);
    }
    let mut col_re = vec![T::zero(); h];
    let mut col_im = vec![T::zero(); h];
    for c in 0..w {
        for r in 0..h {
            col_re[r] = re[r * w + c];
            col_im[r] = im[r * w + c];
        }
        fft1d(&mut col_re, &mut col_im, inverse);
        for r in 0..h {
            re[r * w + c] = col_re[r];
            im[r * w + c] = col_im[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_concentrates_in_dc() {
        let c = 0.37;
        let mut re = vec![c; 64];
        let mut im = vec![0.0f64; 64];
        fft2d(&mut re, &mut im, 8, 8, false);
        assert!((re[0] - 64.0 * c).abs() < 1e-12);
        for i in 1..64 {
            assert!(re[i].abs() < 1e-12 && im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn delta_at_origin_is_flat() {
        let mut re = vec![0.0f64; 64];
        let mut im = vec![0.0f64; 64];
        re[0] = 1.0;
        fft2d(&mut re, &mut im, 8, 8, false);
        for i in 0..64 {
            assert!((re[i] - 1.0).abs() < 1e-12 && im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_reproduces_input() {
        let x: Vec<f64> = (0..256).map(|i| ((i * 2654435761_usize) % 1000) as f64 / 1000.0).collect();
        let mut re = x.clone();
        let mut im = vec![0.0f64; 256];
        fft2d(&mut re, &mut im, 16, 16, false);
        fft2d(&mut re, &mut im, 16, 16, true);
        for i in 0..256 {
            assert!((re[i] - x[i]).abs() < 1e-9);
            assert!(im[i].abs() < 1e-9);
        }
    }
}
