//! Brute-force reference implementations used to verify the fast paths.
//! These are deliberately naive (direct sums, exhaustive shifts) and share
//! no code with the FFT-based implementations they check. Used by tests
//! and the `selftest` command only.

use crate::diff::{ComplexTensor, Tensor};

/// Direct O(N^2) evaluation of the 2D DFT sum per output bin.
pub fn dft2_direct(x: &Tensor<f64>) -> ComplexTensor<f64> {
    let (h, w) = x.dims2().expect("dft2_direct wants a 2D tensor");
    let mut re = Tensor::zeros(&[h, w]);
    let mut im = Tensor::zeros(&[h, w]);
    for ku in 0..h {
        for kv in 0..w {
            let mut sr = 0.0;
            let mut si = 0.0;
            for r in 0..h {
                for c in 0..w {
                    let ang = -std::f64::consts::TAU
                        * (ku as f64 * r as f64 / h as f64 + kv as f64 * c as f64 / w as f64);
                    let v = x.at2(r, c);
                    sr += v * ang.cos();
                    si += v * ang.sin();
                }
            }
            re.set2(ku, kv, sr);
            im.set2(ku, kv, si);
        }
    }
    ComplexTensor { re, im }
}

/// Exhaustive circular cross-correlation: c(t) = sum_x a(x) b(x+t),
/// evaluated by the literal double sum for every shift t.
pub fn circular_correlation_direct(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = a.dims2().expect("oracle wants 2D tensors");
    assert_eq!(a.shape(), b.shape());
    let mut out = Tensor::zeros(&[h, w]);
    for ty in 0..h {
        for tx in 0..w {
            let mut acc = 0.0;
            for y in 0..h {
                for x in 0..w {
                    acc += a.at2(y, x) * b.at2((y + ty) % h, (x + tx) % w);
                }
            }
            out.set2(ty, tx, acc);
        }
    }
    out
}

/// Circularly shift content by (dy, dx): out(y+dy, x+dx) = in(y, x).
pub fn circular_shift(x: &Tensor<f64>, dy: i64, dx: i64) -> Tensor<f64> {
    let (h, w) = x.dims2().expect("circular_shift wants a 2D tensor");
    let mut out = Tensor::zeros(&[h, w]);
    for y in 0..h {
        for x_ in 0..w {
            let ny = (y as i64 + dy).rem_euclid(h as i64) as usize;
            let nx = (x_ as i64 + dx).rem_euclid(w as i64) as usize;
            out.set2(ny, nx, x.at2(y, x_));
        }
    }
    out
}
