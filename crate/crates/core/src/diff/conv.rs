//! 2D convolution (cross-correlation form) with input/kernel/bias gradients.
//!
//! Layouts: input [Cin,H,W] (rank-2 accepted as Cin=1), kernel
//! [Cout,Cin,kh,kw], bias [Cout], output [Cout,Ho,Wo]. The inner loops run
//! along contiguous rows so the hot path vectorizes.

use crate::diff::tape::{Tape, Var};
use crate::diff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvDims {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    /// Valid output-column range for a given kernel column.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        let last_ix = self.w as isize - 1 + self.pad as isize - kx as isize;
        if last_ix < 0 {
            return (0, 0);
        }
        let hi = (last_ix as usize / self.stride + 1).min(self.wo);
        (lo, hi.max(lo))
    }

    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        if iy < 0 || iy >= self.h as isize {
            None
        } else {
            Some(iy as usize)
        }
    }
}

fn forward<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, d: ConvDims) -> Vec<T> {
    let mut out = vec![T::zero(); d.co * d.ho * d.wo];
    if let Some(b) = bias {
        for oc in 0..d.co {
            let v = b[oc];
            for o in &mut out[oc * d.ho * d.wo..(oc + 1) * d.ho * d.wo] {
                *o = v;
            }
        }
    }
    for oc in 0..d.co {
        for ic in 0..d.ci {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wgt = k[((oc * d.ci + ic) * d.kh + ky) * d.kw + kx];
                    let (lo, hi) = d.ox_range(kx);
                    let off = kx as isize - d.pad as isize;
                    for oy in 0..d.ho {
                        let Some(iy) = d.in_row(oy, ky) else { continue };
                        let xr = &x[(ic * d.h + iy) * d.w..(ic * d.h + iy + 1) * d.w];
                        let or = &mut out[(oc * d.ho + oy) * d.wo..(oc * d.ho + oy + 1) * d.wo];
                        if d.stride == 1 {
                            let base = lo as isize + off;
                            debug_assert!(base >= 0);
                            let xr = &xr[base as usize..base as usize + (hi - lo)];
                            let or = &mut or[lo..hi];
                            for (o, &xv) in or.iter_mut().zip(xr) {
                                *o = *o + wgt * xv;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = (ox * d.stride) as isize + off;
                                or[ox] = or[ox] + wgt * xr[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn backward_input<T: Scalar>(gout: &[T], k: &[T], d: ConvDims) -> Vec<T> {
    let mut gx = vec![T::zero(); d.ci * d.h * d.w];
    for oc in 0..d.co {
        for ic in 0..d.ci {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wgt = k[((oc * d.ci + ic) * d.kh + ky) * d.kw + kx];
                    let (lo, hi) = d.ox_range(kx);
                    let off = kx as isize - d.pad as isize;
                    for oy in 0..d.ho {
                        let Some(iy) = d.in_row(oy, ky) else { continue };
                        let gxr = &mut gx[(ic * d.h + iy) * d.w..(ic * d.h + iy + 1) * d.w];
                        let gor = &gout[(oc * d.ho + oy) * d.wo..(oc * d.ho + oy + 1) * d.wo];
                        if d.stride == 1 {
                            let base = (lo as isize + off) as usize;
                            let gxr = &mut gxr[base..base + (hi - lo)];
                            let gor = &gor[lo..hi];
                            for (gx, &gv) in gxr.iter_mut().zip(gor) {
                                *gx = *gx + wgt * gv;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = (ox * d.stride) as isize + off;
                                gxr[ix as usize] = gxr[ix as usize] + wgt * gor[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn backward_kernel<T: Scalar>(gout: &[T], x: &[T], d: ConvDims) -> Vec<T> {
    let mut gk = vec![T::zero(); d.co * d.ci * d.kh * d.kw];
    for oc in 0..d.co {
        for ic in 0..d.ci {
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let (lo, hi) = d.ox_range(kx);
                    let off = kx as isize - d.pad as isize;
                    let mut acc = T::zero();
                    for oy in 0..d.ho {
                        let Some(iy) = d.in_row(oy, ky) else { continue };
                        let xr = &x[(ic * d.h + iy) * d.w..(ic * d.h + iy + 1) * d.w];
                        let gor = &gout[(oc * d.ho + oy) * d.wo..(oc * d.ho + oy + 1) * d.wo];
                        if d.stride == 1 {
                            let base = (lo as isize + off) as usize;
                            let xr = &xr[base..base + (hi - lo)];
                            let gor = &gor[lo..hi];
                            for (&xv, &gv) in xr.iter().zip(gor) {
                                acc = acc + xv * gv;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = (ox * d.stride) as isize + off;
                                acc = acc + xr[ix as usize] * gor[ox];
                            }
                        }
                    }
                    gk[((oc * d.ci + ic) * d.kh + ky) * d.kw + kx] = acc;
                }
            }
        }
    }
    gk
}

impl<T: Scalar> Tape<T> {
    /// Convolution with optional per-channel bias. Output is [Cout,Ho,Wo].
    pub fn conv2d(
        &self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (ci, h, w) = self.value(x).dims3()?;
        let kshape = self.shape_of(kernel);
        let [co, kci, kh, kw] = kshape.as_slice() else {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: format!("kernel must be rank 4, got shape {kshape:?}"),
            });
        };
        let (co, kci, kh, kw) = (*co, *kci, *kh, *kw);
        if kci != ci {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: vec![ci, h, w],
                rhs: kshape,
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: "stride must be >= 1".into(),
            });
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: format!(
                    "kernel {kh}x{kw} exceeds padded input {}x{}",
                    h + 2 * pad,
                    w + 2 * pad
                ),
            });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        if ho == 0 || wo == 0 {
            return Err(Error::InvalidArgument {
                op: "conv2d",
                msg: "zero-sized output".into(),
            });
        }
        if let Some(b) = bias {
            if self.shape_of(b) != [co] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![co],
                    rhs: self.shape_of(b),
                });
            }
        }
        let d = ConvDims {
            ci,
            h,
            w,
            co,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let out = {
            let xv = self.value(x);
            let kv = self.value(kernel);
            let bv = bias.map(|b| self.value_clone(b));
            forward(xv.data(), kv.data(), bv.as_ref().map(|t| t.data()), d)
        };
        let out = Tensor::from_vec(&[co, ho, wo], out)?;
        let parents: Vec<Var> = match bias {
            Some(b) => vec![x, kernel, b],
            None => vec![x, kernel],
        };
        Ok(self.push_op(out, &parents, move |tape, g, sink| {
            if sink.wants(x) {
                let kv = tape.value(kernel);
                let gx = backward_input(g.data(), kv.data(), d);
                drop(kv);
                let shape = tape.shape_of(x);
                sink.add(x, Tensor::from_vec(&shape, gx).expect("conv gx shape"));
            }
            if sink.wants(kernel) {
                let xv = tape.value(x);
                let gk = backward_kernel(g.data(), xv.data(), d);
                drop(xv);
                sink.add(
                    kernel,
                    Tensor::from_vec(&[d.co, d.ci, d.kh, d.kw], gk).expect("conv gk shape"),
                );
            }
            if let Some(b) = bias {
                if sink.wants(b) {
                    let mut gb = vec![T::zero(); d.co];
                    for oc in 0..d.co {
                        for v in &g.data()[oc * d.ho * d.wo..(oc + 1) * d.ho * d.wo] {
                            gb[oc] = gb[oc] + *v;
                        }
                    }
                    sink.add(b, Tensor::from_vec(&[d.co], gb).expect("conv gb shape"));
                }
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::diff::{Tape, Tensor};

    #[test]
    fn one_by_one_kernel_scales_input() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[3, 3], (1..=9).map(f64::from).collect()).unwrap());
        let k = tape.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let y = tape.conv2d(x, k, None, 1, 0).unwrap();
        let yv = tape.value_clone(y);
        assert_eq!(yv.shape(), &[1, 3, 3]);
        for i in 0..9 {
            assert_eq!(yv.data()[i], 2.0 * (i + 1) as f64);
        }
    }

    #[test]
    fn strided_ones_kernel_sum_pools() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::filled(&[4, 4], 1.0));
        let k = tape.constant(Tensor::filled(&[1, 1, 2, 2], 1.0));
        let y = tape.conv2d(x, k, None, 2, 0).unwrap();
        let yv = tape.value_clone(y);
        assert_eq!(yv.shape(), &[1, 2, 2]);
        assert!(yv.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn rejects_zero_sized_output() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::filled(&[2, 2], 1.0));
        let k = tape.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        assert!(tape.conv2d(x, k, None, 1, 0).is_err());
    }

    #[test]
    fn padding_keeps_size() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::filled(&[5, 5], 1.0));
        let k = tape.constant(Tensor::filled(&[2, 1, 3, 3], 0.5));
        let y = tape.conv2d(x, k, None, 1, 1).unwrap();
        assert_eq!(tape.shape_of(y), vec![2, 5, 5]);
        // interior cell sees all 9 taps
        let yv = tape.value_clone(y);
        assert!((yv.data()[5 + 5 + 2] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn bias_broadcasts_per_channel() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 2]));
        let k = tape.constant(Tensor::filled(&[2, 1, 1, 1], 1.0));
        let b = tape.constant(Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap());
        let y = tape.conv2d(x, k, Some(b), 1, 0).unwrap();
        let yv = tape.value_clone(y);
        assert_eq!(&yv.data()[0..4], &[0.5; 4]);
        assert_eq!(&yv.data()[4..8], &[-1.0; 4]);
    }
}
