//! Differentiable bilinear sampling: fixed-grid resampling (log-polar) and
//! the similarity warp with gradients w.r.t. both image and pose.

use std::rc::Rc;

use crate::diff::tape::{Tape, Var};
use crate::diff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Bilinear read of `x` (H rows, W cols) at continuous (u=col, v=row);
/// positions outside the grid contribute zero.
#[inline]
pub fn bilinear_at<T: Scalar>(x: &[T], h: usize, w: usize, u: f64, v: f64) -> T {
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = T::from_f64(u - u0);
    let fv = T::from_f64(v - v0);
    let (iu, iv) = (u0 as isize, v0 as isize);
    let read = |r: isize, c: isize| -> T {
        if r < 0 || r >= h as isize || c < 0 || c >= w as isize {
            T::zero()
        } else {
            x[r as usize * w + c as usize]
        }
    };
    let one = T::one();
    read(iv, iu) * (one - fv) * (one - fu)
        + read(iv, iu + 1) * (one - fv) * fu
        + read(iv + 1, iu) * fv * (one - fu)
        + read(iv + 1, iu + 1) * fv * fu
}

#[inline]
fn scatter_bilinear<T: Scalar>(gx: &mut [T], h: usize, w: usize, u: f64, v: f64, g: T) {
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = T::from_f64(u - u0);
    let fv = T::from_f64(v - v0);
    let (iu, iv) = (u0 as isize, v0 as isize);
    let one = T::one();
    let mut put = |r: isize, c: isize, wgt: T| {
        if r >= 0 && r < h as isize && c >= 0 && c < w as isize {
            let i = r as usize * w + c as usize;
            gx[i] = gx[i] + g * wgt;
        }
    };
    put(iv, iu, (one - fv) * (one - fu));
    put(iv, iu + 1, (one - fv) * fu);
    put(iv + 1, iu, fv * (one - fu));
    put(iv + 1, iu + 1, fv * fu);
}

/// d(sample)/du and d(sample)/dv at (u, v).
#[inline]
fn bilinear_pos_grad<T: Scalar>(x: &[T], h: usize, w: usize, u: f64, v: f64) -> (T, T) {
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = T::from_f64(u - u0);
    let fv = T::from_f64(v - v0);
    let (iu, iv) = (u0 as isize, v0 as isize);
    let read = |r: isize, c: isize| -> T {
        if r < 0 || r >= h as isize || c < 0 || c >= w as isize {
            T::zero()
        } else {
            x[r as usize * w + c as usize]
        }
    };
    let one = T::one();
    let (i00, i01, i10, i11) = (
        read(iv, iu),
        read(iv, iu + 1),
        read(iv + 1, iu),
        read(iv + 1, iu + 1),
    );
    let du = (i01 - i00) * (one - fv) + (i11 - i10) * fv;
    let dv = (i10 - i00) * (one - fu) + (i11 - i01) * fu;
    (du, dv)
}

impl<T: Scalar> Tape<T> {
    /// Resample a 2D map at a fixed grid of (u=col, v=row) positions.
    /// Differentiable in the map values only; the grid is constant.
    pub fn sample_bilinear(
        &self,
        x: Var,
        grid: Rc<Vec<[f64; 2]>>,
        out_shape: &[usize],
    ) -> Result<Var> {
        let (h, w) = self.value(x).dims2()?;
        let want: usize = out_shape.iter().product();
        if want != grid.len() {
            return Err(Error::InvalidArgument {
                op: "sample_bilinear",
                msg: format!("{} grid points for output of {want}", grid.len()),
            });
        }
        let out = {
            let xv = self.value(x);
            grid.iter()
                .map(|&[u, v]| bilinear_at(xv.data(), h, w, u, v))
                .collect::<Vec<_>>()
        };
        let out = Tensor::from_vec(out_shape, out)?;
        let grid_b = Rc::clone(&grid);
        Ok(self.push_op(out, &[x], move |_, g, sink| {
            let mut gx = Tensor::zeros(&[h, w]);
            for (k, &[u, v]) in grid_b.iter().enumerate() {
                scatter_bilinear(gx.data_mut(), h, w, u, v, g.data()[k]);
            }
            sink.add(x, gx);
        }))
    }

    /// Apply the similarity transform (s, theta, tx, ty) to image content:
    /// a point p of the input appears at s*R(theta)*(p-c) + c + t in the
    /// output, with c the image center. Bilinear sampling, zero outside.
    /// Differentiable w.r.t. the image and all four pose parameters.
    pub fn warp_sim2(&self, image: Var, pose: Var) -> Result<Var> {
        let (h, w) = self.value(image).dims2()?;
        if self.shape_of(pose) != [4] {
            return Err(Error::InvalidArgument {
                op: "warp_sim2",
                msg: format!("pose must be [s, theta, tx, ty], got shape {:?}", self.shape_of(pose)),
            });
        }
        let pv = self.value_clone(pose);
        if !pv.is_all_finite() || pv.data()[0].to_f64() <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "warp_sim2",
                msg: format!("non-finite or non-positive-scale pose {:?}", pv.data()),
            });
        }
        let geo = WarpGeom::new(h, w, &pv);
        let out = {
            let iv = self.value(image);
            let mut y = vec![T::zero(); h * w];
            for row in 0..h {
                for col in 0..w {
                    let (u, v) = geo.source_pos(col, row);
                    y[row * w + col] = bilinear_at(iv.data(), h, w, u, v);
                }
            }
            y
        };
        let out = Tensor::from_vec(&[h, w], out)?;
        Ok(self.push_op(out, &[image, pose], move |tape, g, sink| {
            let want_img = sink.wants(image);
            let want_pose = sink.wants(pose);
            let mut gx = Tensor::zeros(&[h, w]);
            let mut gp = [T::zero(); 4];
            let iv = tape.value(image);
            for row in 0..h {
                for col in 0..w {
                    let go = g.data()[row * w + col];
                    if go == T::zero() {
                        continue;
                    }
                    let (u, v) = geo.source_pos(col, row);
                    if want_img {
                        scatter_bilinear(gx.data_mut(), h, w, u, v, go);
                    }
                    if want_pose {
                        let (du, dv) = bilinear_pos_grad(iv.data(), h, w, u, v);
                        let d = geo.pose_jacobian(col, row, u, v);
                        for (k, gpk) in gp.iter_mut().enumerate() {
                            *gpk = *gpk + go * (du * d[k][0] + dv * d[k][1]);
                        }
                    }
                }
            }
            drop(iv);
            if want_img {
                sink.add(image, gx);
            }
            if want_pose {
                sink.add(pose, Tensor::from_vec(&[4], gp.to_vec()).expect("pose grad"));
            }
        }))
    }
}

/// Precomputed inverse-map coefficients for one warp.
struct WarpGeom<T: Scalar> {
    cx: f64,
    cy: f64,
    s: f64,
    cos_t: f64,
    sin_t: f64,
    tx: f64,
    ty: f64,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> WarpGeom<T> {
    fn new(h: usize, w: usize, pose: &Tensor<T>) -> Self {
        let p = pose.data();
        let theta = p[1].to_f64();
        WarpGeom {
            cx: (w as f64 - 1.0) / 2.0,
            cy: (h as f64 - 1.0) / 2.0,
            s: p[0].to_f64(),
            cos_t: theta.cos(),
            sin_t: theta.sin(),
            tx: p[2].to_f64(),
            ty: p[3].to_f64(),
            _marker: std::marker::PhantomData,
        }
    }

    /// Where output pixel (col,row) reads from: inverse map
    /// (1/s) R(-theta) (p - c - t) + c.
    #[inline]
    fn source_pos(&self, col: usize, row: usize) -> (f64, f64) {
        let dx = col as f64 - self.cx - self.tx;
        let dy = row as f64 - self.cy - self.ty;
        let u = (self.cos_t * dx + self.sin_t * dy) / self.s + self.cx;
        let v = (-self.sin_t * dx + self.cos_t * dy) / self.s + self.cy;
        (u, v)
    }

    /// d(u,v)/d(s, theta, tx, ty) at one output pixel.
    #[inline]
    fn pose_jacobian(&self, _col: usize, _row: usize, u: f64, v: f64) -> [[T; 2]; 4] {
        let (ur, vr) = (u - self.cx, v - self.cy);
        let f = |x: f64| T::from_f64(x);
        [
            [f(-ur / self.s), f(-vr / self.s)],
            [f(vr), f(-ur)],
            [f(-self.cos_t / self.s), f(self.sin_t / self.s)],
            [f(-self.sin_t / self.s), f(-self.cos_t / self.s)],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;

    fn pose<T: Scalar>(tape: &Tape<T>, s: f64, theta: f64, tx: f64, ty: f64) -> Var {
        tape.constant(
            Tensor::from_vec(
                &[4],
                vec![
                    T::from_f64(s),
                    T::from_f64(theta),
                    T::from_f64(tx),
                    T::from_f64(ty),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn identity_pose_is_exact() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.71).sin()).collect();
        let img = tape.constant(Tensor::from_vec(&[8, 8], data.clone()).unwrap());
        let p = pose(&tape, 1.0, 0.0, 0.0, 0.0);
        let y = tape.warp_sim2(img, p).unwrap();
        assert_eq!(tape.value(y).data(), data.as_slice());
    }

    #[test]
    fn translation_moves_content_positive_x() {
        let tape = Tape::<f64>::new();
        let mut t = Tensor::zeros(&[8, 8]);
        t.set2(4, 2, 1.0);
        let img = tape.constant(t);
        let p = pose(&tape, 1.0, 0.0, 3.0, 0.0);
        let y = tape.warp_sim2(img, p).unwrap();
        assert_eq!(tape.value(y).at2(4, 5), 1.0);
    }

    #[test]
    fn rejects_non_finite_pose() {
        let tape = Tape::<f64>::new();
        let img = tape.constant(Tensor::zeros(&[4, 4]));
        let p = pose(&tape, 1.0, f64::NAN, 0.0, 0.0);
        assert!(tape.warp_sim2(img, p).is_err());
    }

    #[test]
    fn out_of_bounds_reads_zero() {
        let tape = Tape::<f64>::new();
        let img = tape.constant(Tensor::filled(&[4, 4], 1.0));
        let p = pose(&tape, 1.0, 0.0, 3.0, 0.0);
        let y = tape.warp_sim2(img, p).unwrap();
        // the leftmost 3 columns now sample outside the input
        for r in 0..4 {
            assert_eq!(tape.value(y).at2(r, 0), 0.0);
        }
    }
}
