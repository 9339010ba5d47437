//! Differentiable spectral pipeline: FFT, centered magnitude spectrum,
//! high-pass filtering, log-polar resampling, and FFT-based circular
//! cross-correlation.
//!
//! Complex values travel on the tape packed as [2,H,W] tensors (real and
//! imaginary planes); the FFT backward rules are the adjoint transforms.

pub mod fft;

use std::rc::Rc;

use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use fft::{fft2d, is_power_of_two};

/// Guard used inside |z| and z/|z| derivatives at z = 0.
pub const MAGNITUDE_EPS: f64 = 1e-12;

/// Centered magnitude spectrum of a real image (plain-data form).
#[derive(Clone, Debug)]
pub struct Spectrum<T: Scalar> {
    pub magnitude: Tensor<T>,
    pub source_shape: (usize, usize),
}

/// Log-polar resampling of a centered spectrum (plain-data form).
/// Column j covers angle j * (coverage / cols); row i covers radius
/// origin * base^i.
#[derive(Clone, Debug)]
pub struct LogPolarMap<T: Scalar> {
    pub values: Tensor<T>,
    pub log_base: f64,
    pub radial_origin: f64,
    pub angular_coverage: f64,
}

fn check_pow2<T: Scalar>(op: &'static str, tape: &Tape<T>, v: Var) -> Result<(usize, usize)> {
    let (h, w) = tape.value(v).dims2()?;
    if !is_power_of_two(h) || !is_power_of_two(w) {
        return Err(Error::NotPowerOfTwo { op, shape: vec![h, w] });
    }
    Ok((h, w))
}

impl<T: Scalar> Tape<T> {
    /// 2D DFT of a real image, packed as [2,H,W]. Linear, so the backward
    /// rule is the adjoint (conjugate-transpose) transform.
    pub fn fft2(&self, x: Var) -> Result<Var> {
        let (h, w) = check_pow2("fft2", self, x)?;
        let out = {
            let xv = self.value(x);
            let mut re = xv.data().to_vec();
            let mut im = vec![T::zero(); h * w];
            drop(xv);
            fft2d(&mut re, &mut im, h, w, false);
            re.extend_from_slice(&im);
            re
        };
        let out = Tensor::from_vec(&[2, h, w], out)?;
        Ok(self.push_op(out, &[x], move |_, g, sink| {
            // adjoint: grad_x = Re(DFT(conj(g)))
            let n = h * w;
            let mut re = g.data()[..n].to_vec();
            let mut im: Vec<T> = g.data()[n..].iter().map(|&v| -v).collect();
            fft2d(&mut re, &mut im, h, w, false);
            sink.add(x, Tensor::from_vec(&[h, w], re).expect("fft2 grad shape"));
        }))
    }

    /// Real part of the inverse 2D DFT of a packed complex map.
    pub fn ifft2_real(&self, z: Var) -> Result<Var> {
        let shape = self.shape_of(z);
        let [two, h, w] = shape.as_slice() else {
            return Err(Error::InvalidArgument {
                op: "ifft2_real",
                msg: format!("expected packed [2,H,W], got {shape:?}"),
            });
        };
        if *two != 2 {
            return Err(Error::InvalidArgument {
                op: "ifft2_real",
                msg: format!("expected packed [2,H,W], got {shape:?}"),
            });
        }
        let (h, w) = (*h, *w);
        let out = {
            let zv = self.value(z);
            let n = h * w;
            let mut re = zv.data()[..n].to_vec();
            let mut im = zv.data()[n..].to_vec();
            drop(zv);
            fft2d(&mut re, &mut im, h, w, true);
            re
        };
        let out = Tensor::from_vec(&[h, w], out)?;
        Ok(self.push_op(out, &[z], move |_, g, sink| {
            // grad_z = (1/HW) DFT(g)
            let n = h * w;
            let mut re = g.data().to_vec();
            let mut im = vec![T::zero(); n];
            fft2d(&mut re, &mut im, h, w, false);
            let inv = T::from_f64(1.0 / n as f64);
            let mut gz = Vec::with_capacity(2 * n);
            gz.extend(re.iter().map(|&v| v * inv));
            gz.extend(im.iter().map(|&v| v * inv));
            sink.add(z, Tensor::from_vec(&[2, h, w], gz).expect("ifft grad shape"));
        }))
    }

    /// Pointwise a * conj(b) on packed complex maps.
    pub fn complex_mul_conj(&self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape_of(a);
        if sa != self.shape_of(b) {
            return Err(Error::ShapeMismatch {
                op: "complex_mul_conj",
                lhs: sa,
                rhs: self.shape_of(b),
            });
        }
        let n = sa[1..].iter().product::<usize>();
        let out = {
            let av = self.value(a);
            let bv = self.value(b);
            let (ar, ai) = av.data().split_at(n);
            let (br, bi) = bv.data().split_at(n);
            let mut y = vec![T::zero(); 2 * n];
            for i in 0..n {
                y[i] = ar[i] * br[i] + ai[i] * bi[i];
                y[n + i] = ai[i] * br[i] - ar[i] * bi[i];
            }
            y
        };
        let out = Tensor::from_vec(&sa, out)?;
        Ok(self.push_op(out, &[a, b], move |tape, g, sink| {
            let (gr, gi) = g.data().split_at(n);
            if sink.wants(a) {
                let bv = tape.value(b);
                let (br, bi) = bv.data().split_at(n);
                let mut ga = vec![T::zero(); 2 * n];
                for i in 0..n {
                    ga[i] = gr[i] * br[i] - gi[i] * bi[i];
                    ga[n + i] = gr[i] * bi[i] + gi[i] * br[i];
                }
                drop(bv);
                sink.add(a, Tensor::from_vec(&g.shape().to_vec(), ga).expect("cmc ga"));
            }
            if sink.wants(b) {
                let av = tape.value(a);
                let (ar, ai) = av.data().split_at(n);
                let mut gb = vec![T::zero(); 2 * n];
                for i in 0..n {
                    gb[i] = gr[i] * ar[i] + gi[i] * ai[i];
                    gb[n + i] = gr[i] * ai[i] - gi[i] * ar[i];
                }
                drop(av);
                sink.add(b, Tensor::from_vec(&g.shape().to_vec(), gb).expect("cmc gb"));
            }
        }))
    }

    /// |z| elementwise on a packed complex map, with an epsilon guard in the
    /// derivative at z = 0.
    pub fn complex_magnitude(&self, z: Var) -> Result<Var> {
        let shape = self.shape_of(z);
        if shape.first() != Some(&2) {
            return Err(Error::InvalidArgument {
                op: "complex_magnitude",
                msg: format!("expected packed [2,...], got {shape:?}"),
            });
        }
        let n: usize = shape[1..].iter().product();
        let out = {
            let zv = self.value(z);
            let (re, im) = zv.data().split_at(n);
            (0..n)
                .map(|i| (re[i] * re[i] + im[i] * im[i]).sqrt())
                .collect::<Vec<_>>()
        };
        let out = Tensor::from_vec(&shape[1..], out)?;
        let m = out.clone();
        let eps = T::from_f64(MAGNITUDE_EPS);
        Ok(self.push_op(out, &[z], move |tape, g, sink| {
            let zv = tape.value(z);
            let (re, im) = zv.data().split_at(n);
            let mut gz = vec![T::zero(); 2 * n];
            for i in 0..n {
                let d = m.data()[i].max(eps);
                gz[i] = g.data()[i] * re[i] / d;
                gz[n + i] = g.data()[i] * im[i] / d;
            }
            drop(zv);
            let mut zshape = vec![2];
            zshape.extend_from_slice(g.shape());
            sink.add(z, Tensor::from_vec(&zshape, gz).expect("mag grad shape"));
        }))
    }

    /// z / max(|z|, eps): the phase-normalization of classical phase
    /// correlation.
    pub fn unit_modulus(&self, z: Var) -> Result<Var> {
        let shape = self.shape_of(z);
        if shape.first() != Some(&2) {
            return Err(Error::InvalidArgument {
                op: "unit_modulus",
                msg: format!("expected packed [2,...], got {shape:?}"),
            });
        }
        let n: usize = shape[1..].iter().product();
        let eps = T::from_f64(MAGNITUDE_EPS);
        let out = {
            let zv = self.value(z);
            let (re, im) = zv.data().split_at(n);
            let mut y = vec![T::zero(); 2 * n];
            for i in 0..n {
                let m = (re[i] * re[i] + im[i] * im[i]).sqrt().max(eps);
                y[i] = re[i] / m;
                y[n + i] = im[i] / m;
            }
            y
        };
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push_op(out, &[z], move |tape, g, sink| {
            let zv = tape.value(z);
            let (re, im) = zv.data().split_at(n);
            let (gr, gi) = g.data().split_at(n);
            let mut gz = vec![T::zero(); 2 * n];
            for i in 0..n {
                let m2 = re[i] * re[i] + im[i] * im[i];
                let m = m2.sqrt();
                if m > eps {
                    let m3 = m * m2;
                    gz[i] = (gr[i] * im[i] * im[i] - gi[i] * re[i] * im[i]) / m3;
                    gz[n + i] = (gi[i] * re[i] * re[i] - gr[i] * re[i] * im[i]) / m3;
                } else {
                    gz[i] = gr[i] / eps;
                    gz[n + i] = gi[i] / eps;
                }
            }
            drop(zv);
            sink.add(z, Tensor::from_vec(&g.shape().to_vec(), gz).expect("um grad shape"));
        }))
    }

    /// Swap quadrants so the zero-frequency bin lands at (H/2, W/2).
    /// Self-inverse for even extents.
    pub fn fftshift(&self, x: Var) -> Result<Var> {
        let (h, w) = self.value(x).dims2()?;
        let mut idx = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                idx.push(((r + h / 2) % h) * w + (c + w / 2) % w);
            }
        }
        self.gather(x, Rc::new(idx), &[h, w])
    }

    /// Centered magnitude spectrum: fftshift(|fft2(x)|).
    pub fn magnitude_spectrum(&self, x: Var) -> Result<Var> {
        let f = self.fft2(x)?;
        let m = self.complex_magnitude(f)?;
        self.fftshift(m)
    }

    /// c(t) = sum_x a(x) b(x+t) over all circular shifts, via
    /// IFFT(conj(FFT(a)) . FFT(b)). A peak at t means the content of `b`
    /// sits at +t relative to `a`. With `phase_normalized` the cross-power
    /// spectrum is divided by its magnitude first.
    pub fn circular_cross_correlation(
        &self,
        a: Var,
        b: Var,
        phase_normalized: bool,
    ) -> Result<Var> {
        let sa = self.shape_of(a);
        if sa != self.shape_of(b) {
            return Err(Error::ShapeMismatch {
                op: "circular_cross_correlation",
                lhs: sa,
                rhs: self.shape_of(b),
            });
        }
        check_pow2("circular_cross_correlation", self, a)?;
        let fa = self.fft2(a)?;
        let fb = self.fft2(b)?;
        let mut cross = self.complex_mul_conj(fb, fa)?;
        if phase_normalized {
            cross = self.unit_modulus(cross)?;
        }
        self.ifft2_real(cross)
    }
}

/// Separable Hann window, used to damp boundary leakage before the
/// rotation-scale spectrum.
pub fn hann_window<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    tukey_window(h, w, 1.0)
}

/// Separable Tukey (tapered cosine) window. `alpha` is the tapered
/// fraction per dimension: 1 is a Hann window, 0 is no window.
pub fn tukey_window<T: Scalar>(h: usize, w: usize, alpha: f64) -> Tensor<T> {
    let alpha = alpha.clamp(0.0, 1.0);
    let t1d = |i: usize, n: usize| -> f64 {
        if n <= 1 || alpha == 0.0 {
            return 1.0;
        }
        let x = i as f64 / (n as f64 - 1.0);
        let half = alpha / 2.0;
        if x < half {
            0.5 * (1.0 - (std::f64::consts::PI * x / half).cos())
        } else if x > 1.0 - half {
            0.5 * (1.0 - (std::f64::consts::PI * (1.0 - x) / half).cos())
        } else {
            1.0
        }
    };
    let mut t = Tensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            t.set2(r, c, T::from_f64(t1d(r, h) * t1d(c, w)));
        }
    }
    t
}

/// Classical high-pass gain for a centered spectrum:
/// (1 - X)(2 - X) with X = cos(pi u) cos(pi v), u,v normalized frequency.
/// Zero gain at DC.
pub fn highpass_gain<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            let fv = (r as f64 - (h / 2) as f64) / h as f64;
            let fu = (c as f64 - (w / 2) as f64) / w as f64;
            let x = (std::f64::consts::PI * fu).cos() * (std::f64::consts::PI * fv).cos();
            t.set2(r, c, T::from_f64((1.0 - x) * (2.0 - x)));
        }
    }
    // exact zero at the zero-frequency bin
    t.set2(h / 2, w / 2, T::zero());
    t
}

/// Geometry of the log-polar resampling grid over a centered spectrum.
#[derive(Clone, Debug)]
pub struct LogPolarGeom {
    pub rows: usize,
    pub cols: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Angular span in radians; pi matches the 180-degree symmetry of real
    /// magnitude spectra.
    pub coverage: f64,
}

impl LogPolarGeom {
    pub fn new(rows: usize, cols: usize, r_min: f64, r_max: f64) -> Self {
        LogPolarGeom {
            rows,
            cols,
            r_min,
            r_max,
            coverage: std::f64::consts::PI,
        }
    }

    /// ln of the radial growth factor per row.
    pub fn log_base(&self) -> f64 {
        (self.r_max / self.r_min).ln() / (self.rows as f64 - 1.0)
    }

    /// Radians per column.
    pub fn angle_step(&self) -> f64 {
        self.coverage / self.cols as f64
    }

    pub fn radius_at(&self, row: f64) -> f64 {
        self.r_min * (self.log_base() * row).exp()
    }

    /// Sampling grid over an h x w centered spectrum.
    pub fn grid(&self, h: usize, w: usize) -> Vec<[f64; 2]> {
        let (cx, cy) = ((w / 2) as f64, (h / 2) as f64);
        let mut pts = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            let r = self.radius_at(i as f64);
            for j in 0..self.cols {
                let beta = self.angle_step() * j as f64;
                pts.push([cx + r * beta.cos(), cy + r * beta.sin()]);
            }
        }
        pts
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.rows < 8 || self.cols < 8 {
            return Err(Error::InvalidArgument {
                op: "logpolar_resample",
                msg: format!("resolution {}x{} below minimum 8x8", self.rows, self.cols),
            });
        }
        let nyquist = (h.min(w) / 2) as f64;
        if !(self.r_min >= 1.0 && self.r_max > self.r_min && self.r_max <= nyquist) {
            return Err(Error::InvalidArgument {
                op: "logpolar_resample",
                msg: format!(
                    "radius range [{}, {}] outside [1, {nyquist}]",
                    self.r_min, self.r_max
                ),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> Tape<T> {
    /// Bilinear log-polar resampling of a centered spectrum.
    pub fn logpolar_resample(&self, spectrum: Var, geom: &LogPolarGeom) -> Result<Var> {
        let (h, w) = self.value(spectrum).dims2()?;
        geom.validate(h, w)?;
        self.sample_bilinear(
            spectrum,
            Rc::new(geom.grid(h, w)),
            &[geom.rows, geom.cols],
        )
    }
}
