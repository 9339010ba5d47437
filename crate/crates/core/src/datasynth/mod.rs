//! Synthetic dataset generation: textured base images, warped pairs with
//! exact ground-truth poses, style remaps for heterogeneous pairs, and
//! opaque blobs for the dynamic-obstacle set.

pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{fnv1a64, PoseRanges};
use crate::diff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::estimator::{warp_tensor, PoseSim2};
use crate::spectral::fft::fft2d;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SetTag {
    Homogeneous,
    Heterogeneous,
    Dynamic,
    Custom,
}

impl SetTag {
    pub fn tag(self) -> &'static str {
        match self {
            SetTag::Homogeneous => "homogeneous",
            SetTag::Heterogeneous => "heterogeneous",
            SetTag::Dynamic => "dynamic",
            SetTag::Custom => "custom",
        }
    }

    pub fn from_tag(s: &str) -> Option<SetTag> {
        [
            SetTag::Homogeneous,
            SetTag::Heterogeneous,
            SetTag::Dynamic,
            SetTag::Custom,
        ]
        .into_iter()
        .find(|t| t.tag() == s)
    }
}

/// One template/source pair with exact ground truth.
#[derive(Clone, Debug)]
pub struct SamplePair<T: Scalar> {
    pub template: Tensor<T>,
    pub source: Tensor<T>,
    pub pose: PoseSim2,
    pub tag: SetTag,
    pub seed: u64,
    /// Where obstacles were painted (dynamic set only).
    pub obstacle_mask: Option<Tensor<T>>,
    /// Base images discarded by the texture gate before this one.
    pub rejected_attempts: u32,
}

fn sub_seed(seed: u64, salt: &str, k: u64) -> u64 {
    let mut bytes = Vec::with_capacity(24);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(salt.as_bytes());
    bytes.extend_from_slice(&k.to_le_bytes());
    fnv1a64(&bytes)
}

/// Bilinear upsampling of a coarse grid to size x size (value noise).
fn smooth_noise(rng: &mut ChaCha8Rng, size: usize, cell: usize, amp: f64) -> Vec<f64> {
    let g = size / cell + 2;
    let coarse: Vec<f64> = (0..g * g).map(|_| rng.random::<f64>() * amp).collect();
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (y, x) = (r as f64 / cell as f64, c as f64 / cell as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let at = |i: usize, j: usize| coarse[i.min(g - 1) * g + j.min(g - 1)];
            out[r * size + c] = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + at(y0, x0 + 1) * (1.0 - fy) * fx
                + at(y0 + 1, x0) * fy * (1.0 - fx)
                + at(y0 + 1, x0 + 1) * fy * fx;
        }
    }
    out
}

fn dist_to_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((px - ax) * dx + (py - ay) * dy) / len2
    }
    .clamp(0.0, 1.0);
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

fn point_in_polygon(px: f64, py: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = verts.len();
    for i in 0..n {
        let (x1, y1) = verts[i];
        let (x2, y2) = verts[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            let xi = x1 + (py - y1) / (y2 - y1) * (x2 - x1);
            if px < xi {
                inside = !inside;
            }
        }
    }
    inside
}

/// Randomly composed image: low-frequency value noise under 10-40 opaque
/// shapes (ellipses, star polygons, thick lines), normalized to [0,1].
pub fn gen_base_image<T: Scalar>(seed: u64, size: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = smooth_noise(&mut rng, size, (size / 8).max(2), 0.5);
    let fine = smooth_noise(&mut rng, size, (size / 32).max(2), 0.2);
    for (a, b) in img.iter_mut().zip(fine) {
        *a += b;
    }
    let n_shapes = rng.random_range(10..=40);
    let sf = size as f64;
    for _ in 0..n_shapes {
        let kind = rng.random_range(0..3u32);
        let intensity = rng.random::<f64>();
        match kind {
            0 => {
                // rotated ellipse
                let (cx, cy) = (rng.random::<f64>() * sf, rng.random::<f64>() * sf);
                let a = rng.random_range(sf / 32.0..sf / 6.0);
                let b = rng.random_range(sf / 32.0..sf / 6.0);
                let phi = rng.random_range(0.0..std::f64::consts::PI);
                let (cp, sp) = (phi.cos(), phi.sin());
                let r_bound = a.max(b).ceil() as i64;
                for dy in -r_bound..=r_bound {
                    for dx in -r_bound..=r_bound {
                        let (x, y) = (cx + dx as f64, cy + dy as f64);
                        if x < 0.0 || y < 0.0 || x >= sf || y >= sf {
                            continue;
                        }
                        let (rx, ry) = (
                            (dx as f64 * cp + dy as f64 * sp) / a,
                            (-(dx as f64) * sp + dy as f64 * cp) / b,
                        );
                        if rx * rx + ry * ry <= 1.0 {
                            img[y as usize * size + x as usize] = intensity;
                        }
                    }
                }
            }
            1 => {
                // star-shaped polygon around a center
                let (cx, cy) = (rng.random::<f64>() * sf, rng.random::<f64>() * sf);
                let nv = rng.random_range(3..=6);
                let mut verts = Vec::with_capacity(nv);
                for i in 0..nv {
                    let ang = (i as f64 + rng.random::<f64>() * 0.8)
                        * std::f64::consts::TAU
                        / nv as f64;
                    let rad = rng.random_range(sf / 24.0..sf / 5.0);
                    verts.push((cx + rad * ang.cos(), cy + rad * ang.sin()));
                }
                let (xmin, xmax) = verts
                    .iter()
                    .fold((sf, 0.0_f64), |(lo, hi), v| (lo.min(v.0), hi.max(v.0)));
                let (ymin, ymax) = verts
                    .iter()
                    .fold((sf, 0.0_f64), |(lo, hi), v| (lo.min(v.1), hi.max(v.1)));
                for y in ymin.max(0.0) as usize..=(ymax.min(sf - 1.0)) as usize {
                    for x in xmin.max(0.0) as usize..=(xmax.min(sf - 1.0)) as usize {
                        if point_in_polygon(x as f64, y as f64, &verts) {
                            img[y * size + x] = intensity;
                        }
                    }
                }
            }
            _ => {
                // thick line segment
                let (ax, ay) = (rng.random::<f64>() * sf, rng.random::<f64>() * sf);
                let (bx, by) = (rng.random::<f64>() * sf, rng.random::<f64>() * sf);
                let half = rng.random_range(0.5..2.0);
                let (xmin, xmax) = (ax.min(bx) - half, ax.max(bx) + half);
                let (ymin, ymax) = (ay.min(by) - half, ay.max(by) + half);
                for y in ymin.max(0.0) as usize..=(ymax.min(sf - 1.0)) as usize {
                    for x in xmin.max(0.0) as usize..=(xmax.min(sf - 1.0)) as usize {
                        if dist_to_segment(x as f64, y as f64, ax, ay, bx, by) <= half {
                            img[y * size + x] = intensity;
                        }
                    }
                }
            }
        }
    }
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(1e-9);
    Tensor::from_vec(
        &[size, size],
        img.iter().map(|&v| T::from_f64((v - lo) / range)).collect(),
    )
    .expect("base image shape")
}

/// Margin of the circular autocorrelation peak over everything outside a
/// small neighborhood of zero shift; the well-posedness score of a
/// template.
pub fn autocorrelation_margin<T: Scalar>(img: &Tensor<T>) -> f64 {
    let (h, w) = img.dims2().expect("2D image");
    let mean = img.mean_value().to_f64();
    let mut re: Vec<f64> = img.data().iter().map(|&v| v.to_f64() - mean).collect();
    let mut im = vec![0.0; h * w];
    fft2d(&mut re, &mut im, h, w, false);
    for i in 0..h * w {
        let p = re[i] * re[i] + im[i] * im[i];
        re[i] = p;
        im[i] = 0.0;
    }
    fft2d(&mut re, &mut im, h, w, true);
    let peak = re[0];
    if peak <= 0.0 {
        return 0.0;
    }
    let mut rival: f64 = f64::NEG_INFINITY;
    for ty in 0..h {
        for tx in 0..w {
            let (dy, dx) = (ty.min(h - ty), tx.min(w - tx));
            if dy <= 3 && dx <= 3 {
                continue;
            }
            rival = rival.max(re[ty * w + tx]);
        }
    }
    1.0 - rival / peak
}

/// Margin of the zero-rotation peak in the angular self-correlation of the
/// log-polar magnitude spectrum. Axis-dominant or n-fold symmetric images
/// score near zero: their rotation estimate is ambiguous even though the
/// translation autocorrelation looks fine.
pub fn rotation_selfsimilarity_margin<T: Scalar>(img: &Tensor<T>) -> f64 {
    use crate::diff::Tape;
    use crate::spectral::{hann_window, highpass_gain, LogPolarGeom};
    let (h, w) = img.dims2().expect("2D image");
    let tape = Tape::<f64>::new();
    let x = tape.constant(img.cast::<f64>());
    let x = tape.mul_const(x, &hann_window(h, w)).expect("hann");
    let spec = tape.magnitude_spectrum(x).expect("spectrum");
    let spec = tape
        .mul_const(spec, &highpass_gain(h, w))
        .expect("highpass");
    let geom = LogPolarGeom::new(64.min(h / 2), 128.min(w), 1.0, (h.min(w) / 2) as f64);
    let lp = tape.logpolar_resample(spec, &geom).expect("logpolar");
    let mut m = tape.value_clone(lp);
    let mean = m.mean_value();
    for v in m.data_mut().iter_mut() {
        *v -= mean;
    }
    let (rows, cols) = (geom.rows, geom.cols);
    let corr = |shift: usize| -> f64 {
        let mut acc = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                acc += m.at2(r, c) * m.at2(r, (c + shift) % cols);
            }
        }
        acc
    };
    let c0 = corr(0);
    if c0 <= 0.0 {
        return 0.0;
    }
    let mut rival = f64::NEG_INFINITY;
    for s in 0..cols {
        if s.min(cols - s) <= 2 {
            continue;
        }
        rival = rival.max(corr(s));
    }
    1.0 - rival / c0
}

fn texture_ok<T: Scalar>(img: &Tensor<T>) -> bool {
    let mean = img.mean_value().to_f64();
    let var = img
        .data()
        .iter()
        .map(|&v| (v.to_f64() - mean).powi(2))
        .sum::<f64>()
        / img.numel() as f64;
    var.sqrt() > 0.05
        && autocorrelation_margin(img) > 0.05
        && rotation_selfsimilarity_margin(img) > 0.1
}

/// Base image generation with the well-posedness gate: degenerate draws are
/// rejected and regenerated from derived seeds.
pub fn gen_accepted_base<T: Scalar>(seed: u64, size: usize) -> (Tensor<T>, u32) {
    for attempt in 0..64u32 {
        let s = if attempt == 0 {
            seed
        } else {
            sub_seed(seed, "resample", attempt as u64)
        };
        let img = gen_base_image::<T>(s, size);
        if texture_ok(&img) {
            return (img, attempt);
        }
    }
    // extraordinarily unlikely; last draw wins
    (gen_base_image::<T>(sub_seed(seed, "resample", 64), size), 64)
}

#[derive(Clone, Copy, Debug)]
enum Style {
    Invert,
    Gamma(f64),
    EdgeMagnitude,
    Posterize,
    BiasField(u64),
}

fn apply_style<T: Scalar>(img: &Tensor<T>, style: Style, size: usize) -> Tensor<T> {
    match style {
        Style::Invert => img.map(|v| T::one() - v),
        Style::Gamma(g) => img.map(|v| T::from_f64(v.to_f64().max(0.0).powf(g))),
        Style::EdgeMagnitude => {
            let (h, w) = img.dims2().expect("2D");
            let mut out = Tensor::zeros(&[h, w]);
            let at = |r: i64, c: i64| -> f64 {
                img.at2(r.clamp(0, h as i64 - 1) as usize, c.clamp(0, w as i64 - 1) as usize)
                    .to_f64()
            };
            let mut hi = 0.0_f64;
            let mut vals = vec![0.0; h * w];
            for r in 0..h as i64 {
                for c in 0..w as i64 {
                    let gx = at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)
                        - at(r - 1, c - 1)
                        - 2.0 * at(r, c - 1)
                        - at(r + 1, c - 1);
                    let gy = at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)
                        - at(r - 1, c - 1)
                        - 2.0 * at(r - 1, c)
                        - at(r - 1, c + 1);
                    let m = (gx * gx + gy * gy).sqrt();
                    vals[r as usize * w + c as usize] = m;
                    hi = hi.max(m);
                }
            }
            let inv = 1.0 / hi.max(1e-9);
            for (o, v) in out.data_mut().iter_mut().zip(vals) {
                *o = T::from_f64(v * inv);
            }
            out
        }
        Style::Posterize => img.map(|v| {
            let lv = (v.to_f64() * 3.0).round() / 3.0;
            T::from_f64(lv.clamp(0.0, 1.0))
        }),
        Style::BiasField(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let field = smooth_noise(&mut rng, size, (size / 4).max(2), 0.6);
            let mut out = img.clone();
            for (o, f) in out.data_mut().iter_mut().zip(field) {
                *o = T::from_f64((o.to_f64() + f - 0.3).clamp(0.0, 1.0));
            }
            out
        }
    }
}

fn add_pixel_noise<T: Scalar>(img: &mut Tensor<T>, rng: &mut ChaCha8Rng, sigma: f64) {
    for v in img.data_mut().iter_mut() {
        // Box-Muller
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random::<f64>();
        let n = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        *v = T::from_f64((v.to_f64() + sigma * n).clamp(0.0, 1.0));
    }
}

fn paint_blobs<T: Scalar>(
    img: &mut Tensor<T>,
    mask: &mut Tensor<T>,
    rng: &mut ChaCha8Rng,
    size: usize,
) {
    let n = rng.random_range(1..=5);
    let sf = size as f64;
    for _ in 0..n {
        // area of one blob capped at 8% of the image
        let r_max = (0.08 * sf * sf / std::f64::consts::PI).sqrt();
        let rad = rng.random_range(sf * 0.03..r_max);
        let (cx, cy) = (rng.random::<f64>() * sf, rng.random::<f64>() * sf);
        let intensity = rng.random::<f64>();
        let rb = rad.ceil() as i64;
        for dy in -rb..=rb {
            for dx in -rb..=rb {
                let (x, y) = (cx + dx as f64, cy + dy as f64);
                if x < 0.0 || y < 0.0 || x >= sf || y >= sf {
                    continue;
                }
                if (dx * dx + dy * dy) as f64 <= rad * rad {
                    let idx = y as usize * size + x as usize;
                    img.data_mut()[idx] = T::from_f64(intensity);
                    mask.data_mut()[idx] = T::one();
                }
            }
        }
    }
}

/// Draw a pose uniformly from the configured ranges.
pub fn sample_pose(rng: &mut ChaCha8Rng, ranges: &PoseRanges) -> PoseSim2 {
    let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let tx = u(rng, ranges.tx);
    let ty = u(rng, ranges.ty);
    let theta = u(rng, ranges.rot);
    let scale = u(rng, ranges.scale);
    PoseSim2::new(scale, theta, tx, ty)
}

/// Generate one pair: template from the gated base generator, source as the
/// warped template, then per-tag restyling (applied after the warp so the
/// ground truth stays exact).
pub fn make_pair<T: Scalar>(
    seed: u64,
    tag: SetTag,
    ranges: &PoseRanges,
    size: usize,
) -> Result<SamplePair<T>> {
    ranges.validate()?;
    if !crate::spectral::fft::is_power_of_two(size) {
        return Err(Error::InvalidArgument {
            op: "make_pair",
            msg: format!("size {size} must be a power of two"),
        });
    }
    let (template, rejected) = gen_accepted_base::<T>(sub_seed(seed, "base", 0), size);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "pose", 0));
    let pose = sample_pose(&mut rng, ranges);
    let source = warp_tensor(&template, &pose)?;

    let (mut template, mut source) = (template, source);
    let mut obstacle_mask = None;

    if matches!(tag, SetTag::Heterogeneous | SetTag::Dynamic) {
        let mut srng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "style", 0));
        let style = match srng.random_range(0..5u32) {
            0 => Style::Invert,
            1 => {
                let lg = srng.random_range(0.3_f64.ln()..3.0_f64.ln());
                Style::Gamma(lg.exp())
            }
            2 => Style::EdgeMagnitude,
            3 => Style::Posterize,
            _ => Style::BiasField(sub_seed(seed, "bias", 0)),
        };
        source = apply_style(&source, style, size);
        let mut nrng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "noise", 0));
        add_pixel_noise(&mut template, &mut nrng, 0.02);
        add_pixel_noise(&mut source, &mut nrng, 0.02);
    }

    if tag == SetTag::Dynamic {
        let mut brng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "blobs", 0));
        let mut mask = Tensor::zeros(&[size, size]);
        let into_template: bool = brng.random();
        if into_template {
            paint_blobs(&mut template, &mut mask, &mut brng, size);
        } else {
            paint_blobs(&mut source, &mut mask, &mut brng, size);
        }
        obstacle_mask = Some(mask);
    }

    Ok(SamplePair {
        template,
        source,
        pose,
        tag,
        seed,
        obstacle_mask,
        rejected_attempts: rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_image_is_deterministic() {
        let a = gen_base_image::<f64>(5, 64);
        let b = gen_base_image::<f64>(5, 64);
        assert_eq!(a, b);
    }

    #[test]
    fn identity_pose_gives_identical_images() {
        let ranges = PoseRanges {
            tx: (0.0, 0.0),
            ty: (0.0, 0.0),
            rot: (0.0, 0.0),
            scale: (1.0, 1.0),
        };
        let p = make_pair::<f64>(3, SetTag::Homogeneous, &ranges, 64).unwrap();
        assert_eq!(p.template, p.source);
        assert_eq!(p.pose, PoseSim2::identity());
    }

    #[test]
    fn dynamic_pair_records_differing_obstacle_pixels() {
        let ranges = PoseRanges {
            tx: (0.0, 0.0),
            ty: (0.0, 0.0),
            rot: (0.0, 0.0),
            scale: (1.0, 1.0),
        };
        let p = make_pair::<f64>(11, SetTag::Dynamic, &ranges, 64).unwrap();
        let mask = p.obstacle_mask.as_ref().unwrap();
        let painted = mask.data().iter().filter(|&&v| v > 0.0).count();
        assert!(painted > 0);
        let differing = (0..mask.numel())
            .filter(|&i| mask.data()[i] > 0.0)
            .filter(|&i| (p.template.data()[i] - p.source.data()[i]).abs() > 1e-9)
            .count();
        // obstacles are painted into exactly one image after restyling
        assert!(differing as f64 > painted as f64 * 0.5);
    }

    #[test]
    fn mean_intensity_within_working_band() {
        for seed in 0..20 {
            let img = gen_base_image::<f64>(seed, 64);
            let m = img.mean_value();
            assert!((0.2..=0.8).contains(&m), "seed {seed}: mean {m}");
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut r = PoseRanges::default();
        r.scale = (-0.5, 1.0);
        assert!(make_pair::<f64>(1, SetTag::Homogeneous, &r, 64).is_err());
    }
}
