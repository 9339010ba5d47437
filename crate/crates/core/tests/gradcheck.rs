//! Central finite-difference verification of every backward rule, 20 seeds
//! per op at 64-bit with step 1e-5, relative error < 1e-4 (1e-3 for the
//! full composed pipeline).

use std::rc::Rc;

use phasereg_core::diff::gradcheck::{finite_diff_gradient, max_rel_error};
use phasereg_core::diff::{Scalar, Tape, Tensor, Var};
use phasereg_core::error::Result;
use phasereg_core::estimator::{register_differentiable, EstimatorConfig, PoseSim2};
use phasereg_core::features::{ExtractorSet, Topology};
use phasereg_core::spectral::LogPolarGeom;
use phasereg_core::training::{kl_one_peak_loss, TargetDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Check d(loss)/d(input) where loss = sum(w . op(x)) for a random
/// projection w, against central finite differences.
fn check_unary(
    name: &str,
    shape: &[usize],
    (lo, hi): (f64, f64),
    build: impl Fn(&Tape<f64>, Var) -> Result<Var>,
) {
    let n: usize = shape.iter().product();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF ^ seed);
        let x0 = rand_vec(&mut rng, n, lo, hi);
        let out_n = {
            let tape = Tape::new();
            let x = tape.constant(Tensor::from_vec(shape, x0.clone()).unwrap());
            let y = build(&tape, x).expect(name);
            let n = tape.value(y).numel();
            n
        };
        let w = Tensor::from_vec(&[out_n], rand_vec(&mut rng, out_n, -1.0, 1.0)).unwrap();
        let eval = |data: &[f64]| -> f64 {
            let tape = Tape::new();
            let x = tape.constant(Tensor::from_vec(shape, data.to_vec()).unwrap());
            let y = build(&tape, x).expect(name);
            let flat = tape.reshape(y, &[out_n]).unwrap();
            let l = tape.weighted_sum(flat, &w).unwrap();
            tape.scalar_value(l)
        };
        let got = {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(shape, x0.clone()).unwrap());
            let y = build(&tape, x).expect(name);
            let flat = tape.reshape(y, &[out_n]).unwrap();
            let l = tape.weighted_sum(flat, &w).unwrap();
            tape.backward(l).unwrap();
            tape.grad(x).unwrap().into_data()
        };
        let want = finite_diff_gradient(&mut |v| eval(v), &x0, STEP);
        let err = max_rel_error(&got, &want);
        assert!(err < TOL, "{name} seed {seed}: rel err {err}");
    }
}

#[test]
fn elementwise_ops() {
    check_unary("neg", &[3, 4], (-2.0, 2.0), |t, x| Ok(t.neg(x)));
    check_unary("scale", &[3, 4], (-2.0, 2.0), |t, x| Ok(t.scale(x, -1.7)));
    check_unary("add_scalar", &[3, 4], (-2.0, 2.0), |t, x| {
        Ok(t.add_scalar_const(x, 0.3))
    });
    check_unary("relu", &[4, 4], (0.1, 2.0), |t, x| Ok(t.relu(x)));
    check_unary("relu_neg", &[4, 4], (-2.0, -0.1), |t, x| Ok(t.relu(x)));
    check_unary("sigmoid", &[3, 3], (-3.0, 3.0), |t, x| Ok(t.sigmoid(x)));
    check_unary("exp", &[3, 3], (-1.0, 1.0), |t, x| Ok(t.exp(x)));
    check_unary("ln", &[3, 3], (0.5, 3.0), |t, x| Ok(t.ln(x)));
}

#[test]
fn binary_ops_each_side() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(0xD00D ^ seed);
        let other = Tensor::from_vec(&[2, 3], rand_vec(&mut rng, 6, 0.5, 2.0)).unwrap();
        for (name, f) in [
            ("add", 0usize),
            ("sub", 1),
            ("mul", 2),
            ("div", 3),
        ] {
            let o = other.clone();
            let apply = move |t: &Tape<f64>, a: Var, b: Var| match f {
                0 => t.add(a, b),
                1 => t.sub(a, b),
                2 => t.mul(a, b),
                _ => t.div(a, b),
            };
            // w.r.t. left operand
            check_side(name, seed, true, &o, apply);
            // w.r.t. right operand
            check_side(name, seed, false, &o, apply);
        }
    }
}

fn check_side(
    name: &str,
    seed: u64,
    left: bool,
    other: &Tensor<f64>,
    apply: impl Fn(&Tape<f64>, Var, Var) -> Result<Var> + Copy,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xABCD ^ seed);
    let x0 = rand_vec(&mut rng, 6, 0.5, 2.0);
    let w = Tensor::from_vec(&[6], rand_vec(&mut rng, 6, -1.0, 1.0)).unwrap();
    let eval = |data: &[f64], leaf: bool| -> (f64, Option<Vec<f64>>) {
        let tape = Tape::new();
        let x = if leaf {
            tape.leaf(Tensor::from_vec(&[2, 3], data.to_vec()).unwrap())
        } else {
            tape.constant(Tensor::from_vec(&[2, 3], data.to_vec()).unwrap())
        };
        let o = tape.constant(other.clone());
        let y = if left {
            apply(&tape, x, o).unwrap()
        } else {
            apply(&tape, o, x).unwrap()
        };
        let flat = tape.reshape(y, &[6]).unwrap();
        let l = tape.weighted_sum(flat, &w).unwrap();
        let lv = tape.scalar_value(l);
        if leaf {
            tape.backward(l).unwrap();
            (lv, Some(tape.grad(x).unwrap().into_data()))
        } else {
            (lv, None)
        }
    };
    let got = eval(&x0, true).1.unwrap();
    let want = finite_diff_gradient(&mut |v| eval(v, false).0, &x0, STEP);
    let err = max_rel_error(&got, &want);
    assert!(err < TOL, "{name} ({}) seed {seed}: rel err {err}", if left { "lhs" } else { "rhs" });
}

#[test]
fn reductions_and_broadcast() {
    check_unary("sum", &[4, 5], (-1.0, 1.0), |t, x| Ok(t.sum(x)));
    check_unary("mean", &[4, 5], (-1.0, 1.0), |t, x| Ok(t.mean(x)));
    check_unary("max", &[4, 5], (-1.0, 1.0), |t, x| Ok(t.max(x)));
    check_unary("normalize", &[4, 5], (-1.0, 1.0), |t, x| {
        let m = t.mean(x);
        let c = t.sub_bcast(x, m)?;
        let mx = t.max(c);
        t.div_bcast_floor(c, mx, 1e-12)
    });
    check_unary("l1", &[4], (0.2, 2.0), |t, x| {
        t.l1_to_const(x, &[0.05, -0.02, 0.1, 0.0], &[None, None, Some(10.0), None])
    });
}

#[test]
fn softmax_jacobian_small_vector() {
    check_unary("softmax4", &[4], (-1.0, 1.0), |t, x| t.softmax(x, 3.0));
    check_unary("softmax_map", &[5, 5], (-1.0, 1.0), |t, x| t.softmax(x, 20.0));
}

#[test]
fn structural_ops() {
    check_unary("upsample2x", &[2, 3, 3], (-1.0, 1.0), |t, x| t.upsample2x(x));
    check_unary("avgpool2", &[2, 4, 4], (-1.0, 1.0), |t, x| t.avgpool2(x));
    check_unary("reshape", &[2, 6], (-1.0, 1.0), |t, x| t.reshape(x, &[3, 4]));
    check_unary("gather", &[9], (-1.0, 1.0), |t, x| {
        t.gather(x, Rc::new(vec![0, 3, 3, 8, 2]), &[5])
    });
    check_unary("fftshift", &[4, 4], (-1.0, 1.0), |t, x| t.fftshift(x));
    check_unary("concat_lhs", &[2, 3, 3], (-1.0, 1.0), |t, x| {
        let o = t.constant(Tensor::filled(&[1, 3, 3], 0.7));
        t.concat_channels(x, o)
    });
}

#[test]
fn conv2d_input_kernel_bias() {
    // w.r.t. input
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0 ^ seed);
        let k = Tensor::from_vec(&[2, 1, 3, 3], rand_vec(&mut rng, 18, -1.0, 1.0)).unwrap();
        let b = Tensor::from_vec(&[2], rand_vec(&mut rng, 2, -0.5, 0.5)).unwrap();
        let kc = k.clone();
        let bc = b.clone();
        check_unary_seeded("conv_input", seed, &[5, 5], (-1.0, 1.0), move |t, x| {
            let kv = t.constant(kc.clone());
            let bv = t.constant(bc.clone());
            t.conv2d(x, kv, Some(bv), 1, 1)
        });
        let img = Tensor::from_vec(&[5, 5], rand_vec(&mut rng, 25, -1.0, 1.0)).unwrap();
        let ic = img.clone();
        check_unary_seeded("conv_kernel", seed, &[2, 1, 3, 3], (-1.0, 1.0), move |t, k| {
            let iv = t.constant(ic.clone());
            t.conv2d(iv, k, None, 2, 1)
        });
        let img2 = Tensor::from_vec(&[5, 5], rand_vec(&mut rng, 25, -1.0, 1.0)).unwrap();
        let k2 = k.clone();
        check_unary_seeded("conv_bias", seed, &[2], (-1.0, 1.0), move |t, b| {
            let iv = t.constant(img2.clone());
            let kv = t.constant(k2.clone());
            t.conv2d(iv, kv, Some(b), 1, 0)
        });
    }
}

/// Like check_unary but with a per-call seed (for ops needing fixed
/// co-inputs that vary per seed).
fn check_unary_seeded(
    name: &str,
    seed: u64,
    shape: &[usize],
    (lo, hi): (f64, f64),
    build: impl Fn(&Tape<f64>, Var) -> Result<Var>,
) {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00 ^ seed);
    let x0 = rand_vec(&mut rng, n, lo, hi);
    let out_n = {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(shape, x0.clone()).unwrap());
        let y = build(&tape, x).expect(name);
        let n = tape.value(y).numel();
        n
    };
    let w = Tensor::from_vec(&[out_n], rand_vec(&mut rng, out_n, -1.0, 1.0)).unwrap();
    let eval = |data: &[f64]| -> f64 {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(shape, data.to_vec()).unwrap());
        let y = build(&tape, x).expect(name);
        let flat = tape.reshape(y, &[out_n]).unwrap();
        let l = tape.weighted_sum(flat, &w).unwrap();
        tape.scalar_value(l)
    };
    let got = {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(shape, x0.clone()).unwrap());
        let y = build(&tape, x).expect(name);
        let flat = tape.reshape(y, &[out_n]).unwrap();
        let l = tape.weighted_sum(flat, &w).unwrap();
        tape.backward(l).unwrap();
        tape.grad(x).unwrap().into_data()
    };
    let want = finite_diff_gradient(&mut |v| eval(v), &x0, STEP);
    let err = max_rel_error(&got, &want);
    assert!(err < TOL, "{name} seed {seed}: rel err {err}");
}

#[test]
fn spectral_ops() {
    check_unary("fft2", &[4, 4], (-1.0, 1.0), |t, x| t.fft2(x));
    check_unary("ifft2_real", &[2, 4, 4], (-1.0, 1.0), |t, x| t.ifft2_real(x));
    // magnitudes bounded away from zero so the eps guard stays inactive
    check_unary("complex_magnitude", &[2, 3, 3], (0.5, 2.0), |t, x| {
        t.complex_magnitude(x)
    });
    check_unary("unit_modulus", &[2, 3, 3], (0.5, 2.0), |t, x| t.unit_modulus(x));
    check_unary("magnitude_spectrum", &[4, 4], (-1.0, 1.0), |t, x| {
        t.magnitude_spectrum(x)
    });
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ seed);
        let other = Tensor::from_vec(&[2, 4, 4], rand_vec(&mut rng, 32, 0.3, 1.5)).unwrap();
        let oc = other.clone();
        check_unary_seeded("complex_mul_conj_lhs", seed, &[2, 4, 4], (-1.0, 1.0), move |t, x| {
            let o = t.constant(oc.clone());
            t.complex_mul_conj(x, o)
        });
        let oc = other.clone();
        check_unary_seeded("complex_mul_conj_rhs", seed, &[2, 4, 4], (-1.0, 1.0), move |t, x| {
            let o = t.constant(oc.clone());
            t.complex_mul_conj(o, x)
        });
        let bc = Tensor::from_vec(&[8, 8], rand_vec(&mut rng, 64, 0.0, 1.0)).unwrap();
        check_unary_seeded("circular_correlation", seed, &[8, 8], (0.0, 1.0), move |t, x| {
            let b = t.constant(bc.clone());
            t.circular_cross_correlation(x, b, false)
        });
    }
}

#[test]
fn logpolar_resample_gradient() {
    let geom = LogPolarGeom::new(10, 12, 1.0, 7.0);
    check_unary("logpolar", &[16, 16], (0.1, 2.0), move |t, x| {
        t.logpolar_resample(x, &geom)
    });
}

#[test]
fn warp_gradients_image_and_pose() {
    let pose = PoseSim2::new(1.07, 0.35, 1.2, -0.7);
    check_unary("warp_image", &[8, 8], (0.0, 1.0), move |t, x| {
        let p = t.constant(pose.to_tensor());
        t.warp_sim2(x, p)
    });
    // w.r.t. the pose vector
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9A9A ^ seed);
        let img = Tensor::from_vec(&[8, 8], rand_vec(&mut rng, 64, 0.0, 1.0)).unwrap();
        let w = Tensor::from_vec(&[64], rand_vec(&mut rng, 64, -1.0, 1.0)).unwrap();
        let p0 = vec![
            rng.random_range(0.9..1.1),
            rng.random_range(-0.4..0.4),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        ];
        let eval = |p: &[f64], leaf: bool| -> (f64, Option<Vec<f64>>) {
            let tape = Tape::<f64>::new();
            let iv = tape.constant(img.clone());
            let pv = if leaf {
                tape.leaf(Tensor::from_vec(&[4], p.to_vec()).unwrap())
            } else {
                tape.constant(Tensor::from_vec(&[4], p.to_vec()).unwrap())
            };
            let y = tape.warp_sim2(iv, pv).unwrap();
            let flat = tape.reshape(y, &[64]).unwrap();
            let l = tape.weighted_sum(flat, &w).unwrap();
            let lv = tape.scalar_value(l);
            if leaf {
                tape.backward(l).unwrap();
                (lv, Some(tape.grad(pv).unwrap().into_data()))
            } else {
                (lv, None)
            }
        };
        let got = eval(&p0, true).1.unwrap();
        let want = finite_diff_gradient(&mut |p| eval(p, false).0, &p0, STEP);
        // bilinear sampling is piecewise linear in position: FD straddles
        // cell boundaries on a few pixels, so allow a slightly looser bound
        let err = max_rel_error(&got, &want);
        assert!(err < 1e-3, "warp_pose seed {seed}: rel err {err}");
    }
}

#[test]
fn kl_loss_gradient() {
    let target = TargetDistribution::<f64>::gaussian((2, 4), (0.7, 2.2), 0.8);
    check_unary("softmax_kl", &[2, 4], (-1.0, 1.0), move |t, x| {
        let p = t.softmax(x, 2.0)?;
        kl_one_peak_loss(t, p, &target)
    });
}

#[test]
fn full_pipeline_gradient_wrt_images_and_params() {
    // image -> features -> two-stage estimator (soft warp between stages)
    // -> L1 readout losses, at 16x16 with depth-1 width-2 extractors.
    let topo = Topology::new(1, 2, 16);
    let set = ExtractorSet::<f64>::init(&topo, 33).unwrap();
    let cfg = EstimatorConfig {
        lp_rows: 16,
        lp_cols: 16,
        r_max: Some(7.0),
        window: 3,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let base: Vec<f64> = (0..256)
        .map(|i| {
            let (r, c) = (i / 16, i % 16);
            0.5 + 0.3 * ((r as f64) * 0.7).sin() * ((c as f64) * 0.9).cos()
                + rng.random_range(-0.1..0.1)
        })
        .collect();
    let source: Vec<f64> = (0..256)
        .map(|i| {
            let (r, c) = (i / 16, i % 16);
            0.5 + 0.3 * ((r as f64) * 0.7 + 0.3).sin() * ((c as f64) * 0.9 - 0.2).cos()
                + rng.random_range(-0.1..0.1)
        })
        .collect();

    let loss_of = |tmpl: &[f64], src: &[f64], set: &ExtractorSet<f64>, want_grad: bool| {
        let tape = Tape::<f64>::new();
        let tv = if want_grad {
            tape.leaf(Tensor::from_vec(&[16, 16], tmpl.to_vec()).unwrap())
        } else {
            tape.constant(Tensor::from_vec(&[16, 16], tmpl.to_vec()).unwrap())
        };
        let sv = tape.constant(Tensor::from_vec(&[16, 16], src.to_vec()).unwrap());
        let trace = register_differentiable(&tape, tv, sv, Some(set), &cfg).unwrap();
        let l_rot = tape
            .l1_to_const(trace.rot.vars.est_bins, &[0.4, -0.3], &[Some(16.0), Some(16.0)])
            .unwrap();
        let l_tr = tape
            .l1_to_const(trace.trans.vars.est_bins, &[0.2, 0.6], &[Some(16.0), Some(16.0)])
            .unwrap();
        let l = tape.add(l_rot, l_tr).unwrap();
        let lv = tape.scalar_value(l);
        let g = if want_grad {
            tape.backward(l).unwrap();
            Some(tape.grad(tv).unwrap().into_data())
        } else {
            None
        };
        (lv, g)
    };

    // w.r.t. template image values
    let got = loss_of(&base, &source, &set, true).1.unwrap();
    let want = finite_diff_gradient(
        &mut |v| loss_of(v, &source, &set, false).0,
        &base,
        STEP,
    );
    let err = max_rel_error(&got, &want);
    assert!(err < 1e-3, "pipeline d/d(image): rel err {err}");

    // w.r.t. every parameter of the rotation-phase template extractor
    let loss_params = |set: &ExtractorSet<f64>| loss_of(&base, &source, set, false).0;
    let grads = {
        let tape = Tape::<f64>::new();
        let tv = tape.constant(Tensor::from_vec(&[16, 16], base.clone()).unwrap());
        let sv = tape.constant(Tensor::from_vec(&[16, 16], source.clone()).unwrap());
        // bind trainable by hand: rebuild trace with trainable rot-template
        let bt = set.template_rot.bind(&tape, true);
        let ft = set.template_rot.forward(&tape, &bt, tv).unwrap();
        let fs = set.source_rot.apply(&tape, sv).unwrap();
        let rot = phasereg_core::estimator::rotation_scale_stage(&tape, ft, fs, &cfg, false)
            .unwrap();
        let l = tape
            .l1_to_const(rot.vars.est_bins, &[0.4, -0.3], &[Some(16.0), Some(16.0)])
            .unwrap();
        tape.backward(l).unwrap();
        bt.vars()
            .iter()
            .zip(set.template_rot.params())
            .map(|(&v, (_, t))| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect::<Vec<_>>()
    };
    // finite differences over the same parameters, stage-1 loss only
    let stage1_loss = |set: &ExtractorSet<f64>| {
        let tape = Tape::<f64>::new();
        let tv = tape.constant(Tensor::from_vec(&[16, 16], base.clone()).unwrap());
        let sv = tape.constant(Tensor::from_vec(&[16, 16], source.clone()).unwrap());
        let ft = set.template_rot.apply(&tape, tv).unwrap();
        let fs = set.source_rot.apply(&tape, sv).unwrap();
        let rot = phasereg_core::estimator::rotation_scale_stage(&tape, ft, fs, &cfg, false)
            .unwrap();
        let l = tape
            .l1_to_const(rot.vars.est_bins, &[0.4, -0.3], &[Some(16.0), Some(16.0)])
            .unwrap();
        tape.scalar_value(l)
    };
    let mut worst = 0.0_f64;
    for (pi, (_, p0)) in set.template_rot.params().iter().enumerate() {
        let mut fd = vec![0.0; p0.numel()];
        for j in 0..p0.numel() {
            let mut probe = set.clone();
            probe.template_rot.params_mut()[pi].1.data_mut()[j] += STEP;
            let fp = stage1_loss(&probe);
            probe.template_rot.params_mut()[pi].1.data_mut()[j] -= 2.0 * STEP;
            let fm = stage1_loss(&probe);
            fd[j] = (fp - fm) / (2.0 * STEP);
        }
        worst = worst.max(max_rel_error(grads[pi].data(), &fd));
    }
    assert!(worst < 1e-3, "pipeline d/d(params): rel err {worst}");
    let _ = loss_params(&set);
}
