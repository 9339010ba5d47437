//! Two-phase end-to-end training. Phase 1 fits the rotation/scale
//! extractors through the log-polar correlation; phase 2 fits the
//! translation extractors on sources de-warped by phase-1 estimates (or by
//! ground truth early on), with phase-1 weights frozen. Supervision mixes a
//! one-peak KL target on the probability grid with an L1 loss on the
//! expectation readout.

pub mod adam;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::AppConfig;
use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::estimator::{
    rotation_scale_stage, rotscale_to_bins, translation_stage, warp_tensor, EstimatorConfig,
    PoseSim2,
};
use crate::features::{ExtractorSet, FeatureExtractor};
use adam::Adam;

use std::f64::consts::PI;

/// Gaussian-smoothed one-peak target on a circular grid.
#[derive(Clone, Debug)]
pub struct TargetDistribution<T: Scalar> {
    pub grid: Tensor<T>,
    pub center: (f64, f64),
    pub sigma: f64,
}

impl<T: Scalar> TargetDistribution<T> {
    /// Center is (row, col) in bin units, possibly fractional, wrapped
    /// circularly on both axes. Sigma in bins; sigma -> 0 degenerates to a
    /// delta at the nearest bin.
    pub fn gaussian(shape: (usize, usize), center: (f64, f64), sigma: f64) -> Self {
        let (h, w) = shape;
        let mut grid = Tensor::zeros(&[h, w]);
        let circ = |d: f64, n: f64| {
            let m = d.rem_euclid(n);
            m.min(n - m)
        };
        if sigma < 1e-6 {
            let r = (center.0.round().rem_euclid(h as f64)) as usize % h;
            let c = (center.1.round().rem_euclid(w as f64)) as usize % w;
            grid.set2(r, c, T::one());
        } else {
            let inv = 1.0 / (2.0 * sigma * sigma);
            for r in 0..h {
                for c in 0..w {
                    let dr = circ(r as f64 - center.0, h as f64);
                    let dc = circ(c as f64 - center.1, w as f64);
                    grid.set2(r, c, T::from_f64((-(dr * dr + dc * dc) * inv).exp()));
                }
            }
            let z = grid.sum_value();
            grid.scale_assign(T::one() / z);
        }
        TargetDistribution {
            grid,
            center,
            sigma,
        }
    }
}

/// KL(target || p) = sum target * (ln target - ln p), with a 1e-12 floor
/// inside the logs. Differentiable w.r.t. p.
pub fn kl_one_peak_loss<T: Scalar>(
    tape: &Tape<T>,
    prob: Var,
    target: &TargetDistribution<T>,
) -> Result<Var> {
    let floor = 1e-12;
    let tshape = target.grid.shape().to_vec();
    if tape.shape_of(prob) != tshape {
        return Err(Error::ShapeMismatch {
            op: "kl_one_peak_loss",
            lhs: tshape,
            rhs: tape.shape_of(prob),
        });
    }
    let tgrid = target.grid.clone();
    let loss = {
        let pv = tape.value(prob);
        let mut acc = 0.0_f64;
        for (&t, &p) in tgrid.data().iter().zip(pv.data()) {
            let t = Scalar::to_f64(t);
            if t > 0.0 {
                acc += t * (t.max(floor).ln() - Scalar::to_f64(p).max(floor).ln());
            }
        }
        T::from_f64(acc)
    };
    Ok(tape.push_op(Tensor::scalar(loss), &[prob], move |tape, g, sink| {
        let pv = tape.value(prob);
        let g0 = g.data()[0];
        let mut gp = Tensor::zeros(pv.shape());
        for i in 0..gp.numel() {
            let t = tgrid.data()[i].to_f64();
            let p = pv.data()[i].to_f64().max(floor);
            gp.data_mut()[i] = g0 * T::from_f64(-t / p);
        }
        drop(pv);
        sink.add(prob, gp);
    }))
}

/// L1 distance between the expectation readout and the ground-truth bins,
/// circular on wrapped axes.
pub fn expectation_loss<T: Scalar>(
    tape: &Tape<T>,
    est_bins: Var,
    gt_bins: (f64, f64),
    periods: (Option<f64>, Option<f64>),
) -> Result<Var> {
    tape.l1_to_const(
        est_bins,
        &[T::from_f64(gt_bins.0), T::from_f64(gt_bins.1)],
        &[
            periods.0.map(T::from_f64),
            periods.1.map(T::from_f64),
        ],
    )
}

/// Full-map expectation loss: L1 norm of sum_t (t - t*) p(t) with bin
/// offsets unwrapped circularly around the ground-truth bin, so every bin
/// of the probability grid receives gradient and the circular axes carry
/// no wrap bias. Zero exactly when the distribution centers on t*.
pub fn expectation_loss_full<T: Scalar>(
    tape: &Tape<T>,
    prob: Var,
    gt_bins: (f64, f64),
) -> Result<Var> {
    let shape = tape.shape_of(prob);
    let (h, w) = (shape[0], shape[1]);
    let mut coords_r = Tensor::zeros(&[h, w]);
    let mut coords_c = Tensor::zeros(&[h, w]);
    let circ = |d: f64, n: f64| {
        let m = (d + n / 2.0).rem_euclid(n) - n / 2.0;
        m
    };
    for r in 0..h {
        for c in 0..w {
            coords_r.set2(r, c, T::from_f64(circ(r as f64 - gt_bins.0, h as f64)));
            coords_c.set2(r, c, T::from_f64(circ(c as f64 - gt_bins.1, w as f64)));
        }
    }
    let er = tape.weighted_sum(prob, &coords_r)?;
    let ec = tape.weighted_sum(prob, &coords_c)?;
    let e = tape.stack_scalars(&[er, ec])?;
    tape.l1_to_const(e, &[T::zero(), T::zero()], &[None, None])
}

/// One template/source/pose triple, the unit of training.
#[derive(Clone, Debug)]
pub struct TrainPair<T: Scalar> {
    pub template: Tensor<T>,
    pub source: Tensor<T>,
    pub pose: PoseSim2,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Phase {
    RotationScale,
    Translation,
}

/// One log line: step, phase, loss components, and (sparsely) validation
/// accuracy.
#[derive(Clone, Debug)]
pub struct LogRecord {
    pub step: usize,
    pub phase: Phase,
    pub loss_kl: f64,
    pub loss_exp: f64,
    pub loss_total: f64,
    pub val_acc: Option<f64>,
}

impl LogRecord {
    pub fn csv_header() -> &'static str {
        "step,phase,loss_kl,loss_exp,loss_total,val_acc"
    }

    pub fn to_csv(&self) -> String {
        let phase = match self.phase {
            Phase::RotationScale => "rotscale",
            Phase::Translation => "translation",
        };
        let va = self
            .val_acc
            .map(|v| format!("{v:.2}"))
            .unwrap_or_default();
        format!(
            "{},{},{:.6},{:.6},{:.6},{}",
            self.step, phase, self.loss_kl, self.loss_exp, self.loss_total, va
        )
    }
}

pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub log: Vec<LogRecord>,
}

struct SampleGrads<T: Scalar> {
    template_grads: Vec<Tensor<T>>,
    source_grads: Vec<Tensor<T>>,
    kl: f64,
    exp: f64,
}

fn zeros_like<T: Scalar>(fx: &FeatureExtractor<T>) -> Vec<Tensor<T>> {
    fx.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect()
}

fn accumulate<T: Scalar>(acc: &mut [Tensor<T>], add: &[Tensor<T>]) {
    for (a, b) in acc.iter_mut().zip(add) {
        a.add_assign(b);
    }
}

fn collect_grads<T: Scalar>(tape: &Tape<T>, bound: &[Var], like: &FeatureExtractor<T>) -> Vec<Tensor<T>> {
    bound
        .iter()
        .zip(like.params())
        .map(|(&v, (_, t))| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// Phase-1 loss for one sample; returns gradients for (template-rot,
/// source-rot) extractors.
fn phase1_sample<T: Scalar>(
    pair: &TrainPair<T>,
    set: &ExtractorSet<T>,
    ecfg: &EstimatorConfig,
    cfg: &AppConfig,
) -> Result<SampleGrads<T>> {
    let tape = Tape::new();
    let tv = tape.constant(pair.template.clone());
    let sv = tape.constant(pair.source.clone());
    let bt = set.template_rot.bind(&tape, true);
    let bs = set.source_rot.bind(&tape, true);
    let ft = set.template_rot.forward(&tape, &bt, tv)?;
    let fs = set.source_rot.forward(&tape, &bs, sv)?;
    let rs = rotation_scale_stage(&tape, ft, fs, ecfg, false)?;

    let (h, w) = (rs.geom.rows, rs.geom.cols);
    let (row_gt, col_gt) = rotscale_to_bins(&rs.geom, pair.pose.theta, pair.pose.scale);
    let target = TargetDistribution::gaussian((h, w), (row_gt, col_gt), cfg.sigma);
    let kl = kl_one_peak_loss(&tape, rs.vars.prob, &target)?;
    let l1 = expectation_loss_full(&tape, rs.vars.prob, (row_gt, col_gt))?;
    let total = tape.add(
        tape.scale(kl, T::from_f64(cfg.w_kl_rot)),
        tape.scale(l1, T::from_f64(cfg.w_exp_rot)),
    )?;
    let (klv, l1v) = (tape.scalar_value(kl).to_f64(), tape.scalar_value(l1).to_f64());
    if !klv.is_finite() || !l1v.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            detail: format!("non-finite loss kl={klv} exp={l1v}"),
        });
    }
    tape.backward(total)?;
    Ok(SampleGrads {
        template_grads: collect_grads(&tape, &bound_vars(&bt), &set.template_rot),
        source_grads: collect_grads(&tape, &bound_vars(&bs), &set.source_rot),
        kl: klv,
        exp: l1v,
    })
}

// BoundExtractor keeps its vars private to features; mirror the binding
// order here.
fn bound_vars(b: &crate::features::BoundExtractor) -> Vec<Var> {
    b.vars().to_vec()
}

/// Phase-2 loss for one sample. The source is de-warped by the phase-1
/// estimate (or ground truth during the curriculum window) before the
/// translation stage; phase-1 weights stay frozen.
fn phase2_sample<T: Scalar>(
    pair: &TrainPair<T>,
    set: &ExtractorSet<T>,
    ecfg: &EstimatorConfig,
    cfg: &AppConfig,
    use_gt_warp: bool,
) -> Result<SampleGrads<T>> {
    let tape = Tape::new();
    let tv = tape.constant(pair.template.clone());
    let sv = tape.constant(pair.source.clone());

    let (theta_w, scale_w) = if use_gt_warp {
        (pair.pose.theta, pair.pose.scale)
    } else {
        let ft = set.template_rot.apply(&tape, tv)?;
        let fs = set.source_rot.apply(&tape, sv)?;
        let rs = rotation_scale_stage(&tape, ft, fs, ecfg, false)?;
        // of the two pi-hypotheses, supervise the one nearer ground truth
        let d0 = (rs.hard_theta_raw - pair.pose.theta).rem_euclid(2.0 * PI);
        let d0 = d0.min(2.0 * PI - d0);
        let d1 = (rs.hard_theta_raw + PI - pair.pose.theta).rem_euclid(2.0 * PI);
        let d1 = d1.min(2.0 * PI - d1);
        let theta = if d0 <= d1 {
            rs.hard_theta_raw
        } else {
            rs.hard_theta_raw + PI
        };
        (theta, rs.hard_scale)
    };
    let unwarp = PoseSim2::new(1.0 / scale_w, -theta_w, 0.0, 0.0);
    let pv = tape.constant(unwarp.to_tensor());
    let aligned = tape.warp_sim2(sv, pv)?;

    let bt = set.template_trans.bind(&tape, true);
    let bs = set.source_trans.bind(&tape, true);
    let ft = set.template_trans.forward(&tape, &bt, tv)?;
    let fs = set.source_trans.forward(&tape, &bs, aligned)?;
    let ts = translation_stage(&tape, ft, fs, ecfg, ecfg.phase_norm)?;

    // residual translation after the de-warp actually applied
    let (c, s) = (theta_w.cos(), theta_w.sin());
    let t2x = (c * pair.pose.tx + s * pair.pose.ty) / scale_w;
    let t2y = (-s * pair.pose.tx + c * pair.pose.ty) / scale_w;
    let (h, w) = {
        let shape = tape.shape_of(ts.vars.prob);
        (shape[0], shape[1])
    };
    let target = TargetDistribution::gaussian((h, w), (t2y, t2x), cfg.sigma);
    let kl = kl_one_peak_loss(&tape, ts.vars.prob, &target)?;
    let l1 = expectation_loss_full(&tape, ts.vars.prob, (t2y, t2x))?;
    let total = tape.add(
        tape.scale(kl, T::from_f64(cfg.w_kl_trans)),
        tape.scale(l1, T::from_f64(cfg.w_exp_trans)),
    )?;
    let (klv, l1v) = (tape.scalar_value(kl).to_f64(), tape.scalar_value(l1).to_f64());
    if !klv.is_finite() || !l1v.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            detail: format!("non-finite loss kl={klv} exp={l1v}"),
        });
    }
    tape.backward(total)?;
    Ok(SampleGrads {
        template_grads: collect_grads(&tape, &bound_vars(&bt), &set.template_trans),
        source_grads: collect_grads(&tape, &bound_vars(&bs), &set.source_trans),
        kl: klv,
        exp: l1v,
    })
}

fn rot_err_deg(est: f64, gt: f64) -> f64 {
    let d = (est - gt).abs().to_degrees() % 180.0;
    d.min(180.0 - d)
}

/// Validation accuracy of the current weights: phase 1 reports rotation
/// accuracy at 1 degree, phase 2 translation accuracy at 5 px (using
/// ground-truth de-warp, isolating the translation nets).
fn validate<T: Scalar>(
    phase: Phase,
    set: &ExtractorSet<T>,
    val: &[TrainPair<T>],
    ecfg: &EstimatorConfig,
) -> f64 {
    if val.is_empty() {
        return f64::NAN;
    }
    let hits: usize = val
        .par_iter()
        .map(|pair| -> usize {
            let run = || -> Result<bool> {
                let tape = Tape::new();
                let tv = tape.constant(pair.template.clone());
                let sv = tape.constant(pair.source.clone());
                match phase {
                    Phase::RotationScale => {
                        let ft = set.template_rot.apply(&tape, tv)?;
                        let fs = set.source_rot.apply(&tape, sv)?;
                        let rs = rotation_scale_stage(&tape, ft, fs, ecfg, false)?;
                        Ok(rot_err_deg(rs.theta, pair.pose.theta) <= 1.0)
                    }
                    Phase::Translation => {
                        let unwarp =
                            PoseSim2::new(1.0 / pair.pose.scale, -pair.pose.theta, 0.0, 0.0);
                        let pv = tape.constant(unwarp.to_tensor());
                        let aligned = tape.warp_sim2(sv, pv)?;
                        let ft = set.template_trans.apply(&tape, tv)?;
                        let fs = set.source_trans.apply(&tape, aligned)?;
                        let ts = translation_stage(&tape, ft, fs, ecfg, ecfg.phase_norm)?;
                        let (c, s) = (pair.pose.theta.cos(), pair.pose.theta.sin());
                        let t2x = (c * pair.pose.tx + s * pair.pose.ty) / pair.pose.scale;
                        let t2y = (-s * pair.pose.tx + c * pair.pose.ty) / pair.pose.scale;
                        Ok((ts.tx - t2x).abs() <= 5.0 && (ts.ty - t2y).abs() <= 5.0)
                    }
                }
            };
            run().map(usize::from).unwrap_or(0)
        })
        .sum();
    100.0 * hits as f64 / val.len() as f64
}

fn train_loop<T: Scalar>(
    phase: Phase,
    cfg: &AppConfig,
    pairs: &[TrainPair<T>],
    val: &[TrainPair<T>],
    set: &mut ExtractorSet<T>,
    steps: usize,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument {
            op: "train",
            msg: "empty training set".into(),
        });
    }
    let ecfg = EstimatorConfig::from(cfg);
    let salt = match phase {
        Phase::RotationScale => 0x726f74,
        Phase::Translation => 0x747261,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let mut opt_t = Adam::<T>::new(cfg.lr);
    let mut opt_s = Adam::<T>::new(cfg.lr);
    let mut log = Vec::new();
    let eval_every = (steps / 20).max(10);
    let mut final_loss = f64::NAN;

    for step in 0..steps {
        let batch: Vec<usize> = (0..cfg.batch)
            .map(|_| rng.random_range(0..pairs.len()))
            .collect();
        let use_gt_warp = (step as f64) < cfg.gt_warp_fraction * steps as f64;
        let results: Vec<Result<SampleGrads<T>>> = batch
            .par_iter()
            .map(|&i| match phase {
                Phase::RotationScale => phase1_sample(&pairs[i], set, &ecfg, cfg),
                Phase::Translation => phase2_sample(&pairs[i], set, &ecfg, cfg, use_gt_warp),
            })
            .collect();

        let (tmpl_role, src_role) = match phase {
            Phase::RotationScale => (
                crate::features::Role::TemplateRot,
                crate::features::Role::SourceRot,
            ),
            Phase::Translation => (
                crate::features::Role::TemplateTrans,
                crate::features::Role::SourceTrans,
            ),
        };
        let mut gt = zeros_like(set.get(tmpl_role));
        let mut gs = zeros_like(set.get(src_role));
        let (mut kl_sum, mut exp_sum) = (0.0, 0.0);
        for r in results {
            let r = r.map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { step, detail },
                other => other,
            })?;
            accumulate(&mut gt, &r.template_grads);
            accumulate(&mut gs, &r.source_grads);
            kl_sum += r.kl;
            exp_sum += r.exp;
        }
        let inv = T::from_f64(1.0 / cfg.batch as f64);
        for g in gt.iter_mut().chain(gs.iter_mut()) {
            g.scale_assign(inv);
        }
        let (klm, expm) = (kl_sum / cfg.batch as f64, exp_sum / cfg.batch as f64);
        let total = match phase {
            Phase::RotationScale => cfg.w_kl_rot * klm + cfg.w_exp_rot * expm,
            Phase::Translation => cfg.w_kl_trans * klm + cfg.w_exp_trans * expm,
        };
        if !total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss kl={klm} exp={expm}"),
            });
        }
        final_loss = total;
        opt_t.step(set.get_mut(tmpl_role).params_mut(), &gt)?;
        opt_s.step(set.get_mut(src_role).params_mut(), &gs)?;

        let val_acc = if (step + 1) % eval_every == 0 || step + 1 == steps {
            Some(validate(phase, set, val, &ecfg))
        } else {
            None
        };
        let rec = LogRecord {
            step,
            phase,
            loss_kl: klm,
            loss_exp: expm,
            loss_total: total,
            val_acc,
        };
        on_log(&rec);
        log.push(rec);
    }
    Ok(TrainReport {
        steps,
        final_loss,
        log,
    })
}

/// Train the rotation/scale extractor pair.
pub fn train_phase1<T: Scalar>(
    cfg: &AppConfig,
    pairs: &[TrainPair<T>],
    val: &[TrainPair<T>],
    set: &mut ExtractorSet<T>,
    on_log: impl FnMut(&LogRecord),
) -> Result<TrainReport> {
    train_loop(
        Phase::RotationScale,
        cfg,
        pairs,
        val,
        set,
        cfg.steps_phase1,
        on_log,
    )
}

/// Train the translation extractor pair with phase-1 weights frozen.
pub fn train_phase2<T: Scalar>(
    cfg: &AppConfig,
    pairs: &[TrainPair<T>],
    val: &[TrainPair<T>],
    set: &mut ExtractorSet<T>,
    on_log: impl FnMut(&LogRecord),
) -> Result<TrainReport> {
    train_loop(
        Phase::Translation,
        cfg,
        pairs,
        val,
        set,
        cfg.steps_phase2,
        on_log,
    )
}

/// Build the de-warped source a phase-2 consumer would see (diagnostics).
pub fn dewarp_by<T: Scalar>(source: &Tensor<T>, theta: f64, scale: f64) -> Result<Tensor<T>> {
    warp_tensor(source, &PoseSim2::new(1.0 / scale, -theta, 0.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_distribution_sums_to_one_and_peaks_at_center() {
        let t = TargetDistribution::<f64>::gaussian((16, 16), (3.4, 12.7), 1.5);
        assert!((t.grid.sum_value() - 1.0).abs() < 1e-9);
        let idx = t.grid.argmax();
        assert_eq!((idx / 16, idx % 16), (3, 13));
        assert!(t.grid.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn kl_of_matching_distributions_is_zero() {
        let tape = Tape::<f64>::new();
        let t = TargetDistribution::gaussian((8, 8), (2.0, 5.0), 1.0);
        let p = tape.constant(t.grid.clone());
        let kl = kl_one_peak_loss(&tape, p, &t).unwrap();
        assert!(tape.scalar_value(kl).abs() < 1e-9);
    }

    #[test]
    fn kl_of_delta_against_uniform_is_log_n() {
        let tape = Tape::<f64>::new();
        let t = TargetDistribution::gaussian((4, 8), (1.0, 3.0), 0.0);
        let p = tape.constant(Tensor::filled(&[4, 8], 1.0 / 32.0));
        let kl = kl_one_peak_loss(&tape, p, &t).unwrap();
        assert!((tape.scalar_value(kl) - 32.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn expectation_loss_examples() {
        let tape = Tape::<f64>::new();
        let est = tape.constant(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let l = expectation_loss(&tape, est, (0.0, 0.0), (None, None)).unwrap();
        assert_eq!(tape.scalar_value(l), 7.0);
        // circular axis: 179 vs 1 with period 180 -> 2
        let est = tape.constant(Tensor::from_vec(&[2], vec![179.0, 0.0]).unwrap());
        let l = expectation_loss(&tape, est, (1.0, 0.0), (Some(180.0), None)).unwrap();
        assert!((tape.scalar_value(l) - 2.0).abs() < 1e-12);
    }
}
