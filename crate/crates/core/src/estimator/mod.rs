//! Decoupled 4-DoF pose estimation.
//!
//! Stage 1 turns rotation and scale into translations of the log-polar
//! magnitude spectrum and reads them off a circular correlation surface;
//! stage 2 undoes the estimated rotation/scale and reads the remaining
//! translation from plain circular correlation. Soft (expectation) readouts
//! keep the whole pipeline differentiable; hard (argmax) readouts are the
//! grid-snapped diagnostics.

pub mod readout;

use crate::config::AppConfig;
use crate::diff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::ExtractorSet;
use crate::spectral::{highpass_gain, tukey_window, LogPolarGeom};
use readout::{correlation_readout, Readout};

use std::f64::consts::PI;

/// Similarity transform: scale, rotation, translation. Composition applies
/// about the image center, matching `warp_sim2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSim2 {
    pub scale: f64,
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
}

impl PoseSim2 {
    pub fn identity() -> Self {
        PoseSim2 {
            scale: 1.0,
            theta: 0.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn new(scale: f64, theta: f64, tx: f64, ty: f64) -> Self {
        PoseSim2 {
            scale,
            theta,
            tx,
            ty,
        }
    }

    /// First apply `other`, then `self`.
    pub fn compose(&self, other: &PoseSim2) -> PoseSim2 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        PoseSim2 {
            scale: self.scale * other.scale,
            theta: self.theta + other.theta,
            tx: self.scale * (c * other.tx - s * other.ty) + self.tx,
            ty: self.scale * (s * other.tx + c * other.ty) + self.ty,
        }
    }

    pub fn inverse(&self) -> PoseSim2 {
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let inv_s = 1.0 / self.scale;
        PoseSim2 {
            scale: inv_s,
            theta: -self.theta,
            tx: -inv_s * (c * self.tx + s * self.ty),
            ty: -inv_s * (-s * self.tx + c * self.ty),
        }
    }

    /// Rotation folded into [0, pi): the range resolvable from a magnitude
    /// spectrum.
    pub fn theta_mod_pi(&self) -> f64 {
        self.theta.rem_euclid(PI)
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[4],
            vec![
                T::from_f64(self.scale),
                T::from_f64(self.theta),
                T::from_f64(self.tx),
                T::from_f64(self.ty),
            ],
        )
        .expect("pose tensor")
    }

    pub fn is_finite(&self) -> bool {
        self.scale.is_finite()
            && self.scale > 0.0
            && self.theta.is_finite()
            && self.tx.is_finite()
            && self.ty.is_finite()
    }
}

/// Apply a pose to a plain tensor (builds a throwaway tape).
pub fn warp_tensor<T: Scalar>(image: &Tensor<T>, pose: &PoseSim2) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let i = tape.constant(image.clone());
    let p = tape.constant(pose.to_tensor());
    let w = tape.warp_sim2(i, p)?;
    Ok(tape.value_clone(w))
}

/// Axis semantics of a correlation surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrAxes {
    TranslationXY,
    LogScaleAngle,
}

/// A correlation surface and its probability grid (plain-data snapshot).
#[derive(Clone, Debug)]
pub struct CorrelationMap<T: Scalar> {
    pub raw: Tensor<T>,
    pub prob: Tensor<T>,
    pub axes: CorrAxes,
    pub beta: f64,
}

/// Estimator knobs; see `AppConfig` for the file-facing form.
#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    pub beta_trans: f64,
    pub beta_rotscale: f64,
    pub lp_rows: usize,
    pub lp_cols: usize,
    pub r_min: f64,
    /// None: min(H, W) / 2.
    pub r_max: Option<f64>,
    pub window: usize,
    pub hann: bool,
    /// Tapered fraction of the Tukey window (1 = Hann, 0 = none).
    pub taper: f64,
    pub highpass: bool,
    /// Phase-normalize the correlation in the learned path as well (the
    /// baseline always does). Plain correlation of feature spectra is a
    /// near-flat hump that trains poorly; whitening keeps the surface
    /// peaked for both the softmax and the readout.
    pub phase_norm: bool,
    pub full_circle: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::from(&AppConfig::desk())
    }
}

impl From<&AppConfig> for EstimatorConfig {
    fn from(c: &AppConfig) -> Self {
        EstimatorConfig {
            beta_trans: c.beta_trans,
            beta_rotscale: c.beta_rotscale,
            lp_rows: c.lp_rows,
            lp_cols: c.lp_cols,
            r_min: 1.0,
            r_max: None,
            window: c.window,
            hann: c.hann,
            taper: c.taper,
            highpass: c.highpass,
            phase_norm: c.phase_norm,
            full_circle: c.full_circle,
        }
    }
}

impl EstimatorConfig {
    pub fn logpolar_geom(&self, h: usize, w: usize) -> LogPolarGeom {
        let r_max = self.r_max.unwrap_or((h.min(w) / 2) as f64);
        LogPolarGeom::new(self.lp_rows, self.lp_cols, self.r_min, r_max)
    }
}

/// Bin mapping between log-polar correlation shifts and (theta, scale).
/// A source rotated by +theta shifts columns by +theta/angle_step; a source
/// scaled by s shifts rows by -ln(s)/log_base.
pub fn bins_to_rotscale(geom: &LogPolarGeom, row_shift: f64, col_shift: f64) -> (f64, f64) {
    let theta = col_shift * geom.angle_step();
    let scale = (-row_shift * geom.log_base()).exp();
    (theta, scale)
}

pub fn rotscale_to_bins(geom: &LogPolarGeom, theta: f64, scale: f64) -> (f64, f64) {
    (-scale.ln() / geom.log_base(), theta / geom.angle_step())
}

/// Tape handles a training loop needs from a stage.
pub struct StageVars {
    pub corr: Var,
    pub prob: Var,
    /// [row, col] expectation in signed bin units.
    pub est_bins: Var,
    /// Zero-mean / unit-max map the probabilities came from.
    pub normalized: Var,
}

pub struct RotScaleOutcome<T: Scalar> {
    /// Soft rotation estimate folded into [0, pi).
    pub theta: f64,
    /// Soft rotation estimate before folding (signed, |theta| <= pi/2 ish);
    /// the de-rotation hypothesis is built from this.
    pub theta_raw: f64,
    pub scale: f64,
    pub hard_theta_raw: f64,
    pub hard_scale: f64,
    pub sharpness: f64,
    pub map: CorrelationMap<T>,
    pub vars: StageVars,
    pub geom: LogPolarGeom,
}

pub struct TranslationOutcome<T: Scalar> {
    pub tx: f64,
    pub ty: f64,
    pub hard_tx: f64,
    pub hard_ty: f64,
    /// Peak value of the raw correlation; the hypothesis-selection score.
    pub peak: f64,
    pub sharpness: f64,
    pub map: CorrelationMap<T>,
    pub vars: StageVars,
}

fn require_signal<T: Scalar>(tape: &Tape<T>, v: Var, stage: &'static str) -> Result<()> {
    if tape.value(v).is_constant() {
        return Err(Error::NoSignal { stage });
    }
    Ok(())
}

fn snapshot_map<T: Scalar>(
    tape: &Tape<T>,
    corr: Var,
    r: &Readout,
    axes: CorrAxes,
    beta: f64,
) -> CorrelationMap<T> {
    CorrelationMap {
        raw: tape.value_clone(corr),
        prob: tape.value_clone(r.prob),
        axes,
        beta,
    }
}

/// Stage 1: rotation/scale from the log-polar magnitude spectra. In
/// baseline (non-learned) mode the spectra are high-pass filtered and the
/// log-polar correlation is phase-normalized, which is the conventional
/// Fourier-Mellin pipeline; learned features use the plain correlation
/// they were trained through.
pub fn rotation_scale_stage<T: Scalar>(
    tape: &Tape<T>,
    f_template: Var,
    f_source: Var,
    cfg: &EstimatorConfig,
    baseline: bool,
) -> Result<RotScaleOutcome<T>> {
    require_signal(tape, f_template, "rotation-scale")?;
    require_signal(tape, f_source, "rotation-scale")?;
    let (h, w) = tape.value(f_template).dims2()?;
    if tape.shape_of(f_template) != tape.shape_of(f_source) {
        return Err(Error::ShapeMismatch {
            op: "rotation_scale_stage",
            lhs: tape.shape_of(f_template),
            rhs: tape.shape_of(f_source),
        });
    }
    let (mut a, mut b) = (f_template, f_source);
    if cfg.hann {
        // remove the mean first: the window times a nonzero mean is a
        // shared term in both spectra and drags the correlation toward
        // zero shift
        let ma = tape.mean(a);
        a = tape.sub_bcast(a, ma)?;
        let mb = tape.mean(b);
        b = tape.sub_bcast(b, mb)?;
        let win = tukey_window::<T>(h, w, cfg.taper);
        a = tape.mul_const(a, &win)?;
        b = tape.mul_const(b, &win)?;
    }
    let mut sa = tape.magnitude_spectrum(a)?;
    let mut sb = tape.magnitude_spectrum(b)?;
    if baseline && cfg.highpass {
        let gain = highpass_gain::<T>(h, w);
        sa = tape.mul_const(sa, &gain)?;
        sb = tape.mul_const(sb, &gain)?;
    }
    let geom = cfg.logpolar_geom(h, w);
    let lp_a = tape.logpolar_resample(sa, &geom)?;
    let lp_b = tape.logpolar_resample(sb, &geom)?;
    let corr = tape.circular_cross_correlation(lp_a, lp_b, baseline || cfg.phase_norm)?;
    let r = correlation_readout(tape, corr, cfg.beta_rotscale, cfg.window)?;

    let est = tape.value_clone(r.est_bins);
    let (theta_raw, scale) = bins_to_rotscale(&geom, est.data()[0].to_f64(), est.data()[1].to_f64());
    let (hard_theta_raw, hard_scale) = bins_to_rotscale(&geom, r.hard_bins.0, r.hard_bins.1);
    let map = snapshot_map(tape, corr, &r, CorrAxes::LogScaleAngle, cfg.beta_rotscale);
    Ok(RotScaleOutcome {
        theta: theta_raw.rem_euclid(PI),
        theta_raw,
        scale,
        hard_theta_raw,
        hard_scale,
        sharpness: r.sharpness,
        map,
        vars: StageVars {
            corr,
            prob: r.prob,
            est_bins: r.est_bins,
            normalized: r.normalized,
        },
        geom,
    })
}

/// Stage 2: translation between the template and the already-aligned source.
pub fn translation_stage<T: Scalar>(
    tape: &Tape<T>,
    f_template: Var,
    f_source_aligned: Var,
    cfg: &EstimatorConfig,
    phase_normalized: bool,
) -> Result<TranslationOutcome<T>> {
    require_signal(tape, f_template, "translation")?;
    require_signal(tape, f_source_aligned, "translation")?;
    let corr =
        tape.circular_cross_correlation(f_template, f_source_aligned, phase_normalized)?;
    let r = correlation_readout(tape, corr, cfg.beta_trans, cfg.window)?;
    let est = tape.value_clone(r.est_bins);
    let peak = tape.value(corr).max_value().to_f64();
    let map = snapshot_map(tape, corr, &r, CorrAxes::TranslationXY, cfg.beta_trans);
    Ok(TranslationOutcome {
        tx: est.data()[1].to_f64(),
        ty: est.data()[0].to_f64(),
        hard_tx: r.hard_bins.1,
        hard_ty: r.hard_bins.0,
        peak,
        sharpness: r.sharpness,
        map,
        vars: StageVars {
            corr,
            prob: r.prob,
            est_bins: r.est_bins,
            normalized: r.normalized,
        },
    })
}

/// Full estimate of both stages.
pub struct PoseEstimate<T: Scalar> {
    /// Sub-bin (expectation) readout; the reported pose.
    pub pose: PoseSim2,
    /// Grid-snapped (argmax) readout.
    pub hard: PoseSim2,
    pub rotscale_map: CorrelationMap<T>,
    pub translation_map: CorrelationMap<T>,
    pub rot_sharpness: f64,
    pub trans_sharpness: f64,
}

fn compose_final(scale: f64, theta_used: f64, t2: (f64, f64)) -> (f64, f64) {
    let (c, s) = (theta_used.cos(), theta_used.sin());
    (
        scale * (c * t2.0 - s * t2.1),
        scale * (s * t2.0 + c * t2.1),
    )
}

/// Register `source` against `template`. Without extractors this is the
/// conventional phase-correlation baseline (high-pass filtered spectra,
/// phase-normalized translation correlation); with extractors each stage
/// correlates learned feature maps instead.
pub fn register<T: Scalar>(
    template: &Tensor<T>,
    source: &Tensor<T>,
    extractors: Option<&ExtractorSet<T>>,
    cfg: &EstimatorConfig,
) -> Result<PoseEstimate<T>> {
    let tape = Tape::new();
    let tv = tape.constant(template.clone());
    let sv = tape.constant(source.clone());
    let baseline = extractors.is_none();

    let (frt, frs) = match extractors {
        Some(e) => (
            e.template_rot.apply(&tape, tv)?,
            e.source_rot.apply(&tape, sv)?,
        ),
        None => (tv, sv),
    };
    let rs = rotation_scale_stage(&tape, frt, frs, cfg, baseline).map_err(|e| Error::Stage {
        stage: "rotation-scale",
        source: Box::new(e),
    })?;

    let ftt = match extractors {
        Some(e) => e.template_trans.apply(&tape, tv)?,
        None => tv,
    };

    // Candidate rotation/scale hypotheses: the primary stage-1 estimate,
    // plus strong rival peaks of its correlation surface, each tried with
    // and without the pi offset the magnitude spectrum cannot resolve. The
    // translation stage arbitrates: a wrong hypothesis collapses its
    // correlation peak.
    struct Candidate {
        theta_raw: f64,
        scale: f64,
        hard_theta_raw: f64,
        hard_scale: f64,
    }
    let mut candidates = vec![Candidate {
        theta_raw: rs.theta_raw,
        scale: rs.scale,
        hard_theta_raw: rs.hard_theta_raw,
        hard_scale: rs.hard_scale,
    }];
    {
        let raw = &rs.map.raw;
        let (mw, primary_val) = (raw.shape()[1], raw.max_value().to_f64());
        let primary_center = (raw.argmax() / mw, raw.argmax() % mw);
        for ((r, c), v) in
            readout::rival_peaks(raw, &[primary_center], cfg.window.max(2), 2)
        {
            if v < 0.5 * primary_val {
                break;
            }
            let est = readout::windowed_expectation(
                &tape,
                rs.vars.normalized,
                (r, c),
                cfg.beta_rotscale,
                cfg.window,
            )?;
            let e = tape.value_clone(est);
            let (th, sc) =
                bins_to_rotscale(&rs.geom, e.data()[0].to_f64(), e.data()[1].to_f64());
            let (hr, hc) = (
                readout::signed_shift(r, raw.shape()[0]),
                readout::signed_shift(c, mw),
            );
            let (hth, hsc) = bins_to_rotscale(&rs.geom, hr, hc);
            candidates.push(Candidate {
                theta_raw: th,
                scale: sc,
                hard_theta_raw: hth,
                hard_scale: hsc,
            });
        }
    }

    let mut best: Option<(usize, usize, TranslationOutcome<T>)> = None;
    for (ci, cand) in candidates.iter().enumerate() {
        for k in 0..2 {
            let theta_h = cand.theta_raw + k as f64 * PI;
            let unwarp = PoseSim2::new(1.0 / cand.scale, -theta_h, 0.0, 0.0);
            let pv = tape.constant(unwarp.to_tensor());
            let aligned = tape.warp_sim2(sv, pv)?;
            let fst = match extractors {
                Some(e) => e.source_trans.apply(&tape, aligned)?,
                None => aligned,
            };
            let ts =
                translation_stage(&tape, ftt, fst, cfg, baseline || cfg.phase_norm).map_err(
                    |e| Error::Stage {
                        stage: "translation",
                        source: Box::new(e),
                    },
                )?;
            if best.as_ref().map_or(true, |(_, _, b)| ts.peak > b.peak) {
                best = Some((ci, k, ts));
            }
        }
    }
    let (ci, k, ts) = best.expect("at least one hypothesis evaluated");
    let winner = &candidates[ci];
    let theta_used = winner.theta_raw + k as f64 * PI;

    let (tx, ty) = compose_final(winner.scale, theta_used, (ts.tx, ts.ty));
    let report_theta = if cfg.full_circle {
        theta_used.rem_euclid(2.0 * PI)
    } else {
        winner.theta_raw.rem_euclid(PI)
    };
    let pose = PoseSim2::new(winner.scale, report_theta, tx, ty);

    let hard_theta_used = winner.hard_theta_raw + k as f64 * PI;
    let (htx, hty) = compose_final(winner.hard_scale, hard_theta_used, (ts.hard_tx, ts.hard_ty));
    let hard_theta = if cfg.full_circle {
        hard_theta_used.rem_euclid(2.0 * PI)
    } else {
        winner.hard_theta_raw.rem_euclid(PI)
    };
    let hard = PoseSim2::new(winner.hard_scale, hard_theta, htx, hty);

    Ok(PoseEstimate {
        pose,
        hard,
        rotscale_map: rs.map,
        translation_map: ts.map,
        rot_sharpness: rs.sharpness,
        trans_sharpness: ts.sharpness,
    })
}

/// Resolve the pi-ambiguity of a stage-1 rotation by comparing the
/// translation-stage peak for theta and theta+pi. Only active when the
/// configuration allows full-circle rotations; otherwise theta is returned
/// unchanged.
pub fn rotation_disambiguation<T: Scalar>(
    template: &Tensor<T>,
    source: &Tensor<T>,
    theta: f64,
    scale: f64,
    extractors: Option<&ExtractorSet<T>>,
    cfg: &EstimatorConfig,
) -> Result<f64> {
    if !cfg.full_circle {
        return Ok(theta);
    }
    let tape = Tape::new();
    let tv = tape.constant(template.clone());
    let sv = tape.constant(source.clone());
    let ftt = match extractors {
        Some(e) => e.template_trans.apply(&tape, tv)?,
        None => tv,
    };
    let baseline = extractors.is_none();
    let mut best = (theta, f64::NEG_INFINITY);
    for k in 0..2 {
        let theta_h = theta + k as f64 * PI;
        let unwarp = PoseSim2::new(1.0 / scale, -theta_h, 0.0, 0.0);
        let pv = tape.constant(unwarp.to_tensor());
        let aligned = tape.warp_sim2(sv, pv)?;
        let fst = match extractors {
            Some(e) => e.source_trans.apply(&tape, aligned)?,
            None => aligned,
        };
        let ts = translation_stage(&tape, ftt, fst, cfg, baseline || cfg.phase_norm)?;
        if ts.peak > best.1 {
            best = (theta_h.rem_euclid(2.0 * PI), ts.peak);
        }
    }
    Ok(best.0)
}

/// End-to-end differentiable trace: stage 1, a soft-pose warp built from
/// stage-1 expectation nodes, then stage 2. Gradients flow from the stage-2
/// readout back through the warp into both images and all features.
pub struct DifferentiableTrace<T: Scalar> {
    pub rot: RotScaleOutcome<T>,
    pub trans: TranslationOutcome<T>,
}

pub fn register_differentiable<T: Scalar>(
    tape: &Tape<T>,
    template: Var,
    source: Var,
    extractors: Option<&ExtractorSet<T>>,
    cfg: &EstimatorConfig,
) -> Result<DifferentiableTrace<T>> {
    let (frt, frs) = match extractors {
        Some(e) => (
            e.template_rot.apply(tape, template)?,
            e.source_rot.apply(tape, source)?,
        ),
        None => (template, source),
    };
    let baseline = extractors.is_none();
    let rot = rotation_scale_stage(tape, frt, frs, cfg, baseline)?;

    // soft inverse pose from the stage-1 expectation nodes:
    // row expectation dr gives 1/s = exp(dr * log_base); column expectation
    // dc gives -theta = -dc * angle_step.
    let dr = tape.gather(rot.vars.est_bins, std::rc::Rc::new(vec![0]), &[1])?;
    let dc = tape.gather(rot.vars.est_bins, std::rc::Rc::new(vec![1]), &[1])?;
    let inv_scale = tape.exp(tape.scale(dr, T::from_f64(rot.geom.log_base())));
    let neg_theta = tape.scale(dc, T::from_f64(-rot.geom.angle_step()));
    let zero_a = tape.constant(Tensor::scalar(T::zero()));
    let zero_b = tape.constant(Tensor::scalar(T::zero()));
    let pose = tape.stack_scalars(&[inv_scale, neg_theta, zero_a, zero_b])?;
    let aligned = tape.warp_sim2(source, pose)?;

    let (ftt, fst) = match extractors {
        Some(e) => (
            e.template_trans.apply(tape, template)?,
            e.source_trans.apply(tape, aligned)?,
        ),
        None => (template, aligned),
    };
    let trans = translation_stage(tape, ftt, fst, cfg, baseline || cfg.phase_norm)?;
    Ok(DifferentiableTrace { rot, trans })
}
