//! Run configuration: pose ranges, estimator and training knobs, the flat
//! key=value config-file format, and the config hash embedded in reports
//! and checkpoints.

use crate::error::{Error, Result};

/// FNV-1a, 64-bit. Traceability hash for configs; not cryptographic.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sampling bounds for ground-truth poses. Defaults follow the evaluation
/// protocol: translation within +/-50 px per axis, rotation in [0, pi),
/// scale in [0.8, 1.2] at 256x256.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseRanges {
    pub tx: (f64, f64),
    pub ty: (f64, f64),
    pub rot: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for PoseRanges {
    fn default() -> Self {
        PoseRanges {
            tx: (-50.0, 50.0),
            ty: (-50.0, 50.0),
            rot: (0.0, std::f64::consts::PI),
            scale: (0.8, 1.2),
        }
    }
}

impl PoseRanges {
    /// Same fractions of the frame at a different image size.
    pub fn scaled_to(size: usize) -> Self {
        let f = size as f64 / 256.0;
        PoseRanges {
            tx: (-50.0 * f, 50.0 * f),
            ty: (-50.0 * f, 50.0 * f),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a <= b && a.is_finite() && b.is_finite();
        if !(ordered(self.tx) && ordered(self.ty) && ordered(self.rot) && ordered(self.scale)) {
            return Err(Error::InvalidArgument {
                op: "PoseRanges",
                msg: format!("{self:?} not ordered/finite"),
            });
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "PoseRanges",
                msg: "scale lower bound must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Everything a run needs, with desk-scale defaults (128x128, depth 3).
/// The full-scale profile (256x256, depth 4) is available via `full()`.
#[derive(Clone, Debug, PartialEq)]
pub struct AppConfig {
    pub size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub lp_rows: usize,
    pub lp_cols: usize,
    pub beta_trans: f64,
    pub beta_rotscale: f64,
    pub window: usize,
    pub hann: bool,
    pub taper: f64,
    pub phase_norm: bool,
    pub highpass: bool,
    pub full_circle: bool,
    pub ranges: PoseRanges,
    pub sigma: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps_phase1: usize,
    pub steps_phase2: usize,
    pub w_kl_rot: f64,
    pub w_exp_rot: f64,
    pub w_kl_trans: f64,
    pub w_exp_trans: f64,
    pub gt_warp_fraction: f64,
    pub seed: u64,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig::desk()
    }
}

impl AppConfig {
    pub fn desk() -> Self {
        AppConfig {
            size: 128,
            depth: 3,
            base_channels: 8,
            lp_rows: 128,
            lp_cols: 256,
            beta_trans: 10.0,
            beta_rotscale: 8.0,
            window: 8,
            hann: true,
            taper: 0.5,
            phase_norm: true,
            highpass: true,
            full_circle: false,
            ranges: PoseRanges::scaled_to(128),
            sigma: 1.5,
            lr: 1e-3,
            batch: 8,
            steps_phase1: 5000,
            steps_phase2: 5000,
            w_kl_rot: 1.0,
            w_exp_rot: 1.0,
            w_kl_trans: 5.0,
            w_exp_trans: 1.0,
            gt_warp_fraction: 0.5,
            seed: 1,
            train_pairs: 2000,
            val_pairs: 200,
        }
    }

    pub fn full() -> Self {
        AppConfig {
            size: 256,
            depth: 4,
            lp_rows: 256,
            lp_cols: 256,
            ranges: PoseRanges::default(),
            ..AppConfig::desk()
        }
    }

    /// Apply `key=value` lines over the current values. `#` starts a
    /// comment; unknown keys are rejected.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidArgument {
                    op: "config",
                    msg: format!("line {}: expected key=value, got '{raw}'", lineno + 1),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| Error::InvalidArgument {
                op: "config",
                msg: format!("line {}: {e}", lineno + 1),
            })?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse().map_err(|_| Error::InvalidArgument {
                op: "config",
                msg: format!("cannot parse '{v}' for key '{key}'"),
            })
        }
        match key {
            "size" => self.size = p(key, value)?,
            "depth" => self.depth = p(key, value)?,
            "base_channels" => self.base_channels = p(key, value)?,
            "lp_rows" => self.lp_rows = p(key, value)?,
            "lp_cols" => self.lp_cols = p(key, value)?,
            "beta_trans" => self.beta_trans = p(key, value)?,
            "beta_rotscale" => self.beta_rotscale = p(key, value)?,
            "window" => self.window = p(key, value)?,
            "hann" => self.hann = p(key, value)?,
            "taper" => self.taper = p(key, value)?,
            "phase_norm" => self.phase_norm = p(key, value)?,
            "highpass" => self.highpass = p(key, value)?,
            "full_circle" => self.full_circle = p(key, value)?,
            "tx_min" => self.ranges.tx.0 = p(key, value)?,
            "tx_max" => self.ranges.tx.1 = p(key, value)?,
            "ty_min" => self.ranges.ty.0 = p(key, value)?,
            "ty_max" => self.ranges.ty.1 = p(key, value)?,
            "rot_min" => self.ranges.rot.0 = p(key, value)?,
            "rot_max" => self.ranges.rot.1 = p(key, value)?,
            "scale_min" => self.ranges.scale.0 = p(key, value)?,
            "scale_max" => self.ranges.scale.1 = p(key, value)?,
            "sigma" => self.sigma = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "batch" => self.batch = p(key, value)?,
            "steps_phase1" => self.steps_phase1 = p(key, value)?,
            "steps_phase2" => self.steps_phase2 = p(key, value)?,
            "w_kl_rot" => self.w_kl_rot = p(key, value)?,
            "w_exp_rot" => self.w_exp_rot = p(key, value)?,
            "w_kl_trans" => self.w_kl_trans = p(key, value)?,
            "w_exp_trans" => self.w_exp_trans = p(key, value)?,
            "gt_warp_fraction" => self.gt_warp_fraction = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "train_pairs" => self.train_pairs = p(key, value)?,
            "val_pairs" => self.val_pairs = p(key, value)?,
            _ => {
                return Err(Error::InvalidArgument {
                    op: "config",
                    msg: format!("unknown key '{key}'"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !crate::spectral::fft::is_power_of_two(self.size) {
            return Err(Error::InvalidArgument {
                op: "config",
                msg: format!("size {} must be a power of two", self.size),
            });
        }
        if self.beta_trans <= 0.0 || self.beta_rotscale <= 0.0 {
            return Err(Error::InvalidArgument {
                op: "config",
                msg: "temperatures must be positive".into(),
            });
        }
        self.ranges.validate()
    }

    /// Canonical text form; also the hashing input.
    pub fn canonical_string(&self) -> String {
        format!(
            "size={} depth={} base_channels={} lp_rows={} lp_cols={} beta_trans={} \
             beta_rotscale={} window={} hann={} taper={} phase_norm={} highpass={} full_circle={} \
             tx=[{},{}] ty=[{},{}] rot=[{},{}] scale=[{},{}] sigma={} lr={} batch={} \
             steps_phase1={} steps_phase2={} w_kl_rot={} w_exp_rot={} w_kl_trans={} \
             w_exp_trans={} gt_warp_fraction={} seed={} train_pairs={} val_pairs={}",
            self.size,
            self.depth,
            self.base_channels,
            self.lp_rows,
            self.lp_cols,
            self.beta_trans,
            self.beta_rotscale,
            self.window,
            self.hann,
            self.taper,
            self.phase_norm,
            self.highpass,
            self.full_circle,
            self.ranges.tx.0,
            self.ranges.tx.1,
            self.ranges.ty.0,
            self.ranges.ty.1,
            self.ranges.rot.0,
            self.ranges.rot.1,
            self.ranges.scale.0,
            self.ranges.scale.1,
            self.sigma,
            self.lr,
            self.batch,
            self.steps_phase1,
            self.steps_phase2,
            self.w_kl_rot,
            self.w_exp_rot,
            self.w_kl_trans,
            self.w_exp_trans,
            self.gt_warp_fraction,
            self.seed,
            self.train_pairs,
            self.val_pairs,
        )
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ranges_match_protocol() {
        let r = PoseRanges::default();
        assert_eq!(r.tx, (-50.0, 50.0));
        assert_eq!(r.ty, (-50.0, 50.0));
        assert_eq!(r.rot.0, 0.0);
        assert!((r.rot.1 - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(r.scale, (0.8, 1.2));
    }

    #[test]
    fn apply_text_overrides_and_rejects_unknown() {
        let mut c = AppConfig::desk();
        c.apply_text("# comment\nbeta_trans = 50\nseed=9\n").unwrap();
        assert_eq!(c.beta_trans, 50.0);
        assert_eq!(c.seed, 9);
        assert!(c.apply_text("no_such_key=1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = AppConfig::desk();
        let mut b = AppConfig::desk();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
