//! Evaluation metrics: per-quantity accuracy-in-units (share of estimates
//! within a threshold) and mean squared error, over x, y, rotation
//! (degrees, circular modulo 180) and scale.

use crate::error::{Error, Result};
use crate::estimator::PoseSim2;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Quantity {
    X,
    Y,
    RotationDeg,
    Scale,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [
        Quantity::X,
        Quantity::Y,
        Quantity::RotationDeg,
        Quantity::Scale,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Quantity::X => "x",
            Quantity::Y => "y",
            Quantity::RotationDeg => "rot",
            Quantity::Scale => "scale",
        }
    }
}

/// |estimate - truth| in the quantity's units; rotation distance is
/// circular modulo 180 degrees.
pub fn quantity_error(q: Quantity, est: &PoseSim2, gt: &PoseSim2) -> f64 {
    match q {
        Quantity::X => est.tx - gt.tx,
        Quantity::Y => est.ty - gt.ty,
        Quantity::RotationDeg => {
            let d = (est.theta - gt.theta).to_degrees().rem_euclid(180.0);
            d.min(180.0 - d)
        }
        Quantity::Scale => est.scale - gt.scale,
    }
}

/// Default thresholds: 5 px translation, 1 degree rotation, 0.2 scale.
pub fn default_thresholds(q: Quantity) -> Vec<f64> {
    match q {
        Quantity::X | Quantity::Y => vec![5.0],
        Quantity::RotationDeg => vec![1.0],
        Quantity::Scale => vec![0.2],
    }
}

#[derive(Clone, Debug)]
pub struct QuantityReport {
    pub quantity: Quantity,
    /// Mean squared error in the quantity's squared units.
    pub mse: f64,
    /// (threshold, percentage of |error| <= threshold).
    pub acc: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub n: usize,
    pub per_quantity: Vec<QuantityReport>,
    pub mean_runtime_ms: f64,
    pub config_hash: u64,
    pub dataset_tag: String,
}

impl MetricsReport {
    pub fn quantity(&self, q: Quantity) -> &QuantityReport {
        self.per_quantity
            .iter()
            .find(|r| r.quantity == q)
            .expect("all quantities present")
    }

    pub fn acc_at(&self, q: Quantity, threshold: f64) -> f64 {
        self.quantity(q)
            .acc
            .iter()
            .find(|(t, _)| (*t - threshold).abs() < 1e-12)
            .map(|(_, a)| *a)
            .unwrap_or(f64::NAN)
    }

    /// One-row CSV in the benchmark-table column order:
    /// E_x, Acc_x, E_y, Acc_y, E_rot, Acc_rot, E_scale, Acc_scale, runtime.
    pub fn csv_header() -> &'static str {
        "n,e_x,acc_x5,e_y,acc_y5,e_rot,acc_rot1,e_scale,acc_scale02,runtime_ms,config_hash,dataset"
    }

    pub fn to_csv(&self) -> String {
        let first_acc = |q: Quantity| {
            self.quantity(q)
                .acc
                .first()
                .map(|(_, a)| *a)
                .unwrap_or(f64::NAN)
        };
        format!(
            "{},{:.4},{:.1},{:.4},{:.1},{:.4},{:.1},{:.6},{:.1},{:.1},{:016x},{}",
            self.n,
            self.quantity(Quantity::X).mse,
            first_acc(Quantity::X),
            self.quantity(Quantity::Y).mse,
            first_acc(Quantity::Y),
            self.quantity(Quantity::RotationDeg).mse,
            first_acc(Quantity::RotationDeg),
            self.quantity(Quantity::Scale).mse,
            first_acc(Quantity::Scale),
            self.mean_runtime_ms,
            self.config_hash,
            self.dataset_tag
        )
    }
}

/// Accuracy and MSE over paired estimate/truth lists. Thresholds are per
/// quantity; pass `None` to use the defaults.
pub fn compute_metrics(
    estimates: &[PoseSim2],
    truths: &[PoseSim2],
    thresholds: Option<&dyn Fn(Quantity) -> Vec<f64>>,
    mean_runtime_ms: f64,
    config_hash: u64,
    dataset_tag: &str,
) -> Result<MetricsReport> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::InvalidArgument {
            op: "compute_metrics",
            msg: format!(
                "need equal non-empty lists, got {} and {}",
                estimates.len(),
                truths.len()
            ),
        });
    }
    let n = estimates.len();
    let per_quantity = Quantity::ALL
        .iter()
        .map(|&q| {
            let errs: Vec<f64> = estimates
                .iter()
                .zip(truths)
                .map(|(e, g)| quantity_error(q, e, g))
                .collect();
            let mse = errs.iter().map(|e| e * e).sum::<f64>() / n as f64;
            let ts = thresholds.map_or_else(|| default_thresholds(q), |f| f(q));
            let acc = ts
                .into_iter()
                .map(|t| {
                    let hits = errs.iter().filter(|e| e.abs() <= t).count();
                    (t, 100.0 * hits as f64 / n as f64)
                })
                .collect();
            QuantityReport {
                quantity: q,
                mse,
                acc,
            }
        })
        .collect();
    Ok(MetricsReport {
        n,
        per_quantity,
        mean_runtime_ms,
        config_hash,
        dataset_tag: dataset_tag.to_string(),
    })
}

/// Accuracy at integer thresholds 0..=max_t (pixels or degrees).
pub fn accuracy_curve(
    estimates: &[PoseSim2],
    truths: &[PoseSim2],
    quantity: Quantity,
    max_t: usize,
) -> Result<Vec<(f64, f64)>> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::InvalidArgument {
            op: "accuracy_curve",
            msg: "need equal non-empty lists".into(),
        });
    }
    let errs: Vec<f64> = estimates
        .iter()
        .zip(truths)
        .map(|(e, g)| quantity_error(quantity, e, g).abs())
        .collect();
    Ok((0..=max_t)
        .map(|t| {
            let hits = errs.iter().filter(|e| **e <= t as f64).count();
            (t as f64, 100.0 * hits as f64 / estimates.len() as f64)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose_x(tx: f64) -> PoseSim2 {
        PoseSim2::new(1.0, 0.0, tx, 0.0)
    }

    #[test]
    fn worked_example_matches_hand_computation() {
        // estimates [0,3,10] vs truths [0,0,0] at threshold 5:
        // two of three within 5 px -> 66.7%; MSE = (0+9+100)/3.
        let est: Vec<_> = [0.0, 3.0, 10.0].iter().map(|&x| pose_x(x)).collect();
        let gts: Vec<_> = [0.0, 0.0, 0.0].iter().map(|&x| pose_x(x)).collect();
        let r = compute_metrics(&est, &gts, None, 0.0, 0, "fixture").unwrap();
        let x = r.quantity(Quantity::X);
        assert!((x.mse - 109.0 / 3.0).abs() < 1e-9);
        assert!((x.acc[0].1 - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_estimates_are_exact() {
        let est: Vec<_> = (0..4).map(|i| PoseSim2::new(1.1, 0.3, i as f64, -1.0)).collect();
        let r = compute_metrics(&est, &est, None, 0.0, 0, "perfect").unwrap();
        for q in Quantity::ALL {
            assert_eq!(r.quantity(q).mse, 0.0);
            assert_eq!(r.quantity(q).acc[0].1, 100.0);
        }
    }

    #[test]
    fn rotation_error_is_circular_mod_pi() {
        let est = PoseSim2::new(1.0, 179.0_f64.to_radians(), 0.0, 0.0);
        let gt = PoseSim2::new(1.0, 1.0_f64.to_radians(), 0.0, 0.0);
        assert!((quantity_error(Quantity::RotationDeg, &est, &gt) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn curve_is_monotone_and_starts_at_exact_hits() {
        let est: Vec<_> = [0.0, 0.0, 2.5, 7.0].iter().map(|&x| pose_x(x)).collect();
        let gts: Vec<_> = [0.0; 4].iter().map(|&x| pose_x(x)).collect();
        let curve = accuracy_curve(&est, &gts, Quantity::X, 19).unwrap();
        assert_eq!(curve.len(), 20);
        assert!((curve[0].1 - 50.0).abs() < 1e-9);
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert_eq!(curve[19].1, 100.0);
    }

    #[test]
    fn empty_lists_are_rejected() {
        assert!(compute_metrics(&[], &[], None, 0.0, 0, "x").is_err());
    }

    #[test]
    fn permutation_invariance() {
        let est: Vec<_> = [1.0, 2.0, 3.0].iter().map(|&x| pose_x(x)).collect();
        let gts: Vec<_> = [0.0, 0.0, 0.0].iter().map(|&x| pose_x(x)).collect();
        let a = compute_metrics(&est, &gts, None, 0.0, 0, "a").unwrap();
        let est2 = vec![est[2], est[0], est[1]];
        let b = compute_metrics(&est2, &gts, None, 0.0, 0, "a").unwrap();
        assert_eq!(a.quantity(Quantity::X).mse, b.quantity(Quantity::X).mse);
        assert_eq!(a.quantity(Quantity::X).acc, b.quantity(Quantity::X).acc);
    }
}
