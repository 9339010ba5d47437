//! Reductions to scalar nodes.

use crate::diff::tape::{Tape, Var};
use crate::diff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    pub fn sum(&self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum_value());
        let shape = self.shape_of(a);
        self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, Tensor::filled(&shape, g.data()[0]));
        })
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).numel();
        let out = Tensor::scalar(self.value(a).mean_value());
        let shape = self.shape_of(a);
        let inv = T::from_f64(1.0 / n as f64);
        self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, Tensor::filled(&shape, g.data()[0] * inv));
        })
    }

    /// Maximum element as a scalar node; the gradient routes to the first
    /// argmax position.
    pub fn max(&self, a: Var) -> Var {
        let (idx, shape, m) = {
            let av = self.value(a);
            (av.argmax(), av.shape().to_vec(), av.max_value())
        };
        self.push_op(Tensor::scalar(m), &[a], move |_, g, sink| {
            let mut ga = Tensor::zeros(&shape);
            ga.data_mut()[idx] = g.data()[0];
            sink.add(a, ga);
        })
    }

    /// Sum of x_i * w_i for a constant weight grid; the expectation readout.
    pub fn weighted_sum(&self, a: Var, weights: &Tensor<T>) -> Result<Var> {
        if self.shape_of(a) != weights.shape() {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: self.shape_of(a),
                rhs: weights.shape().to_vec(),
            });
        }
        let acc = {
            let av = self.value(a);
            av.data()
                .iter()
                .zip(weights.data())
                .fold(T::zero(), |s, (&x, &w)| s + x * w)
        };
        let w = weights.clone();
        Ok(self.push_op(Tensor::scalar(acc), &[a], move |_, g, sink| {
            sink.add(a, w.map(|wi| wi * g.data()[0]));
        }))
    }

    /// L1 distance between a small vector node and a constant target, with an
    /// optional wrap period per axis (circular distance for angular axes).
    pub fn l1_to_const(&self, a: Var, target: &[T], period: &[Option<T>]) -> Result<Var> {
        let n = self.value(a).numel();
        if n != target.len() || n != period.len() {
            return Err(Error::InvalidArgument {
                op: "l1_to_const",
                msg: format!("estimate has {n} entries, target {}", target.len()),
            });
        }
        let mut loss = T::zero();
        let mut signs = vec![T::zero(); n];
        {
            let av = self.value(a);
            for i in 0..n {
                let mut d = av.data()[i] - target[i];
                if let Some(p) = period[i] {
                    // wrap into [-p/2, p/2); the wrap offset is locally constant
                    d = d - p * (d / p).round();
                }
                loss = loss + d.abs();
                signs[i] = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
            }
        }
        Ok(self.push_op(Tensor::scalar(loss), &[a], move |_, g, sink| {
            let g0 = g.data()[0];
            sink.add(
                a,
                Tensor::from_vec(&[signs.len()], signs.iter().map(|&s| s * g0).collect())
                    .expect("sign tensor shape"),
            );
        }))
    }
}
