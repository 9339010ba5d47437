//! Temperature softmax over all elements of a map.

use crate::diff::tape::{Tape, Var};
use crate::diff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// p_i = exp(beta * x_i) / sum_j exp(beta * x_j), computed with
    /// max-subtraction so large inputs cannot overflow.
    pub fn softmax(&self, a: Var, beta: T) -> Result<Var> {
        if !(beta > T::zero()) {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: format!("temperature must be positive, got {beta}"),
            });
        }
        let out = {
            let av = self.value(a);
            softmax_values(&av, beta)
        };
        let p = out.clone();
        Ok(self.push_op(out, &[a], move |_, g, sink| {
            // dL/dx_i = beta * p_i * (g_i - sum_j g_j p_j)
            let dot = g
                .data()
                .iter()
                .zip(p.data())
                .fold(T::zero(), |s, (&gi, &pi)| s + gi * pi);
            sink.add(
                a,
                g.zip_map(&p, |gi, pi| beta * pi * (gi - dot)),
            );
        }))
    }
}

pub fn softmax_values<T: Scalar>(x: &Tensor<T>, beta: T) -> Tensor<T> {
    let m = x.max_value();
    let mut out = x.map(|v| (beta * (v - m)).exp());
    let z = out.sum_value();
    out.scale_assign(T::one() / z);
    out
}
