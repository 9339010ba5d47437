//! Pointwise ops with their backward rules.

use crate::diff::tape::{Tape, Var};
use crate::diff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let nodes_a = self.shape_of(a);
        let nodes_b = self.shape_of(b);
        if nodes_a != nodes_b {
            return Err(Error::ShapeMismatch {
                op,
                lhs: nodes_a,
                rhs: nodes_b,
            });
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        Ok(self.push_op(out, &[a, b], move |_, g, sink| {
            sink.add(a, g.clone());
            sink.add(b, g.clone());
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        Ok(self.push_op(out, &[a, b], move |_, g, sink| {
            sink.add(a, g.clone());
            sink.add(b, g.map(|v| -v));
        }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        Ok(self.push_op(out, &[a, b], move |tape, g, sink| {
            if sink.wants(a) {
                sink.add(a, g.zip_map(&tape.value(b), |gi, bi| gi * bi));
            }
            if sink.wants(b) {
                sink.add(b, g.zip_map(&tape.value(a), |gi, ai| gi * ai));
            }
        }))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("div", a, b)?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x / y);
        Ok(self.push_op(out, &[a, b], move |tape, g, sink| {
            if sink.wants(a) {
                sink.add(a, g.zip_map(&tape.value(b), |gi, bi| gi / bi));
            }
            if sink.wants(b) {
                let av = tape.value(a);
                let bv = tape.value(b);
                let mut gb = Tensor::zeros(bv.shape());
                for i in 0..gb.numel() {
                    gb.data_mut()[i] =
                        -g.data()[i] * av.data()[i] / (bv.data()[i] * bv.data()[i]);
                }
                drop(av);
                drop(bv);
                sink.add(b, gb);
            }
        }))
    }

    /// Multiply by a compile-time constant scalar.
    pub fn scale(&self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, g.map(|v| v * c));
        })
    }

    /// Add a constant scalar to every element.
    pub fn add_scalar_const(&self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, g.clone());
        })
    }

    pub fn neg(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| -x);
        self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, g.map(|v| -v));
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push_op(out, &[a], move |tape, g, sink| {
            sink.add(
                a,
                g.zip_map(&tape.value(a), |gi, xi| {
                    if xi > T::zero() {
                        gi
                    } else {
                        T::zero()
                    }
                }),
            );
        })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        let y = out.clone();
        self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, g.zip_map(&y, |gi, yi| gi * yi * (T::one() - yi)));
        })
    }

    pub fn ln(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.ln());
        self.push_op(out, &[a], move |tape, g, sink| {
            sink.add(a, g.zip_map(&tape.value(a), |gi, xi| gi / xi));
        })
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        let y = out.clone();
        self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, g.zip_map(&y, |gi, yi| gi * yi));
        })
    }

    /// Elementwise multiply by a constant tensor (no gradient to the mask).
    pub fn mul_const(&self, a: Var, mask: &Tensor<T>) -> Result<Var> {
        if self.shape_of(a) != mask.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul_const",
                lhs: self.shape_of(a),
                rhs: mask.shape().to_vec(),
            });
        }
        let out = self.value(a).zip_map(mask, |x, m| x * m);
        let mask = mask.clone();
        Ok(self.push_op(out, &[a], move |_, g, sink| {
            sink.add(a, g.zip_map(&mask, |gi, m| gi * m));
        }))
    }

    /// Subtract a broadcast scalar node from every element.
    pub fn sub_bcast(&self, a: Var, s: Var) -> Result<Var> {
        if self.shape_of(s) != [1] {
            return Err(Error::InvalidArgument {
                op: "sub_bcast",
                msg: format!("scalar operand must have shape [1], got {:?}", self.shape_of(s)),
            });
        }
        let sv = self.scalar_value(s);
        let out = self.value(a).map(|x| x - sv);
        Ok(self.push_op(out, &[a, s], move |_, g, sink| {
            sink.add(a, g.clone());
            if sink.wants(s) {
                sink.add(s, Tensor::scalar(-g.sum_value()));
            }
        }))
    }

    /// Divide every element by max(scalar node, floor). The floor keeps
    /// degenerate (flat) maps from producing non-finite values.
    pub fn div_bcast_floor(&self, a: Var, s: Var, floor: T) -> Result<Var> {
        if self.shape_of(s) != [1] {
            return Err(Error::InvalidArgument {
                op: "div_bcast_floor",
                msg: format!("scalar operand must have shape [1], got {:?}", self.shape_of(s)),
            });
        }
        let sv = self.scalar_value(s);
        let d = sv.max(floor);
        let out = self.value(a).map(|x| x / d);
        Ok(self.push_op(out, &[a, s], move |tape, g, sink| {
            if sink.wants(a) {
                sink.add(a, g.map(|v| v / d));
            }
            if sink.wants(s) && sv > floor {
                let av = tape.value(a);
                let mut acc = T::zero();
                for i in 0..g.numel() {
                    acc = acc - g.data()[i] * av.data()[i] / (d * d);
                }
                drop(av);
                sink.add(s, Tensor::scalar(acc));
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::diff::{Tape, Tensor};

    #[test]
    fn add_values() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn relu_values() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
        let y = tape.relu(a);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn mul_product_rule() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[1], vec![2.0]).unwrap());
        let b = tape.constant(Tensor::from_vec(&[1], vec![5.0]).unwrap());
        let y = tape.mul(a, b).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[5.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn chain_rule_through_square() {
        // loss = sum(a*a), a=[2,3] -> grad = [4,6]
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap());
        let sq = tape.mul(a, a).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[4.0, 6.0]);
    }
}
