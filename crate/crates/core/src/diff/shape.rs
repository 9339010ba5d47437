//! Structural ops: resampling between resolutions, channel concatenation,
//! index gathering, reshapes.

use std::rc::Rc;

use crate::diff::tape::{Tape, Var};
use crate::diff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tape<T> {
    /// Nearest-neighbor 2x spatial upsampling; rank is preserved.
    pub fn upsample2x(&self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        let rank2 = self.shape_of(a).len() == 2;
        let out = {
            let av = self.value(a);
            let x = av.data();
            let mut y = vec![T::zero(); c * 4 * h * w];
            let (h2, w2) = (2 * h, 2 * w);
            for ch in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        let v = x[(ch * h + iy) * w + ix];
                        let base = ch * h2 * w2;
                        y[base + (2 * iy) * w2 + 2 * ix] = v;
                        y[base + (2 * iy) * w2 + 2 * ix + 1] = v;
                        y[base + (2 * iy + 1) * w2 + 2 * ix] = v;
                        y[base + (2 * iy + 1) * w2 + 2 * ix + 1] = v;
                    }
                }
            }
            y
        };
        let shape: Vec<usize> = if rank2 {
            vec![2 * h, 2 * w]
        } else {
            vec![c, 2 * h, 2 * w]
        };
        let in_shape = self.shape_of(a);
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push_op(out, &[a], move |_, g, sink| {
            // adjoint of replication: each input cell sums its 2x2 block
            let (h2, w2) = (2 * h, 2 * w);
            let mut gx = vec![T::zero(); c * h * w];
            let gd = g.data();
            for ch in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        let base = ch * h2 * w2;
                        let s = gd[base + (2 * iy) * w2 + 2 * ix]
                            + gd[base + (2 * iy) * w2 + 2 * ix + 1]
                            + gd[base + (2 * iy + 1) * w2 + 2 * ix]
                            + gd[base + (2 * iy + 1) * w2 + 2 * ix + 1];
                        gx[(ch * h + iy) * w + ix] = s;
                    }
                }
            }
            sink.add(a, Tensor::from_vec(&in_shape, gx).expect("upsample grad shape"));
        }))
    }

    /// 2x2 average pooling; extents must be even.
    pub fn avgpool2(&self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument {
                op: "avgpool2",
                msg: format!("extents must be even, got {h}x{w}"),
            });
        }
        let rank2 = self.shape_of(a).len() == 2;
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let out = {
            let av = self.value(a);
            let x = av.data();
            let mut y = vec![T::zero(); c * ho * wo];
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let base = ch * h * w;
                        let s = x[base + (2 * oy) * w + 2 * ox]
                            + x[base + (2 * oy) * w + 2 * ox + 1]
                            + x[base + (2 * oy + 1) * w + 2 * ox]
                            + x[base + (2 * oy + 1) * w + 2 * ox + 1];
                        y[(ch * ho + oy) * wo + ox] = s * quarter;
                    }
                }
            }
            y
        };
        let shape: Vec<usize> = if rank2 { vec![ho, wo] } else { vec![c, ho, wo] };
        let in_shape = self.shape_of(a);
        let out = Tensor::from_vec(&shape, out)?;
        Ok(self.push_op(out, &[a], move |_, g, sink| {
            let mut gx = vec![T::zero(); c * h * w];
            let gd = g.data();
            for ch in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let v = gd[(ch * ho + oy) * wo + ox] * quarter;
                        let base = ch * h * w;
                        gx[base + (2 * oy) * w + 2 * ox] = v;
                        gx[base + (2 * oy) * w + 2 * ox + 1] = v;
                        gx[base + (2 * oy + 1) * w + 2 * ox] = v;
                        gx[base + (2 * oy + 1) * w + 2 * ox + 1] = v;
                    }
                }
            }
            sink.add(a, Tensor::from_vec(&in_shape, gx).expect("avgpool grad shape"));
        }))
    }

    /// Concatenate along the channel axis; rank-2 inputs count as one channel.
    pub fn concat_channels(&self, a: Var, b: Var) -> Result<Var> {
        let (ca, h, w) = self.value(a).dims3()?;
        let (cb, hb, wb) = self.value(b).dims3()?;
        if (h, w) != (hb, wb) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape_of(a),
                rhs: self.shape_of(b),
            });
        }
        let out = {
            let av = self.value(a);
            let bv = self.value(b);
            let mut y = Vec::with_capacity((ca + cb) * h * w);
            y.extend_from_slice(av.data());
            y.extend_from_slice(bv.data());
            y
        };
        let out = Tensor::from_vec(&[ca + cb, h, w], out)?;
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        Ok(self.push_op(out, &[a, b], move |_, g, sink| {
            let split = ca * h * w;
            if sink.wants(a) {
                sink.add(
                    a,
                    Tensor::from_vec(&sa, g.data()[..split].to_vec()).expect("concat ga"),
                );
            }
            if sink.wants(b) {
                sink.add(
                    b,
                    Tensor::from_vec(&sb, g.data()[split..].to_vec()).expect("concat gb"),
                );
            }
        }))
    }

    /// y_j = x[idx_j]; backward scatter-adds. Indices may repeat (windowed
    /// readouts with wrap) — repeated positions accumulate.
    pub fn gather(&self, a: Var, indices: Rc<Vec<usize>>, out_shape: &[usize]) -> Result<Var> {
        let n = self.value(a).numel();
        let want: usize = out_shape.iter().product();
        if want != indices.len() {
            return Err(Error::InvalidArgument {
                op: "gather",
                msg: format!("{} indices for output of {want}", indices.len()),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument {
                op: "gather",
                msg: format!("index {bad} out of range for {n} elements"),
            });
        }
        let out = {
            let av = self.value(a);
            indices.iter().map(|&i| av.data()[i]).collect::<Vec<_>>()
        };
        let out = Tensor::from_vec(out_shape, out)?;
        let in_shape = self.shape_of(a);
        let idx = Rc::clone(&indices);
        Ok(self.push_op(out, &[a], move |_, g, sink| {
            let mut gx = Tensor::zeros(&in_shape);
            for (j, &i) in idx.iter().enumerate() {
                gx.data_mut()[i] = gx.data_mut()[i] + g.data()[j];
            }
            sink.add(a, gx);
        }))
    }

    /// Reinterpret the buffer with a new shape of equal element count.
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let n = self.value(a).numel();
        let want: usize = shape.iter().product();
        if n != want {
            return Err(Error::InvalidArgument {
                op: "reshape",
                msg: format!("cannot view {n} elements as {shape:?}"),
            });
        }
        let out = Tensor::from_vec(shape, self.value(a).data().to_vec())?;
        let in_shape = self.shape_of(a);
        Ok(self.push_op(out, &[a], move |_, g, sink| {
            sink.add(
                a,
                Tensor::from_vec(&in_shape, g.data().to_vec()).expect("reshape grad"),
            );
        }))
    }

    /// Pack scalar nodes into a small vector node.
    pub fn stack_scalars(&self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            if self.value(p).numel() != 1 {
                return Err(Error::InvalidArgument {
                    op: "stack_scalars",
                    msg: format!("operand has shape {:?}", self.shape_of(p)),
                });
            }
            data.push(self.scalar_value(p));
        }
        let out = Tensor::from_vec(&[parts.len()], data)?;
        let owned: Vec<Var> = parts.to_vec();
        Ok(self.push_op(out, parts, move |_, g, sink| {
            for (j, &p) in owned.iter().enumerate() {
                sink.add(p, Tensor::scalar(g.data()[j]));
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;

    #[test]
    fn upsample_single_cell() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(&[1, 1], vec![1.0]).unwrap());
        let y = tape.upsample2x(a).unwrap();
        let yv = tape.value_clone(y);
        assert_eq!(yv.shape(), &[2, 2]);
        assert_eq!(yv.data(), &[1.0; 4]);
    }

    #[test]
    fn upsample_shape_contract() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[8, 8]));
        let y = tape.upsample2x(a).unwrap();
        assert_eq!(tape.shape_of(y), vec![16, 16]);
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 2]));
        let y = tape.upsample2x(a).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[4.0; 4]);
    }

    #[test]
    fn gather_scatter_roundtrip() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let g = tape
            .gather(a, Rc::new(vec![3, 0, 3]), &[3])
            .unwrap();
        assert_eq!(tape.value(g).data(), &[4.0, 1.0, 4.0]);
        let s = tape.sum(g);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn concat_splits_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::filled(&[1, 2, 2], 1.0));
        let b = tape.leaf(Tensor::filled(&[2, 2, 2], 2.0));
        let y = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape_of(y), vec![3, 2, 2]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().numel(), 4);
        assert_eq!(tape.grad(b).unwrap().numel(), 8);
    }
}
