use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::value::invert_axes;
use crate::tensor::{Tensor, Var};

/// Split `shape` around `axis` into (outer, len, inner) block extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, S>> {
        let v = self.value();
        let out = (*v).clone().reshape(shape)?;
        let in_shape = v.shape().to_vec();
        Ok(self.graph.record(out, &[self], move |ctx| {
            vec![Some(ctx.grad.clone().reshape(&in_shape).expect("same numel"))]
        }))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'g, S>> {
        let out = self.value().permute(axes)?;
        let inv = invert_axes(axes);
        Ok(self.graph.record(out, &[self], move |ctx| {
            vec![Some(ctx.grad.permute(&inv).expect("valid inverse"))]
        }))
    }

    /// 2-D transpose.
    pub fn t(self) -> Result<Var<'g, S>> {
        if self.shape().len() != 2 {
            return Err(Error::shape("t() expects a matrix"));
        }
        self.permute(&[1, 0])
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, S>> {
        let v = self.value();
        let shape = v.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!("slice {start}+{len} on axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.graph.record(out, &[self], move |ctx| {
            let mut g = vec![S::zero(); outer * n * inner];
            let gd = ctx.grad.data();
            for o in 0..outer {
                let base = o * n * inner + start * inner;
                g[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(shape.clone(), g))]
        }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g, S>], axis: usize) -> Result<Var<'g, S>> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base_shape = values[0].shape().to_vec();
        if axis >= base_shape.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range")));
        }
        for v in &values {
            let s = v.shape();
            if s.len() != base_shape.len()
                || s.iter().zip(&base_shape).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!("concat mismatch {s:?} vs {base_shape:?}")));
            }
        }
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                data.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut out_shape = base_shape.clone();
        out_shape[axis] = total;
        let out = Tensor::from_parts(out_shape, data);
        Ok(first.graph.record(out, parts, move |ctx| {
            let gd = ctx.grad.data();
            let mut grads: Vec<Vec<S>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gk, &l) in grads.iter_mut().zip(&lens) {
                    gk.extend_from_slice(&gd[off..off + l * inner]);
                    off += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(ctx.inputs)
                .zip(ctx.needs)
                .map(|((g, inp), &need)| need.then(|| Tensor::from_parts(inp.shape().to_vec(), g)))
                .collect()
        }))
    }
}
