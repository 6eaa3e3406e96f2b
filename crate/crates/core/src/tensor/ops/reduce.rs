use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

impl<'g, S: Scalar> Var<'g, S> {
    /// Sum of all elements as a single-element tensor.
    pub fn sum(self) -> Var<'g, S> {
        let v = self.value();
        let out = Tensor::scalar(v.sum());
        let shape = v.shape().to_vec();
        self.graph.record(out, &[self], move |ctx| {
            vec![Some(Tensor::full(&shape, ctx.grad.data()[0]))]
        })
    }

    pub fn mean(self) -> Var<'g, S> {
        let n = S::from_usize_lossy(self.value().numel());
        self.sum().scale(S::one() / n)
    }

    /// Mean over `axes`, keeping each pooled axis with extent 1.
    pub fn global_avg_pool(self, axes: &[usize]) -> Result<Var<'g, S>> {
        let v = self.value();
        let shape = v.shape().to_vec();
        if axes.is_empty() {
            return Err(Error::shape("global_avg_pool needs at least one axis"));
        }
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(Error::shape(format!("pool axes {axes:?} invalid for {shape:?}")));
        }
        let mut out_shape = shape.clone();
        for &a in axes {
            out_shape[a] = 1;
        }
        let pooled: usize = axes.iter().map(|&a| shape[a]).product();
        let inv = S::one() / S::from_usize_lossy(pooled);
        let plan = super::elementwise::Plan::new(&shape, &shape, &out_shape);
        let n_out: usize = out_shape.iter().product();
        let mut acc = vec![S::zero(); n_out];
        let xd = v.data();
        plan.walk(|_, ia, ib, len, _, sb| {
            if sb == 0 {
                acc[ib] += xd[ia..ia + len].iter().copied().sum::<S>();
            } else {
                for j in 0..len {
                    acc[ib + j * sb] += xd[ia + j];
                }
            }
        });
        crate::instrument::record(v.numel() as u64);
        acc.iter_mut().for_each(|a| *a *= inv);
        let out = Tensor::from_parts(out_shape, acc);
        Ok(self.graph.record(out, &[self], move |ctx| {
            let gd = ctx.grad.data();
            let n: usize = shape.iter().product();
            let mut data = vec![S::zero(); n];
            plan.walk(|_, ia, ib, len, _, sb| {
                for j in 0..len {
                    data[ia + j] = gd[ib + j * sb] * inv;
                }
            });
            vec![Some(Tensor::from_parts(shape.clone(), data))]
        }))
    }
}
