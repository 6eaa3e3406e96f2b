//! Softmax, affine maps and batch normalization.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::tensor::ops::shape::split_axis;
use crate::tensor::{Tensor, Var};

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

fn check_finite<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<()> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN input to {what}")));
    }
    Ok(())
}

/// Numerically stable softmax (or log-softmax) along `axis` of a raw tensor.
pub fn softmax_tensor<S: Scalar>(x: &Tensor<S>, axis: usize, log: bool) -> Result<Tensor<S>> {
    check_axis(x.shape(), axis)?;
    check_finite(x, "softmax")?;
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![S::zero(); xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let max = (0..n).map(|j| xd[at(j)]).fold(S::neg_infinity(), S::max);
            let sum: S = (0..n).map(|j| (xd[at(j)] - max).exp()).sum();
            let log_sum = sum.ln();
            for j in 0..n {
                let z = xd[at(j)] - max;
                out[at(j)] = if log { z - log_sum } else { z.exp() / sum };
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn softmax(self, axis: usize) -> Result<Var<'g, S>> {
        let v = self.value();
        let out = softmax_tensor(&v, axis, false)?;
        let (outer, n, inner) = split_axis(v.shape(), axis);
        Ok(self.graph.record(out, &[self], move |ctx| {
            let y = ctx.output.data();
            let g = ctx.grad.data();
            let mut dx = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * n * inner + j * inner + i;
                    let dot: S = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                    for j in 0..n {
                        dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), dx))]
        }))
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'g, S>> {
        let v = self.value();
        let out = softmax_tensor(&v, axis, true)?;
        let (outer, n, inner) = split_axis(v.shape(), axis);
        Ok(self.graph.record(out, &[self], move |ctx| {
            let y = ctx.output.data();
            let g = ctx.grad.data();
            let mut dx = vec![S::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * n * inner + j * inner + i;
                    let gsum: S = (0..n).map(|j| g[at(j)]).sum();
                    for j in 0..n {
                        dx[at(j)] = g[at(j)] - y[at(j)].exp() * gsum;
                    }
                }
            }
            vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), dx))]
        }))
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(self, w: Var<'g, S>) -> Result<Var<'g, S>> {
        self.check_same_graph(&w);
        let (xv, wv) = (self.value(), w.value());
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape(format!("matmul {xs:?} · {ws:?}")));
        }
        let (m, k, n) = (xs[0], xs[1], ws[1]);
        let mut out = vec![S::zero(); m * n];
        gemm_acc(xv.data(), wv.data(), &mut out, m, k, n);
        crate::instrument::record((m * k * n) as u64);
        let out = Tensor::from_parts(vec![m, n], out);
        Ok(self.graph.record(out, &[self, w], move |ctx| {
            let g = ctx.grad.data();
            let gx = ctx.needs[0].then(|| {
                let mut d = vec![S::zero(); m * k];
                gemm_nt_acc(g, ctx.inputs[1].data(), &mut d, m, k, n);
                Tensor::from_parts(vec![m, k], d)
            });
            let gw = ctx.needs[1].then(|| {
                let mut d = vec![S::zero(); k * n];
                gemm_tn_acc(ctx.inputs[0].data(), g, &mut d, m, k, n);
                Tensor::from_parts(vec![k, n], d)
            });
            vec![gx, gw]
        }))
    }

    /// Fully connected layer: `x · w (+ bias)` with `bias` broadcast over rows.
    pub fn matmul_fc(self, w: Var<'g, S>, bias: Option<Var<'g, S>>) -> Result<Var<'g, S>> {
        let y = self.matmul(w)?;
        match bias {
            Some(b) => {
                let n = y.shape()[1];
                if b.shape() != [n] {
                    return Err(Error::shape(format!("bias {:?} for output width {n}", b.shape())));
                }
                y.add(b)
            }
            None => Ok(y),
        }
    }

    /// Batch normalization with statistics over every axis except `channel_axis`.
    ///
    /// Returns the output plus the per-channel batch mean and biased variance.
    pub fn batch_norm_train(
        self,
        gamma: Var<'g, S>,
        beta: Var<'g, S>,
        channel_axis: usize,
        eps: S,
    ) -> Result<(Var<'g, S>, Vec<S>, Vec<S>)> {
        let v = self.value();
        let shape = v.shape().to_vec();
        check_axis(&shape, channel_axis)?;
        let (outer, c, inner) = split_axis(&shape, channel_axis);
        let pop = outer * inner;
        if pop < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batch norm needs population >= 2 per channel, got {pop}"
            )));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("batch norm affine parameters must have one entry per channel"));
        }
        let xd = v.data();
        let popf = S::from_usize_lossy(pop);
        let idx = move |o: usize, ch: usize, i: usize| o * c * inner + ch * inner + i;
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        for ch in 0..c {
            let mut s = S::zero();
            for o in 0..outer {
                for i in 0..inner {
                    s += xd[idx(o, ch, i)];
                }
            }
            mean[ch] = s / popf;
            let mut q = S::zero();
            for o in 0..outer {
                for i in 0..inner {
                    let d = xd[idx(o, ch, i)] - mean[ch];
                    q += d * d;
                }
            }
            var[ch] = q / popf;
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (gamma.value(), beta.value());
        let mut xhat = vec![S::zero(); xd.len()];
        let mut out = vec![S::zero(); xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                for i in 0..inner {
                    let k = idx(o, ch, i);
                    xhat[k] = (xd[k] - mean[ch]) * inv_std[ch];
                    out[k] = xhat[k] * gv.data()[ch] + bv.data()[ch];
                }
            }
        }
        crate::instrument::record(xd.len() as u64);
        let out_t = Tensor::from_parts(shape.clone(), out);
        let y = self.graph.record(out_t, &[self, gamma, beta], move |ctx| {
            let g = ctx.grad.data();
            let gam = ctx.inputs[1].data();
            let mut dgamma = vec![S::zero(); c];
            let mut dbeta = vec![S::zero(); c];
            for o in 0..outer {
                for ch in 0..c {
                    for i in 0..inner {
                        let k = idx(o, ch, i);
                        dgamma[ch] += g[k] * xhat[k];
                        dbeta[ch] += g[k];
                    }
                }
            }
            let dx = ctx.needs[0].then(|| {
                let mut dx = vec![S::zero(); g.len()];
                for o in 0..outer {
                    for ch in 0..c {
                        let scale = gam[ch] * inv_std[ch] / popf;
                        for i in 0..inner {
                            let k = idx(o, ch, i);
                            dx[k] = scale * (popf * g[k] - dbeta[ch] - xhat[k] * dgamma[ch]);
                        }
                    }
                }
                Tensor::from_parts(shape.clone(), dx)
            });
            vec![
                dx,
                ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        });
        Ok((y, mean, var))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'g, S>,
        beta: Var<'g, S>,
        channel_axis: usize,
        mean: &[S],
        var: &[S],
        eps: S,
    ) -> Result<Var<'g, S>> {
        let v = self.value();
        let shape = v.shape().to_vec();
        check_axis(&shape, channel_axis)?;
        let (outer, c, inner) = split_axis(&shape, channel_axis);
        if gamma.shape() != [c] || beta.shape() != [c] || mean.len() != c || var.len() != c {
            return Err(Error::shape("batch norm statistics must have one entry per channel"));
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let (gv, bv) = (gamma.value(), beta.value());
        let xd = v.data();
        let mut out = vec![S::zero(); xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                for i in 0..inner {
                    let k = o * c * inner + ch * inner + i;
                    out[k] = (xd[k] - mean[ch]) * inv_std[ch] * gv.data()[ch] + bv.data()[ch];
                }
            }
        }
        crate::instrument::record(xd.len() as u64);
        let out_t = Tensor::from_parts(shape.clone(), out);
        Ok(self.graph.record(out_t, &[self, gamma, beta], move |ctx| {
            let g = ctx.grad.data();
            let x = ctx.inputs[0].data();
            let gam = ctx.inputs[1].data();
            let mut dx = vec![S::zero(); g.len()];
            let mut dgamma = vec![S::zero(); c];
            let mut dbeta = vec![S::zero(); c];
            for o in 0..outer {
                for ch in 0..c {
                    for i in 0..inner {
                        let k = o * c * inner + ch * inner + i;
                        dx[k] = g[k] * gam[ch] * inv_std[ch];
                        dgamma[ch] += g[k] * (x[k] - mean[ch]) * inv_std[ch];
                        dbeta[ch] += g[k];
                    }
                }
            }
            vec![
                ctx.needs[0].then(|| Tensor::from_parts(shape.clone(), dx)),
                ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        }))
    }
}
