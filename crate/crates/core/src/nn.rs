//! Parameterized layers built on the graph ops.

use rand::Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Conv3dSpec, Graph, Param, ParamRef, Tensor, Var};

/// Anything owning trainable or persistent tensors.
pub trait Parameterized<S: Scalar> {
    fn params(&self) -> Vec<ParamRef<S>>;
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Kaiming-style uniform initialization with bound `sqrt(6 / fan_in)`.
pub fn kaiming<S: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Batch normalization over every axis except `channel_axis`, with running
/// statistics kept as buffers.
#[derive(Debug)]
pub struct BatchNorm<S: Scalar> {
    pub gamma: ParamRef<S>,
    pub beta: ParamRef<S>,
    pub running_mean: ParamRef<S>,
    pub running_var: ParamRef<S>,
    pub channel_axis: usize,
    pub eps: S,
    pub momentum: S,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(prefix: &str, channels: usize, channel_axis: usize) -> Self {
        BatchNorm {
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::ones(&[channels])),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros(&[channels])),
            running_mean: Param::buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::buffer(format!("{prefix}.running_var"), Tensor::ones(&[channels])),
            channel_axis,
            eps: S::lit(BN_EPS),
            momentum: S::lit(BN_MOMENTUM),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>, training: bool) -> Result<Var<'g, S>> {
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        if training {
            let shape = x.shape();
            let pop: usize = shape.iter().enumerate().filter(|(i, _)| *i != self.channel_axis).map(|(_, d)| d).product();
            let (y, mean, var) = x.batch_norm_train(gamma, beta, self.channel_axis, self.eps)?;
            let m = self.momentum;
            let unbias = S::from_usize_lossy(pop) / S::from_usize_lossy(pop - 1);
            self.running_mean.update(|rm| {
                for (r, &b) in rm.data_mut().iter_mut().zip(&mean) {
                    *r = (S::one() - m) * *r + m * b;
                }
            });
            self.running_var.update(|rv| {
                for (r, &b) in rv.data_mut().iter_mut().zip(&var) {
                    *r = (S::one() - m) * *r + m * b * unbias;
                }
            });
            Ok(y)
        } else {
            let mean = self.running_mean.snapshot();
            let var = self.running_var.snapshot();
            x.batch_norm_eval(gamma, beta, self.channel_axis, mean.data(), var.data(), self.eps)
        }
    }
}

impl<S: Scalar> Parameterized<S> for BatchNorm<S> {
    fn params(&self) -> Vec<ParamRef<S>> {
        vec![self.gamma.clone(), self.beta.clone(), self.running_mean.clone(), self.running_var.clone()]
    }
}

/// Affine map `x · w + b` on row vectors.
#[derive(Clone, Debug)]
pub struct Linear<S: Scalar> {
    pub weight: ParamRef<S>,
    pub bias: Option<ParamRef<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        Linear {
            weight: Param::new(format!("{name}.w"), kaiming(&[d_in, d_out], d_in, rng)),
            bias: bias.then(|| Param::new(format!("{name}.b"), Tensor::zeros(&[d_out]))),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        x.matmul_fc(g.param(&self.weight), self.bias.as_ref().map(|b| g.param(b)))
    }
}

impl<S: Scalar> Parameterized<S> for Linear<S> {
    fn params(&self) -> Vec<ParamRef<S>> {
        let mut v = vec![self.weight.clone()];
        v.extend(self.bias.clone());
        v
    }
}

/// Grouped 3-D convolution layer on `[C, T, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv3d<S: Scalar> {
    pub weight: ParamRef<S>,
    pub bias: Option<ParamRef<S>>,
    pub spec: Conv3dSpec,
}

impl<S: Scalar> Conv3d<S> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: [usize; 3],
        spec: Conv3dSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let cig = c_in / spec.groups;
        let fan_in = cig * kernel.iter().product::<usize>();
        Conv3d {
            weight: Param::new(
                format!("{name}.w"),
                kaiming(&[c_out, cig, kernel[0], kernel[1], kernel[2]], fan_in, rng),
            ),
            bias: bias.then(|| Param::new(format!("{name}.b"), Tensor::zeros(&[c_out]))),
            spec,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        x.conv3d(g.param(&self.weight), self.bias.as_ref().map(|b| g.param(b)), self.spec)
    }
}

impl<S: Scalar> Parameterized<S> for Conv3d<S> {
    fn params(&self) -> Vec<ParamRef<S>> {
        let mut v = vec![self.weight.clone()];
        v.extend(self.bias.clone());
        v
    }
}

/// Temporal convolution on `[C, T]` with same padding.
#[derive(Clone, Debug)]
pub struct Conv1d<S: Scalar> {
    pub weight: ParamRef<S>,
    pub bias: Option<ParamRef<S>>,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, c_in: usize, c_out: usize, k: usize, bias: bool, rng: &mut R) -> Self {
        Conv1d {
            weight: Param::new(format!("{name}.w"), kaiming(&[c_out, c_in, k], c_in * k, rng)),
            bias: bias.then(|| Param::new(format!("{name}.b"), Tensor::zeros(&[c_out]))),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        x.conv1d_same(g.param(&self.weight), self.bias.as_ref().map(|b| g.param(b)))
    }
}

impl<S: Scalar> Parameterized<S> for Conv1d<S> {
    fn params(&self) -> Vec<ParamRef<S>> {
        let mut v = vec![self.weight.clone()];
        v.extend(self.bias.clone());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bn_eval_with_identity_stats_is_identity() {
        let bn = BatchNorm::<f64>::new("bn", 2, 1);
        let g = Graph::new();
        let x = g.input(Tensor::from_f64(&[2, 2], &[0.3, -1.2, 4.0, 2.0]).unwrap());
        let y = bn.forward(&g, x, false).unwrap();
        assert!(y.value().max_abs_diff(&x.value()) < 1e-4);
    }

    #[test]
    fn bn_training_updates_running_stats() {
        let bn = BatchNorm::<f64>::new("bn", 1, 1);
        let g = Graph::new();
        let x = g.input(Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap());
        bn.forward(&g, x, true).unwrap();
        assert!((bn.running_mean.value().data()[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((bn.running_var.value().data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
