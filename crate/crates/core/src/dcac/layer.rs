use rand::Rng;

use crate::dcac::config::DcacConfig;
use crate::error::{Error, Result};
use crate::instrument::labeled;
use crate::nn::{kaiming, BatchNorm, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{Conv3dSpec, Graph, Param, ParamRef, Tensor, Var};

/// Labels under which the instrumented forward reports its work; they name
/// the terms of the analytic cost model one-to-one.
pub mod terms {
    pub const UNFOLD: &str = "Unfold";
    pub const GAP: &str = "GAP";
    pub const FC: &str = "FC";
    pub const BN: &str = "BN";
    pub const FCS: &str = "FCs";
    pub const MUL1: &str = "Mul1";
    pub const CONV1: &str = "Conv1";
    pub const GAP_CONTEXT: &str = "GAP (context)";
    pub const UNFOLD_CONTEXT: &str = "Unfold (context)";
    pub const CONV2: &str = "Conv2";
    pub const MUL2: &str = "Mul2";
    pub const CONV3D: &str = "Conv3D";
    pub const STATIC: &str = "Static";

    pub const DYNAMIC: [&str; 12] =
        [UNFOLD, GAP, FC, BN, FCS, MUL1, CONV1, GAP_CONTEXT, UNFOLD_CONTEXT, CONV2, MUL2, CONV3D];
}

/// Per-frame attention factors, each row belonging to one frame.
#[derive(Clone, Copy, Debug)]
pub struct AttentionFactors<'g, S: Scalar> {
    /// `[T, C_o]`, sigmoid; scales the output-channel kernel axis.
    pub alpha_f: Var<'g, S>,
    /// `[T, C_i/G]`, sigmoid; scales the input-channel kernel axis.
    pub alpha_c: Var<'g, S>,
    /// `[T, k_t]`, sigmoid; scales the temporal kernel axis.
    pub alpha_t: Var<'g, S>,
    /// `[T, n]`, softmax over experts.
    pub alpha_w: Var<'g, S>,
}

/// Learnable residual weight, zero at construction so the block starts as identity.
#[derive(Debug)]
pub struct ResidualGate<S: Scalar> {
    pub alpha: ParamRef<S>,
}

impl<S: Scalar> ResidualGate<S> {
    pub fn new(name: &str) -> Self {
        ResidualGate { alpha: Param::new(format!("{name}.alpha"), Tensor::zeros(&[1])) }
    }
}

/// Dual-branch convolution whose dynamic branch uses one generated kernel per frame.
#[derive(Debug)]
pub struct Dcac<S: Scalar> {
    pub cfg: DcacConfig,
    pub static_weight: ParamRef<S>,
    pub experts: Vec<ParamRef<S>>,
    pub fc_shared: ParamRef<S>,
    pub bn: BatchNorm<S>,
    pub fc_f: ParamRef<S>,
    pub fc_c: ParamRef<S>,
    pub fc_t: ParamRef<S>,
    pub fc_w: ParamRef<S>,
    pub conv1: ParamRef<S>,
    pub conv2: ParamRef<S>,
    pub gate: ResidualGate<S>,
}

impl<S: Scalar> Dcac<S> {
    /// Build with seed-controlled fan-in initialization. Parameter names are
    /// `<prefix>.experts.<i>`, `<prefix>.fc_shared.w` and so on.
    pub fn new<R: Rng + ?Sized>(prefix: &str, cfg: DcacConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let ks = cfg.kernel_shape();
        let fan = cfg.cin_per_group() * cfg.kernel_volume();
        let hid = cfg.hidden();
        let [kt, kh, kw] = cfg.kernel;
        let static_weight = Param::new(format!("{prefix}.static.w"), kaiming(&ks, fan, rng));
        let experts = (0..cfg.experts)
            .map(|i| Param::new(format!("{prefix}.experts.{i}"), kaiming(&ks, fan, rng)))
            .collect();
        let p = |name: &str, shape: &[usize], fan_in: usize, rng: &mut R| {
            Param::new(format!("{prefix}.{name}"), kaiming(shape, fan_in, rng))
        };
        Ok(Dcac {
            cfg,
            static_weight,
            experts,
            fc_shared: p("fc_shared.w", &[cfg.c_in, hid], cfg.c_in, rng),
            bn: BatchNorm::new(&format!("{prefix}.bn"), hid, 1),
            fc_f: p("fc_f.w", &[hid, cfg.c_out], hid, rng),
            fc_c: p("fc_c.w", &[hid, cfg.cin_per_group()], hid, rng),
            fc_t: p("fc_t.w", &[hid, kt], hid, rng),
            fc_w: p("fc_w.w", &[hid, cfg.experts], hid, rng),
            conv1: p("conv1.w", &[cfg.c_in, cfg.c_in, cfg.context_kernel, 1, 1], cfg.c_in * cfg.context_kernel, rng),
            conv2: p("conv2.w", &[cfg.c_in, cfg.c_out * cfg.cin_per_group() * kh * kw], cfg.c_in, rng),
            gate: ResidualGate::new(prefix),
        })
    }

    fn check_input(&self, x: &Var<'_, S>) -> Result<[usize; 4]> {
        let s = x.shape();
        if s.len() != 4 || s[0] != self.cfg.c_in {
            return Err(Error::shape(format!("DCAC expects [{}, T, H, W], got {s:?}", self.cfg.c_in)));
        }
        Ok([s[0], s[1], s[2], s[3]])
    }

    /// Pooled frame descriptors `[T, C_i]` → attention factors → modulated
    /// expert mixture `[T, C_o, C_i/G, k_t, k_h, k_w]`.
    pub fn intra_frame_attention<'g>(
        &self,
        g: &'g Graph<S>,
        x: Var<'g, S>,
        training: bool,
    ) -> Result<(AttentionFactors<'g, S>, Var<'g, S>)> {
        let [c, t, _, _] = self.check_input(&x)?;
        let cfg = &self.cfg;
        let pooled = labeled(terms::GAP, || x.global_avg_pool(&[2, 3]))?;
        let desc = pooled.reshape(&[c, t])?.t()?;
        let hidden = labeled(terms::FC, || desc.matmul(g.param(&self.fc_shared)))?;
        let hidden = labeled(terms::BN, || self.bn.forward(g, hidden, training))?.relu();
        let (alpha_f, alpha_c, alpha_t, alpha_w) = labeled(terms::FCS, || -> Result<_> {
            Ok((
                hidden.matmul(g.param(&self.fc_f))?.sigmoid(),
                hidden.matmul(g.param(&self.fc_c))?.sigmoid(),
                hidden.matmul(g.param(&self.fc_t))?.sigmoid(),
                hidden.matmul(g.param(&self.fc_w))?.softmax(1)?,
            ))
        })?;
        let [co, cig, kt, kh, kw] = cfg.kernel_shape();
        let bank: Vec<Var<'g, S>> = self
            .experts
            .iter()
            .map(|e| g.param(e).reshape(&[1, cfg.kernel_numel()]))
            .collect::<Result<_>>()?;
        let bank = Var::concat(&bank, 0)?;
        let mixed = labeled(terms::MUL1, || alpha_w.matmul(bank))?.reshape(&[t, co, cig, kt, kh, kw])?;
        let w_intra = mixed
            .mul(alpha_f.reshape(&[t, co, 1, 1, 1, 1])?)?
            .mul(alpha_c.reshape(&[t, 1, cig, 1, 1, 1])?)?
            .mul(alpha_t.reshape(&[t, 1, 1, kt, 1, 1])?)?;
        Ok((AttentionFactors { alpha_f, alpha_c, alpha_t, alpha_w }, w_intra))
    }

    /// Context-initialized kernels `[T, C_o, C_i/G, k_t, k_h, k_w]`: temporal
    /// conv, spatial pooling, a `k_t` window around each frame, and a pointwise
    /// projection of every window position to one kernel slice.
    pub fn inter_frame_context<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        let [c, t, _, _] = self.check_input(&x)?;
        let cfg = &self.cfg;
        let [co, cig, kt, kh, kw] = cfg.kernel_shape();
        let spec = Conv3dSpec::same([cfg.context_kernel, 1, 1], 1);
        let ctx = labeled(terms::CONV1, || x.conv3d(g.param(&self.conv1), None, spec))?;
        let pooled = labeled(terms::GAP_CONTEXT, || ctx.global_avg_pool(&[2, 3]))?.reshape(&[c, t])?;
        let windows = labeled(terms::UNFOLD_CONTEXT, || pooled.unfold_time(kt))?;
        let rows = windows.permute(&[1, 2, 0])?.reshape(&[t * kt, c])?;
        let proj = labeled(terms::CONV2, || rows.matmul(g.param(&self.conv2)))?;
        proj.reshape(&[t, kt, co, cig, kh, kw])?.permute(&[0, 2, 3, 1, 4, 5])
    }

    /// `W_inter ⊙ W_intra`, one kernel per frame.
    pub fn cakg<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>, training: bool) -> Result<Var<'g, S>> {
        let (_, w_intra) = self.intra_frame_attention(g, x, training)?;
        let w_inter = self.inter_frame_context(g, x)?;
        labeled(terms::MUL2, || w_inter.mul(w_intra))
    }

    /// Dynamic plus static branch, sharing one unfolded input.
    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>, training: bool) -> Result<Var<'g, S>> {
        let w = self.cakg(g, x, training)?;
        self.forward_with_kernels(g, x, w)
    }

    /// Forward with externally supplied per-frame kernels `[T, C_o, C_i/G, k_t, k_h, k_w]`.
    pub fn forward_with_kernels<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>, w_cakg: Var<'g, S>) -> Result<Var<'g, S>> {
        let [_, t, _, _] = self.check_input(&x)?;
        let cfg = &self.cfg;
        let [co, cig, ..] = cfg.kernel_shape();
        let kvol = cfg.kernel_volume();
        let expect = [t, co, cig, cfg.kernel[0], cfg.kernel[1], cfg.kernel[2]];
        if w_cakg.shape() != expect {
            return Err(Error::shape(format!("dynamic kernels {:?}, expected {expect:?}", w_cakg.shape())));
        }
        let unfolded = labeled(terms::UNFOLD, || x.unfold3d(cfg.kernel))?;
        let dynamic = labeled(terms::CONV3D, || {
            unfolded.frame_conv(w_cakg.reshape(&[t, co, cig, kvol])?, cfg.groups)
        })?;
        let fixed = labeled(terms::STATIC, || {
            unfolded.frame_conv(g.param(&self.static_weight).reshape(&[co, cig, kvol])?, cfg.groups)
        })?;
        dynamic.add(fixed)
    }

    /// `x + α · DCAC(x)`.
    pub fn residual<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>, training: bool) -> Result<Var<'g, S>> {
        if self.cfg.c_in != self.cfg.c_out {
            return Err(Error::config(format!(
                "residual integration needs c_in == c_out, got {} and {}",
                self.cfg.c_in, self.cfg.c_out
            )));
        }
        let d = self.forward(g, x, training)?;
        self.apply_gate(g, x, d)
    }

    /// `x + α · d` for an already computed branch output `d`.
    pub fn apply_gate<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>, d: Var<'g, S>) -> Result<Var<'g, S>> {
        x.add(d.mul(g.param(&self.gate.alpha))?)
    }

    /// Trainable parameters plus batch-norm buffers, gate last.
    pub fn named_params(&self) -> Vec<ParamRef<S>> {
        let mut v = vec![self.static_weight.clone()];
        v.extend(self.experts.iter().cloned());
        v.push(self.fc_shared.clone());
        v.extend(self.bn.params());
        v.extend([self.fc_f.clone(), self.fc_c.clone(), self.fc_t.clone(), self.fc_w.clone()]);
        v.extend([self.conv1.clone(), self.conv2.clone(), self.gate.alpha.clone()]);
        v
    }
}

impl<S: Scalar> Parameterized<S> for Dcac<S> {
    fn params(&self) -> Vec<ParamRef<S>> {
        self.named_params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (Dcac<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = DcacConfig { c_in: 4, c_out: 4, groups: 4, kernel: [3, 1, 1], experts: 2, reduction: 2, context_kernel: 1 };
        let d = Dcac::new("dcac.t", cfg, &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 3, 2, 2], -1.0, 1.0, &mut rng);
        (d, x)
    }

    #[test]
    fn zero_heads_give_half_and_uniform_mixture() {
        let (d, x) = small();
        for p in [&d.fc_f, &d.fc_c, &d.fc_t, &d.fc_w] {
            let shape = p.value().shape().to_vec();
            p.set_value(Tensor::zeros(&shape));
        }
        let g = Graph::new();
        let (f, w_intra) = d.intra_frame_attention(&g, g.constant(x), true).unwrap();
        assert!(f.alpha_f.value().data().iter().all(|&v| v == 0.5));
        assert!(f.alpha_w.value().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let e0 = d.experts[0].snapshot();
        let e1 = d.experts[1].snapshot();
        let w = w_intra.value();
        let per = e0.numel();
        for t in 0..3 {
            for i in 0..per {
                let expect = 0.125 * 0.5 * (e0.data()[i] + e1.data()[i]);
                assert!((w.data()[t * per + i] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fresh_residual_is_identity() {
        let (d, x) = small();
        let g = Graph::new();
        let y = d.residual(&g, g.constant(x.clone()), true).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn residual_rejects_channel_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = DcacConfig { c_in: 4, c_out: 8, groups: 4, kernel: [3, 1, 1], experts: 2, reduction: 2, context_kernel: 1 };
        let d = Dcac::<f64>::new("d", cfg, &mut rng).unwrap();
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4, 3, 1, 1]));
        assert!(matches!(d.residual(&g, x, true), Err(Error::Config(_))));
        assert_eq!(d.forward(&g, x, true).unwrap().shape(), vec![8, 3, 1, 1]);
    }
}
