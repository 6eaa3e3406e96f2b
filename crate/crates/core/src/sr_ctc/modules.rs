use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv1d, Conv3d, Linear, Parameterized};
use crate::scalar::Scalar;
use crate::tensor::{Conv3dSpec, Graph, ParamRef, Var};

/// Lightweight spatial downsampling: strided 2-D convolution to a `g × g`
/// grid, then global average pooling. Output `[T, d]`.
#[derive(Debug)]
pub struct Lsd<S: Scalar> {
    pub conv: Option<Conv3d<S>>,
    pub c_in: usize,
    pub d: usize,
    pub grid: usize,
}

impl<S: Scalar> Lsd<S> {
    /// `grid` is clamped to `min(grid, h)`. The convolution is omitted when the
    /// input is already `g × g` with `d` channels.
    pub fn new<R: Rng + ?Sized>(name: &str, c_in: usize, d: usize, hw: [usize; 2], grid: usize, rng: &mut R) -> Result<Self> {
        let [h, w] = hw;
        let g = grid.min(h);
        if g == 0 || h < g || w < g {
            return Err(Error::config(format!("spatial extent {h}×{w} is below the target grid {grid}")));
        }
        let conv = if h == g && w == g && c_in == d {
            None
        } else {
            let k = [1, h / g, w / g];
            let spec = Conv3dSpec { stride: k, padding: [0; 3], groups: 1 };
            Some(Conv3d::new(&format!("{name}.conv"), c_in, d, k, spec, true, rng))
        };
        Ok(Lsd { conv, c_in, d, grid: g })
    }

    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        let s = x.shape();
        if s.len() != 4 || s[0] != self.c_in {
            return Err(Error::shape(format!("LSD expects [{}, T, H, W], got {s:?}", self.c_in)));
        }
        if s[2] < self.grid || s[3] < self.grid {
            return Err(Error::config(format!("spatial extent {}×{} is below the grid {}", s[2], s[3], self.grid)));
        }
        let y = match &self.conv {
            Some(c) => c.forward(g, x)?,
            None => x,
        };
        let t = s[1];
        y.global_avg_pool(&[2, 3])?.reshape(&[self.d, t])?.t()
    }
}

impl<S: Scalar> Parameterized<S> for Lsd<S> {
    fn params(&self) -> Vec<ParamRef<S>> {
        self.conv.as_ref().map(|c| c.params()).unwrap_or_default()
    }
}

/// Lightweight temporal modeling: `conv k5 → ReLU → pool 2 → conv k5 → ReLU → pool 2`.
/// Maps `[T, d_in]` to `[⌊⌊T/2⌋/2⌋, d_out]`.
#[derive(Debug)]
pub struct Ltm<S: Scalar> {
    pub conv_a: Conv1d<S>,
    pub conv_b: Conv1d<S>,
}

pub const LTM_KERNEL: usize = 5;

impl<S: Scalar> Ltm<S> {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Ltm {
            conv_a: Conv1d::new(&format!("{name}.conv_a"), d_in, d_out, LTM_KERNEL, true, rng),
            conv_b: Conv1d::new(&format!("{name}.conv_b"), d_out, d_out, LTM_KERNEL, true, rng),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph<S>, x: Var<'g, S>) -> Result<Var<'g, S>> {
        let s = x.shape();
        if s.len() != 2 || s[0] < 4 {
            return Err(Error::shape(format!("LTM needs [T ≥ 4, d], got {s:?}")));
        }
        let y = self.conv_a.forward(g, x.t()?)?.relu().max_pool_time(2)?;
        let y = self.conv_b.forward(g, y)?.relu().max_pool_time(2)?;
        y.t()
    }
}

impl<S: Scalar> Parameterized<S> for Ltm<S> {
    fn params(&self) -> Vec<ParamRef<S>> {
        let mut v = self.conv_a.params();
        v.extend(self.conv_b.params());
        v
    }
}

/// Affine classifier followed by a per-frame log-softmax.
pub fn stage_logits<'g, S: Scalar>(g: &'g Graph<S>, x: Var<'g, S>, clf: &Linear<S>) -> Result<Var<'g, S>> {
    let d = clf.weight.value().shape()[0];
    let s = x.shape();
    if s.len() != 2 || s[1] != d {
        return Err(Error::shape(format!("classifier expects [T, {d}], got {s:?}")));
    }
    clf.forward(g, x)?.log_softmax(1)
}
