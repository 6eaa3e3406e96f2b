//! Broadcasting binary ops and pointwise nonlinearities.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::value::strides_of;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
}

/// Trailing-dimension broadcast of two shapes (extents equal or one).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::shape(format!("shapes {a:?} and {b:?} do not broadcast")));
            }
        };
    }
    Ok(out)
}

/// Joint iteration plan over a broadcast output and two inputs: axes of extent
/// one are dropped, adjacent axes that stay contiguous for both inputs are
/// merged, and broadcast axes get stride zero.
pub(crate) struct Plan {
    dims: Vec<usize>,
    strides: Vec<[usize; 2]>,
}

impl Plan {
    pub(crate) fn new(out: &[usize], a: &[usize], b: &[usize]) -> Plan {
        let eff = |inp: &[usize]| -> Vec<usize> {
            let pad = out.len() - inp.len();
            let full: Vec<usize> = (0..out.len()).map(|d| if d < pad { 1 } else { inp[d - pad] }).collect();
            let st = strides_of(&full);
            (0..out.len()).map(|d| if full[d] == 1 { 0 } else { st[d] }).collect()
        };
        let (ea, eb) = (eff(a), eff(b));
        let mut dims: Vec<usize> = Vec::new();
        let mut strides: Vec<[usize; 2]> = Vec::new();
        for d in 0..out.len() {
            if out[d] == 1 {
                continue;
            }
            let st = [ea[d], eb[d]];
            if let (Some(ld), Some(ls)) = (dims.last_mut(), strides.last_mut()) {
                if ls[0] == st[0] * out[d] && ls[1] == st[1] * out[d] {
                    *ld *= out[d];
                    *ls = st;
                    continue;
                }
            }
            dims.push(out[d]);
            strides.push(st);
        }
        Plan { dims, strides }
    }

    /// Calls `f(out_offset, a_offset, b_offset, len, a_step, b_step)` once per innermost run.
    #[inline]
    pub(crate) fn walk(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let r = self.dims.len();
        if r == 0 {
            f(0, 0, 0, 1, 0, 0);
            return;
        }
        let (len, [sa, sb]) = (self.dims[r - 1], self.strides[r - 1]);
        let outer = &self.dims[..r - 1];
        let runs: usize = outer.iter().product();
        let mut idx = vec![0usize; r - 1];
        let (mut oa, mut ob) = (0usize, 0usize);
        for run in 0..runs {
            f(run * len, oa, ob, len, sa, sb);
            for d in (0..r - 1).rev() {
                idx[d] += 1;
                oa += self.strides[d][0];
                ob += self.strides[d][1];
                if idx[d] < outer[d] {
                    break;
                }
                oa -= self.strides[d][0] * outer[d];
                ob -= self.strides[d][1] * outer[d];
                idx[d] = 0;
            }
        }
    }
}

fn apply<S: Scalar>(plan: &Plan, n: usize, ad: &[S], bd: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    let mut out = vec![S::zero(); n];
    plan.walk(|o, ia, ib, len, sa, sb| {
        let dst = &mut out[o..o + len];
        match (sa, sb) {
            (1, 1) => {
                for ((d, &x), &y) in dst.iter_mut().zip(&ad[ia..ia + len]).zip(&bd[ib..ib + len]) {
                    *d = f(x, y);
                }
            }
            (1, 0) => {
                let y = bd[ib];
                for (d, &x) in dst.iter_mut().zip(&ad[ia..ia + len]) {
                    *d = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[ia];
                for (d, &y) in dst.iter_mut().zip(&bd[ib..ib + len]) {
                    *d = f(x, y);
                }
            }
            _ => {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = f(ad[ia + j * sa], bd[ib + j * sb]);
                }
            }
        }
    });
    out
}

/// Gradient of input `side` (0 or 1): `Σ g · w` over the broadcast positions,
/// where `w` is the other operand's value (`other = Some`) or the constant `c`.
fn reduce_to<S: Scalar>(plan: &Plan, g: &[S], side: usize, shape: &[usize], other: Option<&[S]>, c: S) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let mut out = vec![S::zero(); n];
    plan.walk(|o, ia, ib, len, sa, sb| {
        let (it, st, io, so) = if side == 0 { (ia, sa, ib, sb) } else { (ib, sb, ia, sa) };
        let gs = &g[o..o + len];
        match (other, st, so) {
            (None, 1, _) => {
                for (d, &gj) in out[it..it + len].iter_mut().zip(gs) {
                    *d += gj * c;
                }
            }
            (None, 0, _) => {
                let acc: S = gs.iter().copied().sum();
                out[it] += acc * c;
            }
            (Some(w), 1, 1) => {
                for ((d, &gj), &wj) in out[it..it + len].iter_mut().zip(gs).zip(&w[io..io + len]) {
                    *d += gj * wj;
                }
            }
            (Some(w), 1, 0) => {
                let wv = w[io];
                for (d, &gj) in out[it..it + len].iter_mut().zip(gs) {
                    *d += gj * wv;
                }
            }
            (Some(w), 0, 1) => {
                let acc: S = gs.iter().zip(&w[io..io + len]).map(|(&gj, &wj)| gj * wj).sum();
                out[it] += acc;
            }
            (w, _, _) => {
                for (j, &gj) in gs.iter().enumerate() {
                    let wj = w.map_or(c, |w| w[io + j * so]);
                    out[it + j * st] += gj * wj;
                }
            }
        }
    });
    Tensor::from_parts(shape.to_vec(), out)
}

fn binary<'g, S: Scalar>(a: Var<'g, S>, b: Var<'g, S>, kind: ElementwiseKind) -> Result<Var<'g, S>> {
    a.check_same_graph(&b);
    let av = a.value();
    let bv = b.value();
    let out_shape = broadcast_shape(av.shape(), bv.shape())?;
    let plan = Plan::new(&out_shape, av.shape(), bv.shape());
    let n: usize = out_shape.iter().product();
    let (ad, bd) = (av.data(), bv.data());
    let data = match kind {
        ElementwiseKind::Add => apply(&plan, n, ad, bd, |x, y| x + y),
        ElementwiseKind::Sub => apply(&plan, n, ad, bd, |x, y| x - y),
        ElementwiseKind::Mul => apply(&plan, n, ad, bd, |x, y| x * y),
        _ => unreachable!(),
    };
    crate::instrument::record(n as u64);
    let out = Tensor::from_parts(out_shape, data);
    Ok(a.graph.record(out, &[a, b], move |ctx| {
        let g = ctx.grad.data();
        let (a_in, b_in) = (&ctx.inputs[0], &ctx.inputs[1]);
        let one = S::one();
        let ga = ctx.needs[0].then(|| match kind {
            ElementwiseKind::Mul => reduce_to(&plan, g, 0, a_in.shape(), Some(b_in.data()), one),
            _ => reduce_to(&plan, g, 0, a_in.shape(), None, one),
        });
        let gb = ctx.needs[1].then(|| match kind {
            ElementwiseKind::Mul => reduce_to(&plan, g, 1, b_in.shape(), Some(a_in.data()), one),
            ElementwiseKind::Sub => reduce_to(&plan, g, 1, b_in.shape(), None, -one),
            _ => reduce_to(&plan, g, 1, b_in.shape(), None, one),
        });
        vec![ga, gb]
    }))
}

fn unary<'g, S: Scalar>(a: Var<'g, S>, kind: ElementwiseKind) -> Var<'g, S> {
    let av = a.value();
    let out = match kind {
        ElementwiseKind::Relu => av.map(|x| if x > S::zero() { x } else { S::zero() }),
        ElementwiseKind::Sigmoid => av.map(sigmoid),
        ElementwiseKind::Tanh => av.map(|x| x.tanh()),
        _ => unreachable!(),
    };
    a.graph.record(out, &[a], move |ctx| {
        let g = ctx.grad.data();
        let y = ctx.output.data();
        let x = ctx.inputs[0].data();
        let data: Vec<S> = match kind {
            ElementwiseKind::Relu => {
                g.iter().zip(x).map(|(&g, &x)| if x > S::zero() { g } else { S::zero() }).collect()
            }
            ElementwiseKind::Sigmoid => {
                g.iter().zip(y).map(|(&g, &y)| g * y * (S::one() - y)).collect()
            }
            ElementwiseKind::Tanh => g.iter().zip(y).map(|(&g, &y)| g * (S::one() - y * y)).collect(),
            _ => unreachable!(),
        };
        vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))]
    })
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    /// Dispatch by kind; `rhs` is required for binary kinds and ignored otherwise.
    pub fn elementwise(self, kind: ElementwiseKind, rhs: Option<Var<'g, S>>) -> Result<Var<'g, S>> {
        match kind {
            ElementwiseKind::Add | ElementwiseKind::Sub | ElementwiseKind::Mul => {
                let rhs = rhs.ok_or_else(|| Error::shape(format!("{kind:?} needs two operands")))?;
                binary(self, rhs, kind)
            }
            _ => Ok(unary(self, kind)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g, S>) -> Result<Var<'g, S>> {
        binary(self, rhs, ElementwiseKind::Add)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g, S>) -> Result<Var<'g, S>> {
        binary(self, rhs, ElementwiseKind::Sub)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g, S>) -> Result<Var<'g, S>> {
        binary(self, rhs, ElementwiseKind::Mul)
    }

    pub fn relu(self) -> Var<'g, S> {
        unary(self, ElementwiseKind::Relu)
    }

    pub fn sigmoid(self) -> Var<'g, S> {
        unary(self, ElementwiseKind::Sigmoid)
    }

    pub fn tanh(self) -> Var<'g, S> {
        unary(self, ElementwiseKind::Tanh)
    }

    /// Multiply by a constant.
    pub fn scale(self, c: S) -> Var<'g, S> {
        let out = self.value().map(|x| x * c);
        self.graph.record(out, &[self], move |ctx| vec![Some(ctx.grad.map(|g| g * c))])
    }
}
