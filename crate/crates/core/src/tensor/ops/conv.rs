//! Convolution-family ops on channel-first feature maps `[C, T, H, W]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use crate::tensor::{Tensor, Var};

/// Geometry of a grouped 3-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Conv3dSpec {
    /// Stride 1 with `(k - 1) / 2` padding on every axis.
    pub fn same(kernel: [usize; 3], groups: usize) -> Self {
        Conv3dSpec { stride: [1; 3], padding: kernel.map(|k| (k - 1) / 2), groups }
    }
}

struct ConvGeom {
    c_out: usize,
    cig: usize,
    cog: usize,
    groups: usize,
    in_ext: [usize; 3],
    k: [usize; 3],
    out_ext: [usize; 3],
    spec: Conv3dSpec,
}

impl ConvGeom {
    fn kvol(&self) -> usize {
        self.k.iter().product()
    }
    fn lout(&self) -> usize {
        self.out_ext.iter().product()
    }
    fn lin(&self) -> usize {
        self.in_ext.iter().product()
    }

    /// True when the column matrix is the input itself (1×1×1 kernel, unit stride, no padding).
    fn is_pointwise(&self) -> bool {
        self.kvol() == 1 && self.spec.stride == [1; 3] && self.spec.padding == [0; 3]
    }

    /// For each axis and kernel offset, the valid output range `[lo, hi)` and the
    /// signed source offset so that `src = o·stride + off`.
    fn source_ranges(&self) -> [Vec<(usize, usize, isize)>; 3] {
        std::array::from_fn(|d| {
            let (st, pad, n_in) = (self.spec.stride[d], self.spec.padding[d] as isize, self.in_ext[d] as isize);
            (0..self.k[d])
                .map(|a| {
                    let off = a as isize - pad;
                    let valid = |o: usize| {
                        let p = (o * st) as isize + off;
                        p >= 0 && p < n_in
                    };
                    let lo = (0..self.out_ext[d]).find(|&o| valid(o)).unwrap_or(self.out_ext[d]);
                    let hi = (lo..self.out_ext[d]).find(|&o| !valid(o)).unwrap_or(self.out_ext[d]);
                    (lo, hi, off)
                })
                .collect()
        })
    }

    /// Visits every contiguous output run of the column matrix for group `g`:
    /// `f(col_offset, src_offset, src_step, len)`.
    fn col_walk(&self, g: usize, ranges: &[Vec<(usize, usize, isize)>; 3], mut f: impl FnMut(usize, usize, usize, usize)) {
        let (kvol, lout, lin) = (self.kvol(), self.lout(), self.lin());
        let [_, hi, wi] = self.in_ext;
        let [_, ho, wo] = self.out_ext;
        let [s0, s1, s2] = self.spec.stride;
        for ci in 0..self.cig {
            let xc = (g * self.cig + ci) * lin;
            for (a, &(t_lo, t_hi, t_off)) in ranges[0].iter().enumerate() {
                for (b, &(h_lo, h_hi, h_off)) in ranges[1].iter().enumerate() {
                    for (c, &(w_lo, w_hi, w_off)) in ranges[2].iter().enumerate() {
                        if w_lo >= w_hi {
                            continue;
                        }
                        let r = ci * kvol + (a * self.k[1] + b) * self.k[2] + c;
                        if ho * wo == 1 {
                            if t_lo < t_hi && h_lo < h_hi {
                                let (sh, sw) = (h_off as usize, w_off as usize);
                                let src = xc + (((t_lo * s0) as isize + t_off) as usize * hi + sh) * wi + sw;
                                f(r * lout + t_lo, src, s0 * hi * wi, t_hi - t_lo);
                            }
                            continue;
                        }
                        for ot in t_lo..t_hi {
                            let st = ((ot * s0) as isize + t_off) as usize;
                            for oh in h_lo..h_hi {
                                let sh = ((oh * s1) as isize + h_off) as usize;
                                let src = xc + (st * hi + sh) * wi + ((w_lo * s2) as isize + w_off) as usize;
                                let dst = r * lout + (ot * ho + oh) * wo + w_lo;
                                f(dst, src, s2, w_hi - w_lo);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Column matrix `[cig·K, L]` for group `g`.
    fn im2col<S: Scalar>(&self, x: &[S], g: usize, ranges: &[Vec<(usize, usize, isize)>; 3]) -> Vec<S> {
        let mut cols = vec![S::zero(); self.cig * self.kvol() * self.lout()];
        self.col_walk(g, ranges, |dst, src, step, len| {
            let out = &mut cols[dst..dst + len];
            if step == 1 {
                out.copy_from_slice(&x[src..src + len]);
            } else {
                for (i, v) in out.iter_mut().enumerate() {
                    *v = x[src + i * step];
                }
            }
        });
        cols
    }

    fn col2im<S: Scalar>(&self, cols: &[S], g: usize, dx: &mut [S], ranges: &[Vec<(usize, usize, isize)>; 3]) {
        self.col_walk(g, ranges, |dst, src, step, len| {
            for (i, &v) in cols[dst..dst + len].iter().enumerate() {
                dx[src + i * step] += v;
            }
        });
    }
}

fn conv_geom(xs: &[usize], ws: &[usize], spec: Conv3dSpec) -> Result<ConvGeom> {
    if xs.len() != 4 || ws.len() != 5 {
        return Err(Error::shape(format!("conv3d expects x [C,T,H,W] and w [Co,Ci/G,kt,kh,kw], got {xs:?}, {ws:?}")));
    }
    let g = spec.groups;
    if g == 0 || !xs[0].is_multiple_of(g) || !ws[0].is_multiple_of(g) {
        return Err(Error::shape(format!("groups {g} must divide C_in {} and C_out {}", xs[0], ws[0])));
    }
    if ws[1] != xs[0] / g {
        return Err(Error::shape(format!("weight expects {} input channels per group, input has {}", ws[1], xs[0] / g)));
    }
    let mut out_ext = [0; 3];
    for d in 0..3 {
        let span = xs[d + 1] + 2 * spec.padding[d];
        if spec.stride[d] == 0 || span < ws[d + 2] {
            return Err(Error::shape(format!("kernel {ws:?} does not fit input {xs:?}")));
        }
        out_ext[d] = (span - ws[d + 2]) / spec.stride[d] + 1;
    }
    Ok(ConvGeom {
        c_out: ws[0],
        cig: xs[0] / g,
        cog: ws[0] / g,
        groups: g,
        in_ext: [xs[1], xs[2], xs[3]],
        k: [ws[2], ws[3], ws[4]],
        out_ext,
        spec,
    })
}

/// Grouped 3-D convolution computed directly with scalar loops; shares no code
/// with the im2col path and exists to cross-check it.
pub fn conv3d_reference<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, bias: Option<&Tensor<S>>, spec: Conv3dSpec) -> Result<Tensor<S>> {
    let geo = conv_geom(x.shape(), w.shape(), spec)?;
    let [to, ho, wo] = geo.out_ext;
    let mut out = Tensor::zeros(&[geo.c_out, to, ho, wo]);
    for o in 0..geo.c_out {
        let g = o / geo.cog;
        for t in 0..to {
            for h in 0..ho {
                for ww in 0..wo {
                    let mut s = bias.map(|b| b.data()[o]).unwrap_or_else(S::zero);
                    for ci in 0..geo.cig {
                        for a in 0..geo.k[0] {
                            for b in 0..geo.k[1] {
                                for c in 0..geo.k[2] {
                                    let pt = (t * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                    let ph = (h * spec.stride[1] + b) as isize - spec.padding[1] as isize;
                                    let pw = (ww * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                                    if pt < 0 || ph < 0 || pw < 0 {
                                        continue;
                                    }
                                    let (pt, ph, pw) = (pt as usize, ph as usize, pw as usize);
                                    if pt >= geo.in_ext[0] || ph >= geo.in_ext[1] || pw >= geo.in_ext[2] {
                                        continue;
                                    }
                                    s += w.at(&[o, ci, a, b, c]) * x.at(&[g * geo.cig + ci, pt, ph, pw]);
                                }
                            }
                        }
                    }
                    let idx = ((o * to + t) * ho + h) * wo + ww;
                    out.data_mut()[idx] = s;
                }
            }
        }
    }
    Ok(out)
}

/// Same-padded sliding-window geometry of `[C, T, H, W]` read through a
/// zero-padded copy, so every window is a fixed offset table from its corner.
struct UnfoldGeom {
    c: usize,
    ext: [usize; 3],
    padded: [usize; 3],
    pad: [usize; 3],
    offsets: Vec<usize>,
}

impl UnfoldGeom {
    fn new(c: usize, ext: [usize; 3], kernel: [usize; 3]) -> Self {
        let pad = kernel.map(|k| k / 2);
        let padded = std::array::from_fn(|d| ext[d] + 2 * pad[d]);
        let mut offsets = Vec::with_capacity(kernel.iter().product());
        for a in 0..kernel[0] {
            for b in 0..kernel[1] {
                for cc in 0..kernel[2] {
                    offsets.push((a * padded[1] + b) * padded[2] + cc);
                }
            }
        }
        UnfoldGeom { c, ext, padded, pad, offsets }
    }

    fn padded_len(&self) -> usize {
        self.c * self.padded.iter().product::<usize>()
    }

    /// Index of the padded-buffer row start for channel `ci`, frame `t`, row `h` (unpadded coordinates).
    #[inline]
    fn padded_row(&self, ci: usize, t: usize, h: usize) -> usize {
        ((ci * self.padded[0] + t + self.pad[0]) * self.padded[1] + h + self.pad[1]) * self.padded[2] + self.pad[2]
    }

    fn pad<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let [t, h, w] = self.ext;
        let mut out = vec![S::zero(); self.padded_len()];
        for ci in 0..self.c {
            for ti in 0..t {
                for hi in 0..h {
                    let src = ((ci * t + ti) * h + hi) * w;
                    let dst = self.padded_row(ci, ti, hi);
                    out[dst..dst + w].copy_from_slice(&x[src..src + w]);
                }
            }
        }
        out
    }

    fn crop<S: Scalar>(&self, xp: &[S]) -> Vec<S> {
        let [t, h, w] = self.ext;
        let mut out = Vec::with_capacity(self.c * t * h * w);
        for ci in 0..self.c {
            for ti in 0..t {
                for hi in 0..h {
                    let src = self.padded_row(ci, ti, hi);
                    out.extend_from_slice(&xp[src..src + w]);
                }
            }
        }
        out
    }

    /// Calls `f(window_index, padded_corner)` in unfolded `[T, C, H, W]` order.
    #[inline]
    fn windows(&self, mut f: impl FnMut(usize, usize)) {
        let [t, h, w] = self.ext;
        let mut idx = 0;
        for ti in 0..t {
            for ci in 0..self.c {
                for hi in 0..h {
                    let corner = ((ci * self.padded[0] + ti) * self.padded[1] + hi) * self.padded[2];
                    for wi in 0..w {
                        f(idx, corner + wi);
                        idx += 1;
                    }
                }
            }
        }
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    /// Grouped 3-D convolution via per-group im2col and GEMM.
    pub fn conv3d(self, w: Var<'g, S>, bias: Option<Var<'g, S>>, spec: Conv3dSpec) -> Result<Var<'g, S>> {
        self.check_same_graph(&w);
        let (xv, wv) = (self.value(), w.value());
        let geo = conv_geom(xv.shape(), wv.shape(), spec)?;
        if let Some(b) = &bias {
            if b.shape() != [geo.c_out] {
                return Err(Error::shape(format!("conv bias {:?} for {} outputs", b.shape(), geo.c_out)));
            }
        }
        let (kvol, lout) = (geo.kvol(), geo.lout());
        let rows = geo.cig * kvol;
        let ranges = geo.source_ranges();
        let pointwise = geo.is_pointwise();
        let mut out = vec![S::zero(); geo.c_out * lout];
        for g in 0..geo.groups {
            let owned;
            let cols = if pointwise {
                &xv.data()[g * rows * lout..(g + 1) * rows * lout]
            } else {
                owned = geo.im2col(xv.data(), g, &ranges);
                &owned[..]
            };
            let wg = &wv.data()[g * geo.cog * rows..(g + 1) * geo.cog * rows];
            gemm_acc(wg, cols, &mut out[g * geo.cog * lout..(g + 1) * geo.cog * lout], geo.cog, rows, lout);
        }
        if let Some(b) = &bias {
            let bv = b.value();
            for (o, chunk) in out.chunks_mut(lout).enumerate() {
                let bo = bv.data()[o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
        crate::instrument::record((geo.c_out * rows * lout) as u64);
        let [to, ho, wo] = geo.out_ext;
        let out = Tensor::from_parts(vec![geo.c_out, to, ho, wo], out);
        let mut inputs = vec![self, w];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.graph.record(out, &inputs, move |ctx| {
            let gd = ctx.grad.data();
            let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let mut dx = ctx.needs[0].then(|| vec![S::zero(); x.len()]);
            let mut dw = ctx.needs[1].then(|| vec![S::zero(); w.len()]);
            for g in 0..geo.groups {
                let gg = &gd[g * geo.cog * lout..(g + 1) * geo.cog * lout];
                if let Some(dw) = dw.as_mut() {
                    let owned;
                    let cols = if pointwise {
                        &x[g * rows * lout..(g + 1) * rows * lout]
                    } else {
                        owned = geo.im2col(x, g, &ranges);
                        &owned[..]
                    };
                    gemm_nt_acc(gg, cols, &mut dw[g * geo.cog * rows..(g + 1) * geo.cog * rows], geo.cog, rows, lout);
                }
                if let Some(dx) = dx.as_mut() {
                    let wg = &w[g * geo.cog * rows..(g + 1) * geo.cog * rows];
                    if pointwise {
                        gemm_tn_acc(wg, gg, &mut dx[g * rows * lout..(g + 1) * rows * lout], geo.cog, rows, lout);
                    } else {
                        let mut dcols = vec![S::zero(); rows * lout];
                        gemm_tn_acc(wg, gg, &mut dcols, geo.cog, rows, lout);
                        geo.col2im(&dcols, g, dx, &ranges);
                    }
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)),
            ];
            if has_bias {
                grads.push(ctx.needs[2].then(|| {
                    Tensor::from_parts(vec![geo.c_out], gd.chunks(lout).map(|c| c.iter().copied().sum()).collect())
                }));
            }
            grads
        }))
    }

    /// Temporal 1-D convolution on `[C, T]` with kernel `[Co, Ci, k]` and `(k-1)/2` zero padding.
    pub fn conv1d_same(self, w: Var<'g, S>, bias: Option<Var<'g, S>>) -> Result<Var<'g, S>> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 2 || ws.len() != 3 {
            return Err(Error::shape(format!("conv1d expects [C,T] and [Co,Ci,k], got {xs:?}, {ws:?}")));
        }
        if ws[2].is_multiple_of(2) {
            return Err(Error::config(format!("conv1d kernel {} must be odd", ws[2])));
        }
        let x4 = self.reshape(&[xs[0], xs[1], 1, 1])?;
        let w5 = w.reshape(&[ws[0], ws[1], ws[2], 1, 1])?;
        let y = x4.conv3d(w5, bias, Conv3dSpec::same([ws[2], 1, 1], 1))?;
        y.reshape(&[ws[0], xs[1]])
    }

    /// Sliding-window expansion of `[C, T, H, W]` into `[T, C, H, W, kt·kh·kw]`
    /// with zero padding `(k-1)/2` per axis (window offsets row-major over kt, kh, kw).
    pub fn unfold3d(self, kernel: [usize; 3]) -> Result<Var<'g, S>> {
        let xv = self.value();
        let s = xv.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("unfold3d expects [C,T,H,W], got {s:?}")));
        }
        if kernel.iter().any(|&k| k % 2 == 0) {
            return Err(Error::config(format!("unfold kernel {kernel:?} must be odd")));
        }
        let [c, t, h, w] = [s[0], s[1], s[2], s[3]];
        let kvol: usize = kernel.iter().product();
        let geo = UnfoldGeom::new(c, [t, h, w], kernel);
        let xp = geo.pad(xv.data());
        let mut out = vec![S::zero(); t * c * h * w * kvol];
        geo.windows(|i, corner| {
            for (o, &off) in out[i * kvol..(i + 1) * kvol].iter_mut().zip(&geo.offsets) {
                *o = xp[corner + off];
            }
        });
        crate::instrument::record(out.len() as u64);
        let out_t = Tensor::from_parts(vec![t, c, h, w, kvol], out);
        Ok(self.graph.record(out_t, &[self], move |ctx| {
            let g = ctx.grad.data();
            let mut dxp = vec![S::zero(); geo.padded_len()];
            geo.windows(|i, corner| {
                for (&gv, &off) in g[i * kvol..(i + 1) * kvol].iter().zip(&geo.offsets) {
                    dxp[corner + off] += gv;
                }
            });
            vec![Some(Tensor::from_parts(vec![c, t, h, w], geo.crop(&dxp)))]
        }))
    }

    /// Per-frame convolution over an unfolded map.
    ///
    /// `self` is `[T, C_i, H, W, K]` from [`Var::unfold3d`]; `w` is either a
    /// per-frame bank `[T, C_o, C_i/G, K]` or one shared kernel `[C_o, C_i/G, K]`.
    /// Output is `[C_o, T, H, W]`.
    pub fn frame_conv(self, w: Var<'g, S>, groups: usize) -> Result<Var<'g, S>> {
        self.check_same_graph(&w);
        let (xv, wv) = (self.value(), w.value());
        let xs = xv.shape().to_vec();
        let ws = wv.shape().to_vec();
        if xs.len() != 5 {
            return Err(Error::shape(format!("frame_conv expects unfolded [T,C,H,W,K], got {xs:?}")));
        }
        let [t, c_in, h, wd, kvol] = [xs[0], xs[1], xs[2], xs[3], xs[4]];
        let per_frame = match ws.len() {
            4 if ws[0] == t => true,
            3 => false,
            _ => return Err(Error::shape(format!("frame_conv weight {ws:?} for {t} frames"))),
        };
        let wcore = if per_frame { &ws[1..] } else { &ws[..] };
        let c_out = wcore[0];
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 || wcore[1] != c_in / groups || wcore[2] != kvol {
            return Err(Error::shape(format!(
                "frame_conv weight {ws:?} incompatible with input {xs:?} and {groups} groups"
            )));
        }
        let (cig, cog) = (c_in / groups, c_out / groups);
        let hw = h * wd;
        let wframe = c_out * cig * kvol;
        let x = xv.data();
        let wdat = wv.data();
        let mut out = vec![S::zero(); c_out * t * hw];
        for ti in 0..t {
            let wt = if per_frame { &wdat[ti * wframe..(ti + 1) * wframe] } else { wdat };
            for o in 0..c_out {
                let g = o / cog;
                let orow = &mut out[(o * t + ti) * hw..(o * t + ti + 1) * hw];
                for ci in 0..cig {
                    let wk = &wt[(o * cig + ci) * kvol..(o * cig + ci + 1) * kvol];
                    let xc = g * cig + ci;
                    for (p, op) in orow.iter_mut().enumerate() {
                        let xk = &x[((ti * c_in + xc) * hw + p) * kvol..((ti * c_in + xc) * hw + p + 1) * kvol];
                        let mut s = S::zero();
                        for (&a, &b) in wk.iter().zip(xk) {
                            s += a * b;
                        }
                        *op += s;
                    }
                }
            }
        }
        crate::instrument::record((c_out * cig * kvol * t * hw) as u64);
        let out_t = Tensor::from_parts(vec![c_out, t, h, wd], out);
        Ok(self.graph.record(out_t, &[self, w], move |ctx| {
            let g_out = ctx.grad.data();
            let x = ctx.inputs[0].data();
            let wdat = ctx.inputs[1].data();
            let mut dx = ctx.needs[0].then(|| vec![S::zero(); x.len()]);
            let mut dw = ctx.needs[1].then(|| vec![S::zero(); wdat.len()]);
            for ti in 0..t {
                let woff = if per_frame { ti * wframe } else { 0 };
                for o in 0..c_out {
                    let g = o / cog;
                    let grow = &g_out[(o * t + ti) * hw..(o * t + ti + 1) * hw];
                    for ci in 0..cig {
                        let wbase = woff + (o * cig + ci) * kvol;
                        let xc = g * cig + ci;
                        for (p, &gp) in grow.iter().enumerate() {
                            if gp == S::zero() {
                                continue;
                            }
                            let xbase = ((ti * c_in + xc) * hw + p) * kvol;
                            if let Some(dw) = dw.as_mut() {
                                for k in 0..kvol {
                                    dw[wbase + k] += gp * x[xbase + k];
                                }
                            }
                            if let Some(dx) = dx.as_mut() {
                                for k in 0..kvol {
                                    dx[xbase + k] += gp * wdat[wbase + k];
                                }
                            }
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)),
            ]
        }))
    }

    /// Temporal window expansion of `[C, T]` into `[C, T, k]` with zero padding.
    pub fn unfold_time(self, k: usize) -> Result<Var<'g, S>> {
        let xv = self.value();
        let s = xv.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::shape(format!("unfold_time expects [C,T], got {s:?}")));
        }
        if k.is_multiple_of(2) {
            return Err(Error::config(format!("temporal window {k} must be odd")));
        }
        let (c, t) = (s[0], s[1]);
        let half = (k / 2) as isize;
        let x = xv.data();
        let mut out = vec![S::zero(); c * t * k];
        for ci in 0..c {
            for ti in 0..t {
                for j in 0..k {
                    let src = ti as isize + j as isize - half;
                    if src >= 0 && (src as usize) < t {
                        out[(ci * t + ti) * k + j] = x[ci * t + src as usize];
                    }
                }
            }
        }
        crate::instrument::record(out.len() as u64);
        let out_t = Tensor::from_parts(vec![c, t, k], out);
        Ok(self.graph.record(out_t, &[self], move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![S::zero(); c * t];
            for ci in 0..c {
                for ti in 0..t {
                    for j in 0..k {
                        let src = ti as isize + j as isize - half;
                        if src >= 0 && (src as usize) < t {
                            dx[ci * t + src as usize] += g[(ci * t + ti) * k + j];
                        }
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![c, t], dx))]
        }))
    }

    /// Non-overlapping temporal max pooling of `[C, T]`; trailing frames that do
    /// not fill a window are dropped. Ties go to the earliest frame.
    pub fn max_pool_time(self, k: usize) -> Result<Var<'g, S>> {
        let xv = self.value();
        let s = xv.shape().to_vec();
        if s.len() != 2 || k == 0 {
            return Err(Error::shape(format!("max_pool_time expects [C,T], got {s:?}")));
        }
        let (c, t) = (s[0], s[1]);
        let to = t / k;
        if to == 0 {
            return Err(Error::shape(format!("pool window {k} longer than sequence {t}")));
        }
        let x = xv.data();
        let mut out = Vec::with_capacity(c * to);
        let mut arg = Vec::with_capacity(c * to);
        for ci in 0..c {
            for o in 0..to {
                let mut best = ci * t + o * k;
                for j in 1..k {
                    let idx = ci * t + o * k + j;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
        let out_t = Tensor::from_parts(vec![c, to], out);
        Ok(self.graph.record(out_t, &[self], move |ctx| {
            let mut dx = vec![S::zero(); c * t];
            for (&a, &g) in arg.iter().zip(ctx.grad.data()) {
                dx[a] += g;
            }
            vec![Some(Tensor::from_parts(vec![c, t], dx))]
        }))
    }

    /// Elman recurrence `h_t = tanh(pre_t + h_{t∓1} · W_h)` over `[T, h]`
    /// pre-activations, scanning backwards in time when `reverse` is set.
    pub fn rnn_scan(self, w_h: Var<'g, S>, reverse: bool) -> Result<Var<'g, S>> {
        self.check_same_graph(&w_h);
        let (pv, wv) = (self.value(), w_h.value());
        let (ps, ws) = (pv.shape().to_vec(), wv.shape().to_vec());
        if ps.len() != 2 || ws != [ps[1], ps[1]] {
            return Err(Error::shape(format!("rnn_scan expects [T,h] and [h,h], got {ps:?}, {ws:?}")));
        }
        let (t, h) = (ps[0], ps[1]);
        let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
        let pre = pv.data();
        let w = wv.data();
        let mut out = vec![S::zero(); t * h];
        let mut prev: Option<usize> = None;
        for &ti in &order {
            let mut z = pre[ti * h..(ti + 1) * h].to_vec();
            if let Some(p) = prev {
                let hp = out[p * h..(p + 1) * h].to_vec();
                gemm_acc(&hp, w, &mut z, 1, h, h);
            }
            for (o, zi) in out[ti * h..(ti + 1) * h].iter_mut().zip(z) {
                *o = zi.tanh();
            }
            prev = Some(ti);
        }
        let out_t = Tensor::from_parts(vec![t, h], out);
        Ok(self.graph.record(out_t, &[self, w_h], move |ctx| {
            let hs = ctx.output.data();
            let g = ctx.grad.data();
            let w = ctx.inputs[1].data();
            let mut dpre = vec![S::zero(); t * h];
            let mut dw = vec![S::zero(); h * h];
            let mut carry = vec![S::zero(); h];
            for (step, &ti) in order.iter().enumerate().rev() {
                let dz: Vec<S> = (0..h)
                    .map(|j| {
                        let y = hs[ti * h + j];
                        (g[ti * h + j] + carry[j]) * (S::one() - y * y)
                    })
                    .collect();
                carry.iter_mut().for_each(|c| *c = S::zero());
                if step > 0 {
                    let p = order[step - 1];
                    let hp = &hs[p * h..(p + 1) * h];
                    gemm_tn_acc(hp, &dz, &mut dw, 1, h, h);
                    gemm_nt_acc(&dz, w, &mut carry, 1, h, h);
                }
                dpre[ti * h..(ti + 1) * h].copy_from_slice(&dz);
            }
            vec![
                ctx.needs[0].then(|| Tensor::from_parts(vec![t, h], dpre)),
                ctx.needs[1].then(|| Tensor::from_parts(vec![h, h], dw)),
            ]
        }))
    }
}
