//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use dcac_core::ctc::collapse;
use dcac_core::dcac::Dcac;
use dcac_core::nn::BN_EPS;
use dcac_core::tensor::Tensor;
use rand::Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Row-wise log-softmax of a `[T, V]` buffer, computed directly.
pub fn log_softmax_rows(logits: &[f64], v: usize) -> Vec<f64> {
    logits
        .chunks(v)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            row.iter().map(move |x| x - m - z.ln()).collect::<Vec<_>>()
        })
        .collect()
}

pub fn random_logits<R: Rng>(t: usize, v: usize, spread: f64, rng: &mut R) -> Vec<f64> {
    (0..t * v).map(|_| rng.gen_range(-spread..spread)).collect()
}

pub fn random_log_probs<R: Rng>(t: usize, v: usize, rng: &mut R) -> Tensor<f64> {
    let lp = log_softmax_rows(&random_logits(t, v, 3.0, rng), v);
    Tensor::new(vec![t, v], lp).unwrap()
}

/// Random gloss sequence (ids `1..v`) that fits into `t` frames.
pub fn random_feasible_target<R: Rng>(t: usize, v: usize, max_len: usize, rng: &mut R) -> Vec<usize> {
    loop {
        let n = rng.gen_range(0..=max_len);
        let target: Vec<usize> = (0..n).map(|_| rng.gen_range(1..v)).collect();
        let need = target.len() + target.windows(2).filter(|w| w[0] == w[1]).count();
        if need <= t {
            return target;
        }
    }
}

/// Every path in `V^T`, as a mixed-radix counter.
pub fn all_paths(t: usize, v: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = v.pow(t as u32);
    (0..total).map(move |mut code| {
        let mut path = vec![0; t];
        for slot in path.iter_mut().rev() {
            *slot = code % v;
            code /= v;
        }
        path
    })
}

/// `p(target | x)` by summing every alignment that collapses to it.
pub fn enumerate_target_prob(log_probs: &[f64], t: usize, v: usize, target: &[usize]) -> f64 {
    all_paths(t, v)
        .filter(|p| collapse(p) == target)
        .map(|p| p.iter().enumerate().map(|(ti, &k)| log_probs[ti * v + k]).sum::<f64>().exp())
        .sum()
}

/// Most probable labeling by summing path mass per collapsed sequence.
pub fn enumerate_best_labeling(log_probs: &[f64], t: usize, v: usize) -> (Vec<usize>, f64) {
    let mut mass: HashMap<Vec<usize>, f64> = HashMap::new();
    for p in all_paths(t, v) {
        let w = p.iter().enumerate().map(|(ti, &k)| log_probs[ti * v + k]).sum::<f64>().exp();
        *mass.entry(collapse(&p)).or_default() += w;
    }
    mass.into_iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(&a.0)))
        .unwrap()
}

/// Edit distance by memoized recursion from the sequence ends, returning
/// `(errors, insertions + deletions)` minimized lexicographically.
pub fn edit_oracle(reference: &[usize], hypothesis: &[usize]) -> (usize, usize) {
    fn go(r: &[usize], h: &[usize], i: usize, j: usize, memo: &mut HashMap<(usize, usize), (usize, usize)>) -> (usize, usize) {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if i == r.len() {
            (h.len() - j, h.len() - j)
        } else if j == h.len() {
            (r.len() - i, r.len() - i)
        } else {
            let (e, x) = go(r, h, i + 1, j + 1, memo);
            let diag = (e + usize::from(r[i] != h[j]), x);
            let (e, x) = go(r, h, i + 1, j, memo);
            let del = (e + 1, x + 1);
            let (e, x) = go(r, h, i, j + 1, memo);
            let ins = (e + 1, x + 1);
            diag.min(del).min(ins)
        };
        memo.insert((i, j), v);
        v
    }
    go(reference, hypothesis, 0, 0, &mut HashMap::new())
}

/// Substitutions, insertions and deletions implied by the oracle's optimum.
pub fn edit_breakdown(reference: &[usize], hypothesis: &[usize]) -> (usize, usize, usize) {
    let (errors, indel) = edit_oracle(reference, hypothesis);
    let subs = errors - indel;
    let (n, m) = (reference.len() as isize, hypothesis.len() as isize);
    let ins = ((indel as isize + m - n) / 2) as usize;
    let del = indel - ins;
    (subs, ins, del)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Value of a `[C, T, H, W]` tensor with zero outside the bounds.
fn padded(x: &Tensor<f64>, c: usize, t: isize, h: isize, w: isize) -> f64 {
    let s = x.shape();
    if t < 0 || h < 0 || w < 0 || t as usize >= s[1] || h as usize >= s[2] || w as usize >= s[3] {
        return 0.0;
    }
    x.at(&[c, t as usize, h as usize, w as usize])
}

/// Per-frame kernels of a DCAC layer, `[T][C_o][C_i/G][k_t][k_h][k_w]`
/// flattened, computed with nested loops and batch norm in inference mode.
pub fn naive_dynamic_kernels(d: &Dcac<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let cfg = d.cfg;
    let [c, t, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (co, cig, n, hid) = (cfg.c_out, cfg.cin_per_group(), cfg.experts, cfg.hidden());
    let [kt, kh, kw] = cfg.kernel;
    let kc = cfg.context_kernel;
    let hw = (h * w) as f64;

    let fc = d.fc_shared.snapshot();
    let (gamma, beta) = (d.bn.gamma.snapshot(), d.bn.beta.snapshot());
    let (rm, rv) = (d.bn.running_mean.snapshot(), d.bn.running_var.snapshot());
    let heads = [&d.fc_f, &d.fc_c, &d.fc_t, &d.fc_w].map(|p| p.snapshot());
    let experts: Vec<Tensor<f64>> = d.experts.iter().map(|e| e.snapshot()).collect();
    let conv1 = d.conv1.snapshot();
    let conv2 = d.conv2.snapshot();

    let mut out = vec![0.0; t * co * cig * kt * kh * kw];
    let mut pooled = vec![vec![0.0; t]; c];
    for (ci, row) in pooled.iter_mut().enumerate() {
        for (ti, slot) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for hi in 0..h {
                for wi in 0..w {
                    let mut v = 0.0;
                    for cj in 0..c {
                        for j in 0..kc {
                            let src = ti as isize + j as isize - (kc / 2) as isize;
                            v += conv1.at(&[ci, cj, j, 0, 0]) * padded(x, cj, src, hi as isize, wi as isize);
                        }
                    }
                    s += v;
                }
            }
            *slot = s / hw;
        }
    }

    for ti in 0..t {
        let desc: Vec<f64> = (0..c)
            .map(|ci| {
                let mut s = 0.0;
                for hi in 0..h {
                    for wi in 0..w {
                        s += x.at(&[ci, ti, hi, wi]);
                    }
                }
                s / hw
            })
            .collect();
        let hidden: Vec<f64> = (0..hid)
            .map(|j| {
                let z: f64 = (0..c).map(|ci| desc[ci] * fc.at(&[ci, j])).sum();
                let bn = (z - rm.data()[j]) / (rv.data()[j] + BN_EPS).sqrt() * gamma.data()[j] + beta.data()[j];
                bn.max(0.0)
            })
            .collect();
        let head = |k: usize, width: usize| -> Vec<f64> {
            (0..width).map(|o| (0..hid).map(|j| hidden[j] * heads[k].at(&[j, o])).sum()).collect()
        };
        let af: Vec<f64> = head(0, co).into_iter().map(sigmoid).collect();
        let ac: Vec<f64> = head(1, cig).into_iter().map(sigmoid).collect();
        let at: Vec<f64> = head(2, kt).into_iter().map(sigmoid).collect();
        let zw = head(3, n);
        let m = zw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ez: Vec<f64> = zw.iter().map(|z| (z - m).exp()).collect();
        let aw: Vec<f64> = ez.iter().map(|e| e / ez.iter().sum::<f64>()).collect();

        for o in 0..co {
            for ci in 0..cig {
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let mixed: f64 = (0..n).map(|e| aw[e] * experts[e].at(&[o, ci, dt, dh, dw])).sum();
                            let intra = mixed * af[o] * ac[ci] * at[dt];
                            let src = ti as isize + dt as isize - (kt / 2) as isize;
                            let mcol = ((o * cig + ci) * kh + dh) * kw + dw;
                            let inter: f64 = if src < 0 || src as usize >= t {
                                0.0
                            } else {
                                (0..c).map(|cj| pooled[cj][src as usize] * conv2.at(&[cj, mcol])).sum()
                            };
                            let idx = ((((ti * co + o) * cig + ci) * kt + dt) * kh + dh) * kw + dw;
                            out[idx] = inter * intra;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Grouped same-padded convolution with one kernel per output frame
/// (`per_frame`, laid out like [`naive_dynamic_kernels`]) plus a shared
/// kernel `[C_o, C_i/G, k_t, k_h, k_w]`; either may be absent.
pub fn naive_conv(
    x: &Tensor<f64>,
    per_frame: Option<&[f64]>,
    shared: Option<&Tensor<f64>>,
    c_out: usize,
    groups: usize,
    kernel: [usize; 3],
) -> Tensor<f64> {
    let [c, t, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let cig = c / groups;
    let per_group_out = c_out / groups;
    let [kt, kh, kw] = kernel;
    let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut y = vec![0.0; c_out * t * h * w];
    for o in 0..c_out {
        let g = o / per_group_out;
        for ti in 0..t {
            for hi in 0..h {
                for wi in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..cig {
                        for dt in 0..kt {
                            for dh in 0..kh {
                                for dw in 0..kw {
                                    let mut wgt = 0.0;
                                    if let Some(pf) = per_frame {
                                        wgt += pf[((((ti * c_out + o) * cig + ci) * kt + dt) * kh + dh) * kw + dw];
                                    }
                                    if let Some(s) = shared {
                                        wgt += s.at(&[o, ci, dt, dh, dw]);
                                    }
                                    acc += wgt
                                        * padded(
                                            x,
                                            g * cig + ci,
                                            ti as isize + dt as isize - pt,
                                            hi as isize + dh as isize - ph,
                                            wi as isize + dw as isize - pw,
                                        );
                                }
                            }
                        }
                    }
                    y[((o * t + ti) * h + hi) * w + wi] = acc;
                }
            }
        }
    }
    Tensor::new(vec![c_out, t, h, w], y).unwrap()
}

/// Full DCAC output (dynamic plus static branch) by nested loops.
pub fn naive_dcac(d: &Dcac<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let kernels = naive_dynamic_kernels(d, x);
    let stat = d.static_weight.snapshot();
    naive_conv(x, Some(&kernels), Some(&stat), d.cfg.c_out, d.cfg.groups, d.cfg.kernel)
}

/// Forward-mode dual number for scalar derivative checks.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub fn var(v: f64) -> Self {
        Dual { v, d: 1.0 }
    }
    pub fn cst(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }
    pub fn exp(self) -> Self {
        let e = self.v.exp();
        Dual { v: e, d: self.d * e }
    }
    pub fn ln(self) -> Self {
        Dual { v: self.v.ln(), d: self.d / self.v }
    }
    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        Dual { v: t, d: self.d * (1.0 - t * t) }
    }
    pub fn sigmoid(self) -> Self {
        let s = sigmoid(self.v);
        Dual { v: s, d: self.d * s * (1.0 - s) }
    }
    pub fn relu(self) -> Self {
        if self.v > 0.0 { self } else { Dual::cst(0.0) }
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { v: self.v + o.v, d: self.d + o.d }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { v: self.v - o.v, d: self.d - o.d }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { v: self.v * o.v, d: self.d * o.v + self.v * o.d }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual { v: self.v / o.v, d: (self.d * o.v - self.v * o.d) / (o.v * o.v) }
    }
}

impl std::iter::Sum for Dual {
    fn sum<I: Iterator<Item = Dual>>(iter: I) -> Dual {
        iter.fold(Dual::cst(0.0), |a, b| a + b)
    }
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// Small random DCAC (`C ≤ 8`, odd kernels up to 3) with perturbed batch-norm
/// statistics and gate, plus a matching `[C_i, T ≤ 6, H ≤ 4, W ≤ 4]` input.
pub fn random_dcac<R: Rng>(rng: &mut R) -> (Dcac<f64>, Tensor<f64>) {
    use dcac_core::dcac::DcacConfig;
    let c_in = rng.gen_range(1..=8);
    let c_out = rng.gen_range(1..=8);
    let common: Vec<usize> = divisors(c_in).into_iter().filter(|g| c_out % g == 0).collect();
    let groups = common[rng.gen_range(0..common.len())];
    let odd = |rng: &mut R| [1, 3][rng.gen_range(0..2)];
    let cfg = DcacConfig {
        c_in,
        c_out,
        groups,
        kernel: [odd(rng), odd(rng), odd(rng)],
        experts: rng.gen_range(1..=4),
        reduction: rng.gen_range(1..=c_in),
        context_kernel: odd(rng),
    };
    let d = Dcac::new("d", cfg, rng).unwrap();
    let hid = cfg.hidden();
    d.bn.gamma.set_value(Tensor::uniform(&[hid], 0.5, 1.5, rng));
    d.bn.beta.set_value(Tensor::uniform(&[hid], -0.5, 0.5, rng));
    d.bn.running_mean.set_value(Tensor::uniform(&[hid], -0.5, 0.5, rng));
    d.bn.running_var.set_value(Tensor::uniform(&[hid], 0.5, 2.0, rng));
    d.gate.alpha.set_value(Tensor::uniform(&[1], -1.0, 1.0, rng));
    let shape = [c_in, rng.gen_range(1..=6), rng.gen_range(1..=4), rng.gen_range(1..=4)];
    let x = Tensor::uniform(&shape, -1.0, 1.0, rng);
    (d, x)
}

/// One checked coordinate of a full-model gradient check.
#[derive(Clone, Debug)]
pub struct GradProbe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradProbe {
    pub fn rel(&self) -> f64 {
        rel_err(self.analytic, self.numeric)
    }
}

/// Central difference on a ladder of steps, taken from the adjacent pair of
/// steps with the smallest disagreement plus roundoff bound `2ε|f|/h`. A
/// stencil that straddles a kink of a piecewise-smooth objective disagrees
/// with its neighbour; a step too small to resolve `f` carries a large bound.
pub fn central_diff_ladder(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, steps: &[f64]) -> f64 {
    let mut est = Vec::with_capacity(steps.len());
    let mut scale = 0.0f64;
    let mut xp = x.to_vec();
    for &h in steps {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        scale = scale.max(fp.abs()).max(fm.abs());
        est.push((fp - fm) / (2.0 * h));
    }
    if est.len() == 1 {
        return est[0];
    }
    let score = |k: usize| (est[k] - est[k + 1]).abs() + 2.0 * f64::EPSILON * scale / steps[k + 1];
    let k = (0..est.len() - 1).min_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
    0.5 * (est[k] + est[k + 1])
}

/// Training-mode objective summed over `samples`, with its autodiff gradient
/// compared against central differences on `per_param` random coordinates of
/// every trainable tensor.
pub fn model_grad_check<R: Rng>(
    model: &dcac_core::pipeline::ToyModel<f64>,
    samples: &[(Tensor<f64>, Vec<usize>)],
    per_param: usize,
    steps: &[f64],
    rng: &mut R,
) -> Vec<GradProbe> {
    use dcac_core::tensor::Graph;
    let objective = || -> f64 {
        samples
            .iter()
            .map(|(v, y)| {
                let g = Graph::new();
                let (terms, _) = model.loss(&g, v, y).unwrap();
                terms.total.value().item().unwrap()
            })
            .sum()
    };
    model.zero_grads();
    for (v, y) in samples {
        let g = Graph::new();
        let (terms, _) = model.loss(&g, v, y).unwrap();
        g.backward(terms.total).unwrap();
    }
    let mut probes = Vec::new();
    for p in model.params().into_iter().filter(|p| p.is_trainable()) {
        let grad = p.grad();
        let w0 = p.snapshot();
        for _ in 0..per_param.min(w0.numel()) {
            let i = rng.gen_range(0..w0.numel());
            let mut f = |x: &[f64]| {
                p.set_value(Tensor::new(w0.shape().to_vec(), x.to_vec()).unwrap());
                let r = objective();
                p.set_value(w0.clone());
                r
            };
            let numeric = central_diff_ladder(&mut f, w0.data(), i, steps);
            probes.push(GradProbe { param: p.name().to_string(), index: i, analytic: grad.data()[i], numeric });
        }
    }
    model.zero_grads();
    probes
}

/// Leading samples of a freshly generated default-world dataset, as `f64`.
pub fn world_samples(seed: u64, n: usize) -> Vec<(Tensor<f64>, Vec<usize>)> {
    use dcac_core::pipeline::{Split, SyntheticGlossWorld, WorldConfig};
    let w = SyntheticGlossWorld::new(WorldConfig::default()).unwrap();
    (0..n)
        .map(|i| {
            let s = w.generate(seed, Split::Train, i).unwrap();
            (s.frames.cast::<f64>(), s.glosses)
        })
        .collect()
}
