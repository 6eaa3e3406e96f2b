use std::hash::{Hash, Hasher};

use crate::ctc::{check_labels, min_frames, BLANK};
use crate::error::{Error, Result};
use crate::scalar::{log_add, Scalar};
use crate::tensor::{Tensor, Var};

/// Forward and backward tables over the blank-extended target.
#[derive(Clone, Debug)]
pub struct CtcLattice<S: Scalar> {
    pub frames: usize,
    pub vocab: usize,
    /// Blank-extended labels `[-, l1, -, l2, ..., -]`.
    pub extended: Vec<usize>,
    /// `frames × extended.len()`, row-major.
    pub log_alpha: Vec<S>,
    pub log_beta: Vec<S>,
    pub log_p_target: S,
    fingerprint: u64,
}

impl<S: Scalar> CtcLattice<S> {
    pub fn states(&self) -> usize {
        self.extended.len()
    }

    pub fn alpha(&self, t: usize, s: usize) -> S {
        self.log_alpha[t * self.states() + s]
    }

    pub fn beta(&self, t: usize, s: usize) -> S {
        self.log_beta[t * self.states() + s]
    }

    /// `log p` recovered from the backward table at the start states.
    pub fn log_p_from_beta(&self) -> S {
        let s = self.states();
        if s == 1 {
            self.log_beta[0]
        } else {
            log_add(self.log_beta[0], self.log_beta[1])
        }
    }

    fn check_fresh(&self, log_probs: &Tensor<S>) -> Result<()> {
        if log_probs.shape() != [self.frames, self.vocab] || fingerprint(log_probs) != self.fingerprint {
            return Err(Error::Consistency("lattice was computed from different log-probabilities".into()));
        }
        Ok(())
    }
}

fn fingerprint<S: Scalar>(x: &Tensor<S>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    x.shape().hash(&mut h);
    for v in x.data() {
        v.to_f64_lossy().to_bits().hash(&mut h);
    }
    h.finish()
}

fn check_log_probs<S: Scalar>(log_probs: &Tensor<S>) -> Result<(usize, usize)> {
    match *log_probs.shape() {
        [t, v] if v >= 2 => {
            if log_probs.data().iter().any(|x| x.is_nan() || *x > S::lit(1e-6)) {
                return Err(Error::Numeric("log-probabilities must be finite-or-minus-infinity and ≤ 0".into()));
            }
            Ok((t, v))
        }
        ref s => Err(Error::shape(format!("CTC expects [T, V] log-probabilities with V ≥ 2, got {s:?}"))),
    }
}

/// Negative log-likelihood of `target` under per-frame `log_probs` `[T, V]`,
/// marginalized over all alignments by log-domain forward–backward.
pub fn ctc_loss<S: Scalar>(log_probs: &Tensor<S>, target: &[usize]) -> Result<(S, CtcLattice<S>)> {
    let (t_len, vocab) = check_log_probs(log_probs)?;
    check_labels(target, vocab)?;
    let need = min_frames(target);
    if t_len < need.max(1) {
        return Err(Error::infeasible(format!(
            "{t_len} frames cannot emit {} labels with {} repeats (need {need})",
            target.len(),
            need - target.len()
        )));
    }
    let mut extended = Vec::with_capacity(2 * target.len() + 1);
    extended.push(BLANK);
    for &l in target {
        extended.push(l);
        extended.push(BLANK);
    }
    let ns = extended.len();
    let lp = log_probs.data();
    let neg = S::neg_infinity();
    let skip_ok = |s: usize| s >= 2 && extended[s] != BLANK && extended[s] != extended[s - 2];

    let mut alpha = vec![neg; t_len * ns];
    alpha[0] = lp[extended[0]];
    if ns > 1 {
        alpha[1] = lp[extended[1]];
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * ns);
        let prev = &prev[(t - 1) * ns..];
        for s in 0..ns {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip_ok(s) {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = a + lp[t * vocab + extended[s]];
        }
    }

    let mut beta = vec![neg; t_len * ns];
    let last = (t_len - 1) * ns;
    beta[last + ns - 1] = lp[(t_len - 1) * vocab + extended[ns - 1]];
    if ns > 1 {
        beta[last + ns - 2] = lp[(t_len - 1) * vocab + extended[ns - 2]];
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * ns);
        let cur = &mut cur[t * ns..];
        for s in 0..ns {
            let mut b = next[s];
            if s + 1 < ns {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < ns && skip_ok(s + 2) {
                b = log_add(b, next[s + 2]);
            }
            cur[s] = b + lp[t * vocab + extended[s]];
        }
    }

    let log_p = if ns > 1 { log_add(alpha[last + ns - 1], alpha[last + ns - 2]) } else { alpha[last] };
    if !log_p.is_finite() {
        return Err(Error::infeasible("every alignment has zero probability"));
    }
    let lattice = CtcLattice {
        frames: t_len,
        vocab,
        extended,
        log_alpha: alpha,
        log_beta: beta,
        log_p_target: log_p,
        fingerprint: fingerprint(log_probs),
    };
    Ok((-log_p, lattice))
}

/// Posterior symbol occupancy `γ[t, k]`: the share of alignment mass that emits
/// `k` at frame `t`. Rows sum to one.
pub fn occupancy<S: Scalar>(lattice: &CtcLattice<S>, log_probs: &Tensor<S>) -> Result<Tensor<S>> {
    lattice.check_fresh(log_probs)?;
    let (t_len, v, ns) = (lattice.frames, lattice.vocab, lattice.states());
    let lp = log_probs.data();
    let mut acc = vec![S::neg_infinity(); t_len * v];
    for t in 0..t_len {
        for s in 0..ns {
            let k = lattice.extended[s];
            let term = lattice.log_alpha[t * ns + s] + lattice.log_beta[t * ns + s] - lp[t * v + k];
            acc[t * v + k] = log_add(acc[t * v + k], term);
        }
    }
    let gamma = acc.into_iter().map(|a| (a - lattice.log_p_target).exp()).collect();
    Tensor::new(vec![t_len, v], gamma)
}

/// `∂L/∂p(k | t) = −γ[t, k] / p(k | t)`: the gradient with respect to the
/// per-frame probabilities.
pub fn ctc_grad<S: Scalar>(lattice: &CtcLattice<S>, log_probs: &Tensor<S>) -> Result<Tensor<S>> {
    let gamma = occupancy(lattice, log_probs)?;
    let data = gamma
        .data()
        .iter()
        .zip(log_probs.data())
        .map(|(&g, &l)| if g == S::zero() { S::zero() } else { -g / l.exp() })
        .collect();
    Tensor::new(gamma.shape().to_vec(), data)
}

/// `∂L/∂log p = −γ`.
pub fn ctc_grad_log_probs<S: Scalar>(lattice: &CtcLattice<S>, log_probs: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(occupancy(lattice, log_probs)?.map(|g| -g))
}

/// `∂L/∂z = softmax(z) − γ` when `log_probs = log_softmax(z)`.
pub fn ctc_grad_logits<S: Scalar>(lattice: &CtcLattice<S>, log_probs: &Tensor<S>) -> Result<Tensor<S>> {
    let gamma = occupancy(lattice, log_probs)?;
    let data = gamma.data().iter().zip(log_probs.data()).map(|(&g, &l)| l.exp() - g).collect();
    Tensor::new(gamma.shape().to_vec(), data)
}

impl<'g, S: Scalar> Var<'g, S> {
    /// CTC loss node on `[T, V]` log-probabilities, differentiated analytically.
    pub fn ctc_loss(self, target: &[usize]) -> Result<Var<'g, S>> {
        let lp = self.value();
        let (loss, lattice) = ctc_loss(&lp, target)?;
        let neg_gamma = ctc_grad_log_probs(&lattice, &lp)?;
        Ok(self.graph().record(Tensor::scalar(loss), &[self], move |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(neg_gamma.map(|x| x * g))]
        }))
    }
}
