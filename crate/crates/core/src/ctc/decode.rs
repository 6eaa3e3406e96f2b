use std::cmp::Ordering;
use std::collections::HashMap;

use crate::ctc::BLANK;
use crate::error::{Error, Result};
use crate::scalar::{log_add, Scalar};
use crate::tensor::Tensor;

/// Beam width used by evaluation.
pub const DEFAULT_BEAM_WIDTH: usize = 10;

/// Merge repeats, then drop blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

fn rows<S: Scalar>(log_probs: &Tensor<S>) -> Result<(usize, usize)> {
    match *log_probs.shape() {
        [t, v] => Ok((t, v)),
        ref s => Err(Error::shape(format!("decoding expects [T, V], got {s:?}"))),
    }
}

/// Best path: per-frame argmax (lowest id on ties), then collapse.
pub fn decode_greedy<S: Scalar>(log_probs: &Tensor<S>) -> Result<Vec<usize>> {
    let (_, v) = rows(log_probs)?;
    let path: Vec<usize> = log_probs
        .data()
        .chunks(v)
        .map(|row| {
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(collapse(&path))
}

/// Beam entry: collapsed prefix plus whether the last emitted frame was blank.
type Key = (Vec<usize>, bool);

fn rank<S: Scalar>(a: &(Key, S), b: &(Key, S)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0 .0.cmp(&b.0 .0))
        .then_with(|| b.0 .1.cmp(&a.0 .1))
}

/// Prefix beam search. Prefixes ending in blank and in a symbol are kept as
/// separate hypotheses, each merged in the log domain and pruned jointly;
/// ties go to the lexicographically smaller prefix, then to the blank ending.
/// The answer sums both endings of each surviving prefix.
pub fn decode_beam<S: Scalar>(log_probs: &Tensor<S>, width: usize) -> Result<Vec<usize>> {
    if width == 0 {
        return Err(Error::config("beam width must be at least 1"));
    }
    let (_, v) = rows(log_probs)?;
    let mut beam: Vec<(Key, S)> = vec![((Vec::new(), true), S::zero())];
    for row in log_probs.data().chunks(v) {
        let mut next: HashMap<Key, S> = HashMap::with_capacity(beam.len() * v);
        let mut push = |k: Key, p: S| {
            let e = next.entry(k).or_insert(S::neg_infinity());
            *e = log_add(*e, p);
        };
        for ((prefix, ends_blank), p) in &beam {
            for (k, &lp) in row.iter().enumerate() {
                if lp == S::neg_infinity() {
                    continue;
                }
                let q = *p + lp;
                if k == BLANK {
                    push((prefix.clone(), true), q);
                } else if prefix.last() == Some(&k) && !ends_blank {
                    push((prefix.clone(), false), q);
                } else {
                    let mut ext = prefix.clone();
                    ext.push(k);
                    push((ext, false), q);
                }
            }
        }
        let mut cand: Vec<(Key, S)> = next.into_iter().collect();
        cand.sort_by(rank);
        cand.truncate(width);
        beam = cand;
    }
    let mut totals: HashMap<Vec<usize>, S> = HashMap::new();
    for ((prefix, _), p) in beam {
        let e = totals.entry(prefix).or_insert(S::neg_infinity());
        *e = log_add(*e, p);
    }
    let best = totals
        .into_iter()
        .min_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)))
        .map(|(p, _)| p)
        .unwrap_or_default();
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse(&[0, 1, 1, 0, 2]), vec![1, 2]);
        assert_eq!(collapse(&[1, 0, 1]), vec![1, 1]);
        assert!(collapse(&[0, 0, 0]).is_empty());
    }

    #[test]
    fn greedy_peaked_and_uniform() {
        let path = [0, 1, 0, 2, 2];
        let mut p = vec![0.01f64; 15];
        for (t, &k) in path.iter().enumerate() {
            p[t * 3 + k] = 0.98;
        }
        let x = Tensor::from_f64(&[5, 3], &p).unwrap().map(f64::ln);
        assert_eq!(decode_greedy(&x).unwrap(), vec![1, 2]);
        assert_eq!(decode_beam(&x, 1).unwrap(), vec![1, 2]);
        let u = Tensor::<f64>::full(&[4, 3], (1.0f64 / 3.0).ln());
        assert!(decode_greedy(&u).unwrap().is_empty());
        assert!(decode_beam(&u, 1).unwrap().is_empty());
    }

    #[test]
    fn zero_width_rejected() {
        let u = Tensor::<f64>::full(&[1, 2], 0.5f64.ln());
        assert!(matches!(decode_beam(&u, 0), Err(Error::Config(_))));
    }
}
