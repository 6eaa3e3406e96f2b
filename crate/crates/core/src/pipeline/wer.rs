use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit counts of one hypothesis against its reference, or of a whole split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_length: usize,
    pub wer: f64,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    fn from_counts(substitutions: usize, insertions: usize, deletions: usize, ref_length: usize) -> Self {
        let wer = if ref_length == 0 { 0.0 } else { (substitutions + insertions + deletions) as f64 / ref_length as f64 };
        WerBreakdown { substitutions, insertions, deletions, ref_length, wer }
    }

    /// Corpus-level totals: summed counts over summed reference lengths.
    pub fn aggregate<'a>(items: impl IntoIterator<Item = &'a WerBreakdown>) -> WerBreakdown {
        let (mut s, mut i, mut d, mut n) = (0, 0, 0, 0);
        for b in items {
            s += b.substitutions;
            i += b.insertions;
            d += b.deletions;
            n += b.ref_length;
        }
        Self::from_counts(s, i, d, n)
    }

    pub fn del_rate(&self) -> f64 {
        if self.ref_length == 0 { 0.0 } else { self.deletions as f64 / self.ref_length as f64 }
    }

    pub fn ins_rate(&self) -> f64 {
        if self.ref_length == 0 { 0.0 } else { self.insertions as f64 / self.ref_length as f64 }
    }
}

/// Unit-cost edit distance. Among minimal alignments, the one with the fewest
/// insertions plus deletions (most substitutions) is reported.
pub fn wer(reference: &[usize], hypothesis: &[usize]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::config("WER needs a non-empty reference"));
    }
    let (n, m) = (reference.len(), hypothesis.len());
    // (errors, insertions + deletions)
    let mut d = vec![(0usize, 0usize); (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        d[at(i, 0)] = (i, i);
    }
    for j in 0..=m {
        d[at(0, j)] = (j, j);
    }
    for i in 1..=n {
        for j in 1..=m {
            let (e, s) = d[at(i - 1, j - 1)];
            let diag = if reference[i - 1] == hypothesis[j - 1] { (e, s) } else { (e + 1, s) };
            let (e, s) = d[at(i - 1, j)];
            let del = (e + 1, s + 1);
            let (e, s) = d[at(i, j - 1)];
            let ins = (e + 1, s + 1);
            d[at(i, j)] = diag.min(del).min(ins);
        }
    }
    let (errors, insdel) = d[at(n, m)];
    let substitutions = errors - insdel;
    // insertions - deletions = m - n, insertions + deletions = insdel
    let insertions = ((insdel as i64 + m as i64 - n as i64) / 2) as usize;
    let deletions = insdel - insertions;
    Ok(WerBreakdown::from_counts(substitutions, insertions, deletions, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let w = wer(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(w.wer, 0.0);
        let w = wer(&[1, 2, 3], &[1, 3]).unwrap();
        assert_eq!((w.substitutions, w.insertions, w.deletions), (0, 0, 1));
        assert!((w.wer - 1.0 / 3.0).abs() < 1e-15);
        let w = wer(&[1], &[2, 2]).unwrap();
        assert_eq!((w.substitutions, w.insertions, w.deletions), (1, 1, 0));
        assert_eq!(w.wer, 2.0);
        let w = wer(&[1, 2], &[]).unwrap();
        assert_eq!((w.deletions, w.wer), (2, 1.0));
        assert!(matches!(wer(&[], &[1]), Err(Error::Config(_))));
    }

    #[test]
    fn aggregate_is_pooled() {
        let a = wer(&[1], &[2]).unwrap();
        let b = wer(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap();
        let t = WerBreakdown::aggregate([&a, &b]);
        assert!((t.wer - 0.2).abs() < 1e-15);
    }
}
