//! Opt-in operation counter.
//!
//! Kernels report the number of multiply-accumulates (or element moves for
//! data-layout ops) they actually executed. Counts are attributed to the
//! innermost active label and only while a [`count`] scope is running on the
//! current thread; otherwise [`record`] is a no-op.

use std::cell::RefCell;
use std::collections::BTreeMap;

#[derive(Default)]
struct Tally {
    label: Option<&'static str>,
    counts: BTreeMap<&'static str, u64>,
}

thread_local! {
    static TALLY: RefCell<Option<Tally>> = const { RefCell::new(None) };
}

pub fn record(n: u64) {
    TALLY.with(|t| {
        if let Some(t) = t.borrow_mut().as_mut() {
            if let Some(label) = t.label {
                *t.counts.entry(label).or_default() += n;
            }
        }
    });
}

/// Attribute everything executed inside `f` to `label`.
pub fn labeled<R>(label: &'static str, f: impl FnOnce() -> R) -> R {
    let prev = TALLY.with(|t| t.borrow_mut().as_mut().map(|t| t.label.replace(label)));
    let out = f();
    TALLY.with(|t| {
        if let (Some(t), Some(prev)) = (t.borrow_mut().as_mut(), prev) {
            t.label = prev;
        }
    });
    out
}

/// Run `f` with counting enabled and return the per-label totals.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, BTreeMap<&'static str, u64>) {
    let prev = TALLY.with(|t| t.borrow_mut().replace(Tally::default()));
    let out = f();
    let tally = TALLY.with(|t| std::mem::replace(&mut *t.borrow_mut(), prev));
    (out, tally.map(|t| t.counts).unwrap_or_default())
}
