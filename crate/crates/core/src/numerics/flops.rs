//! Analytic FLOP accounting.
//!
//! Hardware profilers are not reproducible across machines, so cost is
//! counted analytically: each forward primitive credits a fixed number of
//! multiply-add operations to the innermost active recording scope on its
//! thread. The cost model covers forward compute only — no backward pass and
//! no I/O — and self-attention over `n` tokens of head width `d` is defined
//! to cost `2·n²·d` multiply-adds (score contraction plus value contraction).
//!
//! Scopes are thread-local. Work executed on other threads (tile workers)
//! records into its own scope there and is folded back explicitly with
//! [`credit_ledger`].

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

/// Cost-model category a primitive belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpCategory {
    Attention,
    Matmul,
    Conv,
    Other,
}

/// Multiply-add counters per op category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopLedger {
    pub attention: u64,
    pub matmul: u64,
    pub conv: u64,
    pub other: u64,
}

impl FlopLedger {
    pub fn add(&mut self, category: OpCategory, madds: u64) {
        match category {
            OpCategory::Attention => self.attention += madds,
            OpCategory::Matmul => self.matmul += madds,
            OpCategory::Conv => self.conv += madds,
            OpCategory::Other => self.other += madds,
        }
    }

    pub fn merge(&mut self, other: &FlopLedger) {
        self.attention += other.attention;
        self.matmul += other.matmul;
        self.conv += other.conv;
        self.other += other.other;
    }

    pub fn total(&self) -> u64 {
        self.attention + self.matmul + self.conv + self.other
    }
}

thread_local! {
    static SCOPES: RefCell<Vec<FlopLedger>> = const { RefCell::new(Vec::new()) };
}

struct ScopeGuard;

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        SCOPES.with(|s| {
            s.borrow_mut().pop();
        });
    }
}

/// Runs `f` with a fresh ledger installed as the innermost recording scope on
/// this thread and returns the result together with everything recorded.
///
/// Scopes nest: primitives executed inside an inner scope are credited to that
/// inner scope only.
pub fn with_flop_ledger<R>(f: impl FnOnce() -> R) -> (R, FlopLedger) {
    SCOPES.with(|s| s.borrow_mut().push(FlopLedger::default()));
    let guard = ScopeGuard;
    let result = f();
    let ledger = SCOPES.with(|s| *s.borrow().last().expect("scope present"));
    drop(guard);
    (result, ledger)
}

/// Credits `madds` to the innermost scope, if any.
pub(crate) fn credit(category: OpCategory, madds: u64) {
    SCOPES.with(|s| {
        if let Some(top) = s.borrow_mut().last_mut() {
            top.add(category, madds);
        }
    });
}

/// Folds a ledger recorded elsewhere (typically on a worker thread) into the
/// innermost scope of the calling thread.
pub fn credit_ledger(ledger: &FlopLedger) {
    SCOPES.with(|s| {
        if let Some(top) = s.borrow_mut().last_mut() {
            top.merge(ledger);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scope_is_zero() {
        let ((), ledger) = with_flop_ledger(|| {});
        assert_eq!(ledger, FlopLedger::default());
        assert_eq!(ledger.total(), 0);
    }

    #[test]
    fn nested_scope_gets_the_credit() {
        let ((), outer) = with_flop_ledger(|| {
            credit(OpCategory::Matmul, 5);
            let ((), inner) = with_flop_ledger(|| credit(OpCategory::Matmul, 7));
            assert_eq!(inner.matmul, 7);
        });
        assert_eq!(outer.matmul, 5);
    }

    #[test]
    fn credit_without_scope_is_dropped() {
        credit(OpCategory::Other, 3);
        let ((), ledger) = with_flop_ledger(|| {});
        assert_eq!(ledger.total(), 0);
    }

    #[test]
    fn fold_worker_ledger() {
        let mut worker = FlopLedger::default();
        worker.add(OpCategory::Attention, 288);
        let ((), ledger) = with_flop_ledger(|| credit_ledger(&worker));
        assert_eq!(ledger.attention, 288);
    }
}
