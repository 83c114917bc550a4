//! Runtime multiply-accumulate tally used to cross-check the static cost model.
//!
//! Kernels report the MACs they actually execute. Counting is per calling thread and
//! only active inside [`measure`]; kernels record before fanning out to worker threads.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    /// Convolution and fully connected MACs: the headline FLOP figure.
    pub macs: u64,
    /// BN, activation, pooling, residual adds and everything inside SE blocks.
    pub aux: u64,
}

thread_local! {
    static ACTIVE: Cell<Option<Tally>> = const { Cell::new(None) };
    static AUX_DEPTH: Cell<u32> = const { Cell::new(0) };
}

/// Headline MACs, or auxiliary ones when called inside [`as_aux`].
#[inline]
pub fn record_macs(n: usize) {
    if AUX_DEPTH.with(Cell::get) > 0 {
        record_aux(n);
        return;
    }
    ACTIVE.with(|a| {
        if let Some(mut t) = a.get() {
            t.macs += n as u64;
            a.set(Some(t));
        }
    });
}

#[inline]
pub fn record_aux(n: usize) {
    ACTIVE.with(|a| {
        if let Some(mut t) = a.get() {
            t.aux += n as u64;
            a.set(Some(t));
        }
    });
}

/// Runs `f` with all MAC records redirected to the auxiliary column.
pub fn as_aux<R>(f: impl FnOnce() -> R) -> R {
    AUX_DEPTH.with(|d| d.set(d.get() + 1));
    let r = f();
    AUX_DEPTH.with(|d| d.set(d.get() - 1));
    r
}

/// Runs `f` and returns what it recorded. Nested calls also credit the enclosing tally.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, Tally) {
    let outer = ACTIVE.with(|a| a.replace(Some(Tally::default())));
    let r = f();
    let inner = ACTIVE.with(|a| a.replace(outer)).unwrap_or_default();
    if let Some(mut o) = outer {
        o.macs += inner.macs;
        o.aux += inner.aux;
        ACTIVE.with(|a| a.set(Some(o)));
    }
    (r, inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_measure_credits_outer() {
        record_macs(1000); // outside any measurement: dropped
        let ((_, inner), outer) = measure(|| {
            record_macs(3);
            measure(|| {
                record_macs(5);
                as_aux(|| record_macs(7));
            })
        });
        assert_eq!(inner, Tally { macs: 5, aux: 7 });
        assert_eq!(outer, Tally { macs: 8, aux: 7 });
    }
}
