//! Counters for the expensive offline stages.
//!
//! Training must run entirely from caches; tests read these counters before
//! and after a training run to prove that nothing offline was recomputed.
//! [`snapshot`] is process-wide; [`thread_snapshot`] only sees work done on
//! the calling thread, which keeps parallel tests from disturbing each other.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

static SPECTRA: AtomicU64 = AtomicU64::new(0);
static DESCRIPTORS: AtomicU64 = AtomicU64::new(0);
static POOLINGS: AtomicU64 = AtomicU64::new(0);
static SPD_EIGS: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static LOCAL: Cell<Counters> = const { Cell::new(Counters { spectra: 0, descriptors: 0, poolings: 0, spd_eigs: 0 }) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub spectra: u64,
    pub descriptors: u64,
    pub poolings: u64,
    pub spd_eigs: u64,
}

impl Counters {
    pub fn total(&self) -> u64 {
        self.spectra + self.descriptors + self.poolings + self.spd_eigs
    }

    pub fn since(&self, earlier: &Counters) -> Counters {
        Counters {
            spectra: self.spectra - earlier.spectra,
            descriptors: self.descriptors - earlier.descriptors,
            poolings: self.poolings - earlier.poolings,
            spd_eigs: self.spd_eigs - earlier.spd_eigs,
        }
    }
}

pub fn snapshot() -> Counters {
    Counters {
        spectra: SPECTRA.load(Ordering::Relaxed),
        descriptors: DESCRIPTORS.load(Ordering::Relaxed),
        poolings: POOLINGS.load(Ordering::Relaxed),
        spd_eigs: SPD_EIGS.load(Ordering::Relaxed),
    }
}

pub fn thread_snapshot() -> Counters {
    LOCAL.with(Cell::get)
}

fn bump(global: &AtomicU64, local: impl FnOnce(&mut Counters)) {
    global.fetch_add(1, Ordering::Relaxed);
    LOCAL.with(|c| {
        let mut v = c.get();
        local(&mut v);
        c.set(v);
    });
}

pub(crate) fn count_spectrum() {
    bump(&SPECTRA, |c| c.spectra += 1);
}

pub(crate) fn count_descriptor() {
    bump(&DESCRIPTORS, |c| c.descriptors += 1);
}

pub(crate) fn count_pooling() {
    bump(&POOLINGS, |c| c.poolings += 1);
}

pub(crate) fn count_spd_eig() {
    bump(&SPD_EIGS, |c| c.spd_eigs += 1);
}
