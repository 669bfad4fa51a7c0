//! Accelerometer force maps, matrix-variate bilinear factor mixtures and survival
//! contrasts between the resulting clusters.
//!
//! The crate is organised along the analysis:
//!
//! - [`ingest`] reads per-participant epoch CSVs into [`ingest::EpochSeries`];
//! - [`forcemap`] turns a series into a standardized r x c [`forcemap::ForceMap`];
//! - [`matvar`] evaluates matrix-variate normal densities;
//! - [`mbi`] fits mixtures of matrix-variate bilinear factor analyzers by AECM;
//! - [`survival`] provides Kaplan-Meier, log-rank and Cox regression;
//! - [`pipeline`] wires everything together, including a synthetic cohort generator.

pub mod forcemap;
pub mod ingest;
pub mod matvar;
pub mod mbi;
pub mod pipeline;
pub mod survival;

/// Order-preserving map over a slice, parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// SplitMix64 finalizer, used to derive independent seeds from a base seed.
pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Runs `f` on a pool of `workers` threads (the global pool when `None`).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}
