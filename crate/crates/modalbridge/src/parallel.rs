//! Data-parallel execution helpers.
//!
//! Compute kernels parallelize over independent output elements, so the
//! floating-point result is bit-identical whether a loop runs on one thread
//! or many: each output element is always reduced sequentially by the same
//! code. The `parallel` feature compiles the rayon path in; the runtime
//! switch below routes everything through the sequential fallback when
//! disabled (e.g. under `MODALBRIDGE_DETERMINISTIC=1`, or from benchmarks
//! that compare both paths in one process).

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(true);

/// Globally enable or disable the rayon path at runtime.
pub fn set_enabled(enabled: bool) {
    PARALLEL_ENABLED.store(enabled, Ordering::SeqCst);
}

/// Whether parallel execution is compiled in and currently enabled.
pub fn enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL_ENABLED.load(Ordering::SeqCst)
}

/// Fill `out` by computing each element independently: `out[i] = f(i)`.
pub fn fill_indexed<F>(out: &mut [f32], f: F)
where
    F: Fn(usize) -> f32 + Sync,
{
    #[cfg(feature = "parallel")]
    if enabled() {
        use rayon::prelude::*;
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| *slot = f(i));
        return;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

/// Run `f` over disjoint equally-sized chunks of `out`, one call per chunk.
/// `f(chunk_index, chunk)` owns its slice exclusively.
pub fn for_each_chunk<F>(out: &mut [f32], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    assert!(chunk_len > 0 && out.len() % chunk_len == 0);
    #[cfg(feature = "parallel")]
    if enabled() {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    for (i, chunk) in out.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_fill_agree_bitwise() {
        let f = |i: usize| ((i as f32) * 0.37).sin() * 1e3;
        let mut a = vec![0.0f32; 1024];
        let mut b = vec![0.0f32; 1024];
        set_enabled(true);
        fill_indexed(&mut a, f);
        set_enabled(false);
        fill_indexed(&mut b, f);
        set_enabled(true);
        assert_eq!(a, b);
    }
}
