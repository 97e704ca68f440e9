//! Monte Carlo trial fan-out.
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, trial index)`,
//! so results are identical whether trials run on one thread or many. With the
//! `parallel` feature (default) [`map_trials`] uses rayon; without it the
//! sequential path is used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random source for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Runs `f` for every trial index on the calling thread.
pub fn map_trials_sequential<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    F: Fn(usize, &mut ChaCha8Rng) -> T,
{
    (0..trials)
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            f(t, &mut rng)
        })
        .collect()
}

/// Runs `f` for every trial index on the rayon pool; output order matches trial order.
#[cfg(feature = "parallel")]
pub fn map_trials_parallel<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            f(t, &mut rng)
        })
        .collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn map_trials<T, F>(trials: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_trials_parallel(trials, seed, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_trials_sequential(trials, seed, f)
    }
}

/// Number of worker threads the parallel path would use.
pub fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
