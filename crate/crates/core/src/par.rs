//! Order-preserving parallel map over independent work items.
//!
//! With the `parallel` feature the items run on a rayon pool; without it
//! (or with [`Execution::Serial`]) they run in index order on the caller's
//! thread. Either way the output vector is in index order, so callers that
//! pre-derive their seeds get identical results from both paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    /// Use the global rayon pool (or the current scoped pool).
    #[default]
    Parallel,
    /// Use a dedicated pool of the given size.
    Workers(usize),
}

pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Serial => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Workers(w) => match rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("falling back to serial execution: {e}");
                (0..n).map(f).collect()
            }
        },
        #[cfg(not(feature = "parallel"))]
        _ => (0..n).map(f).collect(),
    }
}

/// Like [`map_indexed`] for fallible work; the first error in index order wins.
pub fn try_map_indexed<T, E, F>(n: usize, exec: Execution, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(n, exec, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree_in_order() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        let a = map_indexed(257, Execution::Serial, f);
        let b = map_indexed(257, Execution::Parallel, f);
        let c = map_indexed(257, Execution::Workers(3), f);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn first_error_in_index_order() {
        let r: Result<Vec<usize>, usize> =
            try_map_indexed(10, Execution::Parallel, |i| if i % 4 == 3 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(3));
    }
}
