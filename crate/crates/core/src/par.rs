//! Sequential/parallel execution switch for the data-parallel kernels.
//!
//! Every kernel routed through [`Exec`] splits its work into fixed,
//! input-determined pieces and combines the partial results in index order,
//! so both modes produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for a data-parallel kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Uses the rayon global pool. Without the `parallel` feature this runs
    /// sequentially.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `f(0..n)` collected in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// `f` applied to every item, collected in order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// `f` applied to consecutive chunks of `chunk` items (the last may be
    /// shorter), collected in order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_chunks(chunk).map(f).collect();
        }
        items.chunks(chunk).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = Exec::Sequential.map_chunks(&xs, 37, |c| c.iter().sum::<u64>());
        let par = Exec::Parallel.map_chunks(&xs, 37, |c| c.iter().sum::<u64>());
        assert_eq!(seq, par);
        assert_eq!(seq.len(), 28);
        assert_eq!(Exec::Parallel.map_range(5, |i| i * i), vec![0, 1, 4, 9, 16]);
        assert_eq!(Exec::Sequential.map(&xs[..3], |x| x + 1), vec![1, 2, 3]);
    }
}
