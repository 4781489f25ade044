//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves input order in its output, so reductions performed
//! on the returned vectors are deterministic regardless of the policy.

/// How per-item work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    #[default]
    Parallel,
}

impl ExecPolicy {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            ExecPolicy::Parallel
        } else {
            ExecPolicy::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Parallel
    }
}

/// Maps `f` over `items`, returning results in input order.
pub fn map<T, U, F>(policy: ExecPolicy, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = policy;
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<U, F>(policy: ExecPolicy, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if policy.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = policy;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree_and_keep_order() {
        let items: Vec<u64> = (0..10_000).collect();
        let seq = map(ExecPolicy::Sequential, &items, |x| x * x + 1);
        let par = map(ExecPolicy::Parallel, &items, |x| x * x + 1);
        assert_eq!(seq, par);
        assert_eq!(map_range(ExecPolicy::Parallel, 5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
