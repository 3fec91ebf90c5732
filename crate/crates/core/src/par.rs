//! Order-preserving data-parallel map. Built without the `parallel`
//! feature, every call runs serially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    #[default]
    Serial,
    /// Worker count; 0 means one per available core.
    Threads(usize),
}

impl Parallelism {
    /// `0` and `1` both mean serial on the command line.
    pub fn from_count(n: usize) -> Self {
        if n <= 1 {
            Parallelism::Serial
        } else {
            Parallelism::Threads(n)
        }
    }

    pub fn is_serial(self) -> bool {
        matches!(self, Parallelism::Serial) || !cfg!(feature = "parallel")
    }
}

/// Applies `f` to every item and returns results in input order.
pub fn map<T, R, F>(par: Parallelism, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match par {
        Parallelism::Serial => items.into_iter().map(f).collect(),
        Parallelism::Threads(n) => threaded(n, items, f),
    }
}

#[cfg(feature = "parallel")]
fn threaded<T, R, F>(n: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(|| items.into_par_iter().map(f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running serially");
            items.into_iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn threaded<T, R, F>(_n: usize, items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}
