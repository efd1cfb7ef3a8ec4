//! Channel-domain decomposition over a group of compute workers.
//!
//! A worker owns a contiguous block of channels. On this CPU build a
//! worker is a thread of the group's private pool; everything the solver
//! runs inside [`WorkerGroup::install`] is confined to those threads.

use std::ops::Range;
use std::sync::Arc;

use crate::{Error, Result, C32};

/// Most workers that may share one reconstruction (one peer-access domain).
pub const GROUP_SIZE_MAX: usize = 4;

/// Contiguous balanced blocks; the first `J mod A` blocks get one extra.
pub fn partition_channels(channels: usize, workers: usize) -> Result<Vec<Range<usize>>> {
    if workers == 0 || workers > GROUP_SIZE_MAX || workers > channels {
        return Err(Error::Decomposition(format!(
            "cannot spread {channels} channels over {workers} workers (max {GROUP_SIZE_MAX})"
        )));
    }
    let base = channels / workers;
    let extra = channels % workers;
    let mut start = 0;
    Ok((0..workers)
        .map(|a| {
            let len = base + usize::from(a < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Sums partial arrays in index order and returns the result every
/// participant sees. The fixed order makes the sum independent of how the
/// partials were distributed.
pub fn all_reduce_sum(partials: &[&[C32]]) -> Result<Vec<C32>> {
    let mut out = match partials.first() {
        Some(p) => p.to_vec(),
        None => return Err(Error::Decomposition("no partials to reduce".into())),
    };
    all_reduce_sum_into(&partials[1..], &mut out)?;
    Ok(out)
}

/// `acc += p_0 + p_1 + ...`, strictly left to right per element.
pub fn all_reduce_sum_into(partials: &[&[C32]], acc: &mut [C32]) -> Result<()> {
    if let Some(bad) = partials.iter().position(|p| p.len() != acc.len()) {
        return Err(Error::Decomposition(format!(
            "partial {bad} has {} elements, expected {}",
            partials[bad].len(),
            acc.len()
        )));
    }
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    Ok(())
}

/// `A` workers serving one reconstruction thread.
#[derive(Clone)]
pub struct WorkerGroup {
    channels: usize,
    assignment: Vec<Range<usize>>,
    pool: Arc<rayon::ThreadPool>,
}

impl std::fmt::Debug for WorkerGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerGroup")
            .field("channels", &self.channels)
            .field("assignment", &self.assignment)
            .finish()
    }
}

impl WorkerGroup {
    pub fn new(channels: usize, workers: usize) -> Result<Self> {
        let assignment = partition_channels(channels, workers)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("worker-{i}"))
            .build()
            .map_err(|e| Error::Decomposition(format!("cannot start workers: {e}")))?;
        Ok(Self {
            channels,
            assignment,
            pool: Arc::new(pool),
        })
    }

    pub fn workers(&self) -> usize {
        self.assignment.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn assignment(&self) -> &[Range<usize>] {
        &self.assignment
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.assignment.iter().map(|r| r.len()).collect()
    }

    /// Runs `f` with the group's threads as the ambient rayon pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// Calls `f(j, &mut items[j])` for every channel; each worker walks
    /// its own block in order, workers run concurrently.
    pub fn for_each_channel<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        assert_eq!(items.len(), self.channels, "one item per channel");
        let f = &f;
        let mut rest = items;
        let mut blocks = Vec::with_capacity(self.assignment.len());
        for r in &self.assignment {
            let (head, tail) = rest.split_at_mut(r.len());
            blocks.push((r.start, head));
            rest = tail;
        }
        if blocks.len() == 1 {
            let (start, block) = blocks.pop().expect("one block");
            for (i, item) in block.iter_mut().enumerate() {
                f(start + i, item);
            }
            return;
        }
        self.pool.scope(|s| {
            for (start, block) in blocks {
                s.spawn(move |_| {
                    for (i, item) in block.iter_mut().enumerate() {
                        f(start + i, item);
                    }
                });
            }
        });
    }
}
