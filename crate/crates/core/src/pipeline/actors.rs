//! Generic chain of stage actors over bounded mailboxes.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

pub type StageFn<T> = Box<dyn FnMut(T) -> T + Send>;

/// Timing record of a [`run_chain`] call.
#[derive(Clone, Debug)]
pub struct ChainTrace<T> {
    pub outputs: Vec<T>,
    /// Time since the chain started at which each frame left the last stage.
    pub completed: Vec<Duration>,
    pub max_in_flight: usize,
}

impl<T> ChainTrace<T> {
    /// Median completion interval, skipping `skip` frames of fill.
    pub fn steady_interval(&self, skip: usize) -> Option<Duration> {
        let gaps: Vec<f64> = self
            .completed
            .windows(2)
            .skip(skip)
            .map(|w| (w[1] - w[0]).as_secs_f64())
            .collect();
        crate::metrics::median(&gaps).map(Duration::from_secs_f64)
    }
}

/// Pushes `inputs` through `stages`, one thread per stage, with a bounded
/// queue of `capacity` between neighbours.
pub fn run_chain<T: Send + 'static>(
    inputs: Vec<T>,
    stages: Vec<StageFn<T>>,
    capacity: usize,
) -> ChainTrace<T> {
    let t0 = Instant::now();
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));

    let (src_tx, mut rx) = sync_channel::<T>(capacity);
    let mut handles = Vec::with_capacity(stages.len());
    for mut stage in stages {
        let (tx, next_rx) = sync_channel::<T>(capacity);
        let input = std::mem::replace(&mut rx, next_rx);
        handles.push(thread::spawn(move || {
            for msg in input {
                if tx.send(stage(msg)).is_err() {
                    break;
                }
            }
        }));
    }

    let feeder = {
        let in_flight = in_flight.clone();
        let peak = peak.clone();
        thread::spawn(move || {
            for x in inputs {
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                if src_tx.send(x).is_err() {
                    break;
                }
            }
        })
    };

    let mut outputs = Vec::new();
    let mut completed = Vec::new();
    for y in rx {
        in_flight.fetch_sub(1, Ordering::SeqCst);
        completed.push(t0.elapsed());
        outputs.push(y);
    }
    feeder.join().expect("feeder panicked");
    for h in handles {
        h.join().expect("stage panicked");
    }
    ChainTrace {
        outputs,
        completed,
        max_in_flight: peak.load(Ordering::SeqCst),
    }
}
