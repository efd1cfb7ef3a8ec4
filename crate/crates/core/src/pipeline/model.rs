//! Simulated-clock model of a linear stage pipeline.

/// Start/finish time of every (stage, frame) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ClockTrace {
    /// `start[s][f]`
    pub start: Vec<Vec<f64>>,
    /// `finish[s][f]`: the frame has left stage `s` (queue space permitting).
    pub finish: Vec<Vec<f64>>,
}

impl ClockTrace {
    pub fn stages(&self) -> usize {
        self.start.len()
    }

    pub fn frames(&self) -> usize {
        self.start.first().map_or(0, Vec::len)
    }

    /// Time at which the last frame leaves the last stage.
    pub fn makespan(&self) -> f64 {
        self.finish
            .last()
            .and_then(|f| f.last())
            .copied()
            .unwrap_or(0.0)
    }

    /// Latency of frame `f` from entering stage 0 to leaving the last stage.
    pub fn latency(&self, f: usize) -> f64 {
        self.finish[self.stages() - 1][f] - self.start[0][f]
    }

    /// Frames accepted by the first stage before the last stage gets busy.
    pub fn prologue(&self) -> usize {
        let first_out = self.start[self.stages() - 1][0];
        self.start[0].iter().filter(|&&t| t < first_out).count()
    }

    /// Frames reaching the last stage after the first stage went idle.
    pub fn epilogue(&self) -> usize {
        let last_in = self.finish[0][self.frames() - 1];
        self.start[self.stages() - 1]
            .iter()
            .filter(|&&t| t >= last_in)
            .count()
    }

    /// Interval between consecutive completions, excluding the fill.
    pub fn steady_interval(&self) -> Option<f64> {
        let out = &self.finish[self.stages() - 1];
        if out.len() < 2 {
            return None;
        }
        let gaps: Vec<f64> = out.windows(2).map(|w| w[1] - w[0]).collect();
        crate::metrics::median(&gaps)
    }
}

/// Runs `frames` frames through stages with fixed per-frame costs.
///
/// Each stage handles one frame at a time, in order. With `capacity =
/// Some(c)` the queue in front of each downstream stage holds `c` frames and
/// a stage stays blocked on a finished frame until there is room.
pub fn simulate_pipeline(frames: usize, costs: &[f64], capacity: Option<usize>) -> ClockTrace {
    let stages = costs.len();
    let mut start = vec![vec![0.0; frames]; stages];
    let mut finish = vec![vec![0.0; frames]; stages];
    for f in 0..frames {
        for s in 0..stages {
            let free = if f == 0 { 0.0 } else { finish[s][f - 1] };
            let ready = if s == 0 { 0.0 } else { finish[s - 1][f] };
            let t0 = f64::max(free, ready);
            start[s][f] = t0;
            let mut done = t0 + costs[s];
            // With `c` slots downstream, frame f can only be handed over once
            // the next stage has taken frame f - c off the queue.
            if let (Some(c), true) = (capacity, s + 1 < stages) {
                let c = c.max(1);
                if f >= c {
                    done = done.max(start[s + 1][f - c]);
                }
            }
            finish[s][f] = done;
        }
    }
    ClockTrace { start, finish }
}
