//! Per-stage wall-clock statistics.

use std::fmt;
use std::time::{Duration, Instant};

/// Timed pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ImuPredict,
    DopplerFusion,
    CloudMatch,
    TotalTime,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::ImuPredict, Stage::DopplerFusion, Stage::CloudMatch, Stage::TotalTime];

    pub fn name(self) -> &'static str {
        match self {
            Stage::ImuPredict => "ImuPredict",
            Stage::DopplerFusion => "DopplerFusion",
            Stage::CloudMatch => "CloudMatch",
            Stage::TotalTime => "TotalTime",
        }
    }
}

/// Running min/max/mean of a duration series.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stats {
    pub count: u64,
    pub min: Duration,
    pub max: Duration,
    pub total: Duration,
}

impl Stats {
    pub fn add(&mut self, d: Duration) {
        if self.count == 0 || d < self.min {
            self.min = d;
        }
        self.max = self.max.max(d);
        self.total += d;
        self.count += 1;
    }

    pub fn mean(&self) -> Duration {
        if self.count == 0 {
            Duration::ZERO
        } else {
            self.total / self.count as u32
        }
    }
}

/// Per-frame timing accumulated over a run. One "frame" is one radar scan
/// together with the IMU propagation that led up to it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingReport {
    stats: [Stats; 4],
    pending: [Duration; 4],
}

impl TimingReport {
    /// Adds `d` to the current frame's tally for `stage`.
    pub fn record(&mut self, stage: Stage, d: Duration) {
        self.pending[stage as usize] += d;
    }

    /// Times `f` under `stage`.
    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed());
        out
    }

    /// Closes the current frame. Without an explicit `TotalTime` record the
    /// total is the sum of the stages.
    pub fn end_frame(&mut self) {
        let sum: Duration = self.pending[..3].iter().sum();
        let total = &mut self.pending[Stage::TotalTime as usize];
        if total.is_zero() {
            *total = sum;
        }
        for (s, p) in self.stats.iter_mut().zip(self.pending.iter_mut()) {
            s.add(std::mem::take(p));
        }
    }

    pub fn stats(&self, stage: Stage) -> Stats {
        self.stats[stage as usize]
    }

    pub fn frames(&self) -> u64 {
        self.stats[Stage::TotalTime as usize].count
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>10} {:>10} {:>10}", "stage", "Min[ms]", "Max[ms]", "Mean[ms]")?;
        for stage in Stage::ALL {
            let s = self.stats(stage);
            let ms = |d: Duration| d.as_secs_f64() * 1e3;
            writeln!(f, "{:<14} {:>10.3} {:>10.3} {:>10.3}", stage.name(), ms(s.min), ms(s.max), ms(s.mean()))?;
        }
        write!(f, "frames {}", self.frames())
    }
}
