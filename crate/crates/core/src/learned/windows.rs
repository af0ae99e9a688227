use serde::{Deserialize, Serialize};

use crate::signal::{GazeRecording, VelocityTrace};

/// Input span of every window (ms at 1 kHz).
pub const WINDOW_LEN: usize = 100;

/// A training window: velocity over `end_idx - 99 ..= end_idx` as input,
/// displacement from `end_idx` to `end_idx + PI` as target. The input is
/// read from the velocity trace on demand rather than copied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub end_idx: usize,
    pub target: [f64; 2],
}

impl WindowSample {
    pub fn start_idx(&self) -> usize {
        self.end_idx + 1 - WINDOW_LEN
    }

    /// `(vx, vy)` per input step, oldest first.
    pub fn input<'a>(&self, vel: &'a VelocityTrace) -> impl Iterator<Item = [f64; 2]> + 'a {
        let s = self.start_idx();
        (s..=self.end_idx).map(move |i| [vel.vx[i], vel.vy[i]])
    }
}

/// Whether a window ending at `end` has a valid input span.
pub fn input_valid(rec: &GazeRecording, vel: &VelocityTrace, end: usize) -> bool {
    end + 1 >= WINDOW_LEN
        && end < rec.len()
        && (end + 1 - WINDOW_LEN..=end).all(|i| rec.is_valid(i) && vel.is_valid(i))
}

/// Every window with a valid input span and a valid target endpoint, stride 1.
pub fn make_windows(rec: &GazeRecording, vel: &VelocityTrace, pi_ms: usize) -> Vec<WindowSample> {
    let n = rec.len();
    if n < WINDOW_LEN + pi_ms || vel.len() != n {
        return Vec::new();
    }
    // Length of the valid run ending at each sample.
    let mut run = vec![0usize; n];
    let mut len = 0;
    for (i, r) in run.iter_mut().enumerate() {
        len = if rec.is_valid(i) && vel.is_valid(i) { len + 1 } else { 0 };
        *r = len;
    }
    (WINDOW_LEN - 1..n - pi_ms)
        .filter(|&end| run[end] >= WINDOW_LEN)
        .filter_map(|end| {
            let a = rec.position(end)?;
            let b = rec.position(end + pi_ms)?;
            Some(WindowSample {
                end_idx: end,
                target: [b.0 - a.0, b.1 - a.1],
            })
        })
        .collect()
}
