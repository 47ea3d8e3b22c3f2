//! Splitting event frame sequences into team possessions.
//!
//! A possession starts where the shot clock resets (any increase between two
//! consecutive frames) or where tracking drops out for more than two sampling
//! intervals. Only the stretch in which all ten players are in the offensive
//! half is kept, and stretches shorter than the minimum duration are dropped.

use serde::{Deserialize, Serialize};

use crate::frame::{Orientation, Team, TrackingFrame, HALF_COURT};
use crate::ingest::events;

/// Direction of the attacked basket in the frame's own coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    /// Raw frame, basket at `x = 94`.
    PlusX,
    /// Raw frame, basket at `x = 0`.
    MinusX,
    /// Canonical frame.
    PlusY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Possession {
    pub game_id: String,
    pub event_id: String,
    /// Inclusive index range into the frame sequence.
    pub start: usize,
    pub end: usize,
    pub attack: Attack,
}

impl Possession {
    pub fn frame_count(&self) -> usize {
        self.end + 1 - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PossessionConfig {
    /// Sampling interval of the raw frames, in seconds.
    pub raw_dt: f64,
    pub min_duration_s: f64,
    /// A time gap larger than this many sampling intervals splits a possession.
    pub max_gap_intervals: f64,
}

impl Default for PossessionConfig {
    fn default() -> Self {
        Self {
            raw_dt: 0.04,
            min_duration_s: 3.0,
            max_gap_intervals: 2.0,
        }
    }
}

const TIME_EPS: f64 = 1e-6;

pub fn segment_possessions(frames: &[TrackingFrame]) -> Vec<Possession> {
    segment_possessions_with(frames, &PossessionConfig::default())
}

/// Frames must be sorted by time within each event; returned ranges index into `frames`.
pub fn segment_possessions_with(frames: &[TrackingFrame], cfg: &PossessionConfig) -> Vec<Possession> {
    let mut out = Vec::new();
    let mut offset = 0;
    for event in events(frames) {
        if event.iter().all(|f| f.shot_clock.is_none()) {
            log::info!(
                "event {}/{} has no shot clock; using the event as one possession candidate",
                event[0].game_id,
                event[0].event_id
            );
        }
        for (lo, hi) in clock_chunks(event, cfg) {
            let chunk = &event[lo..=hi];
            let attack = attack_direction(chunk);
            for (a, b) in front_court_runs(chunk, attack) {
                let duration = chunk[b].t - chunk[a].t;
                if duration + TIME_EPS < cfg.min_duration_s {
                    continue;
                }
                out.push(Possession {
                    game_id: chunk[a].game_id.clone(),
                    event_id: chunk[a].event_id.clone(),
                    start: offset + lo + a,
                    end: offset + lo + b,
                    attack,
                });
            }
        }
        offset += event.len();
    }
    out
}

/// Inclusive ranges between shot-clock resets and tracking gaps.
fn clock_chunks(event: &[TrackingFrame], cfg: &PossessionConfig) -> Vec<(usize, usize)> {
    let max_gap = cfg.max_gap_intervals * cfg.raw_dt + TIME_EPS;
    let mut chunks = Vec::new();
    let mut start = 0;
    for k in 1..event.len() {
        let reset = matches!(
            (event[k - 1].shot_clock, event[k].shot_clock),
            (Some(prev), Some(cur)) if cur > prev
        );
        let gap = event[k].t - event[k - 1].t > max_gap;
        if reset || gap {
            chunks.push((start, k - 1));
            start = k;
        }
    }
    if !event.is_empty() {
        chunks.push((start, event.len() - 1));
    }
    chunks
}

/// The offense attacks the half it occupies on average over the chunk.
pub fn attack_direction(frames: &[TrackingFrame]) -> Attack {
    if frames.first().is_some_and(|f| f.orientation == Orientation::Canonical) {
        return Attack::PlusY;
    }
    let (sum, n) = frames
        .iter()
        .flat_map(|f| f.team(Team::Offense))
        .fold((0.0, 0usize), |(s, n), p| (s + p.x, n + 1));
    if n == 0 || sum / n as f64 >= HALF_COURT {
        Attack::PlusX
    } else {
        Attack::MinusX
    }
}

pub fn in_front_court(frame: &TrackingFrame, attack: Attack) -> bool {
    frame.players.iter().all(|p| match attack {
        Attack::PlusX => p.x >= HALF_COURT,
        Attack::MinusX => p.x <= HALF_COURT,
        Attack::PlusY => p.y >= HALF_COURT,
    })
}

fn front_court_runs(chunk: &[TrackingFrame], attack: Attack) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, f) in chunk.iter().enumerate() {
        match (in_front_court(f, attack), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, chunk.len() - 1));
    }
    runs
}
