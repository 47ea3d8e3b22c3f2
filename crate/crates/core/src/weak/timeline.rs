//! Per-possession timelines and ball-possession intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Thresholds;
use crate::frame::{distance, TrackingFrame, PLAYERS_PER_FRAME, PLAYERS_PER_TEAM};
use crate::segment::{object_order, PlaySegment};

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineStep {
    pub ball: [f64; 2],
    pub ball_z: f64,
    /// Attackers 0..5, then defenders 5..10.
    pub players: [[f64; 2]; PLAYERS_PER_FRAME],
}

/// Canonical positions of one possession on the downsampled clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub dt: f64,
    /// Player ids in slot order: attackers then defenders, each sorted by id.
    pub ids: Vec<String>,
    pub steps: Vec<TimelineStep>,
}

impl Timeline {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_attacker(slot: usize) -> bool {
        slot < PLAYERS_PER_TEAM
    }

    /// Builds a timeline from canonical frames; `None` if the player set changes.
    pub fn from_frames(frames: &[TrackingFrame], dt: f64) -> Option<Timeline> {
        let first = frames.first()?;
        let ids: Vec<String> = object_order(first).into_iter().skip(1).collect();
        let mut steps = Vec::with_capacity(frames.len());
        for f in frames {
            let mut players = [[0.0; 2]; PLAYERS_PER_FRAME];
            for (slot, id) in ids.iter().enumerate() {
                let p = f.player(id)?;
                players[slot] = [p.x, p.y];
            }
            steps.push(TimelineStep {
                ball: f.ball_xy(),
                ball_z: f.ball_z,
                players,
            });
        }
        Some(Timeline { dt, ids, steps })
    }

    fn segment_step(seg: &PlaySegment, step: usize) -> TimelineStep {
        let mut players = [[0.0; 2]; PLAYERS_PER_FRAME];
        for (slot, p) in players.iter_mut().enumerate() {
            *p = seg.position(slot + 1, step);
        }
        TimelineStep {
            ball: seg.position(0, step),
            ball_z: seg.ball_z[step],
            players,
        }
    }

    /// Steps reconstructed from a segment's future velocities.
    fn future_steps(seg: &PlaySegment) -> Vec<TimelineStep> {
        let Some(paths) = (0..11).map(|o| seg.future_positions(o)).collect::<Option<Vec<_>>>() else {
            return Vec::new();
        };
        let last_z = *seg.ball_z.last().unwrap_or(&0.0);
        (0..seg.horizon)
            .map(|h| {
                let mut players = [[0.0; 2]; PLAYERS_PER_FRAME];
                for (slot, p) in players.iter_mut().enumerate() {
                    *p = paths[slot + 1][h];
                }
                TimelineStep {
                    ball: paths[0][h],
                    ball_z: seg.ball_z.get(seg.steps + h).copied().unwrap_or(last_z),
                    players,
                }
            })
            .collect()
    }
}

/// A timeline stitched from segments, with each member's `(segment index, step offset)`.
#[derive(Debug)]
pub struct BuiltTimeline {
    pub timeline: Timeline,
    pub members: Vec<(usize, usize)>,
}

/// Groups segments by possession and concatenates contiguous windows. The
/// last window of each contiguous run contributes its future steps.
pub fn build_timelines(segments: &[PlaySegment]) -> Vec<BuiltTimeline> {
    let mut groups: BTreeMap<(&str, &str, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in segments.iter().enumerate() {
        groups.entry(s.provenance.possession_key()).or_default().push(i);
    }
    let mut out = Vec::new();
    for (_, mut idx) in groups {
        idx.sort_by_key(|&i| segments[i].provenance.start_step);
        let mut current: Option<(BuiltTimeline, usize)> = None;
        for &i in &idx {
            let seg = &segments[i];
            let continues = current.as_ref().is_some_and(|(b, next_step)| {
                *next_step == seg.provenance.start_step && b.timeline.ids[..] == seg.object_ids[1..]
            });
            if !continues {
                if let Some((b, _)) = current.take() {
                    out.push(finish(b, segments));
                }
                current = Some((
                    BuiltTimeline {
                        timeline: Timeline {
                            dt: seg.dt,
                            ids: seg.object_ids[1..].to_vec(),
                            steps: Vec::new(),
                        },
                        members: Vec::new(),
                    },
                    seg.provenance.start_step,
                ));
            }
            let (b, next_step) = current.as_mut().unwrap();
            b.members.push((i, b.timeline.steps.len()));
            b.timeline
                .steps
                .extend((0..seg.steps).map(|s| Timeline::segment_step(seg, s)));
            *next_step = seg.provenance.start_step + seg.steps;
        }
        if let Some((b, _)) = current {
            out.push(finish(b, segments));
        }
    }
    out
}

fn finish(mut b: BuiltTimeline, segments: &[PlaySegment]) -> BuiltTimeline {
    if let Some(&(last, _)) = b.members.last() {
        b.timeline.steps.extend(Timeline::future_steps(&segments[last]));
    }
    b
}

/// A maximal run of steps during which one player controls the ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PossessionInterval {
    pub slot: usize,
    pub player_id: String,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Planar ball speed at each step: backward difference, forward at step 0.
pub fn ball_speeds(tl: &Timeline) -> Vec<f64> {
    let n = tl.len();
    (0..n)
        .map(|t| match (t, n) {
            (_, 0 | 1) => 0.0,
            (0, _) => distance(tl.steps[1].ball, tl.steps[0].ball) / tl.dt,
            _ => distance(tl.steps[t].ball, tl.steps[t - 1].ball) / tl.dt,
        })
        .collect()
}

/// The player holding the ball at each step, if anyone does.
pub fn holders(tl: &Timeline, th: &Thresholds) -> Vec<Option<usize>> {
    let speeds = ball_speeds(tl);
    tl.steps
        .iter()
        .zip(speeds)
        .map(|(step, speed)| {
            let mut best: Option<(usize, f64)> = None;
            for (slot, p) in step.players.iter().enumerate() {
                let d = distance(step.ball, *p);
                let better = match best {
                    None => true,
                    Some((b, bd)) => d < bd || (d == bd && tl.ids[slot] < tl.ids[b]),
                };
                if better {
                    best = Some((slot, d));
                }
            }
            let (slot, d) = best?;
            let controlled = d <= th.possession_max_ball_distance
                && step.ball_z < th.possession_max_ball_height
                && speed < th.possession_max_ball_speed;
            controlled.then_some(slot)
        })
        .collect()
}

pub fn detect_possessions(tl: &Timeline, th: &Thresholds) -> Vec<PossessionInterval> {
    let held = holders(tl, th);
    let mut out = Vec::new();
    let mut t = 0;
    while t < held.len() {
        let Some(slot) = held[t] else {
            t += 1;
            continue;
        };
        let start = t;
        while t < held.len() && held[t] == Some(slot) {
            t += 1;
        }
        if t - start >= th.possession_min_steps {
            out.push(PossessionInterval {
                slot,
                player_id: tl.ids[slot].clone(),
                start,
                end: t - 1,
            });
        }
    }
    out
}
