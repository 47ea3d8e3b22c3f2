//! Key-frame rules and the segment label decision.

use serde::{Deserialize, Serialize};

use super::assign::DefensiveAssignment;
use super::timeline::{PossessionInterval, Timeline};
use super::{Thresholds, RULE_VERSION};
use crate::frame::{distance, PLAYERS_PER_TEAM};
use crate::labels::{LabelRecord, PlayClass};

/// Slots index the timeline's players: attackers 0..5, defenders 5..10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickAndRollKey {
    pub step: usize,
    pub handler: usize,
    pub screener: usize,
    pub defender: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandoffKey {
    pub step: usize,
    pub giver: usize,
    pub receiver: usize,
}

/// A key frame reduced to what the label decision needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyFrame {
    pub step: usize,
    pub kind: PlayClass,
}

/// A step is a pick-and-roll key frame when the ball handler, a teammate and
/// the handler's assigned defender are all close together.
pub fn detect_pick_and_rolls(
    tl: &Timeline,
    intervals: &[PossessionInterval],
    assignments: &[DefensiveAssignment],
    th: &Thresholds,
) -> Vec<PickAndRollKey> {
    let mut out = Vec::new();
    for iv in intervals.iter().filter(|iv| Timeline::is_attacker(iv.slot)) {
        let handler = iv.slot;
        for step in iv.start..=iv.end {
            let pos = &tl.steps[step].players;
            let defender = PLAYERS_PER_TEAM + assignments[step].defender_of[handler];
            let defender_handler = distance(pos[defender], pos[handler]);
            if defender_handler > th.pnr_max_defender_handler {
                continue;
            }
            for screener in (0..PLAYERS_PER_TEAM).filter(|&a| a != handler) {
                if distance(pos[handler], pos[screener]) <= th.pnr_max_handler_screener
                    && distance(pos[defender], pos[screener]) <= th.pnr_max_defender_screener
                {
                    out.push(PickAndRollKey {
                        step,
                        handler,
                        screener,
                        defender,
                    });
                }
            }
        }
    }
    out.sort_by_key(|k| (k.step, k.handler, k.screener));
    out
}

/// A handoff key frame is the first step of a possession that directly
/// follows a teammate's possession, when the two are close and the ball
/// changed hands quickly. Possession changes across teams are turnovers.
pub fn detect_handoffs(tl: &Timeline, intervals: &[PossessionInterval], th: &Thresholds) -> Vec<HandoffKey> {
    let mut sorted: Vec<&PossessionInterval> = intervals.iter().collect();
    sorted.sort_by_key(|iv| iv.start);
    let mut out = Vec::new();
    for pair in sorted.windows(2) {
        let (p, q) = (pair[0], pair[1]);
        if p.slot == q.slot || !Timeline::is_attacker(p.slot) || !Timeline::is_attacker(q.slot) {
            continue;
        }
        let gap = (q.start - p.end) as f64 * tl.dt;
        if gap > th.handoff_max_gap_s + 1e-9 {
            continue;
        }
        let pos = &tl.steps[q.start].players;
        if distance(pos[p.slot], pos[q.slot]) < th.handoff_max_distance {
            out.push(HandoffKey {
                step: q.start,
                giver: p.slot,
                receiver: q.slot,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Any key frame inside the segment counts; the earliest decides, pick-and-roll on ties.
    #[default]
    EarliestKeyFrame,
    /// The key frame closest to the segment center decides, pick-and-roll on ties.
    NearestCenter,
}

/// Labels one segment from the key frames (segment-local steps) inside it.
pub fn label_segment(segment_id: &str, steps: usize, keys: &[KeyFrame], policy: LabelPolicy) -> LabelRecord {
    let rank = |k: &KeyFrame| {
        let tie = (k.kind != PlayClass::PickAndRoll) as usize;
        match policy {
            LabelPolicy::EarliestKeyFrame => (k.step * 2, tie),
            // doubled distance to the center stays integral
            LabelPolicy::NearestCenter => ((2 * k.step).abs_diff(steps.saturating_sub(1)), tie),
        }
    };
    match keys.iter().filter(|k| k.step < steps).min_by_key(|k| rank(k)) {
        Some(k) => LabelRecord::weak(segment_id, k.kind, Some(k.step), RULE_VERSION),
        None => LabelRecord::weak(segment_id, PlayClass::Other, None, RULE_VERSION),
    }
}

#[cfg(test)]
mod tests {
    use super::super::assign::assign_defense;
    use super::super::timeline::detect_possessions;
    use super::super::timeline::tests::{glue_ball, static_timeline};
    use super::*;

    fn assignments(tl: &Timeline) -> Vec<DefensiveAssignment> {
        (0..tl.len())
            .map(|s| assign_defense(s, &tl.steps[s].players[..5], &tl.steps[s].players[5..]))
            .collect()
    }

    /// Places handler (slot 0), screener (slot 1) and the handler's defender
    /// (slot 5) so the triangle has the given side lengths, with the other
    /// players far away.
    fn triangle(handler_screener: f64, defender_handler: f64, defender_screener: f64) -> Timeline {
        let mut tl = static_timeline(10);
        let a = handler_screener;
        // defender position from the two distances (law of cosines)
        let x = (defender_handler.powi(2) - defender_screener.powi(2) + a * a) / (2.0 * a);
        let y = (defender_handler.powi(2) - x * x).max(0.0).sqrt();
        for s in &mut tl.steps {
            s.players[0] = [20.0, 60.0];
            s.players[1] = [20.0 + a, 60.0];
            s.players[5] = [20.0 + x, 60.0 + y];
            for i in 2..5 {
                s.players[i] = [3.0 + 22.0 * (i - 2) as f64, 90.0];
                s.players[i + 5] = [3.0 + 22.0 * (i - 2) as f64, 86.0];
            }
            s.players[6] = [48.0, 60.0];
        }
        glue_ball(&mut tl, 0, 0..10);
        tl
    }

    fn pnr_keys(tl: &Timeline, th: &Thresholds) -> Vec<PickAndRollKey> {
        let iv = detect_possessions(tl, th);
        detect_pick_and_rolls(tl, &iv, &assignments(tl), th)
    }

    #[test]
    fn close_triangle_is_a_key_frame() {
        let tl = triangle(4.0, 5.0, 2.0);
        let keys = pnr_keys(&tl, &Thresholds::default());
        assert_eq!(keys.len(), 10);
        assert_eq!(
            keys[0],
            PickAndRollKey {
                step: 0,
                handler: 0,
                screener: 1,
                defender: 5
            }
        );
    }

    #[test]
    fn defender_screener_boundary_is_inclusive() {
        let tl = triangle(4.0, 5.0, 3.0);
        let d = distance(tl.steps[0].players[5], tl.steps[0].players[1]);
        assert!((d - 3.0).abs() < 1e-12);
        // exact boundary: compare against a threshold equal to the realized distance
        let th = Thresholds {
            pnr_max_defender_screener: d,
            ..Thresholds::default()
        };
        assert!(!pnr_keys(&tl, &th).is_empty());
        let th = Thresholds {
            pnr_max_defender_screener: d - 1e-9,
            ..Thresholds::default()
        };
        assert!(pnr_keys(&tl, &th).is_empty());
    }

    #[test]
    fn spread_players_never_trigger() {
        let tl = triangle(20.0, 20.0, 20.0);
        assert!(pnr_keys(&tl, &Thresholds::default()).is_empty());
    }

    #[test]
    fn steps_outside_possession_are_ignored() {
        let mut tl = triangle(4.0, 5.0, 2.0);
        for s in &mut tl.steps {
            s.ball_z = 11.0;
        }
        assert!(pnr_keys(&tl, &Thresholds::default()).is_empty());
    }

    /// A1 holds for steps 0..5, ball in the air at step 5, A2 holds from step 6.
    fn handoff(receiver_slot: usize, separation: f64) -> Timeline {
        let mut tl = static_timeline(12);
        for s in &mut tl.steps {
            s.players[0] = [20.0, 65.0];
            s.players[receiver_slot] = [20.0 + separation, 65.0];
            // defenders sag far enough not to steal the ball
            s.players[5] = [20.0, 80.0];
        }
        if receiver_slot != 1 {
            for s in &mut tl.steps {
                s.players[1] = [45.0, 50.0];
            }
        }
        glue_ball(&mut tl, 0, 0..5);
        // in the air above the receiver, so the catch step is not a jump
        tl.steps[5].ball = [20.0 + separation, 65.0];
        tl.steps[5].ball_z = 12.0;
        glue_ball(&mut tl, receiver_slot, 6..12);
        tl
    }

    fn handoff_keys_with(tl: &Timeline, th: &Thresholds) -> Vec<HandoffKey> {
        detect_handoffs(tl, &detect_possessions(tl, th), th)
    }

    #[test]
    fn teammate_transfer_within_reach_is_a_handoff() {
        let tl = handoff(1, 6.0);
        let keys = handoff_keys_with(&tl, &Thresholds::default());
        assert_eq!(
            keys,
            vec![HandoffKey {
                step: 6,
                giver: 0,
                receiver: 1
            }]
        );
    }

    #[test]
    fn next_step_transfer_at_six_feet() {
        let mut tl = static_timeline(12);
        for s in &mut tl.steps {
            s.players[0] = [20.0, 65.0];
            s.players[1] = [26.0, 65.0];
            s.players[5] = [20.0, 80.0];
        }
        // the ball drifts across slowly enough to stay under the speed gate
        for (i, s) in tl.steps.iter_mut().enumerate() {
            s.ball = match i {
                0..=4 => [20.0, 65.0],
                5 => [22.9, 65.0],
                6 => [25.5, 65.0],
                _ => [26.0, 65.0],
            };
        }
        let iv = detect_possessions(&tl, &Thresholds::default());
        assert_eq!(iv.iter().map(|i| (i.slot, i.start, i.end)).collect::<Vec<_>>(), vec![(0, 0, 5), (1, 6, 11)]);
        let keys = detect_handoffs(&tl, &iv, &Thresholds::default());
        assert_eq!(
            keys,
            vec![HandoffKey {
                step: 6,
                giver: 0,
                receiver: 1
            }]
        );
    }

    #[test]
    fn transfer_beyond_reach_is_not() {
        let tl = handoff(1, 7.0);
        assert!(handoff_keys_with(&tl, &Thresholds::default()).is_empty());
    }

    #[test]
    fn cross_team_change_is_a_turnover() {
        let mut tl = handoff(7, 2.0);
        // keep the stolen ball clear of the attackers
        for s in &mut tl.steps {
            s.players[2] = [45.0, 90.0];
        }
        let iv = detect_possessions(&tl, &Thresholds::default());
        assert_eq!(iv.len(), 2);
        assert_eq!(iv[1].slot, 7);
        assert!(detect_handoffs(&tl, &iv, &Thresholds::default()).is_empty());
    }

    #[test]
    fn gap_boundary_is_inclusive() {
        // giver ends at step 4, receiver starts at 6: 0.24 s
        let tl = handoff(1, 4.0);
        let gap = |g: f64| Thresholds {
            handoff_max_gap_s: g,
            ..Thresholds::default()
        };
        assert!(handoff_keys_with(&tl, &gap(0.23)).is_empty());
        assert_eq!(handoff_keys_with(&tl, &gap(0.24)).len(), 1);
    }

    fn key(step: usize, kind: PlayClass) -> KeyFrame {
        KeyFrame { step, kind }
    }

    #[test]
    fn label_decision() {
        let p = LabelPolicy::EarliestKeyFrame;
        assert_eq!(label_segment("s", 10, &[key(4, PlayClass::PickAndRoll)], p).label, PlayClass::PickAndRoll);
        let mixed = [key(7, PlayClass::PickAndRoll), key(2, PlayClass::Handoff)];
        let r = label_segment("s", 10, &mixed, p);
        assert_eq!((r.label, r.key_frame), (PlayClass::Handoff, Some(2)));
        let tie = [key(3, PlayClass::Handoff), key(3, PlayClass::PickAndRoll)];
        assert_eq!(label_segment("s", 10, &tie, p).label, PlayClass::PickAndRoll);
        let r = label_segment("s", 10, &[], p);
        assert_eq!((r.label, r.key_frame), (PlayClass::Other, None));
        // nearest-center prefers the p&r at step 5 over the handoff at 2
        let r = label_segment("s", 10, &mixed.map(|k| if k.step == 7 { key(5, k.kind) } else { k }), LabelPolicy::NearestCenter);
        assert_eq!(r.label, PlayClass::PickAndRoll);
    }
}
