//! Rule-based weak labeling of pick-and-rolls and handoffs.
//!
//! All rules run on the downsampled timeline that the segments use, so a
//! label can be recomputed from the segment store alone. The pipeline is:
//! ball possession intervals, per-step defensive assignment, key-frame rules,
//! then one label per segment.

pub mod assign;
pub mod rules;
pub mod timeline;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelRecord, PlayClass};
use crate::segment::PlaySegment;

pub use assign::{assign_defense, DefensiveAssignment};
pub use rules::{
    detect_handoffs, detect_pick_and_rolls, label_segment, HandoffKey, KeyFrame, LabelPolicy, PickAndRollKey,
};
pub use timeline::{detect_possessions, PossessionInterval, Timeline, TimelineStep};

pub const RULE_VERSION: &str = "nets-rules-1";

/// Every distance, time and count the rules compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub possession_min_steps: usize,
    pub possession_max_ball_distance: f64,
    pub possession_max_ball_height: f64,
    pub possession_max_ball_speed: f64,
    /// Handler to screener, inclusive.
    pub pnr_max_handler_screener: f64,
    /// Handler's defender to handler, inclusive.
    pub pnr_max_defender_handler: f64,
    /// Handler's defender to screener, inclusive.
    pub pnr_max_defender_screener: f64,
    /// Giver to receiver at the receiver's first possession step, strict.
    pub handoff_max_distance: f64,
    /// Time from the giver's last to the receiver's first possession step.
    pub handoff_max_gap_s: f64,
    pub label_policy: LabelPolicy,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            possession_min_steps: 5,
            possession_max_ball_distance: 5.0,
            possession_max_ball_height: 10.0,
            possession_max_ball_speed: 25.0,
            pnr_max_handler_screener: 6.0,
            pnr_max_defender_handler: 6.0,
            pnr_max_defender_screener: 3.0,
            handoff_max_distance: 6.5,
            handoff_max_gap_s: 0.5,
            label_policy: LabelPolicy::EarliestKeyFrame,
        }
    }
}

impl Thresholds {
    /// Parses a flat `key = value` file; unspecified keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let t: Thresholds = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        t.check()?;
        Ok(t)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text)
    }

    fn check(&self) -> Result<()> {
        let values = [
            self.possession_max_ball_distance,
            self.possession_max_ball_height,
            self.possession_max_ball_speed,
            self.pnr_max_handler_screener,
            self.pnr_max_defender_handler,
            self.pnr_max_defender_screener,
            self.handoff_max_distance,
            self.handoff_max_gap_s,
        ];
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("thresholds must be finite and non-negative".into()));
        }
        if self.possession_min_steps == 0 {
            return Err(Error::Config("possession_min_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// One key frame, located in the timeline and in the segment it falls in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub segment_id: String,
    pub segment_step: usize,
    pub kind: PlayClass,
    pub player_a: String,
    pub player_b: String,
    pub defender: String,
}

#[derive(Debug, Default)]
pub struct WeakLabelOutput {
    pub labels: Vec<LabelRecord>,
    pub audit: Vec<AuditRow>,
}

impl WeakLabelOutput {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for c in PlayClass::ALL {
            counts.insert(format!("label_{c}"), 0);
        }
        counts.insert("key_frames_pick_and_roll".into(), 0);
        counts.insert("key_frames_handoff".into(), 0);
        for l in &self.labels {
            *counts.get_mut(&format!("label_{}", l.label)).unwrap() += 1;
        }
        for a in &self.audit {
            *counts.get_mut(&format!("key_frames_{}", a.kind)).unwrap() += 1;
        }
        counts
    }

    pub fn write_audit_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        for row in &self.audit {
            w.serialize(row).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<audit>", e))
    }
}

/// Weak-labels every segment in the store. Segments are grouped by
/// possession and stitched into timelines so possession runs can cross
/// window boundaries.
pub fn label_store(segments: &[PlaySegment], th: &Thresholds) -> WeakLabelOutput {
    let mut keys_by_segment: BTreeMap<usize, Vec<KeyFrame>> = BTreeMap::new();
    let mut audit_by_segment: BTreeMap<usize, Vec<AuditRow>> = BTreeMap::new();

    for built in timeline::build_timelines(segments) {
        let tl = &built.timeline;
        let intervals = detect_possessions(tl, th);
        let assignments: Vec<DefensiveAssignment> = (0..tl.len())
            .map(|s| assign_defense(s, &tl.steps[s].players[..5], &tl.steps[s].players[5..]))
            .collect();
        let pnr = detect_pick_and_rolls(tl, &intervals, &assignments, th);
        let handoffs = detect_handoffs(tl, &intervals, th);

        let mut place = |step: usize, key: KeyFrame, row: (String, String, String)| {
            for &(seg, offset) in &built.members {
                let len = segments[seg].steps;
                if step >= offset && step < offset + len {
                    let local = KeyFrame { step: step - offset, ..key };
                    keys_by_segment.entry(seg).or_default().push(local);
                    audit_by_segment.entry(seg).or_default().push(AuditRow {
                        segment_id: segments[seg].segment_id.clone(),
                        segment_step: step - offset,
                        kind: key.kind,
                        player_a: row.0.clone(),
                        player_b: row.1.clone(),
                        defender: row.2.clone(),
                    });
                }
            }
        };
        for k in &pnr {
            place(
                k.step,
                KeyFrame { step: k.step, kind: PlayClass::PickAndRoll },
                (tl.ids[k.handler].clone(), tl.ids[k.screener].clone(), tl.ids[k.defender].clone()),
            );
        }
        for k in &handoffs {
            place(
                k.step,
                KeyFrame { step: k.step, kind: PlayClass::Handoff },
                (tl.ids[k.giver].clone(), tl.ids[k.receiver].clone(), String::new()),
            );
        }
    }

    let mut out = WeakLabelOutput::default();
    for (i, seg) in segments.iter().enumerate() {
        let keys = keys_by_segment.remove(&i).unwrap_or_default();
        out.labels
            .push(label_segment(&seg.segment_id, seg.steps, &keys, th.label_policy));
        let mut rows = audit_by_segment.remove(&i).unwrap_or_default();
        rows.sort_by(|a, b| (a.segment_step, a.kind).cmp(&(b.segment_step, b.kind)));
        out.audit.extend(rows);
    }
    out
}
