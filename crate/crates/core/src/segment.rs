//! Fixed-length play windows and the segment store.
//!
//! A [`PlaySegment`] holds `L` observed positions for the eleven tracked
//! objects, ordered ball, attackers, defenders, with players sorted by id
//! within their team. When the possession continues for `H` more steps the
//! segment also carries the future velocities the trajectory head learns to
//! predict.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Team, TrackingFrame, PLAYERS_PER_TEAM};
use crate::ingest::events;
use crate::possession::{segment_possessions_with, PossessionConfig};
use crate::transform::{canonicalize, downsample};

pub const OBJECTS: usize = 11;
pub const BALL_ID: &str = "ball";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ball,
    Offense,
    Defense,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Ball, Role::Offense, Role::Defense];

    /// Role of the object at `index` in the `[B, A1..A5, D1..D5]` layout.
    pub fn of_object(index: usize) -> Role {
        match index {
            0 => Role::Ball,
            1..=PLAYERS_PER_TEAM => Role::Offense,
            _ => Role::Defense,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub game_id: String,
    pub event_id: String,
    /// Raw frame index (within the event) where the possession starts.
    pub possession_start: usize,
    /// Downsampled step index of the window's first step within its possession.
    pub start_step: usize,
    /// Raw frame index (within the event) of the window's first step.
    pub start_frame: usize,
}

impl Provenance {
    pub fn possession_key(&self) -> (&str, &str, usize) {
        (&self.game_id, &self.event_id, self.possession_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaySegment {
    pub segment_id: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub dt: f64,
    #[serde(rename = "L")]
    pub steps: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub object_ids: Vec<String>,
    /// Positions, row-major `[object][step][coord]`.
    pub tau: Vec<f64>,
    /// Ball height per step: `L` entries, or `L + H` when the future is present.
    pub ball_z: Vec<f64>,
    /// Future velocities, row-major `[object][step][coord]`, `H` steps.
    pub nu: Option<Vec<f64>>,
}

impl PlaySegment {
    pub fn position(&self, object: usize, step: usize) -> [f64; 2] {
        let i = (object * self.steps + step) * 2;
        [self.tau[i], self.tau[i + 1]]
    }

    pub fn set_position(&mut self, object: usize, step: usize, p: [f64; 2]) {
        let i = (object * self.steps + step) * 2;
        self.tau[i] = p[0];
        self.tau[i + 1] = p[1];
    }

    pub fn trajectory(&self, object: usize) -> Vec<[f64; 2]> {
        (0..self.steps).map(|s| self.position(object, s)).collect()
    }

    pub fn has_future(&self) -> bool {
        self.nu.is_some()
    }

    pub fn future_velocity(&self, object: usize, step: usize) -> Option<[f64; 2]> {
        self.nu.as_ref().map(|nu| {
            let i = (object * self.horizon + step) * 2;
            [nu[i], nu[i + 1]]
        })
    }

    /// Future positions integrated from the last observed position.
    pub fn future_positions(&self, object: usize) -> Option<Vec<[f64; 2]>> {
        let nu = self.nu.as_ref()?;
        let vel: Vec<[f64; 2]> = (0..self.horizon)
            .map(|s| {
                let i = (object * self.horizon + s) * 2;
                [nu[i], nu[i + 1]]
            })
            .collect();
        Some(integrate(self.position(object, self.steps - 1), &vel, self.dt))
    }

    /// Applies a permutation to the object layout: new object `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize; OBJECTS]) -> PlaySegment {
        let mut out = self.clone();
        let s = self.steps * 2;
        for (new, &old) in perm.iter().enumerate() {
            out.tau[new * s..(new + 1) * s].copy_from_slice(&self.tau[old * s..(old + 1) * s]);
            out.object_ids[new] = self.object_ids[old].clone();
            if let (Some(dst), Some(src)) = (out.nu.as_mut(), self.nu.as_ref()) {
                let h = self.horizon * 2;
                dst[new * h..(new + 1) * h].copy_from_slice(&src[old * h..(old + 1) * h]);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Mismatch(format!("segment {}: {m}", self.segment_id)));
        if self.object_ids.len() != OBJECTS {
            return bad(format!("expected {OBJECTS} objects, found {}", self.object_ids.len()));
        }
        if self.tau.len() != OBJECTS * self.steps * 2 {
            return bad(format!("tau has {} values, expected {}", self.tau.len(), OBJECTS * self.steps * 2));
        }
        if let Some(nu) = &self.nu {
            if nu.len() != OBJECTS * self.horizon * 2 {
                return bad(format!("nu has {} values, expected {}", nu.len(), OBJECTS * self.horizon * 2));
            }
        }
        if self.tau.iter().chain(self.nu.iter().flatten()).any(|v| !v.is_finite()) {
            return bad("non-finite coordinate".into());
        }
        Ok(())
    }
}

/// Finite-difference velocities: `v[t] = (p[t] - p[t-1]) / dt` for `t = 1..n`.
pub fn to_velocities(points: &[[f64; 2]], dt: f64) -> Result<Vec<[f64; 2]>> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two steps are needed to form a velocity".into(),
        ));
    }
    Ok(points
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt])
        .collect())
}

/// Inverse of [`to_velocities`]: positions after `anchor`, one per velocity.
pub fn integrate(anchor: [f64; 2], velocities: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let mut p = anchor;
    velocities
        .iter()
        .map(|v| {
            p = [p[0] + v[0] * dt, p[1] + v[1] * dt];
            p
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    pub steps: usize,
    pub horizon: usize,
    pub dt: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            horizon: 10,
            dt: 0.12,
        }
    }
}

/// Where a possession's downsampled frames came from, for provenance.
#[derive(Debug, Clone)]
pub struct WindowSource {
    pub game_id: String,
    pub event_id: String,
    pub possession_start: usize,
    pub stride: usize,
}

/// Cuts canonical, downsampled possession frames into non-overlapping windows.
///
/// A trailing remainder shorter than `steps` is dropped. A window carries
/// future velocities only when `horizon` more steps follow it inside the
/// possession. Windows whose players change mid-window are skipped.
pub fn windowize(frames: &[TrackingFrame], cfg: &WindowConfig, source: &WindowSource) -> Vec<PlaySegment> {
    let l = cfg.steps;
    let mut out = Vec::new();
    let mut start = 0;
    while l > 0 && start + l <= frames.len() {
        let with_future = cfg.horizon > 0 && start + l + cfg.horizon <= frames.len();
        let end = if with_future { start + l + cfg.horizon } else { start + l };
        match build_segment(&frames[start..end], l, cfg, source, start) {
            Some(seg) => out.push(seg),
            None => log::warn!(
                "{}/{}: skipping window at step {start}: player set changes inside the window",
                source.game_id,
                source.event_id
            ),
        }
        start += l;
    }
    out
}

/// Object ids in segment order: ball, offense by id, defense by id.
pub fn object_order(frame: &TrackingFrame) -> Vec<String> {
    let mut ids = vec![BALL_ID.to_string()];
    for team in [Team::Offense, Team::Defense] {
        let mut team_ids: Vec<String> = frame.team(team).map(|p| p.player_id.clone()).collect();
        team_ids.sort();
        ids.extend(team_ids);
    }
    ids
}

fn build_segment(
    frames: &[TrackingFrame],
    l: usize,
    cfg: &WindowConfig,
    source: &WindowSource,
    start: usize,
) -> Option<PlaySegment> {
    let ids = object_order(&frames[0]);
    let n = frames.len();
    // positions over all n steps, [object][step]
    let mut track = vec![[0.0; 2]; OBJECTS * n];
    for (s, f) in frames.iter().enumerate() {
        track[s] = f.ball_xy();
        for (o, id) in ids.iter().enumerate().skip(1) {
            let p = f.player(id)?;
            track[o * n + s] = [p.x, p.y];
        }
    }
    let mut tau = Vec::with_capacity(OBJECTS * l * 2);
    for o in 0..OBJECTS {
        for s in 0..l {
            tau.extend(track[o * n + s]);
        }
    }
    let nu = (n > l).then(|| {
        let mut nu = Vec::with_capacity(OBJECTS * cfg.horizon * 2);
        for o in 0..OBJECTS {
            let path = &track[o * n + l - 1..(o + 1) * n];
            for v in to_velocities(path, cfg.dt).expect("future has at least two points") {
                nu.extend(v);
            }
        }
        nu
    });
    let start_frame = source.possession_start + start * source.stride;
    Some(PlaySegment {
        segment_id: format!("{}-{}-{start_frame:06}", source.game_id, source.event_id),
        provenance: Provenance {
            game_id: source.game_id.clone(),
            event_id: source.event_id.clone(),
            possession_start: source.possession_start,
            start_step: start,
            start_frame,
        },
        dt: cfg.dt,
        steps: l,
        horizon: cfg.horizon,
        object_ids: ids,
        tau,
        ball_z: frames.iter().map(|f| f.ball_z).collect(),
        nu,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub possession: PossessionConfig,
    pub downsample: usize,
    pub window: WindowConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            possession: PossessionConfig::default(),
            downsample: 3,
            window: WindowConfig::default(),
        }
    }
}

/// Raw sorted frames to play segments: possessions, canonicalization,
/// downsampling and windowing. Output is sorted by provenance.
pub fn preprocess(frames: &[TrackingFrame], cfg: &PipelineConfig) -> Result<Vec<PlaySegment>> {
    let mut out = Vec::new();
    for event in events(frames) {
        // indices in possessions are relative to the event slice
        for p in segment_possessions_with(event, &cfg.possession) {
            let canonical = canonicalize(&p, event);
            let sampled = downsample(&canonical, cfg.downsample)?;
            let source = WindowSource {
                game_id: p.game_id.clone(),
                event_id: p.event_id.clone(),
                possession_start: p.start,
                stride: cfg.downsample,
            };
            out.extend(windowize(&sampled, &cfg.window, &source));
        }
    }
    out.sort_by(|a, b| a.provenance.cmp(&b.provenance));
    Ok(out)
}

pub fn write_store(path: &Path, segments: &[PlaySegment]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in segments {
        let line = serde_json::to_string(s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<Vec<PlaySegment>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let seg: PlaySegment = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        seg.validate()?;
        out.push(seg);
    }
    Ok(out)
}

/// Train/validation/test partition of segment ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}
