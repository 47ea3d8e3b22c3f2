//! Scripted synthetic plays with known labels.
//!
//! Each script is planned in canonical coordinates (offense attacking `+y`,
//! basket at `(25, 88.75)`) as piecewise-linear waypoint paths, sampled at
//! the raw 25 Hz clock, perturbed by gaussian noise and mapped back to a raw
//! court with a random attack direction. Noise is added to positions, so
//! derived velocities carry noise of about `σ·√2/Δt`.
//!
//! Defenders trail their attacker by 0.24 s and sag toward the basket. The
//! screened defender in a pick-and-roll holds its spot instead.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Orientation, PlayerPosition, Team, TrackingFrame, CANONICAL_BASKET, COURT_WIDTH, HALF_COURT};
use crate::labels::{LabelRecord, LabelSource, PlayClass};
use crate::possession::Attack;
use crate::segment::{preprocess, PipelineConfig, PlaySegment};
use crate::transform::from_canonical;

pub const RAW_DT: f64 = 0.04;
/// 3.6 s: thirty downsampled steps, so the first window has its full future.
pub const DEFAULT_DURATION: usize = 90;
pub const BALL_HEIGHT: f64 = 3.5;
const LAG_S: f64 = 0.24;
/// Downsampled step length the scripts time their events against.
const STEP_S: f64 = 0.12;
const MIN_CANONICAL_Y: f64 = HALF_COURT + 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptKind {
    PickAndRoll,
    Handoff,
    Spread,
    RandomWalk,
}

impl ScriptKind {
    pub const ALL: [ScriptKind; 4] = [
        ScriptKind::PickAndRoll,
        ScriptKind::Handoff,
        ScriptKind::Spread,
        ScriptKind::RandomWalk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScriptKind::PickAndRoll => "pick_and_roll",
            ScriptKind::Handoff => "handoff",
            ScriptKind::Spread => "spread",
            ScriptKind::RandomWalk => "random_walk",
        }
    }

    /// The class a script realizes. Random walks are unconstrained and only
    /// nominally `other`.
    pub fn truth(self) -> PlayClass {
        match self {
            ScriptKind::PickAndRoll => PlayClass::PickAndRoll,
            ScriptKind::Handoff => PlayClass::Handoff,
            ScriptKind::Spread | ScriptKind::RandomWalk => PlayClass::Other,
        }
    }
}

impl fmt::Display for ScriptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScriptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown script kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayScript {
    pub kind: ScriptKind,
    pub seed: u64,
    /// Raw frames to emit.
    pub duration: usize,
    /// Position noise in feet.
    pub sigma: f64,
}

impl PlayScript {
    pub fn new(kind: ScriptKind, seed: u64, sigma: f64) -> Self {
        Self {
            kind,
            seed,
            duration: DEFAULT_DURATION,
            sigma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthPlay {
    pub frames: Vec<TrackingFrame>,
    pub truth: PlayClass,
}

impl SynthPlay {
    /// Runs the standard pipeline and pairs every segment with the script's truth.
    pub fn segments(&self, cfg: &PipelineConfig) -> Result<(Vec<PlaySegment>, Vec<LabelRecord>)> {
        let segments = preprocess(&self.frames, cfg)?;
        let truth = segments.iter().map(|s| truth_record(&s.segment_id, self.truth)).collect();
        Ok((segments, truth))
    }
}

fn truth_record(segment_id: &str, label: PlayClass) -> LabelRecord {
    LabelRecord {
        segment_id: segment_id.to_string(),
        label,
        source: LabelSource::Manual,
        key_frame: None,
        rule_version: None,
        annotator: Some("synth".into()),
        timestamp: None,
    }
}

type P = [f64; 2];

fn add(a: P, b: P) -> P {
    [a[0] + b[0], a[1] + b[1]]
}

fn scale(a: P, k: f64) -> P {
    [a[0] * k, a[1] * k]
}

fn toward_basket(p: P) -> P {
    let d = [CANONICAL_BASKET[0] - p[0], CANONICAL_BASKET[1] - p[1]];
    let n = d[0].hypot(d[1]).max(1e-9);
    [d[0] / n, d[1] / n]
}

fn perp(u: P) -> P {
    [u[1], -u[0]]
}

/// Piecewise-linear path through timed waypoints, constant outside them.
#[derive(Debug, Clone)]
struct Path(Vec<(f64, P)>);

impl Path {
    fn fixed(p: P) -> Self {
        Path(vec![(0.0, p)])
    }

    fn at(&self, t: f64) -> P {
        let pts = &self.0;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((t0, a), (t1, b)) = (w[0], w[1]);
            if t <= t1 {
                let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return add(a, scale(add(b, scale(a, -1.0)), f));
            }
        }
        pts[pts.len() - 1].1
    }
}

#[derive(Debug, Clone)]
enum Defender {
    Track { attacker: usize, sag: f64 },
    Fixed(P),
}

#[derive(Debug, Clone)]
enum BallLeg {
    Held { until: f64, slot: usize },
    Pass { until: f64, from: usize, to: usize },
}

/// A play in canonical coordinates; attacker and defender `i` are matched up.
struct Scene {
    attackers: Vec<Path>,
    defenders: Vec<Defender>,
    ball: Vec<BallLeg>,
}

impl Scene {
    fn attacker(&self, i: usize, t: f64) -> P {
        self.attackers[i].at(t)
    }

    fn defender(&self, i: usize, t: f64) -> P {
        match self.defenders[i] {
            Defender::Fixed(p) => p,
            Defender::Track { attacker, sag } => {
                let p = self.attacker(attacker, (t - LAG_S).max(0.0));
                add(p, scale(toward_basket(p), sag))
            }
        }
    }

    fn ball(&self, t: f64) -> P {
        let mut start = 0.0;
        for leg in &self.ball {
            match *leg {
                BallLeg::Held { until, slot } if t <= until => return self.attacker(slot, t),
                BallLeg::Pass { until, from, to } if t <= until => {
                    let a = self.attacker(from, start);
                    let b = self.attacker(to, until);
                    let f = if until > start { (t - start) / (until - start) } else { 1.0 };
                    return add(a, scale(add(b, scale(a, -1.0)), f));
                }
                BallLeg::Held { until, .. } | BallLeg::Pass { until, .. } => start = until,
            }
        }
        match self.ball.last() {
            Some(BallLeg::Held { slot, .. }) => self.attacker(*slot, t),
            Some(BallLeg::Pass { to, .. }) => self.attacker(*to, t),
            None => [CANONICAL_BASKET[0], HALF_COURT + 10.0],
        }
    }
}

/// Perimeter spots, pairwise at least 15 ft apart.
const SPREAD_SPOTS: [P; 7] = [
    [3.0, 90.0],
    [47.0, 90.0],
    [3.0, 72.0],
    [47.0, 72.0],
    [25.0, 51.0],
    [10.0, 52.0],
    [40.0, 52.0],
];

/// Spots far from the middle of the floor where the scripted action happens.
const WING_SPOTS: [P; 5] = [[3.0, 90.0], [47.0, 90.0], [3.0, 72.0], [47.0, 72.0], [25.0, 91.5]];

fn pick_spots(rng: &mut ChaCha8Rng, spots: &[P], n: usize) -> Vec<P> {
    let mut v = spots.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

fn end_time(duration: usize) -> f64 {
    duration.saturating_sub(1) as f64 * RAW_DT
}

/// Handler and screener meet beside the handler's defender, who is screened
/// off and stays put while the handler drives and the screener rolls.
fn pick_and_roll(rng: &mut ChaCha8Rng, t_end: f64) -> Scene {
    let h = [rng.random_range(22.0..28.0), rng.random_range(62.0..66.0)];
    let u = toward_basket(h);
    let w = perp(u);
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let blocked = add(h, scale(u, 4.0));
    let screen = add(blocked, scale(w, 1.5 * side));
    let arrive = STEP_S * rng.random_range(3..=5) as f64;
    let drive = STEP_S * 12.0;
    let screen_from = add(screen, scale(w, 8.0 * side));

    let handler = Path(vec![
        (0.0, h),
        (drive, h),
        (drive + 1.0, add(h, add(scale(u, 10.0), scale(w, -6.0 * side)))),
    ]);
    let screener = Path(vec![
        (0.0, screen_from),
        (arrive, screen),
        (drive + 0.3, screen),
        ((drive + 1.3).min(t_end.max(drive + 0.6)), [25.0, 82.0]),
    ]);
    let mut attackers = vec![handler, screener];
    let mut defenders = vec![
        Defender::Fixed(blocked),
        Defender::Track {
            attacker: 1,
            sag: 3.0,
        },
    ];
    for (i, p) in pick_spots(rng, &WING_SPOTS[..4], 3).into_iter().enumerate() {
        attackers.push(Path::fixed(p));
        defenders.push(Defender::Track {
            attacker: i + 2,
            sag: rng.random_range(4.0..6.0),
        });
    }
    Scene {
        attackers,
        defenders,
        ball: vec![BallLeg::Held {
            until: f64::INFINITY,
            slot: 0,
        }],
    }
}

/// The receiver comes alongside the giver, takes the ball from 4 ft and the
/// two drift apart. Defenders sag far enough that no screen geometry forms.
fn handoff(rng: &mut ChaCha8Rng, t_end: f64) -> Scene {
    let g = [rng.random_range(20.0..30.0), rng.random_range(62.0..68.0)];
    let w = perp(toward_basket(g));
    // receiver starts on the side with more room
    let side = if add(g, scale(w, 14.0))[0] <= COURT_WIDTH - 2.0 && g[0] <= 25.0 { 1.0 } else { -1.0 };
    let k = rng.random_range(5..=7) as f64;
    let meet = STEP_S * (k - 1.0);
    let exchange = STEP_S * k;
    let t_end = t_end.max(exchange + STEP_S);
    let drift = 3.0 * (t_end - meet);
    let beside = add(g, scale(w, 4.0 * side));

    let giver = Path(vec![(0.0, g), (meet, g), (t_end, add(g, scale(w, -drift * side)))]);
    let receiver = Path(vec![
        (0.0, add(g, scale(w, 14.0 * side))),
        (meet, beside),
        (t_end, add(beside, scale(w, drift * side))),
    ]);
    let mut attackers = vec![giver, receiver];
    attackers.extend(pick_spots(rng, &WING_SPOTS, 3).into_iter().map(Path::fixed));
    let defenders = (0..5)
        .map(|i| Defender::Track {
            attacker: i,
            sag: rng.random_range(7.5..8.5),
        })
        .collect();
    Scene {
        attackers,
        defenders,
        ball: vec![
            BallLeg::Held { until: meet, slot: 0 },
            BallLeg::Pass {
                until: exchange,
                from: 0,
                to: 1,
            },
            BallLeg::Held {
                until: f64::INFINITY,
                slot: 1,
            },
        ],
    }
}

/// Five attackers hold perimeter spots with small drifts; one keeps the ball.
fn spread(rng: &mut ChaCha8Rng, t_end: f64) -> Scene {
    let spots = pick_spots(rng, &SPREAD_SPOTS, 5);
    let mut attackers = Vec::new();
    for s in spots {
        let base = [s[0] + rng.random_range(-0.5..0.5), s[1] + rng.random_range(-0.5..0.5)];
        let mut pts = vec![(0.0, base)];
        let mut t = 0.6;
        while t < t_end + 0.6 {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let r = rng.random_range(0.0..0.75);
            pts.push((t, [base[0] + r * a.cos(), base[1] + r * a.sin()]));
            t += 0.6;
        }
        attackers.push(Path(pts));
    }
    let defenders = (0..5)
        .map(|i| Defender::Track {
            attacker: i,
            sag: rng.random_range(4.0..7.0),
        })
        .collect();
    Scene {
        attackers,
        defenders,
        ball: vec![BallLeg::Held {
            until: f64::INFINITY,
            slot: rng.random_range(0..5),
        }],
    }
}

/// Unconstrained wandering; no geometry is guaranteed either way.
fn random_walk(rng: &mut ChaCha8Rng, t_end: f64) -> Scene {
    let mut attackers = Vec::new();
    for _ in 0..5 {
        let mut p = [rng.random_range(3.0..47.0), rng.random_range(52.0..90.0)];
        let mut pts = vec![(0.0, p)];
        let mut t = 0.5;
        while t < t_end + 0.5 {
            p = [
                (p[0] + rng.random_range(-4.0f64..4.0)).clamp(1.0, 49.0),
                (p[1] + rng.random_range(-4.0f64..4.0)).clamp(50.0, 92.0),
            ];
            pts.push((t, p));
            t += 0.5;
        }
        attackers.push(Path(pts));
    }
    let defenders = (0..5)
        .map(|i| Defender::Track {
            attacker: i,
            sag: rng.random_range(3.0..6.0),
        })
        .collect();
    Scene {
        attackers,
        defenders,
        ball: vec![BallLeg::Held {
            until: f64::INFINITY,
            slot: 0,
        }],
    }
}

/// Samples one script into raw frames.
pub fn generate(script: &PlayScript, game_id: &str, event_id: &str) -> Result<SynthPlay> {
    if !(script.sigma >= 0.0 && script.sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {}", script.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let t_end = end_time(script.duration);
    let scene = match script.kind {
        ScriptKind::PickAndRoll => pick_and_roll(&mut rng, t_end),
        ScriptKind::Handoff => handoff(&mut rng, t_end),
        ScriptKind::Spread => spread(&mut rng, t_end),
        ScriptKind::RandomWalk => random_walk(&mut rng, t_end),
    };
    let attack = if rng.random_bool(0.5) { Attack::PlusX } else { Attack::MinusX };
    // jersey numbers are shuffled so slot order says nothing about roles
    let mut numbers: Vec<usize> = (1..=5).collect();
    numbers.shuffle(&mut rng);
    let noise = Normal::new(0.0, script.sigma).expect("sigma checked above");

    let jitter = |p: P, rng: &mut ChaCha8Rng| -> (f64, f64) {
        let (x, y) = if script.sigma > 0.0 {
            (p[0] + noise.sample(rng), p[1] + noise.sample(rng))
        } else {
            (p[0], p[1])
        };
        from_canonical(attack, x.clamp(0.0, COURT_WIDTH), y.clamp(MIN_CANONICAL_Y, 94.0))
    };

    let mut frames = Vec::with_capacity(script.duration);
    for i in 0..script.duration {
        let t = i as f64 * RAW_DT;
        let (ball_x, ball_y) = jitter(scene.ball(t), &mut rng);
        let mut players = Vec::with_capacity(10);
        for (team, prefix) in [(Team::Offense, "o"), (Team::Defense, "d")] {
            for (slot, n) in numbers.iter().enumerate() {
                let p = match team {
                    Team::Offense => scene.attacker(slot, t),
                    Team::Defense => scene.defender(slot, t),
                };
                let (x, y) = jitter(p, &mut rng);
                players.push(PlayerPosition {
                    player_id: format!("{prefix}{n}"),
                    team,
                    x,
                    y,
                });
            }
        }
        frames.push(TrackingFrame {
            game_id: game_id.to_string(),
            event_id: event_id.to_string(),
            t: (t * 1e6).round() / 1e6,
            shot_clock: Some(((24.0 - t) * 1e6).round() / 1e6),
            ball_x,
            ball_y,
            ball_z: BALL_HEIGHT,
            players,
            orientation: Orientation::Raw,
        });
    }
    Ok(SynthPlay {
        frames,
        truth: script.kind.truth(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthCounts {
    pub pick_and_roll: usize,
    pub handoff: usize,
    pub spread: usize,
    pub random_walk: usize,
}

impl SynthCounts {
    pub fn new(pick_and_roll: usize, handoff: usize, spread: usize, random_walk: usize) -> Self {
        Self {
            pick_and_roll,
            handoff,
            spread,
            random_walk,
        }
    }

    pub fn get(&self, kind: ScriptKind) -> usize {
        match kind {
            ScriptKind::PickAndRoll => self.pick_and_roll,
            ScriptKind::Handoff => self.handoff,
            ScriptKind::Spread => self.spread,
            ScriptKind::RandomWalk => self.random_walk,
        }
    }

    pub fn total(&self) -> usize {
        ScriptKind::ALL.iter().map(|&k| self.get(k)).sum()
    }
}

/// Raw frames, segment store and truth labels for a scripted corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub frames: Vec<TrackingFrame>,
    pub segments: Vec<PlaySegment>,
    pub truth: Vec<LabelRecord>,
}

/// Generates `counts` plays, one event each, and keeps the first window of
/// every play (the one whose future lies inside the play).
pub fn make_corpus(counts: &SynthCounts, sigma: f64, seed: u64) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let game_id = format!("synth{seed}");
    let cfg = PipelineConfig::default();
    let mut corpus = Corpus::default();
    for kind in ScriptKind::ALL {
        for i in 0..counts.get(kind) {
            let script = PlayScript::new(kind, rng.random(), sigma);
            let event_id = format!("{kind}{i:05}");
            let play = generate(&script, &game_id, &event_id)?;
            let segments = preprocess(&play.frames, &cfg)?;
            let first = segments
                .into_iter()
                .next()
                .filter(|s| s.has_future())
                .ok_or_else(|| Error::Mismatch(format!("{event_id}: play produced no complete window")))?;
            corpus.truth.push(truth_record(&first.segment_id, play.truth));
            corpus.segments.push(first);
            corpus.frames.extend(play.frames);
        }
    }
    Ok(corpus)
}
