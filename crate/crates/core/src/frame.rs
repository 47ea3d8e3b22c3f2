//! The tracking-frame model.
//!
//! Raw frames use the court convention: `x` runs along the court length
//! (0 to 94 ft) and `y` from sideline to sideline (0 to 50 ft). Canonical
//! frames are rotated so the offense attacks along `+y`; there `x` is the
//! sideline axis (0 to 50 ft) and `y` the length axis (0 to 94 ft), with the
//! attacked basket at [`CANONICAL_BASKET`].

use serde::{Deserialize, Serialize};

pub const COURT_LENGTH: f64 = 94.0;
pub const COURT_WIDTH: f64 = 50.0;
pub const HALF_COURT: f64 = COURT_LENGTH / 2.0;
/// Distance from the baseline to the center of the rim.
pub const BASKET_OFFSET: f64 = 5.25;
pub const CANONICAL_BASKET: [f64; 2] = [COURT_WIDTH / 2.0, COURT_LENGTH - BASKET_OFFSET];
pub const PLAYERS_PER_TEAM: usize = 5;
pub const PLAYERS_PER_FRAME: usize = 2 * PLAYERS_PER_TEAM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Team {
    #[serde(rename = "O")]
    Offense,
    #[serde(rename = "D")]
    Defense,
}

impl Team {
    pub fn code(self) -> &'static str {
        match self {
            Team::Offense => "O",
            Team::Defense => "D",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code.trim() {
            "O" => Some(Team::Offense),
            "D" => Some(Team::Defense),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    Raw,
    Canonical,
}

impl Orientation {
    fn is_raw(&self) -> bool {
        *self == Orientation::Raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerPosition {
    #[serde(rename = "id")]
    pub player_id: String,
    pub team: Team,
    pub x: f64,
    pub y: f64,
}

/// One timestamped snapshot of the ball and the ten players on court.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingFrame {
    pub game_id: String,
    pub event_id: String,
    pub t: f64,
    pub shot_clock: Option<f64>,
    pub ball_x: f64,
    pub ball_y: f64,
    pub ball_z: f64,
    pub players: Vec<PlayerPosition>,
    #[serde(default, skip_serializing_if = "Orientation::is_raw")]
    pub orientation: Orientation,
}

impl TrackingFrame {
    pub fn ball_xy(&self) -> [f64; 2] {
        [self.ball_x, self.ball_y]
    }

    pub fn team(&self, team: Team) -> impl Iterator<Item = &PlayerPosition> {
        self.players.iter().filter(move |p| p.team == team)
    }

    pub fn player(&self, id: &str) -> Option<&PlayerPosition> {
        self.players.iter().find(|p| p.player_id == id)
    }

    /// Checks the frame invariants: ten players, five per team, finite coordinates.
    pub fn validate(&self) -> Result<(), String> {
        if self.players.len() != PLAYERS_PER_FRAME {
            return Err(format!(
                "expected {PLAYERS_PER_FRAME} players, found {}",
                self.players.len()
            ));
        }
        let offense = self.team(Team::Offense).count();
        if offense != PLAYERS_PER_TEAM {
            return Err(format!(
                "expected {PLAYERS_PER_TEAM} players per team, found {offense} offense and {} defense",
                PLAYERS_PER_FRAME - offense
            ));
        }
        let coords = [self.t, self.ball_x, self.ball_y, self.ball_z]
            .into_iter()
            .chain(self.players.iter().flat_map(|p| [p.x, p.y]));
        if coords.into_iter().any(|v| !v.is_finite()) {
            return Err("non-finite coordinate".into());
        }
        if self.shot_clock.is_some_and(|s| !s.is_finite()) {
            return Err("non-finite shot clock".into());
        }
        Ok(())
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
