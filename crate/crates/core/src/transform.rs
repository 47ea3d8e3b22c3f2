//! Court canonicalization and temporal downsampling.

use crate::error::{Error, Result};
use crate::frame::{Orientation, TrackingFrame, COURT_LENGTH, COURT_WIDTH};
use crate::possession::{Attack, Possession};

/// Maps a raw point into the canonical frame for the given attack direction.
///
/// Both maps are proper rotations of the court, so handedness and all
/// distances are preserved.
pub fn to_canonical(attack: Attack, x: f64, y: f64) -> (f64, f64) {
    match attack {
        Attack::PlusX => (COURT_WIDTH - y, x),
        Attack::MinusX => (y, COURT_LENGTH - x),
        Attack::PlusY => (x, y),
    }
}

/// Inverse of [`to_canonical`].
pub fn from_canonical(attack: Attack, x: f64, y: f64) -> (f64, f64) {
    match attack {
        Attack::PlusX => (y, COURT_WIDTH - x),
        Attack::MinusX => (COURT_LENGTH - y, x),
        Attack::PlusY => (x, y),
    }
}

/// Returns the possession's frames rotated so the offense attacks along `+y`.
/// Frames that are already canonical pass through unchanged.
pub fn canonicalize(possession: &Possession, frames: &[TrackingFrame]) -> Vec<TrackingFrame> {
    frames[possession.start..=possession.end]
        .iter()
        .map(|f| canonicalize_frame(f, possession.attack))
        .collect()
}

pub fn canonicalize_frame(frame: &TrackingFrame, attack: Attack) -> TrackingFrame {
    let mut out = frame.clone();
    if frame.orientation == Orientation::Canonical {
        return out;
    }
    (out.ball_x, out.ball_y) = to_canonical(attack, frame.ball_x, frame.ball_y);
    for p in &mut out.players {
        (p.x, p.y) = to_canonical(attack, p.x, p.y);
    }
    out.orientation = Orientation::Canonical;
    out
}

/// Keeps every `factor`-th frame, starting with the first.
pub fn downsample<T: Clone>(frames: &[T], factor: usize) -> Result<Vec<T>> {
    if factor < 1 {
        return Err(Error::InvalidArgument("downsampling factor must be at least 1".into()));
    }
    Ok(frames.iter().step_by(factor).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::possession::tests::frame;
    use proptest::prelude::*;

    fn points(f: &TrackingFrame) -> Vec<[f64; 2]> {
        std::iter::once([f.ball_x, f.ball_y])
            .chain(f.players.iter().map(|p| [p.x, p.y]))
            .collect()
    }

    fn distance_matrix(f: &TrackingFrame) -> Vec<f64> {
        let pts = points(f);
        pts.iter()
            .flat_map(|a| pts.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1])))
            .collect()
    }

    fn possession(attack: Attack, n: usize) -> Possession {
        Possession {
            game_id: "g".into(),
            event_id: "e".into(),
            start: 0,
            end: n - 1,
            attack,
        }
    }

    #[test]
    fn minus_x_attack_is_rotated_and_distances_kept() {
        let mut f = frame("e", 0.0, None);
        for p in &mut f.players {
            p.x = 94.0 - p.x;
        }
        f.ball_x = 94.0 - f.ball_x;
        let out = canonicalize(&possession(Attack::MinusX, 1), &[f.clone()]);
        assert_eq!(out[0].orientation, Orientation::Canonical);
        // raw x = 94 - 60 = 34 becomes canonical y = 60, deep in the attacked half
        assert_eq!(out[0].players[0].y, 60.0);
        let before = distance_matrix(&f);
        let after = distance_matrix(&out[0]);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn canonical_frames_are_unchanged_and_idempotent() {
        let f = frame("e", 0.0, None);
        let once = canonicalize(&possession(Attack::PlusX, 1), &[f]);
        let twice = canonicalize(&possession(Attack::PlusX, 1), &once);
        assert_eq!(once, twice);
        let pass = canonicalize(&possession(Attack::PlusY, 1), &once);
        assert_eq!(pass, once);
    }

    #[test]
    fn basket_maps_to_canonical_basket() {
        use crate::frame::{BASKET_OFFSET, CANONICAL_BASKET};
        let (x, y) = to_canonical(Attack::PlusX, COURT_LENGTH - BASKET_OFFSET, 25.0);
        assert_eq!([x, y], CANONICAL_BASKET);
        let (x, y) = to_canonical(Attack::MinusX, BASKET_OFFSET, 25.0);
        assert_eq!([x, y], CANONICAL_BASKET);
    }

    #[test]
    fn downsample_index_arithmetic() {
        let v: Vec<usize> = (0..31).collect();
        assert_eq!(downsample(&v, 1).unwrap(), v);
        let d = downsample(&v, 3).unwrap();
        let expected: Vec<usize> = (0..=30).filter(|i| i % 3 == 0).collect();
        assert_eq!(d, expected);
        assert_eq!(d.len(), 11);
        assert_eq!(downsample(&v[..30], 3).unwrap().len(), 10);
        assert!(downsample(&v, 0).is_err());
    }

    #[test]
    fn thirty_frames_at_25hz_become_ten_at_0_12s() {
        let frames: Vec<TrackingFrame> = (0..30).map(|i| frame("e", i as f64 * 0.04, None)).collect();
        let d = downsample(&frames, 3).unwrap();
        assert_eq!(d.len(), 10);
        for w in d.windows(2) {
            assert!((w[1].t - w[0].t - 0.12).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn canonicalization_is_an_isometry(
            coords in prop::collection::vec((0.0f64..94.0, 0.0f64..50.0), 11),
            plus_x in any::<bool>(),
        ) {
            let mut f = frame("e", 0.0, None);
            f.ball_x = coords[0].0;
            f.ball_y = coords[0].1;
            for (p, c) in f.players.iter_mut().zip(&coords[1..]) {
                p.x = c.0;
                p.y = c.1;
            }
            let attack = if plus_x { Attack::PlusX } else { Attack::MinusX };
            let out = canonicalize_frame(&f, attack);
            let max_dev = distance_matrix(&f)
                .iter()
                .zip(distance_matrix(&out))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            prop_assert!(max_dev < 1e-9);
            for [x, y] in points(&out) {
                let (rx, ry) = from_canonical(attack, x, y);
                prop_assert!(x >= 0.0 && x <= COURT_WIDTH && y >= 0.0 && y <= COURT_LENGTH);
                prop_assert!(points(&f).iter().any(|p| (p[0] - rx).abs() < 1e-12 && (p[1] - ry).abs() < 1e-12));
            }
        }

        #[test]
        fn downsample_length_is_ceiling(n in 0usize..200, factor in 1usize..7) {
            let v: Vec<usize> = (0..n).collect();
            prop_assert_eq!(downsample(&v, factor).unwrap().len(), n.div_ceil(factor));
        }
    }
}
