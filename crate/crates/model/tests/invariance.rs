use nets_core::segment::{PlaySegment, Provenance, OBJECTS};
use nets_model::config::{NetsConfig, Pooling};
use nets_model::{HeadKind, Nets};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn segment(rng: &mut ChaCha8Rng, id: usize) -> PlaySegment {
    let tau = (0..OBJECTS * 10)
        .flat_map(|_| [rng.random_range(0.0..50.0), rng.random_range(47.0..94.0)])
        .collect();
    PlaySegment {
        segment_id: format!("r{id}"),
        provenance: Provenance {
            game_id: "g".into(),
            event_id: format!("e{id}"),
            possession_start: 0,
            start_step: 0,
            start_frame: 0,
        },
        dt: 0.12,
        steps: 10,
        horizon: 10,
        object_ids: (0..OBJECTS).map(|i| format!("o{i}")).collect(),
        tau,
        ball_z: vec![4.0; 20],
        nu: None,
    }
}

/// Random permutation that keeps the ball first and each team in its block.
fn team_permutation(rng: &mut ChaCha8Rng) -> [usize; OBJECTS] {
    let mut perm: [usize; OBJECTS] = std::array::from_fn(|i| i);
    perm[1..6].shuffle(rng);
    perm[6..11].shuffle(rng);
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn permutations_leave_probabilities_and_move_velocities(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = NetsConfig { seed, ..NetsConfig::desk() };
        let cls = Nets::new(cfg.clone(), HeadKind::Classification).unwrap();
        let traj = cls.with_head(HeadKind::Trajectory, seed);
        let segs: Vec<PlaySegment> = (0..4).map(|i| segment(&mut rng, i)).collect();
        let perms: Vec<[usize; OBJECTS]> = (0..4).map(|_| team_permutation(&mut rng)).collect();
        let moved: Vec<PlaySegment> = segs.iter().zip(&perms).map(|(s, p)| s.permuted(p)).collect();
        let a: Vec<&PlaySegment> = segs.iter().collect();
        let b: Vec<&PlaySegment> = moved.iter().collect();

        for (p, q) in cls.predict_proba(&a).unwrap().iter().zip(cls.predict_proba(&b).unwrap()) {
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs());
            }
        }
        let va = traj.predict_velocities(&a).unwrap();
        let vb = traj.predict_velocities(&b).unwrap();
        let w = 2 * cfg.horizon;
        for ((pa, pb), perm) in va.iter().zip(&vb).zip(&perms) {
            for (new, &old) in perm.iter().enumerate() {
                prop_assert_eq!(&pb[new * w..(new + 1) * w], &pa[old * w..(old + 1) * w]);
            }
        }
    }
}

#[test]
fn concat_pooling_is_order_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = NetsConfig {
        pooling: Pooling::Concat,
        ..NetsConfig::desk()
    };
    let m = Nets::new(cfg, HeadKind::Classification).unwrap();
    let s = segment(&mut rng, 0);
    let mut perm: [usize; OBJECTS] = std::array::from_fn(|i| i);
    perm.swap(1, 2);
    let p = m.predict_proba(&[&s]).unwrap();
    let q = m.predict_proba(&[&s.permuted(&perm)]).unwrap();
    assert_ne!(p, q);
}

#[test]
fn batch_composition_does_not_change_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = Nets::new(NetsConfig::desk(), HeadKind::Classification).unwrap();
    let segs: Vec<PlaySegment> = (0..3).map(|i| segment(&mut rng, i)).collect();
    let all = m.predict_proba(&segs.iter().collect::<Vec<_>>()).unwrap();
    let one = m.predict_proba(&[&segs[1]]).unwrap();
    for (x, y) in all[1].iter().zip(&one[0]) {
        assert!((x - y).abs() < 1e-12);
    }
}
