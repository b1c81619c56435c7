use proptest::prelude::*;

use sadgan::datalog::{DatasetHeader, DatasetReader, DatasetWriter, Transition};
use sadgan::models::decode_checkpoint;
use sadgan::planner::{node_budget, safe_depth, OracleModel};
use sadgan::roadworld::{oracle_safe_depth, Action, Frame, WorldConfig, WorldState, EGO, OBSTACLE, OFF_ROAD, ROAD};

const SIDE: usize = 8;

fn action() -> impl Strategy<Value = Action> {
    (0usize..3).prop_map(|i| Action::from_index(i).unwrap())
}

fn frame() -> impl Strategy<Value = Frame> {
    proptest::collection::vec(any::<u8>(), SIDE * SIDE).prop_map(|pixels| Frame {
        width: SIDE,
        height: SIDE,
        pixels,
    })
}

fn transition() -> impl Strategy<Value = Transition> {
    (frame(), action(), frame(), any::<bool>(), any::<u32>(), any::<u32>()).prop_map(|(frame_t, action, frame_t1, safe, session_id, step)| Transition {
        frame_t,
        action,
        frame_t1,
        safe,
        session_id,
        step,
    })
}

fn encode(records: &[Transition]) -> Vec<u8> {
    let mut w = DatasetWriter::new(Vec::new(), DatasetHeader::new(SIDE, SIDE)).unwrap();
    for r in records {
        w.write(r).unwrap();
    }
    w.finish().unwrap()
}

/// A state reached by applying `actions` from `seed`, stopping before any crash.
fn reached(seed: u64, actions: &[Action]) -> WorldState {
    let mut s = WorldState::new(seed, WorldConfig::default()).unwrap();
    for &a in actions {
        let (next, safe) = s.stepped(a).unwrap();
        if !safe {
            break;
        }
        s = next;
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trips(records in proptest::collection::vec(transition(), 0..6)) {
        let bytes = encode(&records);
        let back: Vec<Transition> = DatasetReader::new(&bytes[..]).unwrap().collect::<sadgan::Result<_>>().unwrap();
        prop_assert_eq!(&back, &records);
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncation_is_an_error_not_a_panic(records in proptest::collection::vec(transition(), 1..4), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&records);
        let header = DatasetHeader::new(SIDE, SIDE);
        let cut = cut.index(bytes.len());
        let Ok(reader) = DatasetReader::new(&bytes[..cut]) else {
            prop_assert!(cut < 12);
            return Ok(());
        };
        let results: Vec<_> = reader.collect();
        let body = cut - 12;
        let whole = body / header.record_len();
        prop_assert_eq!(results.iter().filter(|r| r.is_ok()).count(), whole);
        let partial = body % header.record_len() != 0;
        prop_assert_eq!(results.iter().any(|r| r.is_err()), partial);
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let mut with_magic = b"SADW\x01\x00".to_vec();
        with_magic.extend_from_slice(&bytes);
        let _ = decode_checkpoint(&bytes);
        let _ = decode_checkpoint(&with_magic);
    }

    #[test]
    fn world_is_deterministic(seed in any::<u64>(), actions in proptest::collection::vec(action(), 0..30)) {
        let (a, b) = (reached(seed, &actions), reached(seed, &actions));
        prop_assert_eq!(a.render(), b.render());
        prop_assert_eq!(a.is_safe(), b.is_safe());
    }

    #[test]
    fn frames_keep_the_palette_and_geometry(seed in any::<u64>(), actions in proptest::collection::vec(action(), 0..40)) {
        let s = reached(seed, &actions);
        let f = s.render();
        prop_assert!(f.pixels.iter().all(|p| [OFF_ROAD, ROAD, OBSTACLE, EGO].contains(p)));
        prop_assert_eq!(f.pixels.iter().filter(|&&p| p == EGO).count(), if s.alive { 9 } else { 0 });
        for pair in s.centerline.windows(2) {
            prop_assert!((pair[0] - pair[1]).abs() <= s.config.curvature_max as i32);
        }
        let ego_rows = s.config.ego_row - 1..=s.config.ego_row + 1;
        let size = s.config.obstacle_size as i32;
        for r in (0..f.height).filter(|r| !ego_rows.contains(r)) {
            let (lo, hi) = s.road_edges(r);
            let covered = (lo..=hi)
                .filter(|&c| s.obstacles.iter().any(|o| (o.row..o.row + size).contains(&(r as i32)) && (o.col..o.col + size).contains(&c)))
                .count();
            let road = (0..f.width).filter(|&c| f.pixel(r, c) == ROAD).count();
            prop_assert_eq!(road, 2 * s.config.road_half_width + 1 - covered);
        }
    }

    #[test]
    fn lateral_moves_commute(seed in any::<u64>()) {
        let s = WorldState::new(seed, WorldConfig::obstacle_free()).unwrap();
        let lr = s.stepped(Action::Left).unwrap().0.stepped(Action::Right).unwrap().0;
        let rl = s.stepped(Action::Right).unwrap().0.stepped(Action::Left).unwrap().0;
        prop_assert_eq!(lr.ego_col, rl.ego_col);
        prop_assert_eq!(lr.ego_col, s.ego_col);
    }

    #[test]
    fn planner_agrees_with_exhaustive_oracle(seed in any::<u64>(), actions in proptest::collection::vec(action(), 0..40), depth in 1usize..5) {
        let s = reached(seed, &actions);
        prop_assume!(s.alive);
        for a in Action::ALL {
            let (d, visited) = safe_depth(&OracleModel, &s, a, depth).unwrap();
            prop_assert_eq!(d, oracle_safe_depth(&s, a, depth));
            prop_assert!(visited <= node_budget(depth));
        }
    }
}
