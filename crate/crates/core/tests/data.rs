#[path = "support/fixtures.rs"]
mod fixtures;

use gsr_core::data::*;
use gsr_core::SeededRng;
use proptest::prelude::*;
use rand::SeedableRng;

fn sequences() -> impl Strategy<Value = (Vec<Vec<u32>>, usize)> {
    (2usize..12).prop_flat_map(|items| {
        (prop::collection::vec(prop::collection::vec(1..=items as u32, 1..15), 1..8), Just(items))
    })
}

#[test]
fn dense_ids_and_stable_time_order() {
    let recs = [("b", "x", 5), ("a", "y", 1), ("b", "y", 5), ("b", "z", 2), ("a", "x", 3)];
    let ds = InteractionDataset::from_interactions(
        recs.iter().map(|&(u, i, t)| Interaction { user: u.into(), item: i.into(), timestamp: t }),
    )
    .unwrap();
    assert_eq!(ds.users, ["b", "a"]);
    assert_eq!(ds.items, ["x", "y", "z"]);
    assert_eq!(ds.sequences, vec![vec![3, 1, 2], vec![2, 1]]);
    assert_eq!((ds.num_users(), ds.num_items(), ds.num_actions()), (2, 3, 5));
    assert!((ds.density() - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(InteractionDataset::from_interactions(std::iter::empty()), Err(DataError::Empty));
}

#[test]
fn short_users() {
    let split = split_leave_one_out(&fixtures::from_sequences(vec![vec![4], vec![2, 3], vec![1, 2, 3, 4]], 4));
    let u = split.user(1).unwrap();
    assert_eq!((u.train.as_slice(), u.valid, u.test), (&[][..], None, 4));
    let u = split.user(2).unwrap();
    assert_eq!((u.train.as_slice(), u.valid, u.test), (&[][..], Some(2), 3));
    let u = split.user(3).unwrap();
    assert_eq!((u.train.as_slice(), u.valid, u.test), (&[1, 2][..], Some(3), 4));
    assert!(split.user(0).is_err() && split.user(4).is_err());
}

#[test]
fn pad_examples() {
    assert_eq!(pad_or_truncate(&[7, 8], 4), vec![0, 0, 7, 8]);
    assert_eq!(pad_or_truncate(&[1, 2, 3, 4, 5], 3), vec![3, 4, 5]);
    assert_eq!(pad_or_truncate(&[], 2), vec![0, 0]);
}

#[test]
fn batch_layout_matches_shifted_sequence() {
    let split = split_leave_one_out(&fixtures::from_sequences(vec![vec![1, 2, 3, 4, 5]], 8));
    let opts = BatchOptions { max_len: 5, context: TrainContext::TrainAndValid, negatives: NegativeExclusion::History };
    let b = make_training_batch(&split, &[1], opts, 0).unwrap();
    assert_eq!(b.input_ids, vec![0, 0, 1, 2, 3]);
    assert_eq!(b.target_ids, vec![0, 0, 2, 3, 4]);
    assert_eq!(b.valid_mask, vec![false, false, true, true, true]);
    assert!(b.negative_ids[2..].iter().all(|&n| (6..=8).contains(&n)));
    assert_eq!(b.active_window(), 3);
    let opts = BatchOptions { context: TrainContext::TrainOnly, ..opts };
    let b = make_training_batch(&split, &[1], opts, 0).unwrap();
    assert_eq!(b.target_ids, vec![0, 0, 0, 2, 3]);
    let opts = BatchOptions { max_len: 0, ..opts };
    assert_eq!(make_training_batch(&split, &[1], opts, 0), Err(DataError::ZeroLength));
}

#[test]
fn full_coverage_users_have_no_history_negatives() {
    let split = split_leave_one_out(&fixtures::cyclic(3, 4, 6));
    let opts = BatchOptions { max_len: 5, context: TrainContext::TrainAndValid, negatives: NegativeExclusion::History };
    assert_eq!(make_training_batch(&split, &[1, 2, 3], opts, 0).unwrap().num_valid(), 0);
    let opts = BatchOptions { negatives: NegativeExclusion::TargetOnly, ..opts };
    let b = make_training_batch(&split, &[1, 2, 3], opts, 0).unwrap();
    assert_eq!(b.num_valid(), 12);
    for i in 0..b.valid_mask.len() {
        if b.valid_mask[i] {
            assert_ne!(b.negative_ids[i], b.target_ids[i]);
        }
    }
}

#[test]
fn sample_negative_is_uniform_over_legal_items() {
    let excluded = [1, 3, 4, 6, 7, 9];
    let mut rng = SeededRng::seed_from_u64(11);
    let mut counts = [0usize; 11];
    let draws = 10_000;
    for _ in 0..draws {
        counts[sample_negative(&excluded, 10, &mut rng).unwrap() as usize] += 1;
    }
    let legal = [2, 5, 8, 10];
    let p = 0.25;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        if legal.contains(&i) {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "item {i}: {c}");
        } else {
            assert_eq!(c, 0);
        }
    }
    assert_eq!(sample_negative(&[1, 2], 2, &mut rng), Err(DataError::NoLegalNegative));
}

#[test]
fn min_count_filter() {
    let ds = fixtures::from_sequences(vec![vec![1, 2, 3], vec![1, 2], vec![3], vec![1, 1, 2, 4]], 4);
    let f = ds.with_min_counts(2, 2).unwrap();
    assert_eq!(f.num_items(), 3);
    assert_eq!(f.num_users(), 3);
    assert_eq!(f.sequences, vec![vec![1, 2, 3], vec![1, 2], vec![1, 1, 2]]);
}

proptest! {
    #[test]
    fn split_round_trips((seqs, items) in sequences()) {
        let ds = fixtures::from_sequences(seqs.clone(), items);
        let split = split_leave_one_out(&ds);
        for (s, u) in seqs.iter().zip(&split.users) {
            let mut back = u.train_and_valid();
            back.push(u.test);
            prop_assert_eq!(&back, s);
            let mut h = s.clone();
            h.sort_unstable();
            h.dedup();
            prop_assert_eq!(&u.history, &h);
        }
    }

    #[test]
    fn pad_always_has_requested_length(seq in prop::collection::vec(1u32..50, 0..40), n in 1usize..30) {
        let p = pad_or_truncate(&seq, n);
        prop_assert_eq!(p.len(), n);
        let keep = seq.len().min(n);
        prop_assert_eq!(&p[n - keep..], &seq[seq.len() - keep..]);
        prop_assert!(p[..n - keep].iter().all(|&i| i == PAD));
    }

    #[test]
    fn batches_never_train_on_padding_or_history((seqs, items) in sequences(), n in 1usize..10, seed in any::<u64>()) {
        let split = split_leave_one_out(&fixtures::from_sequences(seqs, items));
        let users: Vec<u32> = split.user_ids().collect();
        let opts = BatchOptions { max_len: n, context: TrainContext::TrainAndValid, negatives: NegativeExclusion::History };
        let b = make_training_batch(&split, &users, opts, seed).unwrap();
        prop_assert_eq!(b.input_ids.len(), users.len() * n);
        for (r, &u) in users.iter().enumerate() {
            let hist = &split.user(u).unwrap().history;
            for c in 0..n {
                let i = r * n + c;
                if b.valid_mask[i] {
                    prop_assert_ne!(b.target_ids[i], PAD);
                    prop_assert!(hist.binary_search(&b.negative_ids[i]).is_err());
                    prop_assert!((1..=items as u32).contains(&b.negative_ids[i]));
                } else if b.target_ids[i] != PAD {
                    prop_assert_eq!(hist.len(), items);
                }
            }
        }
    }

    #[test]
    fn sampled_negative_is_legal(mut excluded in prop::collection::vec(1u32..30, 0..29), seed in any::<u64>()) {
        excluded.sort_unstable();
        excluded.dedup();
        let mut rng = SeededRng::seed_from_u64(seed);
        match sample_negative(&excluded, 29, &mut rng) {
            Ok(i) => prop_assert!(excluded.binary_search(&i).is_err() && (1..=29).contains(&i)),
            Err(_) => prop_assert_eq!(excluded.len(), 29),
        }
    }
}
