//! Interaction sequences, leave-one-out split, padding and training batches.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::SeededRng;

/// Padding item id; never a real item.
pub const PAD: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("no interactions")]
    Empty,
    #[error("user history covers every item; no negative can be drawn")]
    NoLegalNegative,
    #[error("sequence length must be at least 1")]
    ZeroLength,
    #[error("unknown user id {0}")]
    UnknownUser(u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
}

/// Per-user chronological item sequences with dense ids.
///
/// User ids and item ids both start at 1; `users[u - 1]` is the external
/// name of user `u` and `sequences[u - 1]` its items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub sequences: Vec<Vec<u32>>,
}

impl InteractionDataset {
    /// Builds dense ids in order of first appearance. Each user's items are
    /// sorted by timestamp; equal timestamps keep input order.
    pub fn from_interactions<I>(records: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = Interaction>,
    {
        let mut user_ids: BTreeMap<String, u32> = BTreeMap::new();
        let mut item_ids: BTreeMap<String, u32> = BTreeMap::new();
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut timed: Vec<Vec<(u64, u32)>> = Vec::new();

        for rec in records {
            let u = *user_ids.entry(rec.user.clone()).or_insert_with(|| {
                users.push(rec.user.clone());
                timed.push(Vec::new());
                users.len() as u32
            });
            let i = *item_ids.entry(rec.item.clone()).or_insert_with(|| {
                items.push(rec.item.clone());
                items.len() as u32
            });
            timed[(u - 1) as usize].push((rec.timestamp, i));
        }
        if users.is_empty() {
            return Err(DataError::Empty);
        }
        let sequences = timed
            .into_iter()
            .map(|mut s| {
                s.sort_by_key(|&(t, _)| t);
                s.into_iter().map(|(_, i)| i).collect()
            })
            .collect();
        Ok(Self { users, items, sequences })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_actions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Fraction of the user × item matrix that is observed.
    pub fn density(&self) -> f64 {
        self.num_actions() as f64 / (self.num_users() as f64 * self.num_items() as f64)
    }

    /// Drops items with fewer than `min_item` interactions, then users with
    /// fewer than `min_user`, in one pass each, and re-densifies ids.
    pub fn with_min_counts(&self, min_user: usize, min_item: usize) -> Result<Self, DataError> {
        let mut item_count = vec![0usize; self.num_items() + 1];
        for s in &self.sequences {
            for &i in s {
                item_count[i as usize] += 1;
            }
        }
        let mut remap = vec![PAD; self.num_items() + 1];
        let mut items = Vec::new();
        for (old, name) in self.items.iter().enumerate() {
            if item_count[old + 1] >= min_item {
                items.push(name.clone());
                remap[old + 1] = items.len() as u32;
            }
        }
        let mut users = Vec::new();
        let mut sequences = Vec::new();
        for (name, s) in self.users.iter().zip(&self.sequences) {
            let kept: Vec<u32> = s.iter().map(|&i| remap[i as usize]).filter(|&i| i != PAD).collect();
            if !kept.is_empty() && kept.len() >= min_user {
                users.push(name.clone());
                sequences.push(kept);
            }
        }
        if users.is_empty() {
            return Err(DataError::Empty);
        }
        let used: Vec<bool> = {
            let mut u = vec![false; items.len() + 1];
            sequences.iter().flatten().for_each(|&i: &u32| u[i as usize] = true);
            u
        };
        if used[1..].iter().all(|&u| u) {
            return Ok(Self { users, items, sequences });
        }
        // items can lose all interactions when their users are dropped
        let mut second = vec![PAD; items.len() + 1];
        let mut kept_items = Vec::new();
        for (old, name) in items.into_iter().enumerate() {
            if used[old + 1] {
                kept_items.push(name);
                second[old + 1] = kept_items.len() as u32;
            }
        }
        for s in &mut sequences {
            s.iter_mut().for_each(|i| *i = second[*i as usize]);
        }
        Ok(Self { users, items: kept_items, sequences })
    }
}

/// One user's leave-one-out assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<u32>,
    pub valid: Option<u32>,
    pub test: u32,
    /// Sorted, deduplicated full history (train, valid, test).
    pub history: Vec<u32>,
}

impl UserSplit {
    /// Training prefix followed by the validation item, if any.
    pub fn train_and_valid(&self) -> Vec<u32> {
        let mut s = self.train.clone();
        s.extend(self.valid);
        s
    }

    /// Context preceding the validation item.
    pub fn validation_context(&self) -> &[u32] {
        &self.train
    }

    /// Context preceding the test item.
    pub fn test_context(&self) -> Vec<u32> {
        self.train_and_valid()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub num_items: usize,
    /// `users[u - 1]` belongs to user id `u`.
    pub users: Vec<UserSplit>,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, id: u32) -> Result<&UserSplit, DataError> {
        id.checked_sub(1)
            .and_then(|i| self.users.get(i as usize))
            .ok_or(DataError::UnknownUser(id))
    }

    pub fn user_ids(&self) -> impl Iterator<Item = u32> {
        1..=self.users.len() as u32
    }
}

/// Last item → test, second to last → validation, the rest → train.
/// Short users are filled tail first.
pub fn split_leave_one_out(ds: &InteractionDataset) -> SplitDataset {
    let users = ds
        .sequences
        .iter()
        .map(|seq| {
            let (test, rest) = seq.split_last().expect("users have at least one interaction");
            let (valid, train) = match rest.split_last() {
                Some((v, t)) => (Some(*v), t.to_vec()),
                None => (None, Vec::new()),
            };
            let mut history = seq.clone();
            history.sort_unstable();
            history.dedup();
            UserSplit { train, valid, test: *test, history }
        })
        .collect();
    SplitDataset { num_items: ds.num_items(), users }
}

/// Keeps the most recent `n` items, or left-pads with [`PAD`] to length `n`.
pub fn pad_or_truncate(seq: &[u32], n: usize) -> Vec<u32> {
    if seq.len() >= n {
        return seq[seq.len() - n..].to_vec();
    }
    let mut out = vec![PAD; n - seq.len()];
    out.extend_from_slice(seq);
    out
}

/// Which items are off-limits as negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeExclusion {
    /// Any item the user ever interacted with.
    #[default]
    History,
    /// Only the ground-truth item of the position being scored. Needed when
    /// histories cover the whole catalogue.
    TargetOnly,
}

/// Which interactions form the training sequence of a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainContext {
    /// Train prefix plus the validation item as final target.
    #[default]
    TrainAndValid,
    /// Train prefix only.
    TrainOnly,
}

impl TrainContext {
    pub fn sequence(self, user: &UserSplit) -> Vec<u32> {
        match self {
            TrainContext::TrainAndValid => user.train_and_valid(),
            TrainContext::TrainOnly => user.train.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub max_len: usize,
    pub context: TrainContext,
    pub negatives: NegativeExclusion,
}

/// `B × n` row-major batch of next-item training positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceBatch {
    pub users: Vec<u32>,
    pub max_len: usize,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub negative_ids: Vec<u32>,
    pub valid_mask: Vec<bool>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.users.len()
    }

    pub fn num_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    /// Number of trailing columns that contain any non-padding input.
    pub fn active_window(&self) -> usize {
        let n = self.max_len;
        self.input_ids
            .chunks(n)
            .map(|row| n - row.iter().take_while(|&&i| i == PAD).count())
            .max()
            .unwrap_or(0)
    }
}

/// Draws one item uniformly from `1..=num_items` minus `excluded`
/// (sorted, deduplicated).
pub fn sample_negative<R: Rng + ?Sized>(excluded: &[u32], num_items: usize, rng: &mut R) -> Result<u32, DataError> {
    let blocked = excluded.iter().filter(|&&i| i >= 1 && i as usize <= num_items).count();
    let legal = num_items - blocked;
    if legal == 0 {
        return Err(DataError::NoLegalNegative);
    }
    if legal * 2 >= num_items {
        loop {
            let cand = rng.random_range(1..=num_items as u32);
            if excluded.binary_search(&cand).is_err() {
                return Ok(cand);
            }
        }
    }
    Ok(nth_legal(excluded, rng.random_range(0..legal)))
}

/// The `k`-th (0-based) item of `1..` not present in sorted `excluded`.
pub(crate) fn nth_legal(excluded: &[u32], k: usize) -> u32 {
    let mut cand = k as u32 + 1;
    for &e in excluded {
        if e == PAD {
            continue;
        }
        if e <= cand {
            cand += 1;
        } else {
            break;
        }
    }
    cand
}

/// Builds a next-item batch for `users`.
///
/// For a training sequence `s`, the input row is `s[..len-1]` and the target
/// row `s[1..]`, both left-padded to `max_len`. One negative is drawn for
/// each valid position; positions without a legal negative are masked out.
pub fn make_training_batch(
    split: &SplitDataset,
    users: &[u32],
    opts: BatchOptions,
    rng_seed: u64,
) -> Result<SequenceBatch, DataError> {
    let n = opts.max_len;
    if n == 0 {
        return Err(DataError::ZeroLength);
    }
    let mut rng = SeededRng::seed_from_u64(rng_seed);
    let total = users.len() * n;
    let mut batch = SequenceBatch {
        users: users.to_vec(),
        max_len: n,
        input_ids: Vec::with_capacity(total),
        target_ids: Vec::with_capacity(total),
        negative_ids: Vec::with_capacity(total),
        valid_mask: Vec::with_capacity(total),
    };
    for &u in users {
        let user = split.user(u)?;
        let seq = opts.context.sequence(user);
        let (inputs, targets) = if seq.len() >= 2 {
            (pad_or_truncate(&seq[..seq.len() - 1], n), pad_or_truncate(&seq[1..], n))
        } else {
            (vec![PAD; n], vec![PAD; n])
        };
        for &t in &targets {
            let mut valid = t != PAD;
            let mut neg = PAD;
            if valid {
                let drawn = match opts.negatives {
                    NegativeExclusion::History => sample_negative(&user.history, split.num_items, &mut rng),
                    NegativeExclusion::TargetOnly => sample_negative(&[t], split.num_items, &mut rng),
                };
                match drawn {
                    Ok(i) => neg = i,
                    Err(_) => valid = false,
                }
            }
            batch.negative_ids.push(neg);
            batch.valid_mask.push(valid);
        }
        batch.input_ids.extend(inputs);
        batch.target_ids.extend(targets);
    }
    Ok(batch)
}

/// Seeded permutation of all user ids.
pub fn shuffled_users(split: &SplitDataset, seed: u64) -> Vec<u32> {
    let mut ids: Vec<u32> = split.user_ids().collect();
    ids.shuffle(&mut SeededRng::seed_from_u64(seed));
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rec(u: &str, i: &str, t: u64) -> Interaction {
        Interaction { user: u.to_string(), item: i.to_string(), timestamp: t }
    }

    fn split_of(seqs: &[&[u32]], num_items: usize) -> SplitDataset {
        let ds = InteractionDataset {
            users: (0..seqs.len()).map(|i| i.to_string()).collect(),
            items: (1..=num_items).map(|i| i.to_string()).collect(),
            sequences: seqs.iter().map(|s| s.to_vec()).collect(),
        };
        split_leave_one_out(&ds)
    }

    #[test]
    fn three_line_fixture_counts() {
        let ds = InteractionDataset::from_interactions([rec("u1", "a", 5), rec("u2", "b", 1), rec("u1", "b", 2)]).unwrap();
        assert_eq!((ds.num_users(), ds.num_items(), ds.num_actions()), (2, 2, 3));
        // u1: b@2 then a@5
        assert_eq!(ds.sequences[0], vec![2, 1]);
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = InteractionDataset::from_interactions(Vec::new()).unwrap_err();
        assert_eq!(err.to_string(), "no interactions");
    }

    #[test]
    fn timestamp_ties_keep_input_order_and_duplicates_survive() {
        let ds = InteractionDataset::from_interactions([
            rec("u", "x", 3),
            rec("u", "y", 3),
            rec("u", "x", 3),
            rec("u", "z", 1),
        ])
        .unwrap();
        assert_eq!(ds.sequences[0], vec![3, 1, 2, 1]);
        assert_eq!(ds.num_actions(), 4);
    }

    #[test]
    fn leave_one_out_cases() {
        let s = split_of(&[&[1, 2, 3, 4], &[1], &[1, 2]], 4);
        assert_eq!(s.users[0].train, vec![1, 2]);
        assert_eq!(s.users[0].valid, Some(3));
        assert_eq!(s.users[0].test, 4);
        assert_eq!((s.users[1].train.len(), s.users[1].valid, s.users[1].test), (0, None, 1));
        assert_eq!((s.users[2].train.len(), s.users[2].valid, s.users[2].test), (0, Some(1), 2));
    }

    #[test]
    fn padding_and_truncation() {
        let long: Vec<u32> = (1..=60).collect();
        assert_eq!(pad_or_truncate(&long, 50), (11..=60).collect::<Vec<_>>());
        assert_eq!(pad_or_truncate(&[7, 8], 5), vec![0, 0, 0, 7, 8]);
        let exact: Vec<u32> = (1..=50).collect();
        assert_eq!(pad_or_truncate(&exact, 50), exact);
    }

    #[test]
    fn batch_shift_on_three_items() {
        // train [a, b, c] = [1, 2, 3] with train-only context
        let s = split_of(&[&[1, 2, 3, 4, 5]], 9);
        let opts = BatchOptions { max_len: 3, context: TrainContext::TrainOnly, negatives: NegativeExclusion::History };
        let b = make_training_batch(&s, &[1], opts, 7).unwrap();
        assert_eq!(b.input_ids, vec![0, 1, 2]);
        assert_eq!(b.target_ids, vec![0, 2, 3]);
        assert_eq!(b.valid_mask, vec![false, true, true]);
        assert_eq!(b.negative_ids[0], PAD);
        assert!(b.negative_ids[1..].iter().all(|&n| n > 5));
    }

    #[test]
    fn default_context_ends_with_validation_target() {
        let s = split_of(&[&[1, 2, 3, 4, 5]], 9);
        let opts = BatchOptions { max_len: 5, context: TrainContext::TrainAndValid, negatives: NegativeExclusion::History };
        let b = make_training_batch(&s, &[1], opts, 7).unwrap();
        assert_eq!(b.input_ids, vec![0, 0, 1, 2, 3]);
        assert_eq!(b.target_ids, vec![0, 0, 2, 3, 4]);
    }

    #[test]
    fn forced_negative_and_exhausted_history() {
        let mut rng = SeededRng::seed_from_u64(1);
        for _ in 0..50 {
            assert_eq!(sample_negative(&[1, 2, 3, 4, 6], 6, &mut rng), Ok(5));
        }
        assert_eq!(sample_negative(&[1, 2, 3], 3, &mut rng), Err(DataError::NoLegalNegative));
    }

    #[test]
    fn single_legal_negative_fills_the_batch() {
        let s = split_of(&[&[1, 2, 3, 4]], 5);
        let opts = BatchOptions { max_len: 4, context: TrainContext::TrainAndValid, negatives: NegativeExclusion::History };
        let b = make_training_batch(&s, &[1], opts, 3).unwrap();
        for (n, v) in b.negative_ids.iter().zip(&b.valid_mask) {
            assert_eq!(*n, if *v { 5 } else { PAD });
        }
    }

    #[test]
    fn exhausted_history_masks_positions() {
        let s = split_of(&[&[1, 2, 3]], 3);
        let opts = BatchOptions { max_len: 3, context: TrainContext::TrainAndValid, negatives: NegativeExclusion::History };
        let b = make_training_batch(&s, &[1], opts, 3).unwrap();
        assert_eq!(b.num_valid(), 0);
        let opts = BatchOptions { negatives: NegativeExclusion::TargetOnly, ..opts };
        let b = make_training_batch(&s, &[1], opts, 3).unwrap();
        assert_eq!(b.num_valid(), 1);
        assert_ne!(b.negative_ids[2], b.target_ids[2]);
    }

    #[test]
    fn nth_legal_skips_excluded() {
        let ex = [2, 3, 7];
        let legal: Vec<u32> = (0..6).map(|k| nth_legal(&ex, k)).collect();
        assert_eq!(legal, vec![1, 4, 5, 6, 8, 9]);
    }

    #[test]
    fn min_count_filter_redensifies() {
        let ds = InteractionDataset::from_interactions([
            rec("u1", "a", 1),
            rec("u1", "b", 2),
            rec("u2", "a", 1),
            rec("u3", "c", 1),
        ])
        .unwrap();
        let f = ds.with_min_counts(1, 2).unwrap();
        assert_eq!(f.items, vec!["a".to_string()]);
        assert_eq!(f.sequences, vec![vec![1], vec![1]]);
        let f = ds.with_min_counts(2, 0).unwrap();
        assert_eq!(f.num_users(), 1);
        assert_eq!(f.items.len(), 2);
    }

    #[test]
    fn batch_is_deterministic() {
        let s = split_of(&[&[1, 2, 3, 4, 5, 6], &[3, 4, 5]], 40);
        let opts = BatchOptions { max_len: 6, context: TrainContext::TrainAndValid, negatives: NegativeExclusion::History };
        assert_eq!(make_training_batch(&s, &[1, 2], opts, 11), make_training_batch(&s, &[1, 2], opts, 11));
        assert_eq!(make_training_batch(&s, &[1], BatchOptions { max_len: 0, ..opts }, 1), Err(DataError::ZeroLength));
    }
}
