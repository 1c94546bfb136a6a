//! Candidate ranking by Wasserstein distance and top-N metrics, overall and
//! sliced by sequence length and item frequency.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// f64 math under no_std
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};

use crate::data::{nth_legal, NegativeExclusion, SplitDataset, TrainContext};
use crate::model::{item_distribution, predict_next, GaussianParams, ModelError, ModelParams};
use crate::objective::{wasserstein2_diag, ObjectiveError};
use crate::{derive_seed, SeededRng};

pub const DEFAULT_EVAL_NEGATIVES: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("ground-truth item {0} must appear exactly once among candidates")]
    TruthNotUnique(u32),
    #[error("malformed buckets: {0}")]
    Buckets(String),
    #[error("no users to evaluate")]
    NoUsers,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Candidates for one user, sorted by ascending distance to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub user: u32,
    pub candidates: Vec<u32>,
    pub scores: Vec<f64>,
    /// 1-based rank of the ground-truth item.
    pub rank: usize,
}

/// Ranks `candidates` by distance to `pred`; ties go to the smaller id.
pub fn rank_candidates(
    params: &ModelParams,
    pred: &GaussianParams,
    user: u32,
    truth: u32,
    candidates: &[u32],
) -> Result<RankingResult, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    if candidates.iter().filter(|&&c| c == truth).count() != 1 {
        return Err(EvalError::TruthNotUnique(truth));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let dist = wasserstein2_diag(&item_distribution(params, c)?, pred)?;
        scored.push((dist, c));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let rank = scored.iter().position(|&(_, c)| c == truth).expect("truth present") + 1;
    let (scores, candidates) = scored.into_iter().unzip();
    Ok(RankingResult { user, candidates, scores, rank })
}

/// Scores `candidates` against the distribution inferred at the last
/// position of `context`.
pub fn score_user(
    params: &ModelParams,
    user: u32,
    context: &[u32],
    truth: u32,
    candidates: &[u32],
) -> Result<RankingResult, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    let pred = predict_next(params, context)?;
    rank_candidates(params, &pred, user, truth, candidates)
}

/// `k` distinct items outside `excluded` (sorted) followed by `truth`.
/// When fewer than `k` legal items exist, or `k` is `None`, all of them are
/// used in ascending order.
pub fn sample_eval_negatives<R: Rng + ?Sized>(
    excluded: &[u32],
    num_items: usize,
    k: Option<usize>,
    truth: u32,
    rng: &mut R,
) -> Vec<u32> {
    let blocked = excluded.iter().filter(|&&i| i >= 1 && i as usize <= num_items).count();
    let legal = num_items - blocked;
    let mut out: Vec<u32> = match k {
        Some(k) if k < legal && legal < 2 * k => rand::seq::index::sample(rng, legal, k)
            .into_iter()
            .map(|j| nth_legal(excluded, j))
            .collect(),
        Some(k) if k < legal => {
            let mut seen = BTreeSet::new();
            let mut picks = Vec::with_capacity(k);
            while picks.len() < k {
                let c = rng.random_range(1..=num_items as u32);
                if excluded.binary_search(&c).is_err() && seen.insert(c) {
                    picks.push(c);
                }
            }
            picks
        }
        _ => (0..legal).map(|j| nth_legal(excluded, j)).collect(),
    };
    out.retain(|&c| c != truth);
    out.push(truth);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub users: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub ndcg_at_5: f64,
    pub mrr: f64,
}

/// Recall@{1,5}, NDCG@5 and MRR from 1-based ranks of a single relevant
/// item per user. `None` for an empty input.
pub fn metrics_from_ranks<I: IntoIterator<Item = usize>>(ranks: I) -> Option<MetricReport> {
    let (mut users, mut r1, mut r5, mut ndcg, mut rr) = (0usize, 0.0, 0.0, 0.0, 0.0);
    for rank in ranks {
        debug_assert!(rank >= 1);
        users += 1;
        if rank <= 1 {
            r1 += 1.0;
        }
        if rank <= 5 {
            r5 += 1.0;
            ndcg += 1.0 / libm::log2((rank + 1) as f64);
        }
        rr += 1.0 / rank as f64;
    }
    if users == 0 {
        return None;
    }
    let n = users as f64;
    Some(MetricReport { users, recall_at_1: r1 / n, recall_at_5: r5 / n, ndcg_at_5: ndcg / n, mrr: rr / n })
}

pub fn compute_metrics(results: &[RankingResult]) -> Option<MetricReport> {
    metrics_from_ranks(results.iter().map(|r| r.rank))
}

/// Half-open buckets given by strictly increasing lower bounds. Values
/// below the first bound fall into the first bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Buckets {
    lower_bounds: Vec<usize>,
}

impl Default for Buckets {
    fn default() -> Self {
        Self { lower_bounds: vec![1, 2, 5, 10, 20] }
    }
}

impl Buckets {
    pub fn new(lower_bounds: Vec<usize>) -> Result<Self, EvalError> {
        if lower_bounds.is_empty() {
            return Err(EvalError::Buckets("at least one bound required".into()));
        }
        if lower_bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Buckets(format!("bounds {lower_bounds:?} not strictly increasing")));
        }
        Ok(Self { lower_bounds })
    }

    /// Parses a comma-separated bound list such as `1,2,5,10,20`.
    pub fn parse(s: &str) -> Result<Self, EvalError> {
        let bounds = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| EvalError::Buckets(format!("bad bound {p:?} in {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(bounds)
    }

    pub fn len(&self) -> usize {
        self.lower_bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower_bounds.is_empty()
    }

    pub fn bounds(&self) -> &[usize] {
        &self.lower_bounds
    }

    pub fn index_of(&self, value: usize) -> usize {
        self.lower_bounds.iter().rposition(|&b| b <= value).unwrap_or(0)
    }

    pub fn label(&self, index: usize) -> String {
        let lo = self.lower_bounds[index];
        match self.lower_bounds.get(index + 1) {
            Some(&next) if next == lo + 1 => format!("{lo}"),
            Some(&next) => format!("{}-{}", lo, next - 1),
            None => format!("{lo}+"),
        }
    }

    pub fn bounds_string(&self) -> String {
        let parts: Vec<String> = self.lower_bounds.iter().map(|b| format!("{b}")).collect();
        parts.join(",")
    }
}

/// One evaluated user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalCase {
    pub user: u32,
    pub rank: usize,
    pub num_candidates: usize,
    /// Number of interactions preceding the held-out item.
    pub context_len: usize,
    /// Occurrences of the held-out item in the training sequences.
    pub item_frequency: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceReport {
    pub label: String,
    pub users: usize,
    /// `None` when the slice has no users.
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicedReport {
    pub overall: MetricReport,
    pub by_length: Vec<SliceReport>,
    pub by_frequency: Vec<SliceReport>,
}

pub fn slice_metrics(cases: &[EvalCase], length: &Buckets, frequency: &Buckets) -> Result<SlicedReport, EvalError> {
    let overall = metrics_from_ranks(cases.iter().map(|c| c.rank)).ok_or(EvalError::NoUsers)?;
    let slice = |buckets: &Buckets, key: fn(&EvalCase) -> usize| -> Vec<SliceReport> {
        (0..buckets.len())
            .map(|b| {
                let ranks: Vec<usize> =
                    cases.iter().filter(|c| buckets.index_of(key(c)) == b).map(|c| c.rank).collect();
                SliceReport { label: buckets.label(b), users: ranks.len(), metrics: metrics_from_ranks(ranks) }
            })
            .collect()
    };
    Ok(SlicedReport {
        overall,
        by_length: slice(length, |c| c.context_len),
        by_frequency: slice(frequency, |c| c.item_frequency),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Predict the validation item from the train prefix.
    Validation,
    /// Predict the test item from train prefix plus validation item.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Sampled negatives per user; `None` ranks against every legal item.
    pub num_negatives: Option<usize>,
    pub negatives: NegativeExclusion,
    /// Training context, used for item frequencies.
    pub context: TrainContext,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_negatives: Some(DEFAULT_EVAL_NEGATIVES),
            negatives: NegativeExclusion::History,
            context: TrainContext::TrainAndValid,
            seed: 0,
        }
    }
}

/// Per-item occurrence counts over the training sequences (index = item id).
pub fn item_frequencies(split: &SplitDataset, context: TrainContext) -> Vec<usize> {
    let mut counts = vec![0usize; split.num_items + 1];
    for u in &split.users {
        for i in context.sequence(u) {
            counts[i as usize] += 1;
        }
    }
    counts
}

/// Seeded candidate list of one user for `target`, or `None` if the user
/// has no such held-out item.
/// Context, ground truth and candidate list of one user.
pub type UserCandidates = (Vec<u32>, u32, Vec<u32>);

pub fn user_candidates(split: &SplitDataset, user: u32, target: EvalTarget, cfg: &EvalConfig) -> Result<Option<UserCandidates>, EvalError> {
    let u = split.user(user).map_err(|_| EvalError::NoUsers)?;
    let (context, truth) = match target {
        EvalTarget::Validation => match u.valid {
            Some(v) => (u.validation_context().to_vec(), v),
            None => return Ok(None),
        },
        EvalTarget::Test => (u.test_context(), u.test),
    };
    let tag = match target {
        EvalTarget::Validation => 1,
        EvalTarget::Test => 2,
    };
    let mut rng = SeededRng::seed_from_u64(derive_seed(cfg.seed, tag, user as u64));
    let excluded: &[u32] = match cfg.negatives {
        NegativeExclusion::History => &u.history,
        NegativeExclusion::TargetOnly => core::slice::from_ref(&truth),
    };
    let candidates = sample_eval_negatives(excluded, split.num_items, cfg.num_negatives, truth, &mut rng);
    Ok(Some((context, truth, candidates)))
}

/// Evaluates one user; `frequencies` comes from [`item_frequencies`].
pub fn evaluate_user(
    params: &ModelParams,
    split: &SplitDataset,
    user: u32,
    target: EvalTarget,
    cfg: &EvalConfig,
    frequencies: &[usize],
) -> Result<Option<EvalCase>, EvalError> {
    let Some((context, truth, candidates)) = user_candidates(split, user, target, cfg)? else {
        return Ok(None);
    };
    let r = score_user(params, user, &context, truth, &candidates)?;
    Ok(Some(EvalCase {
        user,
        rank: r.rank,
        num_candidates: candidates.len(),
        context_len: context.len(),
        item_frequency: frequencies.get(truth as usize).copied().unwrap_or(0),
    }))
}

/// Sequential evaluation over all users.
pub fn evaluate(
    params: &ModelParams,
    split: &SplitDataset,
    target: EvalTarget,
    cfg: &EvalConfig,
) -> Result<Vec<EvalCase>, EvalError> {
    let freq = item_frequencies(split, cfg.context);
    let mut cases = Vec::new();
    for user in split.user_ids() {
        if let Some(c) = evaluate_user(params, split, user, target, cfg, &freq)? {
            cases.push(c);
        }
    }
    Ok(cases)
}
