//! Metric reports: an aligned table for people and `metric slice value
//! count` rows for tools.

use std::fmt::Write as _;

use gsr_core::evaluation::{EvalTarget, MetricReport, SliceReport, SlicedReport};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub target: EvalTarget,
    pub seed: u64,
    pub num_negatives: Option<usize>,
    pub sliced: SlicedReport,
}

const METRICS: [&str; 4] = ["recall@1", "recall@5", "ndcg@5", "mrr"];

fn values(m: &MetricReport) -> [f64; 4] {
    [m.recall_at_1, m.recall_at_5, m.ndcg_at_5, m.mrr]
}

fn target_name(t: EvalTarget) -> &'static str {
    match t {
        EvalTarget::Test => "test",
        EvalTarget::Validation => "valid",
    }
}

fn rows(r: &Report) -> Vec<(String, usize, Option<MetricReport>)> {
    let mut out = vec![("overall".to_string(), r.sliced.overall.users, Some(r.sliced.overall))];
    let mut push = |prefix: &str, slices: &[SliceReport]| {
        out.extend(slices.iter().map(|s| (format!("{prefix}:{}", s.label), s.users, s.metrics)));
    };
    push("length", &r.sliced.by_length);
    push("frequency", &r.sliced.by_frequency);
    out
}

/// Tab-separated rows; empty slices carry `NA` values and count 0.
pub fn render_machine(r: &Report) -> String {
    let mut out = String::new();
    let negatives = r.num_negatives.map_or("all".to_string(), |k| k.to_string());
    let _ = writeln!(out, "# target\t{}\n# seed\t{}\n# negatives\t{negatives}", target_name(r.target), r.seed);
    out.push_str("metric\tslice\tvalue\tcount\n");
    for (slice, users, m) in rows(r) {
        for (i, name) in METRICS.iter().enumerate() {
            let value = m.map_or("NA".to_string(), |m| format!("{:.9}", values(&m)[i]));
            let _ = writeln!(out, "{name}\t{slice}\t{value}\t{users}");
        }
    }
    out
}

pub fn render_table(r: &Report) -> String {
    let mut out = String::new();
    let negatives = r.num_negatives.map_or("all items".to_string(), |k| format!("{k} sampled negatives"));
    let _ = writeln!(out, "{} set, {negatives}, eval seed {}", target_name(r.target), r.seed);
    let _ = writeln!(out, "{:<16} {:>7} {:>9} {:>9} {:>9} {:>9}", "slice", "users", METRICS[0], METRICS[1], METRICS[2], METRICS[3]);
    for (slice, users, m) in rows(r) {
        let _ = write!(out, "{slice:<16} {users:>7}");
        match m {
            Some(m) => values(&m).iter().for_each(|v| {
                let _ = write!(out, " {v:>9.4}");
            }),
            None => (0..4).for_each(|_| {
                let _ = write!(out, " {:>9}", "-");
            }),
        }
        out.push('\n');
    }
    out
}
