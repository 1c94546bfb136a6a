//! Tab-separated training log, one row per epoch.

use std::io::{self, Write};

use gsr_core::training::EpochRecord;

pub const HEADER: &str = "epoch\tloss\treg\tvalid_mrr";

pub fn format_record(r: &EpochRecord) -> String {
    format!("{}\t{:.9}\t{:.9}\t{:.9}", r.epoch, r.loss, r.reg, r.valid_mrr)
}

pub struct HistoryWriter<W: Write> {
    out: W,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, r: &EpochRecord) -> io::Result<()> {
        writeln!(self.out, "{}", format_record(r))?;
        self.out.flush()
    }
}

/// Parses a log written by [`HistoryWriter`].
pub fn parse(text: &str) -> Result<Vec<EpochRecord>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err("missing history header".into());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || format!("history line {}: {l:?}", i + 2);
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                loss: f[1].parse().map_err(|_| bad())?,
                reg: f[2].parse().map_err(|_| bad())?,
                valid_mrr: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
