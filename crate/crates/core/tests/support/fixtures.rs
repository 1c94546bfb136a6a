#![allow(dead_code)]

use gsr_core::data::InteractionDataset;

/// User `u` cycles through `1..=items` starting at `u mod items`.
pub fn cyclic(users: usize, items: usize, len: usize) -> InteractionDataset {
    InteractionDataset {
        users: (0..users).map(|u| format!("u{u}")).collect(),
        items: (1..=items).map(|i| format!("i{i}")).collect(),
        sequences: (0..users).map(|u| (0..len).map(|t| ((u + t) % items) as u32 + 1).collect()).collect(),
    }
}

pub fn from_sequences(seqs: Vec<Vec<u32>>, items: usize) -> InteractionDataset {
    InteractionDataset {
        users: (0..seqs.len()).map(|u| format!("u{u}")).collect(),
        items: (1..=items).map(|i| format!("i{i}")).collect(),
        sequences: seqs,
    }
}
