use std::collections::HashMap;

use crate::error::{Result, RtfnError};

/// Fraction of positions where `pred` equals `truth`.
pub fn top1_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(RtfnError::data(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(RtfnError::data("accuracy of an empty prediction set"));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Pair counts behind the Rand Index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    /// Pairs grouped together in both labelings.
    pub positive_agree: u64,
    /// Pairs separated in both labelings.
    pub negative_agree: u64,
    pub total: u64,
}

impl PairCounts {
    pub fn rand_index(&self) -> f64 {
        (self.positive_agree + self.negative_agree) as f64 / self.total as f64
    }
}

fn check_pair_input(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(RtfnError::data(format!(
            "{} cluster ids for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(RtfnError::data("rand index needs at least two samples"));
    }
    Ok(())
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pair counts from the contingency table of the two labelings.
pub fn pair_counts(pred: &[usize], truth: &[usize]) -> Result<PairCounts> {
    check_pair_input(pred, truth)?;
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *cells.entry((p, t)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(t).or_default() += 1;
    }
    let both: u64 = cells.values().map(|&n| choose2(n)).sum();
    let same_pred: u64 = rows.values().map(|&n| choose2(n)).sum();
    let same_truth: u64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(pred.len() as u64);
    Ok(PairCounts {
        positive_agree: both,
        negative_agree: total + both - same_pred - same_truth,
        total,
    })
}

/// Rand Index: share of sample pairs on which the two labelings agree.
pub fn rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    Ok(pair_counts(pred, truth)?.rand_index())
}

/// Pair counts by enumerating every pair directly.
pub fn pair_counts_brute_force(pred: &[usize], truth: &[usize]) -> Result<PairCounts> {
    check_pair_input(pred, truth)?;
    let mut c = PairCounts {
        positive_agree: 0,
        negative_agree: 0,
        total: 0,
    };
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let sp = pred[i] == pred[j];
            let st = truth[i] == truth[j];
            c.total += 1;
            match (sp, st) {
                (true, true) => c.positive_agree += 1,
                (false, false) => c.negative_agree += 1,
                _ => {}
            }
        }
    }
    Ok(c)
}
