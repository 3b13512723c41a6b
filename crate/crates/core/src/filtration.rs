//! Loss-variance filtration of biased and noisy samples.
//!
//! A sample's variance is the population variance of its own per-anchor
//! loss over the trailing training epochs. Samples whose variance exceeds
//! `μ` times their label's average are flagged; the flagged set is sorted by
//! final loss and its uppermost `D%` removed, never touching classes smaller
//! than the floor.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{frequencies, Corpus};
use crate::error::{DebiasError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleVariance {
    pub predicate: u32,
    pub variance: f64,
    /// Last finite loss in the trace.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    /// Samples with at least two finite losses in the window.
    pub per_sample: BTreeMap<u64, SampleVariance>,
    pub per_predicate_avg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiltrationResult {
    pub flagged: BTreeSet<u64>,
    /// Highest final loss first.
    pub removed: Vec<u64>,
    pub floor: u64,
}

pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// `traces` is the `|samples| × epochs` matrix from training (NaN marks an
/// absent anchor), row-aligned with `corpus`.
pub fn sample_variances(corpus: &Corpus, traces: &Matrix, window: usize) -> Result<VarianceProfile> {
    if traces.rows() != corpus.len() {
        return Err(DebiasError::ShapeMismatch {
            what: "trace rows vs corpus samples",
            expected: corpus.len(),
            actual: traces.rows(),
        });
    }
    if window > traces.cols() {
        return Err(DebiasError::InvalidConfig(alloc::format!(
            "window {window} exceeds trace length {}",
            traces.cols()
        )));
    }
    if window < 2 {
        return Err(DebiasError::InvalidConfig(String::from("window must be at least 2")));
    }
    let q = corpus.num_predicates();
    let start = traces.cols() - window;
    let mut per_sample = BTreeMap::new();
    let mut sums = alloc::vec![0.0; q];
    let mut counts = alloc::vec![0usize; q];
    for (row, s) in corpus.samples().iter().enumerate() {
        let finite: Vec<f64> = traces.row(row)[start..]
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        if finite.len() < 2 {
            continue;
        }
        let variance = population_variance(&finite);
        per_sample.insert(
            s.sample_id,
            SampleVariance {
                predicate: s.predicate,
                variance,
                final_loss: *finite.last().expect("non-empty"),
            },
        );
        sums[s.predicate as usize] += variance;
        counts[s.predicate as usize] += 1;
    }
    let per_predicate_avg = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(VarianceProfile {
        per_sample,
        per_predicate_avg,
    })
}

/// `{ i : V_i > μ · V_aver[p_i] }`.
pub fn flag(profile: &VarianceProfile, mu: f64) -> BTreeSet<u64> {
    profile
        .per_sample
        .iter()
        .filter(|(_, v)| v.variance > mu * profile.per_predicate_avg[v.predicate as usize])
        .map(|(&id, _)| id)
        .collect()
}

/// Removes the uppermost `⌊D% · |flagged|⌋` flagged samples by final loss,
/// skipping (without replacement) samples whose class has fewer than
/// `floor` samples in `corpus`.
pub fn filter_top_d(
    flagged: &BTreeSet<u64>,
    final_losses: &BTreeMap<u64, f64>,
    top_d: f64,
    corpus: &Corpus,
    floor: u64,
) -> Result<FiltrationResult> {
    if !(0.0..=100.0).contains(&top_d) {
        return Err(DebiasError::InvalidConfig(String::from("top_d must be in [0, 100]")));
    }
    let freq = frequencies(corpus);
    let mut ranked: Vec<(f64, u64)> = Vec::with_capacity(flagged.len());
    for &id in flagged {
        let loss = *final_losses.get(&id).ok_or(DebiasError::UnknownSample(id))?;
        ranked.push((loss, id));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cut = libm::floor(top_d * ranked.len() as f64 / 100.0) as usize;
    let mut removed = Vec::new();
    for &(_, id) in ranked.iter().rev().take(cut) {
        let s = corpus.sample(id).ok_or(DebiasError::UnknownSample(id))?;
        if freq.predicate_count(s.predicate) >= floor {
            removed.push(id);
        }
    }
    Ok(FiltrationResult {
        flagged: flagged.clone(),
        removed,
        floor,
    })
}

/// Final losses of every profiled sample.
pub fn final_losses(profile: &VarianceProfile) -> BTreeMap<u64, f64> {
    profile
        .per_sample
        .iter()
        .map(|(&id, v)| (id, v.final_loss))
        .collect()
}

/// Variance profile, flagging and top-D removal in one pass.
pub fn filtrate(
    corpus: &Corpus,
    traces: &Matrix,
    window: usize,
    mu: f64,
    top_d: f64,
    floor: u64,
) -> Result<(VarianceProfile, FiltrationResult)> {
    let profile = sample_variances(corpus, traces, window)?;
    let flagged = flag(&profile, mu);
    let result = filter_top_d(&flagged, &final_losses(&profile), top_d, corpus, floor)?;
    Ok((profile, result))
}
