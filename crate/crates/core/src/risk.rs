//! Per-domain predicate risks and biased-annotation targets.
//!
//! The raw risk of predicate `p` in domain `d` is the sum, over the samples
//! of `d` in ascending id order, of the reference classifier's probability
//! for `p`. Each domain's raw vector is then softmax-normalized. A sample is
//! a target when the classifier's argmax predicate carries more risk than its
//! label (direct conflict > 0) and the predicted predicate is less scarce
//! than the label in that domain.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::{Corpus, Domain, FreqTable};
use crate::error::{DebiasError, Result};
use crate::linalg::Matrix;
use crate::par;

pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Reference classifier outputs, one row per sample in `sample_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    pub rows: Matrix,
    pub provenance: String,
}

impl ProbMatrix {
    /// Checks that every row is a probability distribution.
    pub fn new(rows: Matrix, provenance: impl Into<String>) -> Result<Self> {
        for r in 0..rows.rows() {
            let row = rows.row(r);
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(DebiasError::InvalidProbRow {
                    row: r,
                    reason: format!("entry {v} outside [0, 1]"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(DebiasError::InvalidProbRow {
                    row: r,
                    reason: format!("sums to {sum}"),
                });
            }
        }
        Ok(Self {
            rows,
            provenance: provenance.into(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.rows.row(r)
    }

    pub fn check_against(&self, corpus: &Corpus) -> Result<()> {
        if self.rows.rows() != corpus.len() {
            return Err(DebiasError::ShapeMismatch {
                what: "probability rows vs corpus samples",
                expected: corpus.len(),
                actual: self.rows.rows(),
            });
        }
        if self.rows.cols() != corpus.num_predicates() {
            return Err(DebiasError::ShapeMismatch {
                what: "probability columns vs predicates",
                expected: corpus.num_predicates(),
                actual: self.rows.cols(),
            });
        }
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> ProbMatrix {
        ProbMatrix {
            rows: self.rows.select_rows(rows),
            provenance: self.provenance.clone(),
        }
    }
}

/// Softmax-normalized risk vectors per domain present in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    num_predicates: usize,
    risks: BTreeMap<Domain, Vec<f64>>,
    sample_counts: BTreeMap<Domain, usize>,
}

impl RiskTable {
    pub fn num_predicates(&self) -> usize {
        self.num_predicates
    }

    pub fn domains(&self) -> impl Iterator<Item = (&Domain, &Vec<f64>)> {
        self.risks.iter()
    }

    pub fn risks(&self, domain: &Domain) -> Result<&[f64]> {
        self.risks
            .get(domain)
            .map(Vec::as_slice)
            .ok_or(DebiasError::UnknownDomain {
                subject: domain.subject_class,
                object: domain.object_class,
            })
    }

    pub fn sample_count(&self, domain: &Domain) -> usize {
        self.sample_counts.get(domain).copied().unwrap_or(0)
    }
}

/// Max-subtracted softmax.
pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Sum in ascending value order, so the result does not depend on the order
/// samples were stored in.
fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub fn compute_risk_table(corpus: &Corpus, probs: &ProbMatrix) -> Result<RiskTable> {
    probs.check_against(corpus)?;
    let q = corpus.num_predicates();
    let domains: Vec<(&Domain, &Vec<usize>)> = corpus.domain_index().iter().collect();
    let vectors = par::map_indexed(domains.len(), |i| {
        let rows = domains[i].1;
        let mut column = Vec::with_capacity(rows.len());
        let raw: Vec<f64> = (0..q)
            .map(|p| {
                column.clear();
                column.extend(rows.iter().map(|&r| probs.row(r)[p]));
                sorted_sum(&mut column)
            })
            .collect();
        softmax(&raw)
    });
    let mut risks = BTreeMap::new();
    let mut sample_counts = BTreeMap::new();
    for ((domain, rows), v) in domains.into_iter().zip(vectors) {
        risks.insert(*domain, v);
        sample_counts.insert(*domain, rows.len());
    }
    Ok(RiskTable {
        num_predicates: q,
        risks,
        sample_counts,
    })
}

/// `R_predicted - R_gt` in the given domain.
pub fn direct_conflict(table: &RiskTable, domain: &Domain, predicted: u32, gt: u32) -> Result<f64> {
    let r = table.risks(domain)?;
    let at = |p: u32| {
        r.get(p as usize).copied().ok_or(DebiasError::OutOfRange {
            id: 0,
            field: "predicate",
            value: p,
            limit: r.len(),
        })
    };
    Ok(at(predicted)? - at(gt)?)
}

/// Scarcity of predicate `p` in domain `d`: `1 / ((1 + n_p) (1 + n_{d,p}))`.
pub fn attraction(freq: &FreqTable, p: u32, d: Domain) -> f64 {
    let global = freq.predicate_count(p) as f64;
    let local = freq.pair_count(d, p) as f64;
    1.0 / ((1.0 + global) * (1.0 + local))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEntry {
    pub sample_id: u64,
    pub dc: f64,
    pub a_pred: f64,
    pub a_gt: f64,
}

/// Potentially biased annotations, sorted by DC descending then id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetSet {
    pub entries: Vec<TargetEntry>,
}

impl TargetSet {
    pub fn from_entries(mut entries: Vec<TargetEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.dc
                .total_cmp(&a.dc)
                .then_with(|| a.sample_id.cmp(&b.sample_id))
        });
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.entries.iter().map(|e| e.sample_id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn get(&self, sample_id: u64) -> Option<&TargetEntry> {
        self.entries.iter().find(|e| e.sample_id == sample_id)
    }
}

pub fn identify_targets(
    corpus: &Corpus,
    table: &RiskTable,
    probs: &ProbMatrix,
    freq: &FreqTable,
) -> Result<TargetSet> {
    probs.check_against(corpus)?;
    let mut entries = Vec::new();
    for (row, s) in corpus.samples().iter().enumerate() {
        let predicted = argmax(probs.row(row));
        let domain = s.domain();
        let dc = direct_conflict(table, &domain, predicted, s.predicate)?;
        if dc <= 0.0 {
            continue;
        }
        let a_pred = attraction(freq, predicted, domain);
        let a_gt = attraction(freq, s.predicate, domain);
        if a_pred < a_gt {
            entries.push(TargetEntry {
                sample_id: s.sample_id,
                dc,
                a_pred,
                a_gt,
            });
        }
    }
    Ok(TargetSet::from_entries(entries))
}
