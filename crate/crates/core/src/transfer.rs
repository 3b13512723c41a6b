//! Prototype similarity and importance-gated label transfer.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::dataset::{Corpus, Domain, FreqTable};
use crate::error::{DebiasError, Result};
use crate::linalg::{self, Matrix};
use crate::representation::{BaseEmbeddings, ProjectionModel};
use crate::risk::TargetSet;

/// Normalized class-mean representation per predicate. Classes without any
/// sample in the corpus have no prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub rows: Vec<Option<Vec<f64>>>,
}

impl Prototypes {
    pub fn present(&self, q: u32) -> bool {
        self.rows.get(q as usize).is_some_and(Option::is_some)
    }
}

/// `reps` holds one unit representation per corpus row. `before` lists the
/// classes that had samples prior to filtration; such a class losing every
/// sample is an error.
pub fn prototypes_from_reps(
    corpus: &Corpus,
    reps: &Matrix,
    before: Option<&FreqTable>,
) -> Result<Prototypes> {
    if reps.rows() != corpus.len() {
        return Err(DebiasError::ShapeMismatch {
            what: "representation rows vs corpus samples",
            expected: corpus.len(),
            actual: reps.rows(),
        });
    }
    let q = corpus.num_predicates();
    let dim = reps.cols();
    let mut sums = alloc::vec![alloc::vec![0.0; dim]; q];
    let mut counts = alloc::vec![0usize; q];
    for (row, s) in corpus.samples().iter().enumerate() {
        let p = s.predicate as usize;
        counts[p] += 1;
        for (acc, &v) in sums[p].iter_mut().zip(reps.row(row)) {
            *acc += v;
        }
    }
    let mut rows = Vec::with_capacity(q);
    for (p, (mut sum, n)) in sums.into_iter().zip(counts).enumerate() {
        if n == 0 {
            if before.is_some_and(|f| f.predicate_count(p as u32) > 0) {
                return Err(DebiasError::EmptyClass(p as u32));
            }
            rows.push(None);
            continue;
        }
        sum.iter_mut().for_each(|v| *v /= n as f64);
        if linalg::normalize(&mut sum) < 1e-12 {
            return Err(DebiasError::DegeneratePrototype(p as u32));
        }
        rows.push(Some(sum));
    }
    Ok(Prototypes { rows })
}

/// Prototypes of `corpus` (already stripped of removed samples) under
/// `model`; `base` is row-aligned with `corpus`.
pub fn prototypes(
    model: &ProjectionModel,
    base: &BaseEmbeddings,
    corpus: &Corpus,
    before: Option<&FreqTable>,
) -> Result<Prototypes> {
    model.check_input(base)?;
    prototypes_from_reps(corpus, &model.represent_all(base), before)
}

/// Cosine similarities between prototypes. Rows and columns of absent
/// classes are zero apart from a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub present: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn get(&self, q: u32, r: u32) -> f64 {
        self.values.get(q as usize, r as usize)
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }
}

pub fn similarity(protos: &Prototypes) -> SimilarityMatrix {
    let q = protos.rows.len();
    let mut values = Matrix::zeros(q, q);
    for i in 0..q {
        values.set(i, i, 1.0);
        let Some(a) = &protos.rows[i] else { continue };
        for j in 0..q {
            if i == j {
                continue;
            }
            if let Some(b) = &protos.rows[j] {
                values.set(i, j, linalg::dot(a, b).clamp(-1.0, 1.0));
            }
        }
    }
    SimilarityMatrix {
        values,
        present: protos.rows.iter().map(Option::is_some).collect(),
    }
}

/// `1 / (1 + n_q)` per predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector(pub Vec<f64>);

impl ImportanceVector {
    pub fn get(&self, q: u32) -> f64 {
        self.0[q as usize]
    }
}

pub fn importance(freq: &FreqTable) -> ImportanceVector {
    ImportanceVector(
        freq.predicate_counts
            .iter()
            .map(|&n| 1.0 / (1.0 + n as f64))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SkipReason {
    NoRarerCandidate,
    RatioCutoff,
    NonPositiveSimilarity,
}

impl SkipReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipReason::NoRarerCandidate => "no-rarer-candidate",
            SkipReason::RatioCutoff => "ratio-cutoff",
            SkipReason::NonPositiveSimilarity => "non-positive-similarity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    pub sample_id: u64,
    pub from: u32,
    pub to: u32,
    pub similarity: f64,
    pub dc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Skip {
    pub sample_id: u64,
    pub from: u32,
    pub to: Option<u32>,
    pub similarity: Option<f64>,
    pub dc: f64,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferPlan {
    pub moves: Vec<Move>,
    pub skipped: Vec<Skip>,
}

impl TransferPlan {
    pub fn move_map(&self) -> BTreeMap<u64, u32> {
        self.moves.iter().map(|m| (m.sample_id, m.to)).collect()
    }
}

/// Most similar strictly-rarer predicate for `source`; ties go to the lower
/// id.
pub fn best_candidate(source: u32, sim: &SimilarityMatrix, imp: &ImportanceVector) -> Option<u32> {
    let mut best: Option<u32> = None;
    for q in 0..sim.len() as u32 {
        if q == source || !sim.present[q as usize] || imp.get(q) <= imp.get(source) {
            continue;
        }
        if best.is_none_or(|b| sim.get(source, q) > sim.get(source, b)) {
            best = Some(q);
        }
    }
    best
}

/// Groups targets by (domain, source, best candidate) and moves the
/// `⌈r · |group|⌉` highest-DC members of each group, `r` the clamped
/// similarity. Targets not found in `corpus` are ignored.
pub fn plan(
    targets: &TargetSet,
    sim: &SimilarityMatrix,
    imp: &ImportanceVector,
    corpus: &Corpus,
) -> TransferPlan {
    let mut groups: BTreeMap<(Domain, u32, u32), Vec<(f64, u64)>> = BTreeMap::new();
    let mut out = TransferPlan::default();
    let mut no_candidate = Vec::new();
    for t in &targets.entries {
        let Some(s) = corpus.sample(t.sample_id) else { continue };
        match best_candidate(s.predicate, sim, imp) {
            Some(q) => groups
                .entry((s.domain(), s.predicate, q))
                .or_default()
                .push((t.dc, t.sample_id)),
            None => no_candidate.push(Skip {
                sample_id: t.sample_id,
                from: s.predicate,
                to: None,
                similarity: None,
                dc: t.dc,
                reason: SkipReason::NoRarerCandidate,
            }),
        }
    }
    for ((_, from, to), mut members) in groups {
        members.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let s = sim.get(from, to);
        let quota = if s <= 0.0 {
            0
        } else {
            // 1e-12 absorbs rounding in r·n so exact products do not round up
            let r = s.min(1.0);
            (libm::ceil(r * members.len() as f64 - 1e-12) as usize).min(members.len())
        };
        for (i, &(dc, id)) in members.iter().enumerate() {
            if i < quota {
                out.moves.push(Move {
                    sample_id: id,
                    from,
                    to,
                    similarity: s,
                    dc,
                });
            } else {
                out.skipped.push(Skip {
                    sample_id: id,
                    from,
                    to: Some(to),
                    similarity: Some(s),
                    dc,
                    reason: if s <= 0.0 {
                        SkipReason::NonPositiveSimilarity
                    } else {
                        SkipReason::RatioCutoff
                    },
                });
            }
        }
    }
    no_candidate.sort_by_key(|s| s.sample_id);
    out.skipped.extend(no_candidate);
    out
}

/// Input minus `removed`, with every move's predicate rewritten.
pub fn apply(corpus: &Corpus, plan: &TransferPlan, removed: &BTreeSet<u64>) -> Result<Corpus> {
    let mut seen = BTreeSet::new();
    for id in plan
        .moves
        .iter()
        .map(|m| m.sample_id)
        .chain(plan.skipped.iter().map(|s| s.sample_id))
    {
        if !seen.insert(id) {
            return Err(DebiasError::DuplicateId(id));
        }
    }
    for &id in removed {
        if corpus.sample(id).is_none() {
            return Err(DebiasError::UnknownSample(id));
        }
    }
    for m in &plan.moves {
        if removed.contains(&m.sample_id) {
            return Err(DebiasError::MoveOnRemoved(m.sample_id));
        }
        if corpus.sample(m.sample_id).is_none() {
            return Err(DebiasError::UnknownSample(m.sample_id));
        }
    }
    let (kept, _) = corpus.retain(|s| !removed.contains(&s.sample_id))?;
    kept.relabel(&plan.move_map())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{frequencies, AnnotationSample, Vocab};
    use crate::risk::TargetEntry;
    use alloc::string::ToString;
    use alloc::vec;

    fn corpus(spec: &[(u32, u32)], q: usize) -> Corpus {
        let samples = spec
            .iter()
            .enumerate()
            .map(|(i, &(d, p))| AnnotationSample {
                sample_id: i as u64,
                image_id: "i".to_string(),
                subject_class: d,
                object_class: 0,
                predicate: p,
            })
            .collect();
        Corpus::new(
            samples,
            Vocab {
                predicates: (0..q).map(|i| alloc::format!("p{i}")).collect(),
                classes: vec!["x".into(), "y".into()],
            },
        )
        .unwrap()
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        linalg::normalize(&mut v);
        v
    }

    #[test]
    fn prototype_of_single_sample() {
        let c = corpus(&[(0, 0), (0, 1), (0, 1)], 2);
        let reps = Matrix::from_rows(&[unit(&[1.0, 2.0]), unit(&[1.0, 0.0]), unit(&[0.0, 1.0])]).unwrap();
        let p = prototypes_from_reps(&c, &reps, None).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(p.rows[0].as_ref().unwrap(), &unit(&[1.0, 2.0])));
        assert!(close(p.rows[1].as_ref().unwrap(), &unit(&[1.0, 1.0])));
    }

    #[test]
    fn antipodal_prototype_is_degenerate() {
        let c = corpus(&[(0, 0), (0, 0)], 1);
        let reps = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(
            prototypes_from_reps(&c, &reps, None),
            Err(DebiasError::DegeneratePrototype(0))
        );
    }

    #[test]
    fn emptied_class_is_an_error() {
        let full = corpus(&[(0, 0), (0, 1)], 2);
        let (kept, _) = full.retain(|s| s.predicate == 0).unwrap();
        let reps = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let before = frequencies(&full);
        assert_eq!(
            prototypes_from_reps(&kept, &reps, Some(&before)),
            Err(DebiasError::EmptyClass(1))
        );
        let p = prototypes_from_reps(&kept, &reps, None).unwrap();
        assert!(!p.present(1));
    }

    #[test]
    fn similarity_basics() {
        let p = Prototypes {
            rows: vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0]), Some(unit(&[1.0, 1.0])), None],
        };
        let s = similarity(&p);
        for q in 0..3 {
            assert_eq!(s.get(q, q), 1.0);
        }
        assert_eq!(s.get(0, 1), 0.0);
        for q in 0..4 {
            for r in 0..4 {
                assert_eq!(s.get(q, r), s.get(r, q));
            }
        }
        assert!(!s.present[3]);
    }

    #[test]
    fn importance_values() {
        let c = corpus(&[(0, 0); 9], 2);
        let mut f = frequencies(&c);
        assert_eq!(importance(&f).0, vec![0.1, 1.0]);
        f.predicate_counts = vec![9, 99];
        let imp = importance(&f);
        assert!((imp.0[0] - 0.1).abs() < 1e-15 && (imp.0[1] - 0.01).abs() < 1e-15);
    }

    fn sim_matrix(values: &[Vec<f64>]) -> SimilarityMatrix {
        SimilarityMatrix {
            values: Matrix::from_rows(values).unwrap(),
            present: vec![true; values.len()],
        }
    }

    fn targets(ids: &[(u64, f64)]) -> TargetSet {
        TargetSet::from_entries(
            ids.iter()
                .map(|&(sample_id, dc)| TargetEntry { sample_id, dc, a_pred: 0.0, a_gt: 1.0 })
                .collect(),
        )
    }

    #[test]
    fn rarest_label_has_no_candidate() {
        let c = corpus(&[(0, 0), (0, 0), (0, 1)], 2);
        let imp = importance(&frequencies(&c));
        let s = sim_matrix(&[vec![1.0, 0.9], vec![0.9, 1.0]]);
        let p = plan(&targets(&[(2, 0.5)]), &s, &imp, &c);
        assert!(p.moves.is_empty());
        assert_eq!(p.skipped[0].reason, SkipReason::NoRarerCandidate);
    }

    #[test]
    fn ratio_selects_highest_dc() {
        let c = corpus(&[(0, 0), (0, 0), (0, 0), (0, 0), (0, 0), (1, 1)], 2);
        let imp = importance(&frequencies(&c));
        let s = sim_matrix(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        let t = targets(&[(0, 0.1), (1, 0.4), (2, 0.3), (3, 0.2)]);
        let p = plan(&t, &s, &imp, &c);
        let moved: Vec<u64> = p.moves.iter().map(|m| m.sample_id).collect();
        assert_eq!(moved, vec![1, 2]);
        assert!(p.skipped.iter().all(|s| s.reason == SkipReason::RatioCutoff));

        let s = sim_matrix(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(plan(&t, &s, &imp, &c).moves.len(), 4);

        let s = sim_matrix(&[vec![1.0, -0.2], vec![-0.2, 1.0]]);
        let p = plan(&t, &s, &imp, &c);
        assert!(p.moves.is_empty());
        assert!(p.skipped.iter().all(|s| s.reason == SkipReason::NonPositiveSimilarity));
    }

    #[test]
    fn exact_ratio_product_does_not_round_up() {
        let spec: Vec<(u32, u32)> = (0..10).map(|_| (0, 0)).chain([(1, 1)]).collect();
        let c = corpus(&spec, 2);
        let imp = importance(&frequencies(&c));
        let s = sim_matrix(&[vec![1.0, 0.7], vec![0.7, 1.0]]);
        let t = targets(&(0..10).map(|i| (i, 1.0 + i as f64)).collect::<Vec<_>>());
        assert_eq!(plan(&t, &s, &imp, &c).moves.len(), 7);
    }

    #[test]
    fn apply_rewrites_and_removes() {
        let c = corpus(&[(0, 0), (0, 0), (1, 1)], 2);
        let empty = apply(&c, &TransferPlan::default(), &BTreeSet::new()).unwrap();
        assert_eq!(empty, c);

        let plan = TransferPlan {
            moves: vec![Move { sample_id: 1, from: 0, to: 1, similarity: 0.9, dc: 0.5 }],
            skipped: vec![],
        };
        let out = apply(&c, &plan, &BTreeSet::new()).unwrap();
        let diffs = c
            .samples()
            .iter()
            .zip(out.samples())
            .filter(|(a, b)| a.predicate != b.predicate)
            .count();
        assert_eq!(diffs, 1);

        let removed: BTreeSet<u64> = [0].into_iter().collect();
        let out = apply(&c, &plan, &removed).unwrap();
        assert_eq!(out.len(), 2);

        let removed: BTreeSet<u64> = [1].into_iter().collect();
        assert_eq!(apply(&c, &plan, &removed), Err(DebiasError::MoveOnRemoved(1)));
    }
}
