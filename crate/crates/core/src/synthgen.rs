//! Seeded synthetic corpora with injected label swaps, a simulated
//! reference classifier and a brute-force target oracle.
//!
//! Every domain hosts a single true predicate (domain `j` hosts `j mod Q`).
//! A confusion pair `(p, p')` swaps in-domain samples of true predicate `p`
//! to the label `p'`; the swapped samples keep the embedding and probability
//! row of `p`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{AnnotationSample, Corpus, Vocab};
use crate::error::{DebiasError, Result};
use crate::linalg::{self, Matrix};
use crate::par;
use crate::representation::BaseEmbeddings;
use crate::risk::{ProbMatrix, TargetEntry, TargetSet};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_predicates: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub num_samples: usize,
    /// Exponent of the `(p + 1)^-α` predicate frequency law.
    pub long_tail_exponent: f64,
    pub bias_rate: f64,
    /// `(source, label)`: samples of true predicate `source` are relabeled
    /// `label`.
    pub confusion_pairs: Vec<(u32, u32)>,
    /// Probability mass the simulated classifier puts on the true predicate.
    pub sharpness: f64,
    pub embed_dim: usize,
    /// Cosine between the cluster centers of the two sides of a pair.
    pub confusion_similarity: f64,
    pub domain_weight: f64,
    pub noise: f64,
    pub triplets_per_image: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_predicates: 8,
            num_classes: 6,
            num_domains: 16,
            num_samples: 2000,
            long_tail_exponent: 1.5,
            bias_rate: 0.2,
            confusion_pairs: alloc::vec![(0, 4), (1, 5), (2, 6), (3, 7)],
            sharpness: 0.9,
            embed_dim: 64,
            confusion_similarity: 0.95,
            domain_weight: 0.25,
            noise: 0.3,
            triplets_per_image: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DebiasError::InvalidConfig(m));
        let q = self.num_predicates;
        if q == 0 || self.num_classes == 0 || self.num_samples == 0 || self.embed_dim == 0 {
            return bad("predicate, class, sample and embedding counts must be positive".into());
        }
        if self.num_domains < q {
            return bad(alloc::format!(
                "{} domains cannot host {q} predicates",
                self.num_domains
            ));
        }
        if self.num_domains > self.num_classes * self.num_classes {
            return bad(alloc::format!(
                "{} domains exceed {} subject-object pairs",
                self.num_domains,
                self.num_classes * self.num_classes
            ));
        }
        if !(0.0..=1.0).contains(&self.bias_rate) {
            return bad("bias_rate must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.sharpness) {
            return bad("sharpness must be in [0, 1]".into());
        }
        if !(-1.0..=1.0).contains(&self.confusion_similarity) {
            return bad("confusion_similarity must be in [-1, 1]".into());
        }
        if !self.long_tail_exponent.is_finite() || self.noise < 0.0 || self.domain_weight < 0.0 {
            return bad("exponent, noise and domain weight must be finite and non-negative".into());
        }
        if self.triplets_per_image == 0 {
            return bad("triplets_per_image must be positive".into());
        }
        if self.confusion_pairs.len() > q * (q - 1) / 2 {
            return bad(alloc::format!(
                "{} confusion pairs exceed Q(Q-1)/2 = {}",
                self.confusion_pairs.len(),
                q * (q - 1) / 2
            ));
        }
        let mut unordered = BTreeSet::new();
        let mut sources = BTreeSet::new();
        for &(p, l) in &self.confusion_pairs {
            if p == l || p as usize >= q || l as usize >= q {
                return bad(alloc::format!("invalid confusion pair ({p}, {l})"));
            }
            if !unordered.insert((p.min(l), p.max(l))) || !sources.insert(p) {
                return bad(alloc::format!("repeated confusion pair or source in ({p}, {l})"));
            }
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab {
            predicates: (0..self.num_predicates).map(|i| alloc::format!("pred{i}")).collect(),
            classes: (0..self.num_classes).map(|i| alloc::format!("obj{i}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticTruth {
    pub biased_ids: BTreeSet<u64>,
    /// True predicate of every sample.
    pub original: BTreeMap<u64, u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub probs: ProbMatrix,
    pub base: BaseEmbeddings,
    pub truth: SyntheticTruth,
}

/// Integer split of `total` proportional to `weights`; leftover units go to
/// the largest fractional parts, lower index first on ties.
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return alloc::vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| libm::floor(*e) as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - libm::floor(exact[a]);
        let fb = exact[b] - libm::floor(exact[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take((total - assigned.min(total)) as usize) {
        out[i] += 1;
    }
    out
}

fn unit_gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    linalg::normalize(&mut v);
    v
}

/// Cluster centers; the label side of each pair sits at the configured
/// cosine from its source.
fn predicate_centers<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = (0..cfg.num_predicates)
        .map(|_| unit_gaussian(cfg.embed_dim, rng))
        .collect();
    let s = cfg.confusion_similarity;
    for &(p, l) in &cfg.confusion_pairs {
        let c = centers[p as usize].clone();
        let mut u = unit_gaussian(cfg.embed_dim, rng);
        let proj = linalg::dot(&u, &c);
        u.iter_mut().zip(&c).for_each(|(x, ci)| *x -= proj * ci);
        linalg::normalize(&mut u);
        let t = libm::sqrt((1.0 - s * s).max(0.0));
        centers[l as usize] = c.iter().zip(&u).map(|(ci, ui)| s * ci + t * ui).collect();
    }
    centers
}

struct Draft {
    domain: usize,
    truth: u32,
    label: u32,
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = rng::substream(cfg.seed, rng::GENERATION);
    let q = cfg.num_predicates;
    let weights: Vec<f64> = (0..q)
        .map(|p| libm::pow(p as f64 + 1.0, -cfg.long_tail_exponent))
        .collect();
    let per_predicate = largest_remainder(cfg.num_samples as u64, &weights);

    // domain sizes
    let mut domain_size = alloc::vec![0u64; cfg.num_domains];
    for (p, &n) in per_predicate.iter().enumerate() {
        let hosts: Vec<usize> = (0..cfg.num_domains).filter(|j| j % q == p).collect();
        for (&j, c) in hosts.iter().zip(largest_remainder(n, &alloc::vec![1.0; hosts.len()])) {
            domain_size[j] = c;
        }
    }

    // swapped count per domain
    let swap_to: BTreeMap<u32, u32> = cfg.confusion_pairs.iter().copied().collect();
    let eligible: Vec<f64> = (0..cfg.num_domains)
        .map(|j| {
            if swap_to.contains_key(&((j % q) as u32)) {
                domain_size[j] as f64
            } else {
                0.0
            }
        })
        .collect();
    let target = libm::round(cfg.bias_rate * cfg.num_samples as f64) as u64;
    let available = eligible.iter().sum::<f64>() as u64;
    if target > available {
        return Err(DebiasError::InvalidConfig(alloc::format!(
            "bias_rate asks for {target} swaps but only {available} samples belong to confusion sources"
        )));
    }
    let swaps = largest_remainder(target, &eligible);

    let mut drafts = Vec::with_capacity(cfg.num_samples);
    for j in 0..cfg.num_domains {
        let truth = (j % q) as u32;
        for k in 0..domain_size[j] {
            let label = if k < swaps[j] { swap_to[&truth] } else { truth };
            drafts.push(Draft { domain: j, truth, label });
        }
    }
    drafts.shuffle(&mut rng);

    let centers = predicate_centers(cfg, &mut rng);
    let domain_dirs: Vec<Vec<f64>> = (0..cfg.num_domains)
        .map(|_| unit_gaussian(cfg.embed_dim, &mut rng))
        .collect();
    let noise_std = cfg.noise / libm::sqrt(cfg.embed_dim as f64);

    let n = drafts.len();
    let mut samples = Vec::with_capacity(n);
    let mut probs = Matrix::zeros(n, q);
    let mut base = Matrix::zeros(n, cfg.embed_dim);
    let mut truth = SyntheticTruth::default();
    for (i, d) in drafts.iter().enumerate() {
        let id = i as u64;
        samples.push(AnnotationSample {
            sample_id: id,
            image_id: alloc::format!("img{:06}", i / cfg.triplets_per_image),
            subject_class: (d.domain / cfg.num_classes) as u32,
            object_class: (d.domain % cfg.num_classes) as u32,
            predicate: d.label,
        });
        truth.original.insert(id, d.truth);
        if d.label != d.truth {
            truth.biased_ids.insert(id);
        }

        let row = probs.row_mut(i);
        if q == 1 {
            row[0] = 1.0;
        } else {
            let rest: Vec<f64> = (0..q - 1).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = rest.iter().sum();
            let mut others = rest.iter();
            for (p, slot) in row.iter_mut().enumerate() {
                let v = if p as u32 == d.truth {
                    cfg.sharpness
                } else {
                    (1.0 - cfg.sharpness) * others.next().expect("q-1 entries") / total
                };
                // stored as f32 so tensor files round-trip exactly
                *slot = f64::from(v as f32);
            }
        }

        let h = base.row_mut(i);
        for (e, slot) in h.iter_mut().enumerate() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let v = centers[d.truth as usize][e] + cfg.domain_weight * domain_dirs[d.domain][e] + noise_std * eps;
            *slot = f64::from(v as f32);
        }
    }

    Ok(SyntheticData {
        corpus: Corpus::new(samples, cfg.vocab())?,
        probs: ProbMatrix::new(probs, "synthetic")?,
        base: BaseEmbeddings::new(base)?,
        truth,
    })
}

/// Targets by direct per-sample loops over the whole corpus, independent of
/// the risk module. Quadratic in the worst case; meant for corpora up to a
/// few thousand samples.
pub fn oracle_targets(corpus: &Corpus, probs: &ProbMatrix) -> Result<TargetSet> {
    probs.check_against(corpus)?;
    let samples = corpus.samples();
    let q = corpus.num_predicates();

    let mut label_count = alloc::vec![0u64; q];
    for s in samples {
        label_count[s.predicate as usize] += 1;
    }

    // (domain risks, label counts in domain), filled per domain on first use
    let mut cache: BTreeMap<(u32, u32), (Vec<f64>, Vec<u64>)> = BTreeMap::new();
    for s in samples {
        let key = (s.subject_class, s.object_class);
        if cache.contains_key(&key) {
            continue;
        }
        let mut raw = alloc::vec![0.0f64; q];
        let mut counts = alloc::vec![0u64; q];
        for (row, other) in samples.iter().enumerate() {
            if (other.subject_class, other.object_class) == key {
                for (acc, v) in raw.iter_mut().zip(probs.row(row)) {
                    *acc += v;
                }
                counts[other.predicate as usize] += 1;
            }
        }
        let top = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = raw.iter().map(|r| libm::exp(r - top)).collect();
        let z: f64 = exps.iter().sum();
        cache.insert(key, (exps.iter().map(|e| e / z).collect(), counts));
    }

    let flagged = par::map_indexed(samples.len(), |row| {
        let s = &samples[row];
        let (risk, counts) = &cache[&(s.subject_class, s.object_class)];
        let probs_row = probs.row(row);
        let mut pred = 0usize;
        for p in 1..q {
            if probs_row[p] > probs_row[pred] {
                pred = p;
            }
        }
        let gt = s.predicate as usize;
        let dc = risk[pred] - risk[gt];
        let a = |p: usize| 1.0 / ((1.0 + label_count[p] as f64) * (1.0 + counts[p] as f64));
        let (a_pred, a_gt) = (a(pred), a(gt));
        (dc > 0.0 && a_pred < a_gt).then_some(TargetEntry {
            sample_id: s.sample_id,
            dc,
            a_pred,
            a_gt,
        })
    });
    Ok(TargetSet::from_entries(flagged.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_samples: 500,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(10, &[1.0, 1.0, 1.0]), alloc::vec![4, 3, 3]);
        assert_eq!(largest_remainder(7, &[0.0, 2.0, 1.0]).iter().sum::<u64>(), 7);
        assert_eq!(largest_remainder(5, &[0.0, 0.0]), alloc::vec![0, 0]);
    }

    #[test]
    fn exact_bias_count() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.truth.biased_ids.len(), 100);
        assert_eq!(d.corpus.len(), 500);
        for id in &d.truth.biased_ids {
            let s = d.corpus.sample(*id).unwrap();
            assert_ne!(s.predicate, d.truth.original[id]);
        }
    }

    #[test]
    fn zero_bias() {
        let d = generate(&SynthConfig { bias_rate: 0.0, ..small() }).unwrap();
        assert!(d.truth.biased_ids.is_empty());
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(generate(&small()).unwrap().base, other.base);
    }

    #[test]
    fn too_many_pairs() {
        let cfg = SynthConfig {
            num_predicates: 2,
            num_domains: 2,
            confusion_pairs: alloc::vec![(0, 1), (1, 0)],
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn probability_rows() {
        let d = generate(&small()).unwrap();
        for r in 0..d.corpus.len() {
            let row = d.probs.row(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let t = d.truth.original[&(r as u64)];
            assert_eq!(row[t as usize], f64::from(0.9f32));
        }
    }

    #[test]
    fn oracle_degenerate_cases() {
        let d = generate(&small()).unwrap();
        let (one, rows) = d.corpus.retain(|s| s.sample_id == 0).unwrap();
        assert!(oracle_targets(&one, &d.probs.select_rows(&rows)).unwrap().is_empty());

        let uniform = Matrix::from_vec(500, 8, alloc::vec![0.125; 4000]).unwrap();
        let p = ProbMatrix::new(uniform, "u").unwrap();
        assert!(oracle_targets(&d.corpus, &p).unwrap().is_empty());
    }
}
