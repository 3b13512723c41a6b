//! Annotation corpora, domains and frequency statistics.
//!
//! A [`Corpus`] keeps its samples sorted by `sample_id`; every row-aligned
//! matrix in the crate (probabilities, embeddings, loss traces) uses that
//! order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{DebiasError, Result};

/// An ordered subject/object class pair. `(person, road)` and
/// `(road, person)` are different domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Domain {
    pub subject_class: u32,
    pub object_class: u32,
}

impl Domain {
    pub fn new(subject_class: u32, object_class: u32) -> Self {
        Self {
            subject_class,
            object_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSample {
    pub sample_id: u64,
    pub image_id: String,
    pub subject_class: u32,
    pub object_class: u32,
    pub predicate: u32,
}

impl AnnotationSample {
    pub fn domain(&self) -> Domain {
        Domain::new(self.subject_class, self.object_class)
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let classes = vocab.classes.len();
        let check = |field, value: u32, limit: usize| {
            if (value as usize) < limit {
                Ok(())
            } else {
                Err(DebiasError::OutOfRange {
                    id: self.sample_id,
                    field,
                    value,
                    limit,
                })
            }
        };
        check("predicate", self.predicate, vocab.predicates.len())?;
        check("subject", self.subject_class, classes)?;
        check("object", self.object_class, classes)
    }

    /// The sample rendered as a sentence; see [`triplet_to_sentence`].
    pub fn sentence(&self, vocab: &Vocab) -> Result<String> {
        triplet_to_sentence(self, vocab)
    }
}

/// Predicate phrases and object class names. Subjects and objects share one
/// class vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    pub predicates: Vec<String>,
    pub classes: Vec<String>,
}

impl Vocab {
    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn predicate(&self, id: u32) -> Result<&str> {
        self.predicates
            .get(id as usize)
            .map(String::as_str)
            .ok_or(DebiasError::MissingVocab {
                kind: "predicate",
                id,
            })
    }

    pub fn class(&self, id: u32) -> Result<&str> {
        self.classes
            .get(id as usize)
            .map(String::as_str)
            .ok_or(DebiasError::MissingVocab { kind: "class", id })
    }
}

/// `"The {subject} is {predicate} the {object}."` with lowercased names.
pub fn triplet_to_sentence(sample: &AnnotationSample, vocab: &Vocab) -> Result<String> {
    let subject = vocab.class(sample.subject_class)?.to_lowercase();
    let predicate = vocab.predicate(sample.predicate)?.to_lowercase();
    let object = vocab.class(sample.object_class)?.to_lowercase();
    Ok(format!("The {subject} is {predicate} the {object}."))
}

/// Immutable, validated annotation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    samples: Vec<AnnotationSample>,
    vocab: Vocab,
    domain_index: BTreeMap<Domain, Vec<usize>>,
    row_of: BTreeMap<u64, usize>,
}

impl Corpus {
    /// Validates ids against `vocab`, sorts by `sample_id` and builds the
    /// domain index.
    pub fn new(mut samples: Vec<AnnotationSample>, vocab: Vocab) -> Result<Self> {
        if samples.is_empty() {
            return Err(DebiasError::EmptyCorpus);
        }
        for s in &samples {
            s.validate(&vocab)?;
        }
        samples.sort_by_key(|s| s.sample_id);
        let mut row_of = BTreeMap::new();
        let mut domain_index: BTreeMap<Domain, Vec<usize>> = BTreeMap::new();
        for (row, s) in samples.iter().enumerate() {
            if row_of.insert(s.sample_id, row).is_some() {
                return Err(DebiasError::DuplicateId(s.sample_id));
            }
            domain_index.entry(s.domain()).or_default().push(row);
        }
        Ok(Self {
            samples,
            vocab,
            domain_index,
            row_of,
        })
    }

    pub fn samples(&self) -> &[AnnotationSample] {
        &self.samples
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_predicates(&self) -> usize {
        self.vocab.num_predicates()
    }

    /// Domain → rows (ascending, hence ascending `sample_id`).
    pub fn domain_index(&self) -> &BTreeMap<Domain, Vec<usize>> {
        &self.domain_index
    }

    pub fn row_of(&self, sample_id: u64) -> Option<usize> {
        self.row_of.get(&sample_id).copied()
    }

    pub fn sample(&self, sample_id: u64) -> Option<&AnnotationSample> {
        self.row_of(sample_id).map(|r| &self.samples[r])
    }

    /// Sample ids of one domain bucket.
    pub fn domain_sample_ids(&self, domain: &Domain) -> Vec<u64> {
        self.domain_index
            .get(domain)
            .map(|rows| rows.iter().map(|&r| self.samples[r].sample_id).collect())
            .unwrap_or_default()
    }

    pub fn sentences(&self) -> Result<Vec<String>> {
        self.samples
            .iter()
            .map(|s| triplet_to_sentence(s, &self.vocab))
            .collect()
    }

    /// Sub-corpus of the samples accepted by `keep`, with the source rows
    /// of the retained samples (for slicing row-aligned matrices).
    pub fn retain<F>(&self, mut keep: F) -> Result<(Corpus, Vec<usize>)>
    where
        F: FnMut(&AnnotationSample) -> bool,
    {
        let mut rows = Vec::new();
        let mut samples = Vec::new();
        for (row, s) in self.samples.iter().enumerate() {
            if keep(s) {
                rows.push(row);
                samples.push(s.clone());
            }
        }
        Ok((Corpus::new(samples, self.vocab.clone())?, rows))
    }

    /// Copy of the corpus with the given predicate rewrites applied.
    pub fn relabel(&self, moves: &BTreeMap<u64, u32>) -> Result<Corpus> {
        let mut samples = self.samples.clone();
        for (&id, &pred) in moves {
            let row = self.row_of(id).ok_or(DebiasError::UnknownSample(id))?;
            samples[row].predicate = pred;
        }
        Corpus::new(samples, self.vocab.clone())
    }
}

/// Exact label counts per predicate and per (domain, predicate).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreqTable {
    pub predicate_counts: Vec<u64>,
    pub pair_counts: BTreeMap<(Domain, u32), u64>,
}

impl FreqTable {
    pub fn predicate_count(&self, p: u32) -> u64 {
        self.predicate_counts.get(p as usize).copied().unwrap_or(0)
    }

    pub fn pair_count(&self, domain: Domain, p: u32) -> u64 {
        self.pair_counts.get(&(domain, p)).copied().unwrap_or(0)
    }
}

pub fn frequencies(corpus: &Corpus) -> FreqTable {
    let mut predicate_counts = alloc::vec![0u64; corpus.num_predicates()];
    let mut pair_counts = BTreeMap::new();
    for s in corpus.samples() {
        predicate_counts[s.predicate as usize] += 1;
        *pair_counts.entry((s.domain(), s.predicate)).or_insert(0) += 1;
    }
    FreqTable {
        predicate_counts,
        pair_counts,
    }
}
