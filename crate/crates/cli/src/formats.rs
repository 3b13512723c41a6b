//! JSON and JSONL record formats for corpora, stage exports and truth files.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use debias_core::filtration::{FiltrationResult, VarianceProfile};
use debias_core::metrics::{PredictionList, ScoredTriplet, Triplet};
use debias_core::risk::{TargetEntry, TargetSet};
use debias_core::synthgen::SyntheticTruth;
use debias_core::transfer::TransferPlan;
use debias_core::{AnnotationSample, Corpus, Vocab};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: u64,
    pub image: String,
    pub sub: u32,
    pub obj: u32,
    pub pred: u32,
}

impl From<&AnnotationSample> for SampleRecord {
    fn from(s: &AnnotationSample) -> Self {
        Self {
            id: s.sample_id,
            image: s.image_id.clone(),
            sub: s.subject_class,
            obj: s.object_class,
            pred: s.predicate,
        }
    }
}

impl From<SampleRecord> for AnnotationSample {
    fn from(r: SampleRecord) -> Self {
        Self {
            sample_id: r.id,
            image_id: r.image,
            subject_class: r.sub,
            object_class: r.obj,
            predicate: r.pred,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabRecord {
    predicates: Vec<String>,
    classes: Vec<String>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Records of a JSONL file with their 1-based line numbers; blank lines are
/// skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).with_context(|| format!("{}: line {}: malformed record", path.display(), i + 1))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let v: VocabRecord = read_json(path)?;
    Ok(Vocab {
        predicates: v.predicates,
        classes: v.classes,
    })
}

pub fn save_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    write_json(
        path,
        &VocabRecord {
            predicates: vocab.predicates.clone(),
            classes: vocab.classes.clone(),
        },
    )
}

/// Loads and validates a corpus, failing on the first bad line.
pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<Corpus> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (line, rec) in read_jsonl::<SampleRecord>(path)? {
        let s = AnnotationSample::from(rec);
        s.validate(vocab)
            .with_context(|| format!("{}: line {line}", path.display()))?;
        if !seen.insert(s.sample_id) {
            bail!("{}: line {line}: duplicate sample id {}", path.display(), s.sample_id);
        }
        samples.push(s);
    }
    Corpus::new(samples, vocab.clone()).with_context(|| format!("loading {}", path.display()))
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_jsonl(path, corpus.samples().iter().map(SampleRecord::from))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TargetRecord {
    pub id: u64,
    pub dc: f64,
    pub a_pred: f64,
    pub a_gt: f64,
}

pub fn save_targets(path: &Path, targets: &TargetSet) -> Result<()> {
    write_jsonl(
        path,
        targets.entries.iter().map(|e| TargetRecord {
            id: e.sample_id,
            dc: e.dc,
            a_pred: e.a_pred,
            a_gt: e.a_gt,
        }),
    )
}

pub fn load_targets(path: &Path) -> Result<TargetSet> {
    let entries = read_jsonl::<TargetRecord>(path)?
        .into_iter()
        .map(|(_, r)| TargetEntry {
            sample_id: r.id,
            dc: r.dc,
            a_pred: r.a_pred,
            a_gt: r.a_gt,
        })
        .collect();
    Ok(TargetSet::from_entries(entries))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FiltrationRecord {
    pub id: u64,
    pub v: f64,
    pub v_aver: f64,
    pub loss: f64,
    pub removed: bool,
}

/// One line per flagged sample, ascending id.
pub fn save_filtration(path: &Path, profile: &VarianceProfile, result: &FiltrationResult) -> Result<()> {
    let removed: BTreeSet<u64> = result.removed.iter().copied().collect();
    write_jsonl(
        path,
        result.flagged.iter().map(|id| {
            let v = &profile.per_sample[id];
            FiltrationRecord {
                id: *id,
                v: v.variance,
                v_aver: profile.per_predicate_avg[v.predicate as usize],
                loss: v.final_loss,
                removed: removed.contains(id),
            }
        }),
    )
}

/// Removed sample ids in file order.
pub fn load_removed(path: &Path) -> Result<Vec<u64>> {
    Ok(read_jsonl::<FiltrationRecord>(path)?
        .into_iter()
        .filter(|(_, r)| r.removed)
        .map(|(_, r)| r.id)
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AuditRecord {
    pub id: u64,
    pub from: u32,
    pub to: Option<u32>,
    pub sim: Option<f64>,
    pub dc: Option<f64>,
    pub action: String,
    pub reason: Option<String>,
}

/// Moves, then skips, then removed samples (reason `"removed"`).
pub fn save_audit(path: &Path, plan: &TransferPlan, removed: &[(u64, u32)]) -> Result<()> {
    let moves = plan.moves.iter().map(|m| AuditRecord {
        id: m.sample_id,
        from: m.from,
        to: Some(m.to),
        sim: Some(m.similarity),
        dc: Some(m.dc),
        action: "move".into(),
        reason: None,
    });
    let skips = plan.skipped.iter().map(|s| AuditRecord {
        id: s.sample_id,
        from: s.from,
        to: s.to,
        sim: s.similarity,
        dc: Some(s.dc),
        action: "skip".into(),
        reason: Some(s.reason.as_str().into()),
    });
    let gone = removed.iter().map(|&(id, from)| AuditRecord {
        id,
        from,
        to: None,
        sim: None,
        dc: None,
        action: "skip".into(),
        reason: Some("removed".into()),
    });
    write_jsonl(path, moves.chain(skips).chain(gone))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRecord {
    image: String,
    triplets: Vec<(u32, u32, u32, f64)>,
}

pub fn load_predictions(path: &Path) -> Result<PredictionList> {
    let mut list = PredictionList::new();
    for (line, rec) in read_jsonl::<PredictionRecord>(path)? {
        let scored = rec
            .triplets
            .into_iter()
            .map(|(subject, predicate, object, score)| ScoredTriplet {
                triplet: Triplet { subject, predicate, object },
                score,
            })
            .collect();
        if list.get(&rec.image).is_some() {
            bail!("{}: line {line}: image {:?} listed twice", path.display(), rec.image);
        }
        list.insert(rec.image, scored)
            .with_context(|| format!("{}: line {line}", path.display()))?;
    }
    Ok(list)
}

pub fn save_predictions(path: &Path, list: &PredictionList) -> Result<()> {
    write_jsonl(
        path,
        list.images().map(|(image, ts)| PredictionRecord {
            image: image.clone(),
            triplets: ts
                .iter()
                .map(|t| (t.triplet.subject, t.triplet.predicate, t.triplet.object, t.score))
                .collect(),
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthRecord {
    biased_ids: Vec<u64>,
    original: BTreeMap<String, u32>,
}

pub fn save_truth(path: &Path, truth: &SyntheticTruth) -> Result<()> {
    write_json(
        path,
        &TruthRecord {
            biased_ids: truth.biased_ids.iter().copied().collect(),
            original: truth.original.iter().map(|(id, p)| (id.to_string(), *p)).collect(),
        },
    )
}

pub fn load_truth(path: &Path) -> Result<SyntheticTruth> {
    let t: TruthRecord = read_json(path)?;
    let mut original = BTreeMap::new();
    for (k, v) in t.original {
        let id: u64 = k.parse().with_context(|| format!("{}: bad sample id {k:?}", path.display()))?;
        original.insert(id, v);
    }
    Ok(SyntheticTruth {
        biased_ids: t.biased_ids.into_iter().collect(),
        original,
    })
}
