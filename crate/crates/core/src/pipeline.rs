//! The full in-memory chain: targets, representation training, filtration
//! and transfer.

use alloc::collections::BTreeSet;

use crate::config::Hyperparameters;
use crate::dataset::{frequencies, Corpus, FreqTable};
use crate::error::Result;
use crate::filtration::{filtrate, FiltrationResult, VarianceProfile};
use crate::representation::{train, train_from, BaseEmbeddings, TrainOutput};
use crate::risk::{compute_risk_table, identify_targets, ProbMatrix, RiskTable, TargetSet};
use crate::transfer::{self, ImportanceVector, SimilarityMatrix, TransferPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub freq: FreqTable,
    pub risk: RiskTable,
    pub targets: TargetSet,
    pub training: TrainOutput,
    pub profile: VarianceProfile,
    pub filtration: FiltrationResult,
    pub similarity: SimilarityMatrix,
    pub importance: ImportanceVector,
    pub plan: TransferPlan,
    pub corpus: Corpus,
}

pub fn run(
    corpus: &Corpus,
    probs: &ProbMatrix,
    base: &BaseEmbeddings,
    hp: &Hyperparameters,
) -> Result<PipelineOutput> {
    hp.validate()?;
    probs.check_against(corpus)?;
    let freq = frequencies(corpus);
    let risk = compute_risk_table(corpus, probs)?;
    let targets = identify_targets(corpus, &risk, probs, &freq)?;
    let training = train(corpus, base, &risk, hp)?;
    let (profile, filtration) = filtrate(corpus, &training.traces, hp.window, hp.mu, hp.top_d, hp.floor)?;
    let removed: BTreeSet<u64> = filtration.removed.iter().copied().collect();
    let (kept, rows) = corpus.retain(|s| !removed.contains(&s.sample_id))?;
    let kept_base = base.select_rows(&rows);

    let mut model = training.model.clone();
    if hp.retrain_rounds > 0 {
        let kept_risk = compute_risk_table(&kept, &probs.select_rows(&rows))?;
        for _ in 0..hp.retrain_rounds {
            model = train_from(&kept, &kept_base, &kept_risk, hp, model)?.model;
        }
    }

    let protos = transfer::prototypes(&model, &kept_base, &kept, Some(&freq))?;
    let similarity = transfer::similarity(&protos);
    let importance = transfer::importance(&frequencies(&kept));
    let plan = transfer::plan(&targets, &similarity, &importance, &kept);
    let out = transfer::apply(corpus, &plan, &removed)?;
    Ok(PipelineOutput {
        freq,
        risk,
        targets,
        training,
        profile,
        filtration,
        similarity,
        importance,
        plan,
        corpus: out,
    })
}
