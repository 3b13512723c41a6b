use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::config::Hyperparameters;
use crate::dataset::Corpus;
use crate::error::{DebiasError, Result};
use crate::linalg::Matrix;
use crate::risk::RiskTable;
use crate::rng;

use super::loss::{evaluate, ContrastiveParams, DomainBatch, NegativeWeights};
use super::{phi_table, BaseEmbeddings, ProjectionModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: ProjectionModel,
    /// `|samples| × epochs` per-anchor losses; NaN where the sample had no
    /// positive in its domain.
    pub traces: Matrix,
    /// Sum of batch totals per epoch, each evaluated before its update.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent (optionally with momentum), one batch per
/// domain, domains visited in a seeded shuffled order each epoch.
pub fn train(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    risk: &RiskTable,
    hp: &Hyperparameters,
) -> Result<TrainOutput> {
    hp.validate()?;
    let mut init_rng = rng::substream(hp.seed, rng::INIT);
    let model = ProjectionModel::init(base.dim(), hp.rep_dim, &mut init_rng);
    train_from(corpus, base, risk, hp, model)
}

/// As [`train`], starting from the given parameters.
pub fn train_from(
    corpus: &Corpus,
    base: &BaseEmbeddings,
    risk: &RiskTable,
    hp: &Hyperparameters,
    mut model: ProjectionModel,
) -> Result<TrainOutput> {
    let phi = phi_table(risk);
    let weights = NegativeWeights::Risk(&phi);
    let params = ContrastiveParams::from(hp);
    let mut shuffle_rng = rng::substream(hp.seed, rng::SHUFFLE);
    let mut batches: Vec<DomainBatch> = DomainBatch::all(corpus)
        .into_iter()
        .filter(|b| b.rows.len() >= 2)
        .collect();

    let mut traces = Matrix::from_vec(
        corpus.len(),
        hp.epochs,
        alloc::vec![f64::NAN; corpus.len() * hp.epochs],
    )?;
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut params_flat = model.params();
    let mut velocity = alloc::vec![0.0; params_flat.len()];

    for epoch in 0..hp.epochs {
        batches.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        for batch in &batches {
            let (report, grad) = evaluate(
                corpus,
                base,
                core::slice::from_ref(batch),
                &model,
                weights,
                &params,
                true,
            )?;
            if !report.total.is_finite() {
                return Err(DebiasError::Divergence { epoch });
            }
            epoch_total += report.total;
            for a in &report.per_anchor {
                let row = corpus.row_of(a.sample_id).expect("anchor from corpus");
                traces.set(row, epoch, a.loss);
            }
            let g = grad.expect("requested").flat();
            for ((p, v), gi) in params_flat.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                *v = hp.momentum * *v + gi;
                *p -= hp.learning_rate * *v;
            }
            model.set_params(&params_flat);
        }
        if !epoch_total.is_finite() || !params_flat.iter().all(|p| p.is_finite()) {
            return Err(DebiasError::Divergence { epoch });
        }
        epoch_losses.push(epoch_total);
    }
    Ok(TrainOutput {
        model,
        traces,
        epoch_losses,
    })
}
