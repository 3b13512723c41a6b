use debias_core::pipeline;
use debias_core::synthgen::{generate, SynthConfig};
use debias_core::Hyperparameters;

fn benchmark(seed: u64) -> SynthConfig {
    SynthConfig {
        num_samples: 2000,
        long_tail_exponent: 0.5,
        bias_rate: 0.2,
        sharpness: 0.9,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn swapped_labels_are_recovered() {
    let data = generate(&benchmark(0)).unwrap();
    let hp = Hyperparameters { floor: 5, ..Hyperparameters::default() };
    let out = pipeline::run(&data.corpus, &data.probs, &data.base, &hp).unwrap();
    let mut recovered = 0;
    let mut mislabeled = 0;
    let clean = data.corpus.len() - data.truth.biased_ids.len();
    for (id, &orig) in &data.truth.original {
        let now = out.corpus.sample(*id).map(|s| s.predicate);
        if data.truth.biased_ids.contains(id) {
            recovered += usize::from(now == Some(orig));
        } else {
            mislabeled += usize::from(now.is_some_and(|p| p != orig));
        }
    }
    let r = recovered as f64 / data.truth.biased_ids.len() as f64;
    let m = mislabeled as f64 / clean as f64;
    eprintln!("targets {} flagged {} removed {} moves {} recovered {r} mislabeled {m}",
        out.targets.len(), out.filtration.flagged.len(), out.filtration.removed.len(), out.plan.moves.len());
    eprintln!("epoch losses {:?}", out.training.epoch_losses);
    assert!(r >= 0.8 && m <= 0.1);
}
