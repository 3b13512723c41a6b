//! The file-to-file stages. Every stage reads its inputs from disk and writes
//! its outputs plus `manifest.<stage>.json` into the output directory, so
//! `pipeline` is exactly the stages run one after another.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use debias_core::dataset::frequencies;
use debias_core::filtration::filtrate;
use debias_core::metrics::{self, GroundTruth, PRInputs, PredictionList};
use debias_core::representation::{embed_base, train, train_from, EmbeddingSource, ProviderSpec};
use debias_core::risk::{compute_risk_table, identify_targets};
use debias_core::{synthgen, transfer, BaseEmbeddings, Corpus, ProbMatrix, ProjectionModel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::PipelineConfig;
use crate::formats::{self, read_json, write_json};
use crate::manifest::Manifest;
use crate::tensor::{self, Tensor};

pub const STAGES: &[&str] = &["synth", "infer-targets", "train", "filter", "transfer", "evaluate", "pipeline"];

pub const CORPUS: &str = "corpus.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const PROBS: &str = "probs.ptns";
pub const EMBEDDINGS: &str = "embeddings.ptns";
pub const TRUTH: &str = "truth.json";
pub const TARGETS: &str = "targets.jsonl";
pub const MODEL_W: &str = "model_W.ptns";
pub const MODEL_B: &str = "model_b.ptns";
pub const MODEL_META: &str = "model.json";
pub const TRACES: &str = "traces.ptns";
pub const FILTRATION: &str = "filtration.jsonl";
pub const TRANSFERRED: &str = "corpus_transferred.jsonl";
pub const AUDIT: &str = "audit.jsonl";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub embed_dim: usize,
    pub rep_dim: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Resolved configuration plus path helpers.
pub struct Runner {
    pub cfg: PipelineConfig,
    pub config_hash: String,
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("missing input {what}: {}", path.display());
    }
    Ok(())
}

impl Runner {
    pub fn new(cfg: PipelineConfig) -> Self {
        let config_hash = cfg.hash();
        Self { cfg, config_hash }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn corpus_path(&self) -> PathBuf {
        self.cfg.corpus.clone().unwrap_or_else(|| self.out(CORPUS))
    }

    fn vocab_path(&self) -> PathBuf {
        self.cfg.vocab.clone().unwrap_or_else(|| self.out(VOCAB))
    }

    fn probs_path(&self) -> PathBuf {
        self.cfg.probs.clone().unwrap_or_else(|| self.out(PROBS))
    }

    fn truth_path(&self) -> PathBuf {
        self.cfg.truth.clone().unwrap_or_else(|| self.out(TRUTH))
    }

    fn provider(&self) -> Result<ProviderSpec> {
        match &self.cfg.embeddings {
            None => Ok(ProviderSpec::File(self.out(EMBEDDINGS).display().to_string())),
            Some(s) => Ok(ProviderSpec::parse(s)?),
        }
    }

    fn ensure_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.cfg.out_dir)
            .with_context(|| format!("creating output directory {}", self.cfg.out_dir.display()))
    }

    /// Corpus and vocab inputs, with their manifest entries.
    fn load_corpus(&self, inputs: &mut Vec<(&'static str, PathBuf)>) -> Result<Corpus> {
        let (cp, vp) = (self.corpus_path(), self.vocab_path());
        require(&cp, "corpus")?;
        require(&vp, "vocab")?;
        let vocab = formats::load_vocab(&vp)?;
        let corpus = formats::load_corpus(&cp, &vocab)?;
        inputs.push(("corpus", cp));
        inputs.push(("vocab", vp));
        Ok(corpus)
    }

    fn load_probs(&self, corpus: &Corpus, inputs: &mut Vec<(&'static str, PathBuf)>) -> Result<ProbMatrix> {
        let p = self.probs_path();
        require(&p, "probs")?;
        let m = tensor::read_matrix(&p)?;
        let probs = ProbMatrix::new(m, p.display().to_string()).with_context(|| format!("in {}", p.display()))?;
        probs.check_against(corpus).with_context(|| format!("{} does not match the corpus", p.display()))?;
        inputs.push(("probs", p));
        Ok(probs)
    }

    fn load_base(&self, corpus: &Corpus, inputs: &mut Vec<(&'static str, PathBuf)>) -> Result<BaseEmbeddings> {
        let source = match self.provider()? {
            ProviderSpec::File(f) => {
                let p = PathBuf::from(f);
                require(&p, "embeddings")?;
                let m = tensor::read_matrix(&p)?;
                inputs.push(("embeddings", p));
                EmbeddingSource::Precomputed(m)
            }
            ProviderSpec::Hash => EmbeddingSource::Hash { dim: self.cfg.hash_dim, seed: self.cfg.hp.seed },
        };
        Ok(embed_base(corpus, &source)?)
    }

    fn load_model(&self, base: &BaseEmbeddings, inputs: &mut Vec<(&'static str, PathBuf)>) -> Result<ProjectionModel> {
        let (wp, bp, mp) = (self.out(MODEL_W), self.out(MODEL_B), self.out(MODEL_META));
        for (p, what) in [(&wp, "model weights"), (&bp, "model bias"), (&mp, "model sidecar")] {
            require(p, what)?;
        }
        let meta: ModelMeta = read_json(&mp)?;
        let weight = tensor::read_matrix(&wp)?;
        let bias = tensor::read(&bp)?.to_vector().with_context(|| format!("in {}", bp.display()))?;
        let model = ProjectionModel::new(weight, bias)?;
        ensure!(
            model.embed_dim() == meta.embed_dim && model.rep_dim() == meta.rep_dim,
            "model tensors ({}x{}) disagree with {} ({}x{})",
            model.embed_dim(),
            model.rep_dim(),
            mp.display(),
            meta.embed_dim,
            meta.rep_dim
        );
        model.check_input(base)?;
        inputs.push(("model_W", wp));
        inputs.push(("model_b", bp));
        inputs.push(("model_meta", mp));
        Ok(model)
    }

    fn finish(&self, stage: &str, inputs: &[(&'static str, PathBuf)], outputs: &[(&'static str, PathBuf)]) -> Result<Manifest> {
        let ins: Vec<(&str, &Path)> = inputs.iter().map(|(r, p)| (*r, p.as_path())).collect();
        let outs: Vec<(&str, &Path)> = outputs.iter().map(|(r, p)| (*r, p.as_path())).collect();
        let m = Manifest::build(stage, &self.config_hash, &ins, &outs)?;
        m.write(&self.cfg.out_dir)?;
        Ok(m)
    }

    pub fn synth(&self) -> Result<Manifest> {
        self.ensure_out_dir()?;
        let mut sc = self.cfg.synth.clone();
        sc.seed = self.cfg.hp.seed;
        let data = synthgen::generate(&sc)?;
        let outputs = vec![
            ("corpus", self.out(CORPUS)),
            ("vocab", self.out(VOCAB)),
            ("probs", self.out(PROBS)),
            ("embeddings", self.out(EMBEDDINGS)),
            ("truth", self.out(TRUTH)),
        ];
        formats::save_corpus(&outputs[0].1, &data.corpus)?;
        formats::save_vocab(&outputs[1].1, data.corpus.vocab())?;
        tensor::write_matrix(&outputs[2].1, &data.probs.rows)?;
        tensor::write_matrix(&outputs[3].1, &data.base.0)?;
        formats::save_truth(&outputs[4].1, &data.truth)?;
        self.finish("synth", &[], &outputs)
    }

    pub fn infer_targets(&self) -> Result<Manifest> {
        self.ensure_out_dir()?;
        let mut inputs = Vec::new();
        let corpus = self.load_corpus(&mut inputs)?;
        let probs = self.load_probs(&corpus, &mut inputs)?;
        let risk = compute_risk_table(&corpus, &probs)?;
        let targets = identify_targets(&corpus, &risk, &probs, &frequencies(&corpus))?;
        let out = self.out(TARGETS);
        formats::save_targets(&out, &targets)?;
        self.finish("infer-targets", &inputs, &[("targets", out)])
    }

    pub fn train(&self) -> Result<Manifest> {
        self.ensure_out_dir()?;
        let mut inputs = Vec::new();
        let corpus = self.load_corpus(&mut inputs)?;
        let probs = self.load_probs(&corpus, &mut inputs)?;
        let base = self.load_base(&corpus, &mut inputs)?;
        let risk = compute_risk_table(&corpus, &probs)?;
        let trained = train(&corpus, &base, &risk, &self.cfg.hp)?;
        let model = &trained.model;
        let outputs = vec![
            ("model_W", self.out(MODEL_W)),
            ("model_b", self.out(MODEL_B)),
            ("model_meta", self.out(MODEL_META)),
            ("traces", self.out(TRACES)),
        ];
        tensor::write_matrix(&outputs[0].1, &model.weight)?;
        tensor::write(&outputs[1].1, &Tensor::from_vector(&model.bias))?;
        write_json(
            &outputs[2].1,
            &ModelMeta {
                embed_dim: model.embed_dim(),
                rep_dim: model.rep_dim(),
                seed: self.cfg.hp.seed,
                config_hash: self.config_hash.clone(),
            },
        )?;
        tensor::write_matrix(&outputs[3].1, &trained.traces)?;
        self.finish("train", &inputs, &outputs)
    }

    pub fn filter(&self) -> Result<Manifest> {
        self.ensure_out_dir()?;
        let mut inputs = Vec::new();
        let corpus = self.load_corpus(&mut inputs)?;
        let tp = self.out(TRACES);
        require(&tp, "loss traces")?;
        let traces = tensor::read_matrix(&tp)?;
        inputs.push(("traces", tp));
        let hp = &self.cfg.hp;
        let top_d = if self.cfg.filter { hp.top_d } else { 0.0 };
        let (profile, result) = filtrate(&corpus, &traces, hp.window, hp.mu, top_d, hp.floor)?;
        let out = self.out(FILTRATION);
        formats::save_filtration(&out, &profile, &result)?;
        self.finish("filter", &inputs, &[("filtration", out)])
    }

    pub fn transfer(&self) -> Result<Manifest> {
        self.ensure_out_dir()?;
        let mut inputs = Vec::new();
        let corpus = self.load_corpus(&mut inputs)?;
        let base = self.load_base(&corpus, &mut inputs)?;
        let mut model = self.load_model(&base, &mut inputs)?;
        let (tp, fp) = (self.out(TARGETS), self.out(FILTRATION));
        require(&tp, "targets")?;
        require(&fp, "filtration result")?;
        let targets = formats::load_targets(&tp)?;
        let removed: BTreeSet<u64> = formats::load_removed(&fp)?.into_iter().collect();
        inputs.push(("targets", tp));
        inputs.push(("filtration", fp));
        for id in &removed {
            ensure!(corpus.sample(*id).is_some(), "filtration result removes unknown sample {id}");
        }

        let freq = frequencies(&corpus);
        let (kept, rows) = corpus.retain(|s| !removed.contains(&s.sample_id))?;
        let kept_base = base.select_rows(&rows);
        let hp = &self.cfg.hp;
        if hp.retrain_rounds > 0 {
            let probs = self.load_probs(&corpus, &mut inputs)?;
            let kept_risk = compute_risk_table(&kept, &probs.select_rows(&rows))?;
            for _ in 0..hp.retrain_rounds {
                model = train_from(&kept, &kept_base, &kept_risk, hp, model)?.model;
            }
        }
        let protos = transfer::prototypes(&model, &kept_base, &kept, Some(&freq))?;
        let sim = transfer::similarity(&protos);
        let imp = transfer::importance(&frequencies(&kept));
        let plan = transfer::plan(&targets, &sim, &imp, &kept);
        let out_corpus = transfer::apply(&corpus, &plan, &removed)?;

        let gone: Vec<(u64, u32)> = removed
            .iter()
            .filter_map(|id| corpus.sample(*id).map(|s| (*id, s.predicate)))
            .collect();
        let outputs = vec![("corpus_transferred", self.out(TRANSFERRED)), ("audit", self.out(AUDIT))];
        formats::save_corpus(&outputs[0].1, &out_corpus)?;
        formats::save_audit(&outputs[1].1, &plan, &gone)?;
        self.finish("transfer", &inputs, &outputs)
    }

    /// Ground truth from `ground_truth` (a corpus file) or from the
    /// synthetic truth file applied to the input corpus.
    fn ground_truth(
        &self,
        corpus: &Corpus,
        inputs: &mut Vec<(&'static str, PathBuf)>,
    ) -> Result<(GroundTruth, Option<synthgen::SyntheticTruth>)> {
        let tp = self.truth_path();
        let truth = if tp.is_file() {
            let t = formats::load_truth(&tp)?;
            inputs.push(("truth", tp.clone()));
            Some(t)
        } else if self.cfg.truth.is_some() {
            bail!("missing input truth: {}", tp.display());
        } else {
            None
        };
        if let Some(gp) = &self.cfg.ground_truth {
            require(gp, "ground truth")?;
            let gt = formats::load_corpus(gp, corpus.vocab())?;
            inputs.push(("ground_truth", gp.clone()));
            return Ok((metrics::triplets_by_image(&gt), truth));
        }
        let Some(t) = truth else {
            bail!("evaluate needs ground_truth or a truth file ({} not found)", tp.display());
        };
        let original: BTreeMap<u64, u32> = t
            .original
            .iter()
            .filter(|(id, _)| corpus.sample(**id).is_some())
            .map(|(&id, &p)| (id, p))
            .collect();
        let gt = corpus.relabel(&original)?;
        Ok((metrics::triplets_by_image(&gt), Some(t)))
    }

    pub fn has_ground_truth(&self) -> bool {
        self.cfg.ground_truth.is_some() || self.truth_path().is_file()
    }

    fn scores(&self, preds: &PredictionList, gt: &GroundTruth) -> Result<Value> {
        let mut m = Map::new();
        for &k in &self.cfg.ks {
            let r = metrics::recall_at_k(preds, gt, k)?;
            let mr = metrics::mean_recall_at_k(preds, gt, k)?;
            m.insert(format!("R@{k}"), json!(r));
            m.insert(format!("mR@{k}"), json!(mr));
            if let Some(pq) = self.cfg.pq {
                let pr = metrics::percentile_recall(&PRInputs::new(r, mr, pq)?);
                m.insert(format!("PR@{k}"), json!(pr));
            }
        }
        Ok(Value::Object(m))
    }

    pub fn evaluate(&self) -> Result<Manifest> {
        self.ensure_out_dir()?;
        let mut inputs = Vec::new();
        let corpus = self.load_corpus(&mut inputs)?;
        let op = self.out(TRANSFERRED);
        require(&op, "transferred corpus")?;
        let output = formats::load_corpus(&op, corpus.vocab())?;
        inputs.push(("corpus_transferred", op));
        let (gt, truth) = self.ground_truth(&corpus, &mut inputs)?;

        let mut report = Map::new();
        report.insert("ks".into(), json!(self.cfg.ks));
        if let Some(pq) = self.cfg.pq {
            report.insert("pq".into(), json!(pq));
        }
        report.insert("input".into(), self.scores(&metrics::predictions_from_corpus(&corpus), &gt)?);
        report.insert("output".into(), self.scores(&metrics::predictions_from_corpus(&output), &gt)?);
        if let Some(pp) = &self.cfg.predictions {
            require(pp, "predictions")?;
            let preds = formats::load_predictions(pp)?;
            inputs.push(("predictions", pp.clone()));
            report.insert("predictions".into(), self.scores(&preds, &gt)?);
        }
        if let Some(t) = &truth {
            report.insert("recovery".into(), recovery(&corpus, &output, t));
        }
        let out = self.out(METRICS);
        write_json(&out, &Value::Object(report))?;
        self.finish("evaluate", &inputs, &[("metrics", out)])
    }

    /// Synth (when no corpus is configured), then every downstream stage.
    pub fn pipeline(&self) -> Result<Vec<Manifest>> {
        let mut done = Vec::new();
        if self.cfg.corpus.is_none() {
            done.push(self.synth()?);
        }
        done.push(self.infer_targets()?);
        done.push(self.train()?);
        done.push(self.filter()?);
        done.push(self.transfer()?);
        if self.cfg.evaluate && self.has_ground_truth() {
            done.push(self.evaluate()?);
        }
        Ok(done)
    }

    pub fn run(&self, stage: &str) -> Result<Vec<Manifest>> {
        Ok(match stage {
            "synth" => vec![self.synth()?],
            "infer-targets" => vec![self.infer_targets()?],
            "train" => vec![self.train()?],
            "filter" => vec![self.filter()?],
            "transfer" => vec![self.transfer()?],
            "evaluate" => vec![self.evaluate()?],
            "pipeline" => self.pipeline()?,
            _ => bail!("unknown stage {stage:?}; expected one of {}", STAGES.join(", ")),
        })
    }
}

/// Share of injected swaps restored to their original label, and share of
/// clean samples that ended up with a different label. Removed samples
/// count as not restored.
pub fn recovery(input: &Corpus, output: &Corpus, truth: &synthgen::SyntheticTruth) -> Value {
    let mut biased = 0u64;
    let mut recovered = 0u64;
    let mut clean = 0u64;
    let mut mislabeled = 0u64;
    for s in input.samples() {
        let Some(&orig) = truth.original.get(&s.sample_id) else { continue };
        let now = output.sample(s.sample_id).map(|o| o.predicate);
        if truth.biased_ids.contains(&s.sample_id) {
            biased += 1;
            recovered += u64::from(now == Some(orig));
        } else {
            clean += 1;
            mislabeled += u64::from(now.is_some_and(|p| p != orig));
        }
    }
    let rate = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    json!({
        "biased": biased,
        "recovered": recovered,
        "recovered_rate": rate(recovered, biased),
        "clean": clean,
        "mislabeled": mislabeled,
        "mislabeled_rate": rate(mislabeled, clean),
        "removed": input.len() - output.len(),
    })
}
