//! Flat key/value run configuration.
//!
//! Values come from defaults, then a TOML file, then `DEBIAS_OUT_DIR` (for
//! `out_dir` only), then command line overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use debias_core::synthgen::SynthConfig;
use debias_core::Hyperparameters;
use sha2::{Digest, Sha256};

pub const OUT_DIR_ENV: &str = "DEBIAS_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub probs: Option<PathBuf>,
    /// `"hash"` or `"file:<path>"`; unset means `embeddings.ptns` in the
    /// output directory.
    pub embeddings: Option<String>,
    pub truth: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub hp: Hyperparameters,
    pub hash_dim: usize,
    pub ks: Vec<usize>,
    pub pq: Option<f64>,
    pub filter: bool,
    pub evaluate: bool,
    pub threads: Option<usize>,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            vocab: None,
            probs: None,
            embeddings: None,
            truth: None,
            ground_truth: None,
            predictions: None,
            out_dir: PathBuf::from("out"),
            hp: Hyperparameters::default(),
            hash_dim: 256,
            ks: vec![20, 50, 100],
            pq: None,
            filter: true,
            evaluate: true,
            threads: None,
            synth: SynthConfig::default(),
        }
    }
}

const PATH_KEYS: &[&str] = &[
    "corpus",
    "vocab",
    "probs",
    "embeddings",
    "truth",
    "ground_truth",
    "predictions",
    "out_dir",
];

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::String(s) => s.trim().parse().map_err(|_| anyhow!("{key}: expected a number, got {s:?}")),
        _ => bail!("{key}: expected a number"),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        toml::Value::String(s) => s
            .trim()
            .parse()
            .map_err(|_| anyhow!("{key}: expected a non-negative integer, got {s:?}")),
        _ => bail!("{key}: expected a non-negative integer"),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    Ok(as_u64(key, v)? as usize)
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    match v {
        toml::Value::Boolean(b) => Ok(*b),
        toml::Value::String(s) if s == "true" || s == "false" => Ok(s == "true"),
        _ => bail!("{key}: expected true or false"),
    }
}

fn as_string(key: &str, v: &toml::Value) -> Result<String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        _ => bail!("{key}: expected a string"),
    }
}

fn as_list(key: &str, v: &toml::Value) -> Result<Vec<usize>> {
    match v {
        toml::Value::Array(a) => a.iter().map(|x| as_usize(key, x)).collect(),
        toml::Value::String(s) => s
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| anyhow!("{key}: bad list entry {x:?}")))
            .collect(),
        toml::Value::Integer(_) => Ok(vec![as_usize(key, v)?]),
        _ => bail!("{key}: expected a list of integers"),
    }
}

/// `"0:4,1:5"` or `[[0, 4], [1, 5]]`.
fn as_pairs(key: &str, v: &toml::Value) -> Result<Vec<(u32, u32)>> {
    match v {
        toml::Value::String(s) if s.trim().is_empty() => Ok(vec![]),
        toml::Value::String(s) => s
            .split(',')
            .map(|pair| {
                let (a, b) = pair
                    .split_once(':')
                    .ok_or_else(|| anyhow!("{key}: expected source:label, got {pair:?}"))?;
                Ok((a.trim().parse()?, b.trim().parse()?))
            })
            .collect(),
        toml::Value::Array(a) => a
            .iter()
            .map(|p| match p {
                toml::Value::Array(xy) if xy.len() == 2 => Ok((as_u64(key, &xy[0])? as u32, as_u64(key, &xy[1])? as u32)),
                _ => bail!("{key}: expected [source, label] pairs"),
            })
            .collect(),
        _ => bail!("{key}: expected confusion pairs"),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        let path = |v: &toml::Value| as_string(key, v).map(PathBuf::from);
        match key {
            "corpus" => self.corpus = Some(path(v)?),
            "vocab" => self.vocab = Some(path(v)?),
            "probs" => self.probs = Some(path(v)?),
            "embeddings" => self.embeddings = Some(as_string(key, v)?),
            "truth" => self.truth = Some(path(v)?),
            "ground_truth" => self.ground_truth = Some(path(v)?),
            "predictions" => self.predictions = Some(path(v)?),
            "out_dir" => self.out_dir = path(v)?,
            "margin_deg" => self.hp.margin_deg = as_f64(key, v)?,
            "temperature" => self.hp.temperature = as_f64(key, v)?,
            "lambda" => self.hp.lambda = as_f64(key, v)?,
            "mu" => self.hp.mu = as_f64(key, v)?,
            "top_d" => self.hp.top_d = as_f64(key, v)?,
            "floor" => self.hp.floor = as_u64(key, v)?,
            "learning_rate" => self.hp.learning_rate = as_f64(key, v)?,
            "momentum" => self.hp.momentum = as_f64(key, v)?,
            "epochs" => self.hp.epochs = as_usize(key, v)?,
            "window" => self.hp.window = as_usize(key, v)?,
            "rep_dim" => self.hp.rep_dim = as_usize(key, v)?,
            "seed" => self.hp.seed = as_u64(key, v)?,
            "retrain_rounds" => self.hp.retrain_rounds = as_usize(key, v)?,
            "beta" => self.hp.beta = as_f64(key, v)?,
            "gamma" => self.hp.gamma = as_f64(key, v)?,
            "hash_dim" => self.hash_dim = as_usize(key, v)?,
            "ks" => self.ks = as_list(key, v)?,
            "pq" => self.pq = Some(as_f64(key, v)?),
            "filter" => self.filter = as_bool(key, v)?,
            "evaluate" => self.evaluate = as_bool(key, v)?,
            "threads" => self.threads = Some(as_usize(key, v)?),
            "synth_predicates" => self.synth.num_predicates = as_usize(key, v)?,
            "synth_classes" => self.synth.num_classes = as_usize(key, v)?,
            "synth_domains" => self.synth.num_domains = as_usize(key, v)?,
            "synth_samples" => self.synth.num_samples = as_usize(key, v)?,
            "synth_alpha" => self.synth.long_tail_exponent = as_f64(key, v)?,
            "synth_bias_rate" => self.synth.bias_rate = as_f64(key, v)?,
            "synth_pairs" => self.synth.confusion_pairs = as_pairs(key, v)?,
            "synth_sharpness" => self.synth.sharpness = as_f64(key, v)?,
            "synth_embed_dim" => self.synth.embed_dim = as_usize(key, v)?,
            "synth_confusion_similarity" => self.synth.confusion_similarity = as_f64(key, v)?,
            "synth_domain_weight" => self.synth.domain_weight = as_f64(key, v)?,
            "synth_noise" => self.synth.noise = as_f64(key, v)?,
            "synth_triplets_per_image" => self.synth.triplets_per_image = as_usize(key, v)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    pub fn apply_table(&mut self, table: &toml::Table) -> Result<()> {
        for (k, v) in table {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        self.apply_table(&table).with_context(|| format!("in config {}", path.display()))
    }

    /// `key=value`; the value is read as TOML and falls back to a bare
    /// string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, raw) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
        let (k, raw) = (k.trim(), raw.trim());
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        self.set(k, &value)
    }

    /// Defaults, then `file`, then the output-dir environment variable, then
    /// overrides.
    pub fn resolve(file: Option<&Path>, env_out_dir: Option<String>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.load_file(f)?;
        }
        if let Some(dir) = env_out_dir.filter(|d| !d.is_empty()) {
            cfg.out_dir = PathBuf::from(dir);
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.hash_dim == 0 {
            bail!("hash_dim must be positive");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            bail!("ks must be a non-empty list of positive integers");
        }
        if let Some(pq) = self.pq {
            if !(0.0..=100.0).contains(&pq) {
                bail!("pq must be in [0, 100]");
            }
        }
        if self.threads == Some(0) {
            bail!("threads must be positive");
        }
        Ok(())
    }

    /// Every setting that can change an output, as display strings.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let h = &self.hp;
        let s = &self.synth;
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut m = BTreeMap::new();
        m.insert("corpus", opt(&self.corpus));
        m.insert("vocab", opt(&self.vocab));
        m.insert("probs", opt(&self.probs));
        m.insert("embeddings", self.embeddings.clone().unwrap_or_default());
        m.insert("truth", opt(&self.truth));
        m.insert("ground_truth", opt(&self.ground_truth));
        m.insert("predictions", opt(&self.predictions));
        m.insert("out_dir", self.out_dir.display().to_string());
        m.insert("margin_deg", h.margin_deg.to_string());
        m.insert("temperature", h.temperature.to_string());
        m.insert("lambda", h.lambda.to_string());
        m.insert("mu", h.mu.to_string());
        m.insert("top_d", h.top_d.to_string());
        m.insert("floor", h.floor.to_string());
        m.insert("learning_rate", h.learning_rate.to_string());
        m.insert("momentum", h.momentum.to_string());
        m.insert("epochs", h.epochs.to_string());
        m.insert("window", h.window.to_string());
        m.insert("rep_dim", h.rep_dim.to_string());
        m.insert("seed", h.seed.to_string());
        m.insert("retrain_rounds", h.retrain_rounds.to_string());
        m.insert("beta", h.beta.to_string());
        m.insert("gamma", h.gamma.to_string());
        m.insert("hash_dim", self.hash_dim.to_string());
        m.insert("ks", format!("{:?}", self.ks));
        m.insert("pq", self.pq.map(|v| v.to_string()).unwrap_or_default());
        m.insert("filter", self.filter.to_string());
        m.insert("evaluate", self.evaluate.to_string());
        m.insert("synth_predicates", s.num_predicates.to_string());
        m.insert("synth_classes", s.num_classes.to_string());
        m.insert("synth_domains", s.num_domains.to_string());
        m.insert("synth_samples", s.num_samples.to_string());
        m.insert("synth_alpha", s.long_tail_exponent.to_string());
        m.insert("synth_bias_rate", s.bias_rate.to_string());
        m.insert("synth_pairs", format!("{:?}", s.confusion_pairs));
        m.insert("synth_sharpness", s.sharpness.to_string());
        m.insert("synth_embed_dim", s.embed_dim.to_string());
        m.insert("synth_confusion_similarity", s.confusion_similarity.to_string());
        m.insert("synth_domain_weight", s.domain_weight.to_string());
        m.insert("synth_noise", s.noise.to_string());
        m.insert("synth_triplets_per_image", s.triplets_per_image.to_string());
        m
    }

    /// SHA-256 over the non-path settings. Paths and the worker count are
    /// left out; inputs are pinned by content digests in the manifests.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut entries = self.entries();
        for k in PATH_KEYS {
            entries.remove(k);
        }
        // the provider kind matters, its file path does not
        let provider = match self.embeddings.as_deref() {
            None => "file",
            Some(e) if e.starts_with("file:") => "file",
            Some(e) => e,
        };
        entries.insert("embeddings", provider.to_string());
        for (k, v) in entries {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.hp.margin_deg, 10.0);
        assert_eq!(c.hp.temperature, 0.05);
        assert_eq!(c.hp.lambda, 0.3);
        assert_eq!(c.hp.mu, 1.2);
        assert_eq!(c.hp.top_d, 50.0);
        assert_eq!(c.hp.floor, 100);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.toml");
        fs::write(&f, "mu = 2.0\nfloor = 5\nout_dir = \"from-file\"\nsynth_pairs = \"0:1\"\n").unwrap();
        let c = PipelineConfig::resolve(Some(&f), None, &[]).unwrap();
        assert_eq!((c.hp.mu, c.hp.floor), (2.0, 5));
        assert_eq!(c.out_dir, PathBuf::from("from-file"));
        assert_eq!(c.synth.confusion_pairs, vec![(0, 1)]);

        let c = PipelineConfig::resolve(Some(&f), Some("from-env".into()), &["mu=3".into()]).unwrap();
        assert_eq!(c.hp.mu, 3.0);
        assert_eq!(c.out_dir, PathBuf::from("from-env"));

        let c = PipelineConfig::resolve(Some(&f), Some("from-env".into()), &["out_dir=flag/dir".into()]).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("flag/dir"));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(PipelineConfig::default().apply_override("nope=1").is_err());
        assert!(PipelineConfig::resolve(None, None, &["temperature=0".into()]).is_err());
        assert!(PipelineConfig::default().apply_override("missing-equals").is_err());
    }

    #[test]
    fn hash_ignores_paths_and_threads() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.threads = Some(7);
        b.corpus = Some("x.jsonl".into());
        assert_eq!(a.hash(), b.hash());
        b.hp.mu = 1.3;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn list_and_pair_values() {
        let mut c = PipelineConfig::default();
        c.apply_override("ks=[1, 5]").unwrap();
        assert_eq!(c.ks, vec![1, 5]);
        c.apply_override("ks=10,20").unwrap();
        assert_eq!(c.ks, vec![10, 20]);
        c.apply_override("synth_pairs=[[2, 3]]").unwrap();
        assert_eq!(c.synth.confusion_pairs, vec![(2, 3)]);
    }

    #[test]
    fn bundled_benchmark_config_loads() {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.toml");
        let c = PipelineConfig::resolve(Some(&p), None, &[]).unwrap();
        assert_eq!(c.synth.num_samples, 2000);
        assert_eq!(c.synth.confusion_pairs, vec![(0, 4), (1, 5), (2, 6), (3, 7)]);
        assert_eq!(c.hp.floor, 5);
    }
}
