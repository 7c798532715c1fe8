//! Flat `key=value` run configuration. Values are layered defaults, then the
//! config file, then command-line flags, and parsed into [`RunConfig`] in one
//! pass so nothing runs on a half-valid configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use berngraph::baselines::FeatureMode;
use berngraph::checkpoint::ModelKind;
use berngraph::cohort::SplitRatios;
use berngraph::encoders::{EdgeMode, NodeMode};
use berngraph::experiment::{Arm, EvalProtocol, Precision, ABLATION_ARMS};
use berngraph::synth::PlantedSpec;
use berngraph::train::TrainConfig;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

/// Every accepted key. An empty default means "unset".
pub const KEYS: &[Key] = &[
    key("cohort", "", "cohort manifest (JSON)"),
    key("out", "out", "output directory"),
    key("seed", "0", "root seed for splits, initialization and shuffling"),
    key("train_ratio", "0.6", "training share of rows"),
    key("val_ratio", "0.2", "validation share of rows"),
    key("test_ratio", "0.2", "test share of rows"),
    key("node_mode", "bm", "node encoding: bm, llr, te, rn"),
    key("edge_mode", "post", "edge weighting: post, cooc, re"),
    key("encoding_seed", "", "seed for random encodings (default: seed)"),
    key("min_joint", "1", "minimum co-occurrence count for an edge"),
    key("stats_all_rows", "false", "estimate statistics on all rows instead of training rows"),
    key("model", "gnn", "model to train: gnn, lr, mlp"),
    key("lr", "0.0001", "Adam learning rate"),
    key("epochs", "200", "training epochs"),
    key("batch_size", "32", "minibatch size"),
    key("hidden", "128", "GNN hidden width"),
    key("layers", "2", "message-passing layers"),
    key("patience", "none", "early-stopping patience in epochs, or none"),
    key("track_validation", "true", "score validation rows after every epoch"),
    key("precision", "f64", "floating point width for training: f32, f64"),
    key("lr_features", "raw", "logistic regression input: raw, encoded"),
    key("l2", "0", "L2 penalty for baseline weights"),
    key("mlp_hidden", "64", "MLP hidden width"),
    key("bootstrap_rounds", "10", "bootstrap rounds"),
    key("bootstrap_frac", "0.8", "fraction of test rows per round"),
    key("bootstrap_seed", "", "bootstrap seed (default: seed)"),
    key("truth", "", "ground-truth JSON whose clean labels replace cohort labels when scoring"),
    key("checkpoint", "", "checkpoint path (default: <out>/checkpoint.bin)"),
    key("arms", "all", "comma-separated ablation arms, or all"),
    key("row", "0", "patient row for graph and export-viz"),
    key("k", "5", "number of highlighted nodes for export-viz"),
    key("n", "2000", "simulated patients"),
    key("m", "40", "simulated events"),
    key("c", "6", "simulated drugs"),
    key("l", "5", "simulated latent causes"),
    key("event_rate", "0.005", "simulated mean event rate"),
    key("hubs", "2", "frequent events per latent-cause block"),
    key("hub_rate", "0.015", "marginal rate of a frequent event"),
    key("cause_share", "0.6", "share of the event rate driven by latent causes"),
    key("activation", "0.15", "event activation probability given its cause"),
    key("label_noise", "0.05", "simulated label flip probability"),
    key("synth_spec", "", "full simulator config (JSON), overrides the planted knobs"),
];

pub fn defaults() -> BTreeMap<String, String> {
    KEYS.iter()
        .map(|k| (k.name.to_string(), k.default.to_string()))
        .collect()
}

fn normalize(name: &str) -> String {
    name.trim().replace('-', "_")
}

fn check_known(name: &str) -> Result<()> {
    if KEYS.iter().any(|k| k.name == name) {
        Ok(())
    } else {
        bail!("unknown config key '{name}'")
    }
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_kv(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key=value, got '{line}'", origin.display(), i + 1))?;
        let k = normalize(k);
        check_known(&k).with_context(|| format!("{}:{}", origin.display(), i + 1))?;
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_kv(&text, path)
}

/// Lays `top` over `base`.
pub fn layer(base: &mut BTreeMap<String, String>, top: BTreeMap<String, String>) -> Result<()> {
    for (k, v) in top {
        let k = normalize(&k);
        check_known(&k)?;
        base.insert(k, v);
    }
    Ok(())
}

pub fn render_kv(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub cohort: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub precision: Precision,
    pub lr_features: FeatureMode,
    pub l2: f64,
    pub mlp_hidden: usize,
    pub protocol: EvalProtocol,
    pub truth: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub arms: Vec<Arm>,
    pub row: usize,
    pub k: usize,
    pub planted: PlantedSpec,
    pub synth_spec: Option<PathBuf>,
    /// The resolved map this was parsed from.
    pub resolved: BTreeMap<String, String>,
}

struct Fields<'a>(&'a BTreeMap<String, String>);

impl Fields<'_> {
    fn raw(&self, k: &str) -> &str {
        self.0.get(k).map(String::as_str).unwrap_or("")
    }

    fn get<T: FromStr>(&self, k: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(k);
        v.parse::<T>()
            .map_err(|e| anyhow!("invalid value '{v}' for {k}: {e}"))
    }

    fn opt<T: FromStr>(&self, k: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(k) {
            "" | "none" => Ok(None),
            _ => self.get(k).map(Some),
        }
    }

    fn path(&self, k: &str) -> Option<PathBuf> {
        match self.raw(k) {
            "" => None,
            v => Some(PathBuf::from(v)),
        }
    }

    fn flag(&self, k: &str) -> Result<bool> {
        match self.raw(k) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => bail!("invalid value '{v}' for {k}: expected true or false"),
        }
    }
}

fn probability(name: &str, p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        bail!("{name} must be in [0, 1], got {p}")
    }
}

impl RunConfig {
    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self> {
        let f = Fields(&map);
        let seed: u64 = f.get("seed")?;
        let ratios = SplitRatios {
            train: f.get("train_ratio")?,
            val: f.get("val_ratio")?,
            test: f.get("test_ratio")?,
        };
        ratios.validate()?;

        let train = TrainConfig {
            learning_rate: f.get("lr")?,
            epochs: f.get("epochs")?,
            batch_size: f.get("batch_size")?,
            seed,
            hidden: f.get("hidden")?,
            layers: f.get("layers")?,
            node_mode: f.get::<NodeMode>("node_mode")?,
            edge_mode: f.get::<EdgeMode>("edge_mode")?,
            patience: f.opt("patience")?,
            min_joint: f.get("min_joint")?,
            stats_all_rows: f.flag("stats_all_rows")?,
            track_validation: f.flag("track_validation")?,
            encoding_seed: f.opt("encoding_seed")?,
        };
        train.validate()?;

        let lr_features = match f.raw("lr_features") {
            "raw" => FeatureMode::Raw,
            "encoded" => FeatureMode::Encoded,
            v => bail!("invalid value '{v}' for lr_features: expected raw or encoded"),
        };
        let l2: f64 = f.get("l2")?;
        if !(l2.is_finite() && l2 >= 0.0) {
            bail!("l2 must be a finite non-negative number, got {l2}");
        }
        let mlp_hidden: usize = f.get("mlp_hidden")?;
        if mlp_hidden == 0 {
            bail!("mlp_hidden must be at least 1");
        }

        let protocol = EvalProtocol {
            rounds: f.get("bootstrap_rounds")?,
            frac: f.get("bootstrap_frac")?,
            seed: f.opt("bootstrap_seed")?.unwrap_or(seed),
        };
        if protocol.rounds == 0 {
            bail!("bootstrap_rounds must be at least 1");
        }
        if !(protocol.frac > 0.0 && protocol.frac <= 1.0) {
            bail!("bootstrap_frac must be in (0, 1], got {}", protocol.frac);
        }

        let arms = match f.raw("arms") {
            "all" | "" => ABLATION_ARMS.to_vec(),
            list => list
                .split(',')
                .map(|a| a.trim().parse::<Arm>())
                .collect::<Result<Vec<_>, _>>()?,
        };

        let k: usize = f.get("k")?;
        if k == 0 {
            bail!("k must be at least 1");
        }

        let planted = PlantedSpec {
            n: f.get("n")?,
            m: f.get("m")?,
            c: f.get("c")?,
            l: f.get("l")?,
            event_rate: probability("event_rate", f.get("event_rate")?)?,
            hubs: f.get("hubs")?,
            hub_rate: probability("hub_rate", f.get("hub_rate")?)?,
            cause_share: probability("cause_share", f.get("cause_share")?)?,
            activation: probability("activation", f.get("activation")?)?,
            label_noise: probability("label_noise", f.get("label_noise")?)?,
            seed,
        };
        if planted.n == 0 || planted.m == 0 || planted.c == 0 || planted.l == 0 {
            bail!("n, m, c and l must all be at least 1");
        }

        Ok(Self {
            cohort: f.path("cohort"),
            out: f.path("out").unwrap_or_else(|| PathBuf::from("out")),
            seed,
            ratios,
            model: f.get("model")?,
            precision: f.get("precision")?,
            lr_features,
            l2,
            mlp_hidden,
            protocol,
            truth: f.path("truth"),
            checkpoint: f.path("checkpoint"),
            arms,
            row: f.get("row")?,
            k,
            planted,
            synth_spec: f.path("synth_spec"),
            train,
            resolved: map,
        })
    }

    pub fn cohort_path(&self) -> Result<&Path> {
        self.cohort
            .as_deref()
            .ok_or_else(|| anyhow!("no cohort given; pass --cohort <manifest.json> or set cohort= in the config file"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.bin"))
    }

    pub fn baseline_config(&self) -> berngraph::baselines::BaselineConfig {
        berngraph::baselines::BaselineConfig {
            l2: self.l2,
            hidden: self.mlp_hidden,
            ..berngraph::baselines::BaselineConfig::from_train(&self.train)
        }
    }
}
