//! Flat `key=value` run configuration. Every key has a default; files and
//! `--set` overrides may only name known keys, and values are checked when
//! they are set.

use std::collections::BTreeMap;

use modflow::data::CommunityConfig;
use modflow::rl::{ConstrainedConfig, PropertyTransform};
use modflow::{Alphabet, FlowConfig, GradientMode, PpoConfig, RewardSpec, SampleConfig, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug)]
enum Kind {
    Text,
    Count,
    Seed,
    Real,
    Flag,
    /// A real number or `none`.
    OptionalReal,
    /// A count or `auto`.
    AutoCount,
    /// A real number or `auto`.
    AutoReal,
    RealList,
    Choice(&'static [&'static str]),
    Transform,
}

/// Key, default, kind, one-line description.
const KEYS: &[(&str, &str, Kind, &str)] = &[
    ("seed", "0", Kind::Seed, "run seed for initialization, shuffling and sampling"),
    ("alphabet", "qm9", Kind::Choice(&["qm9", "zinc", "moses", "generic"]), "alphabet profile for SMILES data"),
    ("data", "", Kind::Text, "training or reference dataset (.smi or edge-list file)"),
    ("data.format", "auto", Kind::Choice(&["auto", "smiles", "edges"]), "dataset format; auto picks by extension"),
    ("checkpoint", "", Kind::Text, "model checkpoint to load"),
    ("out_dir", "out", Kind::Text, "directory for every artifact of the run"),
    ("model.depth", "12", Kind::Count, "number of modulo-shift layers"),
    ("model.rgcn_layers", "3", Kind::Count, "R-GCN layers"),
    ("model.embed_width", "128", Kind::Count, "R-GCN node embedding width"),
    ("model.mlp_hidden", "128", Kind::Count, "hidden width of the shift heads"),
    ("model.st_temperature", "0.1", Kind::Real, "softmax temperature of the straight-through gradient"),
    ("train.epochs", "10", Kind::Count, "passes over the training split"),
    ("train.batch_size", "auto", Kind::AutoCount, "graphs per step; auto is 32 for molecules, 16 otherwise"),
    ("train.learning_rate", "0.001", Kind::Real, "Adam step size"),
    ("train.holdout_fraction", "0.1", Kind::Real, "share of the data held out for NLL tracking"),
    ("train.clip_norm", "10", Kind::OptionalReal, "global gradient norm cap, or none"),
    ("train.gradient_mode", "straight-through", Kind::Choice(&["straight-through", "fully-soft"]), "gradient of the shift rounding"),
    ("train.checkpoint_every", "1", Kind::Count, "epochs between checkpoints; 0 writes only the final one"),
    ("sample.count", "1000", Kind::Count, "graphs to generate"),
    ("sample.max_nodes", "auto", Kind::AutoCount, "node cap; auto is 9 for qm9, 38 for zinc/moses, the data maximum otherwise"),
    ("sample.node_temperature", "auto", Kind::AutoReal, "node prior temperature; auto per alphabet"),
    ("sample.edge_temperature", "auto", Kind::AutoReal, "edge prior temperature; auto per alphabet"),
    ("sample.resample_cap", "100", Kind::Count, "valency resamples before the edge is forced to none"),
    ("sample.valency_check", "true", Kind::Flag, "reject edges that break valency"),
    ("eval.samples", "", Kind::Text, "file of graphs to evaluate; empty samples from the checkpoint"),
    ("eval.reconstruct", "true", Kind::Flag, "report reconstruction of the reference set when a checkpoint is given"),
    ("eval.match_nodes", "false", Kind::Flag, "match the node-count histogram of the reference before MMD"),
    ("ppo.clip_eps", "0.2", Kind::Real, "ratio clip range"),
    ("ppo.iterations", "200", Kind::Count, "fine-tuning iterations"),
    ("ppo.learning_rate", "0.0001", Kind::Real, "Adam step size for fine-tuning"),
    ("ppo.batch_size", "auto", Kind::AutoCount, "episodes per iteration; auto is 8 (property) or 16 (constrained)"),
    ("ppo.update_epochs", "1", Kind::Count, "updates per sampled batch"),
    ("ppo.clip_norm", "10", Kind::OptionalReal, "global gradient norm cap, or none"),
    ("reward.scorer", "atoms", Kind::Choice(&["atoms", "plogp-proxy", "external"]), "property scorer"),
    ("reward.command", "", Kind::Text, "external scorer command, run through sh -c"),
    ("reward.verb", "SCORE_PLOGP", Kind::Text, "request verb for the external scorer"),
    ("reward.timeout_secs", "30", Kind::Real, "seconds to wait for a scorer reply"),
    ("reward.transform", "identity", Kind::Transform, "identity, exp-logp or scaled:<factor>"),
    ("reward.gamma", "0.9", Kind::Real, "per-step discount"),
    ("reward.valency_penalty", "1", Kind::Real, "penalty for a step that needed a resample"),
    ("reward.use_penalties", "false", Kind::Flag, "subtract the scorer's SS and FILTER replies"),
    ("reward.top_k", "3", Kind::Count, "best distinct molecules to report"),
    ("constrained.inputs", "", Kind::Text, "SMILES file of molecules to improve"),
    ("constrained.attempts", "200", Kind::Count, "outputs generated per input"),
    ("constrained.deltas", "0,0.2,0.4,0.6", Kind::RealList, "similarity thresholds"),
    ("constrained.max_removed", "5", Kind::Count, "largest number of trailing nodes removed from an input"),
    ("constrained.fingerprint_radius", "2", Kind::Count, "Morgan fingerprint radius"),
    ("constrained.fingerprint_width", "2048", Kind::Count, "Morgan fingerprint bits"),
    ("community.count", "100", Kind::Count, "graphs to generate"),
    ("community.min_size", "6", Kind::Count, "smallest community"),
    ("community.max_size", "10", Kind::Count, "largest community"),
    ("community.intra_p", "0.7", Kind::Real, "edge probability inside a community"),
    ("community.inter_p", "0.05", Kind::Real, "edge probability of each cross-community pair"),
];

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn check(key: &str, value: &str, kind: Kind) -> CliResult<()> {
    let bad = |what: &str| usage(format!("`{key}` expects {what}, got `{value}`"));
    let real = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite());
    let ok = match kind {
        Kind::Text => !value.contains('\n'),
        Kind::Count => value.parse::<usize>().is_ok(),
        Kind::Seed => value.parse::<u64>().is_ok(),
        Kind::Real => real(value).is_some(),
        Kind::Flag => matches!(value, "true" | "false"),
        Kind::OptionalReal => value == "none" || real(value).is_some(),
        Kind::AutoCount => value == "auto" || value.parse::<usize>().is_ok(),
        Kind::AutoReal => value == "auto" || real(value).is_some(),
        Kind::RealList => value.split(',').all(|v| real(v.trim()).is_some()),
        Kind::Choice(options) => options.contains(&value),
        Kind::Transform => parse_transform(value).is_some(),
    };
    if ok {
        return Ok(());
    }
    Err(match kind {
        Kind::Choice(options) => bad(&format!("one of {}", options.join(", "))),
        Kind::Text => bad("a single line"),
        Kind::Count | Kind::Seed => bad("a non-negative integer"),
        Kind::Flag => bad("true or false"),
        Kind::OptionalReal => bad("a number or none"),
        Kind::AutoCount => bad("a non-negative integer or auto"),
        Kind::AutoReal => bad("a number or auto"),
        Kind::RealList => bad("comma-separated numbers"),
        Kind::Transform => bad("identity, exp-logp or scaled:<factor>"),
        Kind::Real => bad("a finite number"),
    })
}

fn parse_transform(value: &str) -> Option<PropertyTransform> {
    match value {
        "identity" => Some(PropertyTransform::Identity),
        "exp-logp" => Some(PropertyTransform::ExpLogp),
        other => other.strip_prefix("scaled:")?.parse::<f64>().ok().filter(|s| s.is_finite()).map(PropertyTransform::Scaled),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|&(k, d, _, _)| (k, d.to_string())).collect() }
    }
}

impl RunConfig {
    /// Defaults overridden by the `key=value` lines of `text`. Blank lines
    /// and `#` comments are skipped.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut config = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            config.apply(line).map_err(|e| usage(format!("line {}: {e}", n + 1)))?;
        }
        Ok(config)
    }

    /// Applies one `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> CliResult<()> {
        let (key, value) =
            assignment.split_once('=').ok_or_else(|| usage(format!("expected key=value, got `{assignment}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let &(name, _, kind, _) =
            KEYS.iter().find(|(k, ..)| *k == key).ok_or_else(|| usage(format!("unknown config key `{key}`")))?;
        check(name, value, kind)?;
        self.values.insert(name, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).unwrap_or_else(|| panic!("`{key}` is not a config key"))
    }

    /// Every key in table order, one `key=value` per line.
    pub fn render(&self) -> String {
        KEYS.iter().map(|(k, ..)| format!("{k}={}\n", self.values[k])).collect()
    }

    /// Every key with its default and description.
    pub fn describe() -> String {
        KEYS.iter().map(|(k, d, _, help)| format!("{k:<32} {d:<18} {help}\n")).collect()
    }

    fn count(&self, key: &str) -> usize {
        self.get(key).parse().expect("checked on set")
    }

    fn real(&self, key: &str) -> f64 {
        self.get(key).parse().expect("checked on set")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    fn optional_real(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            "none" => None,
            v => Some(v.parse().expect("checked on set")),
        }
    }

    fn auto_count(&self, key: &str) -> Option<usize> {
        self.get(key).parse().ok()
    }

    fn auto_real(&self, key: &str) -> Option<f64> {
        self.get(key).parse().ok()
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("checked on set")
    }

    /// A path-valued key, or an error naming it when empty.
    pub fn required(&self, key: &str) -> CliResult<&str> {
        match self.get(key) {
            "" => Err(usage(format!("`{key}` must be set"))),
            v => Ok(v),
        }
    }

    pub fn flow(&self) -> CliResult<FlowConfig> {
        let flow = FlowConfig {
            depth: self.count("model.depth"),
            rgcn_layers: self.count("model.rgcn_layers"),
            embed_width: self.count("model.embed_width"),
            mlp_hidden: self.count("model.mlp_hidden"),
            st_temperature: self.real("model.st_temperature"),
        };
        flow.validate()?;
        Ok(flow)
    }

    pub fn train(&self, molecular: bool) -> CliResult<TrainConfig> {
        let base = if molecular { TrainConfig::default() } else { TrainConfig::generic() };
        let train = TrainConfig {
            epochs: self.count("train.epochs"),
            batch_size: self.auto_count("train.batch_size").unwrap_or(base.batch_size),
            learning_rate: self.real("train.learning_rate"),
            seed: self.seed(),
            holdout_fraction: self.real("train.holdout_fraction"),
            clip_norm: self.optional_real("train.clip_norm"),
            gradient_mode: match self.get("train.gradient_mode") {
                "fully-soft" => GradientMode::FullySoft,
                _ => GradientMode::StraightThrough,
            },
        };
        train.validate()?;
        Ok(train)
    }

    pub fn checkpoint_every(&self) -> usize {
        self.count("train.checkpoint_every")
    }

    /// Sampling settings; `auto` values follow the alphabet, and generic
    /// graphs fall back to `data_max_nodes`.
    pub fn sample(&self, alphabet: &Alphabet, data_max_nodes: Option<usize>) -> CliResult<SampleConfig> {
        let (max_nodes, t_node, t_edge) = match alphabet.name() {
            "qm9" => (Some(9), 0.35, 0.23),
            "zinc" | "moses" => (Some(38), 0.35, 0.2),
            _ => (data_max_nodes, 1.0, 0.65),
        };
        let max_nodes = match self.auto_count("sample.max_nodes").or(max_nodes) {
            Some(n) => n,
            None => return Err(usage("sample.max_nodes=auto needs a dataset or a checkpoint that records one".into())),
        };
        let sample = SampleConfig {
            max_nodes,
            node_temperature: self.auto_real("sample.node_temperature").unwrap_or(t_node),
            edge_temperature: self.auto_real("sample.edge_temperature").unwrap_or(t_edge),
            resample_cap: self.count("sample.resample_cap"),
            valency_check: self.flag("sample.valency_check"),
            seed: self.seed(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn sample_count(&self) -> usize {
        self.count("sample.count")
    }

    pub fn ppo(&self, constrained: bool) -> CliResult<PpoConfig> {
        let base = if constrained { PpoConfig::constrained() } else { PpoConfig::default() };
        let ppo = PpoConfig {
            clip_eps: self.real("ppo.clip_eps"),
            iterations: self.count("ppo.iterations"),
            learning_rate: self.real("ppo.learning_rate"),
            batch_size: self.auto_count("ppo.batch_size").unwrap_or(base.batch_size),
            update_epochs: self.count("ppo.update_epochs"),
            clip_norm: self.optional_real("ppo.clip_norm"),
            seed: self.seed(),
        };
        ppo.validate()?;
        Ok(ppo)
    }

    pub fn reward(&self) -> CliResult<RewardSpec> {
        let spec = RewardSpec {
            transform: parse_transform(self.get("reward.transform")).expect("checked on set"),
            gamma: self.real("reward.gamma"),
            valency_penalty: self.real("reward.valency_penalty"),
            use_penalties: self.flag("reward.use_penalties"),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn top_k(&self) -> usize {
        self.count("reward.top_k")
    }

    pub fn scorer_timeout(&self) -> CliResult<std::time::Duration> {
        let secs = self.real("reward.timeout_secs");
        if secs <= 0.0 {
            return Err(usage("reward.timeout_secs must be positive".into()));
        }
        Ok(std::time::Duration::from_secs_f64(secs))
    }

    pub fn constrained(&self) -> CliResult<ConstrainedConfig> {
        let config = ConstrainedConfig {
            attempts: self.count("constrained.attempts"),
            deltas: self.get("constrained.deltas").split(',').map(|v| v.trim().parse().expect("checked on set")).collect(),
            max_removed: self.count("constrained.max_removed"),
            fingerprint_radius: self.count("constrained.fingerprint_radius"),
            fingerprint_width: self.count("constrained.fingerprint_width"),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn community(&self) -> CommunityConfig {
        CommunityConfig {
            min_size: self.count("community.min_size"),
            max_size: self.count("community.max_size"),
            intra_p: self.real("community.intra_p"),
            inter_p: self.real("community.inter_p"),
        }
    }

    pub fn community_count(&self) -> usize {
        self.count("community.count")
    }

    pub fn eval_reconstruct(&self) -> bool {
        self.flag("eval.reconstruct")
    }

    pub fn eval_match_nodes(&self) -> bool {
        self.flag("eval.match_nodes")
    }
}
