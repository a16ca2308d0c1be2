//! Experiment configuration: a TOML file, environment overrides and
//! command-line flags merged into one validated, normalized value.
//!
//! Precedence is flags > environment > file > defaults. Environment
//! variables use the `MSGAN_` prefix and `__` between nested keys, so
//! `MSGAN_TRAIN__LEARNING_RATE=0.001` sets `train.learning_rate`. Only scalar
//! keys can be overridden this way.

use std::fmt;
use std::path::{Path, PathBuf};

use msgan_core::data::{BenchmarkSpec, ShiftSpec};
use msgan_core::eval::{AblationVariant, Standard};
use msgan_core::losses::{LossWeights, ObjectiveSwitches};
use msgan_core::networks::NetSpec;
use msgan_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, IoContext, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "MSGAN_";
pub const CONFIG_FILE: &str = "config.toml";

/// One problem found while validating a configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted key path, e.g. `train.learning_rate` or `benchmark.shifts[2]`.
    pub path: String,
    pub message: String,
}

impl ConfigIssue {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_standard")]
    pub standard: Standard,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_standard() -> Standard {
    Standard::MultiSource
}

/// The synthetic benchmark. Without `shifts` the calibrated styles are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    pub num_sources: usize,
    pub per_domain: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<ShiftSpec>>,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            num_sources: 3,
            per_domain: 200,
            num_classes: 2,
            image_size: 32,
            seed: 7,
            shifts: None,
        }
    }
}

impl BenchmarkSection {
    pub fn spec(&self) -> BenchmarkSpec {
        let mut spec = BenchmarkSpec::calibrated(self.num_sources, self.per_domain, self.seed);
        spec.num_classes = self.num_classes;
        spec.image_size = self.image_size;
        if let Some(shifts) = &self.shifts {
            spec.shifts = shifts.clone();
        }
        spec
    }
}

/// Image folders laid out as `root/<domain>/<class>/*` for sources and
/// `root/<target>/*` for the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub root: PathBuf,
    pub target: String,
    pub image_size: usize,
    /// Seeds the held-out split of the target.
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            target: "target".into(),
            image_size: 32,
            seed: 0,
        }
    }
}

/// Architecture knobs; image geometry and class count come from the data.
/// Unset block counts default to one residual block after the
/// downsampling (or before the upsampling) stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub channels: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_blocks: Option<usize>,
    pub shared_encoder_blocks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_blocks: Option<usize>,
    pub shared_generator_blocks: usize,
    pub classifier_hidden: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let s = NetSpec::default();
        Self {
            channels: s.channels,
            encoder_blocks: None,
            shared_encoder_blocks: s.shared_encoder_blocks,
            generator_blocks: None,
            shared_generator_blocks: s.shared_generator_blocks,
            classifier_hidden: s.classifier_hidden,
        }
    }
}

impl NetworkSection {
    pub fn spec(&self, image_size: usize, image_channels: usize, num_classes: usize) -> NetSpec {
        let mut s = NetSpec::new(image_size, image_channels, self.channels.clone(), num_classes);
        s.encoder_blocks = self.encoder_blocks.unwrap_or(s.encoder_blocks);
        s.generator_blocks = self.generator_blocks.unwrap_or(s.generator_blocks);
        s.shared_encoder_blocks = self.shared_encoder_blocks;
        s.shared_generator_blocks = self.shared_generator_blocks;
        s.classifier_hidden = self.classifier_hidden;
        s
    }
}

/// Optimisation settings; the seed of each run comes from `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub max_steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub shuffle_sources: bool,
    pub verify_invariants: bool,
    pub dry_run: bool,
    pub weights: LossWeights,
    pub switches: ObjectiveSwitches,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            max_steps: t.max_steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            checkpoint_every: t.checkpoint_every,
            eval_every: t.eval_every,
            shuffle_sources: t.shuffle_sources,
            verify_invariants: t.verify_invariants,
            dry_run: t.dry_run,
            weights: t.weights,
            switches: t.switches,
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            max_steps: self.max_steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            weights: self.weights,
            seed,
            checkpoint_every: self.checkpoint_every,
            eval_every: self.eval_every,
            switches: self.switches,
            shuffle_sources: self.shuffle_sources,
            verify_invariants: self.verify_invariants,
            dry_run: self.dry_run,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Fraction of the target held out, with labels, for scoring.
    pub test_fraction: f64,
    /// Exemplars per domain in the translation grid; 0 skips the figure.
    pub grid_exemplars: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            grid_exemplars: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub variants: Vec<String>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            variants: AblationVariant::NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub kl_weights: Vec<f64>,
    pub nll_weights: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kl_weights: vec![10.0, 0.1],
            nll_weights: vec![0.1, 10.0],
        }
    }
}

/// Values given on the command line; they win over every other source.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub standard: Option<Standard>,
    pub dry_run: bool,
}

impl ExperimentConfig {
    /// A minimal valid configuration on the default benchmark.
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            output_dir: default_output_dir(),
            seeds: default_seeds(),
            standard: default_standard(),
            benchmark: Some(BenchmarkSection::default()),
            data: None,
            network: NetworkSection::default(),
            train: TrainSection::default(),
            evaluation: EvaluationSection::default(),
            ablation: AblationSection::default(),
            sweep: SweepSection::default(),
        }
    }

    /// `output_dir/name`.
    pub fn experiment_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    /// `output_dir/name/seed`.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.experiment_dir().join(seed.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }

    pub fn variants(&self) -> Result<Vec<AblationVariant>> {
        self.ablation
            .variants
            .iter()
            .map(|n| AblationVariant::named(n, &self.train.weights).map_err(Error::from))
            .collect()
    }

    /// Writes the normalized configuration to `output_dir/name/config.toml`.
    pub fn echo(&self) -> Result<PathBuf> {
        let dir = self.experiment_dir();
        std::fs::create_dir_all(&dir).at(&dir)?;
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).at(&path)?;
        Ok(path)
    }
}

/// Reads, merges and validates the configuration at `path`.
pub fn load(path: &Path, env: impl IntoIterator<Item = (String, String)>, flags: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).at(path)?;
    normalize(&text, env, flags).map_err(Error::Config)
}

/// Validates `text` with environment and flag overrides applied, returning
/// every problem found rather than the first.
pub fn normalize(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
    flags: &Overrides,
) -> std::result::Result<ExperimentConfig, Vec<ConfigIssue>> {
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| vec![ConfigIssue::new("<file>", e.message().to_string())])?;
    let template = template();
    let mut issues = Vec::new();
    apply_env(&mut table, &template, env, &mut issues);
    apply_flags(&mut table, flags);
    check_shape(&mut table, &template, "", &mut issues);
    for key in ["schema_version", "name"] {
        if !table.contains_key(key) {
            issues.push(ConfigIssue::new(key, "missing required key"));
        }
    }
    match (table.contains_key("benchmark"), table.contains_key("data")) {
        (true, true) => issues.push(ConfigIssue::new("benchmark|data", "give exactly one of `benchmark` or `data`, not both")),
        (false, false) => issues.push(ConfigIssue::new("benchmark|data", "missing: exactly one of `benchmark` or `data` is required")),
        _ => {}
    }
    if let Some(Value::String(s)) = table.get("standard") {
        if Standard::parse(s).is_none() {
            issues.push(ConfigIssue::new("standard", format!("unknown standard `{s}`; expected one of {}", standard_names())));
        }
    }
    if !issues.is_empty() {
        return Err(issues);
    }
    let mut cfg: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| vec![ConfigIssue::new("<file>", e.message().to_string())])?;
    fill_defaults(&mut cfg);
    semantic_checks(&cfg, &mut issues);
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(issues)
    }
}

fn standard_names() -> String {
    Standard::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}

/// A fully populated configuration whose TOML form describes every allowed
/// key and its type.
fn template() -> Table {
    let mut cfg = ExperimentConfig::new("template");
    let mut b = BenchmarkSection::default();
    b.shifts = Some(vec![ShiftSpec::identity()]);
    cfg.benchmark = Some(b);
    cfg.data = Some(DataSection::default());
    cfg.network.encoder_blocks = Some(4);
    cfg.network.generator_blocks = Some(4);
    match Value::try_from(&cfg).expect("template serializes") {
        Value::Table(t) => t,
        _ => unreachable!("a struct serializes to a table"),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Checks `value` against `template` in place, widening integers where
/// numbers are expected.
fn check_value(value: &mut Value, template: &Value, path: &str, issues: &mut Vec<ConfigIssue>) {
    match (template, &mut *value) {
        (Value::Float(_), Value::Integer(i)) => *value = Value::Float(*i as f64),
        (Value::Float(_), Value::Float(_)) | (Value::String(_), Value::String(_)) | (Value::Boolean(_), Value::Boolean(_)) => {}
        (Value::Integer(_), Value::Integer(i)) => {
            if *i < 0 {
                issues.push(ConfigIssue::new(path, format!("must be non-negative, got {i}")));
            }
        }
        (Value::Table(t), Value::Table(v)) => check_shape(v, t, path, issues),
        (Value::Array(t), Value::Array(items)) => {
            if let Some(elem) = t.first() {
                for (i, item) in items.iter_mut().enumerate() {
                    check_value(item, elem, &format!("{path}[{i}]"), issues);
                }
            }
        }
        (t, v) => issues.push(ConfigIssue::new(path, format!("expected {}, found {}", kind(t), kind(v)))),
    }
}

fn check_shape(table: &mut Table, template: &Table, prefix: &str, issues: &mut Vec<ConfigIssue>) {
    for (key, value) in table.iter_mut() {
        let path = join(prefix, key);
        match template.get(key) {
            Some(t) => check_value(value, t, &path, issues),
            None => issues.push(ConfigIssue::new(path, "unknown key")),
        }
    }
}

fn apply_env(table: &mut Table, template: &Table, env: impl IntoIterator<Item = (String, String)>, issues: &mut Vec<ConfigIssue>) {
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, raw) in vars {
        let keys: Vec<String> = name[ENV_PREFIX.len()..].to_ascii_lowercase().split("__").map(String::from).collect();
        let path = format!("{} (from {name})", keys.join("."));
        let (prefix, leaf) = keys.split_at(keys.len() - 1);
        let leaf = &leaf[0];
        let mut t = Some(template);
        for k in prefix {
            t = match t.and_then(|t| t.get(k)) {
                Some(Value::Table(sub)) => Some(sub),
                _ => None,
            };
        }
        match t.and_then(|t| t.get(leaf)) {
            Some(kind @ (Value::String(_) | Value::Integer(_) | Value::Float(_) | Value::Boolean(_))) => {
                match parse_scalar(kind, &raw) {
                    Some(v) => {
                        if !insert_at(table, prefix, leaf, v) {
                            issues.push(ConfigIssue::new(path, "the file sets a parent of this key to a non-table value"));
                        }
                    }
                    None => issues.push(ConfigIssue::new(path, format!("cannot parse `{raw}`"))),
                }
            }
            _ => issues.push(ConfigIssue::new(path, "not an overridable scalar key")),
        }
    }
}

fn insert_at(table: &mut Table, prefix: &[String], leaf: &str, v: Value) -> bool {
    match prefix.split_first() {
        None => {
            table.insert(leaf.to_string(), v);
            true
        }
        Some((k, rest)) => match table.entry(k.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(inner) => insert_at(inner, rest, leaf, v),
            _ => false,
        },
    }
}

fn parse_scalar(template: &Value, raw: &str) -> Option<Value> {
    match template {
        Value::String(_) => Some(Value::String(raw.to_string())),
        Value::Integer(_) => raw.trim().parse::<i64>().ok().map(Value::Integer),
        Value::Float(_) => raw.trim().parse::<f64>().ok().map(Value::Float),
        Value::Boolean(_) => raw.trim().parse::<bool>().ok().map(Value::Boolean),
        _ => None,
    }
}

fn apply_flags(table: &mut Table, flags: &Overrides) {
    if let Some(seed) = flags.seed {
        table.insert("seeds".into(), Value::Array(vec![Value::Integer(seed as i64)]));
    }
    if let Some(out) = &flags.output_dir {
        table.insert("output_dir".into(), Value::String(out.to_string_lossy().into_owned()));
    }
    if let Some(s) = flags.standard {
        table.insert("standard".into(), Value::String(s.name().into()));
    }
    if flags.dry_run {
        let train = table.entry("train").or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = train {
            t.insert("dry_run".into(), Value::Boolean(true));
        }
    }
}

/// Makes every implicit default explicit so normalizing twice is a no-op.
fn fill_defaults(cfg: &mut ExperimentConfig) {
    if let Some(b) = &mut cfg.benchmark {
        if b.shifts.is_none() {
            b.shifts = Some(BenchmarkSpec::calibrated(b.num_sources, b.per_domain, b.seed).shifts);
        }
    }
    let depth = cfg.network.channels.len();
    cfg.network.encoder_blocks.get_or_insert(depth + 1);
    cfg.network.generator_blocks.get_or_insert(depth + 1);
}

fn semantic_checks(cfg: &ExperimentConfig, issues: &mut Vec<ConfigIssue>) {
    let mut fail = |path: &str, msg: String| issues.push(ConfigIssue::new(path, msg));
    if cfg.schema_version != SCHEMA_VERSION {
        fail("schema_version", format!("unsupported version {}; expected {SCHEMA_VERSION}", cfg.schema_version));
    }
    let name_ok = !cfg.name.is_empty()
        && cfg.name != "."
        && cfg.name != ".."
        && cfg.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !name_ok {
        fail("name", format!("`{}` must be non-empty and use only letters, digits, `-`, `_` or `.`", cfg.name));
    }
    if cfg.seeds.is_empty() {
        fail("seeds", "at least one seed is required".into());
    }
    let mut sorted = cfg.seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != cfg.seeds.len() {
        fail("seeds", "seeds must be distinct".into());
    }
    let (image_size, classes) = match (&cfg.benchmark, &cfg.data) {
        (Some(b), _) => {
            if let Err(e) = b.spec().validate() {
                fail("benchmark", e.to_string());
            }
            (b.image_size, b.num_classes)
        }
        (_, Some(d)) => {
            if d.target.is_empty() {
                fail("data.target", "must name the target folder".into());
            }
            (d.image_size, 2)
        }
        _ => (0, 2),
    };
    if let Err(e) = cfg.network.spec(image_size, 3, classes).validate() {
        fail("network", e.to_string());
    }
    if let Err(e) = cfg.train.config(0).validate() {
        fail("train", e.to_string());
    }
    let tf = cfg.evaluation.test_fraction;
    if !(tf > 0.0 && tf < 1.0) {
        fail("evaluation.test_fraction", format!("must be in (0, 1), got {tf}"));
    }
    for (i, v) in cfg.ablation.variants.iter().enumerate() {
        if AblationVariant::named(v, &cfg.train.weights).is_err() {
            fail(
                &format!("ablation.variants[{i}]"),
                format!("unknown variant `{v}`; expected one of {}", AblationVariant::NAMES.join(", ")),
            );
        }
    }
    for (key, grid) in [("sweep.kl_weights", &cfg.sweep.kl_weights), ("sweep.nll_weights", &cfg.sweep.nll_weights)] {
        if grid.is_empty() {
            fail(key, "grid must be non-empty".into());
        }
        for (i, w) in grid.iter().enumerate() {
            if !(w.is_finite() && *w >= 0.0) {
                fail(&format!("{key}[{i}]"), format!("must be finite and >= 0, got {w}"));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(text: &str) -> std::result::Result<ExperimentConfig, Vec<ConfigIssue>> {
        normalize(text, Vec::new(), &Overrides::default())
    }

    const MINIMAL: &str = "schema_version = 1\nname = \"demo\"\n[benchmark]\n";

    #[test]
    fn empty_file_names_every_required_key() {
        let issues = norm("").unwrap_err();
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(paths, ["schema_version", "name", "benchmark|data"]);
    }

    #[test]
    fn omitted_weights_take_the_defaults() {
        let cfg = norm(MINIMAL).unwrap();
        let w = cfg.train.weights;
        assert_eq!((w.lambda0, w.lambda1, w.lambda2, w.lambda3), (10.0, 0.1, 10.0, 0.1));
        assert_eq!(cfg.benchmark.unwrap().shifts.unwrap().len(), 4);
        assert_eq!(cfg.network.encoder_blocks, Some(4));
    }

    #[test]
    fn normalization_is_idempotent() {
        let once = norm(MINIMAL).unwrap();
        let text = once.to_toml();
        let twice = norm(&text).unwrap();
        assert_eq!(once, twice);
        assert_eq!(text, twice.to_toml());
    }

    #[test]
    fn every_violation_is_reported_with_its_path() {
        let text = "schema_version = 1\nname = \"x\"\ncolour = 3\n[benchmark]\nper_domain = \"many\"\n\
                    [train]\nlearning_rate = -1\nbatch = 4\n[train.weights]\nlambda9 = 1.0\n";
        let issues = norm(text).unwrap_err();
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        for p in ["colour", "benchmark.per_domain", "train.batch", "train.weights.lambda9"] {
            assert!(paths.contains(&p), "{p} missing from {paths:?}");
        }
    }

    #[test]
    fn semantic_errors_are_collected_together() {
        let text = "schema_version = 2\nname = \"a/b\"\nseeds = []\n[benchmark]\n[train]\nlearning_rate = 0.0\n\
                    [evaluation]\ntest_fraction = 1.5\n[ablation]\nvariants = [\"GAN\"]\n";
        let issues = norm(text).unwrap_err();
        let paths: Vec<&str> = issues.iter().map(|i| i.path.as_str()).collect();
        assert_eq!(
            paths,
            ["schema_version", "name", "seeds", "train", "evaluation.test_fraction", "ablation.variants[0]"]
        );
    }

    #[test]
    fn both_or_neither_data_source_is_rejected() {
        let both = "schema_version = 1\nname = \"x\"\n[benchmark]\n[data]\n";
        assert_eq!(norm(both).unwrap_err()[0].path, "benchmark|data");
    }

    #[test]
    fn precedence_is_flags_then_env_then_file() {
        let text = format!("{MINIMAL}[train]\nlearning_rate = 0.01\nmax_steps = 5\n");
        let env = vec![
            ("MSGAN_TRAIN__LEARNING_RATE".to_string(), "0.002".to_string()),
            ("MSGAN_SEEDS".to_string(), "9".to_string()),
            ("MSGAN_NAME".to_string(), "from-env".to_string()),
            ("OTHER".to_string(), "ignored".to_string()),
        ];
        let env: Vec<_> = env.into_iter().filter(|(k, _)| k != "MSGAN_SEEDS").collect();
        let flags = Overrides {
            seed: Some(3),
            output_dir: Some("elsewhere".into()),
            standard: Some(Standard::Oracle),
            dry_run: true,
        };
        let cfg = normalize(&text, env, &flags).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.002);
        assert_eq!(cfg.train.max_steps, 5);
        assert_eq!(cfg.name, "from-env");
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
        assert_eq!(cfg.standard, Standard::Oracle);
        assert!(cfg.train.dry_run);
    }

    #[test]
    fn env_overrides_are_type_checked() {
        let env = vec![
            ("MSGAN_TRAIN__MAX_STEPS".to_string(), "lots".to_string()),
            ("MSGAN_SEEDS".to_string(), "1".to_string()),
            ("MSGAN_NOPE".to_string(), "1".to_string()),
        ];
        let issues = normalize(MINIMAL, env, &Overrides::default()).unwrap_err();
        assert_eq!(issues.len(), 3, "{issues:?}");
        assert!(issues.iter().any(|i| i.path.starts_with("train.max_steps")));
    }

    #[test]
    fn unknown_standard_is_named() {
        let issues = norm(&format!("standard = \"best\"\n{MINIMAL}")).unwrap_err();
        assert_eq!(issues[0].path, "standard");
    }
}
