//! Experiment orchestration: run configuration, per-fold pretraining and
//! adaptation, ablation grids, MI curves and oracle reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{make_folds, parse_tudataset_slice, synth_motif_corpus, Dataset, FoldPlan, MotifSpec};
use crate::models::{load_checkpoint, save_checkpoint, Checkpoint, DibodModel, ModelConfig, Pooling};
use crate::objectives::{Ablation, TrainPhase};
use crate::par::{self, Exec};
use crate::rng::derive_seed;
use crate::theory::{self, check_lemma1, JointTable, OracleEntry};
use crate::training::{run_phase, MetricsLog, PhaseResult, Split, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Generated cycle-versus-star corpus.
    Synthetic {
        variant: String,
        graphs: usize,
        seed: u64,
    },
    /// TUDataset files `<root>/<name>_*.txt`, optionally the first `limit`
    /// graphs.
    Tudataset {
        root: PathBuf,
        name: String,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic { variant, graphs, seed } => {
                let spec = MotifSpec::by_name(variant)?;
                synth_motif_corpus(*graphs, *seed, &spec)
            }
            DatasetSpec::Tudataset { root, name, limit } => {
                if !root.is_dir() {
                    return Err(Error::io(
                        root,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
                    ));
                }
                parse_tudataset_slice(root, name, *limit)
            }
        }
    }
}

/// Architecture options; view and class counts come from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub adapter_width: usize,
    pub hidden: usize,
    pub gcn_layers: usize,
    pub proj_dim: usize,
    pub critic_hidden: usize,
    pub pooling: Pooling,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let c = ModelConfig::new(2, 2);
        Self {
            adapter_width: c.adapter_width,
            hidden: c.hidden,
            gcn_layers: c.gcn_layers,
            proj_dim: c.proj_dim,
            critic_hidden: c.critic_hidden,
            pooling: c.pooling,
        }
    }
}

impl ModelOptions {
    pub fn config(&self, num_views: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            num_views,
            num_classes,
            adapter_width: self.adapter_width,
            hidden: self.hidden,
            gcn_layers: self.gcn_layers,
            proj_dim: self.proj_dim,
            critic_hidden: self.critic_hidden,
            pooling: self.pooling,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: DatasetSpec,
    #[serde(default)]
    pub target: Option<DatasetSpec>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Runs only the first `max_folds` folds when set.
    #[serde(default)]
    pub max_folds: Option<usize>,
    /// Source fold whose pretrained model feeds adaptation.
    #[serde(default)]
    pub pretrain_fold: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    1
}

fn default_folds() -> usize {
    10
}

fn default_epochs() -> usize {
    100
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn new(source: DatasetSpec) -> Self {
        Self {
            source,
            target: None,
            seed: default_seed(),
            folds: default_folds(),
            max_folds: None,
            pretrain_fold: 0,
            epochs: default_epochs(),
            ablation: Ablation::None,
            train: TrainConfig::default(),
            model: ModelOptions::default(),
            output_dir: default_output(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(config_field(&e, text), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds", "need at least 2 folds"));
        }
        if let Some(m) = self.max_folds {
            if m == 0 || m > self.folds {
                return Err(Error::config("max_folds", format!("{m} is outside 1..={}", self.folds)));
            }
        }
        if self.pretrain_fold >= self.folds {
            return Err(Error::config("pretrain_fold", format!("{} >= {} folds", self.pretrain_fold, self.folds)));
        }
        self.train.validate()?;
        for spec in std::iter::once(&self.source).chain(self.target.as_ref()) {
            if let DatasetSpec::Tudataset { root, .. } = spec {
                if !root.is_dir() {
                    return Err(Error::io(
                        root,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Digest of every setting except the output directory.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    fn fold_count(&self) -> usize {
        self.max_folds.unwrap_or(self.folds)
    }

    fn target(&self) -> Result<&DatasetSpec> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::config("target", "adaptation needs a target dataset"))
    }

    fn model_config(&self, num_classes: usize) -> ModelConfig {
        self.model.config(self.train.views.len(), num_classes)
    }
}

fn config_field(e: &toml::de::Error, text: &str) -> String {
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    e.span().and_then(|span| key_at(text, span.start)).unwrap_or_else(|| "config".to_string())
}

/// Dotted key of the `key = value` line containing byte `pos`.
fn key_at(text: &str, pos: usize) -> Option<String> {
    let mut table = String::new();
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if pos < start + line.len() {
            let key = t.split('=').next()?.trim();
            if key.is_empty() || t.starts_with('[') {
                return (!table.is_empty()).then_some(table);
            }
            return Some(if table.is_empty() { key.to_string() } else { format!("{table}.{key}") });
        }
        start += line.len();
    }
    None
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub test_accuracy: f64,
    pub metrics_path: PathBuf,
    pub metrics_sha256: String,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    pub ssr_path: Option<PathBuf>,
    pub teacher_checksum_start: String,
    pub teacher_checksum_end: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub ablation: Ablation,
    pub config: RunConfig,
    pub config_fingerprint: String,
    pub folds: Vec<FoldRecord>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Digest of the configuration, every accuracy bit pattern and every
    /// metrics file.
    pub fingerprint: String,
}

impl RunReport {
    fn new(command: &str, ablation: Ablation, config: &RunConfig, folds: Vec<FoldRecord>) -> Self {
        let accuracies: Vec<f64> = folds.iter().map(|f| f.test_accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        let config_fingerprint = config.fingerprint();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(ablation.name().as_bytes());
        h.update(config_fingerprint.as_bytes());
        for f in &folds {
            h.update(f.test_accuracy.to_bits().to_le_bytes());
            h.update(f.metrics_sha256.as_bytes());
        }
        Self {
            command: command.into(),
            ablation,
            config: config.clone(),
            config_fingerprint,
            folds,
            accuracies,
            mean,
            std,
            fingerprint: hex::encode(h.finalize()),
        }
    }

    /// `mean ± std` in percent, two decimals.
    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }

    pub fn teacher_unchanged(&self) -> bool {
        self.folds.iter().all(|f| f.teacher_checksum_start == f.teacher_checksum_end)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &serde_json::to_string_pretty(self)?)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fold_record(dir: &Path, fold: usize, res: &PhaseResult, checkpoint: Option<PathBuf>) -> Result<FoldRecord> {
    let csv = res.log.to_csv();
    let metrics_path = dir.join("metrics.csv");
    write_file(&metrics_path, &csv)?;
    write_file(&dir.join("batches.csv"), &res.log.batches_csv())?;
    let ssr_path = match &res.ssr {
        Some(s) => {
            let p = dir.join("ssr.json");
            write_file(&p, &serde_json::to_string_pretty(s)?)?;
            Some(p)
        }
        None => None,
    };
    Ok(FoldRecord {
        fold,
        test_accuracy: res.log.last(Split::Test).map_or(f64::NAN, |r| r.accuracy),
        metrics_path,
        metrics_sha256: sha_hex(csv.as_bytes()),
        checkpoint_path: checkpoint,
        ssr_path,
        teacher_checksum_start: res.teacher_checksum_start.clone(),
        teacher_checksum_end: res.teacher_checksum_end.clone(),
    })
}

fn fold_seed(cfg: &RunConfig, fold: usize) -> u64 {
    derive_seed(cfg.seed, &[0x9e7, fold as u64])
}

/// Pretrains a fresh model on fold `fold` of the source.
pub fn pretrain_fold(
    cfg: &RunConfig,
    src: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    ablation: Ablation,
) -> Result<(DibodModel, PhaseResult)> {
    let seed = fold_seed(cfg, fold);
    let mut model = DibodModel::new(cfg.model_config(src.num_classes), src.feature_dim, cfg.train.critic_lr, seed)?;
    let mut train = cfg.train.clone();
    train.weights = ablation.apply(&cfg.train.weights);
    let res = run_phase(&mut model, src, plan, fold, TrainPhase::pretrain(cfg.epochs), &train, seed)?;
    Ok((model, res))
}

/// Per-fold pretraining on the source; writes checkpoints, logs and
/// `pretrain/report.json`.
pub fn cmd_pretrain(cfg: &RunConfig, exec: Exec) -> Result<RunReport> {
    cfg.validate()?;
    let src = cfg.source.load()?;
    let plan = make_folds(&src, cfg.folds, cfg.seed)?;
    let root = cfg.output_dir.join("pretrain");
    let records = par::map_range(exec, cfg.fold_count(), |fold| -> Result<FoldRecord> {
        let (model, res) = pretrain_fold(cfg, &src, &plan, fold, cfg.ablation)?;
        let dir = root.join(format!("fold{fold}"));
        let ck = dir.join("model.json");
        save_checkpoint(&model, &ck)?;
        fold_record(&dir, fold, &res, Some(ck))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let report = RunReport::new("pretrain", cfg.ablation, cfg, records);
    report.save(&root.join("report.json"))?;
    Ok(report)
}

/// Default checkpoint consumed by adaptation.
pub fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .join("pretrain")
        .join(format!("fold{}", cfg.pretrain_fold))
        .join("model.json")
}

fn adapt_all(cfg: &RunConfig, model: &DibodModel, ablation: Ablation, label: &str, exec: Exec) -> Result<RunReport> {
    let tgt = cfg.target()?.load()?;
    if tgt.num_classes != model.cfg.num_classes {
        return Err(Error::config(
            "target",
            format!("target has {} classes, model has {}", tgt.num_classes, model.cfg.num_classes),
        ));
    }
    let plan = make_folds(&tgt, cfg.folds, cfg.seed)?;
    let mut train = cfg.train.clone();
    train.weights = ablation.apply(&cfg.train.weights);
    let root = cfg.output_dir.join(label);
    let records = par::map_range(exec, cfg.fold_count(), |fold| -> Result<FoldRecord> {
        let mut m = model.clone();
        let phase = TrainPhase::adapt_with(cfg.epochs, ablation);
        let res = run_phase(&mut m, &tgt, &plan, fold, phase, &train, fold_seed(cfg, fold))?;
        fold_record(&root.join(format!("fold{fold}")), fold, &res, None)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let report = RunReport::new("adapt", ablation, cfg, records);
    report.save(&root.join("report.json"))?;
    Ok(report)
}

/// Expected architecture of checkpoints for this configuration.
pub fn expected_model_config(cfg: &RunConfig) -> Result<ModelConfig> {
    let src = cfg.source.load()?;
    Ok(cfg.model_config(src.num_classes))
}

/// Frozen-teacher adaptation from `checkpoint` on every target fold.
pub fn cmd_adapt(cfg: &RunConfig, checkpoint: &Path, exec: Exec) -> Result<RunReport> {
    cfg.validate()?;
    let expected = expected_model_config(cfg)?;
    let model = load_checkpoint(checkpoint, &expected, cfg.train.critic_lr)?;
    adapt_all(cfg, &model, cfg.ablation, &format!("adapt/{}", cfg.ablation.name()), exec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub cell: String,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, a: Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.ablation == a)
    }

    /// Plain-text grid, one line per variant.
    pub fn render(&self) -> String {
        let mut s = String::from("variant\taccuracy (%)\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\n", r.ablation.name(), r.cell));
        }
        s
    }
}

/// Source model for `ablation`, normalized through a checkpoint round trip so
/// that it matches a model loaded from disk.
fn ablation_source_model(cfg: &RunConfig, src: &Dataset, plan: &FoldPlan, ablation: Ablation) -> Result<DibodModel> {
    let (model, _) = pretrain_fold(cfg, src, plan, cfg.pretrain_fold, ablation)?;
    Checkpoint::capture(&model).restore(&model.cfg, cfg.train.critic_lr)
}

/// Runs every ablation variant with shared fold seeds.
pub fn cmd_ablate(cfg: &RunConfig, exec: Exec) -> Result<AblationTable> {
    cfg.validate()?;
    let src = cfg.source.load()?;
    let plan = make_folds(&src, cfg.folds, cfg.seed)?;
    let base = ablation_source_model(cfg, &src, &plan, Ablation::None)?;
    let mut rows = Vec::new();
    for a in Ablation::ALL {
        let model = if a.changes_pretraining() {
            ablation_source_model(cfg, &src, &plan, a)?
        } else {
            base.clone()
        };
        let report = adapt_all(cfg, &model, a, &format!("ablate/{}", a.name()), exec)?;
        rows.push(AblationRow {
            ablation: a,
            cell: report.cell(),
            report,
        });
    }
    let table = AblationTable { rows };
    write_file(&cfg.output_dir.join("ablate").join("table.json"), &serde_json::to_string_pretty(&table)?)?;
    write_file(&cfg.output_dir.join("ablate").join("table.txt"), &table.render())?;
    Ok(table)
}

pub const MI_CURVE_HEADER: &str = "epoch,I_zvs_x_proxy,I_zvs_y,I_zvr_y";

/// Training-split MI columns of each metrics file, concatenated in order.
pub fn cmd_mi_curve(paths: &[PathBuf]) -> Result<String> {
    let mut out = String::from(MI_CURVE_HEADER);
    out.push('\n');
    for path in paths {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::format(path.display().to_string(), format!("missing column `{name}`")))
        };
        let cols = [col("epoch")?, col("I_zvs_x_proxy")?, col("I_zvs_y")?, col("I_zvr_y")?];
        let split = headers.iter().position(|h| h == "split");
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            if split.is_some_and(|s| rec.get(s) != Some(Split::Train.name())) {
                continue;
            }
            let fields: Vec<&str> = cols.iter().map(|&c| rec.get(c).unwrap_or("")).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path.display().to_string(), e.to_string())
}

/// Parses a metrics CSV produced by [`MetricsLog::to_csv`] back into
/// `(epoch, split, values)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<(usize, String, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::format(path.display().to_string(), format!("bad {what}"));
        let epoch = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("epoch"))?;
        let split = rec.get(1).ok_or_else(|| bad("split"))?.to_string();
        let vals = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        rows.push((epoch, split, vals));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
    pub all_pass: bool,
}

/// Constructed lemma and theorem checks, plus Lemma-1 on `table` if given.
pub fn cmd_oracle_check(seed: u64, table: Option<&Path>) -> Result<OracleReport> {
    let mut entries = theory::run_all(seed)?;
    if let Some(path) = table {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: JointTable =
            serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        t.validate()?;
        let r = check_lemma1(&t)?;
        entries.push(OracleEntry {
            name: format!("lemma1_table:{}", path.display()),
            expectation: "equivalence holds when both conditions hold".into(),
            pass: !r.conditions_hold || r.equivalence_holds,
            report: serde_json::to_value(&r)?,
        });
    }
    let all_pass = entries.iter().all(|e| e.pass);
    Ok(OracleReport { entries, all_pass })
}

/// Reads the training-split rows of a log written by [`MetricsLog::to_csv`].
pub fn load_log_rows(path: &Path) -> Result<MetricsLog> {
    let rows = read_metrics(path)?;
    let mut log = MetricsLog::default();
    for (epoch, split, v) in rows {
        if v.len() != 13 {
            return Err(Error::format(path.display().to_string(), "unexpected column count"));
        }
        let split = match split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            s => return Err(Error::format(path.display().to_string(), format!("unknown split `{s}`"))),
        };
        log.rows.push(crate::training::EpochRow {
            epoch,
            split,
            losses: crate::objectives::LossValues {
                task: v[0],
                ibt: v[1],
                ibs: v[2],
                recon: v[3],
                ckd: v[4],
                orth: v[5],
                total: v[6],
            },
            accuracy: v[7],
            teacher_accuracy: v[8],
            student_accuracy: v[9],
            i_zvs_x_proxy: v[10],
            i_zvs_y: v[11],
            i_zvr_y: v[12],
        });
    }
    Ok(log)
}
