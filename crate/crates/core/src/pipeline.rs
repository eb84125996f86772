//! Run configuration and the four pipeline stages behind the command line:
//! generate, train, evaluate and diagnose. Every stage reads and writes the
//! io formats, so stages chain through an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arc_margin::ArcMarginHead;
use crate::data::{class_labels, generate_identities, sample_dataset, split_three, DatasetConfig, LabeledSet, Sample};
use crate::eval::{
    boxplot_stats, diagnose, null_representation_probe, run_full_evaluation, AngleFamily, Distance, NullProbe,
    TrialConfig,
};
use crate::fusion::{FusionHead, HeadConfig, HeadKind, Modality};
use crate::io::{
    load_checkpoint, read_embeddings, save_checkpoint, write_boxplot_svg, write_geometry_tables, write_epoch_log, write_report,
    write_embeddings, BoxGroup, Checkpoint, ModelReport, Provenance, ReportDocument, ReportFormat,
};
use crate::rng::{stream_rng, Stream};
use crate::training::{train_run, TrainOutcome, TrainingConfig};
use crate::{Error, Result};

/// Input and embedding widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 16-d audio, 32-d video, 8-d embedding, MLP hidden 24.
    Desk,
    /// 356-d audio, 2048-d video, 256-d embedding, MLP hidden 1330.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::config("profile", format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub audio_noise_sigma: f64,
    pub video_noise_sigma: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DataSection {
            n_identities: d.n_identities,
            samples_per_identity: d.samples_per_identity,
            audio_noise_sigma: d.audio_noise_sigma,
            video_noise_sigma: d.video_noise_sigma,
            val_fraction: 0.15,
            test_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrialSection {
    pub n_positive: usize,
    pub n_negative: usize,
    pub distance: Distance,
}

impl Default for TrialSection {
    fn default() -> Self {
        let t = TrialConfig::default();
        TrialSection {
            n_positive: t.n_positive,
            n_negative: t.n_negative,
            distance: Distance::Cosine,
        }
    }
}

/// Every knob of a run. Read from TOML; command-line flags are applied on
/// top. The single `seed` feeds every random stream, including the
/// `training.seed` field, which is overwritten on resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub head: HeadKind,
    pub data: DataSection,
    pub training: TrainingConfig,
    pub trials: TrialSection,
    /// Where outputs go. Not part of the provenance echo, so moving a run
    /// does not change its bytes.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            profile: Profile::Desk,
            head: HeadKind::Mean,
            data: DataSection::default(),
            training: TrainingConfig::default(),
            trials: TrialSection::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.message().to_string()))
    }

    /// Seeds propagated and all sections validated.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut c = self.clone();
        c.training.seed = c.seed;
        c.dataset().validate()?;
        c.head_config(c.head).validate()?;
        c.training.validate()?;
        let (v, t) = (c.data.val_fraction, c.data.test_fraction);
        if !(v > 0.0 && t > 0.0 && v + t < 1.0) {
            return Err(Error::config("val_fraction", "val and test fractions must be positive and sum below 1"));
        }
        Ok(c)
    }

    pub fn dataset(&self) -> DatasetConfig {
        let h = self.head_config(self.head);
        DatasetConfig {
            n_identities: self.data.n_identities,
            samples_per_identity: self.data.samples_per_identity,
            d_audio: h.d_audio,
            d_video: h.d_video,
            audio_noise_sigma: self.data.audio_noise_sigma,
            video_noise_sigma: self.data.video_noise_sigma,
            seed: self.seed,
        }
    }

    pub fn head_config(&self, kind: HeadKind) -> HeadConfig {
        match self.profile {
            Profile::Desk => HeadConfig::desk(kind),
            Profile::Full => HeadConfig::full(kind),
        }
    }

    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            n_positive: self.trials.n_positive,
            n_negative: self.trials.n_negative,
            seed: self.seed,
        }
    }

    /// The provenance echo written into every output.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

pub const TRAIN_FILE: &str = "train.avfe";
pub const VAL_FILE: &str = "val.avfe";
pub const TEST_FILE: &str = "test.avfe";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Degenerate(e.to_string()))?;
    bytes.push(b'\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Synthetic dataset split into train/val/test embedding files, plus a
/// `generate.json` provenance sidecar.
pub fn cmd_generate(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let c = config.resolved()?;
    let d = c.dataset();
    let samples = sample_dataset(&generate_identities(&d)?, &d)?;
    let splits = split_three(&samples, c.data.val_fraction, c.data.test_fraction, c.seed)?;
    let dir = &c.output_dir;
    let mut out = Vec::new();
    for (name, part) in [(TRAIN_FILE, &splits.train), (VAL_FILE, &splits.val), (TEST_FILE, &splits.test)] {
        let p = dir.join(name);
        write_embeddings(&p, part)?;
        out.push(p);
    }
    let sidecar = dir.join("generate.json");
    let counts: BTreeMap<&str, usize> = [
        ("train", splits.train.len()),
        ("val", splits.val.len()),
        ("test", splits.test.len()),
    ]
    .into();
    write_json(&sidecar, &serde_json::json!({ "config": c.echo(), "counts": counts }))?;
    out.push(sidecar);
    log::info!("wrote {} train, {} val, {} test samples", splits.train.len(), splits.val.len(), splits.test.len());
    Ok(out)
}

fn load_samples(path: &Path, head: &HeadConfig) -> Result<Vec<Sample>> {
    let f = read_embeddings(path)?;
    if f.d_audio != head.d_audio || f.d_video != head.d_video {
        return Err(Error::config(
            "profile",
            format!(
                "{} holds {}/{}-d inputs but the profile expects {}/{}",
                path.display(),
                f.d_audio,
                f.d_video,
                head.d_audio,
                head.d_video
            ),
        ));
    }
    if f.samples.is_empty() {
        return Err(Error::Degenerate(format!("{} holds no samples", path.display())));
    }
    Ok(f.samples)
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub epoch_log: PathBuf,
    pub outcome: TrainOutcome,
}

/// Checkpoint `<head>.avfc` and epoch log `<head>.epochs.jsonl` in the
/// output directory. Class labels are the identities of the training file.
pub fn cmd_train(config: &RunConfig, train_path: &Path, val_path: &Path) -> Result<TrainArtifacts> {
    let c = config.resolved()?;
    let hc = c.head_config(c.head);
    let train = load_samples(train_path, &hc)?;
    let val = load_samples(val_path, &hc)?;
    let labels = class_labels(&train);
    let train_set = LabeledSet::new(&train, &labels)?;
    let val_set = LabeledSet::new(&val, &labels)?;
    let mut init = stream_rng(c.seed, Stream::Init, 0);
    let head = FusionHead::init(&hc, &mut init)?;
    let arc = ArcMarginHead::init(hc.d_embed, labels.len(), c.training.arc_scale, c.training.arc_margin, &mut init)?;
    let outcome = train_run(head, arc, &train_set, &val_set, &c.training)?;
    let best = outcome.best_record();
    let ck = Checkpoint {
        head: outcome.head.clone(),
        arc: outcome.arc.clone(),
        class_labels: labels,
        provenance: Provenance {
            epoch: best.epoch,
            val_accuracy: best.val_accuracy,
            training: c.training.clone(),
            run_config: c.echo(),
        },
    };
    let checkpoint = c.output_dir.join(format!("{}.avfc", c.head));
    let epoch_log = c.output_dir.join(format!("{}.epochs.jsonl", c.head));
    save_checkpoint(&checkpoint, &ck)?;
    write_epoch_log(&epoch_log, &outcome.records)?;
    Ok(TrainArtifacts {
        checkpoint,
        epoch_log,
        outcome,
    })
}

fn model_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<(String, Checkpoint)>> {
    if paths.is_empty() {
        return Err(Error::config("checkpoint", "at least one checkpoint is required"));
    }
    let mut out: Vec<(String, Checkpoint)> = Vec::new();
    for p in paths {
        let label = model_label(p);
        if out.iter().any(|(l, _)| *l == label) {
            return Err(Error::config("checkpoint", format!("two checkpoints share the label '{label}'")));
        }
        out.push((label, load_checkpoint(p)?));
    }
    Ok(out)
}

fn provenance(c: &RunConfig, models: &[(String, Checkpoint)]) -> serde_json::Value {
    let models: Vec<serde_json::Value> = models
        .iter()
        .map(|(label, ck)| {
            serde_json::json!({
                "label": label,
                "head": ck.head.kind(),
                "epoch": ck.provenance.epoch,
                "val_accuracy": ck.provenance.val_accuracy,
                "run_config": ck.provenance.run_config,
            })
        })
        .collect();
    serde_json::json!({ "config": c.echo(), "models": models })
}

/// Six-mode EERs for every checkpoint on the test file: `report.json` plus
/// the CSV tables, including the merged mode × model table `eer_table.csv`.
pub fn cmd_evaluate(config: &RunConfig, checkpoints: &[PathBuf], test_path: &Path) -> Result<Vec<PathBuf>> {
    let c = config.resolved()?;
    let models = load_models(checkpoints)?;
    let trials = c.trial_config();
    let mut reports = Vec::new();
    for (label, ck) in &models {
        let samples = load_samples(test_path, &ck.head.config())?;
        reports.push(ModelReport {
            label: label.clone(),
            report: run_full_evaluation(&ck.head, &samples, &trials)?,
        });
    }
    let doc = ReportDocument {
        provenance: provenance(&c, &models),
        models: reports,
    };
    let mut out = write_report(&c.output_dir, &doc, ReportFormat::Structured)?;
    out.extend(write_report(&c.output_dir, &doc, ReportFormat::Tabular)?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub label: String,
    pub head: HeadKind,
    pub silhouette_audio: f64,
    pub silhouette_video: f64,
    pub median_audio_video_angle: Option<f64>,
    /// Only for mean-fusion heads.
    pub null_probe: Option<NullProbe>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub provenance: serde_json::Value,
    pub distance: Distance,
    pub models: Vec<ModelSummary>,
}

fn svg_name(family: AngleFamily, modality: Option<Modality>) -> String {
    match modality {
        Some(m) => format!("{}_{m}.svg", family.name()),
        None => format!("{}.svg", family.name()),
    }
}

/// Angle tables, one SVG boxplot per angle family and modality (boxes per
/// identity and model) and `summary.json` with silhouettes and warnings,
/// all under `<output_dir>/diagnostics`.
pub fn cmd_diagnose(config: &RunConfig, checkpoints: &[PathBuf], embeddings: &Path) -> Result<Vec<PathBuf>> {
    let c = config.resolved()?;
    let models = load_models(checkpoints)?;
    let dir = c.output_dir.join("diagnostics");
    let trials = c.trial_config();
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for (label, ck) in &models {
        let samples = load_samples(embeddings, &ck.head.config())?;
        let report = diagnose(&ck.head, &samples, &trials, c.trials.distance)?;
        let mut warnings = report.warnings.clone();
        let null_probe = match ck.head.kind() {
            HeadKind::Mean => match null_representation_probe(&ck.head, &samples) {
                Ok(p) => Some(p),
                Err(e) => {
                    warnings.push(format!("null probe: {e}"));
                    None
                }
            },
            _ => None,
        };
        let av = report.audio_video.all_angles();
        summaries.push(ModelSummary {
            label: label.clone(),
            head: ck.head.kind(),
            silhouette_audio: report.silhouette.audio,
            silhouette_video: report.silhouette.video,
            median_audio_video_angle: boxplot_stats(&av).ok().map(|b| b.median),
            null_probe,
            warnings,
        });
        reports.push(ModelReport {
            label: label.clone(),
            report,
        });
    }

    let mut out = Vec::new();
    // one figure per family/modality, in the fixed family order
    let n_families = reports[0].report.angle_reports().len();
    for f in 0..n_families {
        let per_model: Vec<_> = reports.iter().map(|m| (m.label.clone(), m.report.angle_reports().swap_remove(f))).collect();
        let (family, modality) = (per_model[0].1.family, per_model[0].1.modality);
        let mut groups: BTreeMap<String, Vec<(String, crate::eval::BoxplotStats)>> = BTreeMap::new();
        for (label, r) in &per_model {
            for g in r.groups.iter().filter(|g| !g.angles.is_empty()) {
                groups
                    .entry(g.identity.clone())
                    .or_default()
                    .push((label.clone(), boxplot_stats(&g.angles)?));
            }
        }
        let groups: Vec<BoxGroup> = groups.into_iter().map(|(label, boxes)| BoxGroup { label, boxes }).collect();
        let title = match modality {
            Some(m) => format!("{} angles ({m})", family.name()),
            None => format!("{} angles", family.name()),
        };
        let p = dir.join(svg_name(family, modality));
        write_boxplot_svg(&p, &title, &groups)?;
        out.push(p);
    }

    let doc = ReportDocument {
        provenance: provenance(&c, &models),
        models: reports,
    };
    out.extend(write_geometry_tables(&dir, &doc)?);
    let summary = DiagnoseSummary {
        provenance: doc.provenance,
        distance: c.trials.distance,
        models: summaries,
    };
    for m in &summary.models {
        for w in &m.warnings {
            log::warn!("{}: {w}", m.label);
        }
    }
    let p = dir.join("summary.json");
    write_json(&p, &summary)?;
    out.push(p);
    Ok(out)
}

#[cfg(test)]
mod tests;
