use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{boxplot_stats, DiagnosticsReport, ModalityMode};
use crate::{Error, FormatError, Result};

/// How `write_report` lays out its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    /// CSV tables: `eer.csv`, `eer_table.csv`, `angles.csv`, `silhouette.csv`.
    Tabular,
    /// One JSON document, `report.json`.
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub report: DiagnosticsReport,
}

/// Reports for one or more models plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub provenance: serde_json::Value,
    pub models: Vec<ModelReport>,
}

pub const EER_COLUMNS: [&str; 7] = ["model", "mode", "eer", "threshold", "n_target", "n_nontarget", "skipped_trials"];
pub const ANGLE_COLUMNS: [&str; 13] = [
    "model",
    "family",
    "modality",
    "identity",
    "count",
    "min",
    "q1",
    "median",
    "q3",
    "max",
    "whisker_low",
    "whisker_high",
    "n_outliers",
];

/// `x` rounded to 6 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn fmt(x: f64) -> String {
    round_sig(x).to_string()
}

fn rounded(r: &DiagnosticsReport) -> DiagnosticsReport {
    let mut r = r.clone();
    for e in &mut r.eer {
        e.result.eer = round_sig(e.result.eer);
        e.result.threshold = round_sig(e.result.threshold);
    }
    for a in std::iter::once(&mut r.audio_video).chain(&mut r.within_identity) {
        for g in &mut a.groups {
            g.angles.iter_mut().for_each(|x| *x = round_sig(*x));
        }
    }
    for c in &mut r.between_identity {
        c.degrees.as_mut_slice().iter_mut().for_each(|x| *x = round_sig(*x));
    }
    r.silhouette.audio = round_sig(r.silhouette.audio);
    r.silhouette.video = round_sig(r.silhouette.video);
    r
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.into(),
            source: FormatError::Record(format!("{other:?}")),
        },
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    super::write_bytes(path, &bytes)
}

fn eer_rows(doc: &ReportDocument) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for m in &doc.models {
        for e in &m.report.eer {
            rows.push(vec![
                m.label.clone(),
                e.mode.name().to_string(),
                fmt(e.result.eer),
                fmt(e.result.threshold),
                e.result.n_target.to_string(),
                e.result.n_nontarget.to_string(),
                e.skipped_trials.to_string(),
            ]);
        }
    }
    rows
}

/// Modes down, models across, EER in percent.
fn eer_table(doc: &ReportDocument) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["mode".to_string()];
    header.extend(doc.models.iter().map(|m| m.label.clone()));
    let rows = ModalityMode::ALL
        .iter()
        .map(|&mode| {
            let mut row = vec![mode.name().to_string()];
            row.extend(
                doc.models
                    .iter()
                    .map(|m| m.report.eer_for(mode).map(|e| fmt(100.0 * e)).unwrap_or_default()),
            );
            row
        })
        .collect();
    (header, rows)
}

fn angle_rows(doc: &ReportDocument) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for m in &doc.models {
        for a in m.report.angle_reports() {
            for g in a.groups.iter().filter(|g| !g.angles.is_empty()) {
                let b = boxplot_stats(&g.angles)?;
                let mut row = vec![
                    m.label.clone(),
                    a.family.name().to_string(),
                    a.modality.map(|x| x.to_string()).unwrap_or_else(|| "both".into()),
                    g.identity.clone(),
                    g.angles.len().to_string(),
                ];
                row.extend([b.min, b.q1, b.median, b.q3, b.max, b.whisker_low, b.whisker_high].map(fmt));
                row.push(b.outliers.len().to_string());
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Writes `doc` into `dir` and returns the files written.
pub fn write_report(dir: &Path, doc: &ReportDocument, format: ReportFormat) -> Result<Vec<PathBuf>> {
    match format {
        ReportFormat::Structured => {
            let path = dir.join("report.json");
            let out = ReportDocument {
                provenance: doc.provenance.clone(),
                models: doc
                    .models
                    .iter()
                    .map(|m| ModelReport {
                        label: m.label.clone(),
                        report: rounded(&m.report),
                    })
                    .collect(),
            };
            let mut json = serde_json::to_vec_pretty(&out).map_err(|e| Error::Degenerate(e.to_string()))?;
            json.push(b'\n');
            super::write_bytes(&path, &json)?;
            Ok(vec![path])
        }
        ReportFormat::Tabular => {
            let eer = dir.join("eer.csv");
            write_csv(&eer, &EER_COLUMNS, &eer_rows(doc))?;
            let table = dir.join("eer_table.csv");
            let (header, rows) = eer_table(doc);
            write_csv(&table, &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
            let mut out = vec![eer, table];
            out.extend(write_geometry_tables(dir, doc)?);
            Ok(out)
        }
    }
}

/// Only `angles.csv` and `silhouette.csv`.
pub fn write_geometry_tables(dir: &Path, doc: &ReportDocument) -> Result<Vec<PathBuf>> {
    let angles = dir.join("angles.csv");
    write_csv(&angles, &ANGLE_COLUMNS, &angle_rows(doc)?)?;
    let sil = dir.join("silhouette.csv");
    let sil_rows: Vec<Vec<String>> = doc
        .models
        .iter()
        .flat_map(|m| {
            let s = &m.report.silhouette;
            let d = format!("{:?}", s.distance).to_lowercase();
            [("audio", s.audio), ("video", s.video)]
                .map(|(modality, v)| vec![m.label.clone(), modality.to_string(), d.clone(), fmt(v)])
        })
        .collect();
    write_csv(&sil, &["model", "modality", "distance", "silhouette"], &sil_rows)?;
    Ok(vec![angles, sil])
}

pub fn read_report(path: &Path) -> Result<ReportDocument> {
    serde_json::from_slice(&super::read_bytes(path)?).map_err(|e| Error::Format {
        path: path.into(),
        source: FormatError::Record(e.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_identities, sample_dataset, DatasetConfig};
    use crate::eval::{run_full_evaluation, TrialConfig};
    use crate::fusion::{FusionHead, HeadConfig, HeadKind};
    use crate::rng::{stream_rng, Stream};
    use proptest::prelude::*;

    fn doc(kinds: &[HeadKind]) -> ReportDocument {
        let c = DatasetConfig {
            n_identities: 4,
            samples_per_identity: 6,
            ..DatasetConfig::default()
        };
        let s = sample_dataset(&generate_identities(&c).unwrap(), &c).unwrap();
        let t = TrialConfig {
            n_positive: 20,
            n_negative: 20,
            seed: 1,
        };
        ReportDocument {
            provenance: serde_json::json!({"seed": 1}),
            models: kinds
                .iter()
                .map(|&k| {
                    let head = FusionHead::init(&HeadConfig::desk(k), &mut stream_rng(1, Stream::Init, 0)).unwrap();
                    ModelReport {
                        label: k.to_string(),
                        report: run_full_evaluation(&head, &s, &t).unwrap(),
                    }
                })
                .collect(),
        }
    }

    fn close(a: f64, b: f64) -> bool {
        a == b || ((a - b) / a.abs().max(b.abs())).abs() < 5e-6
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig(1.0 / 3.0), 0.333333);
        assert_eq!(round_sig(123456789.0), 123457000.0);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(fmt(2.5e-7), "0.00000025");
    }

    proptest! {
        #[test]
        fn rounding_keeps_six_digits(x in -1e12f64..1e12) {
            prop_assert!(close(round_sig(x), x));
        }
    }

    #[test]
    fn tabular_has_six_eer_rows_per_model() {
        let d = doc(&[HeadKind::Mean]);
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(dir.path(), &d, ReportFormat::Tabular).unwrap();
        let mut r = csv::Reader::from_path(&files[0]).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), EER_COLUMNS);
        assert_eq!(r.records().count(), 6);
        let mut t = csv::Reader::from_path(&files[1]).unwrap();
        assert_eq!(t.records().count(), 6);
        let mut a = csv::Reader::from_path(&files[2]).unwrap();
        assert!(a.records().count() > 0);
    }

    #[test]
    fn empty_document_gives_header_only_tables() {
        let d = ReportDocument {
            provenance: serde_json::Value::Null,
            models: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(dir.path(), &d, ReportFormat::Tabular).unwrap();
        let text = std::fs::read_to_string(&files[2]).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), ANGLE_COLUMNS.join(","));
    }

    #[test]
    fn merged_table_has_one_column_per_model() {
        let d = doc(&HeadKind::ALL);
        let (header, rows) = eer_table(&d);
        assert_eq!(header, vec!["mode", "mean", "mlp", "multiview"]);
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.len() == 4));
    }

    #[test]
    fn structured_round_trip_to_six_digits() {
        let d = doc(&[HeadKind::Mean, HeadKind::MultiView]);
        let dir = tempfile::tempdir().unwrap();
        let p = write_report(dir.path(), &d, ReportFormat::Structured).unwrap().remove(0);
        let back = read_report(&p).unwrap();
        assert_eq!(back.models.len(), 2);
        for (m, b) in d.models.iter().zip(&back.models) {
            for (e, f) in m.report.eer.iter().zip(&b.report.eer) {
                assert_eq!(e.mode, f.mode);
                assert!(close(e.result.eer, f.result.eer));
            }
            for (x, y) in m.report.angle_reports().iter().zip(b.report.angle_reports()) {
                for (p, q) in x.all_angles().iter().zip(y.all_angles()) {
                    assert!(close(*p, q));
                }
            }
            assert!(close(m.report.silhouette.audio, b.report.silhouette.audio));
        }
        // already-rounded values survive a second trip exactly
        let again = dir.path().join("again");
        let p2 = write_report(&again, &back, ReportFormat::Structured).unwrap().remove(0);
        assert_eq!(read_report(&p2).unwrap(), back);
    }
}
