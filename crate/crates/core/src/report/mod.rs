//! Embedding projections, CSV tables, SVG figures and run manifests.

mod projection;
mod svg;

pub use projection::{project_embeddings, ProjectionMethod, ProjectionResult};
pub use svg::{bar_chart, distribution_plot, scatter_plot, violin_plot};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::csv_error;
use crate::error::{Error, Result};
use crate::metrics::{ce_score, CeInputs, CeWeights, Improvement, LexicalProfile, MetricRow, QuestionMetrics};
use crate::stats::{ConfidenceInterval, TestResult};

/// Published component values and composite scores the formula is checked against.
pub const REFERENCE_BEFORE: ([f64; 3], f64) = ([0.111, 0.979, 0.356], 0.49);
pub const REFERENCE_AFTER: ([f64; 3], f64) = ([0.151, 0.412, 0.4145], 0.70);

/// Per-model test and interval results, serialized as `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StatsDocument {
    pub test: String,
    pub bootstrap_method: String,
    pub models: BTreeMap<String, ModelStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub wilcoxon: Option<TestResult<f64>>,
    pub sem_sim_v1: Option<ConfidenceInterval<f64>>,
    pub sem_sim_v2: Option<ConfidenceInterval<f64>>,
}

impl StatsDocument {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize") + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub(crate) fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub status: String,
}

/// Everything needed to replay a run: seeds, configuration and input hashes, provider
/// identities, and what each stage produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub config_sha256: String,
    pub input_sha256: BTreeMap<String, String>,
    pub providers: BTreeMap<String, String>,
    pub lexicon_sha256: String,
    pub settings: BTreeMap<String, String>,
    pub stages: Vec<StageStatus>,
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    /// `<first 12 hex digits of the config hash>-s<seed>`.
    pub fn run_id(config_sha256: &str, seed: u64) -> String {
        format!("{}-s{seed}", &config_sha256[..12.min(config_sha256.len())])
    }

    pub fn stage(&mut self, stage: &str, status: impl Into<String>) {
        self.stages.push(StageStatus { stage: stage.into(), status: status.into() });
    }

    /// Records the SHA-256 of every regular file below `root` (manifest excluded).
    pub fn record_artifacts(&mut self, root: &Path) -> Result<()> {
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            for entry in entries {
                let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                    let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                    self.artifacts.insert(rel, sha256_file(&path)?);
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::scalar::hex(&Sha256::digest(&bytes)))
}

/// Inputs of [`build_report`]. Slices keyed by model follow the order of `rows`.
pub struct ReportInputs<'a> {
    pub rows: &'a [MetricRow<f64>],
    pub per_question: &'a [Vec<QuestionMetrics<f64>>],
    pub references: &'a [LexicalProfile<f64>],
    pub stats: &'a StatsDocument,
    pub projections: &'a [(String, ProjectionResult<f64>)],
    pub improvements: Option<&'a [Improvement<f64>]>,
    pub weights: CeWeights<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub files: Vec<PathBuf>,
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `tables/`, `figures/` and `projections/` under `out_dir`.
pub fn build_report(inputs: &ReportInputs<'_>, out_dir: &Path) -> Result<ReportBundle> {
    if inputs.rows.is_empty() {
        return Err(Error::invalid("report needs at least one metric row"));
    }
    let tables = out_dir.join("tables");
    let figures = out_dir.join("figures");
    let projections = out_dir.join("projections");
    for d in [&tables, &figures, &projections] {
        mkdir(d)?;
    }
    let mut files = Vec::new();
    let mut table = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let p = tables.join(name);
        write_table(&p, header, &rows)?;
        files.push(p);
        Ok(())
    };

    table(
        "table3_ce_scores.csv",
        &["Model", "CE Score", "n_present", "n_missing"],
        inputs.rows.iter().map(|r| vec![r.model_name.clone(), f6(r.ce), r.n_present.to_string(), r.n_missing.to_string()]).collect(),
    )?;
    let mut lexical: Vec<Vec<String>> = inputs
        .references
        .iter()
        .map(|p| vec![p.name.clone(), f6(p.ttr), f6(p.avg_length_words), f6(p.cooccurrence_rate), p.n.to_string()])
        .collect();
    lexical.extend(inputs.rows.iter().map(|r| {
        vec![r.model_name.clone(), f6(r.ttr), f6(r.avg_length_words), f6(r.cooccurrence_rate), r.n_present.to_string()]
    }));
    table("table4_lexical.csv", &["Entity", "TTR", "Avg. Response Length (words)", "Co-occurrence", "n"], lexical)?;
    let ci = |c: Option<&ConfidenceInterval<f64>>| match c {
        Some(c) => [f6(c.lower), f6(c.upper)],
        None => ["n/a".into(), "n/a".into()],
    };
    table(
        "table5_similarity.csv",
        &["Model", "Sem. Sim. (V1)", "V1 CI Lower", "V1 CI Upper", "Sem. Sim. (V2)", "V2 CI Lower", "V2 CI Upper", "n_present"],
        inputs
            .rows
            .iter()
            .map(|r| {
                let s = inputs.stats.models.get(&r.model_name);
                let [l1, u1] = ci(s.and_then(|s| s.sem_sim_v1.as_ref()));
                let [l2, u2] = ci(s.and_then(|s| s.sem_sim_v2.as_ref()));
                vec![r.model_name.clone(), f6(r.sem_sim_v1), l1, u1, f6(r.sem_sim_v2), l2, u2, r.n_present.to_string()]
            })
            .collect(),
    )?;
    table(
        "keyword_frequency.csv",
        &["Model", "Key. Freq.", "n_present", "n_missing"],
        inputs.rows.iter().map(|r| vec![r.model_name.clone(), f6(r.keyword_freq), r.n_present.to_string(), r.n_missing.to_string()]).collect(),
    )?;
    if let Some(imp) = inputs.improvements {
        table(
            "table7_improvement.csv",
            &["Metric", "Before", "After", "% Impr."],
            imp.iter()
                .map(|i| {
                    let pct = i.percent_change.map_or_else(|| "n/a".to_string(), |p| format!("{p:+.1}"));
                    vec![i.metric.to_string(), format!("{:.3}", i.before), format!("{:.3}", i.after), pct]
                })
                .collect(),
        )?;
    }
    table(
        "ce_reference_check.csv",
        &["Source", "Key. Freq.", "Sentiment Diff.", "Sem. Sim.", "CE (formula)", "CE (reported)", "Difference"],
        [("reference before fine-tuning", REFERENCE_BEFORE), ("reference after fine-tuning", REFERENCE_AFTER)]
            .into_iter()
            .map(|(name, ([kf, ds, sim], reported))| {
                let ce = ce_score(&CeInputs::new(kf, ds, sim), &inputs.weights);
                vec![name.into(), f6(kf), f6(ds), f6(sim), f6(ce), format!("{reported:.2}"), format!("{:+.4}", ce - reported)]
            })
            .collect(),
    )?;

    let p = figures.join("keyword_frequency.svg");
    let bars: Vec<(String, f64)> = inputs.rows.iter().map(|r| (r.model_name.clone(), r.keyword_freq)).collect();
    bar_chart(&p, "Normalized regional keyword frequency per response", "keyword frequency", &bars)?;
    files.push(p);

    let sentiment: Vec<(String, Vec<f64>)> = inputs
        .rows
        .iter()
        .zip(inputs.per_question)
        .map(|(r, q)| (r.model_name.clone(), q.iter().map(|m| m.s_llm).collect()))
        .collect();
    let p = figures.join("sentiment_violin.svg");
    violin_plot(&p, "Sentiment score distribution", "sentiment", &sentiment)?;
    files.push(p);

    let diffs: Vec<(String, Vec<f64>)> = inputs
        .rows
        .iter()
        .zip(inputs.per_question)
        .map(|(r, q)| (r.model_name.clone(), q.iter().map(|m| m.user_minus_llm()).collect()))
        .collect();
    let p = figures.join("sentiment_difference.svg");
    distribution_plot(&p, "Distribution of sentiment differences (User - LLM)", "User - LLM", &diffs, 20)?;
    files.push(p);

    for (name, proj) in inputs.projections {
        let stem = format!("{name}_{}", proj.method);
        let csv_path = projections.join(format!("{stem}.csv"));
        write_table(
            &csv_path,
            &["x", "y", "label"],
            &proj.coords.iter().zip(&proj.labels).map(|(c, l)| vec![f6(c[0]), f6(c[1]), l.clone()]).collect::<Vec<_>>(),
        )?;
        files.push(csv_path);
        let svg_path = figures.join(format!("projection_{stem}.svg"));
        let pts: Vec<([f64; 2], String)> = proj.coords.iter().copied().zip(proj.labels.iter().cloned()).collect();
        scatter_plot(&svg_path, &format!("{} of response embeddings ({name})", proj.method), &pts)?;
        files.push(svg_path);
    }
    Ok(ReportBundle { files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, missing: usize) -> MetricRow<f64> {
        MetricRow {
            model_name: name.into(),
            keyword_freq: 0.111,
            delta_s: 0.979,
            sem_sim_v1: 0.336,
            sem_sim_v2: 0.376,
            ttr: 0.4,
            avg_length_words: 20.0,
            cooccurrence_rate: 0.0,
            ce: 0.182,
            n_present: 54 - missing,
            n_missing: missing,
        }
    }

    fn qm(s: f64) -> QuestionMetrics<f64> {
        QuestionMetrics { question: "q".into(), s_llm: s, s_user: -0.5, delta_s: (s + 0.5).abs(), sim_v1: 0.3, sim_v2: 0.4, keyword_freq: 0.1 }
    }

    #[test]
    fn single_model_report() {
        let dir = tempfile::tempdir().unwrap();
        let rows = [row("BLOOM-7B", 9)];
        let per_q = [vec![qm(0.2); 45]];
        let stats = StatsDocument::default();
        let inputs = ReportInputs {
            rows: &rows,
            per_question: &per_q,
            references: &[],
            stats: &stats,
            projections: &[],
            improvements: None,
            weights: CeWeights::default(),
        };
        build_report(&inputs, dir.path()).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("figures/sentiment_violin.svg")).unwrap();
        assert!(svg.contains("(n=45)"));
        let bars = std::fs::read_to_string(dir.path().join("figures/keyword_frequency.svg")).unwrap();
        assert_eq!(bars.matches("<rect").count(), 2);
        let check = std::fs::read_to_string(dir.path().join("tables/ce_reference_check.csv")).unwrap();
        assert!(check.contains("0.182000,0.49,-0.3080"), "{check}");
        assert!(!dir.path().join("tables/table7_improvement.csv").exists());
    }

    #[test]
    fn empty_rows_rejected() {
        let stats = StatsDocument::default();
        let inputs = ReportInputs { rows: &[], per_question: &[], references: &[], stats: &stats, projections: &[], improvements: None, weights: CeWeights::default() };
        assert!(build_report(&inputs, Path::new("/nonexistent")).is_err());
    }

    #[test]
    fn run_id_is_stable() {
        assert_eq!(RunManifest::run_id("abcdef0123456789", 7), "abcdef012345-s7");
    }
}
