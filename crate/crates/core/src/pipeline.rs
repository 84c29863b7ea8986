//! End-to-end commands: rank, select, grid search, train, score, evaluate, ROUGE report.
//!
//! Fitting commands (rank, select, grid, train) only read the train and validation
//! records; the test split is touched by `run_score` alone.

use crate::bundle::SampleBundle;
use crate::config::PipelineConfig;
use crate::deep_kernel::{read_checkpoint, train_kernel, DeepKernelModel, TrainHistory};
use crate::distance::KernelSpec;
use crate::manifest::{fit_split, Dataset, DatasetManifest, Split, TokenSidecar};
use crate::metrics::{roc_auc, rouge_l_precision, tokenize, LabeledScores};
use crate::selection::{
    rank_streams, select_heads, Estimator, HeadRanking, Scorer, SelectionResult, StreamKey,
};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Bundles used for fitting.
#[derive(Debug, Clone)]
pub struct FitData {
    pub train: Vec<SampleBundle>,
    pub val: Vec<SampleBundle>,
    /// True when the validation set was carved out of the train split.
    pub val_carved: bool,
}

pub fn load_fit_data(ds: &Dataset, seed: u64) -> Result<FitData> {
    let split = fit_split(ds.manifest(), seed)?;
    Ok(FitData {
        train: ds.read_all(&split.train)?,
        val: ds.read_all(&split.val)?,
        val_carved: split.carved,
    })
}

/// Load only the validation side of the fit split.
pub fn load_val_data(ds: &Dataset, seed: u64) -> Result<Vec<SampleBundle>> {
    let split = fit_split(ds.manifest(), seed)?;
    Ok(ds.read_all(&split.val)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub estimator: Estimator,
    pub n_train: usize,
    pub val_carved: bool,
    pub ranking: HeadRanking,
}

pub fn run_rank(ds: &Dataset, cfg: &PipelineConfig) -> Result<RankReport> {
    let split = fit_split(ds.manifest(), cfg.seed)?;
    let train = ds.read_all(&split.train)?;
    let scorer = Scorer {
        estimator: cfg.estimator(),
        model: None,
        max_tokens: cfg.token_cap(),
    };
    let ranking = rank_streams(&train, &scorer)?;
    Ok(RankReport {
        estimator: scorer.estimator,
        n_train: train.len(),
        val_carved: split.carved,
        ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub estimator: Estimator,
    pub n_train: usize,
    pub n_val: usize,
    pub val_carved: bool,
    pub ranking: HeadRanking,
    pub selection: SelectionResult,
}

/// Rank on the train records (unless `ranking` is given) and select on validation.
pub fn run_select(
    ds: &Dataset,
    cfg: &PipelineConfig,
    ranking: Option<HeadRanking>,
) -> Result<SelectionReport> {
    let scorer = Scorer {
        estimator: cfg.estimator(),
        model: None,
        max_tokens: cfg.token_cap(),
    };
    let split = fit_split(ds.manifest(), cfg.seed)?;
    let ranking = match ranking {
        Some(r) => r,
        None => rank_streams(&ds.read_all(&split.train)?, &scorer)?,
    };
    let val = ds.read_all(&split.val)?;
    let selection = select_heads(&ranking, &val, &scorer, cfg.n_max)?;
    Ok(SelectionReport {
        estimator: scorer.estimator,
        n_train: split.train.len(),
        n_val: val.len(),
        val_carved: split.carved,
        ranking,
        selection,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub kernel: KernelSpec,
    pub auroc_max: f64,
    pub n_opt: usize,
    pub selected: Vec<StreamKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub entries: Vec<GridEntry>,
    pub best: KernelSpec,
    pub best_auroc: f64,
}

/// Rank and select with each of the 12 base kernels; the best validation AUROC
/// wins, earlier grid entries winning ties.
pub fn grid_kernel(ds: &Dataset, cfg: &PipelineConfig) -> Result<GridReport> {
    let fit = load_fit_data(ds, cfg.seed)?;
    grid_kernel_on(&fit, cfg)
}

pub fn grid_kernel_on(fit: &FitData, cfg: &PipelineConfig) -> Result<GridReport> {
    let mut entries = Vec::new();
    for kernel in KernelSpec::grid() {
        let scorer = Scorer {
            estimator: Estimator::Mmd(kernel),
            model: None,
            max_tokens: cfg.token_cap(),
        };
        let ranking = rank_streams(&fit.train, &scorer)?;
        let sel = select_heads(&ranking, &fit.val, &scorer, cfg.n_max)?;
        log::info!(
            "kernel p={} q={}: val AUROC {:.4}",
            kernel.norm_order,
            kernel.exponent,
            sel.auroc_max
        );
        entries.push(GridEntry {
            kernel,
            auroc_max: sel.auroc_max,
            n_opt: sel.n_opt,
            selected: sel.selected,
        });
    }
    let best = entries.iter().fold(
        &entries[0],
        |b, e| if e.auroc_max > b.auroc_max { e } else { b },
    );
    Ok(GridReport {
        best: best.kernel,
        best_auroc: best.auroc_max,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kernel: KernelSpec,
    pub selected: Vec<StreamKey>,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub history: TrainHistory,
}

/// Train the deep kernel on the selected streams with the configured base kernel.
pub fn run_train(
    ds: &Dataset,
    selection: &SelectionResult,
    cfg: &PipelineConfig,
) -> Result<(DeepKernelModel, TrainReport)> {
    let fit = load_fit_data(ds, cfg.seed)?;
    run_train_on(&fit, selection, cfg)
}

pub fn run_train_on(
    fit: &FitData,
    selection: &SelectionResult,
    cfg: &PipelineConfig,
) -> Result<(DeepKernelModel, TrainReport)> {
    let (model, history) = train_kernel(
        &fit.train,
        &fit.val,
        selection,
        cfg.kernel,
        &cfg.train_config(),
    )?;
    let report = TrainReport {
        kernel: model.base(),
        selected: selection.selected.clone(),
        input_dim: model.input_dim(),
        latent_dim: model.latent_dim(),
        history,
    };
    Ok((model, report))
}

pub fn load_model(path: &Path) -> Result<DeepKernelModel> {
    if !path.is_file() {
        return Err(Error::MissingModel(path.display().to_string()));
    }
    Ok(read_checkpoint(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: String,
    pub split: Split,
    pub label: u8,
    pub score: f64,
}

/// Per-sample hallucination scores, in manifest order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<ScoreRow>, _>>()
            .map_err(|e| Error::Format {
                path: origin.to_string(),
                message: e.to_string(),
            })?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text, &path.display().to_string())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ScoreRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

/// Scorer for `run_score`. With a model and the MMD estimator, the model's own
/// base kernel is used so scoring matches training.
pub fn scorer_for(
    estimator: Estimator,
    model: Option<&DeepKernelModel>,
    max_tokens: Option<usize>,
) -> Scorer<'_> {
    let estimator = match (estimator, model) {
        (Estimator::Mmd(_), Some(m)) => Estimator::Mmd(m.base()),
        (e, _) => e,
    };
    Scorer {
        estimator,
        model,
        max_tokens,
    }
}

/// Score every record of the given splits, in manifest order.
pub fn run_score(
    ds: &Dataset,
    streams: &[StreamKey],
    scorer: &Scorer<'_>,
    splits: &[Split],
) -> Result<ScoreTable> {
    let records: Vec<_> = ds
        .manifest()
        .records
        .iter()
        .filter(|r| splits.contains(&r.split))
        .collect();
    let rows = records
        .par_iter()
        .map(|r| {
            let bundle = ds.read(r)?;
            let score = scorer.hallucination_score(&bundle, streams)?;
            Ok(ScoreRow {
                sample_id: r.sample_id.clone(),
                split: r.split,
                label: r.label,
                score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { rows })
}

/// Score bundles already in memory (no manifest access).
pub fn score_bundles(
    samples: &[SampleBundle],
    streams: &[StreamKey],
    scorer: &Scorer<'_>,
) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| Ok(scorer.hallucination_score(s, streams)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub grounded: Vec<usize>,
    pub hallucinated: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; the last bin is closed.
    pub fn build(values: &[(u8, f64)], bins: usize, range: Option<(f64, f64)>) -> Self {
        let (lo, hi) = range.unwrap_or_else(|| {
            values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
                    (lo.min(v), hi.max(v))
                })
        });
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let mut h = Self {
            lo,
            hi,
            grounded: vec![0; bins],
            hallucinated: vec![0; bins],
        };
        let width = hi - lo;
        for &(label, v) in values {
            let idx = if width > 0.0 {
                (((v - lo) / width * bins as f64) as usize).min(bins - 1)
            } else {
                0
            };
            if label == 1 {
                h.hallucinated[idx] += 1;
            } else {
                h.grounded[idx] += 1;
            }
        }
        h
    }

    pub fn edges(&self) -> Vec<f64> {
        let n = self.grounded.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub split: Split,
    pub n: usize,
    pub n_hallucinated: usize,
    /// Absent when the split holds a single class.
    pub auroc: Option<f64>,
    pub mean_score_hallucinated: Option<f64>,
    pub mean_score_grounded: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: Vec<SplitEvaluation>,
}

impl EvalReport {
    pub fn get(&self, split: Split) -> Option<&SplitEvaluation> {
        self.splits.iter().find(|s| s.split == split)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// AUROC and per-class histograms per split. Rows must agree with the manifest.
pub fn run_evaluate(
    table: &ScoreTable,
    manifest: &DatasetManifest,
    bins: usize,
) -> Result<EvalReport> {
    if bins == 0 {
        return Err(Error::Input("histogram needs at least one bin".into()));
    }
    let index: BTreeMap<&str, (u8, Split)> = manifest
        .records
        .iter()
        .map(|r| (r.sample_id.as_str(), (r.label, r.split)))
        .collect();
    for row in &table.rows {
        match index.get(row.sample_id.as_str()) {
            Some(&(label, split)) if label == row.label && split == row.split => {}
            Some(_) => {
                return Err(Error::Input(format!(
                    "score row {} disagrees with the manifest on label or split",
                    row.sample_id
                )))
            }
            None => {
                return Err(Error::Input(format!(
                    "score row {} is not in the manifest",
                    row.sample_id
                )))
            }
        }
        if !row.score.is_finite() {
            return Err(Error::Input(format!(
                "score of {} is not finite",
                row.sample_id
            )));
        }
    }
    let mut splits = Vec::new();
    for split in Split::ALL {
        let rows: Vec<&ScoreRow> = table.split(split).collect();
        if rows.is_empty() {
            continue;
        }
        let n_hallucinated = rows.iter().filter(|r| r.label == 1).count();
        let auroc = if n_hallucinated == 0 || n_hallucinated == rows.len() {
            None
        } else {
            let data = LabeledScores::new(
                rows.iter().map(|r| r.label).collect(),
                rows.iter().map(|r| r.score).collect(),
            )?;
            Some(roc_auc(&data)?)
        };
        let pairs: Vec<(u8, f64)> = rows.iter().map(|r| (r.label, r.score)).collect();
        splits.push(SplitEvaluation {
            split,
            n: rows.len(),
            n_hallucinated,
            auroc,
            mean_score_hallucinated: mean(rows.iter().filter(|r| r.label == 1).map(|r| r.score)),
            mean_score_grounded: mean(rows.iter().filter(|r| r.label == 0).map(|r| r.score)),
            histogram: Histogram::build(&pairs, bins, None),
        });
    }
    Ok(EvalReport { splits })
}

fn histogram_csv(rows: impl Iterator<Item = (String, Histogram)>) -> String {
    let mut out = String::from("group,bin_lo,bin_hi,grounded,hallucinated\n");
    for (group, h) in rows {
        let edges = h.edges();
        for i in 0..h.grounded.len() {
            let _ = writeln!(
                out,
                "{group},{},{},{},{}",
                edges[i],
                edges[i + 1],
                h.grounded[i],
                h.hallucinated[i]
            );
        }
    }
    out
}

/// Stacked per-group bar charts, grounded in blue and hallucinated in red.
pub fn histogram_svg(title: &str, groups: &[(String, Histogram)]) -> String {
    let (w, panel_h, top) = (640.0, 180.0, 30.0);
    let height = top + panel_h * groups.len().max(1) as f64 + 10.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="10" y="18" font-size="14">{}</text>"#,
        escape(title)
    );
    for (gi, (name, h)) in groups.iter().enumerate() {
        let y0 = top + panel_h * gi as f64;
        let (left, plot_w, plot_h) = (50.0, w - 70.0, panel_h - 45.0);
        let peak = h
            .grounded
            .iter()
            .chain(&h.hallucinated)
            .copied()
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let n = h.grounded.len() as f64;
        let bar = plot_w / n;
        let _ = writeln!(
            svg,
            r#"<text x="{left}" y="{}">{}</text>"#,
            y0 + 12.0,
            escape(name)
        );
        let base = y0 + 20.0 + plot_h;
        for (i, (&g, &b)) in h.grounded.iter().zip(&h.hallucinated).enumerate() {
            let x = left + bar * i as f64;
            for (count, color, off) in [(g, "#3b6fb6", 0.0), (b, "#c8423b", bar / 2.0)] {
                let bh = plot_h * count as f64 / peak;
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.8"/>"#,
                    x + off,
                    base - bh,
                    bar / 2.0,
                    bh
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
            left + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{left}" y="{}">{:.4}</text>"#,
            base + 14.0,
            h.lo
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#,
            left + plot_w,
            base + 14.0,
            h.hi
        );
    }
    let _ = writeln!(
        svg,
        r##"<text x="{}" y="18" fill="#3b6fb6">grounded</text><text x="{}" y="18" fill="#c8423b">hallucinated</text>"##,
        w - 170.0,
        w - 100.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Write `evaluation.json`, `score_histogram.csv` and `score_histogram.svg`.
pub fn export_evaluation(report: &EvalReport, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("evaluation.json"), report)?;
    let groups: Vec<(String, Histogram)> = report
        .splits
        .iter()
        .map(|s| (s.split.to_string(), s.histogram.clone()))
        .collect();
    write_text(
        &out_dir.join("score_histogram.csv"),
        &histogram_csv(groups.clone().into_iter()),
    )?;
    write_text(
        &out_dir.join("score_histogram.svg"),
        &histogram_svg("Hallucination score by class", &groups),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRouge {
    pub label: u8,
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub classes: Vec<ClassRouge>,
    pub per_sample: Vec<(String, u8, f64)>,
    /// Samples without a readable sidecar.
    pub missing: Vec<String>,
    /// Samples whose sidecar has an empty response line.
    pub empty_response: Vec<String>,
    pub histogram: Histogram,
    pub notice: Option<String>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

/// ROUGE-L precision of response against prompt tokens, summarized per class.
pub fn run_rouge_report(ds: &Dataset, bins: usize) -> Result<RougeReport> {
    let mut per_sample = Vec::new();
    let mut missing = Vec::new();
    let mut empty_response = Vec::new();
    for r in &ds.manifest().records {
        let path = ds.sidecar_path(r);
        let Some(side) = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| TokenSidecar::parse(&t))
        else {
            missing.push(r.sample_id.clone());
            continue;
        };
        match rouge_l_precision(&tokenize(&side.prompt), &tokenize(&side.response)) {
            Ok(p) => per_sample.push((r.sample_id.clone(), r.label, p)),
            Err(_) => empty_response.push(r.sample_id.clone()),
        }
    }
    if !missing.is_empty() {
        log::warn!(
            "{} sample(s) without token sidecar skipped: {}",
            missing.len(),
            missing.join(", ")
        );
    }
    if !empty_response.is_empty() {
        log::warn!(
            "{} sample(s) with empty response skipped: {}",
            empty_response.len(),
            empty_response.join(", ")
        );
    }
    Ok(rouge_summary(per_sample, missing, empty_response, bins))
}

pub fn rouge_summary(
    per_sample: Vec<(String, u8, f64)>,
    missing: Vec<String>,
    empty_response: Vec<String>,
    bins: usize,
) -> RougeReport {
    let classes = [0u8, 1]
        .into_iter()
        .map(|label| {
            let vals: Vec<f64> = per_sample
                .iter()
                .filter(|(_, l, _)| *l == label)
                .map(|(_, _, p)| *p)
                .collect();
            ClassRouge {
                label,
                n: vals.len(),
                mean: mean(vals.iter().copied()),
                median: median(vals),
            }
        })
        .collect();
    let pairs: Vec<(u8, f64)> = per_sample.iter().map(|(_, l, p)| (*l, *p)).collect();
    let notice = per_sample
        .is_empty()
        .then(|| "no token sidecars with usable text were found; the report is empty".to_string());
    RougeReport {
        classes,
        histogram: Histogram::build(&pairs, bins.max(1), Some((0.0, 1.0))),
        per_sample,
        missing,
        empty_response,
        notice,
    }
}

/// Write `rouge_report.json`, `rouge_histogram.csv` and `rouge_histogram.svg`.
pub fn export_rouge(report: &RougeReport, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("rouge_report.json"), report)?;
    let groups = vec![("all".to_string(), report.histogram.clone())];
    write_text(
        &out_dir.join("rouge_histogram.csv"),
        &histogram_csv(groups.clone().into_iter()),
    )?;
    write_text(
        &out_dir.join("rouge_histogram.svg"),
        &histogram_svg("ROUGE-L precision by class", &groups),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: u8, score: f64) -> ScoreRow {
        ScoreRow {
            sample_id: id.into(),
            split: Split::Test,
            label,
            score,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let table = ScoreTable {
            rows: vec![
                row("a", 0, -0.1),
                row("b,c", 1, 1.0 / 3.0),
                row("d", 1, -1e-300),
            ],
        };
        let text = table.to_csv();
        assert!(text.starts_with("sample_id,split,label,score\n"));
        assert_eq!(ScoreTable::from_csv(&text, "mem").unwrap(), table);
        assert!(ScoreTable::from_csv("sample_id,split,label,score\na,nope,0,1\n", "mem").is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::build(&[(0, 0.0), (1, 1.0), (1, 0.5), (0, 0.24)], 4, None);
        assert_eq!(h.grounded, vec![2, 0, 0, 0]);
        assert_eq!(h.hallucinated, vec![0, 0, 1, 1]);
        assert_eq!(h.edges(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let flat = Histogram::build(&[(0, 2.0), (1, 2.0)], 3, None);
        assert_eq!((flat.grounded[0], flat.hallucinated[0]), (1, 1));
        let empty = Histogram::build(&[], 3, None);
        assert_eq!(empty.grounded, vec![0, 0, 0]);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }

    #[test]
    fn empty_rouge_summary_has_notice() {
        let r = rouge_summary(vec![], vec!["x".into()], vec![], 10);
        assert!(r.notice.is_some());
        assert!(r.classes.iter().all(|c| c.n == 0 && c.mean.is_none()));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let h = Histogram::build(&[(0, 0.0), (1, 1.0)], 5, None);
        let svg = histogram_svg("a < b", &[("test".into(), h)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
    }
}
