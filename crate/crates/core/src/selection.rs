//! Hallucination score and head selection.
//!
//! Streams are ranked by the AUROC of their single-stream score `-d̂` on the
//! training split; the selected set is the ranking prefix of size `N_opt ≤ N_max`
//! whose averaged score gives the best validation AUROC.

use crate::bundle::SampleBundle;
use crate::deep_kernel::{DeepKernelError, DeepKernelModel};
use crate::distance::{
    hausdorff, mean_pairwise_distance, mmd2_unbiased, sinkhorn_divergence, DistanceError,
    KernelSpec, NormOrder, PointSet, SinkhornConfig,
};
use crate::metrics::{roc_auc, LabeledScores, MetricError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

pub const DEFAULT_N_MAX: usize = 6;

/// Head index within a layer, or the whole layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSlot {
    Head(u32),
    WholeLayer,
}

/// One (layer, head) embedding stream. Orders by layer, then head, whole-layer last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamKey {
    pub layer: u32,
    pub head: HeadSlot,
}

impl StreamKey {
    pub fn head(layer: u32, head: u32) -> Self {
        Self {
            layer,
            head: HeadSlot::Head(head),
        }
    }

    pub fn whole_layer(layer: u32) -> Self {
        Self {
            layer,
            head: HeadSlot::WholeLayer,
        }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.head {
            HeadSlot::Head(h) => write!(f, "L{}H{}", self.layer, h),
            HeadSlot::WholeLayer => write!(f, "L{}", self.layer),
        }
    }
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("sample {sample} is missing stream {stream}")]
    MissingStream { sample: String, stream: StreamKey },

    #[error("sample {sample}, stream {stream}: segments of {prompt} and {response} tokens, need at least {min}")]
    Undersized {
        sample: String,
        stream: StreamKey,
        prompt: usize,
        response: usize,
        min: usize,
    },

    #[error("stream {stream}: {source}")]
    Distance {
        stream: StreamKey,
        #[source]
        source: DistanceError,
    },

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    Model(#[from] DeepKernelError),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("ranking is empty")]
    EmptyRanking,

    #[error("no streams selected")]
    NoStreams,

    #[error("invalid selection config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SelectionError>;

/// Which set-to-set distance `d̂` feeds the score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Estimator {
    Mmd(KernelSpec),
    Sinkhorn(SinkhornConfig),
    Hausdorff { norm_order: NormOrder },
    MeanPairwise { norm_order: NormOrder },
}

impl Estimator {
    /// Minimum tokens per segment the estimator accepts.
    pub fn min_segment_len(&self) -> usize {
        match self {
            Estimator::Mmd(_) => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Mmd(_) => "mmd",
            Estimator::Sinkhorn(_) => "sinkhorn",
            Estimator::Hausdorff { .. } => "hausdorff",
            Estimator::MeanPairwise { .. } => "mean-pairwise",
        }
    }

    pub fn distance(&self, x: &PointSet, y: &PointSet) -> std::result::Result<f64, DistanceError> {
        match self {
            Estimator::Mmd(spec) => mmd2_unbiased(x, y, spec),
            Estimator::Sinkhorn(cfg) => sinkhorn_divergence(x, y, cfg),
            Estimator::Hausdorff { norm_order } => hausdorff(x, y, *norm_order),
            Estimator::MeanPairwise { norm_order } => mean_pairwise_distance(x, y, *norm_order),
        }
    }
}

/// A distance estimator, optionally applied in the latent space of a trained deep kernel.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub estimator: Estimator,
    pub model: Option<&'a DeepKernelModel>,
    /// Keep at most this many leading tokens of each segment.
    pub max_tokens: Option<usize>,
}

impl<'a> Scorer<'a> {
    pub fn plain(estimator: Estimator) -> Self {
        Self {
            estimator,
            model: None,
            max_tokens: None,
        }
    }

    fn segment_len(&self, n: usize) -> usize {
        self.max_tokens.map_or(n, |c| n.min(c))
    }

    /// Whether `sample` can be scored on `key` (stream present, segments large enough).
    pub fn check(&self, sample: &SampleBundle, key: &StreamKey) -> Result<()> {
        if sample.stream(key).is_none() {
            return Err(SelectionError::MissingStream {
                sample: sample.sample_id.clone(),
                stream: *key,
            });
        }
        let min = self.estimator.min_segment_len();
        let (p, r) = (
            self.segment_len(sample.prompt_len),
            self.segment_len(sample.response_len),
        );
        if p < min || r < min {
            return Err(SelectionError::Undersized {
                sample: sample.sample_id.clone(),
                stream: *key,
                prompt: sample.prompt_len,
                response: sample.response_len,
                min,
            });
        }
        Ok(())
    }

    /// Estimated distance `d̂(E_P, E_R)` for one stream.
    pub fn stream_distance(&self, sample: &SampleBundle, key: &StreamKey) -> Result<f64> {
        self.check(sample, key)?;
        let (prompt, response) = crate::deep_kernel::stream_rows(sample, key, self.max_tokens)?;
        let wrap = |source| SelectionError::Distance {
            stream: *key,
            source,
        };
        let (x, y) = match self.model {
            Some(model) => model.embed_segments(&prompt, &response)?,
            None => (
                PointSet::from_flat(prompt, sample.dim).map_err(wrap)?,
                PointSet::from_flat(response, sample.dim).map_err(wrap)?,
            ),
        };
        self.estimator.distance(&x, &y).map_err(wrap)
    }

    /// `-(1/N) Σ_h d̂(E_P^h, E_R^h)` over `streams`. Higher means more suspect.
    pub fn hallucination_score(&self, sample: &SampleBundle, streams: &[StreamKey]) -> Result<f64> {
        if streams.is_empty() {
            return Err(SelectionError::NoStreams);
        }
        let mut total = 0.0;
        for key in streams {
            total += self.stream_distance(sample, key)?;
        }
        Ok(-total / streams.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedStream {
    pub stream: StreamKey,
    pub auroc: f64,
    /// Samples that entered this stream's AUROC.
    pub n_samples: usize,
}

/// Streams sorted by descending training AUROC, ties by key ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRanking {
    pub entries: Vec<RankedStream>,
}

impl HeadRanking {
    pub fn streams(&self) -> impl Iterator<Item = StreamKey> + '_ {
        self.entries.iter().map(|e| e.stream)
    }

    pub fn position(&self, key: &StreamKey) -> Option<usize> {
        self.entries.iter().position(|e| e.stream == *key)
    }
}

/// The chosen ranking prefix and the validation curve that chose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<StreamKey>,
    pub n_opt: usize,
    pub auroc_max: f64,
    pub n_max: usize,
    /// Validation AUROC of the averaged score for N = 1, 2, ….
    pub curve: Vec<f64>,
    /// Validation samples that entered the curve.
    pub n_validation: usize,
}

/// Every stream key present in any bundle, in key order.
pub fn stream_inventory(data: &[SampleBundle]) -> Vec<StreamKey> {
    data.iter()
        .flat_map(|s| s.streams.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn sort_ranking(entries: &mut [RankedStream]) {
    entries.sort_by(|a, b| b.auroc.total_cmp(&a.auroc).then(a.stream.cmp(&b.stream)));
}

/// AUROC of `-d̂` per stream on `train`, sorted descending.
///
/// Samples that cannot be scored on a stream (missing stream, short segment) are
/// left out of that stream's statistic with a warning.
pub fn rank_streams(train: &[SampleBundle], scorer: &Scorer<'_>) -> Result<HeadRanking> {
    if train.is_empty() {
        return Err(SelectionError::EmptyDataset);
    }
    let inventory = stream_inventory(train);
    let mut entries = inventory
        .par_iter()
        .map(|key| {
            let mut labels = Vec::with_capacity(train.len());
            let mut scores = Vec::with_capacity(train.len());
            for sample in train {
                match scorer.check(sample, key) {
                    Ok(()) => {}
                    Err(e) => {
                        log::warn!("excluding from ranking: {e}");
                        continue;
                    }
                }
                scores.push(-scorer.stream_distance(sample, key)?);
                labels.push(sample.label);
            }
            let n_samples = labels.len();
            let auroc = roc_auc(&LabeledScores::new(labels, scores)?)?;
            Ok(RankedStream {
                stream: *key,
                auroc,
                n_samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_ranking(&mut entries);
    Ok(HeadRanking { entries })
}

/// Per-stream scores `-d̂` on `val` for the first `n` ranked streams, plus the labels.
///
/// Samples that cannot be scored on every candidate stream are dropped up front, so
/// every N is evaluated on the same samples.
pub fn candidate_scores(
    ranking: &HeadRanking,
    val: &[SampleBundle],
    scorer: &Scorer<'_>,
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<u8>)> {
    let candidates: Vec<StreamKey> = ranking.streams().take(n).collect();
    let usable: Vec<&SampleBundle> = val
        .iter()
        .filter(
            |s| match candidates.iter().try_for_each(|k| scorer.check(s, k)) {
                Ok(()) => true,
                Err(e) => {
                    log::warn!("excluding from selection: {e}");
                    false
                }
            },
        )
        .collect();
    if usable.is_empty() {
        return Err(SelectionError::EmptyDataset);
    }
    let table = candidates
        .par_iter()
        .map(|key| {
            usable
                .iter()
                .map(|s| scorer.stream_distance(s, key).map(|d| -d))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((table, usable.iter().map(|s| s.label).collect()))
}

/// Greedy prefix selection with the running-average recurrence
/// `p_j ← ((N-1)/N)·p_j + (1/N)·score_j(H_N)`, keeping the first N that attains
/// the strictly best validation AUROC.
pub fn select_heads(
    ranking: &HeadRanking,
    val: &[SampleBundle],
    scorer: &Scorer<'_>,
    n_max: usize,
) -> Result<SelectionResult> {
    if n_max < 1 {
        return Err(SelectionError::Config("n_max must be at least 1".into()));
    }
    if ranking.entries.is_empty() {
        return Err(SelectionError::EmptyRanking);
    }
    let (table, labels) = candidate_scores(ranking, val, scorer, n_max)?;
    let (curve, n_opt, auroc_max) = select_from_scores(&table, &labels)?;
    Ok(SelectionResult {
        selected: ranking.streams().take(n_opt).collect(),
        n_opt,
        auroc_max,
        n_max,
        curve,
        n_validation: labels.len(),
    })
}

/// The selection loop over a precomputed `table[stream][sample]` of scores.
///
/// Returns the AUROC curve, `N_opt`, and `AUROC_max`.
pub fn select_from_scores(table: &[Vec<f64>], labels: &[u8]) -> Result<(Vec<f64>, usize, f64)> {
    let mut running = vec![0.0; labels.len()];
    let mut curve = Vec::with_capacity(table.len());
    let mut best = (1usize, 0.0f64);
    for (idx, scores) in table.iter().enumerate() {
        let n = (idx + 1) as f64;
        for (p, s) in running.iter_mut().zip(scores) {
            *p = (n - 1.0) / n * *p + s / n;
        }
        let auroc = roc_auc(&LabeledScores::new(labels.to_vec(), running.clone())?)?;
        curve.push(auroc);
        if auroc > best.1 {
            best = (idx + 1, auroc);
        }
    }
    Ok((curve, best.0, best.1))
}

/// Running-average scores after `n` streams, as the recurrence produces them.
pub fn running_average(table: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut running = vec![0.0; table.first().map_or(0, Vec::len)];
    for (idx, scores) in table.iter().take(n).enumerate() {
        let k = (idx + 1) as f64;
        for (p, s) in running.iter_mut().zip(scores) {
            *p = (k - 1.0) / k * *p + s / k;
        }
    }
    running
}
