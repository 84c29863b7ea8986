//! ROC-AUC and ROUGE-L precision.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("labels and scores differ in length ({labels} vs {scores})")]
    LengthMismatch { labels: usize, scores: usize },

    #[error("label {0} at position {1} is not 0 or 1")]
    InvalidLabel(u8, usize),

    #[error("AUROC needs both classes; got {positives} positive and {negatives} negative labels")]
    SingleClass { positives: usize, negatives: usize },

    #[error("score at position {0} is not finite")]
    NonFiniteScore(usize),

    #[error("response is empty")]
    EmptyResponse,
}

/// Binary labels (1 = hallucinated) paired with scores (higher = more suspect).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    labels: Vec<u8>,
    scores: Vec<f64>,
}

impl LabeledScores {
    pub fn new(labels: Vec<u8>, scores: Vec<f64>) -> Result<Self, MetricError> {
        if labels.len() != scores.len() {
            return Err(MetricError::LengthMismatch {
                labels: labels.len(),
                scores: scores.len(),
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(MetricError::InvalidLabel(l, i));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricError::NonFiniteScore(i));
        }
        Ok(Self { labels, scores })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.labels.len() - pos)
    }
}

/// Area under the ROC curve, equal to the Mann–Whitney statistic with ties counted half.
///
/// Computed from average ranks in `O(n log n)`. Average ranks are half-integers,
/// so the rank sum is exact in `f64` for any realistic `n`.
pub fn roc_auc(data: &LabeledScores) -> Result<f64, MetricError> {
    let (pos, neg) = data.class_counts();
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }

    let mut order: Vec<usize> = (0..data.scores.len()).collect();
    order.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));

    // twice the rank sum of positives, kept integral
    let mut doubled_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && data.scores[order[end]] == data.scores[order[start]] {
            end += 1;
        }
        // ranks start+1..=end, average = (start + 1 + end) / 2
        let doubled_avg = (start + 1 + end) as u64;
        let tied_pos = order[start..end]
            .iter()
            .filter(|&&i| data.labels[i] == 1)
            .count() as u64;
        doubled_rank_sum += doubled_avg * tied_pos;
        start = end;
    }
    let pos64 = pos as u64;
    // doubled Mann–Whitney U for positives
    let doubled_u = doubled_rank_sum - pos64 * (pos64 + 1);
    Ok(doubled_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `LCS(context, response) / |response|`.
pub fn rouge_l_precision<T: PartialEq>(context: &[T], response: &[T]) -> Result<f64, MetricError> {
    if response.is_empty() {
        return Err(MetricError::EmptyResponse);
    }
    Ok(lcs_len(context, response) as f64 / response.len() as f64)
}

/// Lowercase, then split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
