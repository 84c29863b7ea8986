use super::{loss_and_gradient, DeepKernelError, DeepKernelModel, Result};
use crate::bundle::SampleBundle;
use crate::distance::KernelSpec;
use crate::metrics::{roc_auc, LabeledScores};
use crate::selection::{Estimator, Scorer, SelectionResult};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    /// Parameters from the epoch with the highest validation AUROC.
    BestEpoch,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the grounded-sample separation term.
    pub alpha: f64,
    /// Weight of the reconstruction penalty.
    pub beta: f64,
    /// Global ℓ2 gradient clip threshold.
    pub clip_lambda: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Defaults to `ceil(d / 4)`.
    pub latent_dim: Option<usize>,
    /// Gradient ascent on the loss when true.
    pub maximize: bool,
    pub model_selection: ModelSelection,
    /// Per-segment token cap applied before encoding.
    pub max_tokens: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            clip_lambda: 1.0,
            batch_size: 16,
            n_epochs: 20,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            latent_dim: None,
            maximize: true,
            model_selection: ModelSelection::BestEpoch,
            max_tokens: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DeepKernelError::Config(m.to_string()));
        if self.n_epochs == 0 {
            return bad("n_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.clip_lambda > 0.0 && self.clip_lambda.is_finite()) {
            return bad("clip_lambda must be positive");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if !(self.learning_rate > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive");
        }
        if self.max_tokens.is_some_and(|c| c < 2) {
            return bad("max_tokens must be at least 2");
        }
        Ok(())
    }

    pub fn latent_dim_for(&self, input_dim: usize) -> usize {
        self.latent_dim.unwrap_or(input_dim.div_ceil(4))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub val_auroc: Vec<f64>,
    /// 1-based epoch whose parameters were returned.
    pub selected_epoch: usize,
}

/// Global-norm clipping in place. Returns the norm before clipping.
pub fn clip_gradient(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Decoupled-weight-decay Adam step. Moves along `+grad` when `cfg.maximize`.
pub fn adamw_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step);
    let bc2 = 1.0 - cfg.beta2.powi(state.step);
    let direction = if cfg.maximize { 1.0 } else { -1.0 };
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
        params[i] += direction * cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
}

fn usable<'a>(
    data: &'a [SampleBundle],
    heads: &SelectionResult,
    max_tokens: Option<usize>,
    what: &str,
) -> Vec<&'a SampleBundle> {
    let min_len = |n: usize| max_tokens.map_or(n, |c| n.min(c));
    data.iter()
        .filter(|s| {
            let ok = heads.selected.iter().all(|k| s.stream(k).is_some())
                && min_len(s.prompt_len) >= 2
                && min_len(s.response_len) >= 2;
            if !ok {
                log::warn!(
                    "{what}: skipping sample {} (missing stream or <2 tokens)",
                    s.sample_id
                );
            }
            ok
        })
        .collect()
}

fn validation_auroc(
    model: &DeepKernelModel,
    val: &[&SampleBundle],
    heads: &SelectionResult,
    max_tokens: Option<usize>,
) -> Result<f64> {
    let scorer = Scorer {
        estimator: Estimator::Mmd(model.base()),
        model: Some(model),
        max_tokens,
    };
    let scores = val
        .par_iter()
        .map(|s| scorer.hallucination_score(s, &heads.selected))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| DeepKernelError::Selection(Box::new(e)))?;
    let labels = val.iter().map(|s| s.label).collect();
    let data = LabeledScores::new(labels, scores)
        .map_err(|e| DeepKernelError::Selection(Box::new(e.into())))?;
    roc_auc(&data).map_err(|e| DeepKernelError::Selection(Box::new(e.into())))
}

/// Train the shared encoder/decoder on the selected streams.
///
/// Per epoch: seeded shuffle, mini-batches of `batch_size`, mean per-sample gradient,
/// global-norm clip, one AdamW step. Per-sample gradients are computed in parallel
/// and reduced in batch order, so results do not depend on thread scheduling.
pub fn train_kernel(
    train: &[SampleBundle],
    val: &[SampleBundle],
    heads: &SelectionResult,
    base: KernelSpec,
    cfg: &TrainConfig,
) -> Result<(DeepKernelModel, TrainHistory)> {
    cfg.validate()?;
    if heads.selected.is_empty() {
        return Err(DeepKernelError::NoStreams);
    }
    let train = usable(train, heads, cfg.max_tokens, "train");
    let val = usable(val, heads, cfg.max_tokens, "validation");
    if train.is_empty() || val.is_empty() {
        return Err(DeepKernelError::Config(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let input_dim = train[0].dim;
    if let Some(s) = train.iter().chain(&val).find(|s| s.dim != input_dim) {
        return Err(DeepKernelError::DimensionMismatch {
            expected: input_dim,
            got: s.dim,
        });
    }

    let latent_dim = cfg.latent_dim_for(input_dim);
    let mut model = DeepKernelModel::init(input_dim, latent_dim, base, cfg.seed)?;
    let mut adam = AdamState::new(model.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = TrainHistory {
        epoch_loss: Vec::with_capacity(cfg.n_epochs),
        val_auroc: Vec::with_capacity(cfg.n_epochs),
        selected_epoch: 0,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 1..=cfg.n_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = batch
                .par_iter()
                .map(|&i| loss_and_gradient(train[i], &model, cfg, &heads.selected, true))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; model.params().len()];
            for (breakdown, g) in &results {
                if !breakdown.loss.is_finite() {
                    return Err(DeepKernelError::Diverged {
                        epoch,
                        batch: batch_idx,
                    });
                }
                loss_sum += breakdown.loss;
                for (acc, v) in grad.iter_mut().zip(g.as_ref().expect("gradient")) {
                    *acc += v;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(DeepKernelError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            clip_gradient(&mut grad, cfg.clip_lambda);
            adamw_step(model.params_mut(), &grad, &mut adam, cfg);
        }
        let auroc = validation_auroc(&model, &val, heads, cfg.max_tokens)?;
        history.epoch_loss.push(loss_sum / train.len() as f64);
        history.val_auroc.push(auroc);
        log::info!(
            "epoch {epoch}: mean loss {:.6}, validation AUROC {auroc:.4}",
            loss_sum / train.len() as f64
        );
        if best.as_ref().is_none_or(|(b, _)| auroc > *b) {
            best = Some((auroc, model.params().to_vec()));
            history.selected_epoch = epoch;
        }
    }

    match cfg.model_selection {
        ModelSelection::BestEpoch => {
            let (_, params) = best.expect("at least one epoch");
            model = DeepKernelModel::from_params(input_dim, latent_dim, base, params)?;
        }
        ModelSelection::LastEpoch => history.selected_epoch = cfg.n_epochs,
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_examples() {
        let mut g = vec![0.3, 0.4];
        clip_gradient(&mut g, 1.0);
        assert_eq!(g, vec![0.3, 0.4]);
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_gradient(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clip_norm_is_min_of_norm_and_lambda(
            g in proptest::collection::vec(-10.0f64..10.0, 1..20),
            lambda in 0.01f64..5.0,
        ) {
            let before = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut clipped = g.clone();
            clip_gradient(&mut clipped, lambda);
            let after = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((after - before.min(lambda)).abs() <= 1e-12 * before.max(1.0));
            // direction preserved: positive multiple of the original
            if before > 0.0 {
                let scale = after / before;
                for (c, o) in clipped.iter().zip(&g) {
                    prop_assert!((c - scale * o).abs() <= 1e-12 * o.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            n_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(DeepKernelError::Config(_))));
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            clip_lambda: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().latent_dim_for(16), 4);
        assert_eq!(TrainConfig::default().latent_dim_for(10), 3);
    }

    #[test]
    fn adamw_ascends_a_concave_objective() {
        // maximize -(x - 3)^2
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut x = vec![0.0];
        let mut state = AdamState::new(1);
        for _ in 0..500 {
            let g = vec![-2.0 * (x[0] - 3.0)];
            adamw_step(&mut x, &g, &mut state, &cfg);
        }
        assert!((x[0] - 3.0).abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn decoupled_weight_decay_shrinks_parameters() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            weight_decay: 0.5,
            ..TrainConfig::default()
        };
        let mut x = vec![2.0];
        let mut state = AdamState::new(1);
        adamw_step(&mut x, &[0.0], &mut state, &cfg);
        assert!((x[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }
}
