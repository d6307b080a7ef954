//! Loss, optimizer, training loop, metrics and the
//! leave-one-group-out cross-validation protocol.

use crate::error::{Error, Result};
use crate::model::{GbanModel, PreparedSample};
use crate::rng::SeededRng;
use crate::tape::{Tape, TensorRef};
use crate::tensor::Tensor;

/// Probabilities below this are clamped inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Negative log-likelihood summed over a batch of probability vectors:
/// `L = -sum_i log(max(p_i[label_i], 1e-12))`.
pub fn nll_loss(tape: &mut Tape, probs: &[TensorRef], labels: &[usize]) -> Result<TensorRef> {
    if probs.is_empty() {
        return Err(Error::EmptySequence { what: "nll_loss" });
    }
    if probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "nll_loss: {} probability rows but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut parts = Vec::with_capacity(probs.len());
    for (&p, &label) in probs.iter().zip(labels) {
        let classes = tape.value(p).len();
        if label >= classes {
            return Err(Error::contract(format!(
                "label {label} outside [0, {classes})"
            )));
        }
        let picked = tape.slice(p, label, 1)?;
        let lg = tape.log_clamped(picked, PROB_FLOOR);
        parts.push(tape.affine(lg, -1.0, 0.0));
    }
    tape.add_n(&parts)
}

// ── Adam ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step count.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &crate::params::ParamStore) -> Self {
        AdamState {
            m: store.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients currently in the
/// store. A non-finite gradient aborts the step before any parameter
/// changes, reporting the offending parameter.
pub fn adam_step(
    state: &mut AdamState,
    store: &mut crate::params::ParamStore,
    cfg: &AdamConfig,
) -> Result<()> {
    for p in store.iter() {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericFault {
                param: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in store.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for ((w, &g), (m, v)) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.iter())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

// ── Metrics ──────────────────────────────────────────────────────────

/// Confusion counts plus weighted (overall) and unweighted (mean
/// per-class recall) accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub confusion: Vec<Vec<usize>>,
    pub wa: f64,
    pub ua: f64,
}

impl EvalMetrics {
    /// Builds metrics from (true label, predicted label) pairs.
    pub fn from_predictions(pairs: &[(usize, usize)], classes: usize) -> Self {
        let mut confusion = vec![vec![0usize; classes]; classes];
        for &(truth, pred) in pairs {
            confusion[truth][pred] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let total: usize = confusion.iter().map(|r| r.iter().sum::<usize>()).sum();
        let correct: usize = confusion.iter().enumerate().map(|(i, r)| r[i]).sum();
        let wa = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        let mut recall_sum = 0.0;
        let mut seen_classes = 0usize;
        for (i, row) in confusion.iter().enumerate() {
            let support: usize = row.iter().sum();
            if support > 0 {
                recall_sum += row[i] as f64 / support as f64;
                seen_classes += 1;
            }
        }
        let ua = if seen_classes == 0 {
            0.0
        } else {
            recall_sum / seen_classes as f64
        };
        EvalMetrics { confusion, wa, ua }
    }
}

/// Argmax with the lowest class index winning ties.
pub fn argmax_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Runs the model in inference mode over a dataset.
pub fn evaluate(model: &GbanModel, data: &[PreparedSample]) -> Result<EvalMetrics> {
    let mut rng = SeededRng::new(0); // unused: dropout is off at inference
    let mut pairs = Vec::with_capacity(data.len());
    for sample in data {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, sample, false, &mut rng)?;
        pairs.push((sample.label, argmax_class(tape.value(out.probs))));
    }
    Ok(EvalMetrics::from_predictions(&pairs, model.config.classes))
}

// ── Training loop ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam: AdamConfig,
    pub l2: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            adam: AdamConfig::default(),
            l2: 0.01,
            val_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_wa: f64,
}

pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_val_wa: f64,
    pub best_epoch: usize,
}

/// Mini-batch Adam training with a seeded 5% validation split, model
/// selection on validation WA and early stopping. The model is left
/// holding the best-epoch parameters.
pub fn train(model: &mut GbanModel, data: &[PreparedSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptySequence { what: "train" });
    }
    if data.len() < cfg.batch_size {
        return Err(Error::contract(format!(
            "dataset of {} samples is smaller than batch size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let root = SeededRng::new(cfg.seed);
    let mut split_rng = root.fork(1);
    let mut train_rng = root.fork(2);

    let mut order: Vec<usize> = (0..data.len()).collect();
    split_rng.shuffle(&mut order);
    let n_val = ((data.len() as f64 * cfg.val_fraction).round() as usize)
        .max(1)
        .min(data.len() - 1);
    let val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    let val_set: Vec<PreparedSample> = val_idx.iter().map(|&i| data[i].clone()).collect();

    let mut adam = AdamState::new(&model.store);
    let mut log = Vec::new();
    let mut best_val_wa = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Option<Vec<(String, Tensor)>> = None;
    let mut stale_epochs = 0usize;

    for epoch in 1..=cfg.max_epochs {
        train_rng.shuffle(&mut train_idx);
        let mut epoch_nll = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = &data[i];
                let mut tape = Tape::new();
                let out = model.forward(&mut tape, sample, true, &mut train_rng)?;
                let loss = nll_loss(&mut tape, &[out.probs], &[sample.label])?;
                epoch_nll += tape.value(loss)[0];
                tape.backward(loss)?;
                tape.accumulate_param_grads(&mut model.store, scale);
            }
            model.store.apply_l2(cfg.l2);
            adam_step(&mut adam, &mut model.store, &cfg.adam)?;
        }
        let train_loss = epoch_nll / train_idx.len() as f64;
        let val_wa = evaluate(model, &val_set)?.wa;
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_wa,
        });
        if val_wa > best_val_wa {
            best_val_wa = val_wa;
            best_epoch = epoch;
            best_params = Some(model.store.snapshot());
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }
    if let Some(best) = best_params {
        model.store.restore(&best)?;
    }
    Ok(TrainOutcome {
        log,
        best_val_wa,
        best_epoch,
    })
}

// ── Cross-validation ─────────────────────────────────────────────────

pub struct FoldResult {
    pub group: String,
    pub metrics: EvalMetrics,
    pub outcome: TrainOutcome,
    pub model: GbanModel,
}

pub struct KfoldOutcome {
    pub folds: Vec<FoldResult>,
    pub avg_wa: f64,
    pub avg_ua: f64,
}

/// Leave-one-group-out cross-validation. `k` must equal the number of
/// distinct groups; each fold trains a fresh model (seeded per fold)
/// on the other groups and evaluates on the held-out group.
pub fn kfold_run<F>(
    build_model: F,
    data: &[(PreparedSample, String)],
    k: usize,
    cfg: &TrainConfig,
) -> Result<KfoldOutcome>
where
    F: Fn(&mut SeededRng) -> Result<GbanModel>,
{
    let mut groups: Vec<String> = data.iter().map(|(_, g)| g.clone()).collect();
    groups.sort();
    groups.dedup();
    if groups.len() < k {
        return Err(Error::contract(format!(
            "k-fold requested {k} folds but only {} distinct groups exist",
            groups.len()
        )));
    }
    if groups.len() != k {
        return Err(Error::contract(format!(
            "k must equal the number of distinct groups ({}), got {k}",
            groups.len()
        )));
    }
    let root = SeededRng::new(cfg.seed);
    let mut folds = Vec::with_capacity(k);
    for (fold, group) in groups.iter().enumerate() {
        let train_set: Vec<PreparedSample> = data
            .iter()
            .filter(|(_, g)| g != group)
            .map(|(s, _)| s.clone())
            .collect();
        let test_set: Vec<PreparedSample> = data
            .iter()
            .filter(|(_, g)| g == group)
            .map(|(s, _)| s.clone())
            .collect();
        if train_set.is_empty() || test_set.is_empty() {
            return Err(Error::contract(format!("fold '{group}' has an empty split")));
        }
        let mut init_rng = root.fork(100 + fold as u64);
        let mut model = build_model(&mut init_rng)?;
        let fold_cfg = TrainConfig {
            seed: SeededRng::new(cfg.seed).fork(fold as u64).seed(),
            ..cfg.clone()
        };
        let outcome = train(&mut model, &train_set, &fold_cfg)?;
        let metrics = evaluate(&model, &test_set)?;
        folds.push(FoldResult {
            group: group.clone(),
            metrics,
            outcome,
            model,
        });
    }
    let avg_wa = folds.iter().map(|f| f.metrics.wa).sum::<f64>() / k as f64;
    let avg_ua = folds.iter().map(|f| f.metrics.ua).sum::<f64>() / k as f64;
    Ok(KfoldOutcome {
        folds,
        avg_wa,
        avg_ua,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::ConvSpec;
    use crate::features::{FrameSequence, FEATURE_DIM};
    use crate::model::{FusionMode, ModelConfig};
    use crate::params::ParamStore;
    use crate::text::{vocabulary_from_tokens, Vocabulary};

    #[test]
    fn nll_uniform_and_perfect() {
        let mut tape = Tape::new();
        let uniform = tape.constant(&Tensor::vector(vec![0.25; 4]));
        let loss = nll_loss(&mut tape, &[uniform], &[2]).unwrap();
        assert!((tape.value(loss)[0] - 4.0f64.ln()).abs() <= 1e-12);

        let perfect = tape.constant(&Tensor::vector(vec![0.0, 1.0, 0.0, 0.0]));
        let loss = nll_loss(&mut tape, &[perfect], &[1]).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);
    }

    #[test]
    fn nll_matches_loop_oracle_and_rejects_bad_labels() {
        let mut rng = SeededRng::new(12);
        let mut tape = Tape::new();
        let mut refs = Vec::new();
        let mut raw = Vec::new();
        let mut labels = Vec::new();
        for i in 0..5 {
            let mut row: Vec<f64> = (0..4).map(|_| rng.uniform() + 0.01).collect();
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= z);
            refs.push(tape.constant(&Tensor::vector(row.clone())));
            raw.push(row);
            labels.push(i % 4);
        }
        let loss = nll_loss(&mut tape, &refs, &labels).unwrap();
        let want: f64 = raw
            .iter()
            .zip(&labels)
            .map(|(row, &l)| -row[l].max(PROB_FLOOR).ln())
            .sum();
        assert!((tape.value(loss)[0] - want).abs() < 1e-12);

        assert!(matches!(
            nll_loss(&mut tape, &[refs[0]], &[7]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0, -2.0]), true);
        let mut state = AdamState::new(&store);
        adam_step(&mut state, &mut store, &AdamConfig::default()).unwrap();
        assert_eq!(store.by_name("w").unwrap().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_single_step_matches_hand_formula() {
        let cfg = AdamConfig::default();
        let g = 0.37_f64;
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![2.0]), true);
        for p in store.iter_mut() {
            p.grad[0] = g;
        }
        let mut state = AdamState::new(&store);
        adam_step(&mut state, &mut store, &cfg).unwrap();
        // after one step m_hat = g, v_hat = g^2
        let want = 2.0 - cfg.lr * g / (g.abs() + cfg.eps);
        assert!((store.by_name("w").unwrap().value.data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn adam_constant_gradient_update_magnitude_approaches_lr() {
        let cfg = AdamConfig::default();
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![0.0]), true);
        let mut state = AdamState::new(&store);
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..1000 {
            for p in store.iter_mut() {
                p.grad[0] = 0.8;
            }
            adam_step(&mut state, &mut store, &cfg).unwrap();
            let cur = store.by_name("w").unwrap().value.data()[0];
            last_delta = (cur - prev).abs();
            prev = cur;
        }
        assert!(
            (last_delta - cfg.lr).abs() / cfg.lr < 0.05,
            "step magnitude {last_delta}"
        );
    }

    #[test]
    fn adam_rejects_nan_gradient_without_mutating() {
        let mut store = ParamStore::new();
        store.add("ok", Tensor::vector(vec![1.0]), true);
        store.add("bad.weight", Tensor::vector(vec![2.0]), true);
        for p in store.iter_mut() {
            p.grad[0] = if p.name == "bad.weight" { f64::NAN } else { 0.5 };
        }
        let mut state = AdamState::new(&store);
        let err = adam_step(&mut state, &mut store, &AdamConfig::default()).unwrap_err();
        match err {
            Error::NumericFault { param } => assert_eq!(param, "bad.weight"),
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(store.by_name("ok").unwrap().value.data(), &[1.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn metrics_hand_cases() {
        // perfect predictions
        let m = EvalMetrics::from_predictions(&[(0, 0), (1, 1), (2, 2), (3, 3)], 4);
        assert_eq!(m.wa, 1.0);
        assert_eq!(m.ua, 1.0);

        // confusion [[1,1],[0,2]]: WA = 3/4, UA = (0.5 + 1)/2
        let m = EvalMetrics::from_confusion(vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(m.wa, 0.75);
        assert_eq!(m.ua, 0.75);

        // all-one-class predictor on balanced 4-class data
        let pairs: Vec<(usize, usize)> = (0..4).flat_map(|c| (0..5).map(move |_| (c, 0))).collect();
        let m = EvalMetrics::from_predictions(&pairs, 4);
        assert_eq!(m.wa, 0.25);
        assert_eq!(m.ua, 0.25);
    }

    #[test]
    fn metric_identities_on_random_confusions() {
        let mut rng = SeededRng::new(55);
        for _ in 0..50 {
            let c = 2 + rng.below(4);
            let confusion: Vec<Vec<usize>> =
                (0..c).map(|_| (0..c).map(|_| rng.below(9)).collect()).collect();
            let m = EvalMetrics::from_confusion(confusion.clone());
            let total: usize = confusion.iter().flatten().sum();
            if total == 0 {
                continue;
            }
            let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
            assert!((m.wa - trace as f64 / total as f64).abs() < 1e-15);
            let recalls: Vec<f64> = confusion
                .iter()
                .enumerate()
                .filter(|(_, row)| row.iter().sum::<usize>() > 0)
                .map(|(i, row)| row[i] as f64 / row.iter().sum::<usize>() as f64)
                .collect();
            let want_ua = recalls.iter().sum::<f64>() / recalls.len() as f64;
            assert!((m.ua - want_ua).abs() < 1e-15);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_class(&[0.3, 0.3, 0.2, 0.2]), 0);
        assert_eq!(argmax_class(&[0.1, 0.4, 0.4, 0.1]), 1);
    }

    // ── tiny end-to-end fixtures ─────────────────────────────────────

    fn tiny_model_and_data(
        n: usize,
        seed: u64,
    ) -> (GbanModel, Vec<PreparedSample>, Vocabulary) {
        let mut rng = SeededRng::new(seed);
        let words: Vec<String> = ["up", "down", "left", "right", "void"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let vocab = vocabulary_from_tokens(&words, 6, &mut rng);
        let config = ModelConfig {
            embed_dim: 6,
            m_max: 5,
            speech_conv: vec![ConvSpec::new(3, 4, 2)],
            text_conv: vec![ConvSpec::new(2, 4, 1)],
            hidden_speech: 3,
            hidden_text: 3,
            classifier_hidden: 6,
            classes: 4,
            dropout: 0.0,
            fusion: FusionMode::Ggf,
        };
        let model = GbanModel::new(config, &vocab, &mut rng).unwrap();

        // class-coded features and keywords make the task learnable
        let keywords = ["up", "down", "left", "right"];
        let data: Vec<PreparedSample> = (0..n)
            .map(|i| {
                let label = i % 4;
                let budget = 10;
                let n_valid = 8;
                let mut feat = vec![0.0; budget * FEATURE_DIM];
                for t in 0..n_valid {
                    for d in 0..FEATURE_DIM {
                        let signal = if d % 4 == label { 1.0 } else { 0.0 };
                        feat[t * FEATURE_DIM + d] = signal + 0.1 * rng.normal();
                    }
                }
                let features = FrameSequence {
                    frames: Tensor::new(vec![budget, FEATURE_DIM], feat).unwrap(),
                    n_valid,
                    frame_period: 0.01,
                };
                let tokens = vocab.encode(&format!("{} void", keywords[label]), 5);
                PreparedSample {
                    features,
                    tokens,
                    label,
                }
            })
            .collect();
        (model, data, vocab)
    }

    #[test]
    fn zero_lr_leaves_parameters_untouched() {
        let (mut model, data, _vocab) = tiny_model_and_data(12, 5);
        let before = model.store.snapshot();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 2,
            patience: 10,
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            l2: 0.0,
            val_fraction: 0.1,
            seed: 3,
        };
        train(&mut model, &data, &cfg).unwrap();
        for ((name, t), p) in before.iter().zip(model.store.iter()) {
            assert_eq!(name, &p.name);
            assert_eq!(t.data(), p.value.data(), "{name} changed");
        }
    }

    #[test]
    fn same_seed_gives_identical_loss_sequences() {
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            patience: 10,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            l2: 0.01,
            val_fraction: 0.1,
            seed: 11,
        };
        let run = || {
            let (mut model, data, _vocab) = tiny_model_and_data(12, 5);
            let out = train(&mut model, &data, &cfg).unwrap();
            out.log
                .iter()
                .map(|r| r.train_loss.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn train_rejects_dataset_smaller_than_batch() {
        let (mut model, data, _vocab) = tiny_model_and_data(3, 5);
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut model, &data, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (mut model, data, _vocab) = tiny_model_and_data(24, 9);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 6,
            patience: 20,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            l2: 0.0,
            val_fraction: 0.1,
            seed: 2,
        };
        let out = train(&mut model, &data, &cfg).unwrap();
        assert!(out.log.len() >= 5);
        for w in out.log.windows(2).take(5) {
            assert!(
                w[1].train_loss < w[0].train_loss,
                "loss should fall: {:?}",
                out.log
            );
        }
    }

    #[test]
    fn kfold_partitions_groups_and_averages() {
        let (_, data, vocab) = tiny_model_and_data(20, 5);
        let grouped: Vec<(PreparedSample, String)> = data
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, format!("g{}", i % 5)))
            .collect();
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 1,
            patience: 5,
            adam: AdamConfig::default(),
            l2: 0.01,
            val_fraction: 0.1,
            seed: 7,
        };
        let config = {
            let mut m = ModelConfig {
                embed_dim: 6,
                m_max: 5,
                speech_conv: vec![ConvSpec::new(3, 4, 2)],
                text_conv: vec![ConvSpec::new(2, 4, 1)],
                hidden_speech: 3,
                hidden_text: 3,
                classifier_hidden: 6,
                classes: 4,
                dropout: 0.0,
                fusion: FusionMode::Ggf,
            };
            m.dropout = 0.0;
            m
        };
        let out = kfold_run(
            |rng| GbanModel::new(config.clone(), &vocab, rng),
            &grouped,
            5,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.folds.len(), 5);
        // each fold's test group has exactly 4 samples
        for f in &out.folds {
            let total: usize = f.metrics.confusion.iter().flatten().sum();
            assert_eq!(total, 4);
        }
        let mean_wa = out.folds.iter().map(|f| f.metrics.wa).sum::<f64>() / 5.0;
        assert!((out.avg_wa - mean_wa).abs() < 1e-12);

        // wrong k is a contract error
        assert!(kfold_run(
            |rng| GbanModel::new(config.clone(), &vocab, rng),
            &grouped,
            4,
            &cfg,
        )
        .is_err());
    }
}
