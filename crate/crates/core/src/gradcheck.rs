//! Finite-difference verification of every differentiable component.
//!
//! Each check sets up a small random instance whose inputs and weights
//! all live in a [`ParamStore`], computes analytic gradients through
//! the tape, then re-evaluates the forward closure with each coordinate
//! perturbed by ±h and compares. The forward closure is exactly the
//! production code path; only the comparison is independent.
//!
//! The reported error is `|analytic - fd| / max(|analytic|, |fd|, 1e-2)`;
//! the floor keeps near-zero gradients from turning finite-difference
//! noise into spurious ratios.

use crate::alignment::{align_speech_to_text, align_text_to_speech};
use crate::encoders::{BiLstm, ConvSpec, LstmLayer};
use crate::error::Result;
use crate::features::{FrameSequence, FEATURE_DIM};
use crate::fusion::GgfLayer;
use crate::model::{Classifier, FusionMode, GbanModel, ModelConfig, PreparedSample};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, TensorRef};
use crate::tensor::Tensor;
use crate::text::vocabulary_from_tokens;
use crate::train::nll_loss;

pub const COMPONENT_TOL: f64 = 1e-6;
pub const COMPOSED_TOL: f64 = 1e-4;
const COMPONENT_STEP: f64 = 1e-5;
const COMPOSED_STEP: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub coords_checked: usize,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<TensorRef>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    Ok(tape.value(loss)[0])
}

fn fd_check<F>(name: &str, tol: f64, step: f64, mut store: ParamStore, f: F) -> Result<CheckResult>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<TensorRef>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &store)?;
    tape.backward(loss)?;
    tape.accumulate_param_grads(&mut store, 1.0);
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.clone()).collect();

    let mut max_rel_err: f64 = 0.0;
    let mut coords_checked = 0;
    for pi in 0..store.len() {
        for ci in 0..analytic[pi].len() {
            let original = store.get(ParamId(pi)).value.data()[ci];
            store.get_mut(ParamId(pi)).value.data_mut()[ci] = original + step;
            let plus = eval_loss(&store, &f)?;
            store.get_mut(ParamId(pi)).value.data_mut()[ci] = original - step;
            let minus = eval_loss(&store, &f)?;
            store.get_mut(ParamId(pi)).value.data_mut()[ci] = original;

            let fd = (plus - minus) / (2.0 * step);
            let a = analytic[pi][ci];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            max_rel_err = max_rel_err.max(rel);
            coords_checked += 1;
        }
    }
    Ok(CheckResult {
        name: name.into(),
        max_rel_err,
        tolerance: tol,
        coords_checked,
    })
}

/// Loss surrogate: a fixed random projection of the output to a scalar,
/// so every output coordinate gets a distinct upstream gradient.
fn project(tape: &mut Tape, out: TensorRef, weights: &Tensor) -> Result<TensorRef> {
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn proj_for(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

fn check_matmul(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::randn(vec![3, 4], 1.0, &mut rng), false);
    let b = store.add("b", Tensor::randn(vec![4, 2], 1.0, &mut rng), false);
    let proj = proj_for(&[3, 2], &mut rng);
    fd_check("matmul", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let av = tape.param(store, a);
        let bv = tape.param(store, b);
        let c = tape.matmul(av, bv)?;
        project(tape, c, &proj)
    })
}

fn check_conv1d(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let input = store.add("input", Tensor::randn(vec![10, 2], 1.0, &mut rng), false);
    let kernels = store.add("kernels", Tensor::randn(vec![3, 2, 4], 1.0, &mut rng), false);
    let bias = store.add("bias", Tensor::randn(vec![4], 1.0, &mut rng), false);
    let proj = proj_for(&[8, 4], &mut rng);
    fd_check("conv1d", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let i = tape.param(store, input);
        let k = tape.param(store, kernels);
        let b = tape.param(store, bias);
        let c = tape.conv1d(i, k, b, 1)?;
        project(tape, c, &proj)
    })
}

fn check_max_pool(seed: u64) -> Result<CheckResult> {
    // values spread far enough apart that ±h never flips an argmax
    let mut rng = SeededRng::new(seed);
    let mut data: Vec<f64> = (0..36).map(|i| i as f64 * 0.1).collect();
    rng.shuffle(&mut data);
    let mut store = ParamStore::new();
    let input = store.add("input", Tensor::new(vec![12, 3], data)?, false);
    let proj = proj_for(&[6, 3], &mut rng);
    fd_check("max_pool1d", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let i = tape.param(store, input);
        let p = tape.max_pool1d(i, 2, 2)?;
        project(tape, p, &proj)
    })
}

fn check_average_pool(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = (0..5)
        .map(|i| store.add(format!("v{i}"), Tensor::randn(vec![8], 1.0, &mut rng), false))
        .collect();
    let proj = proj_for(&[8], &mut rng);
    fd_check("average_pool", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let refs: Vec<TensorRef> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let m = tape.average_pool(&refs)?;
        project(tape, m, &proj)
    })
}

fn check_activation(seed: u64, kind: crate::tape::Activation, name: &str) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut data: Vec<f64> = (0..24).map(|_| rng.normal()).collect();
    if kind == crate::tape::Activation::Relu {
        // keep inputs away from the kink at zero
        for v in &mut data {
            *v = v.signum() * (0.1 + v.abs());
        }
    }
    let mut store = ParamStore::new();
    let input = store.add("input", Tensor::vector(data), false);
    let proj = proj_for(&[24], &mut rng);
    fd_check(name, COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let i = tape.param(store, input);
        let y = tape.activation(i, kind);
        project(tape, y, &proj)
    })
}

fn check_softmax(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let scores = store.add("scores", Tensor::randn(vec![7], 1.5, &mut rng), false);
    let proj = proj_for(&[7], &mut rng);
    fd_check("softmax", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let s = tape.param(store, scores);
        let y = tape.softmax(s)?;
        project(tape, y, &proj)
    })
}

fn check_lstm_step(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let layer = LstmLayer::init(&mut store, &mut rng, "lstm", 3, 4)?;
    let x = store.add("x", Tensor::randn(vec![3], 1.0, &mut rng), false);
    let h_prev = store.add("h_prev", Tensor::randn(vec![4], 1.0, &mut rng), false);
    let c_prev = store.add("c_prev", Tensor::randn(vec![4], 1.0, &mut rng), false);
    let proj_h = proj_for(&[4], &mut rng);
    let proj_c = proj_for(&[4], &mut rng);
    fd_check("lstm_step", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let xv = tape.param(store, x);
        let hv = tape.param(store, h_prev);
        let cv = tape.param(store, c_prev);
        let (h, c) = layer.step(tape, store, xv, hv, cv)?;
        let lh = project(tape, h, &proj_h)?;
        let lc = project(tape, c, &proj_c)?;
        tape.add(lh, lc)
    })
}

fn check_bilstm(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let bi = BiLstm::init(&mut store, &mut rng, "bi", 3, 2)?;
    let xs: Vec<ParamId> = (0..6)
        .map(|i| store.add(format!("x{i}"), Tensor::randn(vec![3], 1.0, &mut rng), false))
        .collect();
    let projs: Vec<Tensor> = (0..6).map(|_| proj_for(&[4], &mut rng)).collect();
    let proj_last = proj_for(&[4], &mut rng);
    fd_check("bilstm", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let seq: Vec<TensorRef> = xs.iter().map(|&id| tape.param(store, id)).collect();
        let out = bi.run(tape, store, &seq, 6)?;
        let mut acc = project(tape, out.last_hidden, &proj_last)?;
        for (state, proj) in out.outputs.iter().zip(&projs) {
            let l = project(tape, *state, proj)?;
            acc = tape.add(acc, l)?;
        }
        Ok(acc)
    })
}

fn alignment_store(seed: u64) -> (ParamStore, ParamId, ParamId, SeededRng) {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    // padded rows stay random garbage: masking must null their effect
    let speech = store.add("speech_seq", Tensor::randn(vec![4, 5], 1.0, &mut rng), false);
    let text = store.add("text_seq", Tensor::randn(vec![3, 5], 1.0, &mut rng), false);
    (store, speech, text, rng)
}

fn check_align_speech_to_text(seed: u64) -> Result<CheckResult> {
    let (store, speech, text, mut rng) = alignment_store(seed);
    let proj = proj_for(&[5], &mut rng);
    fd_check(
        "align_speech_to_text",
        COMPONENT_TOL,
        COMPONENT_STEP,
        store,
        move |tape, store| {
            let s = tape.param(store, speech);
            let t = tape.param(store, text);
            let out = align_speech_to_text(tape, s, t, 3, 2)?;
            project(tape, out.rep, &proj)
        },
    )
}

fn check_align_text_to_speech(seed: u64) -> Result<CheckResult> {
    let (store, speech, text, mut rng) = alignment_store(seed);
    let proj = proj_for(&[5], &mut rng);
    fd_check(
        "align_text_to_speech",
        COMPONENT_TOL,
        COMPONENT_STEP,
        store,
        move |tape, store| {
            let s = tape.param(store, speech);
            let t = tape.param(store, text);
            let out = align_text_to_speech(tape, t, s, 2, 3)?;
            project(tape, out.rep, &proj)
        },
    )
}

fn check_ggf(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let layer = GgfLayer::init(&mut store, &mut rng, "ggf", 4)?;
    let reps: Vec<ParamId> = ["a_s", "a_t", "h_s", "h_t"]
        .iter()
        .map(|n| store.add(*n, Tensor::randn(vec![4], 1.0, &mut rng), false))
        .collect();
    let proj = proj_for(&[4], &mut rng);
    fd_check("ggf", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let r: Vec<TensorRef> = reps.iter().map(|&id| tape.param(store, id)).collect();
        let out = layer.forward(tape, store, r[0], r[1], r[2], r[3])?;
        project(tape, out.fused, &proj)
    })
}

fn check_classifier(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let clf = Classifier::init(&mut store, &mut rng, "clf", 6, 5, 4)?;
    let h = store.add("h", Tensor::randn(vec![6], 1.0, &mut rng), false);
    let proj = proj_for(&[4], &mut rng);
    fd_check("classifier", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let hv = tape.param(store, h);
        let mut dummy = SeededRng::new(0);
        let probs = clf.forward(tape, store, hv, false, 0.5, &mut dummy)?;
        project(tape, probs, &proj)
    })
}

fn check_loss(seed: u64) -> Result<CheckResult> {
    let mut rng = SeededRng::new(seed);
    let mut store = ParamStore::new();
    let logits: Vec<ParamId> = (0..3)
        .map(|i| store.add(format!("logits{i}"), Tensor::randn(vec![4], 1.5, &mut rng), false))
        .collect();
    let labels = vec![2usize, 0, 3];
    fd_check("nll_loss", COMPONENT_TOL, COMPONENT_STEP, store, move |tape, store| {
        let probs: Vec<TensorRef> = logits
            .iter()
            .map(|&id| {
                let l = tape.param(store, id);
                tape.softmax(l)
            })
            .collect::<Result<_>>()?;
        nll_loss(tape, &probs, &labels)
    })
}

/// Tiny full model used by the composed end-to-end check.
pub fn composed_fixture(seed: u64) -> Result<(GbanModel, Vec<PreparedSample>)> {
    let mut rng = SeededRng::new(seed);
    let words: Vec<String> = ["one", "two", "three", "four", "five"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let vocab = vocabulary_from_tokens(&words, 8, &mut rng);
    let config = ModelConfig {
        embed_dim: 8,
        m_max: 5,
        speech_conv: vec![ConvSpec::new(3, 4, 2)],
        text_conv: vec![ConvSpec::new(2, 4, 1)],
        hidden_speech: 3,
        hidden_text: 3,
        classifier_hidden: 5,
        classes: 4,
        dropout: 0.0, // composed check runs with dropout disabled
        fusion: FusionMode::Ggf,
    };
    let model = GbanModel::new(config, &vocab, &mut rng)?;
    let budget = 12;
    let make_sample = |rng: &mut SeededRng, n_valid: usize, sentence: &str, label: usize| {
        let mut data = vec![0.0; budget * FEATURE_DIM];
        for v in data[..n_valid * FEATURE_DIM].iter_mut() {
            *v = rng.normal();
        }
        PreparedSample {
            features: FrameSequence {
                frames: Tensor::new(vec![budget, FEATURE_DIM], data).expect("shape"),
                n_valid,
                frame_period: 0.01,
            },
            tokens: vocab.encode(sentence, 5),
            label,
        }
    };
    let samples = vec![
        make_sample(&mut rng, 9, "one three five", 1),
        // single-token sentence exercises the padded-prefix path
        make_sample(&mut rng, 12, "two", 3),
    ];
    Ok((model, samples))
}

fn check_composed(seed: u64) -> Result<CheckResult> {
    let (model, samples) = composed_fixture(seed)?;
    let fd_store = model.store.clone();
    fd_check("composed_gban", COMPOSED_TOL, COMPOSED_STEP, fd_store, move |tape, store| {
        let mut dummy = SeededRng::new(0);
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for s in &samples {
            let out = model.forward_in(tape, store, s, false, &mut dummy)?;
            probs.push(out.probs);
            labels.push(s.label);
        }
        let total = nll_loss(tape, &probs, &labels)?;
        Ok(tape.affine(total, 1.0 / samples.len() as f64, 0.0))
    })
}

/// Runs every component check (optionally filtered by substring).
/// Deterministic for a fixed seed.
pub fn run_all(seed: u64, only: Option<&str>) -> Result<Vec<CheckResult>> {
    type CheckFn = fn(u64) -> Result<CheckResult>;
    let checks: Vec<(&str, CheckFn)> = vec![
        ("matmul", check_matmul),
        ("conv1d", check_conv1d),
        ("max_pool1d", check_max_pool),
        ("average_pool", check_average_pool),
        ("tanh", |s| check_activation(s, crate::tape::Activation::Tanh, "tanh")),
        ("sigmoid", |s| {
            check_activation(s, crate::tape::Activation::Sigmoid, "sigmoid")
        }),
        ("relu", |s| check_activation(s, crate::tape::Activation::Relu, "relu")),
        ("softmax", check_softmax),
        ("lstm_step", check_lstm_step),
        ("bilstm", check_bilstm),
        ("align_speech_to_text", check_align_speech_to_text),
        ("align_text_to_speech", check_align_text_to_speech),
        ("ggf", check_ggf),
        ("classifier", check_classifier),
        ("nll_loss", check_loss),
        ("composed_gban", check_composed),
    ];
    let mut results = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        if let Some(filter) = only {
            if !name.contains(filter) {
                continue;
            }
        }
        results.push(check(seed.wrapping_add(i as u64 * 7919))?);
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes_its_tolerance() {
        let results = run_all(2024, None).unwrap();
        assert!(results.len() >= 12, "{} component checks", results.len());
        for r in &results {
            assert!(
                r.pass(),
                "{} failed: max rel err {} > {}",
                r.name,
                r.max_rel_err,
                r.tolerance
            );
        }
    }

    #[test]
    fn results_are_deterministic_for_a_seed() {
        let a = run_all(7, Some("ggf")).unwrap();
        let b = run_all(7, Some("ggf")).unwrap();
        assert_eq!(a[0].max_rel_err.to_bits(), b[0].max_rel_err.to_bits());
    }

    #[test]
    fn filter_selects_single_component() {
        let results = run_all(1, Some("softmax")).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].name, "softmax");
    }
}
