//! Full model assembly: encoders, alignment, fusion and the
//! classification head, wired per run configuration.
//!
//! Only the components a fusion mode actually uses are built, so a
//! single-representation run (`single:h_t`) carries no speech encoder
//! or alignment parameters.

use crate::alignment::{align_speech_to_text, align_text_to_speech};
use crate::encoders::{stack_output_len, ConvSpec, Encoder};
use crate::error::{Error, Result};
use crate::features::FrameSequence;
use crate::fusion::{concat_fusion, GgfLayer, RepSubset};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, TensorRef};
use crate::tensor::Tensor;
use crate::text::{TokenSequence, Vocabulary};

pub const N_CLASSES: usize = 4;

/// One of the four utterance representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepKind {
    AlignedSpeech,
    AlignedText,
    LastSpeech,
    LastText,
}

impl RepKind {
    pub fn label(&self) -> &'static str {
        match self {
            RepKind::AlignedSpeech => "a_s",
            RepKind::AlignedText => "a_t",
            RepKind::LastSpeech => "h_s",
            RepKind::LastText => "h_t",
        }
    }
}

/// How the representations feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Ggf,
    Concat1,
    Concat2,
    Single(RepKind),
}

impl FusionMode {
    pub fn parse(s: &str) -> Result<FusionMode> {
        match s {
            "ggf" => Ok(FusionMode::Ggf),
            "concat1" => Ok(FusionMode::Concat1),
            "concat2" => Ok(FusionMode::Concat2),
            "single:a_s" => Ok(FusionMode::Single(RepKind::AlignedSpeech)),
            "single:a_t" => Ok(FusionMode::Single(RepKind::AlignedText)),
            "single:h_s" => Ok(FusionMode::Single(RepKind::LastSpeech)),
            "single:h_t" => Ok(FusionMode::Single(RepKind::LastText)),
            other => Err(Error::contract(format!(
                "unknown fusion mode '{other}' (expected ggf, concat1, concat2 or single:<a_s|a_t|h_s|h_t>)"
            ))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            FusionMode::Ggf => "ggf".into(),
            FusionMode::Concat1 => "concat1".into(),
            FusionMode::Concat2 => "concat2".into(),
            FusionMode::Single(k) => format!("single:{}", k.label()),
        }
    }

    fn needs(&self) -> RepSubset {
        match self {
            FusionMode::Ggf | FusionMode::Concat2 => RepSubset::ALL,
            FusionMode::Concat1 => RepSubset::ALIGNED,
            FusionMode::Single(RepKind::AlignedSpeech) => RepSubset::single(0),
            FusionMode::Single(RepKind::AlignedText) => RepSubset::single(1),
            FusionMode::Single(RepKind::LastSpeech) => RepSubset::single(2),
            FusionMode::Single(RepKind::LastText) => RepSubset::single(3),
        }
    }
}

/// Architecture hyperparameters. The paper leaves these unreported;
/// the defaults keep the encoded speech length near 90 and the text
/// length near 10 for full-budget inputs.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub m_max: usize,
    pub speech_conv: Vec<ConvSpec>,
    pub text_conv: Vec<ConvSpec>,
    pub hidden_speech: usize,
    pub hidden_text: usize,
    pub classifier_hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    pub fusion: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            m_max: 25,
            speech_conv: vec![ConvSpec::new(5, 64, 4), ConvSpec::new(3, 128, 2)],
            text_conv: vec![ConvSpec::new(3, 128, 2)],
            hidden_speech: 128,
            hidden_text: 128,
            classifier_hidden: 128,
            classes: N_CLASSES,
            dropout: 0.5,
            fusion: FusionMode::Ggf,
        }
    }
}

impl ModelConfig {
    /// Width of the vector entering the classifier.
    pub fn fused_dim(&self) -> usize {
        let d = 2 * self.hidden_speech.max(self.hidden_text);
        match self.fusion {
            FusionMode::Ggf | FusionMode::Single(_) => d,
            FusionMode::Concat1 => 2 * d,
            FusionMode::Concat2 => 4 * d,
        }
    }

    fn validate(&self) -> Result<()> {
        let needs = self.fusion.needs();
        let aligned = needs.a_s || needs.a_t;
        if aligned && self.hidden_speech != self.hidden_text {
            return Err(Error::contract(format!(
                "alignment requires equal hidden sizes, got speech {} and text {}",
                self.hidden_speech, self.hidden_text
            )));
        }
        if self.classes < 2 {
            return Err(Error::contract("need at least 2 classes"));
        }
        Ok(())
    }
}

/// ReLU hidden layer plus softmax output; dropout on the input at
/// training time.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub w_g: ParamId,
    pub w_e: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
}

impl Classifier {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut SeededRng,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        classes: usize,
    ) -> Result<Self> {
        Ok(Classifier {
            w_g: store.add(
                format!("{prefix}.w_g"),
                Tensor::xavier_normal(vec![hidden, input_dim], rng)?,
                true,
            ),
            w_e: store.add(
                format!("{prefix}.w_e"),
                Tensor::xavier_normal(vec![classes, hidden], rng)?,
                true,
            ),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(vec![classes]), false),
            input_dim,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: TensorRef,
        training: bool,
        dropout_rate: f64,
        rng: &mut SeededRng,
    ) -> Result<TensorRef> {
        if tape.shape(h) != [self.input_dim] {
            return Err(Error::DimMismatch {
                op: "classify",
                lhs: tape.shape(h).to_vec(),
                rhs: vec![self.input_dim],
            });
        }
        let dropped = tape.dropout(h, dropout_rate, training, rng)?;
        let w_g = tape.param(store, self.w_g);
        let lin = tape.matvec(w_g, dropped)?;
        let g = tape.relu(lin);
        let w_e = tape.param(store, self.w_e);
        let b = tape.param(store, self.b);
        let logits_lin = tape.matvec(w_e, g)?;
        let logits = tape.add(logits_lin, b)?;
        tape.softmax(logits)
    }
}

/// One utterance ready for the model.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub features: FrameSequence,
    pub tokens: TokenSequence,
    pub label: usize,
}

/// Everything a forward pass exposes for loss, inspection and reports.
pub struct ForwardOut {
    pub probs: TensorRef,
    pub z_p: Option<TensorRef>,
    pub z_q: Option<TensorRef>,
    /// Attention over speech positions per text position, `[L, K]`.
    pub alpha: Option<TensorRef>,
    /// Attention over text positions per speech position, `[K, L]`.
    pub beta: Option<TensorRef>,
    pub k_valid: Option<usize>,
    pub l_valid: Option<usize>,
}

pub struct GbanModel {
    pub store: ParamStore,
    pub config: ModelConfig,
    embedding: Option<ParamId>,
    speech: Option<Encoder>,
    text: Option<Encoder>,
    ggf: Option<GgfLayer>,
    classifier: Classifier,
}

impl GbanModel {
    pub fn new(config: ModelConfig, vocab: &Vocabulary, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        if vocab.dim != config.embed_dim {
            return Err(Error::contract(format!(
                "vocabulary dimension {} does not match configured embed_dim {}",
                vocab.dim, config.embed_dim
            )));
        }
        let needs = config.fusion.needs();
        let speech_needed = needs.a_s || needs.a_t || needs.h_s;
        let text_needed = needs.a_s || needs.a_t || needs.h_t;

        let mut store = ParamStore::new();
        let embedding = text_needed.then(|| {
            // pretrained rows are starting values; the matrix trains
            store.add("embedding", vocab.matrix.clone(), false)
        });
        let speech = speech_needed
            .then(|| {
                Encoder::init(
                    &mut store,
                    rng,
                    "speech",
                    crate::features::FEATURE_DIM,
                    &config.speech_conv,
                    config.hidden_speech,
                )
            })
            .transpose()?;
        let text = text_needed
            .then(|| {
                Encoder::init(
                    &mut store,
                    rng,
                    "text",
                    config.embed_dim,
                    &config.text_conv,
                    config.hidden_text,
                )
            })
            .transpose()?;
        let ggf = matches!(config.fusion, FusionMode::Ggf)
            .then(|| GgfLayer::init(&mut store, rng, "ggf", 2 * config.hidden_speech))
            .transpose()?;
        let classifier = Classifier::init(
            &mut store,
            rng,
            "classifier",
            config.fused_dim(),
            config.classifier_hidden,
            config.classes,
        )?;
        Ok(GbanModel {
            store,
            config,
            embedding,
            speech,
            text,
            ggf,
            classifier,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        sample: &PreparedSample,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<ForwardOut> {
        // borrow the store out of self so forward_in can take any store
        let store = &self.store;
        self.forward_in(tape, store, sample, training, rng)
    }

    /// Forward pass reading parameters from an explicit store with the
    /// same layout as `self.store` (the finite-difference checker
    /// perturbs a cloned store).
    pub fn forward_in(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &PreparedSample,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<ForwardOut> {
        let needs = self.config.fusion.needs();

        let enc_s = match &self.speech {
            Some(encoder) => {
                let budget = sample.features.budget();
                let prefix = encoder.required_prefix(sample.features.n_valid, budget)?;
                let cols = crate::features::FEATURE_DIM;
                let prefix_data = sample.features.frames.data()[..prefix * cols].to_vec();
                let prefix_t = Tensor::new(vec![prefix, cols], prefix_data)?;
                let input = tape.constant(&prefix_t);
                Some(encoder.encode(tape, store, input, budget)?)
            }
            None => None,
        };
        let enc_t = match &self.text {
            Some(encoder) => {
                let m_max = self.config.m_max;
                if sample.tokens.indices.len() != m_max {
                    return Err(Error::contract(format!(
                        "token sequence length {} does not match m_max {}",
                        sample.tokens.indices.len(),
                        m_max
                    )));
                }
                let prefix = encoder.required_prefix(sample.tokens.n_valid.max(1), m_max)?;
                let emb = tape.param(store, self.embedding.expect("text path has embedding"));
                let gathered = tape.gather_rows(emb, &sample.tokens.indices[..prefix])?;
                Some(encoder.encode(tape, store, gathered, m_max)?)
            }
            None => None,
        };

        let mut alpha = None;
        let mut beta = None;
        let mut a_s = None;
        let mut a_t = None;
        if needs.a_s || needs.a_t {
            let s = enc_s.as_ref().expect("alignment needs speech");
            let t = enc_t.as_ref().expect("alignment needs text");
            if needs.a_s {
                let out = align_speech_to_text(tape, s.seq, t.seq, s.k_valid, t.k_valid)?;
                alpha = Some(out.attn);
                a_s = Some(out.rep);
            }
            if needs.a_t {
                let out = align_text_to_speech(tape, t.seq, s.seq, t.k_valid, s.k_valid)?;
                beta = Some(out.attn);
                a_t = Some(out.rep);
            }
        }

        let mut z_p = None;
        let mut z_q = None;
        let fused = match self.config.fusion {
            FusionMode::Ggf => {
                let ggf = self.ggf.as_ref().expect("ggf layer built");
                let out = ggf.forward(
                    tape,
                    store,
                    a_s.expect("a_s computed"),
                    a_t.expect("a_t computed"),
                    enc_s.as_ref().expect("speech encoded").last_hidden,
                    enc_t.as_ref().expect("text encoded").last_hidden,
                )?;
                z_p = Some(out.z_p);
                z_q = Some(out.z_q);
                // the in-fusion dropout site
                tape.dropout(out.fused, self.config.dropout, training, rng)?
            }
            FusionMode::Concat1 | FusionMode::Concat2 | FusionMode::Single(_) => {
                let zero = |tape: &mut Tape, dim: usize| tape.zeros(vec![dim]);
                let d = 2 * self.config.hidden_speech.max(self.config.hidden_text);
                let a_s_v = a_s.unwrap_or_else(|| zero(tape, d));
                let a_t_v = a_t.unwrap_or_else(|| zero(tape, d));
                let h_s_v = enc_s
                    .as_ref()
                    .map(|e| e.last_hidden)
                    .unwrap_or_else(|| zero(tape, d));
                let h_t_v = enc_t
                    .as_ref()
                    .map(|e| e.last_hidden)
                    .unwrap_or_else(|| zero(tape, d));
                concat_fusion(tape, a_s_v, a_t_v, h_s_v, h_t_v, needs)?
            }
        };

        let probs = self.classifier.forward(
            tape,
            store,
            fused,
            training,
            self.config.dropout,
            rng,
        )?;
        Ok(ForwardOut {
            probs,
            z_p,
            z_q,
            alpha,
            beta,
            k_valid: enc_s.as_ref().map(|e| e.k_valid),
            l_valid: enc_t.as_ref().map(|e| e.k_valid),
        })
    }

    /// Encoded speech length the conv arithmetic implies for a full
    /// budget of `n` frames.
    pub fn speech_len_for(&self, n: usize) -> Option<usize> {
        stack_output_len(n, &self.config.speech_conv)
    }
}
