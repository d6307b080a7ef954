//! Synthetic 4-class dataset generator.
//!
//! Each utterance encodes its class twice: a two-segment tone pattern
//! in the waveform and class keywords in the transcript. Knobs turn
//! either channel off (`text_only` replaces waveforms with
//! class-independent noise, `speech_only` drops the keywords), which
//! lets directional claims about modality contribution be tested
//! without any licensed corpus. A matching pretrained-vector file
//! covering the whole synthetic vocabulary is emitted alongside.

use crate::error::{Error, Result};
use crate::features::{write_wav, AudioClip};
use crate::manifest::{save_manifest, ManifestEntry, LABELS};
use crate::rng::SeededRng;
use std::io::Write;
use std::path::PathBuf;

/// (low, high) tone pair per class: happy rises, sad falls, angry sits
/// low, neutral stays flat.
const TONE_PAIRS: [(f64, f64); 4] = [
    (523.0, 784.0),
    (147.0, 220.0),
    (392.0, 262.0),
    (330.0, 330.0),
];

const KEYWORDS: [[&str; 3]; 4] = [
    ["great", "wonderful", "fantastic"],
    ["unfair", "terrible", "furious"],
    ["lonely", "miserable", "gloomy"],
    ["okay", "fine", "regular"],
];

const FILLERS: [&str; 10] = [
    "that", "is", "so", "the", "day", "it", "feels", "really", "quite", "just",
];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Waveforms become class-independent noise.
    pub text_only: bool,
    /// Transcripts become class-independent filler.
    pub speech_only: bool,
    /// Tone-to-noise ratio in dB.
    pub snr_db: f64,
    pub sample_rate: u32,
    /// Dimension of the emitted pretrained-vector file.
    pub embed_dim: usize,
    pub groups: usize,
    pub clip_seconds: (f64, f64),
}

impl SynthConfig {
    pub fn new(n_per_class: usize, seed: u64, out_dir: PathBuf) -> Self {
        SynthConfig {
            n_per_class,
            seed,
            out_dir,
            text_only: false,
            speech_only: false,
            snr_db: 20.0,
            sample_rate: 16_000,
            embed_dim: 50,
            groups: 5,
            clip_seconds: (0.8, 1.4),
        }
    }
}

pub struct SynthSummary {
    pub manifest_path: PathBuf,
    pub vectors_path: PathBuf,
    pub n_utterances: usize,
}

fn synth_waveform(cfg: &SynthConfig, class: usize, rng: &mut SeededRng) -> AudioClip {
    let (lo, hi) = cfg.clip_seconds;
    let seconds = lo + (hi - lo) * rng.uniform();
    let n = (seconds * cfg.sample_rate as f64) as usize;
    let tone_amp = 0.3;
    let noise_amp = tone_amp / 10f64.powf(cfg.snr_db / 20.0);
    let mut samples = vec![0.0; n];
    if !cfg.text_only {
        let (f1, f2) = TONE_PAIRS[class];
        let jitter = |f: f64, rng: &mut SeededRng| f * (1.0 + 0.02 * (rng.uniform() * 2.0 - 1.0));
        let (f1, f2) = (jitter(f1, rng), jitter(f2, rng));
        let half = n / 2;
        for (i, s) in samples.iter_mut().enumerate() {
            let f = if i < half { f1 } else { f2 };
            let t = i as f64 / cfg.sample_rate as f64;
            *s = tone_amp * (2.0 * std::f64::consts::PI * f * t).sin();
        }
    }
    // noise floor; with text_only this is all the waveform carries
    let noise = if cfg.text_only { tone_amp } else { noise_amp };
    for s in samples.iter_mut() {
        *s += noise * rng.normal();
        *s = s.clamp(-1.0, 1.0);
    }
    AudioClip {
        samples,
        sample_rate: cfg.sample_rate,
    }
}

fn synth_transcript(cfg: &SynthConfig, class: usize, rng: &mut SeededRng) -> String {
    let mut words: Vec<&str> = Vec::new();
    if !cfg.speech_only {
        let k = 1 + rng.below(2);
        for _ in 0..k {
            words.push(KEYWORDS[class][rng.below(3)]);
        }
    }
    let fillers = 3 + rng.below(4);
    for _ in 0..fillers {
        words.push(FILLERS[rng.below(FILLERS.len())]);
    }
    rng.shuffle(&mut words);
    words.join(" ")
}

fn write_vectors(path: &PathBuf, dim: usize, rng: &mut SeededRng) -> Result<()> {
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut vocab: Vec<&str> = KEYWORDS.iter().flatten().copied().collect();
    vocab.extend_from_slice(&FILLERS);
    for token in vocab {
        let vals: Vec<String> = (0..dim).map(|_| format!("{:.6}", rng.normal() * 0.4)).collect();
        writeln!(file, "{token} {}", vals.join(" ")).map_err(|e| Error::io(&display, e))?;
    }
    Ok(())
}

/// Generates a balanced dataset: wavs, a manifest, a transcripts TSV
/// and a pretrained-vector file, all under `out_dir`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSummary> {
    if cfg.n_per_class == 0 {
        return Err(Error::contract("synth: n_per_class must be >= 1"));
    }
    if cfg.text_only && cfg.speech_only {
        return Err(Error::contract(
            "synth: text_only and speech_only cannot both be set",
        ));
    }
    let wav_dir = cfg.out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(wav_dir.display().to_string(), e))?;

    let mut rng = SeededRng::new(cfg.seed);
    let n_total = 4 * cfg.n_per_class;
    let mut entries = Vec::with_capacity(n_total);
    let mut transcripts = String::new();
    for i in 0..n_total {
        let class = i % 4;
        let id = format!("utt_{i:04}");
        let clip = synth_waveform(cfg, class, &mut rng);
        let transcript = synth_transcript(cfg, class, &mut rng);
        let wav_rel = format!("wav/{id}.wav");
        write_wav(cfg.out_dir.join(&wav_rel), &clip)?;
        transcripts.push_str(&format!("{id}\t{transcript}\n"));
        entries.push(ManifestEntry {
            id,
            wav_path: wav_rel,
            transcript,
            label: LABELS[class].into(),
            group: format!("session_{}", i % cfg.groups),
        });
    }
    let manifest_path = cfg.out_dir.join("manifest.jsonl");
    save_manifest(&manifest_path, &entries)?;
    let transcripts_path = cfg.out_dir.join("transcripts.tsv");
    std::fs::write(&transcripts_path, transcripts)
        .map_err(|e| Error::io(transcripts_path.display().to_string(), e))?;
    let vectors_path = cfg.out_dir.join("vectors.txt");
    write_vectors(&vectors_path, cfg.embed_dim, &mut rng)?;
    Ok(SynthSummary {
        manifest_path,
        vectors_path,
        n_utterances: n_total,
    })
}
