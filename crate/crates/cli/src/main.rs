mod pipeline;
mod report;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gban_core::checkpoint;
use gban_core::config::RunConfig;
use gban_core::fusion::gate_summary;
use gban_core::gradcheck;
use gban_core::model::{FusionMode, GbanModel, RepKind};
use gban_core::rng::SeededRng;
use gban_core::synth::{generate, SynthConfig};
use gban_core::tape::Tape;
use gban_core::train::{evaluate, kfold_run, train};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gban", version, about = "Speech+text emotion classification with gated bidirectional alignment")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; with --kfold, leave-one-group-out cross-validation
    Train(RunArgs),
    /// Evaluate a checkpoint over a manifest
    Eval(EvalArgs),
    /// Train each single representation (h_s, h_t, a_s, a_t) and tabulate WA
    CompareReps(CompareArgs),
    /// Train the fusion variants (concat1, concat2, ggf) and tabulate WA
    CompareFusion(CompareArgs),
    /// Finite-difference checks of every differentiable component
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic 4-class dataset (wavs + manifest + vectors)
    Synth(SynthArgs),
    /// Export gate weights or attention matrices from a checkpoint
    Inspect(InspectArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kfold: Option<usize>,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hold this group out of training and report its metrics
    #[arg(long)]
    holdout_group: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Repetitions with consecutive seeds (rows of the table when
    /// --kfold is not set)
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long)]
    kfold: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    holdout_group: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Only run components whose name contains this substring
    #[arg(long)]
    only: Option<String>,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Utterances per class
    #[arg(long, short = 'n')]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Class-independent noise waveforms (text carries all the signal)
    #[arg(long)]
    text_only: bool,
    /// Class-independent filler transcripts (speech carries all the signal)
    #[arg(long)]
    speech_only: bool,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 50)]
    embed_dim: usize,
    #[arg(long, default_value_t = 5)]
    groups: usize,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// What to export: gates | alignment
    #[arg(long)]
    what: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::CompareReps(args) => cmd_compare(
            args,
            "compare_reps.csv",
            &[
                ("h_s", FusionMode::Single(RepKind::LastSpeech)),
                ("h_t", FusionMode::Single(RepKind::LastText)),
                ("a_s", FusionMode::Single(RepKind::AlignedSpeech)),
                ("a_t", FusionMode::Single(RepKind::AlignedText)),
            ],
        ),
        Cmd::CompareFusion(args) => cmd_compare(
            args,
            "compare_fusion.csv",
            &[
                ("concat1", FusionMode::Concat1),
                ("concat2", FusionMode::Concat2),
                ("ggf", FusionMode::Ggf),
            ],
        ),
        Cmd::Gradcheck(args) => return cmd_gradcheck(args),
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>, kfold: Option<usize>, fusion: Option<&str>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::parse_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = kfold {
        cfg.kfold = Some(k);
    }
    if let Some(f) = fusion {
        cfg.fusion = FusionMode::parse(f)?;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

/// Model initialization stream: matches the per-fold stream layout so a
/// plain train and fold 0 of a k-fold agree.
fn init_rng(seed: u64, fold: u64) -> SeededRng {
    SeededRng::new(seed).fork(100 + fold)
}

fn cmd_train(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.config, args.seed, args.kfold, args.fusion.as_deref(), args.out)?;
    let pipe = pipeline::load(cfg)?;
    let out = pipe.cfg.out.clone();
    let train_cfg = pipe.cfg.train_config();

    match pipe.cfg.kfold {
        Some(k) => {
            let model_cfg = pipe.cfg.model_config();
            let outcome = kfold_run(
                |rng| GbanModel::new(model_cfg.clone(), &pipe.vocab, rng),
                &pipe.grouped_samples(),
                k,
                &train_cfg,
            )?;
            report::ensure_dir(&out)?;
            let mut metrics = String::from("fold,group,wa,ua\n");
            for (i, fold) in outcome.folds.iter().enumerate() {
                checkpoint::save(out.join(format!("checkpoint_fold{i}.bin")), &fold.model.store)?;
                report::write_epoch_log(&out.join(format!("epochs_fold{i}.csv")), &fold.outcome.log)?;
                metrics.push_str(&format!(
                    "{},{},{:.4},{:.4}\n",
                    i + 1,
                    fold.group,
                    fold.metrics.wa,
                    fold.metrics.ua
                ));
            }
            metrics.push_str(&format!("Avg,,{:.4},{:.4}\n", outcome.avg_wa, outcome.avg_ua));
            std::fs::write(out.join("metrics.csv"), &metrics)?;
            print!("{metrics}");
            println!("wrote {} fold checkpoints to {}", k, out.display());
        }
        None => {
            let (train_set, held) = match &args.holdout_group {
                Some(g) => {
                    let (tr, he) = pipe.split_by_group(g)?;
                    (tr, Some((g.clone(), he)))
                }
                None => (pipe.samples(), None),
            };
            let mut model = pipe.build_model(&mut init_rng(pipe.cfg.seed, 0))?;
            let outcome = train(&mut model, &train_set, &train_cfg)?;
            report::ensure_dir(&out)?;
            checkpoint::save(out.join("checkpoint.bin"), &model.store)?;
            report::write_epoch_log(&out.join("epochs.csv"), &outcome.log)?;

            let train_metrics = evaluate(&model, &train_set)?;
            let mut metrics = String::from("split,wa,ua\n");
            metrics.push_str(&format!("train,{:.4},{:.4}\n", train_metrics.wa, train_metrics.ua));
            if let Some((group, held_set)) = held {
                let m = evaluate(&model, &held_set)?;
                metrics.push_str(&format!("holdout:{group},{:.4},{:.4}\n", m.wa, m.ua));
            }
            std::fs::write(out.join("metrics.csv"), &metrics)?;
            print!("{metrics}");
            println!(
                "best val WA {:.4} at epoch {}; checkpoint at {}",
                outcome.best_val_wa,
                outcome.best_epoch,
                out.join("checkpoint.bin").display()
            );
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.config, args.seed, None, None, args.out)?;
    let pipe = pipeline::load(cfg)?;
    let mut model = pipe.build_model(&mut init_rng(pipe.cfg.seed, 0))?;
    checkpoint::load_into(&args.checkpoint, &mut model.store)?;
    let metrics = evaluate(&model, &pipe.samples())?;
    let mut text = String::from("split,wa,ua\n");
    text.push_str(&format!("all,{:.4},{:.4}\n", metrics.wa, metrics.ua));
    print!("{text}");
    println!("confusion (rows = truth): {:?}", metrics.confusion);
    Ok(())
}

fn cmd_compare(args: CompareArgs, file_name: &str, variants: &[(&str, FusionMode)]) -> Result<()> {
    let cfg = load_config(&args.config, args.seed, args.kfold, None, args.out.clone())?;
    let pipe = pipeline::load(cfg)?;
    let out = pipe.cfg.out.clone();
    let columns: Vec<&str> = variants.iter().map(|(name, _)| *name).collect();

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    match pipe.cfg.kfold {
        Some(k) => {
            // per-fold rows; every variant sees the same fold seeds
            let mut per_variant = Vec::new();
            for (_, mode) in variants {
                let model_cfg = {
                    let mut m = pipe.cfg.model_config();
                    m.fusion = *mode;
                    m
                };
                let outcome = kfold_run(
                    |rng| {
                        GbanModel::new(model_cfg.clone(), &pipe.vocab, rng)
                    },
                    &pipe.grouped_samples(),
                    k,
                    &pipe.cfg.train_config(),
                )?;
                per_variant.push(outcome.folds.iter().map(|f| f.metrics.wa).collect::<Vec<f64>>());
            }
            for fold in 0..k {
                rows.push((
                    format!("{}", fold + 1),
                    per_variant.iter().map(|v| v[fold]).collect(),
                ));
            }
        }
        None => {
            let group = match &args.holdout_group {
                Some(g) => g.clone(),
                None => pipe
                    .groups_sorted()
                    .first()
                    .context("dataset has no groups")?
                    .clone(),
            };
            let (train_set, held_set) = pipe.split_by_group(&group)?;
            for rep in 0..args.seeds.max(1) {
                let seed = pipe.cfg.seed + rep as u64;
                let mut values = Vec::with_capacity(variants.len());
                for (_, mode) in variants {
                    let model_cfg = {
                        let mut m = pipe.cfg.model_config();
                        m.fusion = *mode;
                        m
                    };
                    let mut model = GbanModel::new(model_cfg, &pipe.vocab, &mut init_rng(seed, 0))?;
                    let train_cfg = {
                        let mut t = pipe.cfg.train_config();
                        t.seed = seed;
                        t
                    };
                    train(&mut model, &train_set, &train_cfg)?;
                    values.push(evaluate(&model, &held_set)?.wa);
                }
                rows.push((format!("{}", rep + 1), values));
            }
        }
    }

    let table = report::comparison_table("fold", &columns, &rows);
    report::ensure_dir(&out)?;
    std::fs::write(out.join(file_name), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> ExitCode {
    let results = match gradcheck::run_all(args.seed, args.only.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    if results.is_empty() {
        eprintln!("no component matches the filter");
        return ExitCode::FAILURE;
    }
    let mut all_pass = true;
    for r in &results {
        let status = if r.pass() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<22} max_rel_err {:.3e} (tol {:.0e}, {} coords)",
            r.name, r.max_rel_err, r.tolerance, r.coords_checked
        );
        all_pass &= r.pass();
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(args.n, args.seed, args.out);
    cfg.text_only = args.text_only;
    cfg.speech_only = args.speech_only;
    cfg.snr_db = args.snr_db;
    cfg.embed_dim = args.embed_dim;
    cfg.groups = args.groups;
    let summary = generate(&cfg)?;
    println!(
        "wrote {} utterances: manifest {}, vectors {}",
        summary.n_utterances,
        summary.manifest_path.display(),
        summary.vectors_path.display()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let cfg = load_config(&args.config, None, None, None, args.out)?;
    let pipe = pipeline::load(cfg)?;
    let out = pipe.cfg.out.clone();
    let mut model = pipe.build_model(&mut init_rng(pipe.cfg.seed, 0))?;
    checkpoint::load_into(&args.checkpoint, &mut model.store)?;
    let mut rng = SeededRng::new(0); // inference only

    match args.what.as_str() {
        "gates" => {
            if !matches!(model.config.fusion, FusionMode::Ggf) {
                bail!("gate inspection needs a ggf-fusion model, this one is {}", model.config.fusion.name());
            }
            let mut gates = Vec::new();
            for entry in &pipe.data {
                let mut tape = Tape::new();
                let fwd = model.forward(&mut tape, &entry.sample, false, &mut rng)?;
                gates.push((
                    tape.value(fwd.z_p.expect("ggf emits z_p")).to_vec(),
                    tape.value(fwd.z_q.expect("ggf emits z_q")).to_vec(),
                ));
            }
            let text = report::gate_report_text(&gate_summary(&gates)?);
            report::ensure_dir(&out)?;
            std::fs::write(out.join("gates.txt"), &text)?;
            print!("{text}");
        }
        "alignment" => {
            let dir = out.join("alignment");
            report::ensure_dir(&dir)?;
            let mut count = 0;
            for entry in &pipe.data {
                let mut tape = Tape::new();
                let fwd = model.forward(&mut tape, &entry.sample, false, &mut rng)?;
                let (Some(alpha), Some(beta)) = (fwd.alpha, fwd.beta) else {
                    bail!(
                        "fusion mode {} computes no bidirectional alignment",
                        model.config.fusion.name()
                    );
                };
                let (k_valid, l_valid) = (
                    fwd.k_valid.context("no speech length")?,
                    fwd.l_valid.context("no text length")?,
                );
                let k_total = tape.shape(alpha)[1];
                let l_total = tape.shape(beta)[1];
                std::fs::write(
                    dir.join(format!("{}_alpha.csv", entry.id)),
                    report::matrix_csv(tape.value(alpha), l_valid, k_valid, k_total),
                )?;
                std::fs::write(
                    dir.join(format!("{}_beta.csv", entry.id)),
                    report::matrix_csv(tape.value(beta), k_valid, l_valid, l_total),
                )?;
                count += 1;
            }
            println!("wrote alpha/beta matrices for {count} utterances to {}", dir.display());
        }
        other => bail!("unknown inspection target '{other}' (expected gates or alignment)"),
    }
    Ok(())
}
