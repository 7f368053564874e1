//! Command-line entry points: corpus generation, the two training stages,
//! the full ablation suite, and metric reporting.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data or checkpoint
//! corruption. Diagnostics go to stderr; results go to files under `--out`.

use crate::datagen::{build_latent_model, make_corpora, summarize, Corpora};
use crate::error::Error;
use crate::persistence::{
    config_digest, export_metrics, load_checkpoint, load_config, parse_metrics_csv,
    save_checkpoint, save_dataset, MetricRow,
};
use crate::pipeline::{run_ablation, run_downstream, run_pretrain, Arm, ExperimentConfig, PretrainLoss};
use crate::report::{hit_curves, svg_chart, text_report};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "idemb",
    about = "Two-stage contrastive ID-embedding pre-training laboratory",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpora for every configured seed.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: pre-train ID embeddings for every configured seed.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// contrastive | bce
        #[arg(long, default_value = "contrastive")]
        loss: String,
    },
    /// Stage 2: train the downstream CTR model for one seed.
    Downstream {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// baseline | frozen | finetune | single-stage
        #[arg(long)]
        mode: String,
        /// Stage-1 checkpoint (required for frozen/finetune)
        #[arg(long)]
        init: Option<PathBuf>,
        /// Seed to run (default: first entry of seed_list)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run all four arms over all seeds and write the full report.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize exported metrics files into a lift table and an SVG chart.
    Report {
        /// Metrics CSV files
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.005)]
        overfit_threshold: f64,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::CorruptCheckpoint(_) | Error::CorruptDataset(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn parse_mode(mode: &str) -> crate::error::Result<Arm> {
    match mode {
        "baseline" => Ok(Arm::Baseline),
        "frozen" => Ok(Arm::TwoStageFrozen),
        "finetune" => Ok(Arm::TwoStageFineTuned),
        "single-stage" | "single_stage" => Ok(Arm::SingleStage),
        _ => Err(Error::invalid(format!(
            "unknown --mode '{mode}' (expected baseline|frozen|finetune|single-stage)"
        ))),
    }
}

fn corpora_for_seed(cfg: &ExperimentConfig, seed: u64) -> crate::error::Result<Corpora> {
    let mut gen_cfg = cfg.generator.clone();
    gen_cfg.seed = seed;
    let latent = build_latent_model(&gen_cfg)?;
    make_corpora(&latent, &gen_cfg)
}

fn seed_cfg(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.generator.seed = seed;
    c
}

fn cmd_gen(config: &Path, out: &Path) -> crate::error::Result<()> {
    let cfg = load_config(config)?;
    for &seed in &cfg.seeds {
        let corpora = corpora_for_seed(&cfg, seed)?;
        let dir = out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir)?;
        let sets = [
            ("pretrain", &corpora.pretrain),
            ("pretrain_holdout", &corpora.pretrain_holdout),
            ("downstream_train", &corpora.downstream_train),
            ("downstream_holdout", &corpora.downstream_holdout),
        ];
        let mut summary = String::new();
        for (name, ds) in sets {
            save_dataset(ds, &dir.join(format!("{name}.iddat")))?;
            summary.push_str(&format!("== {name} ==\n"));
            summary.push_str(&summarize(ds, cfg.generator.n_items));
            summary.push('\n');
        }
        std::fs::write(dir.join("summary.txt"), summary)?;
        eprintln!("gen: wrote corpora for seed {seed}");
    }
    Ok(())
}

fn cmd_pretrain(config: &Path, out: &Path, loss: &str) -> crate::error::Result<()> {
    let cfg = load_config(config)?;
    let loss = PretrainLoss::parse(loss)?;
    for &seed in &cfg.seeds {
        let scfg = seed_cfg(&cfg, seed);
        let corpora = corpora_for_seed(&cfg, seed)?;
        let res = run_pretrain(&scfg, &corpora, loss, seed)?;
        let dir = out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir)?;
        let digest = config_digest(&cfg, seed);
        save_checkpoint(
            &res.model,
            &digest,
            &dir.join(format!("pretrain_{}.ckpt", loss.name())),
        )?;
        export_metrics(
            &res.metrics,
            cfg.hit_k,
            &dir.join(format!("metrics_pretrain_{}.csv", loss.name())),
        )?;
        eprintln!(
            "pretrain[{}] seed {seed}: {} steps, final holdout hit@{} = {:.5}",
            loss.name(),
            res.optimizer_steps,
            cfg.hit_k,
            res.metrics.last().unwrap().hit_at_k
        );
    }
    Ok(())
}

fn cmd_downstream(
    config: &Path,
    out: &Path,
    mode: &str,
    init: Option<&Path>,
    seed: Option<u64>,
) -> crate::error::Result<()> {
    let cfg = load_config(config)?;
    let arm = parse_mode(mode)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let needs_init = matches!(arm, Arm::TwoStageFrozen | Arm::TwoStageFineTuned);
    if needs_init && init.is_none() {
        return Err(Error::invalid(format!(
            "--mode {mode} requires --init <checkpoint>"
        )));
    }
    if !needs_init && init.is_some() {
        return Err(Error::invalid(format!(
            "--mode {mode} does not take --init"
        )));
    }
    let checkpoint = match init {
        Some(path) => {
            let (model, header) = load_checkpoint(path)?;
            let expected = config_digest(&cfg, seed);
            if header.config_digest != expected {
                return Err(Error::CorruptCheckpoint(
                    "config_digest does not match this config and seed".into(),
                ));
            }
            Some(model)
        }
        None => None,
    };
    let scfg = seed_cfg(&cfg, seed);
    let corpora = corpora_for_seed(&cfg, seed)?;
    let res = run_downstream(&scfg, &corpora, checkpoint.as_ref(), arm, seed)?;
    let dir = out.join(format!("seed_{seed}"));
    std::fs::create_dir_all(&dir)?;
    export_metrics(
        &res.metrics,
        cfg.hit_k,
        &dir.join(format!("metrics_{}.csv", arm.name())),
    )?;
    eprintln!(
        "downstream[{}] seed {seed}: final holdout hit@{} = {:.5}",
        arm.name(),
        cfg.hit_k,
        res.metrics.last().unwrap().hit_at_k
    );
    Ok(())
}

fn cmd_ablation(config: &Path, out: &Path) -> crate::error::Result<()> {
    let cfg = load_config(config)?;
    let report = run_ablation(&cfg)?;
    std::fs::create_dir_all(out)?;
    for (idx, &seed) in cfg.seeds.iter().enumerate() {
        let dir = out.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir)?;
        let digest = config_digest(&cfg, seed);
        save_checkpoint(&report.checkpoints[idx], &digest, &dir.join("pretrain.ckpt"))?;
        for arm in Arm::ALL {
            let series: Vec<_> = report
                .metrics
                .iter()
                .filter(|m| m.seed == seed && m.arm == arm.name())
                .cloned()
                .collect();
            export_metrics(
                &series,
                cfg.hit_k,
                &dir.join(format!("metrics_{}.csv", arm.name())),
            )?;
        }
        let seed_rows: Vec<_> = report
            .metrics
            .iter()
            .filter(|m| m.seed == seed)
            .cloned()
            .collect();
        export_metrics(&seed_rows, cfg.hit_k, &dir.join("metrics_all.csv"))?;
        let parsed = parse_metrics_csv(&crate::persistence::metrics_csv(&seed_rows, cfg.hit_k))?;
        std::fs::write(
            dir.join("report.txt"),
            text_report(&parsed, cfg.overfit_threshold)?,
        )?;
    }
    export_metrics(&report.metrics, cfg.hit_k, &out.join("metrics_all.csv"))?;
    let parsed = parse_metrics_csv(&crate::persistence::metrics_csv(&report.metrics, cfg.hit_k))?;
    std::fs::write(
        out.join("report.txt"),
        text_report(&parsed, cfg.overfit_threshold)?,
    )?;
    std::fs::write(
        out.join("curves.svg"),
        svg_chart(&hit_curves(&parsed), "mean holdout hit rate vs epoch"),
    )?;
    for s in &report.summaries {
        eprintln!(
            "ablation {}: mean {:.5} stdev {:.5} lift {:+.3}%",
            s.arm.name(),
            s.mean,
            s.stdev,
            100.0 * s.lift_vs_baseline
        );
    }
    Ok(())
}

fn cmd_report(metrics: &[PathBuf], out: &Path, overfit_threshold: f64) -> crate::error::Result<()> {
    let mut rows: Vec<MetricRow> = Vec::new();
    for path in metrics {
        let text = std::fs::read_to_string(path)?;
        rows.extend(parse_metrics_csv(&text)?);
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.txt"), text_report(&rows, overfit_threshold)?)?;
    std::fs::write(
        out.join("curves.svg"),
        svg_chart(&hit_curves(&rows), "mean holdout hit rate vs epoch"),
    )?;
    Ok(())
}

/// Entry point shared by the binary and the CLI tests.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    let result = match &cli.command {
        Command::Gen { config, out } => cmd_gen(config, out),
        Command::Pretrain { config, out, loss } => cmd_pretrain(config, out, loss),
        Command::Downstream {
            config,
            out,
            mode,
            init,
            seed,
        } => cmd_downstream(config, out, mode, init.as_deref(), *seed),
        Command::Ablation { config, out } => cmd_ablation(config, out),
        Command::Report {
            metrics,
            out,
            overfit_threshold,
        } => cmd_report(metrics, out, *overfit_threshold),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
