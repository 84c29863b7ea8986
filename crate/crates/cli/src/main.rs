use clap::{Args, Parser, Subcommand};
use hsdetect::config::{EstimatorKind, PipelineConfig};
use hsdetect::manifest::{Dataset, Split};
use hsdetect::pipeline::{self, SelectionReport};
use hsdetect::synth::gen_synthetic;
use hsdetect::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Hallucination scoring from prompt/response hidden-state divergence.
#[derive(Parser, Debug)]
#[command(name = "hsdetect", version)]
struct Cli {
    /// JSON configuration file; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for splits, training and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Divergence estimator: mmd, sinkhorn, hausdorff or mean-pairwise.
    #[arg(long, global = true)]
    estimator: Option<EstimatorKind>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ManifestArg {
    /// Dataset manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with planted informative streams.
    GenSynth {
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        n_informative: Option<usize>,
    },
    /// Rank streams by single-stream training AUROC.
    RankHeads(ManifestArg),
    /// Rank streams and pick the best ranking prefix on validation data.
    SelectHeads {
        #[command(flatten)]
        data: ManifestArg,
        /// Reuse a ranking written by rank-heads.
        #[arg(long)]
        ranking: Option<PathBuf>,
    },
    /// Sweep the 12 base-kernel settings on validation data.
    GridKernel(ManifestArg),
    /// Train the deep kernel on the selected streams.
    TrainKernel {
        #[command(flatten)]
        data: ManifestArg,
        /// Selection report written by select-heads.
        #[arg(long)]
        selection: PathBuf,
    },
    /// Score samples with the selected streams.
    Score {
        #[command(flatten)]
        data: ManifestArg,
        #[arg(long)]
        selection: PathBuf,
        /// DKM1 checkpoint; scores in the learned latent space.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Splits to score.
        #[arg(long, value_delimiter = ',', default_value = "train,val,test")]
        splits: Vec<String>,
    },
    /// AUROC per split and per-class score histograms.
    Evaluate {
        #[command(flatten)]
        data: ManifestArg,
        /// Score table written by score.
        #[arg(long)]
        scores: PathBuf,
    },
    /// ROUGE-L precision of responses against prompts, per class.
    RougeReport(ManifestArg),
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(kind) = cli.estimator {
        cfg.estimator = kind;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_splits(names: &[String]) -> Result<Vec<Split>> {
    names
        .iter()
        .map(|n| {
            Split::ALL
                .into_iter()
                .find(|s| s.as_str() == n.trim())
                .ok_or_else(|| Error::Input(format!("unknown split `{n}`")))
        })
        .collect()
}

fn out_file(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::GenSynth {
            n_samples,
            n_informative,
        } => {
            let mut synth = cfg.synth.clone();
            if let Some(n) = n_samples {
                synth.n_samples = *n;
            }
            if let Some(n) = n_informative {
                synth.n_informative = *n;
            }
            let manifest = gen_synthetic(&synth, out)?;
            println!(
                "wrote {} samples to {}",
                manifest.records.len(),
                out_file(out, "manifest.json").display()
            );
        }
        Command::RankHeads(m) => {
            let ds = Dataset::open(&m.manifest)?;
            let report = pipeline::run_rank(&ds, &cfg)?;
            let path = out_file(out, "ranking.json");
            pipeline::write_json(&path, &report)?;
            for e in report.ranking.entries.iter().take(10) {
                println!("{}\t{:.4}", e.stream, e.auroc);
            }
            println!("wrote {}", path.display());
        }
        Command::SelectHeads { data, ranking } => {
            let ds = Dataset::open(&data.manifest)?;
            let ranking = match ranking {
                Some(p) => Some(pipeline::read_json::<pipeline::RankReport>(p)?.ranking),
                None => None,
            };
            let report = pipeline::run_select(&ds, &cfg, ranking)?;
            let path = out_file(out, "selection.json");
            pipeline::write_json(&path, &report)?;
            let names: Vec<String> = report
                .selection
                .selected
                .iter()
                .map(|k| k.to_string())
                .collect();
            println!(
                "selected {} stream(s) [{}], validation AUROC {:.4}",
                report.selection.n_opt,
                names.join(", "),
                report.selection.auroc_max
            );
            println!("wrote {}", path.display());
        }
        Command::GridKernel(m) => {
            let ds = Dataset::open(&m.manifest)?;
            let report = pipeline::grid_kernel(&ds, &cfg)?;
            let path = out_file(out, "grid.json");
            pipeline::write_json(&path, &report)?;
            for e in &report.entries {
                println!(
                    "p={}\tq={}\t{:.4}",
                    e.kernel.norm_order, e.kernel.exponent, e.auroc_max
                );
            }
            println!(
                "best p={} q={} (validation AUROC {:.4}); wrote {}",
                report.best.norm_order,
                report.best.exponent,
                report.best_auroc,
                path.display()
            );
        }
        Command::TrainKernel { data, selection } => {
            let ds = Dataset::open(&data.manifest)?;
            let sel: SelectionReport = pipeline::read_json(selection)?;
            let (model, report) = pipeline::run_train(&ds, &sel.selection, &cfg)?;
            let model_path = out_file(out, "model.dkm");
            std::fs::create_dir_all(out).map_err(|source| Error::Io {
                path: out.display().to_string(),
                source,
            })?;
            hsdetect::deep_kernel::write_checkpoint(&model, &model_path)?;
            let report_path = out_file(out, "train_report.json");
            pipeline::write_json(&report_path, &report)?;
            let h = &report.history;
            println!(
                "selected epoch {} of {} (validation AUROC {:.4}); wrote {} and {}",
                h.selected_epoch,
                h.epoch_loss.len(),
                h.val_auroc[h.selected_epoch - 1],
                model_path.display(),
                report_path.display()
            );
        }
        Command::Score {
            data,
            selection,
            model,
            splits,
        } => {
            let ds = Dataset::open(&data.manifest)?;
            let sel: SelectionReport = pipeline::read_json(selection)?;
            let model = model.as_deref().map(pipeline::load_model).transpose()?;
            // the selection's own estimator unless one was asked for
            let estimator = if cli.estimator.is_some() {
                cfg.estimator()
            } else {
                sel.estimator
            };
            let scorer = pipeline::scorer_for(estimator, model.as_ref(), cfg.token_cap());
            let table = pipeline::run_score(
                &ds,
                &sel.selection.selected,
                &scorer,
                &parse_splits(splits)?,
            )?;
            let path = out_file(out, "scores.csv");
            table.write(&path)?;
            println!(
                "scored {} samples; wrote {}",
                table.rows.len(),
                path.display()
            );
        }
        Command::Evaluate { data, scores } => {
            let ds = Dataset::open(&data.manifest)?;
            let table = pipeline::ScoreTable::read(scores)?;
            let report = pipeline::run_evaluate(&table, ds.manifest(), cfg.histogram_bins)?;
            pipeline::export_evaluation(&report, out)?;
            for s in &report.splits {
                match s.auroc {
                    Some(a) => println!("{}\tn={}\tAUROC {:.4}", s.split, s.n, a),
                    None => println!("{}\tn={}\tAUROC undefined (single class)", s.split, s.n),
                }
            }
            println!("wrote {}", out_file(out, "evaluation.json").display());
        }
        Command::RougeReport(m) => {
            let ds = Dataset::open(&m.manifest)?;
            let report = pipeline::run_rouge_report(&ds, cfg.histogram_bins)?;
            pipeline::export_rouge(&report, out)?;
            if let Some(notice) = &report.notice {
                println!("{notice}");
            }
            for c in &report.classes {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "label {}\tn={}\tmean {}\tmedian {}",
                    c.label,
                    c.n,
                    fmt(c.mean),
                    fmt(c.median)
                );
            }
            println!("wrote {}", out_file(out, "rouge_report.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
