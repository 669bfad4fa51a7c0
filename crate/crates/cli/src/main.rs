use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::{error, info, LevelFilter};

use telemap_core::mbi::{fit, model_search, InitMethod, MixtureSpec};
use telemap_core::pipeline::artifacts::{
    clusters_csv, contour_csv, model_text, read_clusters, read_force_maps, read_model, write_force_maps, write_model,
    write_text,
};
use telemap_core::pipeline::{
    cluster_assignments, featurize_stage, generate_synthetic, ingest_stage, logit_maps, order_by_force, read_manifest,
    run_pipeline, survival_contrasts, write_cohort, write_contrast, ContrastReport, FailureKind, PipelineConfig,
    PipelineError, SyntheticCohortSpec,
};
use telemap_core::survival::read_records;
use telemap_core::with_workers;

/// Environment variable that overrides the worker count (and nothing else).
const WORKERS_ENV: &str = "TELEMAP_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "telemap", version, about = "Force-map clustering and survival contrasts for accelerometer epochs")]
struct Cli {
    /// TOML configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed for initialization and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides TELEMAP_WORKERS and the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV listing `participant_id,path`.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    /// Directory whose CSV files are one participant each.
    #[arg(long, value_name = "DIR", conflicts_with = "manifest")]
    epochs_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse epoch files and report per-participant row counts and failures.
    Ingest(InputArgs),
    /// Build force maps on a pooled grid and write them to force_maps.bin.
    Featurize(InputArgs),
    /// Fit one mixture to a force-map container.
    Fit {
        #[arg(long, value_name = "PATH")]
        maps: PathBuf,
        #[arg(short = 'G', long, default_value_t = 3)]
        groups: usize,
        /// Column-factor dimension.
        #[arg(short = 's', long, default_value_t = 1)]
        col_factors: usize,
        /// Row-factor dimension.
        #[arg(short = 'v', long, default_value_t = 1)]
        row_factors: usize,
        #[arg(long, default_value = "kmeans")]
        init: InitMethod,
    },
    /// Search the configured (G, s, v) grid and keep the best model by BIC.
    Search {
        #[arg(long, value_name = "PATH")]
        maps: PathBuf,
    },
    /// Assign each force map to a cluster with a fitted model.
    Classify {
        #[arg(long, value_name = "PATH")]
        maps: PathBuf,
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
    },
    /// Kaplan-Meier, log-rank and Cox contrasts, optionally by cluster.
    Survival {
        #[arg(long, value_name = "PATH")]
        survival: Option<PathBuf>,
        /// clusters.csv from `classify` or `run`.
        #[arg(long, value_name = "PATH")]
        clusters: Option<PathBuf>,
    },
    /// Write a synthetic three-level cohort plus a ready-to-run config.
    Synth {
        #[arg(long, default_value_t = 100)]
        per_component: usize,
        #[arg(long)]
        censoring: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run every stage end to end.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_name = "PATH")]
        survival: Option<PathBuf>,
    },
}

fn exit_code(kind: FailureKind) -> u8 {
    match kind {
        FailureKind::Validation => 2,
        FailureKind::Data => 3,
        FailureKind::Numerical => 4,
        FailureKind::Io => 5,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n = raw
            .trim()
            .parse()
            .map_err(|_| PipelineError::Config(format!("{WORKERS_ENV}={raw:?} is not a worker count")))?;
        cfg.workers = Some(n);
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn apply_input(cfg: &mut PipelineConfig, input: &InputArgs) {
    if let Some(m) = &input.manifest {
        cfg.input.manifest = Some(m.clone());
        cfg.input.epochs_dir = None;
    }
    if let Some(d) = &input.epochs_dir {
        cfg.input.epochs_dir = Some(d.clone());
        cfg.input.manifest = None;
    }
}

fn require_input(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    if cfg.input.manifest.is_none() && cfg.input.epochs_dir.is_none() {
        return Err(PipelineError::Config("no input: pass --manifest, --epochs-dir or a config with [input]".into()));
    }
    Ok(())
}

fn contrast_summary(c: &ContrastReport) -> String {
    let mut line = format!("{}: n={} events={}", c.name, c.n, c.n_events);
    if let Some(lr) = &c.log_rank {
        line.push_str(&format!(" log-rank chi2={:.3} p={:.3e}", lr.statistic, lr.p_value));
    }
    if let Some(cox) = &c.cox {
        for coef in &cox.coefficients {
            line.push_str(&format!(
                "\n  {} HR={:.3} [{:.3}, {:.3}]",
                coef.label(),
                coef.hazard_ratio,
                coef.lower,
                coef.upper
            ));
        }
    }
    if let Some(e) = &c.error {
        line.push_str(&format!("\n  error: {e}"));
    }
    line
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Ingest(input) => {
            apply_input(&mut cfg, input);
            require_input(&cfg)?;
            cfg.validate()?;
            let entries = read_manifest(&cfg)?;
            let outcome = with_workers(cfg.workers, || ingest_stage(&cfg, &entries))?;
            write_text(&out.join("ingest.csv"), &outcome.to_csv())?;
            info!("parsed {} of {} participants", outcome.clouds.len(), outcome.manifest_size);
        }
        Command::Featurize(input) => {
            apply_input(&mut cfg, input);
            require_input(&cfg)?;
            cfg.validate()?;
            let entries = read_manifest(&cfg)?;
            let features = with_workers(cfg.workers, || -> Result<_, PipelineError> {
                let outcome = ingest_stage(&cfg, &entries)?;
                write_text(&out.join("ingest.csv"), &outcome.to_csv())?;
                featurize_stage(&cfg, &outcome)
            })?;
            write_force_maps(&out.join("force_maps.bin"), &features.grid, &features.maps)?;
            for (id, why) in &features.failures {
                log::warn!("{id}: {why}");
            }
            info!("{} force maps written to {}", features.maps.len(), out.join("force_maps.bin").display());
        }
        Command::Fit { maps, groups, col_factors, row_factors, init } => {
            let (grid, maps) = read_force_maps(maps)?;
            let data = logit_maps(&maps)?;
            let spec = MixtureSpec::new(*groups, *col_factors, *row_factors)
                .with_init(*init)
                .with_seed(cfg.seed)
                .with_max_iter(cfg.search.max_iter)
                .with_epsilon(cfg.search.aitken_epsilon);
            let model = with_workers(cfg.workers, || fit(&data, &spec))?;
            let model = order_by_force(&model, &grid);
            write_model(&out.join("model.json"), &model)?;
            write_text(&out.join("model.txt"), &model_text(&model))?;
            info!(
                "G={} s={} v={}: loglik {:.3} BIC {:.3} after {} iterations (converged: {})",
                groups, col_factors, row_factors, model.loglik, model.bic, model.iterations, model.converged
            );
        }
        Command::Search { maps } => {
            cfg.validate()?;
            let (grid, maps) = read_force_maps(maps)?;
            let data = logit_maps(&maps)?;
            let result =
                with_workers(cfg.workers, || model_search(&data, &cfg.search.grid(), &cfg.search.options(cfg.seed)))?;
            write_text(&out.join("search.csv"), &result.to_csv())?;
            let best = order_by_force(&result.best().model, &grid);
            write_model(&out.join("model.json"), &best)?;
            write_text(&out.join("model.txt"), &model_text(&best))?;
            for attempt in result.failures() {
                log::warn!(
                    "G={} s={} v={} {} failed: {}",
                    attempt.spec.groups,
                    attempt.spec.col_factors,
                    attempt.spec.row_factors,
                    attempt.spec.init.as_str(),
                    attempt.error.as_deref().unwrap_or_default()
                );
            }
            let s = &best.spec;
            info!("best: G={} s={} v={} init={} BIC {:.3}", s.groups, s.col_factors, s.row_factors, s.init.as_str(), best.bic);
        }
        Command::Classify { maps, model } => {
            let (grid, maps) = read_force_maps(maps)?;
            let model = read_model(model)?;
            let assigned = cluster_assignments(&model, &maps, &grid)?;
            write_text(&out.join("clusters.csv"), &clusters_csv(&assigned.ids, &assigned.labels))?;
            for (g, comp) in assigned.model.components.iter().enumerate() {
                let w = telemap_core::forcemap::inverse_logit(&comp.params.mean);
                let w = &w / w.sum();
                write_text(
                    &out.join(format!("contours/cluster_{}.csv", g + 1)),
                    &contour_csv(&w, &grid, &format!("cluster_{}", g + 1)),
                )?;
            }
            info!("cluster sizes {:?}", assigned.sizes());
        }
        Command::Survival { survival, clusters } => {
            let path = survival
                .clone()
                .or(cfg.input.survival.clone())
                .ok_or_else(|| PipelineError::Config("no survival file: pass --survival or set input.survival".into()))?;
            let file = fs::File::open(&path).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
            let records = read_records(file, &cfg.survival.schema)?;
            let lookup: Option<HashMap<String, usize>> = match clusters {
                Some(p) => Some(read_clusters(p)?.into_iter().collect()),
                None => None,
            };
            let contrasts = survival_contrasts(&records, lookup.as_ref(), &cfg.survival);
            for c in &contrasts {
                write_contrast(&out.join("survival"), c)?;
                println!("{}", contrast_summary(c));
            }
        }
        Command::Synth { per_component, censoring, epochs } => {
            let mut spec = SyntheticCohortSpec { seed: cfg.seed, ..SyntheticCohortSpec::three_levels(*per_component) };
            if let Some(c) = censoring {
                spec.censoring_rate = *c;
            }
            if let Some(e) = epochs {
                spec.epochs_per_participant = *e;
            }
            let cohort = generate_synthetic(&spec)?;
            let files = write_cohort(&cohort, &out)?;
            write_text(&out.join("telemap.toml"), &synth_config(&cfg, &files.manifest, &files.survival))?;
            info!(
                "{} participants written under {}; run with --config {}",
                cohort.participants.len(),
                out.display(),
                out.join("telemap.toml").display()
            );
        }
        Command::Run { input, survival } => {
            apply_input(&mut cfg, input);
            if let Some(s) = survival {
                cfg.input.survival = Some(s.clone());
            }
            require_input(&cfg)?;
            let report = run_pipeline(&cfg)?;
            print!("{}", report.to_text());
            info!("artifacts in {}", out.display());
        }
    }
    Ok(())
}

/// Config for a freshly written cohort, with paths relative to the cohort directory.
fn synth_config(base: &PipelineConfig, manifest: &Path, survival: &Path) -> String {
    let mut cfg = PipelineConfig { seed: base.seed, output_dir: PathBuf::from("results"), ..PipelineConfig::default() };
    let file_name = |p: &Path| PathBuf::from(p.file_name().unwrap_or_default());
    cfg.input.manifest = Some(file_name(manifest));
    cfg.input.survival = Some(file_name(survival));
    cfg.survival.left_truncation = true;
    cfg.to_toml()
}

fn main() -> ExitCode {
    let defaults = format!("Configuration defaults (every key optional):\n\n{}", PipelineConfig::default().to_toml());
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    env_logger::Builder::new()
        .filter_level(if cli.quiet { LevelFilter::Warn } else { LevelFilter::Info })
        .format_target(false)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
