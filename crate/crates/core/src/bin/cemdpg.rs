use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cemdpg::experiment::{
    self, decay_csv, default_decay_columns, study_csv, DumpTarget, ExperimentConfig, StudyConfig,
};
use cemdpg::testspace::ColumnKind;

/// Multiscale DPG solver for convection-diffusion on the unit square.
///
/// `CEMDPG_THREADS` sets the worker count and `CEMDPG_SEED` the raster seed.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` applied after the file, value parsed as JSON when possible.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> cemdpg::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Ok(seed) = std::env::var("CEMDPG_SEED") {
            cfg.seed = seed
                .parse()
                .map_err(|_| cemdpg::Error::Config(format!("CEMDPG_SEED `{seed}` is not an integer")))?;
        }
        cfg.with_overrides(self.overrides.iter().map(String::as_str))
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Target {
    Raster,
    Kappa,
    Speed,
    Fine,
    Multiscale,
    Spectral,
    Trial,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and print the JSON report.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write per-cell eigenvalues as CSV.
        #[arg(long)]
        eigenvalues: Option<PathBuf>,
    },
    /// Sweep `(n_coarse, layers)` rows at fixed fine resolution; prints CSV.
    Study {
        /// JSON study file: `{"base": {...}, "rows": [[10,3],...], "fine_cells": 200}`.
        #[arg(long)]
        study: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `n_coarse:layers` rows replacing those of the study file.
        #[arg(long, value_delimiter = ',')]
        rows: Vec<String>,
        /// Fine cells per side shared by all rows.
        #[arg(long)]
        fine_cells: Option<usize>,
        #[arg(long)]
        parallel: bool,
    },
    /// Check the global test functions against the exactness identities.
    VerifyGlobal {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Largest interior dof count for the dense global solve.
        #[arg(long)]
        threshold: Option<usize>,
    },
    /// Localization error of sampled test functions versus layers; prints CSV.
    DecayStudy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        min_layers: usize,
        #[arg(long, default_value_t = 4)]
        max_layers: usize,
        #[arg(long)]
        threshold: Option<usize>,
    },
    /// Write a field as a plain-text grid.
    DumpField {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        target: Target,
        /// Coarse cell for `spectral`, trial index for `trial`.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Mode number for `spectral`.
        #[arg(long, default_value_t = 0)]
        mode: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_rows(rows: &[String]) -> cemdpg::Result<Vec<(usize, usize)>> {
    rows.iter()
        .map(|r| {
            let bad = || cemdpg::Error::Config(format!("row `{r}` is not n_coarse:layers"));
            let (n, l) = r.split_once(':').ok_or_else(bad)?;
            Ok((
                n.trim().parse().map_err(|_| bad())?,
                l.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn execute(cli: Cli) -> cemdpg::Result<()> {
    match cli.command {
        Command::Run { cfg, eigenvalues } => {
            let cfg = cfg.load()?;
            for w in cfg.validate()? {
                eprintln!("warning: {w}");
            }
            let (report, art) = experiment::run_with_artifacts(&cfg)?;
            if let Some(p) = eigenvalues {
                art.aux.write_eigenvalues_csv(std::fs::File::create(p)?)?;
            }
            experiment::write_outputs(&report)?;
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
        }
        Command::Study {
            study,
            cfg,
            rows,
            fine_cells,
            parallel,
        } => {
            let mut s = match study {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => StudyConfig::default(),
            };
            if cfg.config.is_some() || !cfg.overrides.is_empty() {
                let base = match &cfg.config {
                    Some(p) => ExperimentConfig::load(p)?,
                    None => s.base.clone(),
                };
                s.base = base.with_overrides(cfg.overrides.iter().map(String::as_str))?;
            }
            if let Ok(seed) = std::env::var("CEMDPG_SEED") {
                s.base = s.base.with_overrides([format!("seed={seed}").as_str()])?;
            }
            if !rows.is_empty() {
                s.rows = parse_rows(&rows)?;
            }
            if let Some(f) = fine_cells {
                s.fine_cells = f;
            }
            s.parallel |= parallel;
            let out = experiment::study(&s);
            for r in &out {
                if let Err(e) = &r.outcome {
                    eprintln!("row ({}, {}) failed: {e}", r.n_coarse, r.layers);
                }
            }
            print!("{}", study_csv(&s, &out));
        }
        Command::VerifyGlobal { cfg, threshold } => {
            let report = experiment::verify_global(&cfg.load()?, threshold)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::DecayStudy {
            cfg,
            min_layers,
            max_layers,
            threshold,
        } => {
            let cfg = cfg.load()?;
            let columns = default_decay_columns(cfg.n_coarse, cfg.j_per_cell);
            let rows = experiment::decay_study(&cfg, min_layers..=max_layers, &columns, threshold)?;
            print!("{}", decay_csv(&rows));
        }
        Command::DumpField {
            cfg,
            target,
            index,
            mode,
            output,
        } => {
            let target = match target {
                Target::Raster => DumpTarget::Raster,
                Target::Kappa => DumpTarget::Kappa,
                Target::Speed => DumpTarget::Speed,
                Target::Fine => DumpTarget::Fine,
                Target::Multiscale => DumpTarget::Multiscale,
                Target::Spectral => DumpTarget::Column(ColumnKind::Spectral {
                    cell: index,
                    index: mode,
                }),
                Target::Trial => DumpTarget::Column(ColumnKind::Trial { trial: index }),
            };
            experiment::dump_field(&cfg.load()?, target, output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(t) = std::env::var("CEMDPG_THREADS") {
        match t.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::FAILURE;
                }
            }
            _ => {
                eprintln!("error: CEMDPG_THREADS `{t}` is not a positive integer");
                return ExitCode::FAILURE;
            }
        }
    }
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
