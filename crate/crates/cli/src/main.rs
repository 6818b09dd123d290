use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use twist_core::harness::episode::EpisodeSpec;
use twist_core::harness::grid::{self, test_episode};
use twist_core::harness::offline::{
    self, artifacts_dir, cell_channel_seed, ensure_bundle, read_manifest, split_episodes,
};
use twist_core::harness::{replay_trace, run_episode, EpisodeTrace, ExperimentConfig, Method};
use twist_core::par::with_jobs;
use twist_core::phy::{profile_error_rates, ChannelKind};
use twist_core::scene::write_episode;
use twist_core::{GroupMap, Result, TwistError};

#[derive(Parser)]
#[command(name = "twist-sim", version, about = "Closed-loop token synchronization simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration when no file is given: desk or full.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// Override any config value, e.g. `--set grid.frames=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic episode as JSON lines.
    GenScene {
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Monte-Carlo token error rates per group, policy and SNR.
    ProfilePhy {
        #[arg(long, default_value = "rayleigh")]
        channel: ChannelKind,
        #[arg(long = "snr-list", value_delimiter = ',')]
        snr_list: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build (or load cached) offline artifacts.
    Offline {
        #[arg(long)]
        force: bool,
    },
    /// One closed-loop episode.
    Run {
        #[arg(long, conflicts_with = "controller")]
        method: Option<Method>,
        /// full|no-gamma|no-rho|no-drift|no-q|channel-only|static-low|static-med|static-high
        #[arg(long)]
        controller: Option<String>,
        #[arg(long, default_value = "rayleigh")]
        channel: ChannelKind,
        #[arg(long, default_value_t = 10.0)]
        snr: f64,
        #[arg(long = "episode-seed", default_value_t = 0)]
        episode_seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full method x channel x SNR x seed sweep.
    Grid {
        /// Restrict to the methods selected by this controller flag.
        #[arg(long)]
        controller: Option<String>,
    },
    /// Causality and budget audit of logged traces.
    Replay { path: PathBuf },
    /// Recompute summary tables from a grid's cells.csv.
    Report { dir: Option<PathBuf> },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::preset(&c.preset)?,
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn method_of(method: Option<Method>, controller: Option<&str>) -> Result<Method> {
    match (method, controller) {
        (Some(m), _) => Ok(m),
        (None, Some(flag)) => Method::from_controller_flag(flag),
        (None, None) => Ok(Method::Twist),
    }
}

fn trace_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(TwistError::EmptyInput("no trace files found"));
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::GenScene {
            split,
            index,
            frames,
            output,
        } => {
            let frames = frames.unwrap_or(cfg.grid.frames);
            let episode = if split == "test" {
                test_episode(&cfg, index, frames)?
            } else {
                split_episodes(&cfg, &split, index as usize + 1, frames)?.pop().expect("nonempty")
            };
            write_episode(&output, &episode)?;
            println!("wrote {} frames to {}", episode.len(), output.display());
        }
        Command::ProfilePhy {
            channel,
            snr_list,
            trials,
            output,
        } => {
            let dir = artifacts_dir(&cfg);
            let groups = match read_manifest(&dir)? {
                Some(_) => offline::load_bundle(&cfg, &dir)?.pipeline.groups,
                None => {
                    let l = cfg.scene.shape().len();
                    GroupMap {
                        groups: 1,
                        assignment: vec![0; l],
                        sizes: vec![l],
                        utilities: vec![1.0],
                    }
                }
            };
            let table = profile_error_rates(
                &groups,
                cfg.scene.shape(),
                &cfg.policies()?,
                &cfg.alphabet()?,
                channel,
                &snr_list.unwrap_or_else(|| cfg.link.snr_db.clone()),
                trials.unwrap_or(cfg.link.profile_trials),
                cfg.seed,
            )?;
            std::fs::write(&output, serde_json::to_vec_pretty(&table)?)?;
            println!("wrote error table to {}", output.display());
        }
        Command::Offline { force } => {
            let dir = artifacts_dir(&cfg);
            if force && dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            let b = offline::run_offline(&cfg)?;
            println!("artifacts in {} (config {})", dir.display(), b.config_hash);
            println!(
                "head loss {:.4}, clean macro-F1 {:.4}, controller objective {:.4}, mean cost {:.3}",
                b.head_info.train_loss, b.head_info.clean_macro_f1, b.controller.score.objective, b.controller.score.mean_cost
            );
        }
        Command::Run {
            method,
            controller,
            channel,
            snr,
            episode_seed,
            output,
        } => {
            let method = method_of(method, controller.as_deref())?;
            let bundle = ensure_bundle(&cfg)?;
            let frames = test_episode(&cfg, episode_seed, cfg.grid.frames)?;
            let spec = EpisodeSpec {
                method,
                channel,
                snr_db: vec![snr; frames.len()],
                seed: episode_seed,
                channel_seed: cell_channel_seed(cfg.seed, "test", channel, snr, episode_seed),
            };
            let trace = run_episode(&bundle, &spec, &frames)?;
            let s = trace.summary(&cfg.objective)?;
            let path = output.unwrap_or_else(|| {
                cfg.output_dir
                    .join(grid::trace_file_name(method, channel, snr, episode_seed))
            });
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            trace.write_jsonl(&path)?;
            println!(
                "{method} {} {snr} dB: macro-F1 {:.4}, TSMR {:.4}, cost {:.3}, trace {}",
                channel.as_str(),
                s.f1.macro_f1,
                s.tsmr,
                s.cost,
                path.display()
            );
        }
        Command::Grid { controller } => {
            let mut cfg = cfg;
            if let Some(flag) = controller {
                cfg.grid.methods = vec![Method::from_controller_flag(&flag)?];
            }
            let bundle = ensure_bundle(&cfg)?;
            let dir = cfg.output_dir.join("grid");
            let out = grid::run_grid(&cfg, &bundle, &dir)?;
            println!("{} cells written to {}", out.cells.len(), dir.display());
        }
        Command::Replay { path } => {
            let mut failed = 0usize;
            let paths = trace_paths(&path)?;
            for p in &paths {
                let report = replay_trace(&EpisodeTrace::read_jsonl(p)?);
                if !report.passed() {
                    failed += 1;
                    println!("FAIL {}: {:?}", p.display(), report);
                }
            }
            println!("{} traces audited, {} failed", paths.len(), failed);
            if failed > 0 {
                return Err(TwistError::ArtifactMismatch(format!(
                    "{failed} traces are not reproducible from their logged statistics"
                )));
            }
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.output_dir.join("grid"));
            let summary = grid::report(&dir)?;
            println!("{} summary rows written to {}", summary.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.common.jobs;
    match with_jobs(jobs, move || execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
