use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use handnav_core::geometry::Category;
use handnav_core::guidance::NavigationMode;
use handnav_core::harness::{
    guide_recorded, read_results_dir, run_task, trial_spec, write_outputs, write_report, AgentConfig, AgentKind,
    NoiseProfile, TaskConfig, TaskKind,
};
use handnav_core::scene::{load_replay, write_replay, FrameSource};
use handnav_core::session::server::{Server, ServerConfig, ADDR_ENV, DEFAULT_ADDR};
use handnav_core::session::transcript::Transcript;

#[derive(Parser)]
#[command(name = "handnav", version, about = "Hand navigation simulator, trial harness and session server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn snake<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unrecognized value {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Run a task with a scripted agent and write logs and reports.
    Run {
        #[arg(long, default_value = "grasping")]
        task: TaskKind,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// interpolated_2d or axis_sequential
        #[arg(long, value_parser = snake::<NavigationMode>)]
        mode: Option<NavigationMode>,
        /// ideal, noisy or human_bridge
        #[arg(long, value_parser = snake::<AgentKind>)]
        agent: Option<AgentKind>,
        /// zero, default, freeze or jitter2
        #[arg(long)]
        noise_profile: Option<NoiseProfile>,
        /// Full task config as JSON; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Replay a session transcript or guide over a recorded frame stream.
    Replay {
        #[arg(long)]
        file: PathBuf,
        /// Target category for frame streams.
        #[arg(long, default_value = "bottle")]
        target: String,
        #[arg(long, value_parser = snake::<NavigationMode>)]
        mode: Option<NavigationMode>,
    },
    /// Rebuild report files from a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Record the synthetic frame stream of one trial without a participant.
    Frames {
        #[arg(long, default_value = "grasping")]
        task: TaskKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value_t = 90)]
        frames: u64,
        #[arg(long)]
        noise_profile: Option<NoiseProfile>,
        #[arg(long)]
        file: PathBuf,
    },
    /// Serve interactive sessions over TCP.
    Serve {
        #[arg(long, env = ADDR_ENV, default_value = DEFAULT_ADDR)]
        addr: String,
        /// Milliseconds between simulation frames.
        #[arg(long, default_value_t = 1000.0 / 30.0)]
        frame_ms: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            task,
            trials,
            seed,
            mode,
            agent,
            noise_profile,
            config,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => TaskConfig::new(task, seed),
            };
            cfg.kind = task;
            cfg.seed = seed;
            if let Some(n) = trials {
                cfg.trials = n;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            match agent {
                Some(AgentKind::Noisy) => cfg.agent = AgentConfig::noisy(),
                Some(kind) => cfg.agent.kind = kind,
                None => {}
            }
            if let Some(p) = noise_profile {
                cfg.noise = p.config(&cfg.camera);
            }
            let run = run_task(&cfg)?;
            write_outputs(&out, &run)?;
            print!("{}", fs::read_to_string(out.join("report.txt"))?);
        }
        Command::Replay { file, target, mode } => {
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("{}");
            let head: serde_json::Value = serde_json::from_str(first).context("first line is not JSON")?;
            let stdout = io::stdout();
            let mut w = io::BufWriter::new(stdout.lock());
            if head.get("msg").is_some() || head.get("end").is_some() {
                for o in Transcript::from_ndjson(&text)?.replay()? {
                    writeln!(w, "{}", o.to_line())?;
                }
            } else {
                let frames = load_replay(&file)?;
                let mut cfg = TaskConfig::default();
                if let Some(m) = mode {
                    cfg.mode = m;
                }
                for rec in guide_recorded(&cfg, Category::object(target), &frames)? {
                    writeln!(w, "{}", serde_json::to_string(&rec)?)?;
                }
            }
            w.flush()?;
        }
        Command::Report { input } => {
            let (config, results) = read_results_dir(&input)?;
            if results.is_empty() {
                bail!("no results in {}", input.display());
            }
            write_report(&input, config.as_ref(), &results)?;
            print!("{}", fs::read_to_string(input.join("report.txt"))?);
        }
        Command::Frames {
            task,
            seed,
            trial,
            frames,
            noise_profile,
            file,
        } => {
            let cfg = TaskConfig::new(task, seed);
            let spec = trial_spec(task, seed, trial);
            let noise = noise_profile.map_or(cfg.noise, |p| p.config(&cfg.camera));
            let mut source = FrameSource::new(cfg.camera, noise, cfg.frame_rate_hz);
            let with_depth = task == TaskKind::Depth;
            let bundles: Vec<_> = (0..frames)
                .map(|i| source.next_frame(&spec.scene, with_depth && i % cfg.depth_every_frames == 0))
                .collect();
            fs::write(&file, write_replay(&bundles)?)?;
            eprintln!("{} frames, target {}", bundles.len(), spec.target_category.label);
        }
        Command::Serve { addr, frame_ms } => {
            if !(frame_ms > 0.0) {
                bail!("--frame-ms must be positive");
            }
            let server = Server::bind(ServerConfig {
                addr,
                frame_interval: Duration::from_secs_f64(frame_ms / 1000.0),
                ..ServerConfig::default()
            })?;
            eprintln!("listening on {}", server.local_addr()?);
            server.run()?;
        }
    }
    Ok(())
}
