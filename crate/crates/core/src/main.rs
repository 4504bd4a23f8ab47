use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use funnel_core::experiments::{parse_config, report_from_dir, run_and_report, MdpSource};
use funnel_core::funnel_mdp::{FunnelGenParams, FunnelMdp};
use funnel_core::planner::{optimal_conversion_rate, solve_q_star_default};
use funnel_core::verification::run_suite;
use funnel_core::{Error, Result};

#[derive(Parser)]
#[command(name = "funnel", version, about = "Conversion-funnel MDP simulator and learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic funnel model as JSON.
    Generate {
        /// Generator parameters (JSON). Defaults to the `funnel-small` preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use a named preset instead of a parameter file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve a model exactly and write Q*, the optimal policy and v*.
    Solve {
        /// A model document or an experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the reports of a finished run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle suite and print a JSON verdict.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Run { .. } | Error::Config(_) | Error::InvalidParameter { .. } => e,
        e => Error::Config(e.to_string()),
    }
}

fn load_model(config: Option<&Path>, preset: Option<&str>) -> Result<FunnelMdp> {
    let source = match (config, preset) {
        (_, Some(p)) => MdpSource::Preset(p.to_string()),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            if let Ok(mdp) = FunnelMdp::from_json(&text) {
                return Ok(mdp);
            }
            let cfg = parse_config(path)?;
            return Ok(cfg.mdp.load(path.parent())?.mdp);
        }
        (None, None) => MdpSource::Preset("funnel-small".into()),
    };
    source.load(None).map(|l| l.mdp).map_err(config_err)
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate { config, preset, seed, out } => {
            let mut params = match (config, preset) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    serde_json::from_str::<FunnelGenParams>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                (None, Some(name)) => FunnelGenParams::preset(&name)
                    .ok_or_else(|| Error::Config(format!("unknown generator preset `{name}`")))?,
                (None, None) => FunnelGenParams::funnel_small(),
            };
            if let Some(s) = seed {
                params.seed = s;
            }
            params.validate()?;
            let f = funnel_core::funnel_mdp::synthetic_funnel(&params).map_err(config_err)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("mdp.json"), f.mdp.to_json()?)?;
            println!("{} states, {} actions -> {}", f.mdp.num_states(), f.mdp.num_actions(), out.join("mdp.json").display());
        }
        Command::Solve { config, preset, out } => {
            let mdp = load_model(config.as_deref(), preset.as_deref())?;
            let sol = solve_q_star_default(&mdp)?;
            let v_star = optimal_conversion_rate(&mdp, &sol.v);
            std::fs::create_dir_all(&out)?;
            sol.q.write_csv(std::fs::File::create(out.join("q_star.csv"))?)?;
            sol.policy.write_csv(std::fs::File::create(out.join("policy.csv"))?)?;
            let summary = serde_json::json!({ "v_star": v_star, "iterations": sol.iterations, "states": mdp.num_states() });
            std::fs::write(out.join("v_star.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            println!("v* = {v_star}");
        }
        Command::Run { config, seed, parallelism, out } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.base_seed = s;
                cfg.validate()?;
            }
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set `output`".into()))?;
            let report = run_and_report(&cfg, config.parent(), parallelism, &out).map_err(|e| match e {
                Error::Run { .. } => e,
                e if e.is_config_error() => e,
                e => Error::Run { agent: "-".into(), seed: cfg.base_seed, source: Box::new(e) },
            })?;
            for a in &report.agents {
                println!("{:<20} mean PR {:.4}  std {:.4}", a.label, a.mean_pr, a.std_pr);
            }
        }
        Command::Report { out } => {
            let report = report_from_dir(&out)?;
            for a in &report.agents {
                println!("{:<20} mean PR {:.4}  std {:.4}", a.label, a.mean_pr, a.std_pr);
            }
        }
        Command::Verify { seed, out } => {
            let checks = run_suite(seed)?;
            let passed = checks.iter().all(|c| c.passed);
            let doc = serde_json::json!({ "passed": passed, "checks": checks });
            let text = serde_json::to_string_pretty(&doc)? + "\n";
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verify.json"), &text)?;
            }
            print!("{text}");
            if !passed {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
