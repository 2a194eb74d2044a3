//! Command-line runner: `quirk run` drives a testing session against a
//! connected game environment; `quirk env` runs the built-in reference
//! environment as the other side of the socket.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use quirk::config::{load_config, validate_config};
use quirk::personality::available_profiles;
use quirk::refenv::{builtin_scenario, parse_scenario, EnvHarness};
use quirk::session::{build_harness, run, HarnessOptions, StopReason};

#[derive(Parser)]
#[command(
    name = "quirk",
    version,
    about = "Personality-driven game-testing agent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a testing session (the agent side of the bridge).
    Run(Box<RunArgs>),
    /// Run the reference grid-dungeon environment against an agent bridge.
    Env(EnvArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key=value environment file with the run settings.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key (repeatable); wins over file and process env.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write the run report (line-delimited records) here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Prompt template directory (expects <dir>/<game>/<role>.txt).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Directory of .skill seed files for plan-to-code runs.
    #[arg(long)]
    skills: Option<PathBuf>,
    /// Directory of custom personality prompt files.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Capabilities file (action name, tab, comma-separated required params).
    #[arg(long)]
    capabilities: Option<PathBuf>,
    /// Entity-type registry file (id, tab, description).
    #[arg(long)]
    entities: Option<PathBuf>,
    /// Entity mapping file for the target game (id, tab, game term).
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Game API guide injected into code-generation prompts.
    #[arg(long = "game-spec")]
    game_spec: Option<PathBuf>,
    /// Where per-agent memory collections live.
    #[arg(long = "memory-root", default_value = "memories")]
    memory_root: PathBuf,
    /// Run the reference environment in-process against this scenario
    /// (built-in name or file path) instead of waiting for an external one.
    #[arg(long = "embedded-env")]
    embedded_env: Option<String>,
}

#[derive(Args)]
struct EnvArgs {
    /// Agent bridge address to connect to.
    #[arg(long, default_value = "localhost:1111")]
    connect: String,
    /// Scenario: a built-in name (open-room, corridor-maze, combat-arena)
    /// or a scenario file path.
    #[arg(long, default_value = "open-room")]
    scenario: String,
}

fn parse_overrides(pairs: &[String]) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for pair in pairs {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| format!("override {pair:?} is not KEY=VALUE"))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn load_scenario_arg(arg: &str) -> Result<quirk::refenv::DungeonState, String> {
    if let Some(text) = builtin_scenario(arg) {
        return parse_scenario(text).map_err(|e| e.to_string());
    }
    quirk::refenv::load_scenario(std::path::Path::new(arg)).map_err(|e| e.to_string())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let overrides = parse_overrides(&args.overrides)?;
    let cfg = load_config(&args.config, &overrides).map_err(|e| e.to_string())?;
    let registry = available_profiles(args.profiles.as_deref());
    let cfg = validate_config(cfg, &registry).map_err(|e| e.to_string())?;

    let mut options = HarnessOptions {
        templates_dir: args.templates,
        custom_profiles_dir: args.profiles,
        capabilities_file: args.capabilities,
        entity_registry_file: args.entities,
        entity_mapping_file: args.mapping,
        game_spec_file: args.game_spec,
        skills_dir: args.skills,
        memory_root: args.memory_root,
        report_path: args.report,
        ..HarnessOptions::default()
    };

    // An embedded environment shares its world with the code executor, so
    // plan-to-code runs work in a single process.
    let embedded = match &args.embedded_env {
        Some(arg) => {
            let state = load_scenario_arg(arg)?;
            let env = Arc::new(EnvHarness::new(state));
            options.code_executor = Some(Arc::new(env.dsl_executor()));
            Some(env)
        }
        None => None,
    };

    let mut harness = build_harness(&cfg, options).map_err(|e| e.to_string())?;
    if let Some(env) = embedded {
        harness.on_listening = Some(Box::new(move |addr| {
            let env = Arc::clone(&env);
            std::thread::spawn(move || {
                if let Err(e) = env.serve(&addr.to_string()) {
                    log::error!("embedded environment stopped: {e}");
                }
            });
        }));
    } else if cfg.is_plan_to_code {
        return Err(
            "plan-to-code needs a code executor; use --embedded-env for the reference \
             environment or embed the library with your own executor"
                .to_string(),
        );
    }

    let report = run(&cfg, &harness).map_err(|e| e.to_string())?;
    println!(
        "agent {} ({}) ran {} iterations; stop reason: {:?}",
        report.agent_name,
        report.personality,
        report.iterations.len(),
        report.stop_reason
    );
    if let Some(detail) = &report.stop_detail {
        println!("detail: {detail}");
    }
    Ok(match report.stop_reason {
        StopReason::DurationElapsed => ExitCode::SUCCESS,
        StopReason::EnvDisconnect => ExitCode::from(2),
        StopReason::FatalError => ExitCode::from(3),
    })
}

fn cmd_env(args: EnvArgs) -> Result<ExitCode, String> {
    let state = load_scenario_arg(&args.scenario)?;
    let env = EnvHarness::new(state);
    println!("connecting to agent bridge at {}", args.connect);
    env.serve(&args.connect).map_err(|e| e.to_string())?;
    println!("agent closed the connection; environment done");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Env(args) => cmd_env(args),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
