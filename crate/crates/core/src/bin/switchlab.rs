use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use switchlab::output::to_json;
use switchlab::scenario::{self, builtin, builtins, Scenario, ScenarioError};

/// Attractor switching, basins and continuation for forced impact and
/// Duffing oscillators.
#[derive(Debug, Parser)]
#[command(name = "switchlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file or a built-in scenario by name.
    Run {
        /// Path to a TOML scenario, or the name of a built-in.
        config: String,
        /// Output directory (default: the scenario's `output`, else `results/<name>`).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
    /// Print the TOML source of a built-in scenario.
    Show { name: String },
    /// Re-run the configuration recorded in a manifest and compare outputs.
    Verify { manifest: PathBuf },
}

const WORKERS_VAR: &str = "SWITCHLAB_WORKERS";

fn configure_workers() -> Result<(), ScenarioError> {
    let Ok(raw) = std::env::var(WORKERS_VAR) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ScenarioError::Invalid(format!("{WORKERS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ScenarioError::Invalid(format!("cannot start {n} workers: {e}")))
}

fn load(config: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(config);
    if path.exists() {
        return Scenario::from_file(path);
    }
    match builtin(config) {
        Some(b) => b.scenario(),
        None => Err(ScenarioError::Invalid(format!("`{config}` is neither a file nor a built-in scenario"))),
    }
}

/// One-line digest of the action settings for `list`.
fn settings(sc: &Scenario) -> String {
    let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    if let Some(s) = &sc.switch {
        format!("{} M1={} M2={}", name(serde_json::to_value(s.channel).unwrap_or_default()), s.m1, s.m2)
    } else if let Some(s) = &sc.sweep {
        format!("{} in [{}, {}]", s.param, s.range[0], s.range[1])
    } else if let Some(r) = &sc.region {
        format!("{} x {} to {}", r.param1, r.param2, r.param2_to)
    } else if let Some(g) = &sc.basin {
        format!("{}x{} grid", g.nx, g.nv)
    } else if let Some(s) = &sc.simulate {
        format!("tau in [{}, {}]", s.tau0, s.tau1)
    } else {
        String::new()
    }
}

fn run(cli: Cli) -> Result<(), ScenarioError> {
    configure_workers()?;
    match cli.command {
        Command::Run { config, out } => {
            let sc = load(&config)?;
            let dir = out
                .or_else(|| sc.scenario.output.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| Path::new("results").join(&sc.scenario.name));
            let manifest = scenario::run_to_dir(&sc, &dir)?;
            let summary = to_json(&manifest.summary).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            print!("{summary}");
            println!("wrote {} files and {} to {}", manifest.outputs.len(), scenario::MANIFEST, dir.display());
        }
        Command::List => {
            println!("{:<26} {:<9} {:<30} {:<52} description", "name", "action", "settings", "figure");
            for b in builtins() {
                let sc = b.scenario()?;
                let action = serde_json::to_value(sc.scenario.action).unwrap_or_default();
                println!(
                    "{:<26} {:<9} {:<30} {:<52} {}",
                    b.name,
                    action.as_str().unwrap_or_default(),
                    settings(&sc),
                    sc.scenario.figure.as_deref().unwrap_or_default(),
                    sc.scenario.description
                );
            }
        }
        Command::Show { name } => {
            let b = builtin(&name).ok_or_else(|| ScenarioError::Invalid(format!("no built-in scenario `{name}`")))?;
            print!("{}", b.source);
        }
        Command::Verify { manifest } => {
            let report = scenario::verify_manifest(&manifest)?;
            for (file, (sha, _)) in &report.files {
                println!("ok  {file}  {sha}");
            }
            println!("all {} outputs reproduced", report.files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
