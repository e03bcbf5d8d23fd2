use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use orbstab::maneuver::{Maneuver, ManeuverDocument};
use orbstab::pipeline::{self, PipelineError, ProjectConfig};
use orbstab::simulate::{Scenario, SimSummary};
use orbstab::synthesis::{GainSchedule, GainScheduleDocument};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "orbstab", version, about = "Plan, synthesize, verify and simulate orbitally stabilized maneuvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan the maneuver: writes maneuver.json and plan_report.json.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Number of maneuver knots.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Synthesize and certify a gain schedule: writes gains.json and certificate.json.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// DLMI grid size.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Run closed-loop scenarios: writes one CSV per scenario and simulation_summary.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Run only this scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Seed for measurement noise, overriding the scenario seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-check maneuver and gains on dense grids: writes verify_report.json.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Certification grid size.
        #[arg(long)]
        grid: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Inputs {
    /// Maneuver file; defaults to <out>/maneuver.json.
    #[arg(long)]
    maneuver: Option<PathBuf>,
    /// Gain schedule file; defaults to <out>/gains.json.
    #[arg(long)]
    gains: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(format!("{}: {e}", path.display()))
}

fn load_config(path: &Path) -> Result<ProjectConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cfg: ProjectConfig = toml::from_str(&text).map_err(|e| io_err(path, e))?;
    cfg.check()?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn load_maneuver(common: &Common, inputs: &Inputs) -> Result<Arc<Maneuver>, PipelineError> {
    let path = inputs.maneuver.clone().unwrap_or_else(|| common.out.join("maneuver.json"));
    let doc: ManeuverDocument = read_json(&path)?;
    Ok(Arc::new(Maneuver::from_document(&doc).map_err(|e| io_err(&path, e))?))
}

fn load_gains(common: &Common, inputs: &Inputs) -> Result<GainSchedule, PipelineError> {
    let path = inputs.gains.clone().unwrap_or_else(|| common.out.join("gains.json"));
    let doc: GainScheduleDocument = read_json(&path)?;
    GainSchedule::from_document(&doc).map_err(|e| io_err(&path, e))
}

fn dispatch(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Plan { common, grid } => {
            let cfg = load_config(&common.config)?;
            let out = pipeline::plan(&cfg, grid)?;
            write_json(&common.out, "maneuver.json", &out.maneuver.to_document())?;
            write_json(&common.out, "plan_report.json", &out.report)?;
            let v = &out.report.validation;
            println!("maneuver: {} states, domain [{}, {}]", out.maneuver.n(), out.maneuver.domain().s_alpha, out.maneuver.domain().s_omega);
            if let Some(r) = &out.report.existence {
                let centers: Vec<f64> = r.interior_equilibria.iter().map(|e| e.s).collect();
                println!("existence: passes={} centers={centers:?} nu=({:.3e}, {:.3e})", r.passes(), r.nu_alpha, r.nu_omega);
                for w in &r.warnings {
                    println!("warning: {w}");
                }
            }
            println!("validation: max residual {:.3e}, min separation {:.3e}", v.max_p6_residual, v.min_separation);
            Ok(())
        }
        Command::Synth { common, inputs, grid } => {
            let cfg = load_config(&common.config)?;
            let inst = cfg.model()?;
            let man = load_maneuver(&common, &inputs)?;
            let op = pipeline::operator(&cfg, man.clone())?;
            let out = pipeline::synthesize(&cfg, &inst, &man, &op, grid)?;
            println!("DLMI: {} variables, {} blocks", out.vars, out.blocks);
            println!(
                "certificate: worst DLMI {:.3e}, worst MLDE {:.3e}, abscissae ({:.3}, {:.3})",
                out.certificate.worst_dlmi(),
                out.certificate.worst_mlde(),
                out.certificate.alpha.abscissa,
                out.certificate.omega.abscissa
            );
            write_json(&common.out, "certificate.json", &out.certificate)?;
            if !out.certificate.passed() {
                return Err(PipelineError::Certification(out.certificate.violations));
            }
            write_json(&common.out, "gains.json", &out.gains.to_document())?;
            Ok(())
        }
        Command::Simulate { common, inputs, scenario, seed } => {
            let cfg = load_config(&common.config)?;
            let inst = cfg.model()?;
            let man = load_maneuver(&common, &inputs)?;
            let op = pipeline::operator(&cfg, man.clone())?;
            let gains = load_gains(&common, &inputs)?;
            let mut scenarios: Vec<Scenario> = cfg.scenarios();
            if let Some(name) = &scenario {
                scenarios.retain(|s| &s.name == name);
                if scenarios.is_empty() {
                    return Err(PipelineError::Config(format!("no scenario named '{name}'")));
                }
            }
            if scenarios.is_empty() {
                return Err(PipelineError::Config("no scenarios configured".into()));
            }
            if let Some(seed) = seed {
                for s in &mut scenarios {
                    s.config.seed = seed;
                }
            }
            let results: Vec<Result<_, PipelineError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = scenarios
                    .iter()
                    .map(|sc| {
                        let (inst, man, op, gains) = (&inst, &man, &op, &gains);
                        scope.spawn(move || pipeline::simulate_scenario(inst, man, op, gains, sc))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
            });
            let mut summaries: Vec<SimSummary> = Vec::new();
            for (sc, r) in scenarios.iter().zip(results) {
                let (trace, summary) = r?;
                fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
                let csv = common.out.join(format!("{}.csv", sc.name));
                fs::write(&csv, trace.to_csv()).map_err(|e| io_err(&csv, e))?;
                write_json(&common.out, &format!("{}_events.json", sc.name), &trace.events)?;
                println!(
                    "{}: converged={} |x(T)-x_omega|={:.3e} dist={:.3e} min F_n={}",
                    summary.scenario,
                    summary.converged,
                    summary.final_error_to_omega,
                    summary.final_dist_to_orbit,
                    summary.min_normal_force.map_or("-".into(), |f| format!("{f:.4e}"))
                );
                summaries.push(summary);
            }
            write_json(&common.out, "simulation_summary.json", &summaries)?;
            let failed: Vec<&str> = summaries.iter().filter(|s| !s.converged).map(|s| s.scenario.as_str()).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(PipelineError::NotConverged(failed.join(", ")))
            }
        }
        Command::Verify { common, inputs, grid } => {
            let cfg = load_config(&common.config)?;
            let inst = cfg.model()?;
            let man = load_maneuver(&common, &inputs)?;
            let op = pipeline::operator(&cfg, man.clone())?;
            let gains = load_gains(&common, &inputs)?;
            let report = pipeline::verify(&cfg, &inst, &man, &op, &gains, grid)?;
            write_json(&common.out, "verify_report.json", &report)?;
            println!(
                "maneuver ok={} certificate ok={} reduced mismatch={}",
                report.maneuver_ok,
                report.certificate.passed(),
                report.reduced.as_ref().map_or("-".into(), |r| format!("{:.3e}", r.max_mismatch))
            );
            if report.passed {
                println!("verify: passed");
                Ok(())
            } else {
                Err(PipelineError::Certification(report.failures()))
            }
        }
    }
}
