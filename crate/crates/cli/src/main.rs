use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mqs_cli::output::{emit, Format};
use mqs_cli::pipeline::{resimulate, run_pipeline, PipelineError, RunReport};
use mqs_cli::scenario::{load_scenario, Scenario, ScenarioError};
use mqs_core::astar::{astar, compress_waypoints};
use mqs_core::deform::{params_from_leaders, polar_decompose, LeaderStack};
use mqs_core::grid::MeshFreeSet;
use mqs_core::ocp::OcpError;
use mqs_core::sim::Plant;

/// Planning and acquisition toolkit for leader-follower quadcopter
/// formations moving as a deformable body through obstacle fields.
#[derive(Parser)]
#[command(name = "mqs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Injection,
    DoubleIntegrator,
    Quadcopter,
}

impl From<PlantArg> for Plant {
    fn from(p: PlantArg) -> Self {
        match p {
            PlantArg::Injection => Plant::Injection,
            PlantArg::DoubleIntegrator => Plant::DoubleIntegrator,
            PlantArg::Quadcopter => Plant::Quadcopter,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Interpret goal angles as degrees instead of radians.
    #[arg(long)]
    degrees: bool,
}

#[derive(Args)]
struct TolArgs {
    /// Override the multiplier fixed-point tolerance.
    #[arg(long = "tol-gamma")]
    tol_gamma: Option<f64>,
    /// Override the travel-time bisection tolerance, seconds.
    #[arg(long = "tol-t")]
    tol_t: Option<f64>,
    /// Override the transition-integration steps per segment.
    #[arg(long = "rk4-steps")]
    rk4_steps: Option<usize>,
    /// Override the multiplier update damping factor.
    #[arg(long)]
    damping: Option<f64>,
}

impl TolArgs {
    fn apply(&self, scenario: &mut Scenario) {
        if let Some(v) = self.tol_gamma {
            scenario.solver.eps_gamma = v;
        }
        if let Some(v) = self.tol_t {
            scenario.solver.eps_t = v;
        }
        if let Some(v) = self.rk4_steps {
            scenario.solver.rk4_steps = v;
        }
        if let Some(v) = self.damping {
            scenario.solver.damping = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write the report artifacts.
    Plan {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory (also via MQS_OUTDIR).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Artifact formats to write.
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FormatArg::Csv, FormatArg::Json])]
        formats: Vec<FormatArg>,
        /// Plant model for the reported acquisition run.
        #[arg(long, value_enum, default_value = "double-integrator")]
        plant: PlantArg,
        #[command(flatten)]
        tols: TolArgs,
    },
    /// Route the containment ball only and write the path and waypoints.
    AstarOnly {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the deformation parameters of a stacked leader configuration.
    Decompose {
        #[command(flatten)]
        common: CommonArgs,
        /// Nine comma-separated values: x1,x2,x3,y1,y2,y3,z1,z2,z3.
        #[arg(long, allow_hyphen_values = true)]
        stack: String,
    },
    /// Re-run the acquisition simulation against an existing plan.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Plan report produced by `plan` (report.json).
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "double-integrator")]
        plant: PlantArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_VIOLATED: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_INPUT: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            classify(&err)
        }
    };
    ExitCode::from(code)
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("plan file: {0}")]
    PlanFile(#[from] serde_json::Error),
    #[error("{0}")]
    Input(String),
}

fn classify(err: &CliError) -> u8 {
    match err {
        CliError::Scenario(ScenarioError::Infeasible { .. }) => EXIT_INFEASIBLE,
        CliError::Scenario(_) => EXIT_INPUT,
        CliError::Pipeline(PipelineError::Scenario(ScenarioError::Infeasible { .. })) => {
            EXIT_INFEASIBLE
        }
        CliError::Pipeline(PipelineError::Scenario(_)) => EXIT_INPUT,
        CliError::Pipeline(PipelineError::Planner(_)) => EXIT_INFEASIBLE,
        CliError::Pipeline(PipelineError::OptimalControl(OcpError::Infeasible { .. })) => {
            EXIT_INFEASIBLE
        }
        CliError::Pipeline(_) => EXIT_INFEASIBLE,
        CliError::Io(_) | CliError::PlanFile(_) | CliError::Input(_) => EXIT_INPUT,
    }
}

fn out_dir(cli_value: PathBuf) -> PathBuf {
    match std::env::var_os("MQS_OUTDIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cli_value,
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Plan {
            common,
            out,
            formats,
            plant,
            tols,
        } => {
            let mut scenario = load_scenario(&common.scenario, common.degrees)?;
            tols.apply(&mut scenario);
            let run = run_pipeline(&scenario, plant.into())?;
            let formats: Vec<Format> = formats
                .iter()
                .map(|f| match f {
                    FormatArg::Csv => Format::Csv,
                    FormatArg::Json => Format::Json,
                })
                .collect();
            let files = emit(&run, &out_dir(out), &formats)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            print_summary(&run.report);
            Ok(if run.report.all_satisfied() {
                EXIT_OK
            } else {
                EXIT_VIOLATED
            })
        }
        Command::AstarOnly { common, out } => {
            let scenario = load_scenario(&common.scenario, common.degrees)?;
            let free = MeshFreeSet::new(scenario.safety.r_max, scenario.mesh.clone());
            let snap = mqs_cli::scenario::GRID_SNAP_TOL;
            let start = scenario
                .grid
                .node_at(&scenario.start_center, snap)
                .expect("validated endpoint");
            let goal = scenario
                .grid
                .node_at(&scenario.end_params.translation, snap)
                .expect("validated endpoint");
            let path = astar(&start, &goal, &scenario.grid, &free)
                .map_err(PipelineError::Planner)?;
            let waypoints = compress_waypoints(&path);
            let outdir = out_dir(out);
            std::fs::create_dir_all(&outdir)?;
            let doc = serde_json::json!({
                "cost": path.cost,
                "path": path.nodes.iter().map(|n| [n.position.x, n.position.y, n.position.z]).collect::<Vec<_>>(),
                "waypoints": waypoints.iter().map(|w| [w.x, w.y, w.z]).collect::<Vec<_>>(),
            });
            let path_file = outdir.join("route.json");
            std::fs::write(&path_file, serde_json::to_string_pretty(&doc)? + "\n")?;
            println!("wrote {}", path_file.display());
            println!(
                "route: {} nodes, {} waypoints, cost {:.3} m",
                doc["path"].as_array().unwrap().len(),
                waypoints.len(),
                path.cost
            );
            Ok(EXIT_OK)
        }
        Command::Decompose { common, stack } => {
            let scenario = load_scenario(&common.scenario, common.degrees)?;
            let values: Vec<f64> = stack
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Input(format!("--stack: {e}")))?;
            if values.len() != 9 {
                return Err(CliError::Input(format!(
                    "--stack needs 9 values, got {}",
                    values.len()
                )));
            }
            let stack = LeaderStack(nalgebra::SVector::from_column_slice(&values));
            let (q, s) = params_from_leaders(&stack, &scenario.formation)
                .map_err(PipelineError::Deformation)?;
            let params = polar_decompose(&q).map_err(PipelineError::Deformation)?;
            let doc = serde_json::json!({
                "sigma1": params.sigma1,
                "sigma2": params.sigma2,
                "shear_angle": params.shear_angle,
                "rotation_angle": params.rotation_angle,
                "translation": [s.x, s.y, s.z],
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
            Ok(EXIT_OK)
        }
        Command::Simulate {
            common,
            plan,
            plant,
            out,
        } => {
            let scenario = load_scenario(&common.scenario, common.degrees)?;
            let text = std::fs::read_to_string(&plan)?;
            let report: RunReport = serde_json::from_str(&text)?;
            let run = resimulate(&scenario, &report, plant.into())?;
            let files = emit(&run, &out_dir(out), &[Format::Csv, Format::Json])?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            print_summary(&run.report);
            Ok(if run.report.all_satisfied() {
                EXIT_OK
            } else {
                EXIT_VIOLATED
            })
        }
    }
}

fn print_summary(report: &RunReport) {
    println!(
        "plan: {} waypoints, travel time {:.1} s, plant {}, max deviation {:.4} m (bound {:.4})",
        report.waypoints.len(),
        report.travel_time,
        report.plant,
        report.deviation.max_deviation,
        report.deviation.delta,
    );
    for row in &report.safety {
        println!(
            "  {:<16} value {:>12.6}  limit {:>12.6}  margin {:>12.6}  {}",
            row.constraint,
            row.value,
            row.limit,
            row.margin,
            if row.satisfied { "ok" } else { "VIOLATED" }
        );
    }
}
