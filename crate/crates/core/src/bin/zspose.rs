use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zspose::pipeline::bop::write_results_file;
use zspose::pipeline::commands::{cmd_eval, cmd_match, cmd_pose, cmd_render};
use zspose::pipeline::dataset::{export_fixture, resolve, DATA_ROOT_ENV};
use zspose::pipeline::fixture::build_scene;
use zspose::pipeline::selftest::{run_selftest, SelftestOptions};
use zspose::pipeline::PipelineConfig;

#[derive(Parser)]
#[command(
    name = "zspose",
    version,
    about = "Zero-shot 6DoF object pose estimation and BOP-style evaluation",
    after_help = format!("Relative paths are resolved against ${DATA_ROOT_ENV} when it is set.")
)]
struct Cli {
    /// Plain-text `key = value` configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a pose for every detection and write a BOP results CSV
    Pose {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Directory holding obj_XXXXXX.ply meshes
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a results CSV against BOP ground truth
    Eval {
        #[arg(long)]
        results: PathBuf,
        /// Split directory with one sub-directory per scene
        #[arg(long)]
        gt: PathBuf,
        /// models_info.json; meshes are read from the same directory
        #[arg(long)]
        models_info: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render depth, NOCS and mask images of a mesh at a list of poses
    Render {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in synthetic end-to-end check
    Selftest {
        /// Also write the report here
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write the estimated poses as a results CSV
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the synthetic scene as a dataset the other commands can read
        #[arg(long)]
        export: Option<PathBuf>,
        /// Negative control: perturb one template pose before checking
        #[arg(long)]
        corrupt_template_pose: bool,
    },
    /// Template retrieval only; reports Acc15 against ground-truth rotations
    Match {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

fn load_config(cli: &Cli, mut base: PipelineConfig) -> zspose::Result<PipelineConfig> {
    if let Some(path) = &cli.config {
        let path = resolve(path);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| zspose::Error::Config(format!("{}: {e}", path.display())))?;
        base.apply_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        base.seed = seed;
    }
    Ok(base)
}

fn run(cli: &Cli) -> zspose::Result<ExitCode> {
    match &cli.command {
        Command::Pose {
            detections,
            templates,
            features,
            models,
            out,
        } => {
            let cfg = load_config(cli, PipelineConfig::default())?;
            let s = cmd_pose(&cfg, &resolve(detections), &resolve(templates), &resolve(features), &resolve(models), &resolve(out))?;
            println!("{} of {} detections posed, {} skipped", s.results.len(), s.detections, s.failures.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            results,
            gt,
            models_info,
            report,
        } => {
            let cfg = load_config(cli, PipelineConfig::default())?;
            let r = cmd_eval(&cfg, &resolve(results), &resolve(gt), &resolve(models_info), &resolve(report))?;
            print!("{}", r.to_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::Render { mesh, poses, camera, out } => {
            let files = cmd_render(&resolve(mesh), &resolve(poses), &resolve(camera), &resolve(out))?;
            println!("wrote {} files", files.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest {
            report,
            out,
            export,
            corrupt_template_pose,
        } => {
            let mut opts = SelftestOptions::new(cli.seed.unwrap_or(0));
            opts.config = load_config(cli, opts.config)?;
            opts.fixture.seed = opts.config.seed;
            opts.corrupt_template_pose = *corrupt_template_pose;
            if let Some(dir) = export {
                export_fixture(&build_scene(&opts.fixture)?, &opts.config, &resolve(dir))?;
            }
            let rep = run_selftest(&opts)?;
            let text = rep.to_text();
            print!("{text}");
            if let Some(path) = report {
                let path = resolve(path);
                std::fs::write(&path, &text).map_err(|e| zspose::Error::Config(format!("{}: {e}", path.display())))?;
            }
            if let Some(path) = out {
                write_results_file(&rep.results(), resolve(path))?;
            }
            if rep.passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprint!("selftest failed:\n{}", rep.failure_diff());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Match {
            detections,
            templates,
            features,
            gt,
            report,
        } => {
            let cfg = load_config(cli, PipelineConfig::default())?;
            let r = cmd_match(&cfg, &resolve(detections), &resolve(templates), &resolve(features), &resolve(gt), &resolve(report))?;
            print!("{}", r.to_text());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error ({}): {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
