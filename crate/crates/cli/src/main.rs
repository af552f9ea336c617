use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vsrd::config::parse_config;
use vsrd::output::MeshStats;
use vsrd::presets::{experiment_by_name, presets, run_experiment, RunOptions, SingleRun};
use vsrd::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "vsrd",
    version,
    about = "Volume-surface reaction-diffusion simulator for Lgl"
)]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a configuration file or a named preset.
    Run(RunArgs),
    /// Print mesh statistics for a configuration.
    MeshInfo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// List the preset catalogue.
    Presets,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "out")]
    outdir: PathBuf,
    /// Override a config entry, e.g. `--set params.xi=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for concurrent runs (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    dump_mesh: bool,
    #[arg(long)]
    dump_matrices: bool,
}

fn run(args: RunArgs) -> Result<()> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let options = RunOptions {
        dump_mesh: args.dump_mesh,
        dump_matrices: args.dump_matrices,
    };
    let report = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let config = parse_config(path, &[])?;
            let experiment = SingleRun {
                name: "config".into(),
                description: format!("run of {}", path.display()),
                config,
            };
            run_experiment(&experiment, &args.set, &args.outdir, options)?
        }
        (None, Some(name)) => {
            let experiment = experiment_by_name(name)?;
            run_experiment(experiment.as_ref(), &args.set, &args.outdir, options)?
        }
        (None, None) => {
            return Err(Error::Usage(
                "either --config or --preset is required".into(),
            ))
        }
    };
    println!(
        "{}: {} files written to {}",
        report.manifest.preset,
        report.manifest.outputs.len() + 1,
        report.outdir.display()
    );
    Ok(())
}

fn mesh_info(config: PathBuf, set: Vec<String>) -> Result<()> {
    let config = parse_config(&config, &set)?;
    let mesh = config.mesh.build()?;
    let stats = MeshStats::of(&mesh);
    let text = toml::to_string(&stats).map_err(|e| Error::Domain(e.to_string()))?;
    print!("{text}");
    Ok(())
}

fn list_presets() {
    for p in presets() {
        println!("{:<14} {}", p.name, p.description);
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::MeshInfo { config, set } => mesh_info(config, set),
        Command::Presets => {
            list_presets();
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
