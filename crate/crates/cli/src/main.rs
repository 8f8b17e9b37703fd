//! `fibreforms`: decompose forms into horizontal shadows, check shadow data,
//! relax and minimize gauged problems, and test integrands for
//! quasiconvexity, with reproducible outputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or parse
//! error, 3 check failed or violation found, 4 minimizer did not converge.

mod commands;
mod manifest;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Context, Exit, RunOptions, Timer, EXIT_CONFIG};
use manifest::{Manifest, MANIFEST_VERSION};
use output::OutputDir;

#[derive(Parser)]
#[command(name = "fibreforms", version, about = "Differential forms on fibre bundle charts: shadows, relaxation, quasiconvexity and minimization")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Problem file (TOML, schema_version = 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the discretization seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fibreforms-out")]
    out: PathBuf,
    /// Closedness/admissibility tolerance, QC relative tolerance, or
    /// minimizer gradient tolerance, depending on the subcommand.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Nodes per axis of the minimizer grid.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Quasiconvexity trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Gauss–Legendre points per axis and cell.
    #[arg(long, global = true)]
    quadrature_order: Option<usize>,
    /// Print wall-clock time to stderr (never written to files).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Shadow decomposition of the derivative of the `[form]` block.
    Decompose,
    /// Closedness and boundary admissibility of shadow data.
    CheckShadow {
        /// ShadowData JSON; defaults to decomposing the `[form]` block.
        #[arg(long)]
        shadow: Option<String>,
    },
    /// Builds the gauged problem and evaluates it at the gauge.
    Relax,
    /// Searches for quasiconvexity violations (exit 3 if one is found).
    QcTest {
        /// Lebesgue averaging instead of the volume-weighted test.
        #[arg(long)]
        euclidean: bool,
    },
    /// Minimizes the gauged objective on the node grid.
    Minimize,
    /// Comass of the `[form]` block at the `[comass]` point.
    Comass,
    /// Summarizes the reports found in a directory.
    Report {
        /// Directory holding earlier outputs.
        #[arg(long)]
        from: PathBuf,
    },
    /// Reruns a manifest into `--out`.
    Replay {
        manifest: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Decompose => "decompose",
            Command::CheckShadow { .. } => "check-shadow",
            Command::Relax => "relax",
            Command::QcTest { .. } => "qc-test",
            Command::Minimize => "minimize",
            Command::Comass => "comass",
            Command::Report { .. } => "report",
            Command::Replay { .. } => "replay",
        }
    }
}

fn options(g: &Global, cmd: &Command) -> RunOptions {
    let mut o = RunOptions {
        seed: g.seed,
        tolerance: g.tolerance,
        resolution: g.resolution,
        trials: g.trials,
        quadrature_order: g.quadrature_order,
        ..RunOptions::default()
    };
    match cmd {
        Command::CheckShadow { shadow } => o.shadow = shadow.clone(),
        Command::QcTest { euclidean } => o.euclidean = *euclidean,
        Command::Report { from } => o.from = Some(from.display().to_string()),
        _ => {}
    }
    o
}

/// Runs one subcommand and writes its manifest.
fn execute(
    subcommand: &str,
    options: RunOptions,
    config_path: Option<String>,
    config: Option<String>,
    out_dir: &Path,
) -> Result<i32, Exit> {
    let mut out = OutputDir::create(out_dir)?;
    let code = if subcommand == "report" {
        let from = options.from.clone().ok_or_else(|| Exit::config("report needs --from"))?;
        commands::report(Path::new(&from), &mut out)?
    } else {
        let text = config.as_deref().ok_or_else(|| Exit::config(format!("{} needs --config", subcommand)))?;
        let origin = config_path.clone().unwrap_or_else(|| "<config>".into());
        let ctx = Context::new(text, &origin, options.clone())?;
        match subcommand {
            "decompose" => commands::decompose(&ctx, &mut out)?,
            "check-shadow" => commands::check_shadow(&ctx, &mut out)?,
            "relax" => commands::relax(&ctx, &mut out)?,
            "qc-test" => commands::qc_test(&ctx, &mut out)?,
            "minimize" => commands::minimize_cmd(&ctx, &mut out)?,
            "comass" => commands::comass_cmd(&ctx, &mut out)?,
            other => return Err(Exit::config(format!("unknown subcommand '{}' in manifest", other))),
        }
    };
    let seed = config
        .as_deref()
        .and_then(|t| fibreforms::config::Problem::from_toml(t).ok())
        .map(|p| options.seed.unwrap_or(p.file.discretization.seed));
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool: "fibreforms".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: subcommand.into(),
        options,
        config_path,
        config,
        seed,
        outputs: out.written().to_vec(),
    };
    out.write_json(&Manifest::file_name(subcommand), &manifest)?;
    Ok(code)
}

fn run(cli: Cli) -> Result<i32, Exit> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Exit::runtime(format!("thread pool: {}", e)))?;
    }
    let timer = Timer::start();
    let code = match &cli.command {
        Command::Replay { manifest } => {
            let text = fs::read_to_string(manifest).map_err(|e| Exit::config(format!("{}: {}", manifest.display(), e)))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| Exit::config(format!("{}:{}:{}: {}", manifest.display(), e.line(), e.column(), e)))?;
            if m.manifest_version != MANIFEST_VERSION {
                return Err(Exit::config(format!("unsupported manifest_version {}", m.manifest_version)));
            }
            execute(&m.subcommand, m.options, m.config_path, m.config, &cli.global.out)?
        }
        cmd => {
            let config = match &cli.global.config {
                Some(p) => Some(fs::read_to_string(p).map_err(|e| Exit::config(format!("{}: {}", p.display(), e)))?),
                None => None,
            };
            let path = cli.global.config.as_ref().map(|p| p.display().to_string());
            execute(cmd.name(), options(&cli.global, cmd), path, config, &cli.global.out)?
        }
    };
    if cli.global.timing {
        eprintln!("{}: {:.3} s", cli.command.name(), timer.seconds());
    }
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
