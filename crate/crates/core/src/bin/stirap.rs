use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stirap_core::scenarios::{self, Designer, RunOptions, SweepOptions};
use stirap_core::Error;

#[derive(Parser)]
#[command(name = "stirap", version, about = "Loop-STIRAP scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run built-in scenarios or TOML configs (`all` runs every built-in).
    Run {
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        /// Number of output grid points.
        #[arg(long)]
        grid: Option<usize>,
        /// Comma-separated basis orders to project onto.
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<usize>>,
    },
    /// Final state-3 population against total area, formula and propagation.
    Sweep {
        /// Comma-separated areas in units of pi.
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        areas: Vec<f64>,
        #[arg(long)]
        designer: String,
        /// Write `sweep_<designer>.csv` here instead of printing to stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// List the built-in scenarios.
    List,
    /// Print a built-in scenario as TOML, or write it to `--out`.
    Dump {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
    if e.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn run(names: &[String], options: RunOptions) -> ExitCode {
    let mut configs = Vec::new();
    for name in names {
        if name == "all" {
            configs.extend(scenarios::builtins());
            continue;
        }
        match scenarios::resolve(name) {
            Ok(c) => configs.push(c),
            Err(e) => return fail(&e),
        }
    }
    if let Err(e) = configs.iter().try_for_each(|c| options.apply(c).map(drop)) {
        return fail(&e);
    }
    let mut code = ExitCode::SUCCESS;
    for result in scenarios::run_many(&configs, &options) {
        match result {
            Ok(report) => {
                print!("{}", report.summary());
                if !report.passed() {
                    code = ExitCode::from(1);
                }
            }
            Err(e) => {
                let c = fail(&e);
                if e.is_config() || code == ExitCode::SUCCESS {
                    code = c;
                }
            }
        }
        println!();
    }
    code
}

fn sweep(
    areas: &[f64],
    designer: &str,
    out_dir: Option<PathBuf>,
    tol: Option<f64>,
    grid: Option<usize>,
) -> ExitCode {
    let designer: Designer = match designer.parse() {
        Ok(d) => d,
        Err(e) => return fail(&e),
    };
    let mut opts = SweepOptions::default();
    if let Some(t) = tol {
        opts.tol = t;
    }
    if let Some(n) = grid {
        opts.grid_points = n;
    }
    let areas: Vec<f64> = areas.iter().map(|a| a * std::f64::consts::PI).collect();
    let rows = scenarios::sweep(&areas, designer, &opts);
    let written = match out_dir {
        Some(dir) => std::fs::create_dir_all(&dir)
            .map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })
            .and_then(|_| {
                let path = dir.join(format!("sweep_{designer}.csv"));
                let file = std::fs::File::create(&path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                scenarios::write_sweep_csv(&rows, std::io::BufWriter::new(file))?;
                eprintln!("wrote {}", path.display());
                Ok(())
            }),
        None => scenarios::write_sweep_csv(&rows, std::io::stdout().lock()),
    };
    if let Err(e) = written {
        return fail(&e);
    }
    if rows.iter().any(|r| r.numeric.is_err()) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenarios,
            out_dir,
            tol,
            grid,
            orders,
        } => run(
            &scenarios,
            RunOptions {
                out_dir,
                tol,
                grid_points: grid,
                orders,
            },
        ),
        Command::Sweep {
            areas,
            designer,
            out_dir,
            tol,
            grid,
        } => sweep(&areas, &designer, out_dir, tol, grid),
        Command::List => {
            for cfg in scenarios::builtins() {
                println!("{:<26} {}", cfg.name, cfg.description);
            }
            ExitCode::SUCCESS
        }
        Command::Dump { name, out } => {
            let text = scenarios::builtin(&name)
                .ok_or_else(|| Error::Config(format!("no built-in scenario `{name}`")))
                .and_then(|c| c.to_toml());
            match (text, out) {
                (Err(e), _) => fail(&e),
                (Ok(t), None) => {
                    print!("{t}");
                    ExitCode::SUCCESS
                }
                (Ok(t), Some(path)) => match std::fs::write(&path, t) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => fail(&Error::Io { path, source: e }),
                },
            }
        }
    }
}
