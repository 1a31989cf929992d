use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polqkd::harness::{
    emit_figure_data, output_root, preset, preset_names, run_scenario, write_outputs, FigureId, LossGrid, RunReport,
    ScenarioConfig,
};
use polqkd::Error;

/// Simulation and finite-key analysis of a decoy-state BB84 link.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run { config: PathBuf },
    /// Run a bundled preset (`list` prints the names).
    Preset { name: String },
    /// Key rate against loss for a scenario, replacing its grid.
    Curve {
        config: PathBuf,
        /// start:stop:step in dB.
        #[arg(long)]
        loss_grid: LossGrid,
    },
    /// Emit one figure table from a saved report.
    Figdata {
        report: PathBuf,
        #[arg(long)]
        figure: FigureId,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::NoLock(_) => 3,
        _ => 1,
    }
}

fn execute(cfg: ScenarioConfig) -> Result<u8, Error> {
    let report = run_scenario(&cfg)?;
    let dir = write_outputs(&cfg, &report, &output_root())?;
    println!("{}", dir.display());
    summarize(&report);
    if let Some(f) = &report.failure {
        eprintln!("{}: {}", f.module, f.message);
        return Ok(if f.no_lock { 3 } else { 1 });
    }
    Ok(if report.zero_key_everywhere() { 4 } else { 0 })
}

fn summarize(r: &RunReport) {
    for s in &r.series {
        println!(
            "N={} blocks={} mean_skr_bps={:.4e} mean_t_key_s={:.4} all_positive={}",
            s.block_n_z,
            s.blocks.len(),
            s.mean_skr(),
            s.mean_t_key(),
            s.all_positive()
        );
    }
    if let (Some(first), Some(last)) = (r.curve.first(), r.curve.last()) {
        println!("curve {} points, {}..{} dB", r.curve.len(), first.loss_db, last.loss_db);
    }
    if let Some(s) = &r.sync {
        println!(
            "sync confidence={:.1} accuracy={:.6} sigma_ps={:.2} qber_y={:.5} (truth {:.5})",
            s.confidence, s.accuracy, s.sigma_ps, s.qber_y_sync, s.qber_y_truth
        );
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => ScenarioConfig::from_path(&config).and_then(execute),
        Command::Preset { name } if name == "list" => {
            for n in preset_names() {
                println!("{n}");
            }
            Ok(0)
        }
        Command::Preset { name } => preset(&name).and_then(execute),
        Command::Curve { config, loss_grid } => ScenarioConfig::read_unchecked(&config).and_then(|mut cfg| {
            cfg.run.loss_grid = Some(loss_grid);
            cfg.run.duration_s = 0.0;
            cfg.sync = Default::default();
            cfg.validate()?;
            execute(cfg)
        }),
        Command::Figdata { report, figure, out } => RunReport::read_json(&report)
            .and_then(|r| emit_figure_data(&r, figure))
            .and_then(|t| {
                match out {
                    Some(p) => t.write_csv(std::fs::File::create(p)?)?,
                    None => t.write_csv(std::io::stdout().lock())?,
                }
                Ok(0)
            }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
