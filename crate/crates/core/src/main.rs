use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use setpoint_rl::harness::archive::{export_grid, PolicyArchive};
use setpoint_rl::harness::io::{
    comparison_table, load_policies, with_outputs, write_comparison, write_eval, write_training,
};
use setpoint_rl::harness::run::comparison_rows;
use setpoint_rl::harness::{calibrate, compare_case, eval_case, train_case, Controller, ExperimentConfig};
use setpoint_rl::learner::decision_matrix;
use setpoint_rl::{Error, Result};

#[derive(Parser)]
#[command(name = "sprl", version, about = "Set-point modulation agents for PI loops")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy archive per paradigm of the configured case.
    Train {
        config: PathBuf,
        /// Overrides `output` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate one controller on the case scenario.
    Eval {
        config: PathBuf,
        #[arg(long, default_value = "rl")]
        controller: String,
        /// Directory holding the policy archives (defaults to the output dir).
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate rl, spaace and none on the same scenario.
    Compare {
        config: PathBuf,
        #[arg(long)]
        policies: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the decision matrix of a policy archive as a CSV grid.
    ExportPolicy {
        archive: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Tune the no-action baseline and binning ranges; write the calibrated config.
    Calibrate {
        config: PathBuf,
        /// Destination for the calibrated config (defaults to overwriting the input).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(config: &Path, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train { config, output } => {
            let cfg = load(&config, output)?;
            let t = train_case(&cfg)?;
            let files = with_outputs(&cfg.output, &cfg, "train", &command_line(), |out| {
                write_training(out, cfg.case, &t)
            })?;
            let summary = std::fs::read_to_string(cfg.output.join("train-report.txt"))?;
            print!("{summary}");
            eprintln!("wrote {} files to {}", files.len() + 1, cfg.output.display());
        }
        Command::Eval {
            config,
            controller,
            policies,
            output,
        } => {
            let cfg = load(&config, output)?;
            let controller: Controller = controller.parse()?;
            let dir = policies.unwrap_or_else(|| cfg.output.clone());
            let pols = match controller {
                Controller::Rl => Some(load_policies(&dir, &cfg)?),
                _ => None,
            };
            let o = eval_case(&cfg, controller, pols.as_ref())?;
            with_outputs(&cfg.output, &cfg, "eval", &command_line(), |out| write_eval(out, &o))?;
            print!("{}", comparison_table(&comparison_rows(std::slice::from_ref(&o))));
        }
        Command::Compare {
            config,
            policies,
            output,
        } => {
            let cfg = load(&config, output)?;
            let dir = policies.unwrap_or_else(|| cfg.output.clone());
            let pols = load_policies(&dir, &cfg)?;
            let outcomes = compare_case(&cfg, &pols)?;
            with_outputs(&cfg.output, &cfg, "compare", &command_line(), |out| {
                write_comparison(out, &outcomes)
            })?;
            print!("{}", comparison_table(&comparison_rows(&outcomes)));
        }
        Command::ExportPolicy { archive, output } => {
            let a = PolicyArchive::load(&archive)?;
            let text = export_grid(&decision_matrix(&a.model, &a.grid), &a.grid);
            match output {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Calibrate { config, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (out, report) = calibrate(&cfg)?;
            let dest = output.unwrap_or(config);
            std::fs::write(&dest, out.to_toml())?;
            if let Some((key, v, os)) = &report.tuned {
                println!("{key} = {v:.6e} (no-action overshoot {os:.2}%)");
            }
            println!(
                "load overshoot {:.2}%, fault overshoot {:.2}%",
                report.load_overshoot, report.fault_overshoot
            );
            for (i, r) in report.ranges.iter().enumerate() {
                println!(
                    "ranges[{i}]: edot increase {:.4e}, decrease {:.4e}, disturbance {:.4e}",
                    r.increase.edot_range, r.decrease.edot_range, r.disturbance.edot_range
                );
            }
            eprintln!("wrote {}", dest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        1
    } else {
        2
    }
}
