mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::{Failure, RunConfig};

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(a) => {
            let cfg = RunConfig::resolve(a)?;
            for s in commands::cmd_run(&cfg)? {
                let ate = s.final_ate.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
                println!(
                    "{:10} {:12} final Nχ² {:.6e}  mean Nχ² {:.6e}  final ATE {}  mean update FLOPs {:.0}  mean solve FLOPs {:.0}",
                    s.dataset, s.variant, s.final_nchi2, s.mean_nchi2, ate, s.mean_flops_update, s.mean_flops_solve
                );
            }
            Ok(())
        }
        Command::MakeMitp(a) => {
            let s = commands::cmd_make_mitp(&a)?;
            println!("{}: {} poses, {} priors -> {}", s.name, s.num_poses, s.num_priors(), a.out.display());
            Ok(())
        }
        Command::Convert(a) => commands::cmd_convert(&a),
        Command::Validate(a) => commands::cmd_validate(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
