use std::process::ExitCode;
use std::time::Instant;

use log::info;

use evo_mcts::harness::cli::{cli_parse, CliOutcome};
use evo_mcts::harness::output::{dump_tree, write_outputs};
use evo_mcts::harness::{run_batch_with, HarnessError};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let cfg = match cli_parse(std::env::args_os()) {
        Ok(CliOutcome::Run(cfg)) => cfg,
        Ok(CliOutcome::Info(text)) => {
            print!("{text}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };

    let cells = cfg.agents.len() * cfg.functions.len() * cfg.runs;
    info!("running {cells} runs into {}", cfg.out_dir.display());
    let started = Instant::now();
    let out_dir = cfg.out_dir.clone();
    let records = run_batch_with(&cfg, |record, tree| {
        if cfg.dump_trees {
            dump_tree(&out_dir, record, tree)?;
        }
        Ok(())
    });
    let records = match records {
        Ok(r) => r,
        Err(e @ HarnessError::Config(_)) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write_outputs(&out_dir, &cfg, &records) {
        eprintln!("{e}");
        return ExitCode::from(2);
    }
    info!(
        "{} runs finished in {:.1}s",
        records.len(),
        started.elapsed().as_secs_f64()
    );
    ExitCode::SUCCESS
}
