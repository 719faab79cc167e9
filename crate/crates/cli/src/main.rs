// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod cmd;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use run::{Run, UsageError};

fn exit_status(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<kwta_core::Error>() {
        Some(kwta_core::Error::Config(_) | kwta_core::Error::Usage(_)) => 2,
        _ => 1,
    }
}

fn set_threads(n: Option<usize>) -> anyhow::Result<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(run::usage("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        eprintln!("built without the `parallel` feature; running sequentially");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = set_threads(cli.threads).and_then(|()| {
        let run = Run::create(&cli.out)?;
        match &cli.command {
            Command::Train(a) => cmd::train::run(a, run),
            Command::Attack(a) => cmd::attack::run(a, run),
            Command::Theory(c) => cmd::theory::run(c, run),
            Command::Landscape(a) => cmd::landscape::run(a, run),
            Command::Fit1d(a) => cmd::fit1d::run(a, run),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
