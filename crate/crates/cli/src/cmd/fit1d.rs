use anyhow::Result;
use kwta_core::data::synthetic_1d;
use kwta_core::theorylab::{fit_1d_demo, save_csv, Fit1dConfig};
use kwta_core::Error;
use serde::Serialize;
use serde_json::json;

use crate::args::{Fit1dArgs, Target};
use crate::run::{usage, Run};

#[derive(Serialize)]
struct TargetRow {
    t: f64,
    value: f64,
}

pub fn run(args: &Fit1dArgs, mut run: Run) -> Result<()> {
    let f = match args.target {
        Target::Sine => f64::sin,
        Target::Constant => |_: f64| 0.5,
    };
    let target = synthetic_1d(args.samples, args.t_min, args.t_max, f).map_err(|e| usage(e.to_string()))?;
    let cfg = Fit1dConfig {
        gamma: args.gamma,
        width: args.width,
        depth: args.depth,
        epochs: args.epochs,
        batch_size: 32,
        lr: args.lr,
        momentum: args.momentum,
        grid: args.grid,
        jump_factor: args.jump_factor,
        seed: args.seed,
    };
    let report = fit_1d_demo(&target, &cfg).map_err(|e| match e {
        Error::Config(m) => usage(m),
        other => other.into(),
    })?;
    let rows: Vec<TargetRow> = target.iter().map(|&(t, value)| TargetRow { t, value }).collect();
    save_csv(&rows, run.output("target.csv"))?;
    report.save_csv(run.output("predictions.csv"))?;
    println!("{}", report.summary_line());
    run.finish(
        "fit1d",
        args,
        args.seed,
        json!({ "jumps": report.jumps, "threshold": report.threshold, "train_mse": report.train_mse }),
    )?;
    Ok(())
}
