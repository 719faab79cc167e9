use anyhow::{bail, Context, Result};
use kwta_core::attacks::{evaluate_robust_accuracy, transfer_attack, AttackConfig, AttackFamily};
use kwta_core::nn::{load_model, peek_dtype};
use kwta_core::{Model, Real};
use serde_json::json;

use super::{test_head, with_dtype};
use crate::args::AttackArgs;
use crate::run::Run;

pub fn run(args: &AttackArgs, run: Run) -> Result<()> {
    let cfg = args.attack.to_config(args.seed)?;
    let dtype = peek_dtype(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    with_dtype!(dtype, T => attack_typed::<T>(args, run, &cfg))
}

/// Loads `path` in precision `T`, converting if it was saved in the other one.
pub fn load_as<T: Real>(path: &std::path::Path) -> Result<Model<T>> {
    let dtype = peek_dtype(path).with_context(|| format!("reading {}", path.display()))?;
    with_dtype!(dtype, U => Ok(load_model::<U>(path).with_context(|| format!("loading {}", path.display()))?.cast::<T>()))
}

fn attack_typed<T: Real>(args: &AttackArgs, mut run: Run, cfg: &AttackConfig) -> Result<()> {
    let target: Model<T> = load_as(&args.model)?;
    let ds = test_head::<T>(&args.data, args.test_size)?;
    let (report, source_gradient_calls) = match &args.transfer_source {
        Some(path) => {
            let source: Model<T> = load_as(path)?;
            let before = target.gradient_calls();
            let report = transfer_attack(&source, &target, &ds, cfg)?;
            if target.gradient_calls() != before {
                bail!("transfer attack evaluated gradients of the target model");
            }
            (report, Some(source.gradient_calls()))
        }
        None => (evaluate_robust_accuracy(&target, &ds, cfg)?, None),
    };
    report.save_csv(run.output("robustness.csv"))?;
    let clamp = cfg.clamp.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let within = report.within_budget(1e-9, clamp);
    let results = if cfg.family == AttackFamily::None {
        println!(
            "attack none: A_std {:.4} on {} examples",
            report.a_std,
            report.rows.len()
        );
        json!({ "a_std": report.a_std, "examples": report.rows.len() })
    } else {
        println!(
            "attack {} eps {}: A_std {:.4} A_rob {:.4} on {} examples (max |δ|∞ {:.6})",
            cfg.family,
            cfg.epsilon,
            report.a_std,
            report.a_rob,
            report.rows.len(),
            report.max_linf
        );
        json!({
            "a_std": report.a_std,
            "a_rob": report.a_rob,
            "examples": report.rows.len(),
            "max_linf": report.max_linf,
            "value_range": [report.value_range.0, report.value_range.1],
            "within_budget": within,
            "target_gradient_calls": target.gradient_calls(),
            "source_gradient_calls": source_gradient_calls,
        })
    };
    run.finish("attack", args, args.seed, results)?;
    Ok(())
}
