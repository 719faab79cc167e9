use anyhow::{Context, Result};
use kwta_core::data::{subset, Split};
use kwta_core::nn::{build_model, mlp_specs, mnist_cnn_specs, save_model, Activation, LayerSpec, MNIST_INPUT};
use kwta_core::training::{evaluate, finetune_with, save_metrics_csv, FinetuneSchedule, TrainConfig, Trainer};
use kwta_core::{DType, Model, Real, Rng};
use serde_json::json;

use super::{data_dir, load_split, test_head, with_dtype};
use crate::args::{ActivationKind, Precision, Preset, TrainArgs};
use crate::run::{usage, Run};

const DEFAULT_GAMMA: f64 = 0.08;

/// `start:end:delta`.
pub fn parse_finetune(s: &str) -> Result<FinetuneSchedule> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--finetune expects start:end:delta, got `{s}`")))?;
    let [start, end, delta] = nums[..] else {
        return Err(usage(format!("--finetune expects start:end:delta, got `{s}`")));
    };
    let sched = FinetuneSchedule::new(start, end, delta);
    sched.validate().map_err(|e| usage(e.to_string()))?;
    Ok(sched)
}

fn activation(args: &TrainArgs, finetune: Option<&FinetuneSchedule>) -> Result<Activation> {
    match args.activation {
        ActivationKind::Relu => {
            if args.gamma.is_some() || finetune.is_some() {
                return Err(usage("--gamma and --finetune need --activation kwta"));
            }
            Ok(Activation::Relu)
        }
        ActivationKind::Kwta => {
            let gamma = match (args.gamma, finetune) {
                (Some(_), Some(_)) => return Err(usage("--finetune sets the starting ratio; drop --gamma")),
                (Some(g), None) => g,
                (None, Some(s)) => s.gamma_start,
                (None, None) => DEFAULT_GAMMA,
            };
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(usage(format!("--gamma must lie in (0, 1], got {gamma}")));
            }
            Ok(Activation::Kwta(gamma))
        }
    }
}

fn specs(args: &TrainArgs, act: Activation) -> Result<Vec<LayerSpec>> {
    Ok(match args.preset {
        Preset::MnistCnn => mnist_cnn_specs(act, args.width_divisor).map_err(|e| usage(e.to_string()))?,
        Preset::MnistMlp => {
            if args.hidden.is_empty() || args.hidden.contains(&0) {
                return Err(usage("--hidden needs positive widths"));
            }
            let mut s = vec![LayerSpec::Flatten];
            s.extend(mlp_specs(MNIST_INPUT.iter().product(), &args.hidden, 10, act));
            s
        }
    })
}

pub fn run(args: &TrainArgs, run: Run) -> Result<()> {
    let finetune = args.finetune.as_deref().map(parse_finetune).transpose()?;
    let act = activation(args, finetune.as_ref())?;
    let specs = specs(args, act)?;
    let cfg = TrainConfig::constant(args.epochs, args.batch_size, args.lr, args.momentum, args.seed);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let attack = if args.adv_train {
        Some(args.attack.to_config(args.seed)?)
    } else {
        None
    };
    let dtype = match args.precision {
        Precision::F32 => DType::F32,
        Precision::F64 => DType::F64,
    };
    with_dtype!(dtype, T => train_typed::<T>(args, run, act, specs, cfg, finetune, attack))
}

fn train_typed<T: Real>(
    args: &TrainArgs,
    mut run: Run,
    act: Activation,
    specs: Vec<LayerSpec>,
    cfg: TrainConfig,
    finetune: Option<FinetuneSchedule>,
    attack: Option<kwta_core::attacks::AttackConfig>,
) -> Result<()> {
    let full = load_split::<T>(&data_dir(&args.data), Split::Train)?;
    let train = match args.train_size {
        Some(n) if n > full.len() => return Err(usage(format!("--train-size {n} exceeds {} examples", full.len()))),
        Some(n) => subset(&full, n, args.seed)?,
        None => full,
    };

    let mut model: Model<T> = build_model(&MNIST_INPUT, specs, &mut Rng::new(args.seed))?;
    let preset = serde_json::to_value(args.preset)?;
    model.meta_mut().name = format!("{} {act}", preset.as_str().unwrap_or("model"));
    model.meta_mut().tags = vec![
        format!("train-size={}", train.len()),
        format!("adv-train={}", args.adv_train),
    ];

    let mut trainer = Trainer::new(cfg)?;
    let mut report = trainer.run(&mut model, &train, args.epochs, attack.as_ref())?;
    if let Some(sched) = &finetune {
        report.extend(finetune_with(&mut trainer, &mut model, &train, sched, attack.as_ref())?);
    }
    for m in &report.metrics {
        eprintln!(
            "epoch {:>3} loss {:.4} acc {:.4} gamma {:?}",
            m.epoch, m.loss, m.accuracy, m.gamma
        );
    }

    let test = if args.test_size > 0 {
        Some(evaluate(&model, &test_head::<T>(&args.data, args.test_size)?)?)
    } else {
        None
    };
    let model_path = run.output("model.bin");
    save_model(&model, &model_path).with_context(|| format!("saving {}", model_path.display()))?;
    save_metrics_csv(&report.metrics, run.output("metrics.csv"))?;

    let last = report.metrics.last();
    let results = json!({
        "train_loss": last.map(|m| m.loss),
        "train_accuracy": last.map(|m| m.accuracy),
        "test_loss": test.map(|t| t.0),
        "test_accuracy": test.map(|t| t.1),
        "final_gamma": model.kwta_gammas().first(),
        "epochs_run": report.metrics.len(),
        "params": model.param_count(),
    });
    match test {
        Some((loss, acc)) => println!(
            "train: {} epochs, test loss {loss:.4} accuracy {acc:.4}",
            report.metrics.len()
        ),
        None => println!("train: {} epochs", report.metrics.len()),
    }
    run.finish("train", args, args.seed, results)?;
    Ok(())
}
