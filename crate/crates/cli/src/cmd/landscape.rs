use anyhow::Result;
use kwta_core::theorylab::{loss_landscape, save_csv};
use kwta_core::{Model, Rng, Tensor};
use serde::Serialize;
use serde_json::json;

use super::attack::load_as;
use super::test_head;
use crate::args::LandscapeArgs;
use crate::run::{usage, Run};

#[derive(Serialize)]
struct SummaryRow {
    example: usize,
    label: usize,
    model: String,
    sign_changes: usize,
    random_g1: bool,
    clean_loss: f64,
}

pub fn run(args: &LandscapeArgs, mut run: Run) -> Result<()> {
    if args.samples == 0 || !(args.range >= 0.0) {
        return Err(usage("--samples must be positive and --range non-negative"));
    }
    if args.examples.is_empty() {
        return Err(usage("--examples needs at least one test index"));
    }
    let mut models: Vec<(&str, Model<f64>)> = vec![("model", load_as(&args.model)?)];
    if let Some(p) = &args.compare {
        models.push(("compare", load_as(p)?));
    }
    let needed = args.examples.iter().max().map_or(0, |&i| i + 1);
    let test = test_head::<f64>(&args.data, needed)?;
    let mut summary = Vec::new();
    for &i in &args.examples {
        let x = Tensor::new(test.example_shape().to_vec(), test.example(i).to_vec())?;
        let y = test.labels[i];
        for (tag, model) in &models {
            // Same directions for both models come from the same seed per example.
            let mut rng = Rng::for_trial(args.seed, i as u64);
            let l = loss_landscape(model, &x, y, args.range, args.samples, &mut rng)?;
            l.save_csv(run.output(&format!("landscape_{tag}_{i}.csv")))?;
            let center = l.loss[(args.samples / 2) * args.samples + args.samples / 2];
            summary.push(SummaryRow {
                example: i,
                label: y,
                model: tag.to_string(),
                sign_changes: l.sign_changes(),
                random_g1: l.random_g1,
                clean_loss: center,
            });
        }
    }
    save_csv(&summary, run.output("landscape_summary.csv"))?;
    for r in &summary {
        println!(
            "landscape example {} ({}): {} Laplacian sign changes{}",
            r.example,
            r.model,
            r.sign_changes,
            if r.random_g1 { " [random g1]" } else { "" }
        );
    }
    let changes: Vec<usize> = summary.iter().map(|r| r.sign_changes).collect();
    run.finish("landscape", args, args.seed, json!({ "sign_changes": changes }))?;
    Ok(())
}
