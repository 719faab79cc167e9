use anyhow::Result;
use kwta_core::kwta::winners;
use kwta_core::tensor::gaussian_matrix;
use kwta_core::theorylab::{
    admissible_points, bernoulli_experiment, dense_discontinuity_trial, disjoint_pattern_trial, fit_labels, jump_sweep,
    label_fit_error, save_csv, BernoulliConfig, DenseTrialConfig, DisjointTrialConfig, JumpConfig, TrialReport,
    TrialRow,
};
use kwta_core::{Error, Rng};
use serde::Serialize;
use serde_json::json;

use crate::args::{BernoulliArgs, DenseArgs, DisjointArgs, FitLabelsArgs, JumpArgs, TheoryCommand};
use crate::run::{usage, Run};

/// Out-of-range theorem parameters are usage errors.
fn checked(e: Error) -> anyhow::Error {
    match e {
        Error::Config(msg) => usage(msg),
        other => other.into(),
    }
}

pub fn run(cmd: &TheoryCommand, run: Run) -> Result<()> {
    match cmd {
        TheoryCommand::Dense(a) => dense(a, run),
        TheoryCommand::Disjoint(a) => disjoint(a, run),
        TheoryCommand::Jump(a) => jump(a, run),
        TheoryCommand::Bernoulli(a) => bernoulli(a, run),
        TheoryCommand::FitLabels(a) => fit(a, run),
    }
}

fn write_sweeps(run: &mut Run, name: &str, reports: &[TrialReport], rows: &[TrialRow]) -> Result<()> {
    save_csv(rows, run.output(&format!("{name}_trials.csv")))?;
    save_csv(reports, run.output(&format!("{name}_summary.csv")))?;
    for r in reports {
        println!("{}", r.summary_line());
    }
    Ok(())
}

fn dense(a: &DenseArgs, mut run: Run) -> Result<()> {
    let cfgs: Vec<DenseTrialConfig> =
        a.l.iter()
            .map(|&l| DenseTrialConfig {
                m: a.m,
                l,
                gamma: a.gamma,
                beta: a.beta,
                trials: a.trials,
                seed: a.seed,
            })
            .collect();
    for c in &cfgs {
        c.validate().map_err(checked)?;
    }
    let (mut reports, mut rows) = (Vec::new(), Vec::new());
    for c in &cfgs {
        let s = dense_discontinuity_trial(c).map_err(checked)?;
        reports.push(s.report);
        rows.extend(s.rows);
    }
    write_sweeps(&mut run, "dense", &reports, &rows)?;
    let fractions: Vec<f64> = reports.iter().map(|r| r.fraction).collect();
    run.finish("theory dense", a, a.seed, json!({ "fractions": fractions }))?;
    Ok(())
}

fn disjoint(a: &DisjointArgs, mut run: Run) -> Result<()> {
    let cfgs: Vec<DisjointTrialConfig> =
        a.l.iter()
            .map(|&l| DisjointTrialConfig {
                m: a.m,
                l,
                k: a.k,
                n_points: a.n,
                alpha: a.alpha,
                trials: a.trials,
                seed: a.seed,
            })
            .collect();
    for c in &cfgs {
        c.validate().map_err(checked)?;
    }
    let (mut reports, mut rows, mut fit_errors) = (Vec::new(), Vec::new(), Vec::new());
    for c in &cfgs {
        let (s, fit) = disjoint_pattern_trial(c).map_err(checked)?;
        reports.push(s.report);
        rows.extend(s.rows);
        fit_errors.push(fit);
    }
    write_sweeps(&mut run, "disjoint", &reports, &rows)?;
    for (c, f) in cfgs.iter().zip(&fit_errors) {
        match f {
            Some(e) => println!("disjoint l={}: worst label-fit error over disjoint trials {e:.3e}", c.l),
            None => println!("disjoint l={}: no fully disjoint trial to fit", c.l),
        }
    }
    let fractions: Vec<f64> = reports.iter().map(|r| r.fraction).collect();
    run.finish(
        "theory disjoint",
        a,
        a.seed,
        json!({ "fractions": fractions, "max_fit_error": fit_errors }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CrossingRow {
    gamma: f64,
    t: f64,
    leaving: usize,
    entering: usize,
    x_star: f64,
    gap: f64,
}

fn jump(a: &JumpArgs, mut run: Run) -> Result<()> {
    let cfg = JumpConfig {
        l: a.l,
        m: a.m,
        gammas: a.gammas.clone(),
        crossings: a.crossings,
        t_max: a.t_max,
        seed: a.seed,
    };
    cfg.validate().map_err(checked)?;
    let (rows, raw) = jump_sweep(&cfg).map_err(checked)?;
    let crossings: Vec<CrossingRow> = raw
        .iter()
        .map(|(gamma, j)| CrossingRow {
            gamma: *gamma,
            t: j.t,
            leaving: j.leaving,
            entering: j.entering,
            x_star: j.x_star,
            gap: j.gap,
        })
        .collect();
    save_csv(&crossings, run.output("jump_crossings.csv"))?;
    save_csv(&rows, run.output("jump_summary.csv"))?;
    for r in &rows {
        println!(
            "jump gamma={} k={} seed={}: mean |x*| {:.6} over {} crossings ({} rays)",
            r.gamma, r.k, r.seed, r.mean_abs_x_star, r.crossings, r.attempts
        );
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean_abs_x_star).collect();
    run.finish("theory jump", a, a.seed, json!({ "mean_abs_x_star": means }))?;
    Ok(())
}

fn bernoulli(a: &BernoulliArgs, mut run: Run) -> Result<()> {
    let cfg = BernoulliConfig {
        n_points: a.n,
        m: a.m,
        p: a.p,
        l: a.l,
        gamma: a.gamma,
        trials: a.trials,
        seed: a.seed,
    };
    let s = bernoulli_experiment(&cfg).map_err(checked)?;
    write_sweeps(&mut run, "bernoulli", std::slice::from_ref(&s.report), &s.rows)?;
    run.finish("theory bernoulli", a, a.seed, json!({ "fraction": s.report.fraction }))?;
    Ok(())
}

#[derive(Serialize)]
struct FitRow {
    point: usize,
    z: f64,
    fitted: f64,
    abs_error: f64,
}

fn fit(a: &FitLabelsArgs, mut run: Run) -> Result<()> {
    let probe = DisjointTrialConfig {
        m: a.m,
        l: a.l,
        k: a.k,
        n_points: a.n,
        alpha: a.alpha,
        trials: 1,
        seed: a.seed,
    };
    probe.validate().map_err(checked)?;
    let mut rng = Rng::new(a.seed);
    let xs = admissible_points(a.m, a.n, a.alpha, &mut rng).map_err(checked)?;
    let w = gaussian_matrix(a.l, a.m, 1.0 / a.l as f64, &mut rng)?;
    let zs: Vec<f64> = (0..a.n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let v = fit_labels(&w, &xs, &zs, a.k)?;
    let worst = label_fit_error(&w, &xs, &zs, a.k, &v)?;
    let mut rows = Vec::with_capacity(a.n);
    for (i, (x, &z)) in xs.iter().zip(&zs).enumerate() {
        let y: Vec<f64> = w
            .data()
            .chunks_exact(a.m)
            .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect();
        let fitted: f64 = winners(&y, a.k)?.into_iter().map(|t| v[t] * y[t]).sum();
        rows.push(FitRow {
            point: i,
            z,
            fitted,
            abs_error: (fitted - z).abs(),
        });
    }
    save_csv(&rows, run.output("fit_labels.csv"))?;
    let nonzero = v.iter().filter(|&&x| x != 0.0).count();
    println!(
        "fit-labels seed={}: {} points, {nonzero} nonzero entries, max error {worst:.3e}",
        a.seed, a.n
    );
    run.finish(
        "theory fit-labels",
        a,
        a.seed,
        json!({ "max_error": worst, "nonzero": nonzero }),
    )?;
    Ok(())
}
