use std::fs::File;
use std::io::Write;
use std::path::Path;

use otfuse_core::fusion::{align_neurons, fuse_naive, AlignmentSolver, FusionConfig};
use otfuse_core::model::{load_idx_dataset, load_model, relabel_binary, save_model};
use otfuse_core::ot::SinkhornParams;
use otfuse_core::pipeline::{run_experiment, write_report_dir, Contender, ExperimentSpec};
use otfuse_core::rng::{derive_seed, seeded};
use otfuse_core::train::{
    evaluate_classifier, evaluate_policy, gradient_check as check_gradients, rebalance_undersample,
    train_classifier as fit_classifier, train_reinforce, GridWorld, ReinforceConfig, TrainConfig,
    TrainError, TrainingCurve,
};
use otfuse_core::{LabeledDataset, Mlp, OutputActivation};
use rand::Rng;

use crate::error::{csv_err, io_err, CliError};
use crate::{
    AlignArgs, AlignmentArgs, EvalClassifierArgs, EvalGridworldArgs, ExperimentArgs, FuseArgs,
    FuseMethod, GradientCheckArgs, GridArgs, SolverKind, TrainClassifierArgs, TrainGridworldArgs,
};

fn load_dataset(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
) -> Result<LabeledDataset, CliError> {
    let data = load_idx_dataset(images, labels)?;
    Ok(match limit {
        Some(n) => data.head(n),
        None => data,
    })
}

fn write_curve(curve: &TrainingCurve, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(io_err(path))?;
    curve.write_csv(file).map_err(csv_err(path))
}

fn fusion_config(args: &AlignmentArgs, average_weight: f64) -> FusionConfig {
    let solver = match args.solver {
        SolverKind::Exact => AlignmentSolver::Exact,
        SolverKind::Sinkhorn => AlignmentSolver::Sinkhorn(SinkhornParams {
            epsilon: args.epsilon,
            max_iter: args.max_iter,
            tol: args.tol,
        }),
    };
    FusionConfig {
        metric: args.metric,
        solver,
        include_bias_in_cost: !args.no_bias_cost,
        average_weight,
        soft_alignment: args.soft_alignment,
    }
}

fn print_emd_table(emds: &[f64]) {
    println!("{:>6}  {:>14}", "layer", "emd");
    for (i, e) in emds.iter().enumerate() {
        println!("{:>6}  {:>14.6e}", i + 1, e);
    }
}

fn write_emd_table(emds: &[f64], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let rows = std::iter::once(["layer".to_string(), "emd".to_string()]).chain(
        emds.iter()
            .enumerate()
            .map(|(i, e)| [(i + 1).to_string(), e.to_string()]),
    );
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn grid_env(args: &GridArgs) -> Result<GridWorld, CliError> {
    GridWorld::new(args.grid, &args.quadrants, args.max_steps)
        .map_err(|e| CliError::Train(TrainError::from(e)))
}

pub(crate) fn train_classifier(args: TrainClassifierArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.images, &args.labels, args.limit)?;
    let mut data = relabel_binary(&data, &args.positive_digits)?;
    if args.rebalance_ratio != 0.0 {
        data = rebalance_undersample(
            &data,
            args.rebalance_ratio,
            derive_seed(args.seed, &["rebalance"]),
        )?;
    }
    let init = Mlp::glorot_seeded(
        &args.arch,
        args.activation,
        OutputActivation::Softmax,
        derive_seed(args.seed, &["init"]),
    )?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        momentum: args.momentum,
        validation_split: args.val_split,
        seed: derive_seed(args.seed, &["train"]),
    };
    let (model, curve) = fit_classifier(&init, &data, &config)?;
    save_model(&model, &args.out)?;
    if let Some(path) = &args.curve {
        write_curve(&curve, path)?;
    }
    if let TrainingCurve::Classification(records) = &curve {
        if let Some(last) = records.last() {
            println!("examples {}", data.len());
            println!("train_loss {:.6}", last.train_loss);
            println!("train_accuracy {:.6}", last.train_accuracy);
            if let (Some(l), Some(a)) = (last.validation_loss, last.validation_accuracy) {
                println!("validation_loss {l:.6}");
                println!("validation_accuracy {a:.6}");
            }
        }
    }
    Ok(())
}

pub(crate) fn train_gridworld(args: TrainGridworldArgs) -> Result<(), CliError> {
    let env = grid_env(&args.grid)?;
    let init = Mlp::glorot_seeded(
        &args.arch,
        args.activation,
        OutputActivation::Softmax,
        derive_seed(args.seed, &["init"]),
    )?;
    let config = ReinforceConfig {
        iterations: args.iterations,
        episodes_per_iter: args.episodes_per_iter,
        learning_rate: args.lr,
        gamma: args.gamma,
        seed: derive_seed(args.seed, &["train"]),
    };
    let (policy, curve) = train_reinforce(&init, &env, &config)?;
    save_model(&policy, &args.out)?;
    if let Some(path) = &args.curve {
        write_curve(&curve, path)?;
    }
    let eval = evaluate_policy(&policy, &env, 100, derive_seed(args.seed, &["eval"]))?;
    println!("greedy_mean_reward {:.6}", eval.mean_reward);
    println!("greedy_std_reward {:.6}", eval.std_reward);
    Ok(())
}

pub(crate) fn align(args: AlignArgs) -> Result<(), CliError> {
    let target = load_model(&args.a)?;
    let source = load_model(&args.b)?;
    let alignment = align_neurons(&target, &source, &fusion_config(&args.alignment, 0.5))?;
    save_model(&alignment.aligned_source, &args.out)?;
    print_emd_table(&alignment.layer_emds);
    if let Some(path) = &args.emd_table {
        write_emd_table(&alignment.layer_emds, path)?;
    }
    Ok(())
}

pub(crate) fn fuse(args: FuseArgs) -> Result<(), CliError> {
    let a = load_model(&args.a)?;
    let b = load_model(&args.b)?;
    let fused = match args.method {
        FuseMethod::Naive => {
            if args.emd_table.is_some() {
                return Err(CliError::Usage("--emd-table needs --method ot".into()));
            }
            let fused = fuse_naive(&a, &b, args.avg_weight)?;
            println!("naive averaging, weight {} on model A", args.avg_weight);
            fused
        }
        FuseMethod::Ot => {
            let config = fusion_config(&args.alignment, args.avg_weight);
            let alignment = align_neurons(&a, &b, &config)?;
            let fused = fuse_naive(&a, &alignment.aligned_source, args.avg_weight)?;
            print_emd_table(&alignment.layer_emds);
            if let Some(path) = &args.emd_table {
                write_emd_table(&alignment.layer_emds, path)?;
            }
            fused
        }
    };
    save_model(&fused, &args.out)?;
    Ok(())
}

pub(crate) fn eval_classifier(args: EvalClassifierArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let data = load_dataset(&args.images, &args.labels, args.limit)?;
    let data = match &args.positive_digits {
        Some(digits) => relabel_binary(&data, digits)?,
        None => data,
    };
    let metrics = evaluate_classifier(&model, &data)?;
    println!("examples {}", metrics.examples);
    println!("loss {:.6}", metrics.loss);
    println!("accuracy {:.6}", metrics.accuracy);
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
        w.write_record(["examples", "loss", "accuracy"])
            .map_err(csv_err(path))?;
        w.write_record([
            metrics.examples.to_string(),
            metrics.loss.to_string(),
            metrics.accuracy.to_string(),
        ])
        .map_err(csv_err(path))?;
        w.flush().map_err(io_err(path))?;
    }
    Ok(())
}

pub(crate) fn eval_gridworld(args: EvalGridworldArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let env = grid_env(&args.grid)?;
    let report = evaluate_policy(&model, &env, args.episodes, args.seed)?;
    println!("episodes {}", report.episodes);
    println!("mean_reward {:.6}", report.mean_reward);
    println!("std_reward {:.6}", report.std_reward);
    Ok(())
}

fn fmt_epochs(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        Some(_) => "never".into(),
        None => "-".into(),
    }
}

pub(crate) fn experiment(args: ExperimentArgs) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let spec = ExperimentSpec::from_file(&args.spec)?;
    let report = run_experiment(&spec, args.jobs)?;
    write_report_dir(&report, &args.out)?;

    let mut out = std::io::stdout().lock();
    let w = |e| CliError::Io {
        path: "<stdout>".into(),
        source: e,
    };
    writeln!(
        out,
        "{:<12}  {:>14}  {:>16}",
        "contender", report.primary_metric, "epochs_to_thr"
    )
    .map_err(w)?;
    for contender in &spec.contenders {
        let contender: Contender = *contender;
        let final_metric = report
            .median_final(contender)
            .map_or("-".into(), |v| format!("{v:.6}"));
        writeln!(
            out,
            "{:<12}  {:>14}  {:>16}",
            contender.name(),
            final_metric,
            fmt_epochs(report.median_epochs(contender))
        )
        .map_err(w)?;
    }
    for failure in &report.failures {
        eprintln!("seed {} failed: {}", failure.seed, failure.message);
    }
    Ok(())
}

pub(crate) fn gradient_check(args: GradientCheckArgs) -> Result<(), CliError> {
    if args.batch == 0 {
        return Err(CliError::Usage("--batch must be at least 1".into()));
    }
    let model = Mlp::glorot_seeded(
        &args.arch,
        args.activation,
        OutputActivation::Softmax,
        derive_seed(args.seed, &["init"]),
    )?;
    let mut rng = seeded(derive_seed(args.seed, &["batch"]));
    let classes = model.output_dim();
    let inputs = (0..args.batch)
        .map(|_| {
            (0..model.input_dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let labels = (0..args.batch).map(|_| rng.gen_range(0..classes)).collect();
    let batch = LabeledDataset::new(inputs, labels, classes)?;
    let error = check_gradients(&model, &batch)?;
    println!("max_relative_error {error:.3e}");
    if error > args.tolerance {
        return Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {error:.3e} exceeds {:.1e}",
            args.tolerance
        )));
    }
    Ok(())
}
