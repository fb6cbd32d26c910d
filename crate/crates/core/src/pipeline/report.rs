use std::fs;
use std::path::Path;

use super::{ComparisonReport, Contender, PipelineError};
use crate::model::save_model;

/// Median of the values (mean of the middle pair for even counts). `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "never".to_string(), |x| x.to_string())
}

/// Write `report.csv`, `summary.csv`, `parents.csv`, `curves/` and `models/`
/// (plus `failures.csv` when a seed failed) under `dir`.
pub fn write_report_dir(
    report: &ComparisonReport,
    dir: impl AsRef<Path>,
) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    let curves = dir.join("curves");
    let models = dir.join("models");
    for d in [dir, &curves, &models] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }

    let path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let metric_names: Vec<String> = report
        .records
        .first()
        .map(|r| r.final_metrics.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = vec![
        "contender".to_string(),
        "seed".into(),
        "initial_metric".into(),
        "final_metric".into(),
    ];
    header.push("epochs_to_threshold".into());
    header.extend(metric_names.iter().cloned());
    w.write_record(&header)?;
    for r in &report.records {
        let mut row = vec![
            r.contender.to_string(),
            r.seed.to_string(),
            r.initial_metric.to_string(),
            r.final_metric.to_string(),
            opt(r.epochs_to_threshold),
        ];
        row.extend(
            metric_names
                .iter()
                .map(|m| r.final_metrics.get(m).map_or(String::new(), f64::to_string)),
        );
        w.write_record(&row)?;

        let name = format!("{}_{}", r.contender, r.seed);
        let curve_path = curves.join(format!("{name}.csv"));
        let file = fs::File::create(&curve_path).map_err(io_err(&curve_path))?;
        r.curve.write_csv(file)?;
        let model_path = models.join(format!("{name}.json"));
        save_model(&r.model, &model_path).map_err(|e| PipelineError::Io {
            path: model_path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "contender",
        "seeds",
        "median_initial_metric",
        "median_final_metric",
        "median_epochs_to_threshold",
    ])?;
    for c in Contender::ALL {
        let initial: Vec<f64> = report.records_for(c).map(|r| r.initial_metric).collect();
        if initial.is_empty() {
            continue;
        }
        w.write_record([
            c.to_string(),
            initial.len().to_string(),
            opt(median(&initial)),
            opt(report.median_final(c)),
            opt(report.median_epochs(c)),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("parents.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "seed",
        "parent_a_metric",
        "parent_b_metric",
        "layer_emds",
        "threshold",
    ])?;
    for s in &report.seeds {
        let emds = s
            .layer_emds
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            s.seed.to_string(),
            s.parent_a_metric.to_string(),
            s.parent_b_metric.map_or(String::new(), |m| m.to_string()),
            emds,
            s.threshold.clone(),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;

    if !report.failures.is_empty() {
        let path = dir.join("failures.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["seed", "error"])?;
        for f in &report.failures {
            w.write_record([f.seed.to_string(), f.message.clone()])?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    Ok(())
}
