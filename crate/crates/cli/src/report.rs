use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kdebias::dependence::dep_z_labels;
use kdebias::io::Dataset;
use kdebias::kernel::label_factor;
use kdebias::metrics::{max_skew_at_k, MetricsReport};
use kdebias::trainer::{HistoryRecord, TrainConfig, TrainedModel};
use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::args::EvalOptions;
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct Timing {
    pub train_seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Artifacts {
    pub model: PathBuf,
    pub record: PathBuf,
}

/// Everything needed to audit and replay one training run.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub manifest: PathBuf,
    pub eval_manifest: Option<PathBuf>,
    pub train_rows: usize,
    pub metrics: Option<MetricsReport>,
    pub timing: Timing,
    pub artifacts: Artifacts,
    pub history: Vec<HistoryRecord>,
}

/// Full evaluation report with the config of the evaluated model echoed.
#[derive(Debug, Serialize)]
pub struct EvalRecord<'a> {
    pub config: TrainConfig,
    pub manifest: &'a Path,
    pub split: &'a str,
    pub n: usize,
    pub positive: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

fn cosine_scores(z: ArrayView2<f64>, code: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let code_norm = code.dot(&code).sqrt();
    z.rows()
        .into_iter()
        .map(|row| {
            let norm = row.dot(&row).sqrt() * code_norm;
            if norm == 0.0 {
                0.0
            } else {
                row.dot(&code) / norm
            }
        })
        .collect()
}

/// Metrics of `model` on a labelled split, including dependence diagnostics
/// and one MaxSkew@k ranking per class (images ranked by cosine to the class code).
pub fn evaluate(model: &TrainedModel, data: &Dataset, opts: &EvalOptions) -> CliResult<MetricsReport> {
    let (y, s) = match (&data.y, &data.s) {
        (Some(y), Some(s)) => (y, s),
        _ => {
            return Err(CliError::Usage(format!(
                "manifest for split '{}' has no label table; evaluation needs Y and S",
                data.manifest.split
            )))
        }
    };
    kdebias::io::check_input_dim(model, data.images.ncols())?;
    if y.num_classes() != model.num_classes() {
        return Err(CliError::Usage(format!(
            "labels have {} target classes but the model scores {}",
            y.num_classes(),
            model.num_classes()
        )));
    }
    let z: Array2<f64> = model.represent(data.images.view())?;
    let yhat = kdebias::trainer::zero_shot_predict(z.view(), model.class_codes.view())?;
    let mut report = MetricsReport::from_predictions(&yhat, y, s, opts.positive)?;
    report.dep_zy = Some(dep_z_labels(z.view(), &label_factor(y)?)?);
    report.dep_zs = Some(dep_z_labels(z.view(), &label_factor(s)?)?);

    let k = opts.skew_k.min(z.nrows());
    if k > 0 && s.counts().iter().all(|&c| c > 0) {
        let mut skews = BTreeMap::new();
        for (class, code) in model.class_codes.rows().into_iter().enumerate() {
            let scores = cosine_scores(z.view(), code);
            skews.insert(format!("class={class}"), max_skew_at_k(&scores, s, k)?);
        }
        report.max_skew = skews;
    }
    Ok(report)
}
