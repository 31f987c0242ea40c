use std::fs;
use std::path::Path;
use std::time::Instant;

use kdebias::io::{load_model, save_model, Dataset, DatasetManifest};
use kdebias::metrics::MetricsReport;
use kdebias::synth::{generate, write_split, CorrelationMode, SynthSpec};
use kdebias::trainer::{train, TrainConfig, TrainData, TrainedModel};
use serde::Serialize;

use crate::args::{EvalArgs, EvalOptions, PredictArgs, SweepArgs, SynthArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::report::{evaluate, Artifacts, EvalRecord, RunRecord, Timing};

fn load(path: &Path) -> CliResult<Dataset> {
    Ok(DatasetManifest::read(path)?.load()?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::output(path, e))
}

fn fit(data: &Dataset, cfg: &TrainConfig) -> CliResult<(TrainedModel, f64)> {
    let input = TrainData {
        images: data.images.view(),
        class_prompts: data.class_prompts.view(),
        sensitive_prompts: data.sensitive_prompts.as_ref().map(|p| p.view()),
        y: data.y.as_ref(),
        s: data.s.as_ref(),
    };
    let start = Instant::now();
    let model = train(&input, cfg)?;
    Ok((model, start.elapsed().as_secs_f64()))
}

/// The split a trained model is scored on: the explicit evaluation manifest,
/// else the training split when it carries labels.
fn eval_target<'a>(train_data: &'a Dataset, eval: Option<&'a Dataset>) -> Option<&'a Dataset> {
    eval.or(Some(train_data).filter(|d| d.y.is_some() && d.s.is_some()))
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let mode: CorrelationMode = args.mode.into();
    let spec = SynthSpec {
        n: args.n,
        d: args.d,
        mode,
        rho: args.rho,
        signal_gap: args.signal_gap,
        bias_gap: args.bias_gap,
        noise_sigma: args.noise,
        prompt_leak: args.prompt_leak,
        seed: args.seed,
        split_seed: 1,
    };
    create_dir(&args.out)?;
    let train_path = write_split(&generate(&spec)?, &args.out, "train")?;
    println!("{}", train_path.display());
    if args.test_n > 0 {
        let rho = args.test_rho.unwrap_or(match mode {
            CorrelationMode::Spurious => 0.5,
            CorrelationMode::Intrinsic => args.rho,
        });
        let test = generate(&spec.split(args.test_n, rho, 2))?;
        println!("{}", write_split(&test, &args.out, "test")?.display());
    }
    write_json(&args.out.join("synth_spec.json"), &spec)
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let cfg = args.config.config();
    cfg.validate()?;
    let train_data = load(&args.manifest)?;
    let eval_data = args.eval_manifest.as_deref().map(load).transpose()?;
    create_dir(&args.out)?;
    let (model, seconds) = fit(&train_data, &cfg)?;
    let model_path = args.out.join("model.kdbs");
    save_model(&model_path, &model)?;
    let metrics = eval_target(&train_data, eval_data.as_ref())
        .map(|d| evaluate(&model, d, &args.eval))
        .transpose()?;
    let record_path = args.out.join("run.json");
    let record = RunRecord {
        config: cfg,
        manifest: args.manifest.clone(),
        eval_manifest: args.eval_manifest.clone(),
        train_rows: model.rows.len(),
        metrics,
        timing: Timing {
            train_seconds: seconds,
        },
        artifacts: Artifacts {
            model: model_path,
            record: record_path.clone(),
        },
        history: model.history.clone(),
    };
    write_json(&record_path, &record)?;
    println!("{}", record_path.display());
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let data = load(&args.manifest)?;
    kdebias::io::check_input_dim(&model, data.images.ncols())?;
    let yhat = model.predict(data.images.view())?;
    let mut writer = csv::Writer::from_path(&args.out).map_err(|e| CliError::output(&args.out, e))?;
    let out_err = |e: csv::Error| CliError::output(&args.out, e);
    writer.write_record(["row", "yhat"]).map_err(out_err)?;
    for (i, k) in yhat.values().iter().enumerate() {
        writer.write_record([i.to_string(), k.to_string()]).map_err(out_err)?;
    }
    writer.flush().map_err(|e| CliError::output(&args.out, e))
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let data = load(&args.manifest)?;
    let metrics = evaluate(&model, &data, &args.eval)?;
    let record = EvalRecord {
        config: model.config,
        manifest: &args.manifest,
        split: &data.manifest.split,
        n: data.images.nrows(),
        positive: args.eval.positive,
        metrics,
    };
    match &args.out {
        Some(path) => write_json(path, &record),
        None => {
            let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::output("<stdout>", e))?;
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct SweepRow {
    tau: f64,
    tau_z: f64,
    avg: Option<f64>,
    wg: Option<f64>,
    gap: Option<f64>,
    eod: Option<f64>,
    seconds: Option<f64>,
    error: String,
    /// JSON echo of the cell's full config.
    config: String,
}

fn sweep_cell(
    train_data: &Dataset,
    target: &Dataset,
    cfg: &TrainConfig,
    opts: &EvalOptions,
) -> CliResult<(MetricsReport, f64)> {
    cfg.validate()?;
    let (model, seconds) = fit(train_data, cfg)?;
    Ok((evaluate(&model, target, opts)?, seconds))
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    let train_data = load(&args.manifest)?;
    let eval_data = args.eval_manifest.as_deref().map(load).transpose()?;
    let target = eval_target(&train_data, eval_data.as_ref()).ok_or_else(|| {
        CliError::Usage("sweep needs labels: pass --eval-manifest or a labelled training manifest".into())
    })?;
    let mut taus = args.tau.clone();
    let mut tau_zs = args.tau_z_grid.clone();
    taus.sort_by(f64::total_cmp);
    tau_zs.sort_by(f64::total_cmp);

    let mut writer = csv::Writer::from_path(&args.out).map_err(|e| CliError::output(&args.out, e))?;
    let mut failures = 0;
    for &tau in &taus {
        for &tau_z in &tau_zs {
            let cfg = TrainConfig {
                tau_i: tau,
                tau_t: tau,
                tau_z,
                ..args.config.config()
            };
            let config = serde_json::to_string(&cfg).map_err(|e| CliError::output(&args.out, e))?;
            let row = match sweep_cell(&train_data, target, &cfg, &args.eval) {
                Ok((m, seconds)) => SweepRow {
                    tau,
                    tau_z,
                    avg: Some(m.avg),
                    wg: Some(m.wg),
                    gap: Some(m.gap),
                    eod: m.eod,
                    seconds: Some(seconds),
                    error: String::new(),
                    config,
                },
                Err(e) => {
                    failures += 1;
                    eprintln!("sweep cell tau={tau} tau_z={tau_z} failed: [{}] {e}", e.module());
                    SweepRow {
                        tau,
                        tau_z,
                        avg: None,
                        wg: None,
                        gap: None,
                        eod: None,
                        seconds: None,
                        error: format!("[{}] {e}", e.module()),
                        config,
                    }
                }
            };
            writer.serialize(row).map_err(|e| CliError::output(&args.out, e))?;
        }
    }
    writer.flush().map_err(|e| CliError::output(&args.out, e))?;
    println!("{}", args.out.display());
    if failures > 0 {
        return Err(CliError::Usage(format!(
            "{failures} of {} sweep cells failed; see the error column of {}",
            taus.len() * tau_zs.len(),
            args.out.display()
        )));
    }
    Ok(())
}

