//! `grnn synth`: one toy task, trained and scored against its analytic optimum.

use grnn::engine::{forward, ForwardSpec, GrnnModel, ModelConfig};
use grnn::synth::{build_task, ArmaProcess};
use grnn::training::train_range;
use serde::Serialize;

use crate::config::{self, SynthConfig};
use crate::output::{create_dir, output_dir, save_model, write_file, write_json, write_manifest};
use crate::{CliError, CliResult, RunArgs};

#[derive(Serialize)]
struct SynthResult {
    task: String,
    inroll: usize,
    optimal_loss: f64,
    test_loss: f64,
    final_train_loss: f64,
    tolerance: f64,
    passed: bool,
}

pub fn run(args: &RunArgs) -> CliResult {
    let (mut cfg, text): (SynthConfig, String) = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    cfg.validate()?;
    let arma = match &cfg.task.arma {
        Some(a) => ArmaProcess::new(a.ar.clone(), a.ma.clone(), a.sigma).map_err(|e| CliError::Config(format!("task.arma: {e}")))?,
        None => ArmaProcess::default(),
    };
    let kind = cfg.task.kind;
    let summaries = cfg.model.summaries.clone().unwrap_or_else(|| kind.default_summaries());
    let model_cfg = ModelConfig {
        cell: cfg.model.cell,
        hidden_dim: cfg.model.hidden_dim,
        summaries,
        inroll: cfg.model.inroll,
    };
    // construction errors (e.g. an inroll too small for the topology) are configuration errors
    let train_task = build_task(kind, cfg.model.inroll, cfg.task.train_steps, cfg.seed, &arma)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let test_task = build_task(kind, cfg.model.inroll, cfg.task.test_steps, cfg.seed.wrapping_add(1), &arma)?;
    let mut model = GrnnModel::new(&model_cfg, &train_task.scenario, cfg.training.seed)
        .map_err(|e| CliError::Config(format!("model: {e}")))?;

    let dir = output_dir(args, cfg.output.as_deref(), &format!("synth-{kind}-i{}", cfg.model.inroll));
    let ckpt = dir.join("checkpoints");
    create_dir(&ckpt)?;
    write_manifest(&dir, "synth", args, &text, &cfg, cfg.seed)?;
    train_task.scenario.save(&dir.join("train-scenario"))?;

    let s = &train_task.scenario;
    let history = train_range(&mut model, s, &cfg.training, 0..s.num_steps, |epoch, m| {
        save_model(&ckpt.join(format!("epoch-{:04}.bin", epoch + 1)), m).map_err(|e| grnn::GrnnError::Data(e.to_string()))
    })?;
    write_file(&dir.join("loss.csv"), |w| history.write_csv(w))?;
    save_model(&dir.join("model.bin"), &model)?;

    let out = forward(&model, &test_task.scenario, &ForwardSpec::all(&test_task.scenario).keep_predictions())?;
    if let Some(p) = &out.predictions {
        write_file(&dir.join("predictions.csv"), |w| p.write_csv(&test_task.scenario, w))?;
    }
    let test_loss = out.mean_loss();
    let optimal = train_task.optimal_loss;
    let passed = test_loss.is_finite() && test_loss <= optimal + cfg.tolerance;
    let result = SynthResult {
        task: kind.to_string(),
        inroll: cfg.model.inroll,
        optimal_loss: optimal,
        test_loss,
        final_train_loss: history.epoch_means().last().copied().unwrap_or(f64::NAN),
        tolerance: cfg.tolerance,
        passed,
    };
    write_json(&dir.join("result.json"), &result)?;
    write_json(&dir.join("task.json"), &train_task.manifest())?;
    println!(
        "{kind} inroll {}: optimal {optimal:.3}, achieved {test_loss:.4} (tolerance {}) -> {}",
        cfg.model.inroll,
        cfg.tolerance,
        if passed { "PASS" } else { "FAIL" }
    );
    if passed {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "test loss {test_loss:.6} exceeds optimum {optimal:.6} + {}",
            cfg.tolerance
        )))
    }
}
