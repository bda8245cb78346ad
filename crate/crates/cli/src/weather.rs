//! `grnn weather-*`: prepare station data, then baselines, training and evaluation.
//!
//! All four commands share one output directory. `weather-prepare` writes
//! `dataset.csv` and `graph.txt`; the others read them back.

use std::path::{Path, PathBuf};

use grnn::cells::read_params;
use grnn::weather::clean::TAVG;
use grnn::weather::experiment::ReportRow;
use grnn::weather::{
    build_graph, clean, ingest, planted_dataset, CleanDataset, Split, StationGraph, WeatherData, WeatherModelSpec,
    WeatherReport,
};
use grnn::{CellKind, SummaryFn};

use crate::config::{self, WeatherConfig, WeatherSource};
use crate::output::{create_dir, io_err, output_dir, save_model, write_file, write_manifest};
use crate::{CliError, CliResult, RunArgs};

const DATASET: &str = "dataset.csv";
const GRAPH: &str = "graph.txt";

struct Loaded {
    cfg: WeatherConfig,
    text: String,
    dir: PathBuf,
}

fn load(args: &RunArgs) -> CliResult<Loaded> {
    let (mut cfg, text): (WeatherConfig, String) = config::load(&args.config)?;
    if let Some(settings) = cfg.settings.as_mut() {
        if let Some(s) = args.seed {
            settings.train.seed = s;
        }
        if let Some(e) = args.epochs {
            settings.train.epochs = e;
        }
    }
    if let (Some(s), WeatherSource::Planted(p)) = (args.seed, &mut cfg.data) {
        p.seed = s;
    }
    cfg.validate()?;
    let dir = output_dir(args, cfg.output.as_deref(), "weather");
    Ok(Loaded { cfg, text, dir })
}

fn seed_of(cfg: &WeatherConfig) -> u64 {
    match (&cfg.settings, &cfg.data) {
        (Some(s), _) => s.train.seed,
        (None, WeatherSource::Planted(p)) => p.seed,
        (None, _) => 0,
    }
}

/// Models run when the configuration lists none: the graph model and its no-graph twin.
fn default_models() -> Vec<WeatherModelSpec> {
    vec![
        WeatherModelSpec::new("gRNN-mean", CellKind::Irnn, SummaryFn::Mean, true),
        WeatherModelSpec::new("iRNN", CellKind::Irnn, SummaryFn::Mean, false),
    ]
}

fn models(cfg: &WeatherConfig) -> Vec<WeatherModelSpec> {
    if cfg.models.is_empty() {
        default_models()
    } else {
        cfg.models.clone()
    }
}

pub fn prepare(args: &RunArgs) -> CliResult {
    let Loaded { cfg, text, dir } = load(args)?;
    create_dir(&dir)?;
    let (ds, graph) = match &cfg.data {
        WeatherSource::Planted(p) => planted_dataset(p).map_err(|e| CliError::Config(format!("data: {e}")))?,
        WeatherSource::Files { path, format } => {
            let (records, ingested) = ingest(path, *format)?;
            log::info!(
                "read {} rows from {} files ({} malformed rows skipped)",
                ingested.rows,
                ingested.files,
                ingested.skipped
            );
            let (ds, report) = clean(&records, &cfg.clean)?;
            log::info!(
                "cleaning kept {} stations over {} days; dropped {} in {} passes",
                ds.num_stations(),
                ds.num_days(),
                report.dropped.len(),
                report.passes
            );
            write_file(&dir.join("dropped.csv"), |w| report.write_csv(w))?;
            let graph = build_graph(&ds.projected(), cfg.graph.keep_frac)?;
            (ds, graph)
        }
    };
    ds.save(&dir.join(DATASET))?;
    graph.save(&dir.join(GRAPH))?;
    write_manifest(&dir, "weather-prepare", args, &text, &cfg, seed_of(&cfg))?;
    println!(
        "prepared {} stations x {} days ({} .. {}), {} of {} Delaunay edges kept (threshold {:.2} km)",
        ds.num_stations(),
        ds.num_days(),
        ds.start,
        ds.end(),
        graph.edges.len(),
        graph.total_edges,
        graph.threshold
    );
    Ok(())
}

fn require(path: &Path) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "missing {}; run `grnn weather-prepare` with this configuration first",
            path.display()
        )))
    }
}

fn load_prepared(dir: &Path) -> CliResult<(CleanDataset, StationGraph)> {
    let (d, g) = (dir.join(DATASET), dir.join(GRAPH));
    require(&d)?;
    require(&g)?;
    Ok((CleanDataset::load(&d)?, StationGraph::load(&g)?))
}

fn split(cfg: &WeatherConfig, ds: &CleanDataset) -> CliResult<Split> {
    let r = match (cfg.split.test_start, cfg.split.train_days) {
        (Some(date), _) => Split::at_date(ds, date),
        (None, Some(days)) => Split::new(days, ds.num_days()),
        (None, None) => unreachable!("validated"),
    };
    r.map_err(|e| CliError::Config(format!("split: {e}")))
}

fn write_report(dir: &Path, name: &str, report: &WeatherReport) -> CliResult {
    write_file(&dir.join(name), |w| {
        use std::io::Write;
        writeln!(w, "model,train_mse,test_mse,train_percent,test_percent")?;
        for r in &report.rows {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.2},{:.2}",
                r.name,
                r.train_mse,
                r.test_mse,
                report.train_percent(r),
                report.test_percent(r)
            )?;
        }
        Ok(())
    })
}

pub fn baseline(args: &RunArgs) -> CliResult {
    let Loaded { cfg, text, dir } = load(args)?;
    let (ds, graph) = load_prepared(&dir)?;
    let data = WeatherData::new(&ds, &graph, split(&cfg, &ds)?)?;
    let report = WeatherReport { rows: data.baselines()? };
    write_report(&dir, "baseline.csv", &report)?;
    write_manifest(&dir, "weather-baseline", args, &text, &cfg, seed_of(&cfg))?;
    print!("{report}");
    Ok(())
}

fn model_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join("models").join(name)
}

pub fn train(args: &RunArgs) -> CliResult {
    let Loaded { cfg, text, dir } = load(args)?;
    let settings = cfg.settings()?.clone();
    let (ds, graph) = load_prepared(&dir)?;
    let data = WeatherData::new(&ds, &graph, split(&cfg, &ds)?)?;
    settings
        .train
        .validate(data.split.train_steps().len())
        .map_err(|e| CliError::Config(format!("settings.train: {e}")))?;
    write_manifest(&dir, "weather-train", args, &text, &cfg, settings.train.seed)?;
    let mut rows = data.baselines()?;
    for spec in models(&cfg) {
        let mdir = model_dir(&dir, &spec.name);
        let ckpt = mdir.join("checkpoints");
        create_dir(&ckpt)?;
        log::info!("training {}", spec.name);
        let out = data.run_model(&spec, &settings, |epoch, m| {
            save_model(&ckpt.join(format!("epoch-{:04}.bin", epoch + 1)), m).map_err(|e| grnn::GrnnError::Data(e.to_string()))
        })?;
        write_file(&mdir.join("loss.csv"), |w| out.history.write_csv(w))?;
        save_model(&mdir.join("model.bin"), &out.model)?;
        rows.push(ReportRow {
            name: out.name,
            train_mse: out.train_mse,
            test_mse: out.test_mse,
        });
    }
    let report = WeatherReport { rows };
    write_report(&dir, "report.csv", &report)?;
    print!("{report}");
    Ok(())
}

pub fn eval(args: &RunArgs) -> CliResult {
    let Loaded { cfg, text, dir } = load(args)?;
    let settings = cfg.settings()?.clone();
    let (ds, graph) = load_prepared(&dir)?;
    let data = WeatherData::new(&ds, &graph, split(&cfg, &ds)?)?;
    let pred_dir = dir.join("predictions");
    create_dir(&pred_dir)?;
    let mut rows = data.baselines()?;
    for spec in models(&cfg) {
        let path = model_dir(&dir, &spec.name).join("model.bin");
        if !path.exists() {
            return Err(CliError::Runtime(format!(
                "missing {}; run `grnn weather-train` with this configuration first",
                path.display()
            )));
        }
        let s = data.scenario(spec.graph)?;
        let mut model = data.model(&spec, &settings, &s)?;
        let file = std::fs::File::open(&path).map_err(|e| io_err(&path, e))?;
        model.load_params(&read_params(std::io::BufReader::new(file))?)?;
        let (train_run, test_run) = data.evaluate_runs(&model, &s, true)?;
        let k = data.standardizer.mse_scale();
        rows.push(ReportRow {
            name: spec.name.clone(),
            train_mse: train_run.mean_loss() * k,
            test_mse: test_run.mean_loss() * k,
        });
        let preds = test_run.predictions.expect("kept");
        write_file(&pred_dir.join(format!("{}.csv", spec.name)), |w| {
            use std::io::Write;
            writeln!(w, "station,date,predicted_tavg,observed_tavg")?;
            for t in data.split.test_steps() {
                for (u, st) in ds.stations.iter().enumerate() {
                    let p = data.standardizer.tavg_to_original(preds.get(u, t)[0]);
                    let y = ds.series[u][t + 1][TAVG];
                    writeln!(w, "{},{},{:.4},{:.4}", st.id, ds.date(t + 1), p, y)?;
                }
            }
            Ok(())
        })?;
    }
    let report = WeatherReport { rows };
    write_report(&dir, "eval.csv", &report)?;
    write_manifest(&dir, "weather-eval", args, &text, &cfg, settings.train.seed)?;
    print!("{report}");
    Ok(())
}
