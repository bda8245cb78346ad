//! Training and evaluating gRNN models on a cleaned station dataset.
//!
//! Inputs are `(tmin, tavg, tmax)` of day `t`, standardized per feature with
//! the training days' mean and standard deviation; the target is the
//! standardized `tavg` of day `t + 1`. The hidden state is warmed up on the
//! training days before test predictions are scored. Errors are reported in
//! original units.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::baselines::{linear_baseline, steady_state_mse};
use super::clean::{CleanDataset, TAVG};
use super::graph::StationGraph;
use crate::cells::CellKind;
use crate::engine::{forward, ForwardSpec, GrnnModel, ModelConfig, RunOutput};
use crate::error::{GrnnError, Result};
use crate::ndmath::Tensor;
use crate::scenario::{Scenario, ScenarioBuilder};
use crate::summaries::SummaryFn;
use crate::training::{train_range, TrainConfig, TrainReport};

/// Days `0..train_days` are for training; the rest are test days.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    pub train_days: usize,
    pub days: usize,
}

impl Split {
    pub fn new(train_days: usize, days: usize) -> Result<Self> {
        if train_days < 2 || train_days >= days {
            return Err(GrnnError::InvalidArgument(format!(
                "training days {train_days} must be in 2..{days}"
            )));
        }
        Ok(Split { train_days, days })
    }

    /// Split at `first_test`, which must lie strictly inside the date axis.
    pub fn at_date(ds: &CleanDataset, first_test: chrono::NaiveDate) -> Result<Self> {
        let d = ds
            .day_of(first_test)
            .ok_or_else(|| GrnnError::InvalidArgument(format!("{first_test} outside the dataset dates")))?;
        Self::new(d, ds.num_days())
    }

    /// Steps whose target day is a training day.
    pub fn train_steps(&self) -> Range<usize> {
        0..self.train_days - 1
    }

    /// Steps whose target day is a test day.
    pub fn test_steps(&self) -> Range<usize> {
        self.train_days - 1..self.days - 1
    }
}

/// Per-feature affine standardization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Standardizer {
    /// Global mean and standard deviation of each feature over `days`.
    pub fn fit(ds: &CleanDataset, days: Range<usize>) -> Result<Self> {
        let n = (ds.num_stations() * days.len()) as f64;
        if n == 0.0 {
            return Err(GrnnError::Data("no values to standardize".into()));
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for k in 0..3 {
            mean[k] = ds.series.iter().flat_map(|s| s[days.clone()].iter().map(move |v| v[k])).sum::<f64>() / n;
            let var = ds
                .series
                .iter()
                .flat_map(|s| s[days.clone()].iter().map(move |v| (v[k] - mean[k]).powi(2)))
                .sum::<f64>()
                / n;
            std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, v: &[f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| (v[k] - self.mean[k]) / self.std[k])
    }

    pub fn tavg_to_original(&self, z: f64) -> f64 {
        z * self.std[TAVG] + self.mean[TAVG]
    }

    /// Factor turning a standardized squared error into original units.
    pub fn mse_scale(&self) -> f64 {
        self.std[TAVG] * self.std[TAVG]
    }
}

/// One class holding every station and one relation built from `pairs`.
pub fn weather_scenario(ds: &CleanDataset, pairs: &[(usize, usize)], st: &Standardizer) -> Result<Scenario> {
    let n = ds.num_stations();
    let steps = ds.num_days().saturating_sub(1);
    if steps == 0 {
        return Err(GrnnError::Data("need at least two days".into()));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for s in &ds.series {
        let x: Vec<f64> = s[..steps].iter().flat_map(|v| st.apply(v)).collect();
        let y: Vec<f64> = s[1..].iter().map(|v| st.apply(v)[TAVG]).collect();
        inputs.push(Tensor::new(vec![steps, 3], x)?);
        targets.push(Tensor::new(vec![steps, 1], y)?);
    }
    ScenarioBuilder::new(n, steps)
        .class((0..n).collect(), 3, 1)
        .undirected(pairs)
        .build(inputs, targets)
}

/// A model row of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherModelSpec {
    pub name: String,
    pub cell: CellKind,
    pub summary: SummaryFn,
    /// Without the graph the relation has no edges and every summary is zero.
    #[serde(default = "yes")]
    pub graph: bool,
}

fn yes() -> bool {
    true
}

impl WeatherModelSpec {
    pub fn new(name: &str, cell: CellKind, summary: SummaryFn, graph: bool) -> Self {
        WeatherModelSpec {
            name: name.into(),
            cell,
            summary,
            graph,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherSettings {
    pub hidden_dim: usize,
    pub inroll: usize,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct ModelOutcome {
    pub name: String,
    pub train_mse: f64,
    pub test_mse: f64,
    pub history: TrainReport,
    pub model: GrnnModel,
}

/// Everything a model run needs besides the model spec.
pub struct WeatherData<'a> {
    pub ds: &'a CleanDataset,
    pub graph: &'a StationGraph,
    pub split: Split,
    pub standardizer: Standardizer,
}

impl<'a> WeatherData<'a> {
    pub fn new(ds: &'a CleanDataset, graph: &'a StationGraph, split: Split) -> Result<Self> {
        if graph.num_nodes != ds.num_stations() {
            return Err(GrnnError::InvalidArgument(format!(
                "graph has {} nodes but the dataset {} stations",
                graph.num_nodes,
                ds.num_stations()
            )));
        }
        if split.days != ds.num_days() {
            return Err(GrnnError::InvalidArgument("split does not match the dataset".into()));
        }
        let standardizer = Standardizer::fit(ds, 0..split.train_days)?;
        Ok(WeatherData {
            ds,
            graph,
            split,
            standardizer,
        })
    }

    pub fn scenario(&self, with_graph: bool) -> Result<Scenario> {
        let pairs = if with_graph { self.graph.pairs() } else { vec![] };
        weather_scenario(self.ds, &pairs, &self.standardizer)
    }

    pub fn model(&self, spec: &WeatherModelSpec, settings: &WeatherSettings, s: &Scenario) -> Result<GrnnModel> {
        let cfg = ModelConfig {
            cell: spec.cell,
            hidden_dim: settings.hidden_dim,
            summaries: vec![spec.summary],
            inroll: settings.inroll,
        };
        GrnnModel::new(&cfg, s, settings.train.seed)
    }

    /// Train and test MSE in original units; test steps start from warmed-up state.
    pub fn evaluate(&self, model: &GrnnModel, s: &Scenario) -> Result<(f64, f64)> {
        let (train, test) = self.evaluate_runs(model, s, false)?;
        let k = self.standardizer.mse_scale();
        Ok((train.mean_loss() * k, test.mean_loss() * k))
    }

    pub fn evaluate_runs(&self, model: &GrnnModel, s: &Scenario, keep: bool) -> Result<(RunOutput, RunOutput)> {
        let mut train_spec = ForwardSpec::window(self.split.train_steps());
        let mut test_spec = ForwardSpec::window(0..self.split.days - 1).with_loss_steps(self.split.test_steps());
        if keep {
            train_spec = train_spec.keep_predictions();
            test_spec = test_spec.keep_predictions();
        }
        Ok((forward(model, s, &train_spec)?, forward(model, s, &test_spec)?))
    }

    /// Trains one model row, calling `on_epoch` after every epoch.
    pub fn run_model<F>(&self, spec: &WeatherModelSpec, settings: &WeatherSettings, on_epoch: F) -> Result<ModelOutcome>
    where
        F: FnMut(usize, &GrnnModel) -> Result<()>,
    {
        let s = self.scenario(spec.graph)?;
        let mut model = self.model(spec, settings, &s)?;
        let history = train_range(&mut model, &s, &settings.train, self.split.train_steps(), on_epoch)?;
        let (train_mse, test_mse) = self.evaluate(&model, &s)?;
        log::info!("{}: train {train_mse:.4} test {test_mse:.4}", spec.name);
        Ok(ModelOutcome {
            name: spec.name.clone(),
            train_mse,
            test_mse,
            history,
            model,
        })
    }

    pub fn baselines(&self) -> Result<Vec<ReportRow>> {
        let (tr, te) = (self.split.train_steps(), self.split.test_steps());
        let fit = linear_baseline(self.ds, tr.clone())?;
        Ok(vec![
            ReportRow {
                name: "steady state".into(),
                train_mse: steady_state_mse(self.ds, tr.clone())?,
                test_mse: steady_state_mse(self.ds, te.clone())?,
            },
            ReportRow {
                name: "linear".into(),
                train_mse: fit.mse(self.ds, tr)?,
                test_mse: fit.mse(self.ds, te)?,
            },
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Rows with errors relative to the steady-state baseline, which is always the first row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherReport {
    pub rows: Vec<ReportRow>,
}

impl WeatherReport {
    pub fn baseline(&self) -> &ReportRow {
        &self.rows[0]
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Test MSE as a percentage of the steady-state test MSE.
    pub fn test_percent(&self, row: &ReportRow) -> f64 {
        row.test_mse / self.baseline().test_mse * 100.0
    }

    pub fn train_percent(&self, row: &ReportRow) -> f64 {
        row.train_mse / self.baseline().train_mse * 100.0
    }
}

impl fmt::Display for WeatherReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        writeln!(
            f,
            "{:<w$}  {:>10}  {:>10}  {:>8}  {:>8}",
            "model", "train MSE", "test MSE", "train %", "test %"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<w$}  {:>10.2}  {:>10.2}  {:>8.2}  {:>8.2}",
                r.name,
                r.train_mse,
                r.test_mse,
                self.train_percent(r),
                self.test_percent(r)
            )?;
        }
        Ok(())
    }
}

/// Baselines followed by every model row.
pub fn run_weather_experiment(
    data: &WeatherData,
    models: &[WeatherModelSpec],
    settings: &WeatherSettings,
) -> Result<(WeatherReport, Vec<ModelOutcome>)> {
    let mut rows = data.baselines()?;
    let mut outcomes = Vec::new();
    for spec in models {
        let out = data.run_model(spec, settings, |_, _| Ok(()))?;
        rows.push(ReportRow {
            name: out.name.clone(),
            train_mse: out.train_mse,
            test_mse: out.test_mse,
        });
        outcomes.push(out);
    }
    if rows[1].test_mse > 1.05 * rows[0].test_mse {
        log::warn!("linear baseline is more than 5% worse than steady state on test days");
    }
    Ok((WeatherReport { rows }, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::OptimizerKind;
    use crate::weather::planted::{planted_dataset, PlantedConfig};

    fn small() -> (CleanDataset, StationGraph) {
        planted_dataset(&PlantedConfig {
            stations: 8,
            days: 60,
            ..Default::default()
        })
        .unwrap()
    }

    fn settings(epochs: usize) -> WeatherSettings {
        WeatherSettings {
            hidden_dim: 4,
            inroll: 1,
            train: TrainConfig {
                window: 10,
                epochs,
                learning_rate: 0.05,
                optimizer: OptimizerKind::Adagrad,
                clip_norm: Some(1.0),
                seed: 3,
                initial_accumulator: 0.0,
            },
        }
    }

    #[test]
    fn split_ranges() {
        let s = Split::new(365, 730).unwrap();
        assert_eq!(s.train_steps(), 0..364);
        assert_eq!(s.test_steps(), 364..729);
        assert!(Split::new(730, 730).is_err());
    }

    #[test]
    fn scenario_layout() {
        let (ds, g) = small();
        let data = WeatherData::new(&ds, &g, Split::new(40, 60).unwrap()).unwrap();
        let s = data.scenario(true).unwrap();
        assert_eq!(s.num_steps, 59);
        assert_eq!(s.num_relations(), 1);
        let st = data.standardizer;
        assert_eq!(s.input(2, 5), &st.apply(&ds.series[2][5]));
        assert_eq!(s.target(2, 5)[0], st.apply(&ds.series[2][6])[TAVG]);
        assert!(data.scenario(false).unwrap().relations[0].is_empty());
    }

    #[test]
    fn standardized_mse_rescales_to_original_units() {
        let (ds, g) = small();
        let data = WeatherData::new(&ds, &g, Split::new(40, 60).unwrap()).unwrap();
        let spec = WeatherModelSpec::new("m", CellKind::Lstm, SummaryFn::Mean, true);
        let s = data.scenario(true).unwrap();
        let model = data.model(&spec, &settings(1), &s).unwrap();
        let (_, test) = data.evaluate_runs(&model, &s, true).unwrap();
        let preds = test.predictions.unwrap();
        let st = data.standardizer;
        let mut direct = 0.0;
        let mut n = 0;
        for t in data.split.test_steps() {
            for u in 0..ds.num_stations() {
                let e = ds.series[u][t + 1][TAVG] - st.tavg_to_original(preds.get(u, t)[0]);
                direct += e * e;
                n += 1;
            }
        }
        let (_, test_mse) = data.evaluate(&model, &s).unwrap();
        assert!((direct / n as f64 - test_mse).abs() < 1e-9 * test_mse.max(1.0));
    }

    #[test]
    fn report_rows_and_format() {
        let (ds, g) = small();
        let data = WeatherData::new(&ds, &g, Split::new(40, 60).unwrap()).unwrap();
        let models = [WeatherModelSpec::new("iRNN", CellKind::Irnn, SummaryFn::Mean, false)];
        let (rep, out) = run_weather_experiment(&data, &models, &settings(2)).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert_eq!(out[0].history.epoch_means().len(), 2);
        assert_eq!(rep.test_percent(rep.baseline()), 100.0);
        let text = rep.to_string();
        assert!(text.lines().next().unwrap().contains("test %"));
        assert!(text.contains("100.00"));
        assert!(text.lines().any(|l| l.starts_with("iRNN")));
    }
}
