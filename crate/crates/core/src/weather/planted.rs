//! Synthetic station data with spatial structure a graph model can exploit.
//!
//! Each station's temperature is a latitude-dependent seasonal cycle plus an
//! anomaly that diffuses over the station graph:
//! `a_u(t+1) = rho * ((1 - alpha) * a_u(t) + alpha * mean_{v ~ u} a_v(t - lag)) + noise`.
//! Tomorrow's anomaly therefore depends on the neighborhood average, which a
//! station's own history cannot fully reveal. With `lag = 1` that average is
//! already observable by the neighbors one day earlier, so a single hop per
//! day (inroll 1) suffices to use it.

use std::f64::consts::PI;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::clean::{project, CleanDataset, StationMeta};
use super::graph::{build_graph, StationGraph};
use crate::error::{GrnnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub stations: usize,
    pub days: usize,
    /// Weight of the neighborhood mean in the anomaly update.
    pub alpha: f64,
    /// Anomaly persistence.
    pub rho: f64,
    /// Delay, in days, of the neighbor influence.
    pub lag: usize,
    /// Standard deviation of the anomaly innovations, degrees C.
    pub innovation_std: f64,
    /// Standard deviation of independent measurement noise, degrees C.
    pub observation_std: f64,
    /// Amplitude of the yearly cycle, degrees C.
    pub seasonal_amplitude: f64,
    /// Cooling of the mean temperature per degree of latitude north of 30.
    pub latitude_gradient: f64,
    pub keep_frac: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            stations: 40,
            days: 730,
            alpha: 1.0,
            rho: 0.95,
            lag: 1,
            innovation_std: 2.0,
            observation_std: 0.3,
            seasonal_amplitude: 12.0,
            latitude_gradient: 0.7,
            keep_frac: 0.95,
            seed: 2014,
        }
    }
}

/// Generates the dataset together with the graph the anomalies diffuse on.
pub fn planted_dataset(cfg: &PlantedConfig) -> Result<(CleanDataset, StationGraph)> {
    if cfg.stations < 3 || cfg.days < 2 {
        return Err(GrnnError::InvalidArgument("planted data needs >= 3 stations and >= 2 days".into()));
    }
    if !(0.0..=1.0).contains(&cfg.alpha) || cfg.rho.abs() >= 1.0 {
        return Err(GrnnError::InvalidArgument(format!("alpha {} / rho {}", cfg.alpha, cfg.rho)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let stations: Vec<StationMeta> = (0..cfg.stations)
        .map(|i| StationMeta {
            id: format!("P{i:04}"),
            // round to 0.001 degree like real station metadata
            lat: (rng.gen_range(30.0..47.0f64) * 1000.0).round() / 1000.0,
            lon: (rng.gen_range(-120.0..-75.0f64) * 1000.0).round() / 1000.0,
        })
        .collect();
    let points = project(&stations.iter().map(|s| (s.lat, s.lon)).collect::<Vec<_>>());
    let graph = build_graph(&points, cfg.keep_frac)?;
    let mut nbrs = vec![Vec::new(); cfg.stations];
    for (u, v) in graph.pairs() {
        nbrs[u].push(v);
        nbrs[v].push(u);
    }

    let innov = Normal::new(0.0, cfg.innovation_std).map_err(|e| GrnnError::InvalidArgument(e.to_string()))?;
    let obs = Normal::new(0.0, cfg.observation_std).map_err(|e| GrnnError::InvalidArgument(e.to_string()))?;
    let n = cfg.stations;
    // hist[0] is today's anomaly field, hist[k] the one k days earlier
    let mut hist = vec![vec![0.0; n]; cfg.lag + 1];
    let step = |hist: &mut Vec<Vec<f64>>, rng: &mut ChaCha8Rng| {
        let (a, old) = (&hist[0], &hist[cfg.lag]);
        let next = (0..n)
            .map(|u| {
                let m = if nbrs[u].is_empty() {
                    old[u]
                } else {
                    nbrs[u].iter().map(|&v| old[v]).sum::<f64>() / nbrs[u].len() as f64
                };
                cfg.rho * ((1.0 - cfg.alpha) * a[u] + cfg.alpha * m) + innov.sample(rng)
            })
            .collect();
        hist.pop();
        hist.insert(0, next);
    };
    // burn in the anomaly field
    for _ in 0..200 {
        step(&mut hist, &mut rng);
    }
    let spread: Vec<f64> = (0..n).map(|_| rng.gen_range(3.0..7.0)).collect();
    let mut series = vec![Vec::with_capacity(cfg.days); n];
    for t in 0..cfg.days {
        let season = (2.0 * PI * (t as f64 - 105.0) / 365.25).sin();
        for u in 0..n {
            let base = 24.0 - cfg.latitude_gradient * (stations[u].lat - 30.0);
            let tavg = base + cfg.seasonal_amplitude * season + hist[0][u] + obs.sample(&mut rng);
            let half = spread[u] + 0.5 * obs.sample(&mut rng).abs();
            series[u].push([tavg - half, tavg, tavg + half]);
        }
        step(&mut hist, &mut rng);
    }
    let ds = CleanDataset {
        stations,
        start: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
        series,
    };
    Ok((ds, graph))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_well_formed() {
        let cfg = PlantedConfig {
            stations: 12,
            days: 50,
            ..Default::default()
        };
        let (a, ga) = planted_dataset(&cfg).unwrap();
        let (b, gb) = planted_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        assert_eq!(a.num_days(), 50);
        assert_eq!(ga.num_nodes, 12);
        for s in &a.series {
            for v in s {
                assert!(v[0] <= v[1] && v[1] <= v[2]);
            }
        }
        let recs = a.to_records();
        assert!(recs.iter().all(|r| r.check().is_ok()));
    }

    #[test]
    fn neighbors_are_correlated() {
        let (ds, g) = planted_dataset(&PlantedConfig::default()).unwrap();
        // anomaly proxy: deviation from the all-station mean, which removes the shared season
        let day_mean: Vec<f64> = (0..ds.num_days())
            .map(|t| ds.series.iter().map(|s| s[t][1]).sum::<f64>() / ds.num_stations() as f64)
            .collect();
        let anomaly = |u: usize| -> Vec<f64> { ds.series[u].iter().zip(&day_mean).map(|(v, m)| v[1] - m).collect() };
        let corr = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
            let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        let n = ds.num_stations();
        let adjacent: std::collections::HashSet<(usize, usize)> = g.pairs().into_iter().collect();
        let (mut near, mut far) = (Vec::new(), Vec::new());
        for u in 0..n {
            for v in u + 1..n {
                let c = corr(&anomaly(u), &anomaly(v));
                if adjacent.contains(&(u, v)) {
                    near.push(c);
                } else {
                    far.push(c);
                }
            }
        }
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        assert!(mean(&near) > 0.0 && mean(&near) > mean(&far) + 0.1, "{} vs {}", mean(&near), mean(&far));
    }
}
