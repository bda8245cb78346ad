//! Next-day temperature prediction on a weather station network.
//!
//! The pipeline ingests daily station records, cleans them onto a shared date
//! axis, links stations through a pruned Delaunay triangulation of their
//! projected positions, and compares gRNN models against steady-state and
//! linear baselines.

pub mod baselines;
pub mod clean;
pub mod delaunay;
pub mod experiment;
pub mod graph;
pub mod planted;
pub mod records;

pub use baselines::{linear_baseline, steady_state_mse, LinearFit};
pub use clean::{clean, BoundingBox, CleanConfig, CleanDataset, CleanReport, DropReason, StationMeta};
pub use delaunay::{triangle_edges, triangulate};
pub use experiment::{run_weather_experiment, Split, Standardizer, WeatherData, WeatherModelSpec, WeatherReport, WeatherSettings};
pub use planted::{planted_dataset, PlantedConfig};
pub use graph::{build_graph, prune_edges, StationGraph};
pub use records::{ingest, InputFormat, StationRecord};
