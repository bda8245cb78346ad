//! Graphical RNN models.
//!
//! A recurrent cell sits on every node of a multi-relation interaction graph.
//! Nodes in the same equivalence class share parameters, and at every step a
//! node's input is its own data followed by permutation-invariant summaries of
//! its neighbors' hidden states, one summary per relation. The `inroll`
//! setting repeats each observed step several times so information can travel
//! several hops per observation.
//!
//! Module map:
//!
//! * [`ndmath`]: tensors and reverse-mode differentiation
//! * [`cells`]: LSTM and iRNN cells, parameter checkpoints
//! * [`scenario`]: graphs, classes and time series
//! * [`summaries`]: sum / mean / max set functions
//! * [`engine`]: the forward pass
//! * [`training`]: truncated BPTT with SGD or Adagrad
//! * [`synth`]: ARMA-driven toy tasks with known optimal losses
//! * [`weather`]: station data ingestion, cleaning, Delaunay graph, baselines and experiments

pub mod cells;
pub mod engine;
mod error;
pub mod ndmath;
pub mod scenario;
pub mod summaries;
pub mod synth;
pub mod training;
pub mod weather;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use cells::{CellKind, CellParams, CellState};
pub use engine::{carry_forward, forward, ForwardSpec, GrnnModel, ModelConfig, RunOutput};
pub use error::{GrnnError, Result};
pub use ndmath::{Parameter, Parameterized, Tape, Tensor, Var};
pub use scenario::{NeighborIndex, Scenario, ScenarioBuilder};
pub use summaries::{SummaryFn, SummarySpec};
pub use training::{train, OptimizerKind, TrainConfig, TrainReport};
