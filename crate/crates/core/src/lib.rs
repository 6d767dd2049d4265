//! Gap filling for univariate time series.
//!
//! Gaps are restored by a forward forecast from the pre-history and a
//! backward forecast from the reversed post-history, blended position by
//! position. The forecasting model can be a single ridge regression or a
//! pipeline found by evolutionary search. Classic interpolation fillers and
//! a benchmark harness are included for comparison.

pub mod baseline;
pub mod bench;
pub mod bidir;
pub mod error;
pub mod evo;
pub mod lag;
mod linalg;
pub mod parallel;
pub mod pipeline;
pub mod series;
pub mod synth;

pub use bidir::{fill_series, CombinerMode, Direction, FillOptions, GapFillPolicy, ModelSource};
pub use error::{GapFillError, Result, StructureError};
pub use evo::{run_search, EvoConfig, SearchResult};
pub use pipeline::{Operation, Pipeline, PipelineNode};
pub use series::{GapSegment, TimeSeries};
