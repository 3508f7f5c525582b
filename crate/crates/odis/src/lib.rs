//! File formats, labeling transports and stage orchestration for the `odis`
//! command-line tool. The numerical work lives in `odis-core`.

pub mod artifacts;
pub mod config;
pub mod formats;
pub mod http;
pub mod jsonl;
pub mod labeling;
pub mod report;
pub mod pipeline;
pub mod synth;
