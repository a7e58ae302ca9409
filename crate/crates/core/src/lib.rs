//! Service-node discovery from unidirectional flow records with Buddy Bloom
//! Filters over round-robin jumping windows.
//!
//! The building blocks, bottom up:
//!
//! - [`hash`]: the fixed `sax/sdbm/bernstein/elf/fnv` hash family.
//! - [`bloom`]: classical Bloom filter, sizing and false-positive formulas.
//! - [`buddy`]: the selecting/remembering filter pair.
//! - [`rbbf`]: `M` buddy filters over jumping windows plus a history summary.
//! - [`flow`]: flow keys, end-node tuples and the text interchange format.
//! - [`detection`]: the two-stage flow/node pipeline.
//! - [`persistence`]: summary records embedded in data-file headers.
//! - [`oracle`]: exact hash-table detectors and approximate-vs-exact runs.
//! - [`synth`]: labelled synthetic flow streams.

pub mod bloom;
pub mod detection;
pub mod buddy;
pub mod error;
pub mod flow;
pub mod hash;
pub mod oracle;
pub mod persistence;
pub mod rbbf;
pub mod synth;

pub use bloom::{bf_union, fp_rate_classic, optimal_params, BloomFilter, Sizing};
pub use buddy::{bbf_fp_bound, BuddyBloomFilter, ObserveOutcome};
pub use error::{Error, Result};
pub use flow::{EndNodeTuple, FlowKey, FlowRecord};
pub use hash::{hash_positions, HashAlgorithm, HashFamily};
pub use detection::{Clocks, Pipeline, PipelineConfig, ServiceNodeEvent, WindowReport};
pub use oracle::{compare_runs, ComparisonReport, ExactPipeline, ExactTable};
pub use rbbf::{rbbf_fp_bound, rebuild_summary, RbbfOutcome, RbbfWindowSet};
