//! Query-aware token compression for video features.
//!
//! Frames arrive as patch-feature maps `[T × N × d]`. Temporal density-peaks
//! clustering groups them into `L` event prototypes, a small scorer ranks the
//! prototypes and a Top-K selector (hard at inference, perturbed and
//! differentiable in training) keeps `K` of them. Selected frames are encoded
//! at fine resolution; every frame also gets a two-token coarse summary
//! guided by the text query.
//!
//! ```no_run
//! use vidtok::{compress, read_tensor, Mode, ModelParams, RunConfig};
//!
//! let cfg = RunConfig::default();
//! let frames = read_tensor("frames.dft")?;
//! let text = read_tensor("text.dft")?;
//! let params = ModelParams::init(&cfg)?;
//! let (tokens, report) = compress(&frames, &text, &params, &cfg, Mode::Infer)?;
//! println!("{} tokens", tokens.budget.total_tokens);
//! # Ok::<(), vidtok::Error>(())
//! ```

pub mod dpc;
pub mod encoding;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod redundancy;
pub mod rng;
pub mod selection;
pub mod storage;
pub mod synth;
pub mod train;

pub use encoding::{budget_report, BudgetReport, TextEmbedding, TokenSequence};
pub use error::{Error, Result};
pub use numerics::{DType, GradReport, Tensor};
pub use pipeline::{compress, CompressReport, ModelParams};
pub use redundancy::{profile_corpus, RedundancyReport, Thresholds};
pub use selection::Mode;
pub use storage::{load_config, read_tensor, write_tensor, NeighborCount, RunConfig};
pub use synth::{generate_synthetic, SyntheticSpec};
pub use train::{gradcheck, train_demo, GradcheckSetup, TrainCurve};
