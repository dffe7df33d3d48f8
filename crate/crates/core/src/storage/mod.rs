//! Binary tensor files and JSON run configuration.

mod config;
mod dft;

pub use config::{load_config, NeighborCount, RunConfig};
pub use dft::{
    decode_header, decode_tensor, describe, encode_tensor, read_tensor, write_tensor, DftHeader,
    MAGIC, MAX_DIMS, VERSION,
};
