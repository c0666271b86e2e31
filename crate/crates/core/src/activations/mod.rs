// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation sources: synthetic superposition data, binary files and the
//! shuffle buffer.

mod batch;
mod buffer;
mod file;
mod source;
mod synthetic;

pub use batch::ActivationBatch;
pub use buffer::{ShuffleBuffer, DEFAULT_BUFFER_CAPACITY};
pub use file::{
    read_token_sidecar, write_activation_file, write_token_sidecar, ActivationFileReader,
    ActivationFileWriter, ActivationMeta, DType, ACTIVATION_MAGIC, ACTIVATION_VERSION,
};
pub use source::{collect_valid, ActivationSource, MemorySource};
pub use synthetic::{MagnitudeDist, SyntheticDictionary, SyntheticSource};
