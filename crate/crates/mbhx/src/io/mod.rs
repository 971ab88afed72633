//! Bit-exact persistence: image codecs, raw tensor files, checkpoints,
//! and dataset manifests.
//!
//! Every binary format is self-describing (magic + version) and rejects
//! foreign files instead of misreading them. All multi-byte integers are
//! little-endian.

mod checkpoint;
mod manifest;
mod png;
mod tensor_file;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint, CHECKPOINT_VERSION};
pub use manifest::{Manifest, SplitRecord, MANIFEST_VERSION};
pub use png::{read_image, write_image};
pub use tensor_file::{read_tensor, write_tensor, Dtype};
