//! On-disk data model: manifests, feature blobs, PGM maps and checkpoints.
//!
//! Readers are pure and may be called from many threads. Writers are
//! deterministic: the same value always yields the same bytes.

pub mod blob;
pub mod checkpoint;
pub mod manifest;
pub mod pgm;
pub mod types;

pub use blob::{decode_feature_blob, encode_feature_blob, read_feature_blob, write_feature_blob, FeatureStore};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, RankerCheckpoint, TrainMeta};
pub use manifest::{load_manifest, save_manifest, Dataset, ImageRecord, Manifest, ObjectProposal, Split};
pub use pgm::{decode_pgm, encode_pgm, read_map, read_mask, write_map};
pub use types::{BBox, SaliencyMap};
