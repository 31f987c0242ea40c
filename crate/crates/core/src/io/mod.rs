//! On-disk formats: NPY embeddings, CSV label tables, JSON manifests and the
//! model container.

pub mod labels;
pub mod manifest;
pub mod model;
pub mod npy;

pub use labels::load_labels;
pub use manifest::{Dataset, DatasetManifest};
pub use model::{check_input_dim, load_model, save_model};
pub use npy::{load_embeddings, EmbeddingMatrix};
