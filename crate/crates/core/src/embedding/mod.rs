//! Per-variant embeddings for the three modalities and their on-disk store.
//!
//! * structure: 83 geometric features at the mutation site (20 neighbour
//!   distances, 20 unit directions, unit direction to the centroid) through a
//!   fixed 83→512 random projection;
//! * dynamics: 42 GNM features (B-factor, 20 mode shapes, 20 correlation
//!   terms, stiffness) through a fixed 42→256 random projection;
//! * sequence: masked-context vector plus the mutant-minus-wild-type token
//!   embedding delta, 1280-d.

mod features;
mod projection;
mod sequence;
mod store;

pub use features::{dynamics_features, structure_features, structure_features_at, SiteGeometry};
pub use projection::{RandomProjection, DYNAMICS_SEED, STRUCTURE_SEED};
pub use sequence::{compose_sequence_embedding, mock_sequence_encoder, MockEncoder, SequenceContext};
pub use store::{
    decode_store, encode_store, read_store, record_size, write_store, EmbeddingStore, Modality, StoreEntry,
    HEADER_SIZE, STORE_MAGIC, STORE_VERSION,
};

pub const SEQ_DIM: usize = 1280;
pub const STR_DIM: usize = 512;
pub const DYN_DIM: usize = 256;
pub const NEIGHBORS: usize = 20;
pub const STR_FEATURES: usize = 4 * NEIGHBORS + 3;
pub const DYN_FEATURES: usize = 2 * crate::gnm::DEFAULT_MODES + 2;
