//! Point cloud compression with implicit neural representations.
//!
//! A voxelized cloud is stored as two small coordinate networks: one predicts
//! voxel occupancy, the other predicts color. Their weights are quantized and
//! entropy coded into a self-contained `NIRP` container.

pub mod bitstream;
pub mod codec;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pointset;
pub mod spatial;
pub mod synthetic;
pub mod training;

/// Rounds to the nearest integer, ties away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Any failure of the end-to-end pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ply(#[from] pointset::PlyError),
    #[error(transparent)]
    Cloud(#[from] pointset::CloudError),
    #[error(transparent)]
    Partition(#[from] spatial::PartitionError),
    #[error(transparent)]
    Network(#[from] nn::NnError),
    #[error(transparent)]
    Training(#[from] training::TrainError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
    #[error(transparent)]
    Bitstream(#[from] bitstream::BitstreamError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("invalid options: {0}")]
    Options(String),
}

impl Error {
    /// Whether the failure stems from the input data rather than a bug or a bad setting.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Ply(_) | Error::Cloud(_) | Error::Bitstream(_) | Error::Codec(_) | Error::Metrics(_))
    }
}
