//! Metadata ingestion, preprocessing, balanced splits and the batch stream.

pub mod image;
pub mod metadata;
pub mod splits;
pub mod stats;
pub mod stream;
pub mod tree;

pub use self::image::{
    crop, decode_png, encode_gray_png, encode_png, load_png, preprocess_file, preprocess_image, resize_bilinear,
    save_png, RgbImage, PREPROCESS_SIZE,
};
pub use metadata::{
    parse_metadata, parse_metadata_str, write_metadata, write_rejections, BBox, ParsedMetadata, Rejection,
    SampleRecord, Split, CLASS_NAMES, METADATA_COLUMNS,
};
pub use splits::{build_balanced_splits, SplitPlan};
pub use stats::{age_bucket, dataset_stats, sex_key, write_stats_csv, StatsRow, AGE_BUCKETS, STATS_HEADER};
pub use stream::{load_image_tensor, Batch, BatchStream, EpochBatches, StreamConfig};
pub use tree::scan_split;
