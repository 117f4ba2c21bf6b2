//! File formats: measurement CSVs, ensemble checkpoints and plotting exports.

mod canonical;
mod checkpoint;
mod export;
mod measurements;

pub use checkpoint::{
    format_checkpoint, parse_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
    CheckpointMember, ParameterLayout, SlotLayout, TrainingMetadata, CHECKPOINT_VERSION,
};
pub use export::{
    config_digest, export_fields, export_train_records, export_trajectory, field_csv,
    train_records_csv, trajectory_csv, write_manifest, ExportManifest, FieldSnapshot, ManifestFile,
    FIELD_HEADER, TRAJECTORY_HEADER,
};
pub use measurements::{
    format_measurements, parse_measurements, read_measurements, write_measurements, Dataset,
    GeometryDescriptor, MeasurementRecord, ObservableKind, Run, MEASUREMENT_HEADER,
};
