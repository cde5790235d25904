//! Experiment harness: datasets, sweeps, curves and reports.

pub mod curves;
pub mod experiments;
pub mod presets;
pub mod shapes;
pub mod sweep;

pub use curves::{
    acr, acr_envelope, certified_accuracy_at, curve, envelope, summarize, Curve, CurvePoint,
    SweepSummary,
};
pub use experiments::{
    alpha_ablation, alpha_ablation_from, bench, recertify, soundness, AblationReport, BenchReport,
    SoundnessOptions, SoundnessReport,
};
pub use presets::{default_family, default_scales, parse_scales};
pub use shapes::{
    generate_shape, load_dataset, synthetic_dataset, write_dataset, ShapeFamily, ShapeSpec,
};
pub use sweep::{
    read_csv, run_sweep, write_csv, write_jsonl, ReportOptions, SweepRow, SweepSpec, SweepTable,
};
