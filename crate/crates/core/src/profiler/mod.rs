//! Analytical parameter and MAC counting, the instrumented oracle, the
//! efficiency indicators and the width calibration search.

pub mod calibrate;
pub mod cost;
pub mod efficiency;
pub mod reference;
pub mod trace;

pub use calibrate::{calibrate, Calibration, CalibrationGrid, CostTarget};
pub use cost::{
    compare_macs, count_backbone, count_chain_flops, count_chain_flops_oracle, count_flops, count_flops_oracle,
    count_params, CostEntry, CostReport, GflopsConvention,
};
pub use efficiency::{
    efficiency_metrics, load_entries, parse_entries, EfficiencyEntry, EfficiencyReport, EfficiencyRow,
};
pub use reference::resnet50;
pub use trace::{LayerKind, LayerRecord, Tracer};
