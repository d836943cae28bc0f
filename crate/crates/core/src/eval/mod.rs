//! Out-of-sample bounds, hedging-error risk metrics, delta ratios and
//! switching-region exports.

mod bounds;
mod delta;
mod hedge;
mod reference;
mod regions;

pub use bounds::{bounds_on_batch, estimate_bounds, upper_bound, write_bounds_csv, BoundReport, EvalOptions, RegimeBound};
pub use delta::{delta_ratio, DeltaRatios};
pub use hedge::{
    hedge_report_from_samples, hedging_errors, risk_metrics, write_hedge_csv, HedgeReport, HedgeSign, Histogram,
    RiskMetrics, HEDGE_DEFINITION, MIN_RISK_SAMPLES,
};
pub use reference::{grade, reference_row, Grade, ReferenceRow, Tolerance};
pub use regions::{export_regions, write_regions_csv, RegionExport, RegionRow};
