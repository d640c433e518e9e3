//! Accuracy metrics, string-stability spectra and surrogate safety measures.

mod metrics;
mod safety;
mod stability;

pub use metrics::{mape, rmse, HorizonAccumulator, HorizonRow, MAPE_THRESHOLD};
pub use safety::{
    divergences, histogram_divergences, pet_edges, pet_series, safety_distributions, ssdd, ssdd_edges,
    ssdd_series, uniform_edges, Divergences, Histogram, SafetyDistributions, DECEL, REACTION_TIME, SMOOTHING,
};
pub use stability::{
    default_grid, head_to_tail_gain, log_grid, stability_margin, string_stable, transfer_function_magnitude,
    StabilitySpectrum, GRID_HI, GRID_LO, GRID_POINTS,
};
