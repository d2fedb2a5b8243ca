//! Configured sweeps behind the command-line front end.

pub mod config;
pub mod plot;
pub mod rate;
pub mod seed;
pub mod sweeps;

pub use config::ExperimentConfig;
pub use plot::{emit_plot, parse_descent_csv, render_svg};
pub use rate::{predicted_peaks_valleys, theoretical_rate};
pub use sweeps::{
    run_descent_sweep, run_experiment, run_ntk_check, run_rate_curve, run_smallball_sweep,
    run_spectral_sweep,
};
