//! Experiment harness: phantoms, synthetic data, orchestration and export.

mod experiment;
pub mod io;
mod phantom;

pub use experiment::{
    noise_sweep, run_experiment, synthesize_measurement, ArmReport, ArmSummary, ExperimentConfig, ExperimentReport,
    Methods, NoiseConfig, NoiseDistribution, Setting, StartSpec, Summary, SweepEntry, SweepReport, Synthesis,
};
pub use phantom::{rasterize_phantom, Inclusion, PhantomSpec, Shape};
