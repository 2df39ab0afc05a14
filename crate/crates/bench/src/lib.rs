//! Shared fixtures for the criterion benchmarks.

use rbl_core::harness::{synthesize_measurement, ExperimentConfig};
use rbl_core::{ComponentSystem, ForwardCache, ParameterField, ReducedModel, Result};

/// Desk-scale problem: reference phantom, 1% noise, constant start.
pub struct Fixture {
    pub cs: ComponentSystem,
    pub u_delta: Vec<f64>,
    pub start: ParameterField,
}

impl Fixture {
    pub fn new(n: usize, q: usize) -> Result<Self> {
        let cfg = ExperimentConfig { n, q, ..Default::default() };
        let cs = ComponentSystem::assemble(&cfg.partition()?);
        let synth = synthesize_measurement(&cfg, &cs)?;
        let start = cfg.start(cs.p())?;
        Ok(Self { u_delta: synth.measurement.u_delta().to_vec(), start, cs })
    }

    /// Deterministic admissible parameters in `[2, 4]`.
    pub fn perturbed(&self, shift: usize) -> ParameterField {
        let p = self.cs.p();
        let values = (0..p).map(|k| 3.0 + (((k * 7 + shift * 13) % 11) as f64 / 10.0 - 0.5) * 2.0).collect();
        ParameterField::new(values).expect("values are positive")
    }

    /// Reduced model enriched with the primal and dual snapshots of
    /// `snapshots` perturbed parameters.
    pub fn reduced(&self, snapshots: usize) -> Result<ReducedModel<'_>> {
        let mut model = ReducedModel::new(&self.cs, self.cs.mass(), &self.u_delta)?;
        let mut cache = ForwardCache::new(&self.cs);
        for s in 0..snapshots {
            let sigma = self.perturbed(s);
            let u = cache.forward(&sigma)?;
            let l: Vec<f64> = self.u_delta.iter().zip(u.iter()).map(|(d, v)| d - v).collect();
            let z = cache.dual_solve(&sigma, &l)?;
            model.enrich_primal(&u)?;
            model.enrich_dual(&z)?;
        }
        Ok(model)
    }
}
