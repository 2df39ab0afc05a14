use crate::error::{invalid, Result};
use crate::fem::{ComponentSystem, Rect};
use crate::mesh::FeFunction;
use crate::sparse::CsrMatrix;

/// Noisy data `u_delta` with known noise level `delta`, measured either on
/// the whole domain or on a closed rectangle.
///
/// In the partial setting the measurement operator selects the interior
/// nodes inside the rectangle; misfits are measured in the exact L2 norm over
/// the triangles contained in it, so `||E v|| <= ||v||` for every `v`.
#[derive(Clone, Debug)]
pub struct Measurement {
    u_delta: FeFunction,
    delta: f64,
    region: Option<Rect>,
    mask: Option<Vec<usize>>,
    metric: CsrMatrix,
}

impl Measurement {
    /// Full-domain data. `u_delta` holds all interior nodal values.
    pub fn full(cs: &ComponentSystem, u_delta: FeFunction, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if u_delta.len() != cs.num_dofs() {
            return invalid(format!("measurement has length {}, expected {}", u_delta.len(), cs.num_dofs()));
        }
        Ok(Self { u_delta, delta, region: None, mask: None, metric: cs.mass().clone() })
    }

    /// Data on `region` only. `values` are the nodal values on the masked
    /// nodes, in increasing dof order (see [`Measurement::mask_for`]).
    pub fn partial(cs: &ComponentSystem, region: Rect, values: &[f64], delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let mask = Self::mask_for(cs, &region);
        if mask.is_empty() {
            return invalid("measurement region contains no interior node");
        }
        if values.len() != mask.len() {
            return invalid(format!("partial measurement has {} values, mask selects {}", values.len(), mask.len()));
        }
        let metric = cs.region_mass(&region);
        if metric.nnz() == 0 {
            return invalid("measurement region contains no triangle");
        }
        let mut u_delta = vec![0.0; cs.num_dofs()];
        for (&dof, &v) in mask.iter().zip(values) {
            u_delta[dof] = v;
        }
        Ok(Self { u_delta: FeFunction::new(u_delta), delta, region: Some(region), mask: Some(mask), metric })
    }

    /// Interior dofs whose node lies in the closed rectangle.
    pub fn mask_for(cs: &ComponentSystem, region: &Rect) -> Vec<usize> {
        let grid = cs.grid();
        (0..grid.num_dofs())
            .filter(|&d| {
                let (x, y) = grid.dof_coords(d);
                region.contains_closed(x, y)
            })
            .collect()
    }

    /// Data extended by zero outside the measured region.
    pub fn u_delta(&self) -> &FeFunction {
        &self.u_delta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn region(&self) -> Option<&Rect> {
        self.region.as_ref()
    }

    pub fn mask(&self) -> Option<&[usize]> {
        self.mask.as_deref()
    }

    pub fn is_partial(&self) -> bool {
        self.mask.is_some()
    }

    /// Gram matrix `W` of the data inner product on full-length vectors.
    pub fn metric(&self) -> &CsrMatrix {
        &self.metric
    }

    /// `||v||_W`.
    pub fn norm(&self, v: &[f64]) -> f64 {
        self.metric.bilinear(v, v).max(0.0).sqrt()
    }

    /// `||v - u_delta||_W`.
    pub fn misfit(&self, v: &[f64]) -> f64 {
        let d: Vec<f64> = v.iter().zip(self.u_delta.iter()).map(|(a, b)| a - b).collect();
        self.norm(&d)
    }

    /// Coordinate selection onto the masked nodes; the identity without mask.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        match &self.mask {
            Some(mask) => mask.iter().map(|&d| v[d]).collect(),
            None => v.to_vec(),
        }
    }

    /// Extension by zero; the Euclidean adjoint of [`Measurement::restrict`].
    pub fn extend(&self, w: &[f64]) -> Vec<f64> {
        match &self.mask {
            Some(mask) => {
                let mut out = vec![0.0; self.u_delta.len()];
                for (&d, &v) in mask.iter().zip(w) {
                    out[d] = v;
                }
                out
            }
            None => w.to_vec(),
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return invalid(format!("noise level must be finite and nonnegative, got {delta}"));
    }
    Ok(())
}
