//! Structured triangulation of the unit square and the piecewise-constant
//! parameter partition laid over it.
//!
//! Nodes are indexed by `(i, j)` with `x = i h`, `y = j h`, `0 <= i, j <= n + 1`.
//! Only the `n x n` interior nodes carry degrees of freedom; the Dirichlet
//! data on the boundary are identically zero. Interior node `(i, j)` maps to
//! the dof `(i - 1) + (j - 1) n`.
//!
//! Every mesh square is split along its lower-left to upper-right diagonal.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform grid with `n` interior nodes per side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

/// One P1 triangle. Vertices are `(i, j)` node indices, counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triangle {
    pub vertices: [(usize, usize); 3],
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return invalid(format!("grid needs at least 2 interior nodes per side, got n = {n}"));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh width `1 / (n + 1)`.
    pub fn h(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// Mesh squares per side, `n + 1`.
    pub fn cells_per_side(&self) -> usize {
        self.n + 1
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n + 2
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_side() * self.nodes_per_side()
    }

    /// Number of interior degrees of freedom, `n^2`.
    pub fn num_dofs(&self) -> usize {
        self.n * self.n
    }

    pub fn num_elements(&self) -> usize {
        2 * self.cells_per_side() * self.cells_per_side()
    }

    /// Dof index of node `(i, j)`, or `None` for boundary nodes.
    pub fn dof(&self, i: usize, j: usize) -> Option<usize> {
        if (1..=self.n).contains(&i) && (1..=self.n).contains(&j) {
            Some((i - 1) + (j - 1) * self.n)
        } else {
            None
        }
    }

    /// Node indices `(i, j)` of a dof.
    pub fn dof_node(&self, dof: usize) -> (usize, usize) {
        (dof % self.n + 1, dof / self.n + 1)
    }

    pub fn node_coords(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        (i as f64 * h, j as f64 * h)
    }

    pub fn dof_coords(&self, dof: usize) -> (f64, f64) {
        let (i, j) = self.dof_node(dof);
        self.node_coords(i, j)
    }

    /// All triangles, two per mesh square, square `(a, b)` in row-major order.
    pub fn triangles(&self) -> impl Iterator<Item = Triangle> + '_ {
        let cells = self.cells_per_side();
        (0..cells).flat_map(move |b| {
            (0..cells).flat_map(move |a| {
                [
                    Triangle { vertices: [(a, b), (a + 1, b), (a + 1, b + 1)] },
                    Triangle { vertices: [(a, b), (a + 1, b + 1), (a, b + 1)] },
                ]
            })
        })
    }

    pub fn triangle_coords(&self, t: &Triangle) -> [(f64, f64); 3] {
        t.vertices.map(|(i, j)| self.node_coords(i, j))
    }

    pub fn barycenter(&self, t: &Triangle) -> (f64, f64) {
        let c = self.triangle_coords(t);
        ((c[0].0 + c[1].0 + c[2].0) / 3.0, (c[0].1 + c[1].1 + c[2].1) / 3.0)
    }
}

/// Uniform `q x q` partition of the unit square into parameter subdomains.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    grid: Grid,
    q: usize,
    element_subdomain: Vec<usize>,
}

impl Partition {
    pub fn new(grid: Grid, q: usize) -> Result<Self> {
        if q == 0 {
            return invalid("partition needs q >= 1");
        }
        if !grid.cells_per_side().is_multiple_of(q) {
            return invalid(format!(
                "n + 1 must be divisible by q so subdomain edges align with the mesh (n = {}, q = {q})",
                grid.n()
            ));
        }
        let element_subdomain = grid
            .triangles()
            .map(|t| {
                let (x, y) = grid.barycenter(&t);
                subdomain_of_point(q, x, y)
            })
            .collect();
        Ok(Self { grid, q, element_subdomain })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of subdomains, `q^2`.
    pub fn p(&self) -> usize {
        self.q * self.q
    }

    /// Subdomain of each triangle, in the order of [`Grid::triangles`].
    pub fn element_subdomains(&self) -> &[usize] {
        &self.element_subdomain
    }

    /// Area of each subdomain, `1 / p`.
    pub fn subdomain_area(&self) -> f64 {
        1.0 / self.p() as f64
    }

    /// Subdomain `k = kx + ky q` covers `[kx/q, (kx+1)/q] x [ky/q, (ky+1)/q]`.
    pub fn subdomain_center(&self, k: usize) -> (f64, f64) {
        let q = self.q as f64;
        let (kx, ky) = (k % self.q, k / self.q);
        ((kx as f64 + 0.5) / q, (ky as f64 + 0.5) / q)
    }

    /// Exact L2 norm of the piecewise-constant function with coefficients `v`.
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() * self.subdomain_area()).sqrt()
    }

    /// Exact L2 distance between two piecewise-constant functions.
    pub fn l2_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (sq * self.subdomain_area()).sqrt()
    }
}

fn subdomain_of_point(q: usize, x: f64, y: f64) -> usize {
    let cell = |t: f64| ((t * q as f64).floor() as usize).min(q - 1);
    cell(x) + cell(y) * q
}

/// Coefficients of a piecewise-constant conductivity, all strictly positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterField(Vec<f64>);

impl TryFrom<Vec<f64>> for ParameterField {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParameterField> for Vec<f64> {
    fn from(field: ParameterField) -> Self {
        field.0
    }
}

impl ParameterField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("parameter field is empty");
        }
        if let Some((index, &min)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::DomainViolation { index, min });
        }
        Ok(Self(values))
    }

    pub fn constant(p: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Coercivity constant with respect to the L2 norm on the unit square.
    pub fn coercivity(&self) -> f64 {
        2.0 * self.min()
    }

    /// Continuity constant.
    pub fn continuity(&self) -> f64 {
        self.max()
    }
}

impl Deref for ParameterField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Nodal coefficients of a P1 function on the interior nodes.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeFunction(Vec<f64>);

impl FeFunction {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self(coeffs)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for FeFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for FeFunction {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}
