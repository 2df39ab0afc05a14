//! Parameter-separable P1 assembly.
//!
//! The stiffness matrix of `b(u, v; sigma) = int sigma grad u . grad v` splits
//! as `B(sigma) = sum_k sigma_k B^k`, where `B^k` integrates only over the
//! triangles of subdomain `k`. The load is `f(v) = -int v`.

use crate::error::{invalid, Result};
use crate::mesh::{FeFunction, Grid, Partition, Triangle};
use crate::sparse::CsrMatrix;

/// One component matrix `B^k` plus the rows it touches.
#[derive(Clone, Debug)]
pub struct ComponentMatrix {
    matrix: CsrMatrix,
    support: Vec<usize>,
    /// Position of each stored value inside the unit-stiffness pattern.
    scatter: Vec<usize>,
}

impl ComponentMatrix {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Dofs whose rows are non-empty.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// `u^T B^k w`, touching only the support rows.
    pub fn bilinear(&self, u: &[f64], w: &[f64]) -> f64 {
        let (rp, ci, vals) = (self.matrix.row_ptr(), self.matrix.col_idx(), self.matrix.values());
        let mut total = 0.0;
        for &r in &self.support {
            let mut acc = 0.0;
            for idx in rp[r]..rp[r + 1] {
                acc += vals[idx] * w[ci[idx]];
            }
            total += u[r] * acc;
        }
        total
    }

    /// `out[r] += scale * (B^k u)[r]` over the support rows.
    pub fn add_product(&self, scale: f64, u: &[f64], out: &mut [f64]) {
        let (rp, ci, vals) = (self.matrix.row_ptr(), self.matrix.col_idx(), self.matrix.values());
        for &r in &self.support {
            let mut acc = 0.0;
            for idx in rp[r]..rp[r + 1] {
                acc += vals[idx] * u[ci[idx]];
            }
            out[r] += scale * acc;
        }
    }

    /// `B^k u` restricted to the support, as `(dof, value)` pairs.
    pub fn product_on_support(&self, u: &[f64]) -> Vec<(usize, f64)> {
        let (rp, ci, vals) = (self.matrix.row_ptr(), self.matrix.col_idx(), self.matrix.values());
        self.support
            .iter()
            .map(|&r| {
                let acc: f64 = (rp[r]..rp[r + 1]).map(|idx| vals[idx] * u[ci[idx]]).sum();
                (r, acc)
            })
            .collect()
    }
}

/// Component stiffness matrices, mass matrix and load vector on one grid.
#[derive(Clone, Debug)]
pub struct ComponentSystem {
    partition: Partition,
    components: Vec<ComponentMatrix>,
    mass: CsrMatrix,
    load: Vec<f64>,
    /// `sum_k B^k`, whose sparsity pattern every `B(sigma)` shares.
    unit_stiffness: CsrMatrix,
}

/// Exact P1 stiffness of one triangle, `(grad phi_i . grad phi_j) |T|`.
pub fn element_stiffness(coords: &[(f64, f64); 3]) -> [[f64; 3]; 3] {
    let [(x0, y0), (x1, y1), (x2, y2)] = *coords;
    let area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    let b = [y1 - y2, y2 - y0, y0 - y1];
    let c = [x2 - x1, x0 - x2, x1 - x0];
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (b[i] * b[j] + c[i] * c[j]) / (2.0 * area2);
        }
    }
    k
}

/// Exact P1 mass matrix of one triangle.
pub fn element_mass(coords: &[(f64, f64); 3]) -> [[f64; 3]; 3] {
    let area = triangle_area(coords);
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    m
}

pub fn triangle_area(coords: &[(f64, f64); 3]) -> f64 {
    let [(x0, y0), (x1, y1), (x2, y2)] = *coords;
    0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)).abs()
}

fn local_dofs(grid: &Grid, t: &Triangle) -> [Option<usize>; 3] {
    t.vertices.map(|(i, j)| grid.dof(i, j))
}

fn scatter_element(grid: &Grid, t: &Triangle, local: &[[f64; 3]; 3], out: &mut Vec<(usize, usize, f64)>) {
    let dofs = local_dofs(grid, t);
    for a in 0..3 {
        let Some(r) = dofs[a] else { continue };
        for b in 0..3 {
            let Some(c) = dofs[b] else { continue };
            out.push((r, c, local[a][b]));
        }
    }
}

impl ComponentSystem {
    /// Assembles `B^k`, the mass matrix and the load vector.
    pub fn assemble(partition: &Partition) -> Self {
        let grid = *partition.grid();
        let ndofs = grid.num_dofs();
        let p = partition.p();

        let mut comp_triplets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); p];
        let mut mass_triplets = Vec::with_capacity(9 * grid.num_elements());
        let mut load = vec![0.0; ndofs];

        for (t, &k) in grid.triangles().zip(partition.element_subdomains()) {
            let coords = grid.triangle_coords(&t);
            scatter_element(&grid, &t, &element_stiffness(&coords), &mut comp_triplets[k]);
            scatter_element(&grid, &t, &element_mass(&coords), &mut mass_triplets);
            let share = triangle_area(&coords) / 3.0;
            for d in local_dofs(&grid, &t).into_iter().flatten() {
                load[d] -= share;
            }
        }

        let all: Vec<(usize, usize, f64)> = comp_triplets.iter().flatten().copied().collect();
        let unit_stiffness = CsrMatrix::from_triplets(ndofs, all);

        let components = comp_triplets
            .into_iter()
            .map(|trip| {
                let matrix = CsrMatrix::from_triplets(ndofs, trip);
                let support = matrix.nonempty_rows();
                let mut scatter = Vec::with_capacity(matrix.nnz());
                for &r in &support {
                    for (c, _) in matrix.row(r) {
                        let lo = unit_stiffness.row_ptr()[r];
                        let hi = unit_stiffness.row_ptr()[r + 1];
                        let pos = unit_stiffness.col_idx()[lo..hi]
                            .binary_search(&c)
                            .expect("component entry outside unit pattern");
                        scatter.push(lo + pos);
                    }
                }
                ComponentMatrix { matrix, support, scatter }
            })
            .collect();

        Self {
            partition: partition.clone(),
            components,
            mass: CsrMatrix::from_triplets(ndofs, mass_triplets),
            load,
            unit_stiffness,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.partition.grid()
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn p(&self) -> usize {
        self.components.len()
    }

    pub fn num_dofs(&self) -> usize {
        self.load.len()
    }

    pub fn components(&self) -> &[ComponentMatrix] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &ComponentMatrix {
        &self.components[k]
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// `sum_k B^k`, the stiffness for unit conductivity.
    pub fn unit_stiffness(&self) -> &CsrMatrix {
        &self.unit_stiffness
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.p() {
            return invalid(format!("parameter length {} does not match {} subdomains", coeffs.len(), self.p()));
        }
        Ok(())
    }

    /// `B(sigma) = sum_k sigma_k B^k`. Coefficients need not be positive.
    pub fn assemble_stiffness(&self, sigma: &[f64]) -> Result<CsrMatrix> {
        let mut out = self.unit_stiffness.clone();
        self.assemble_stiffness_into(sigma, &mut out)?;
        Ok(out)
    }

    /// Refills a matrix with the unit-stiffness pattern in place.
    pub fn assemble_stiffness_into(&self, sigma: &[f64], out: &mut CsrMatrix) -> Result<()> {
        self.check_len(sigma)?;
        assert_eq!(out.nnz(), self.unit_stiffness.nnz(), "matrix does not share the stiffness pattern");
        let values = out.values_mut();
        values.iter_mut().for_each(|v| *v = 0.0);
        for (comp, &s) in self.components.iter().zip(sigma) {
            for (&pos, &v) in comp.scatter.iter().zip(comp.matrix.values()) {
                values[pos] += s * v;
            }
        }
        Ok(())
    }

    /// `sum_k kappa_k B^k u`.
    pub fn weighted_product(&self, kappa: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(kappa)?;
        let mut out = vec![0.0; self.num_dofs()];
        for (comp, &kk) in self.components.iter().zip(kappa) {
            if kk != 0.0 {
                comp.add_product(kk, u, &mut out);
            }
        }
        Ok(out)
    }

    /// The vector `(u^T B^k w)_k`.
    pub fn component_forms(&self, u: &[f64], w: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.bilinear(u, w)).collect()
    }

    /// L2 inner product `a^T M b` of two P1 functions.
    pub fn l2_inner(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.num_dofs() || b.len() != self.num_dofs() {
            return invalid(format!(
                "function lengths {} and {} do not match {} dofs",
                a.len(),
                b.len(),
                self.num_dofs()
            ));
        }
        Ok(self.mass.bilinear(a, b))
    }

    pub fn l2_norm(&self, a: &FeFunction) -> f64 {
        self.mass.bilinear(a, a).max(0.0).sqrt()
    }

    /// Mass matrix integrating only over triangles inside the closed
    /// rectangle `[x0, x1] x [y0, y1]`, i.e. the exact L2 product on that
    /// region for P1 functions when its edges follow the mesh.
    pub fn region_mass(&self, region: &Rect) -> CsrMatrix {
        let grid = *self.grid();
        let eps = 1e-12;
        let inside = |(x, y): (f64, f64)| {
            x >= region.x0 - eps && x <= region.x1 + eps && y >= region.y0 - eps && y <= region.y1 + eps
        };
        let mut triplets = Vec::new();
        for t in grid.triangles() {
            let coords = grid.triangle_coords(&t);
            if coords.iter().all(|c| inside(*c)) {
                scatter_element(&grid, &t, &element_mass(&coords), &mut triplets);
            }
        }
        CsrMatrix::from_triplets(grid.num_dofs(), triplets)
    }
}

/// Axis-aligned closed rectangle.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) {
            return invalid(format!("degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]"));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    pub fn contains_closed(&self, x: f64, y: f64) -> bool {
        let eps = 1e-12;
        x >= self.x0 - eps && x <= self.x1 + eps && y >= self.y0 - eps && y <= self.y1 + eps
    }
}
