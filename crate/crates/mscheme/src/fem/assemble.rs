//! Operator assembly for the P0/P1 pair: stiffness, P1 mass, and the mixed
//! P0-to-P1-dual mass map. Element integrals are exact (P1 gradients are
//! cell constants, hat-against-indicator integrals are |c|/(dim+1)).

use super::field::FieldP0;
use super::mesh::Mesh;
use super::sparse::{CooBuilder, Csr};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("weight must be strictly positive, got {0} on cell {1}")]
    NonPositiveWeight(f64, usize),
    #[error("weight field length {got} does not match cell count {expect}")]
    WeightSizeMismatch { got: usize, expect: usize },
}

/// Cell-wise weight for the stiffness form.
pub enum Weight<'a> {
    Constant(f64),
    Cellwise(&'a FieldP0),
}

impl Weight<'_> {
    fn get(&self, c: usize) -> f64 {
        match self {
            Weight::Constant(w) => *w,
            Weight::Cellwise(f) => f.values[c],
        }
    }

    fn validate(&self, mesh: &Mesh) -> Result<(), AssembleError> {
        match self {
            Weight::Constant(w) => {
                if *w <= 0.0 {
                    return Err(AssembleError::NonPositiveWeight(*w, 0));
                }
            }
            Weight::Cellwise(f) => {
                if f.values.len() != mesh.n_cells() {
                    return Err(AssembleError::WeightSizeMismatch {
                        got: f.values.len(),
                        expect: mesh.n_cells(),
                    });
                }
                for (c, &w) in f.values.iter().enumerate() {
                    if w <= 0.0 {
                        return Err(AssembleError::NonPositiveWeight(w, c));
                    }
                }
            }
        }
        Ok(())
    }
}

/// K[j,k] = Σ_c weight_c ∫_c ∇φ_j · ∇φ_k, over all vertices (no boundary
/// elimination here).
pub fn assemble_stiffness_p1(mesh: &Mesh, weight: Weight) -> Result<Csr, AssembleError> {
    weight.validate(mesh)?;
    let mut coo = CooBuilder::new(mesh.n_vertices());
    for c in 0..mesh.n_cells() {
        let w = weight.get(c);
        let grads = mesh.p1_gradients(c);
        let verts = mesh.cell(c);
        let m = mesh.measure(c);
        for (a, &va) in verts.iter().enumerate() {
            for (b, &vb) in verts.iter().enumerate() {
                let k = w * m * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                coo.add(va, vb, k);
            }
        }
    }
    Ok(coo.build())
}

/// Consistent P1 mass matrix from the exact element formulas:
/// 1D (h/6)[[2,1],[1,2]]; 2D (A/12)[[2,1,1],[1,2,1],[1,1,2]].
pub fn assemble_mass_p1(mesh: &Mesh) -> Csr {
    let mut coo = CooBuilder::new(mesh.n_vertices());
    for c in 0..mesh.n_cells() {
        let verts = mesh.cell(c);
        let m = mesh.measure(c);
        let scale = match mesh.dim {
            1 => m / 6.0,
            _ => m / 12.0,
        };
        for (a, &va) in verts.iter().enumerate() {
            for (b, &vb) in verts.iter().enumerate() {
                coo.add(va, vb, scale * if a == b { 2.0 } else { 1.0 });
            }
        }
    }
    coo.build()
}

/// The rectangular map B: P0 → P1-dual with B[j,c] = coeff_c · |c|/(dim+1)
/// for each vertex j of cell c. Kept in factored per-cell form; the dense
/// sparsity is implicit in the mesh connectivity.
pub struct MixedMass {
    pub coeff: Vec<f64>,
}

impl MixedMass {
    pub fn new(coeff: &FieldP0) -> Self {
        MixedMass { coeff: coeff.values.clone() }
    }

    pub fn unit(mesh: &Mesh) -> Self {
        MixedMass { coeff: vec![1.0; mesh.n_cells()] }
    }

    /// (B x)_j = Σ_{c ∋ j} coeff_c · |c|/(dim+1) · x_c
    pub fn apply(&self, mesh: &Mesh, p0: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mesh.n_vertices()];
        for c in 0..mesh.n_cells() {
            let verts = mesh.cell(c);
            let w = self.coeff[c] * mesh.measure(c) / (mesh.dim + 1) as f64;
            for &v in verts {
                out[v] += w * p0[c];
            }
        }
        out
    }

    /// (Bᵀ y)_c = coeff_c · |c|/(dim+1) · Σ_{j ∈ c} y_j = coeff_c ∫_c y for P1 y.
    pub fn apply_transpose(&self, mesh: &Mesh, p1: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; mesh.n_cells()];
        for c in 0..mesh.n_cells() {
            let verts = mesh.cell(c);
            let w = self.coeff[c] * mesh.measure(c) / (mesh.dim + 1) as f64;
            out[c] = w * verts.iter().map(|&v| p1[v]).sum::<f64>();
        }
        out
    }
}
