//! Spatial substrate: meshes, P0/P1 fields, assembly, and the SPD solve.

pub mod assemble;
pub mod field;
pub mod mesh;
pub mod sparse;

pub use assemble::{assemble_mass_p1, assemble_stiffness_p1, AssembleError, MixedMass, Weight};
pub use field::{
    grad_l2_norm_sq_p1, l2_dist_sq_p0_fn, l2_dist_sq_p0_p1, l2_dist_sq_p1_fn, l2_norm_sq_p0,
    l2_norm_sq_p1, p0_to_vertex_average, FieldError, FieldP0, FieldP1, VField,
};
pub use mesh::{build_mesh, Domain, Mesh, MeshError, Side, SideSet};
pub use sparse::{solve_spd, CooBuilder, Csr, SolveError, SparseSpd};

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BcError {
    #[error("the density variable only admits DirichletZero or NeumannZero conditions")]
    InvalidDensityBc,
}

/// Boundary condition on one boundary segment for one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BcKind {
    DirichletZero,
    DirichletValue(f64),
    NeumannZero,
}

/// Per-side condition map; 1D meshes only use `left` and `right`.
#[derive(Clone, Copy, Debug)]
pub struct SideSpec {
    pub left: BcKind,
    pub right: BcKind,
    pub bottom: BcKind,
    pub top: BcKind,
}

impl SideSpec {
    pub fn uniform(kind: BcKind) -> Self {
        SideSpec { left: kind, right: kind, bottom: kind, top: kind }
    }

    pub fn get(&self, side: Side) -> BcKind {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }
}

/// Boundary description for the density u and the substrate v.
///
/// u admits only homogeneous conditions; v may carry an inhomogeneous
/// Dirichlet value (imposed by lifting).
#[derive(Clone, Copy, Debug)]
pub struct BoundarySpec {
    pub u: SideSpec,
    pub v: SideSpec,
}

impl BoundarySpec {
    pub fn validate(&self) -> Result<(), BcError> {
        for side in Side::ALL {
            match self.u.get(side) {
                BcKind::DirichletZero | BcKind::NeumannZero => {}
                BcKind::DirichletValue(_) => return Err(BcError::InvalidDensityBc),
            }
        }
        Ok(())
    }

    /// Dirichlet mask over vertices for the given side map. A corner takes
    /// the first Dirichlet side in (left, right, bottom, top) order.
    pub fn mask(spec: &SideSpec, mesh: &Mesh) -> Vec<Option<f64>> {
        mesh.boundary
            .iter()
            .map(|tags| {
                for side in Side::ALL {
                    if tags.contains(side) {
                        match spec.get(side) {
                            BcKind::DirichletZero => return Some(0.0),
                            BcKind::DirichletValue(g) => return Some(g),
                            BcKind::NeumannZero => {}
                        }
                    }
                }
                None
            })
            .collect()
    }
}

/// Mesh, boundary masks, and the operators that stay fixed over a run.
pub struct FeProblem {
    pub mesh: Arc<Mesh>,
    pub bc: BoundarySpec,
    /// Unit-weight P1 stiffness over all vertices.
    pub stiffness: Csr,
    /// Consistent P1 mass over all vertices.
    pub mass: Csr,
    /// Dirichlet mask for w = Φ(u) (zero where u is Dirichlet).
    pub w_mask: Vec<Option<f64>>,
    /// Dirichlet mask for the substrate v.
    pub v_mask: Vec<Option<f64>>,
}

impl FeProblem {
    pub fn new(mesh: Arc<Mesh>, bc: BoundarySpec) -> Result<Self, BcError> {
        bc.validate()?;
        let stiffness = assemble_stiffness_p1(&mesh, Weight::Constant(1.0))
            .expect("unit weight is positive");
        let mass = assemble_mass_p1(&mesh);
        let w_mask = BoundarySpec::mask(&bc.u, &mesh);
        let v_mask = BoundarySpec::mask(&bc.v, &mesh);
        Ok(FeProblem { mesh, bc, stiffness, mass, w_mask, v_mask })
    }
}
