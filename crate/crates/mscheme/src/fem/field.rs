//! Piecewise-constant (P0) and piecewise-linear (P1) fields with L² norms
//! and distances.

use super::mesh::Mesh;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field length {got} does not match mesh ({expect})")]
    SizeMismatch { got: usize, expect: usize },
}

/// One scalar per cell.
#[derive(Clone, Debug)]
pub struct FieldP0 {
    pub values: Vec<f64>,
}

impl FieldP0 {
    pub fn zeros(mesh: &Mesh) -> Self {
        FieldP0 { values: vec![0.0; mesh.n_cells()] }
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        FieldP0 { values: vec![c; mesh.n_cells()] }
    }

    /// Samples an analytic function at cell centroids.
    pub fn from_fn(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        FieldP0 { values: (0..mesh.n_cells()).map(|c| f(mesh.centroid(c))).collect() }
    }
}

/// One scalar per vertex.
#[derive(Clone, Debug)]
pub struct FieldP1 {
    pub values: Vec<f64>,
}

impl FieldP1 {
    pub fn zeros(mesh: &Mesh) -> Self {
        FieldP1 { values: vec![0.0; mesh.n_vertices()] }
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        FieldP1 { values: vec![c; mesh.n_vertices()] }
    }

    pub fn from_fn(mesh: &Mesh, f: impl Fn([f64; 2]) -> f64) -> Self {
        FieldP1 { values: mesh.vertices.iter().map(|&x| f(x)).collect() }
    }

    /// Interpolated value at a point of cell `c`.
    pub fn at(&self, mesh: &Mesh, c: usize, x: [f64; 2]) -> f64 {
        mesh.p1_values_at(c, x)
            .iter()
            .zip(mesh.cell(c))
            .map(|(phi, &v)| phi * self.values[v])
            .sum()
    }
}

/// Substrate field: P1 when the substrate diffuses (μ = 1), P0 otherwise.
#[derive(Clone, Debug)]
pub enum VField {
    P0(FieldP0),
    P1(FieldP1),
}

impl VField {
    /// Value at the centroid of cell `c` (mean of vertex values for P1).
    pub fn at_centroid(&self, mesh: &Mesh, c: usize) -> f64 {
        match self {
            VField::P0(f) => f.values[c],
            VField::P1(f) => {
                let verts = mesh.cell(c);
                verts.iter().map(|&v| f.values[v]).sum::<f64>() / verts.len() as f64
            }
        }
    }

    pub fn min_value(&self) -> f64 {
        let vals = match self {
            VField::P0(f) => &f.values,
            VField::P1(f) => &f.values,
        };
        vals.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_p0(mesh: &Mesh, f: &FieldP0) -> Result<(), FieldError> {
    if f.values.len() != mesh.n_cells() {
        return Err(FieldError::SizeMismatch { got: f.values.len(), expect: mesh.n_cells() });
    }
    Ok(())
}

fn check_p1(mesh: &Mesh, f: &FieldP1) -> Result<(), FieldError> {
    if f.values.len() != mesh.n_vertices() {
        return Err(FieldError::SizeMismatch { got: f.values.len(), expect: mesh.n_vertices() });
    }
    Ok(())
}

/// ∫ weight · f², exact for P0 (weight is an optional P0 field).
pub fn l2_norm_sq_p0(mesh: &Mesh, f: &FieldP0, weight: Option<&FieldP0>) -> Result<f64, FieldError> {
    check_p0(mesh, f)?;
    if let Some(w) = weight {
        check_p0(mesh, w)?;
    }
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        let w = weight.map_or(1.0, |w| w.values[c]);
        s += w * f.values[c] * f.values[c] * mesh.measure(c);
    }
    Ok(s)
}

/// ∫ f² for P1, by quadrature exact for quadratics.
pub fn l2_norm_sq_p1(mesh: &Mesh, f: &FieldP1) -> Result<f64, FieldError> {
    check_p1(mesh, f)?;
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        for (x, w) in mesh.quadrature(c) {
            let v = f.at(mesh, c, x);
            s += w * v * v;
        }
    }
    Ok(s)
}

/// ∫ |∇f|² for P1, exact (gradients are cell constants).
pub fn grad_l2_norm_sq_p1(mesh: &Mesh, f: &FieldP1) -> Result<f64, FieldError> {
    check_p1(mesh, f)?;
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        let grads = mesh.p1_gradients(c);
        let mut g = [0.0, 0.0];
        for (k, &v) in mesh.cell(c).iter().enumerate() {
            g[0] += grads[k][0] * f.values[v];
            g[1] += grads[k][1] * f.values[v];
        }
        s += mesh.measure(c) * (g[0] * g[0] + g[1] * g[1]);
    }
    Ok(s)
}

/// ∫ (f_P0 - f_P1)², by quadrature (exact for the quadratic integrand).
pub fn l2_dist_sq_p0_p1(mesh: &Mesh, f0: &FieldP0, f1: &FieldP1) -> Result<f64, FieldError> {
    check_p0(mesh, f0)?;
    check_p1(mesh, f1)?;
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        for (x, w) in mesh.quadrature(c) {
            let d = f0.values[c] - f1.at(mesh, c, x);
            s += w * d * d;
        }
    }
    Ok(s)
}

/// ∫ (f_P0 - g(x))² against an analytic function, by cell quadrature.
pub fn l2_dist_sq_p0_fn(
    mesh: &Mesh,
    f0: &FieldP0,
    g: impl Fn([f64; 2]) -> f64,
) -> Result<f64, FieldError> {
    check_p0(mesh, f0)?;
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        for (x, w) in mesh.quadrature(c) {
            let d = f0.values[c] - g(x);
            s += w * d * d;
        }
    }
    Ok(s)
}

/// ∫ (f_P1 - g(x))² against an analytic function, by cell quadrature.
pub fn l2_dist_sq_p1_fn(
    mesh: &Mesh,
    f1: &FieldP1,
    g: impl Fn([f64; 2]) -> f64,
) -> Result<f64, FieldError> {
    check_p1(mesh, f1)?;
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        for (x, w) in mesh.quadrature(c) {
            let d = f1.at(mesh, c, x) - g(x);
            s += w * d * d;
        }
    }
    Ok(s)
}

/// Vertex field obtained by averaging the adjacent cell values; used to seed
/// the w-iterate at the first time step.
pub fn p0_to_vertex_average(mesh: &Mesh, f: &FieldP0) -> FieldP1 {
    let mut sums = vec![0.0; mesh.n_vertices()];
    let mut counts = vec![0usize; mesh.n_vertices()];
    for c in 0..mesh.n_cells() {
        for &v in mesh.cell(c) {
            sums[v] += f.values[c];
            counts[v] += 1;
        }
    }
    FieldP1 {
        values: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::{build_mesh, Domain};

    #[test]
    fn p0_norm_of_one_is_domain_measure() {
        let m = build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.25).unwrap();
        let f = FieldP0::constant(&m, 1.0);
        assert!((l2_norm_sq_p0(&m, &f, None).unwrap() - 1.0).abs() < 1e-15);
        // weight 4 scales the norm (not squared norm) by 2
        let w = FieldP0::constant(&m, 4.0);
        assert!((l2_norm_sq_p0(&m, &f, Some(&w)).unwrap().sqrt() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn p1_hat_norm_on_two_cells() {
        let m = build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.5).unwrap();
        let hat = FieldP1 { values: vec![0.0, 1.0, 0.0] };
        // ∫₀¹ hat² = 2 · ∫₀^0.5 (2x)² dx = 1/3 (h/3 per element, two elements)
        assert!((l2_norm_sq_p1(&m, &hat).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        // slope ±2 on each half: ∫ |∇hat|² = 2 · (1/h)² · h = 4
        assert!((grad_l2_norm_sq_p1(&m, &hat).unwrap() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn mesh_mismatch_is_rejected() {
        let m = build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, 0.5).unwrap();
        let bad = FieldP0 { values: vec![1.0] };
        assert!(l2_norm_sq_p0(&m, &bad, None).is_err());
    }

    #[test]
    fn interpolant_refinement_is_second_order() {
        // ||I_h f - f||_L2 = O(h²) for smooth f
        let f = |x: [f64; 2]| (std::f64::consts::PI * x[0]).sin();
        let mut errs = Vec::new();
        for h in [0.1, 0.05, 0.025] {
            let m = build_mesh(Domain::Interval { a: 0.0, b: 1.0 }, h).unwrap();
            let interp = FieldP1::from_fn(&m, f);
            errs.push(l2_dist_sq_p1_fn(&m, &interp, f).unwrap().sqrt());
        }
        let rate = (errs[0] / errs[2]).log2() / 2.0;
        assert!(rate > 1.8 && rate < 2.2, "rate {rate}, errs {errs:?}");
    }
}
