//! Uniform 1D interval and structured 2D right-triangle meshes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("domain extent must be positive, got {0}")]
    NonPositiveExtent(f64),
    #[error("target mesh size must be positive, got {0}")]
    NonPositiveH(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    fn bit(self) -> u8 {
        match self {
            Side::Left => 1,
            Side::Right => 2,
            Side::Bottom => 4,
            Side::Top => 8,
        }
    }
}

/// Set of boundary sides a vertex belongs to (corners carry two).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SideSet(u8);

impl SideSet {
    pub fn insert(&mut self, s: Side) {
        self.0 |= s.bit();
    }
    pub fn contains(self, s: Side) -> bool {
        self.0 & s.bit() != 0
    }
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl Domain {
    pub fn diameter(&self) -> f64 {
        match *self {
            Domain::Interval { a, b } => b - a,
            Domain::Rectangle { x0, x1, y0, y1 } => ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rectangle { .. } => 2,
        }
    }
}

/// Conforming mesh: segments of a uniform interval partition in 1D, a
/// structured right-triangle split of a uniform rectangle grid in 2D.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub dim: usize,
    pub vertices: Vec<[f64; 2]>,
    /// Vertex indices per cell; 1D cells use the first two slots.
    cells: Vec<[usize; 3]>,
    cell_measures: Vec<f64>,
    /// Boundary side membership per vertex; empty set for interior vertices.
    pub boundary: Vec<SideSet>,
    /// Max cell diameter.
    pub h: f64,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..self.dim + 1]
    }

    pub fn measure(&self, c: usize) -> f64 {
        self.cell_measures[c]
    }

    pub fn total_measure(&self) -> f64 {
        self.cell_measures.iter().sum()
    }

    pub fn centroid(&self, c: usize) -> [f64; 2] {
        let verts = self.cell(c);
        let k = verts.len() as f64;
        let mut x = [0.0, 0.0];
        for &v in verts {
            x[0] += self.vertices[v][0] / k;
            x[1] += self.vertices[v][1] / k;
        }
        x
    }

    /// Gradients of the P1 hat functions on cell `c` (constant per cell).
    pub fn p1_gradients(&self, c: usize) -> Vec<[f64; 2]> {
        let verts = self.cell(c);
        if self.dim == 1 {
            let h = self.vertices[verts[1]][0] - self.vertices[verts[0]][0];
            vec![[-1.0 / h, 0.0], [1.0 / h, 0.0]]
        } else {
            let [p0, p1, p2] =
                [self.vertices[verts[0]], self.vertices[verts[1]], self.vertices[verts[2]]];
            let two_a = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
            vec![
                [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
                [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
                [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
            ]
        }
    }

    /// Quadrature points and weights on cell `c`, exact for degree-2
    /// integrands (3-point Gauss in 1D, edge midpoints in 2D).
    pub fn quadrature(&self, c: usize) -> Vec<([f64; 2], f64)> {
        let verts = self.cell(c);
        let m = self.measure(c);
        if self.dim == 1 {
            let a = self.vertices[verts[0]][0];
            let b = self.vertices[verts[1]][0];
            let s = (0.6_f64).sqrt(); // sqrt(3/5)
            [(-s, 5.0 / 18.0), (0.0, 8.0 / 18.0), (s, 5.0 / 18.0)]
                .iter()
                .map(|&(t, w)| ([0.5 * (a + b) + 0.5 * (b - a) * t, 0.0], w * m))
                .collect()
        } else {
            let [p0, p1, p2] =
                [self.vertices[verts[0]], self.vertices[verts[1]], self.vertices[verts[2]]];
            let mid = |a: [f64; 2], b: [f64; 2]| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            vec![(mid(p0, p1), m / 3.0), (mid(p1, p2), m / 3.0), (mid(p2, p0), m / 3.0)]
        }
    }

    /// P1 basis values at a point of cell `c` (barycentric coordinates).
    pub fn p1_values_at(&self, c: usize, x: [f64; 2]) -> Vec<f64> {
        let verts = self.cell(c);
        if self.dim == 1 {
            let a = self.vertices[verts[0]][0];
            let b = self.vertices[verts[1]][0];
            let t = (x[0] - a) / (b - a);
            vec![1.0 - t, t]
        } else {
            let grads = self.p1_gradients(c);
            (0..3)
                .map(|k| {
                    let p = self.vertices[verts[k]];
                    1.0 + grads[k][0] * (x[0] - p[0]) + grads[k][1] * (x[1] - p[1])
                })
                .collect()
        }
    }
}

/// Builds a uniform mesh with grid spacing at most `h_target`.
pub fn build_mesh(domain: Domain, h_target: f64) -> Result<Mesh, MeshError> {
    if h_target <= 0.0 {
        return Err(MeshError::NonPositiveH(h_target));
    }
    match domain {
        Domain::Interval { a, b } => {
            if b - a <= 0.0 {
                return Err(MeshError::NonPositiveExtent(b - a));
            }
            let n = ((b - a) / h_target).ceil().max(1.0) as usize;
            let h = (b - a) / n as f64;
            let vertices: Vec<[f64; 2]> = (0..=n).map(|i| [a + i as f64 * h, 0.0]).collect();
            let cells: Vec<[usize; 3]> = (0..n).map(|i| [i, i + 1, 0]).collect();
            let mut boundary = vec![SideSet::default(); n + 1];
            boundary[0].insert(Side::Left);
            boundary[n].insert(Side::Right);
            Ok(Mesh {
                dim: 1,
                vertices,
                cells,
                cell_measures: vec![h; n],
                boundary,
                h,
            })
        }
        Domain::Rectangle { x0, x1, y0, y1 } => {
            if x1 - x0 <= 0.0 {
                return Err(MeshError::NonPositiveExtent(x1 - x0));
            }
            if y1 - y0 <= 0.0 {
                return Err(MeshError::NonPositiveExtent(y1 - y0));
            }
            let nx = ((x1 - x0) / h_target).ceil().max(1.0) as usize;
            let ny = ((y1 - y0) / h_target).ceil().max(1.0) as usize;
            let hx = (x1 - x0) / nx as f64;
            let hy = (y1 - y0) / ny as f64;
            let idx = |i: usize, j: usize| j * (nx + 1) + i;
            let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
            for j in 0..=ny {
                for i in 0..=nx {
                    vertices.push([x0 + i as f64 * hx, y0 + j as f64 * hy]);
                }
            }
            let mut cells = Vec::with_capacity(2 * nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    let (v00, v10, v01, v11) =
                        (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                    cells.push([v00, v10, v11]);
                    cells.push([v00, v11, v01]);
                }
            }
            let mut boundary = vec![SideSet::default(); vertices.len()];
            for j in 0..=ny {
                boundary[idx(0, j)].insert(Side::Left);
                boundary[idx(nx, j)].insert(Side::Right);
            }
            for i in 0..=nx {
                boundary[idx(i, 0)].insert(Side::Bottom);
                boundary[idx(i, ny)].insert(Side::Top);
            }
            let area = 0.5 * hx * hy;
            let n_cells = cells.len();
            Ok(Mesh {
                dim: 2,
                vertices,
                cells,
                cell_measures: vec![area; n_cells],
                boundary,
                h: (hx * hx + hy * hy).sqrt(),
            })
        }
    }
}
