use crate::error::{Error, Result};

pub const X_MIN: f64 = -1.0;
pub const X_MAX: f64 = 1.0;
pub const Y_MIN: f64 = 0.0;
pub const Y_MAX: f64 = 1.0;
/// `|D|` for the rectangle `[-1, 1] x [0, 1]`.
pub const DOMAIN_AREA: f64 = (X_MAX - X_MIN) * (Y_MAX - Y_MIN);

const COORD_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundarySide {
    Left,
    Bottom,
    Right,
    Top,
}

/// A quadratic boundary edge: `nodes = [start, midpoint, end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub side: BoundarySide,
    pub nodes: [usize; 3],
    pub length: f64,
    pub midpoint: [f64; 2],
}

/// Structured P2 triangulation of `[-1, 1] x [0, 1]`.
///
/// Each of the `nx * ny` quads is split by its bottom-left to top-right
/// diagonal. Quads are numbered row-major from `(-1, 0)` with x fastest;
/// quad `q` owns triangles `2q` (below the diagonal) and `2q + 1`.
/// Triangle connectivity is `[v0, v1, v2, m01, m12, m20]`, counter-clockwise.
#[derive(Clone, Debug)]
pub struct StructuredMesh {
    pub nx: usize,
    pub ny: usize,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 6]>,
    pub quad_parent: Vec<usize>,
    pub boundary_edges: Vec<BoundaryEdge>,
    areas: Vec<f64>,
}

impl StructuredMesh {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 1 {
            return Err(Error::invalid(format!("mesh needs nx >= 2 and ny >= 1, got {nx} x {ny}")));
        }
        let (gx, gy) = (2 * nx + 1, 2 * ny + 1);
        let hx = (X_MAX - X_MIN) / nx as f64;
        let hy = (Y_MAX - Y_MIN) / ny as f64;
        let id = |i: usize, j: usize| j * gx + i;

        let mut nodes = Vec::with_capacity(gx * gy);
        for j in 0..gy {
            for i in 0..gx {
                // Land exactly on the domain edges.
                let x = if i == gx - 1 { X_MAX } else { X_MIN + 0.5 * hx * i as f64 };
                let y = if j == gy - 1 { Y_MAX } else { Y_MIN + 0.5 * hy * j as f64 };
                nodes.push([x, y]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * nx * ny);
        let mut quad_parent = Vec::with_capacity(2 * nx * ny);
        for qy in 0..ny {
            for qx in 0..nx {
                let (i, j) = (2 * qx, 2 * qy);
                let bl = id(i, j);
                let br = id(i + 2, j);
                let tr = id(i + 2, j + 2);
                let tl = id(i, j + 2);
                let centre = id(i + 1, j + 1);
                triangles.push([bl, br, tr, id(i + 1, j), id(i + 2, j + 1), centre]);
                triangles.push([bl, tr, tl, centre, id(i + 1, j + 2), id(i, j + 1)]);
                let q = qy * nx + qx;
                quad_parent.push(q);
                quad_parent.push(q);
            }
        }

        let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
        let mut edge = |side, a: usize, m: usize, b: usize, nodes: &[[f64; 2]]| {
            let (pa, pb) = (nodes[a], nodes[b]);
            boundary_edges.push(BoundaryEdge {
                side,
                nodes: [a, m, b],
                length: (pb[0] - pa[0]).hypot(pb[1] - pa[1]),
                midpoint: nodes[m],
            });
        };
        for qx in 0..nx {
            let i = 2 * qx;
            edge(BoundarySide::Bottom, id(i, 0), id(i + 1, 0), id(i + 2, 0), &nodes);
        }
        for qy in 0..ny {
            let j = 2 * qy;
            edge(BoundarySide::Right, id(gx - 1, j), id(gx - 1, j + 1), id(gx - 1, j + 2), &nodes);
        }
        for qx in (0..nx).rev() {
            let i = 2 * qx;
            edge(BoundarySide::Top, id(i + 2, gy - 1), id(i + 1, gy - 1), id(i, gy - 1), &nodes);
        }
        for qy in (0..ny).rev() {
            let j = 2 * qy;
            edge(BoundarySide::Left, id(0, j + 2), id(0, j + 1), id(0, j), &nodes);
        }

        let mut mesh = Self { nx, ny, nodes, triangles, quad_parent, boundary_edges, areas: Vec::new() };
        mesh.areas = (0..mesh.triangles.len()).map(|e| mesh.signed_area(e)).collect();
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_quads(&self) -> usize {
        self.nx * self.ny
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn area(&self, e: usize) -> f64 {
        self.areas[e]
    }

    fn signed_area(&self, e: usize) -> f64 {
        let [a, b, c, ..] = self.triangles[e];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn vertices(&self, e: usize) -> [[f64; 2]; 3] {
        let t = &self.triangles[e];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.vertices(e);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn is_dirichlet_node(&self, n: usize) -> bool {
        (self.nodes[n][0] - X_MIN).abs() <= COORD_TOL
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&n| self.is_dirichlet_node(n)).collect()
    }

    /// Index of the quad containing a point, clamped to the grid.
    pub fn quad_at(&self, p: [f64; 2]) -> usize {
        let fx = (p[0] - X_MIN) / (X_MAX - X_MIN) * self.nx as f64;
        let fy = (p[1] - Y_MIN) / (Y_MAX - Y_MIN) * self.ny as f64;
        let qx = (fx.floor().max(0.0) as usize).min(self.nx - 1);
        let qy = (fy.floor().max(0.0) as usize).min(self.ny - 1);
        qy * self.nx + qx
    }

    /// The same mesh with node `n` renamed `perm[n]`.
    pub fn renumbered(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes() {
            return Err(Error::DimensionMismatch { expected: self.num_nodes(), actual: perm.len() });
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("renumbering is not a permutation"));
            }
        }
        let mut nodes = vec![[0.0; 2]; self.num_nodes()];
        for (n, &p) in perm.iter().enumerate() {
            nodes[p] = self.nodes[n];
        }
        let triangles = self.triangles.iter().map(|t| t.map(|n| perm[n])).collect();
        let boundary_edges = self
            .boundary_edges
            .iter()
            .map(|e| BoundaryEdge { nodes: e.nodes.map(|n| perm[n]), ..e.clone() })
            .collect();
        Ok(Self {
            nx: self.nx,
            ny: self.ny,
            nodes,
            triangles,
            quad_parent: self.quad_parent.clone(),
            boundary_edges,
            areas: self.areas.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_grid_counts() {
        let m = StructuredMesh::new(160, 80).unwrap();
        assert_eq!(m.num_triangles(), 25_600);
        assert_eq!(m.num_quads(), 12_800);
        assert_eq!(m.num_nodes(), 321 * 161);
    }

    #[test]
    fn smallest_grid() {
        let m = StructuredMesh::new(2, 1).unwrap();
        assert_eq!(m.num_triangles(), 4);
        assert_eq!(m.num_quads(), 2);
        assert_eq!(m.num_nodes(), 5 * 3);
        assert!(StructuredMesh::new(1, 1).is_err());
        assert!(StructuredMesh::new(2, 0).is_err());
    }

    #[test]
    fn node_count_formula() {
        for (nx, ny) in [(2, 1), (3, 2), (8, 5), (48, 24)] {
            let m = StructuredMesh::new(nx, ny).unwrap();
            assert_eq!(m.num_nodes(), (2 * nx + 1) * (2 * ny + 1));
        }
    }

    #[test]
    fn triangles_positive_and_cover_domain() {
        let m = StructuredMesh::new(6, 4).unwrap();
        assert!(m.areas().iter().all(|&a| a > 0.0));
        let total: f64 = m.areas().iter().sum();
        assert!((total - DOMAIN_AREA).abs() < 1e-13);
        let mut owned = vec![0; m.num_quads()];
        for &q in &m.quad_parent {
            owned[q] += 1;
        }
        assert!(owned.iter().all(|&c| c == 2));
    }

    #[test]
    fn midside_nodes_are_midpoints() {
        let m = StructuredMesh::new(5, 3).unwrap();
        for t in &m.triangles {
            for (k, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                let (pa, pb, pm) = (m.nodes[t[a]], m.nodes[t[b]], m.nodes[t[3 + k]]);
                assert!((0.5 * (pa[0] + pb[0]) - pm[0]).abs() < 1e-14);
                assert!((0.5 * (pa[1] + pb[1]) - pm[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn boundary_edges_tagged() {
        let m = StructuredMesh::new(4, 3).unwrap();
        let count = |s| m.boundary_edges.iter().filter(|e| e.side == s).count();
        assert_eq!(count(BoundarySide::Bottom), 4);
        assert_eq!(count(BoundarySide::Top), 4);
        assert_eq!(count(BoundarySide::Right), 3);
        assert_eq!(count(BoundarySide::Left), 3);
        for e in &m.boundary_edges {
            let p = e.midpoint;
            match e.side {
                BoundarySide::Bottom => assert_eq!(p[1], Y_MIN),
                BoundarySide::Top => assert_eq!(p[1], Y_MAX),
                BoundarySide::Right => assert_eq!(p[0], X_MAX),
                BoundarySide::Left => assert_eq!(p[0], X_MIN),
            }
        }
        assert_eq!(m.dirichlet_nodes().len(), 2 * 3 + 1);
    }
}
