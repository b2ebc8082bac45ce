//! Continuous P2 Galerkin elasticity on the structured triangulation, with
//! element-wise constant homogenised tensors.

mod mesh;
mod solver;

pub use mesh::{BoundaryEdge, BoundarySide, StructuredMesh, DOMAIN_AREA, X_MAX, X_MIN, Y_MAX, Y_MIN};
pub use solver::{solve_elasticity, ElasticSolver, LinearSolver};

use crate::error::{Error, Result};
use crate::voigt::{VoigtTensor, THETA_MIN};

/// Voigt stress `[s11, s22, s12]`.
pub type Stress = [f64; 3];

/// Piecewise-constant density on the triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField(Vec<f64>);

impl DensityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(THETA_MIN..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("density {bad} outside [{THETA_MIN}, 1]")));
        }
        Ok(Self(values))
    }

    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    /// Clamps into `[THETA_MIN, 1]`.
    pub fn clamped(values: impl IntoIterator<Item = f64>) -> Self {
        Self(values.into_iter().map(|v| v.clamp(THETA_MIN, 1.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorField(pub Vec<VoigtTensor>);

impl TensorField {
    pub fn uniform(len: usize, tensor: VoigtTensor) -> Self {
        Self(vec![tensor; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-node displacement of the P2 solution.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField(pub Vec<[f64; 2]>);

impl DisplacementField {
    pub fn zeros(num_nodes: usize) -> Self {
        Self(vec![[0.0; 2]; num_nodes])
    }

    pub fn from_fn(mesh: &StructuredMesh, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self(mesh.nodes.iter().map(|&p| f(p)).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// A constant traction applied over a set of boundary edges.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLoad {
    pub edges: Vec<usize>,
    pub traction: [f64; 2],
    pub side: BoundarySide,
    /// Closed interval of the running coordinate along `side` (x on the
    /// bottom and top, y on the right).
    pub segment: (f64, f64),
}

impl BoundaryLoad {
    /// Selects every edge of `side` whose midpoint lies in the closed segment.
    pub fn on_segment(
        mesh: &StructuredMesh,
        side: BoundarySide,
        segment: (f64, f64),
        traction: [f64; 2],
    ) -> Result<Self> {
        if side == BoundarySide::Left {
            return Err(Error::invalid("loads cannot act on the clamped boundary"));
        }
        let tol = 1e-9;
        let (a, b) = segment;
        let edges: Vec<usize> = mesh
            .boundary_edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.side == side)
            .filter(|(_, e)| {
                let s = match side {
                    BoundarySide::Right | BoundarySide::Left => e.midpoint[1],
                    _ => e.midpoint[0],
                };
                s >= a - tol && s <= b + tol
            })
            .map(|(i, _)| i)
            .collect();
        if edges.is_empty() {
            return Err(Error::invalid(format!(
                "segment [{a}, {b}] on {side:?} contains no edge midpoint"
            )));
        }
        Ok(Self { edges, traction, side, segment })
    }

    pub fn covered_length(&self, mesh: &StructuredMesh) -> f64 {
        self.edges.iter().map(|&e| mesh.boundary_edges[e].length).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { traction: [self.traction[0] * factor, self.traction[1] * factor], ..self.clone() }
    }
}

const EDGE_GAUSS: [(f64, f64); 2] = [
    (0.5 - 0.288_675_134_594_812_9, 0.5),
    (0.5 + 0.288_675_134_594_812_9, 0.5),
];

/// Quadratic edge shape functions at `t in [0, 1]`: start, midpoint, end.
fn edge_shape(t: f64) -> [f64; 3] {
    [(1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0)]
}

/// Consistent nodal forces of the traction, per node.
pub(crate) fn load_vector(mesh: &StructuredMesh, load: &BoundaryLoad) -> Vec<[f64; 2]> {
    let mut f = vec![[0.0; 2]; mesh.num_nodes()];
    for &ei in &load.edges {
        let edge = &mesh.boundary_edges[ei];
        for (t, w) in EDGE_GAUSS {
            let n = edge_shape(t);
            for (k, &node) in edge.nodes.iter().enumerate() {
                let c = w * edge.length * n[k];
                f[node][0] += c * load.traction[0];
                f[node][1] += c * load.traction[1];
            }
        }
    }
    f
}

/// `int_{Gamma_N} g . u` with two-point Gauss quadrature per edge.
pub fn compliance_boundary(mesh: &StructuredMesh, load: &BoundaryLoad, u: &DisplacementField) -> f64 {
    let g = load.traction;
    let mut total = 0.0;
    for &ei in &load.edges {
        let edge = &mesh.boundary_edges[ei];
        for (t, w) in EDGE_GAUSS {
            let n = edge_shape(t);
            let mut ut = [0.0; 2];
            for (k, &node) in edge.nodes.iter().enumerate() {
                ut[0] += n[k] * u.0[node][0];
                ut[1] += n[k] * u.0[node][1];
            }
            total += w * edge.length * (g[0] * ut[0] + g[1] * ut[1]);
        }
    }
    total
}

/// Gradients of the barycentric coordinates of triangle `e`.
pub(crate) fn barycentric_gradients(mesh: &StructuredMesh, e: usize) -> [[f64; 2]; 3] {
    let [p1, p2, p3] = mesh.vertices(e);
    let twice_area = 2.0 * mesh.area(e);
    [
        [(p2[1] - p3[1]) / twice_area, (p3[0] - p2[0]) / twice_area],
        [(p3[1] - p1[1]) / twice_area, (p1[0] - p3[0]) / twice_area],
        [(p1[1] - p2[1]) / twice_area, (p2[0] - p1[0]) / twice_area],
    ]
}

/// Gradients of the six P2 shape functions at barycentric point `l`.
pub(crate) fn p2_gradients(grad_l: &[[f64; 2]; 3], l: [f64; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        let s = 4.0 * l[i] - 1.0;
        g[i] = [s * grad_l[i][0], s * grad_l[i][1]];
    }
    for (k, (i, j)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
        g[3 + k] = [
            4.0 * (l[i] * grad_l[j][0] + l[j] * grad_l[i][0]),
            4.0 * (l[i] * grad_l[j][1] + l[j] * grad_l[i][1]),
        ];
    }
    g
}

/// Degree-2 rule at the edge midpoints; weights are fractions of the area.
pub(crate) const TRIANGLE_QUADRATURE: [([f64; 3], f64); 3] = [
    ([0.5, 0.5, 0.0], 1.0 / 3.0),
    ([0.0, 0.5, 0.5], 1.0 / 3.0),
    ([0.5, 0.0, 0.5], 1.0 / 3.0),
];

/// Voigt strain from shape-function gradients and element displacements.
fn strain(grads: &[[f64; 2]; 6], ue: &[[f64; 2]; 6]) -> [f64; 3] {
    let mut eps = [0.0; 3];
    for (g, u) in grads.iter().zip(ue) {
        eps[0] += g[0] * u[0];
        eps[1] += g[1] * u[1];
        eps[2] += g[1] * u[0] + g[0] * u[1];
    }
    eps
}

fn element_displacements(mesh: &StructuredMesh, e: usize, u: &DisplacementField) -> [[f64; 2]; 6] {
    mesh.triangles[e].map(|n| u.0[n])
}

/// Area-averaged Voigt strain of triangle `e` (the centroid value).
pub fn element_strain(mesh: &StructuredMesh, e: usize, u: &DisplacementField) -> [f64; 3] {
    let grads = p2_gradients(&barycentric_gradients(mesh, e), [1.0 / 3.0; 3]);
    strain(&grads, &element_displacements(mesh, e, u))
}

/// Element-constant stress `A*_e eps_avg(u)` on every triangle.
pub fn post_process_stress(
    mesh: &StructuredMesh,
    tensors: &TensorField,
    u: &DisplacementField,
) -> Result<Vec<Stress>> {
    check_len(mesh.num_triangles(), tensors.len())?;
    check_len(mesh.num_nodes(), u.0.len())?;
    Ok((0..mesh.num_triangles())
        .map(|e| tensors.0[e].apply(element_strain(mesh, e, u)))
        .collect())
}

/// `sum_e |T_e| [A*_e]^-1 sigma_e : sigma_e`.
pub fn compliance_energy(mesh: &StructuredMesh, tensors: &TensorField, stress: &[Stress]) -> Result<f64> {
    check_len(mesh.num_triangles(), tensors.len())?;
    check_len(mesh.num_triangles(), stress.len())?;
    let mut total = 0.0;
    for (e, s) in stress.iter().enumerate() {
        if s.iter().all(|&x| x == 0.0) {
            continue;
        }
        total += mesh.area(e) * tensors.0[e].inverse()?.quad_form(*s);
    }
    Ok(total)
}

/// `u^T K u` evaluated element by element with the stiffness quadrature.
pub fn strain_energy(mesh: &StructuredMesh, tensors: &TensorField, u: &DisplacementField) -> Result<f64> {
    check_len(mesh.num_triangles(), tensors.len())?;
    check_len(mesh.num_nodes(), u.0.len())?;
    let mut total = 0.0;
    for e in 0..mesh.num_triangles() {
        let grad_l = barycentric_gradients(mesh, e);
        let ue = element_displacements(mesh, e, u);
        for (l, w) in TRIANGLE_QUADRATURE {
            let eps = strain(&p2_gradients(&grad_l, l), &ue);
            total += w * mesh.area(e) * tensors.0[e].quad_form(eps);
        }
    }
    Ok(total)
}

/// `(1/|D|) sum_e |T_e| theta_e`.
pub fn volume_fraction(mesh: &StructuredMesh, theta: &DensityField) -> Result<f64> {
    check_len(mesh.num_triangles(), theta.len())?;
    Ok(mesh.areas().iter().zip(theta.values()).map(|(a, t)| a * t).sum::<f64>() / DOMAIN_AREA)
}

/// 12×12 stiffness of triangle `e`, dofs ordered `[ux0, uy0, ux1, ...]`.
pub fn element_stiffness(mesh: &StructuredMesh, e: usize, tensor: &VoigtTensor) -> [[f64; 12]; 12] {
    let grad_l = barycentric_gradients(mesh, e);
    let area = mesh.area(e);
    let a = tensor.rows();
    let mut k = [[0.0; 12]; 12];
    for (l, w) in TRIANGLE_QUADRATURE {
        let g = p2_gradients(&grad_l, l);
        // B columns: node n, x -> [gx, 0, gy], y -> [0, gy, gx].
        let mut b = [[0.0; 12]; 3];
        for (n, gn) in g.iter().enumerate() {
            b[0][2 * n] = gn[0];
            b[2][2 * n] = gn[1];
            b[1][2 * n + 1] = gn[1];
            b[2][2 * n + 1] = gn[0];
        }
        // db = A B
        let mut db = [[0.0; 12]; 3];
        for r in 0..3 {
            for c in 0..12 {
                db[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
            }
        }
        let scale = w * area;
        for i in 0..12 {
            let bi = [b[0][i], b[1][i], b[2][i]];
            if bi == [0.0; 3] {
                continue;
            }
            for j in 0..12 {
                k[i][j] += scale * (bi[0] * db[0][j] + bi[1] * db[1][j] + bi[2] * db[2][j]);
            }
        }
    }
    k
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
