use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Par, Side};

use super::{element_stiffness, load_vector, BoundaryLoad, DisplacementField, StructuredMesh, TensorField};
use crate::error::{Error, Result};

const UNUSED: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum LinearSolver {
    /// Sparse Cholesky with the symbolic analysis cached per mesh.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient { rel_tol: f64, max_iter: usize },
}

/// Assembles and solves the clamped elasticity system on a fixed mesh.
///
/// The sparsity pattern, the element scatter map and the symbolic
/// factorisation are built once; each [`solve`](Self::solve) only refills
/// values.
#[derive(Clone, Debug)]
pub struct ElasticSolver {
    mesh: StructuredMesh,
    /// Free-dof index of `2 * node + component`, or `UNUSED` if clamped.
    dof_map: Vec<u32>,
    n_free: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Per element, 144 value slots (`UNUSED` for the skipped upper half).
    scatter: Vec<u32>,
    symbolic: Option<SymbolicLlt<usize>>,
    method: LinearSolver,
}

impl ElasticSolver {
    pub fn new(mesh: &StructuredMesh) -> Result<Self> {
        Self::with_method(mesh, LinearSolver::default())
    }

    pub fn with_method(mesh: &StructuredMesh, method: LinearSolver) -> Result<Self> {
        faer::set_global_parallelism(Par::Seq);
        let mut dof_map = vec![UNUSED; 2 * mesh.num_nodes()];
        let mut n_free = 0usize;
        for n in 0..mesh.num_nodes() {
            if !mesh.is_dirichlet_node(n) {
                dof_map[2 * n] = n_free as u32;
                dof_map[2 * n + 1] = n_free as u32 + 1;
                n_free += 2;
            }
        }
        if n_free == 0 {
            return Err(Error::invalid("mesh has no free degrees of freedom"));
        }

        let element_dofs = |e: usize| -> [u32; 12] {
            let t = mesh.triangles[e];
            std::array::from_fn(|k| dof_map[2 * t[k / 2] + k % 2])
        };

        let mut columns: Vec<Vec<usize>> = vec![Vec::new(); n_free];
        for e in 0..mesh.num_triangles() {
            let dofs = element_dofs(e);
            for &r in &dofs {
                for &c in &dofs {
                    if r != UNUSED && c != UNUSED && r >= c {
                        columns[c as usize].push(r as usize);
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n_free + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut columns {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        drop(columns);

        let mut scatter = Vec::with_capacity(144 * mesh.num_triangles());
        for e in 0..mesh.num_triangles() {
            let dofs = element_dofs(e);
            for &r in &dofs {
                for &c in &dofs {
                    if r == UNUSED || c == UNUSED || r < c {
                        scatter.push(UNUSED);
                        continue;
                    }
                    let (lo, hi) = (col_ptr[c as usize], col_ptr[c as usize + 1]);
                    let pos = row_idx[lo..hi].binary_search(&(r as usize)).expect("pattern covers element");
                    scatter.push((lo + pos) as u32);
                }
            }
        }

        let mut solver = Self {
            mesh: mesh.clone(),
            dof_map,
            n_free,
            col_ptr,
            row_idx,
            scatter,
            symbolic: None,
            method,
        };
        if method == LinearSolver::Cholesky {
            let symbolic = SymbolicLlt::try_new(solver.pattern(), Side::Lower)
                .map_err(|e| Error::Corrupt(format!("symbolic factorisation failed: {e:?}")))?;
            solver.symbolic = Some(symbolic);
        }
        Ok(solver)
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn num_free_dofs(&self) -> usize {
        self.n_free
    }

    pub fn method(&self) -> LinearSolver {
        self.method
    }

    fn pattern(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n_free, self.n_free, &self.col_ptr, None, &self.row_idx)
    }

    /// Lower triangle of the reduced stiffness matrix, in pattern order.
    pub fn assemble(&self, tensors: &TensorField) -> Result<Vec<f64>> {
        if tensors.len() != self.mesh.num_triangles() {
            return Err(Error::DimensionMismatch { expected: self.mesh.num_triangles(), actual: tensors.len() });
        }
        let mut values = vec![0.0; self.row_idx.len()];
        for (e, tensor) in tensors.0.iter().enumerate() {
            if !tensor.is_finite() {
                return Err(Error::invalid(format!("non-finite tensor on element {e}")));
            }
            let k = element_stiffness(&self.mesh, e, tensor);
            let slots = &self.scatter[144 * e..144 * (e + 1)];
            for (i, row) in k.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let s = slots[12 * i + j];
                    if s != UNUSED {
                        values[s as usize] += v;
                    }
                }
            }
        }
        Ok(values)
    }

    fn reduced_load(&self, load: &BoundaryLoad) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n_free];
        for (n, f) in load_vector(&self.mesh, load).into_iter().enumerate() {
            for d in 0..2 {
                let k = self.dof_map[2 * n + d];
                if k != UNUSED {
                    rhs[k as usize] += f[d];
                }
            }
        }
        rhs
    }

    fn expand(&self, x: &[f64]) -> DisplacementField {
        let mut u = DisplacementField::zeros(self.mesh.num_nodes());
        for n in 0..self.mesh.num_nodes() {
            for d in 0..2 {
                let k = self.dof_map[2 * n + d];
                if k != UNUSED {
                    u.0[n][d] = x[k as usize];
                }
            }
        }
        u
    }

    pub fn solve(&self, tensors: &TensorField, load: &BoundaryLoad) -> Result<DisplacementField> {
        let values = self.assemble(tensors)?;
        let mut x = self.reduced_load(load);
        match self.method {
            LinearSolver::Cholesky => {
                let symbolic = self.symbolic.clone().expect("symbolic factorisation");
                let matrix = SparseColMatRef::new(self.pattern(), &values);
                let llt = Llt::try_new_with_symbolic(symbolic, matrix, Side::Lower)
                    .map_err(|_| Error::SingularSystem)?;
                let n = x.len();
                llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
            }
            LinearSolver::ConjugateGradient { rel_tol, max_iter } => {
                x = self.pcg(&values, &x, rel_tol, max_iter)?;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(self.expand(&x))
    }

    /// `y = K x` for the symmetric matrix stored as its lower triangle.
    fn sym_matvec(&self, values: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.n_free {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = values[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
    }

    fn pcg(&self, values: &[f64], b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let n = self.n_free;
        let mut diag = vec![0.0; n];
        for c in 0..n {
            // Rows are sorted, so the diagonal leads each column.
            let k = self.col_ptr[c];
            if self.row_idx[k] != c || values[k] <= 0.0 {
                return Err(Error::SingularSystem);
            }
            diag[c] = values[k];
        }
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        for _ in 0..max_iter {
            self.sym_matvec(values, &p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                return Err(Error::SingularSystem);
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r_norm <= rel_tol * b_norm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NonConvergence { phase: "conjugate gradients", iterations: max_iter })
    }
}

/// One-shot solve; builds a fresh [`ElasticSolver`].
pub fn solve_elasticity(
    mesh: &StructuredMesh,
    tensors: &TensorField,
    load: &BoundaryLoad,
) -> Result<DisplacementField> {
    ElasticSolver::new(mesh)?.solve(tensors, load)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{compliance_boundary, strain_energy, BoundarySide};
    use crate::voigt::{base_tensor, LameCoefficients};

    fn setup() -> (StructuredMesh, TensorField, BoundaryLoad) {
        let m = StructuredMesh::new(12, 6).unwrap();
        let a = TensorField::uniform(m.num_triangles(), base_tensor(&LameCoefficients::reference()));
        let load = BoundaryLoad::on_segment(&m, BoundarySide::Right, (0.4, 0.6), [0.0, -1.0]).unwrap();
        (m, a, load)
    }

    #[test]
    fn clamped_dofs_stay_zero() {
        let (m, a, load) = setup();
        let u = solve_elasticity(&m, &a, &load).unwrap();
        for n in m.dirichlet_nodes() {
            assert_eq!(u.0[n], [0.0, 0.0]);
        }
        assert!(u.max_abs() > 0.0);
    }

    #[test]
    fn cholesky_and_cg_agree() {
        let (m, a, load) = setup();
        let direct = solve_elasticity(&m, &a, &load).unwrap();
        let cg = ElasticSolver::with_method(&m, LinearSolver::ConjugateGradient { rel_tol: 1e-12, max_iter: 20_000 })
            .unwrap()
            .solve(&a, &load)
            .unwrap();
        let scale = direct.max_abs();
        for (d, c) in direct.0.iter().zip(&cg.0) {
            assert!((d[0] - c[0]).abs() < 1e-8 * scale && (d[1] - c[1]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn work_equals_strain_energy() {
        let (m, a, load) = setup();
        let u = solve_elasticity(&m, &a, &load).unwrap();
        let work = compliance_boundary(&m, &load, &u);
        let energy = strain_energy(&m, &a, &u).unwrap();
        assert!(work > 0.0);
        assert!((work - energy).abs() < 1e-10 * work);
    }

    #[test]
    fn linear_in_load() {
        let (m, a, load) = setup();
        let solver = ElasticSolver::new(&m).unwrap();
        let u1 = solver.solve(&a, &load).unwrap();
        let u3 = solver.solve(&a, &load.scaled(3.0)).unwrap();
        for (p, q) in u1.0.iter().zip(&u3.0) {
            assert!((3.0 * p[0] - q[0]).abs() < 1e-10 && (3.0 * p[1] - q[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn wrong_tensor_count_rejected() {
        let (m, _, load) = setup();
        let a = TensorField::uniform(3, base_tensor(&LameCoefficients::reference()));
        assert!(matches!(
            solve_elasticity(&m, &a, &load),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
