//! Load-case parametrisation, the parameter grid, quad projection of
//! densities and the dataset file format.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::{BoundaryLoad, BoundarySide, DensityField, StructuredMesh};
use crate::voigt::THETA_MIN;

/// Length of the loaded boundary segment.
pub const SEGMENT_LENGTH: f64 = 0.1;
pub const BOTTOM_RANGE: (f64, f64) = (0.0, 0.6);
pub const RIGHT_RANGE: (f64, f64) = (0.7, 1.6);
pub const TOP_RANGE: (f64, f64) = (1.7, 2.3);
pub const ETA2_MAX: f64 = 59.0;
pub const POSITION_SPACING: f64 = 0.05;
pub const NUM_POSITIONS: usize = 45;
pub const NUM_ANGLES: usize = 60;

const OFFSET_BOTTOM: f64 = 0.35;
const OFFSET_RIGHT: f64 = -0.65;
const OFFSET_TOP: f64 = 2.65;
const RANGE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Bottom = 0,
    Right = 1,
    Top = 2,
}

impl BoundaryTag {
    pub fn side(self) -> BoundarySide {
        match self {
            BoundaryTag::Bottom => BoundarySide::Bottom,
            BoundaryTag::Right => BoundarySide::Right,
            BoundaryTag::Top => BoundarySide::Top,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Right => "right",
            BoundaryTag::Top => "top",
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(BoundaryTag::Bottom),
            1 => Ok(BoundaryTag::Right),
            2 => Ok(BoundaryTag::Top),
            _ => Err(Error::Corrupt(format!("unknown boundary tag {v}"))),
        }
    }
}

fn in_range(x: f64, (a, b): (f64, f64)) -> bool {
    x >= a - RANGE_TOL && x <= b + RANGE_TOL
}

/// Loaded side and segment (in the running coordinate of that side) for a
/// curvilinear abscissa.
pub fn neumann_segment(eta1: f64) -> Result<(BoundaryTag, (f64, f64))> {
    let h = 0.5 * SEGMENT_LENGTH;
    let (tag, centre) = if in_range(eta1, BOTTOM_RANGE) {
        (BoundaryTag::Bottom, OFFSET_BOTTOM + eta1)
    } else if in_range(eta1, RIGHT_RANGE) {
        (BoundaryTag::Right, OFFSET_RIGHT + eta1)
    } else if in_range(eta1, TOP_RANGE) {
        (BoundaryTag::Top, OFFSET_TOP - eta1)
    } else {
        return Err(Error::invalid(format!("eta1 = {eta1} is not on a loadable boundary interval")));
    };
    Ok((tag, (centre - h, centre + h)))
}

/// Unit force for an angle index: 90° at 0, decreasing by 3° per step.
pub fn force_vector(eta2: f64) -> Result<[f64; 2]> {
    if !(0.0..=ETA2_MAX).contains(&eta2) {
        return Err(Error::invalid(format!("eta2 = {eta2} outside [0, {ETA2_MAX}]")));
    }
    let angle = std::f64::consts::FRAC_PI_2 * (1.0 - eta2 / 30.0);
    Ok([angle.cos(), angle.sin()])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParameterPoint {
    pub eta1: f64,
    pub eta2: f64,
    pub boundary_tag: BoundaryTag,
    pub segment: (f64, f64),
    pub force: [f64; 2],
}

impl ParameterPoint {
    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        let (boundary_tag, segment) = neumann_segment(eta1)?;
        Ok(Self { eta1, eta2, boundary_tag, segment, force: force_vector(eta2)? })
    }

    pub fn boundary_load(&self, mesh: &StructuredMesh) -> Result<BoundaryLoad> {
        BoundaryLoad::on_segment(mesh, self.boundary_tag.side(), self.segment, self.force)
    }
}

/// The 45 load positions in order: bottom, right, top.
pub fn grid_positions() -> Vec<f64> {
    // Integer hundredths keep the values exact to the last digit.
    let block = |start: u32, count: u32| (0..count).map(move |k| f64::from(start + 5 * k) / 100.0);
    block(0, 13).chain(block(70, 19)).chain(block(170, 13)).collect()
}

/// Entry id of grid point `(position index, angle index)`.
pub fn grid_id(position: usize, angle: usize) -> u32 {
    (position * NUM_ANGLES + angle) as u32
}

/// The full 45 × 60 grid, ordered by [`grid_id`].
pub fn enumerate_grid() -> Vec<ParameterPoint> {
    enumerate_strided(1, 1).into_iter().map(|(_, p)| p).collect()
}

/// Every `position_stride`-th position and `angle_stride`-th angle, with ids.
pub fn enumerate_strided(position_stride: usize, angle_stride: usize) -> Vec<(u32, ParameterPoint)> {
    let positions = grid_positions();
    let ps = position_stride.max(1);
    let as_ = angle_stride.max(1);
    let mut out = Vec::new();
    for (pi, &eta1) in positions.iter().enumerate().step_by(ps) {
        for ai in (0..NUM_ANGLES).step_by(as_) {
            let point = ParameterPoint::new(eta1, ai as f64).expect("grid points are valid");
            out.push((grid_id(pi, ai), point));
        }
    }
    out
}

/// Per-quad mean of the two triangle densities.
pub fn project_to_quads(mesh: &StructuredMesh, theta: &DensityField) -> Result<Vec<f64>> {
    if theta.len() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch { expected: mesh.num_triangles(), actual: theta.len() });
    }
    let mut sums = vec![0.0; mesh.num_quads()];
    let mut counts = vec![0u32; mesh.num_quads()];
    for (&q, &t) in mesh.quad_parent.iter().zip(theta.values()) {
        sums[q] += t;
        counts[q] += 1;
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s / f64::from(c)).collect())
}

/// Both triangles of each quad inherit its value, clamped to `[THETA_MIN, 1]`.
pub fn lift_to_triangles(mesh: &StructuredMesh, theta_quads: &[f64]) -> Result<DensityField> {
    if theta_quads.len() != mesh.num_quads() {
        return Err(Error::DimensionMismatch { expected: mesh.num_quads(), actual: theta_quads.len() });
    }
    if theta_quads.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite quad density"));
    }
    Ok(DensityField::clamped(mesh.quad_parent.iter().map(|&q| theta_quads[q].clamp(THETA_MIN, 1.0))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub id: u32,
    pub params: ParameterPoint,
    /// Quad-projected density, length `nx * ny`.
    pub theta: Vec<f64>,
    pub j_opt: f64,
    pub v_opt: f64,
    pub n_iterations: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub nx: u32,
    pub ny: u32,
    pub entries: Vec<DatasetEntry>,
}

pub const DATASET_MAGIC: &[u8; 8] = b"LAMOPTDS";
pub const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn new(nx: u32, ny: u32) -> Self {
        Self { nx, ny, entries: Vec::new() }
    }

    pub fn n_t(&self) -> usize {
        self.nx as usize * self.ny as usize
    }

    pub fn get(&self, id: u32) -> Option<&DatasetEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn sort_by_id(&mut self) {
        self.entries.sort_by_key(|e| e.id);
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let n_t = self.n_t();
        w.write_all(DATASET_MAGIC)?;
        for v in [DATASET_VERSION, self.nx, self.ny, self.entries.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for e in &self.entries {
            if e.theta.len() != n_t {
                return Err(Error::DimensionMismatch { expected: n_t, actual: e.theta.len() });
            }
            w.write_all(&e.id.to_le_bytes())?;
            w.write_all(&e.params.eta1.to_le_bytes())?;
            w.write_all(&e.params.eta2.to_le_bytes())?;
            w.write_all(&[e.params.boundary_tag as u8])?;
            w.write_all(&e.j_opt.to_le_bytes())?;
            w.write_all(&e.v_opt.to_le_bytes())?;
            w.write_all(&e.n_iterations.to_le_bytes())?;
            for t in &e.theta {
                w.write_all(&t.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::CorruptMagic);
        }
        let version = read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: DATASET_VERSION });
        }
        let nx = read_u32(&mut r)?;
        let ny = read_u32(&mut r)?;
        let count = read_u32(&mut r)?;
        let n_t = nx as usize * ny as usize;
        let mut entries = Vec::with_capacity((count as usize).min(1 << 16));
        for _ in 0..count {
            let id = read_u32(&mut r)?;
            let eta1 = read_f64(&mut r)?;
            let eta2 = read_f64(&mut r)?;
            let mut tag = [0u8; 1];
            read_exact(&mut r, &mut tag)?;
            let tag = BoundaryTag::from_u8(tag[0])?;
            let j_opt = read_f64(&mut r)?;
            let v_opt = read_f64(&mut r)?;
            let n_iterations = read_u32(&mut r)?;
            let mut bytes = vec![0u8; 8 * n_t];
            read_exact(&mut r, &mut bytes)?;
            let theta = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let params = ParameterPoint::new(eta1, eta2).map_err(|e| Error::Corrupt(e.to_string()))?;
            if params.boundary_tag != tag {
                return Err(Error::Corrupt(format!("entry {id}: boundary tag disagrees with eta1 = {eta1}")));
            }
            entries.push(DatasetEntry { id, params, theta, j_opt, v_opt, n_iterations });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after last entry".into()));
        }
        Ok(Self { nx, ny, entries })
    }

    pub fn write_manifest_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "id,eta1,eta2,boundary,J_opt,V_opt,n_iter")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{:.12e},{:.12e},{}",
                e.id,
                e.params.eta1,
                e.params.eta2,
                e.params.boundary_tag.name(),
                e.j_opt,
                e.v_opt,
                e.n_iterations
            )?;
        }
        Ok(())
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedPayload,
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    dataset.write_to(BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn segment_examples() {
        let (tag, seg) = neumann_segment(0.0).unwrap();
        assert_eq!(tag, BoundaryTag::Bottom);
        assert!(close(seg, (0.30, 0.40)));
        let (tag, seg) = neumann_segment(0.45).unwrap();
        assert_eq!(tag, BoundaryTag::Bottom);
        assert!(close(seg, (0.75, 0.85)));
        let (tag, seg) = neumann_segment(2.30).unwrap();
        assert_eq!(tag, BoundaryTag::Top);
        assert!(close(seg, (0.30, 0.40)));
        let (tag, seg) = neumann_segment(0.7).unwrap();
        assert_eq!(tag, BoundaryTag::Right);
        assert!(close(seg, (0.0, 0.1)));
        for bad in [-0.1, 0.65, 1.65, 2.4] {
            assert!(neumann_segment(bad).is_err());
        }
    }

    #[test]
    fn force_examples() {
        let g = force_vector(0.0).unwrap();
        assert!(g[0].abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);
        let g = force_vector(30.0).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15 && g[1].abs() < 1e-15);
        let g = force_vector(59.0).unwrap();
        let a = (-87f64).to_radians();
        assert!((g[0] - a.cos()).abs() < 1e-12 && (g[1] - a.sin()).abs() < 1e-12);
        assert!((g[0] - 0.05234).abs() < 1e-5 && (g[1] + 0.99863).abs() < 1e-5);
        assert!(force_vector(-1.0).is_err() && force_vector(60.0).is_err());
    }

    #[test]
    fn grid_counts() {
        let pos = grid_positions();
        assert_eq!(pos.len(), NUM_POSITIONS);
        let count = |t| pos.iter().filter(|&&e| neumann_segment(e).unwrap().0 == t).count();
        assert_eq!(count(BoundaryTag::Bottom), 13);
        assert_eq!(count(BoundaryTag::Right), 19);
        assert_eq!(count(BoundaryTag::Top), 13);
        assert_eq!(enumerate_grid().len(), 2700);
        assert_eq!(enumerate_strided(5, 5).len(), 108);
    }

    #[test]
    fn full_size_mesh_segments_cover_eight_edges() {
        let m = StructuredMesh::new(160, 80).unwrap();
        for p in enumerate_strided(1, 59) {
            let load = p.1.boundary_load(&m).unwrap();
            assert_eq!(load.edges.len(), 8, "eta1 = {}", p.1.eta1);
            assert!((load.covered_length(&m) - SEGMENT_LENGTH).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let m = StructuredMesh::new(4, 2).unwrap();
        let n = m.num_triangles();
        let q = project_to_quads(&m, &DensityField::uniform(n, 0.3).unwrap()).unwrap();
        assert!(q.iter().all(|&v| (v - 0.3).abs() < 1e-15));

        let mut vals = vec![0.5; n];
        vals[0] = THETA_MIN;
        vals[1] = 1.0;
        let q = project_to_quads(&m, &DensityField::new(vals).unwrap()).unwrap();
        assert!((q[0] - 0.5 * (1.0 + THETA_MIN)).abs() < 1e-15);

        let v: Vec<f64> = (0..m.num_quads()).map(|i| 0.1 + 0.1 * i as f64).collect();
        let back = project_to_quads(&m, &lift_to_triangles(&m, &v).unwrap()).unwrap();
        assert_eq!(back, v);
        let lifted = lift_to_triangles(&m, &vec![0.0; m.num_quads()]).unwrap();
        assert!(lifted.values().iter().all(|&t| t == THETA_MIN));
        assert!(lift_to_triangles(&m, &[0.5]).is_err());
    }

    fn synthetic(n: usize) -> Dataset {
        let mut d = Dataset::new(3, 2);
        for (k, (id, p)) in enumerate_strided(20, 30).into_iter().take(n).enumerate() {
            d.entries.push(DatasetEntry {
                id,
                params: p,
                theta: (0..6).map(|i| (i + k) as f64 / 7.0).collect(),
                j_opt: 0.1 * (k + 1) as f64,
                v_opt: 0.39,
                n_iterations: 40 + k as u32,
            });
        }
        d
    }

    #[test]
    fn dataset_round_trip() {
        for n in [0, 3] {
            let d = synthetic(n);
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            assert_eq!(buf.len(), 24 + n * (4 + 8 + 8 + 1 + 8 + 8 + 4 + 6 * 8));
            let back = Dataset::read_from(buf.as_slice()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn dataset_errors() {
        let mut buf = Vec::new();
        synthetic(2).write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::read_from(bad.as_slice()), Err(Error::CorruptMagic)));
        let mut bad = buf.clone();
        bad[8] = 2;
        assert!(matches!(Dataset::read_from(bad.as_slice()), Err(Error::VersionMismatch { found: 2, .. })));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(Dataset::read_from(short), Err(Error::TruncatedPayload)));
    }
}
