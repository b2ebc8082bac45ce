//! Pointwise tensor algebra of the homogenisation method.
//!
//! Plane fourth-order tensors are stored as symmetric 3×3 matrices acting on
//! Voigt strain vectors `[e11, e22, g12]` with engineering shear
//! `g12 = du1/dx2 + du2/dx1`. Stresses are Voigt vectors `[s11, s22, s12]`.

use std::f64::consts::PI;
use std::ops::{Add, Index, Mul, Sub};

use crate::error::{Error, Result};

/// Lower clamp for every density handed to the homogenised Hooke's law.
pub const THETA_MIN: f64 = 1e-3;

/// Relative diagonal shift applied to a singular laminate combination
/// `m1·Ac1 + m2·Ac2` before inversion, as a fraction of `trace/3`.
pub const LAMINATE_REGULARISATION: f64 = 1e-4;

const SINGULAR_REL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LameCoefficients {
    pub lambda: f64,
    pub mu: f64,
    pub young: f64,
    pub poisson: f64,
}

impl LameCoefficients {
    pub fn from_engineering(young: f64, poisson: f64) -> Result<Self> {
        if !(young > 0.0) || !young.is_finite() {
            return Err(Error::invalid(format!("Young's modulus must be positive, got {young}")));
        }
        if !(poisson > -1.0 && poisson < 0.5) {
            return Err(Error::invalid(format!(
                "Poisson's ratio must lie in (-1, 0.5), got {poisson}"
            )));
        }
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = young / (2.0 * (1.0 + poisson));
        Ok(Self { lambda, mu, young, poisson })
    }

    /// The material used throughout the dataset: `E = 1`, `nu = 0.3`.
    pub fn reference() -> Self {
        Self::from_engineering(1.0, 0.3).expect("reference material is valid")
    }

    /// `sqrt((2mu + lambda) / (4 mu (mu + lambda)))`, the density factor of
    /// the optimal-theta formula for a unit penalty.
    pub fn density_factor(&self) -> f64 {
        let (l, m) = (self.lambda, self.mu);
        ((2.0 * m + l) / (4.0 * m * (m + l))).sqrt()
    }
}

pub fn lame_from_engineering(young: f64, poisson: f64) -> Result<LameCoefficients> {
    LameCoefficients::from_engineering(young, poisson)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VoigtTensor(pub [[f64; 3]; 3]);

impl VoigtTensor {
    pub const ZERO: Self = Self([[0.0; 3]; 3]);
    pub const IDENTITY: Self = Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn new(rows: [[f64; 3]; 3]) -> Self {
        Self(rows)
    }

    /// Assembles a symmetric tensor from its upper triangle.
    pub fn symmetric(a11: f64, a22: f64, a33: f64, a12: f64, a13: f64, a23: f64) -> Self {
        Self([[a11, a12, a13], [a12, a22, a23], [a13, a23, a33]])
    }

    /// Isotropic plane tensor `[[2mu+l, l, 0], [l, 2mu+l, 0], [0, 0, mu]]`.
    pub fn isotropic(lambda: f64, mu: f64) -> Self {
        let d = 2.0 * mu + lambda;
        Self::symmetric(d, d, mu, lambda, 0.0, 0.0)
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let a = &self.0;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
        ]
    }

    pub fn quad_form(&self, v: [f64; 3]) -> f64 {
        let w = self.apply(v);
        w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Self {
        let a = &self.0;
        Self([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    pub fn symmetrised(&self) -> Self {
        (*self + self.transpose()) * 0.5
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let a = &self.0;
        let scale = self.frobenius_norm().max(1.0);
        (a[0][1] - a[1][0]).abs() <= tol * scale
            && (a[0][2] - a[2][0]).abs() <= tol * scale
            && (a[1][2] - a[2][1]).abs() <= tol * scale
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn adjugate(&self) -> Self {
        let [[a, b, c], [d, e, f], [g, h, i]] = self.0;
        Self([
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let [[a, b, c], [d, e, f], [g, h, i]] = self.0;
        a * (e * i - f * h) + b * (f * g - d * i) + c * (d * h - e * g)
    }

    /// Inverse through `adj(C) / det(C)`.
    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        let norm = self.frobenius_norm();
        if !det.is_finite() || det.abs() <= 1e-14 * norm * norm * norm || norm == 0.0 {
            return Err(Error::SingularTensor { det });
        }
        Ok(self.adjugate() * (1.0 / det))
    }

    /// Smallest eigenvalue of the symmetric part (closed-form cubic roots).
    pub fn min_eigenvalue(&self) -> f64 {
        symmetric_eigenvalues(&self.symmetrised().0)[0]
    }
}

impl Add for VoigtTensor {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (row, r) in out.iter_mut().zip(rhs.0.iter()) {
            for (x, y) in row.iter_mut().zip(r.iter()) {
                *x += y;
            }
        }
        Self(out)
    }
}

impl Sub for VoigtTensor {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + rhs * -1.0
    }
}

impl Mul<f64> for VoigtTensor {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        let mut out = self.0;
        out.iter_mut().flatten().for_each(|x| *x *= s);
        Self(out)
    }
}

impl Index<(usize, usize)> for VoigtTensor {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

/// Ascending eigenvalues of a symmetric 3×3 matrix.
fn symmetric_eigenvalues(a: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut d = [a[0][0], a[1][1], a[2][2]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = *a;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (a[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let r = (VoigtTensor(b).determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e3, e2, e1]
}

pub fn base_tensor(lame: &LameCoefficients) -> VoigtTensor {
    VoigtTensor::isotropic(lame.lambda, lame.mu)
}

/// Effective Lamé pair of the composite saturating the Hashin–Shtrikman
/// bounds for a material/void mixture of solid fraction `theta_bar`.
pub fn hashin_shtrikman_moduli(lame: &LameCoefficients, theta_bar: f64) -> Result<(f64, f64)> {
    if !(theta_bar > 0.0 && theta_bar <= 1.0) {
        return Err(Error::invalid(format!("theta_bar must lie in (0, 1], got {theta_bar}")));
    }
    let (l, m) = (lame.lambda, lame.mu);
    let void = 1.0 - theta_bar;
    let shear_den = m + l + void * (3.0 * m + l);
    let mu_eff = theta_bar * m * (m + l) / shear_den;
    let lambda_eff =
        theta_bar * m * (m + l) * (l + 2.0 * void * m) / (shear_den * (m + void * (m + l)));
    Ok((lambda_eff, mu_eff))
}

pub fn hashin_shtrikman_tensor(lame: &LameCoefficients, theta_bar: f64) -> Result<VoigtTensor> {
    let (lambda_eff, mu_eff) = hashin_shtrikman_moduli(lame, theta_bar)?;
    Ok(VoigtTensor::isotropic(lambda_eff, mu_eff))
}

/// Eigenpairs of a plane stress tensor.
///
/// `values[0]` carries the larger magnitude. Eigenvectors are unit-norm with
/// their first nonzero component positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StressEigen {
    pub values: [f64; 2],
    pub vectors: [[f64; 2]; 2],
}

impl StressEigen {
    /// `|lambda1| + |lambda2|`.
    pub fn magnitude_sum(&self) -> f64 {
        self.values[0].abs() + self.values[1].abs()
    }
}

fn canonical_sign(v: [f64; 2]) -> [f64; 2] {
    let flip = if v[0] != 0.0 { v[0] < 0.0 } else { v[1] < 0.0 };
    if flip {
        [-v[0], -v[1]]
    } else {
        v
    }
}

pub fn eigen_2x2_symmetric(s11: f64, s22: f64, s12: f64) -> StressEigen {
    let mean = 0.5 * (s11 + s22);
    let half_diff = 0.5 * (s11 - s22);
    let radius = half_diff.hypot(s12);
    if radius == 0.0 {
        return StressEigen { values: [mean, mean], vectors: [[1.0, 0.0], [0.0, 1.0]] };
    }
    let phi = 0.5 * s12.atan2(half_diff);
    let (sin, cos) = phi.sin_cos();
    let major = (mean + radius, canonical_sign([cos, sin]));
    let minor = (mean - radius, canonical_sign([-sin, cos]));
    let (first, second) = if major.0.abs() >= minor.0.abs() { (major, minor) } else { (minor, major) };
    StressEigen { values: [first.0, second.0], vectors: [first.1, second.1] }
}

/// Volume fractions of the two lamination directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaminateProportions {
    pub m1: f64,
    pub m2: f64,
}

pub fn laminate_proportions(eig: &StressEigen) -> LaminateProportions {
    let (a1, a2) = (eig.values[0].abs(), eig.values[1].abs());
    let sum = a1 + a2;
    if sum == 0.0 {
        return LaminateProportions { m1: 0.5, m2: 0.5 };
    }
    let m1 = a2 / sum;
    LaminateProportions { m1, m2: 1.0 - m1 }
}

/// Degenerate Hooke's law of the laminate layer normal to `v`.
pub fn laminate_phase_tensor(lame: &LameCoefficients, v: [f64; 2]) -> Result<VoigtTensor> {
    let norm = v[0].hypot(v[1]);
    if !((norm - 1.0).abs() <= 1e-10) {
        return Err(Error::invalid(format!("lamination direction must be unit, |v| = {norm}")));
    }
    let (l, m) = (lame.lambda, lame.mu);
    let d = 2.0 * m + l;
    let c = (m + l) / (m * d);
    let (v1s, v2s) = (v[0] * v[0], v[1] * v[1]);
    let p = d * v1s + l * v2s;
    let q = l * v1s + d * v2s;
    let s = 2.0 * m * v[0] * v[1];

    let a11 = d - (d * d * v1s + l * l * v2s) / m + c * p * p;
    let a22 = d - (l * l * v1s + d * d * v2s) / m + c * q * q;
    let a33 = m - m * m / m + c * s * s;
    let a12 = l - l * d / m + c * q * p;
    let a23 = -(m + l) * s / m + c * q * s;
    let a13 = -(m + l) * s / m + c * p * s;
    Ok(VoigtTensor::symmetric(a11, a22, a33, a12, a13, a23))
}

/// Homogenised elasticity tensor of a rank-2 sequential laminate:
/// `[A*]^-1 = A^-1 + (1 - theta)/theta · [m1 Ac1 + m2 Ac2]^-1`.
pub fn homogenised_tensor(
    theta: f64,
    props: &LaminateProportions,
    ac1: &VoigtTensor,
    ac2: &VoigtTensor,
    base: &VoigtTensor,
) -> Result<VoigtTensor> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::invalid(format!("density must lie in (0, 1], got {theta}")));
    }
    if theta == 1.0 {
        return Ok(*base);
    }
    let mut combo = *ac1 * props.m1 + *ac2 * props.m2;
    let norm = combo.frobenius_norm();
    if combo.determinant().abs() <= SINGULAR_REL_TOL * norm.powi(3) {
        let shift = LAMINATE_REGULARISATION * combo.trace() / 3.0;
        combo = combo + VoigtTensor::IDENTITY * shift;
    }
    let det = combo.determinant();
    if !(det.is_finite() && det > 0.0) {
        return Err(Error::SingularCombination { det });
    }
    let combo_inv = combo.adjugate() * (1.0 / det);
    let compliance = base.inverse()? + combo_inv * ((1.0 - theta) / theta);
    Ok(compliance.inverse()?.symmetrised())
}

/// Homogenised tensor of the laminate aligned with a given stress state.
pub fn homogenised_from_stress(
    lame: &LameCoefficients,
    theta: f64,
    eig: &StressEigen,
) -> Result<VoigtTensor> {
    let base = base_tensor(lame);
    let props = laminate_proportions(eig);
    let ac1 = laminate_phase_tensor(lame, eig.vectors[0])?;
    let ac2 = laminate_phase_tensor(lame, eig.vectors[1])?;
    homogenised_tensor(theta, &props, &ac1, &ac2, &base)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("penalty gamma must be positive, got {gamma}")))
    }
}

/// Optimal local density for penalty `gamma`, clipped to `[THETA_MIN, 1]`.
pub fn optimal_theta(eig: &StressEigen, gamma: f64, lame: &LameCoefficients) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(theta_from_magnitude(eig.magnitude_sum(), lame.density_factor() / gamma.sqrt()))
}

#[inline]
fn theta_from_magnitude(magnitude: f64, scale: f64) -> f64 {
    (scale * magnitude).min(1.0).max(THETA_MIN)
}

/// Cosine penalisation pushing densities towards 0 or 1.
pub fn penalise_theta(theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("density must lie in [0, 1], got {theta}")));
    }
    Ok((0.5 * (1.0 - (PI * theta).cos())).max(THETA_MIN))
}

pub const GAMMA_LOWER: f64 = 1e-9;
pub const GAMMA_UPPER: f64 = 1e9;

/// Penalty parameter for which the area-weighted mean of the optimal
/// densities hits `target_volume`, by bisection on `log gamma`.
pub fn find_gamma_for_volume(
    stress_field: &[StressEigen],
    lame: &LameCoefficients,
    target_volume: f64,
    element_areas: &[f64],
) -> Result<f64> {
    if !(target_volume > 0.0 && target_volume < 1.0) {
        return Err(Error::invalid(format!("target volume must lie in (0, 1), got {target_volume}")));
    }
    if stress_field.len() != element_areas.len() {
        return Err(Error::DimensionMismatch {
            expected: element_areas.len(),
            actual: stress_field.len(),
        });
    }
    let magnitudes: Vec<f64> = stress_field.iter().map(StressEigen::magnitude_sum).collect();
    if magnitudes.iter().all(|&m| m == 0.0) {
        return Err(Error::invalid("stress field vanishes everywhere"));
    }
    let total_area: f64 = element_areas.iter().sum();
    let factor = lame.density_factor();
    let mean_density = |log_gamma: f64| {
        let scale = factor * (-0.5 * log_gamma).exp();
        magnitudes
            .iter()
            .zip(element_areas)
            .map(|(&m, &a)| a * theta_from_magnitude(m, scale))
            .sum::<f64>()
            / total_area
    };

    let (mut lo, mut hi) = (GAMMA_LOWER.ln(), GAMMA_UPPER.ln());
    if mean_density(lo) < target_volume {
        return Ok(GAMMA_LOWER);
    }
    if mean_density(hi) > target_volume {
        return Err(Error::NotBracketed { target: target_volume });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = mean_density(mid);
        if (v - target_volume).abs() <= 1e-10 {
            return Ok(mid.exp());
        }
        if v > target_volume {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
