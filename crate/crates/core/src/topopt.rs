//! The two-phase homogenisation optimiser and its surrogate-seeded variant.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem::{
    compliance_boundary, post_process_stress, BoundaryLoad, DensityField, ElasticSolver, Stress, TensorField,
};
use crate::voigt::{
    eigen_2x2_symmetric, find_gamma_for_volume, hashin_shtrikman_tensor, homogenised_from_stress, optimal_theta,
    penalise_theta, LameCoefficients, StressEigen,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    /// Re-solve for the penalty each update so the raw densities meet the
    /// target volume.
    VolumeBisection,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimiserConfig {
    pub xi_j: f64,
    pub xi_v: f64,
    pub xi_j_tilde: f64,
    pub xi_v_tilde: f64,
    pub theta_bar: f64,
    pub target_volume: f64,
    pub max_iterations_per_phase: usize,
    pub gamma_mode: GammaMode,
}

impl Default for OptimiserConfig {
    fn default() -> Self {
        Self {
            xi_j: 0.5e-2,
            xi_v: 0.5e-2,
            xi_j_tilde: 0.5e-4,
            xi_v_tilde: 0.5e-4,
            theta_bar: 0.4,
            target_volume: 0.4,
            max_iterations_per_phase: 500,
            gamma_mode: GammaMode::VolumeBisection,
        }
    }
}

impl OptimiserConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !(positive(self.xi_j_tilde) && self.xi_j_tilde <= self.xi_j) {
            return Err(Error::invalid("need 0 < xi_j_tilde <= xi_j"));
        }
        if !(positive(self.xi_v_tilde) && self.xi_v_tilde <= self.xi_v) {
            return Err(Error::invalid("need 0 < xi_v_tilde <= xi_v"));
        }
        if !(self.theta_bar > 0.0 && self.theta_bar <= 1.0) {
            return Err(Error::invalid(format!("theta_bar must lie in (0, 1], got {}", self.theta_bar)));
        }
        if !(self.target_volume > 0.0 && self.target_volume < 1.0) {
            return Err(Error::invalid(format!("target volume must lie in (0, 1), got {}", self.target_volume)));
        }
        if self.max_iterations_per_phase == 0 {
            return Err(Error::invalid("max_iterations_per_phase must be positive"));
        }
        if let GammaMode::Fixed(g) = self.gamma_mode {
            if !positive(g) {
                return Err(Error::invalid(format!("fixed gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Free intermediate densities.
    Relaxed,
    Penalised,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Relaxed => "relaxed",
            Phase::Penalised => "penalised",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub phase: Phase,
    pub compliance: f64,
    pub volume: f64,
    /// Penalty used for the update that followed this evaluation.
    pub gamma: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct OptimisationTrace {
    pub records: Vec<IterationRecord>,
    pub density: DensityField,
    pub tensors: TensorField,
    pub relaxed_iterations: usize,
    pub penalised_iterations: usize,
}

impl OptimisationTrace {
    pub fn total_iterations(&self) -> usize {
        self.relaxed_iterations + self.penalised_iterations
    }

    pub fn initial_compliance(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.compliance)
    }

    pub fn initial_volume(&self) -> f64 {
        self.records.first().map_or(f64::NAN, |r| r.volume)
    }

    pub fn final_compliance(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.compliance)
    }

    pub fn final_volume(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.volume)
    }

    /// Fraction of elements with density strictly inside `(lo, hi)`.
    pub fn intermediate_fraction(&self, lo: f64, hi: f64) -> f64 {
        let v = self.density.values();
        v.iter().filter(|&&t| t > lo && t < hi).count() as f64 / v.len() as f64
    }

    /// One row per evaluation. Wall-clock times stay in the records so the
    /// file is identical across repeated runs.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,phase,compliance,volume,gamma")?;
        for (i, r) in self.records.iter().enumerate() {
            writeln!(w, "{i},{},{:.12e},{:.12e},{:.6e}", r.phase.label(), r.compliance, r.volume, r.gamma)?;
        }
        Ok(())
    }
}

/// `true` while either relative increment is above its tolerance.
pub fn stopping_test(
    j_curr: f64,
    j_prev: Option<f64>,
    v_curr: f64,
    v_prev: Option<f64>,
    tol_j: f64,
    tol_v: f64,
) -> bool {
    match (j_prev, v_prev) {
        (Some(jp), Some(vp)) => (j_curr - jp).abs() > tol_j * j_curr || (v_curr - vp).abs() > tol_v * v_curr,
        _ => true,
    }
}

struct Driver<'a> {
    solver: &'a ElasticSolver,
    lame: LameCoefficients,
    load: &'a BoundaryLoad,
    config: &'a OptimiserConfig,
    records: Vec<IterationRecord>,
}

struct Update {
    theta: DensityField,
    tensors: TensorField,
    gamma: f64,
}

impl Driver<'_> {
    fn stress(&self, tensors: &TensorField) -> Result<(Vec<Stress>, f64)> {
        let mesh = self.solver.mesh();
        let u = self.solver.solve(tensors, self.load)?;
        let stress = post_process_stress(mesh, tensors, &u)?;
        Ok((stress, compliance_boundary(mesh, self.load, &u)))
    }

    fn gamma(&self, eig: &[StressEigen]) -> Result<f64> {
        match self.config.gamma_mode {
            GammaMode::VolumeBisection => {
                find_gamma_for_volume(eig, &self.lame, self.config.target_volume, self.solver.mesh().areas())
            }
            GammaMode::Fixed(g) => Ok(g),
        }
    }

    /// New densities from the stress (optionally penalised) and the matching
    /// laminate tensors.
    fn update(&self, stress: &[Stress], penalise: bool) -> Result<Update> {
        let eig: Vec<StressEigen> = stress.iter().map(|s| eigen_2x2_symmetric(s[0], s[1], s[2])).collect();
        let gamma = self.gamma(&eig)?;
        let mut theta = Vec::with_capacity(eig.len());
        let mut tensors = Vec::with_capacity(eig.len());
        for e in &eig {
            let mut t = optimal_theta(e, gamma, &self.lame)?;
            if penalise {
                t = penalise_theta(t)?;
            }
            tensors.push(homogenised_from_stress(&self.lame, t, e)?);
            theta.push(t);
        }
        Ok(Update { theta: DensityField::new(theta)?, tensors: TensorField(tensors), gamma })
    }

    fn tensors_for(&self, stress: &[Stress], theta: &DensityField) -> Result<TensorField> {
        stress
            .iter()
            .zip(theta.values())
            .map(|(s, &t)| homogenised_from_stress(&self.lame, t, &eigen_2x2_symmetric(s[0], s[1], s[2])))
            .collect::<Result<Vec<_>>>()
            .map(TensorField)
    }

    fn volume(&self, theta: &DensityField) -> Result<f64> {
        crate::fem::volume_fraction(self.solver.mesh(), theta)
    }

    /// Runs one phase from `(theta, tensors)`. Returns the design whose
    /// evaluation passed the stopping test, together with the stress of that
    /// evaluation.
    fn run_phase(
        &mut self,
        phase: Phase,
        mut theta: DensityField,
        mut tensors: TensorField,
    ) -> Result<(DensityField, TensorField, Vec<Stress>, usize)> {
        let (tol_j, tol_v, penalise) = match phase {
            Phase::Relaxed => (self.config.xi_j, self.config.xi_v, false),
            Phase::Penalised => (self.config.xi_j_tilde, self.config.xi_v_tilde, true),
        };
        let mut prev: Option<(f64, f64)> = None;
        for it in 0..self.config.max_iterations_per_phase {
            let start = Instant::now();
            let (stress, j) = self.stress(&tensors)?;
            let v = self.volume(&theta)?;
            if !(j.is_finite() && j > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("non-finite or non-positive compliance {j} in {phase:?} phase")));
            }
            let go_on = stopping_test(j, prev.map(|p| p.0), v, prev.map(|p| p.1), tol_j, tol_v);
            if !go_on {
                self.records.push(IterationRecord { phase, compliance: j, volume: v, gamma: f64::NAN, seconds: start.elapsed().as_secs_f64() });
                return Ok((theta, tensors, stress, it + 1));
            }
            let next = self.update(&stress, penalise)?;
            self.records.push(IterationRecord {
                phase,
                compliance: j,
                volume: v,
                gamma: next.gamma,
                seconds: start.elapsed().as_secs_f64(),
            });
            prev = Some((j, v));
            theta = next.theta;
            tensors = next.tensors;
        }
        Err(Error::NonConvergence { phase: phase.label(), iterations: self.config.max_iterations_per_phase })
    }
}

/// Two-phase optimisation from the uniform Hashin–Shtrikman design.
pub fn optimise_high_fidelity(
    solver: &ElasticSolver,
    lame: &LameCoefficients,
    load: &BoundaryLoad,
    config: &OptimiserConfig,
) -> Result<OptimisationTrace> {
    config.validate()?;
    let n = solver.mesh().num_triangles();
    let mut driver = Driver { solver, lame: *lame, load, config, records: Vec::new() };

    let hs = hashin_shtrikman_tensor(lame, config.theta_bar)?;
    let theta0 = DensityField::clamped(std::iter::repeat_n(config.theta_bar, n));
    let (_, _, stress, relaxed) = driver.run_phase(Phase::Relaxed, theta0, TensorField::uniform(n, hs))?;

    // Handoff: one more density update from the converged relaxed stress,
    // penalised, seeds the second phase.
    let seed = driver.update(&stress, true)?;
    let (density, tensors, _, penalised) = driver.run_phase(Phase::Penalised, seed.theta, seed.tensors)?;
    Ok(OptimisationTrace { records: driver.records, density, tensors, relaxed_iterations: relaxed, penalised_iterations: penalised })
}

/// Penalised-phase optimisation seeded with a predicted density.
///
/// The laminate directions of the seed tensor come from the stress of the
/// uniform Hashin–Shtrikman design.
pub fn optimise_surrogate_seeded(
    solver: &ElasticSolver,
    lame: &LameCoefficients,
    load: &BoundaryLoad,
    config: &OptimiserConfig,
    theta_init: &DensityField,
) -> Result<OptimisationTrace> {
    config.validate()?;
    let n = solver.mesh().num_triangles();
    if theta_init.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: theta_init.len() });
    }
    let mut driver = Driver { solver, lame: *lame, load, config, records: Vec::new() };
    let hs = hashin_shtrikman_tensor(lame, config.theta_bar)?;
    let (stress, _) = driver.stress(&TensorField::uniform(n, hs))?;
    let tensors = driver.tensors_for(&stress, theta_init)?;
    let (density, tensors, _, penalised) = driver.run_phase(Phase::Penalised, theta_init.clone(), tensors)?;
    Ok(OptimisationTrace { records: driver.records, density, tensors, relaxed_iterations: 0, penalised_iterations: penalised })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_examples() {
        assert!(!stopping_test(1.0, Some(1.0), 0.4, Some(0.4), 0.005, 0.005));
        assert!(stopping_test(1.0, Some(1.1), 0.4, Some(0.4), 0.005, 0.005));
        assert!(stopping_test(1.0, None, 0.4, None, 0.005, 0.005));
        // Equality stops: the comparison is strict. 0.5 and 0.25 keep the
        // arithmetic exact.
        assert!(!stopping_test(1.0, Some(1.5), 1.0, Some(1.0), 0.5, 0.5));
        assert!(!stopping_test(1.0, Some(1.0), 1.0, Some(1.25), 0.5, 0.25));
        assert!(stopping_test(1.0, Some(1.0), 0.4, Some(0.5), 0.005, 0.005));
    }

    #[test]
    fn config_validation() {
        assert!(OptimiserConfig::default().validate().is_ok());
        let bad = OptimiserConfig { xi_j_tilde: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimiserConfig { theta_bar: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimiserConfig { gamma_mode: GammaMode::Fixed(-1.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
