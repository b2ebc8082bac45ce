//! Error metrics, dataset splits and surrogate-versus-reference
//! optimisation comparisons.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::ElasticSolver;
use crate::nn::{Architecture, NetworkModel};
use crate::paramspace::{lift_to_triangles, Dataset, DatasetEntry, ParameterPoint};
use crate::topopt::{optimise_surrogate_seeded, OptimiserConfig};
use crate::voigt::LameCoefficients;

fn check_pairs(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch { expected: truths.len(), actual: predictions.len() });
    }
    if truths.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    for (p, t) in predictions.iter().zip(truths) {
        if p.len() != t.len() {
            return Err(Error::DimensionMismatch { expected: t.len(), actual: p.len() });
        }
    }
    Ok(())
}

/// Per-entry `||p - t||^2 / ||t||^2`.
pub fn squared_errors(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_pairs(predictions, truths)?;
    predictions
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (p, t))| {
            let den: f64 = t.iter().map(|x| x * x).sum();
            if den == 0.0 {
                return Err(Error::ZeroNormTruth(i));
            }
            Ok(p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / den)
        })
        .collect()
}

/// Per-entry `||p - t||_1 / ||t||_1`.
pub fn absolute_errors(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_pairs(predictions, truths)?;
    predictions
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(i, (p, t))| {
            let den: f64 = t.iter().map(|x| x.abs()).sum();
            if den == 0.0 {
                return Err(Error::ZeroNormTruth(i));
            }
            Ok(p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / den)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Relative mean squared error.
pub fn rmse(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    squared_errors(predictions, truths).map(|e| mean(&e))
}

/// Relative mean absolute error, with the ℓ1 norm on each entry.
pub fn rmae(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    absolute_errors(predictions, truths).map(|e| mean(&e))
}

/// Dataset ids of the three disjoint subsets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitSpec {
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<u32> = self.train.iter().chain(&self.validation).chain(&self.test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }

    /// Positions of the ids in `dataset.entries`.
    pub fn indices(&self, dataset: &Dataset) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let find = |ids: &[u32]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|id| {
                    dataset
                        .entries
                        .iter()
                        .position(|e| e.id == *id)
                        .ok_or_else(|| Error::invalid(format!("id {id} not in dataset")))
                })
                .collect()
        };
        Ok((find(&self.train)?, find(&self.validation)?, find(&self.test)?))
    }
}

fn shuffled_ids(ids: impl IntoIterator<Item = u32>, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut v: Vec<u32> = ids.into_iter().collect();
    v.sort_unstable();
    v.shuffle(rng);
    v
}

/// `k` independent random 80/10/10 splits; split `i` uses seed `seed + i`.
pub fn make_crossval_splits(dataset: &Dataset, k: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    let n = dataset.entries.len();
    let n_val = (0.1 * n as f64).round() as usize;
    let n_train = (0.8 * n as f64).round() as usize;
    if n_val == 0 || n_train + n_val >= n {
        return Err(Error::DatasetTooSmall(format!("{n} entries cannot be split 80/10/10")));
    }
    Ok((0..k)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let ids = shuffled_ids(dataset.entries.iter().map(|e| e.id), &mut rng);
            SplitSpec {
                train: ids[..n_train].to_vec(),
                validation: ids[n_train..n_train + n_val].to_vec(),
                test: ids[n_train + n_val..].to_vec(),
            }
        })
        .collect())
}

/// Which entries an extrapolation split withholds from training.
#[derive(Clone, Debug, PartialEq)]
pub enum HeldOutRule {
    /// Every angle at positions with `eta1` in the closed range.
    Positions { eta1: (f64, f64) },
    /// Every position for angles with `eta2` in the closed range.
    Angles { eta2: (f64, f64) },
    /// The rectangle in parameter space.
    Region { eta1: (f64, f64), eta2: (f64, f64) },
}

impl HeldOutRule {
    pub fn matches(&self, p: &ParameterPoint) -> bool {
        let inside = |x: f64, (a, b): (f64, f64)| x >= a - 1e-9 && x <= b + 1e-9;
        match *self {
            HeldOutRule::Positions { eta1 } => inside(p.eta1, eta1),
            HeldOutRule::Angles { eta2 } => inside(p.eta2, eta2),
            HeldOutRule::Region { eta1, eta2 } => inside(p.eta1, eta1) && inside(p.eta2, eta2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtrapolationSpec {
    pub name: String,
    pub rule: HeldOutRule,
}

/// Test set = entries matching the rule; the rest is split 8:1 into
/// training and validation.
pub fn make_extrapolation_split(dataset: &Dataset, spec: &ExtrapolationSpec, seed: u64) -> Result<SplitSpec> {
    let (test, rest): (Vec<&DatasetEntry>, Vec<&DatasetEntry>) =
        dataset.entries.iter().partition(|e| spec.rule.matches(&e.params));
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let n_val = (rest.len() as f64 / 9.0).round() as usize;
    if rest.len() < 2 || n_val == 0 {
        return Err(Error::DatasetTooSmall(format!("{} entries left for training", rest.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = shuffled_ids(rest.iter().map(|e| e.id), &mut rng);
    let n_train = ids.len() - n_val;
    let mut test: Vec<u32> = test.iter().map(|e| e.id).collect();
    test.sort_unstable();
    Ok(SplitSpec { train: ids[..n_train].to_vec(), validation: ids[n_train..].to_vec(), test })
}

/// Position-block, angle-block and region splits on the strided desk grid.
pub fn desk_extrapolation_specs() -> Vec<ExtrapolationSpec> {
    let spec = |name: &str, rule| ExtrapolationSpec { name: name.into(), rule };
    vec![
        spec("positions-bottom-centre", HeldOutRule::Positions { eta1: (0.25, 0.35) }),
        spec("positions-right-upper", HeldOutRule::Positions { eta1: (1.2, 1.45) }),
        spec("angles-upward", HeldOutRule::Angles { eta2: (0.0, 10.0) }),
        spec("angles-horizontal", HeldOutRule::Angles { eta2: (25.0, 35.0) }),
        spec("angles-downward", HeldOutRule::Angles { eta2: (50.0, 59.0) }),
        spec("region-top", HeldOutRule::Region { eta1: (1.95, 2.3), eta2: (20.0, 40.0) }),
    ]
}

/// What the model produces for entry `e`: the parameter path for predictive
/// models, otherwise the reconstruction that needs the true density.
pub fn model_output(model: &NetworkModel, e: &DatasetEntry) -> Result<Vec<f64>> {
    let eta = [e.params.eta1, e.params.eta2];
    match model.architecture {
        a if a.is_predictive() => model.predict_theta(eta[0], eta[1]),
        Architecture::Effd => model.forward(Some(eta), Some(&e.theta))?.theta_eta.ok_or(Error::invalid("no output")),
        _ => model.forward(None, Some(&e.theta))?.theta_ae.ok_or(Error::invalid("no output")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub rmae: f64,
    /// `(id, squared error ratio, absolute error ratio)`.
    pub per_entry: Vec<(u32, f64, f64)>,
    pub active_latent: usize,
    pub training_seconds: f64,
}

impl MetricReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "id,rel_sq_error,rel_abs_error")?;
        for (id, s, a) in &self.per_entry {
            writeln!(w, "{id},{s:.10e},{a:.10e}")?;
        }
        Ok(())
    }
}

pub fn evaluate_model(model: &NetworkModel, dataset: &Dataset, ids: &[u32]) -> Result<MetricReport> {
    let entries: Vec<&DatasetEntry> = ids
        .iter()
        .map(|id| dataset.get(*id).ok_or_else(|| Error::invalid(format!("id {id} not in dataset"))))
        .collect::<Result<_>>()?;
    let preds: Vec<Vec<f64>> = entries.iter().map(|e| model_output(model, e)).collect::<Result<_>>()?;
    let truths: Vec<Vec<f64>> = entries.iter().map(|e| e.theta.clone()).collect();
    let sq = squared_errors(&preds, &truths)?;
    let ab = absolute_errors(&preds, &truths)?;
    let etas: Vec<[f64; 2]> = entries.iter().map(|e| [e.params.eta1, e.params.eta2]).collect();
    Ok(MetricReport {
        rmse: mean(&sq),
        rmae: mean(&ab),
        per_entry: ids.iter().zip(sq.iter().zip(&ab)).map(|(&id, (&s, &a))| (id, s, a)).collect(),
        active_latent: model.count_active_latent(&etas, &truths)?,
        training_seconds: 0.0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub id: u32,
    pub eta1: f64,
    pub eta2: f64,
    pub j0_eta: f64,
    pub j_opt_eta: f64,
    pub j_opt_ref: f64,
    pub v0_eta: f64,
    pub v_opt_eta: f64,
    pub v_opt_ref: f64,
    pub n_iter_eta: usize,
    pub n_iter_ref: usize,
}

impl ComparisonRow {
    pub fn iteration_reduction_percent(&self) -> f64 {
        100.0 * (1.0 - self.n_iter_eta as f64 / self.n_iter_ref as f64)
    }

    pub fn compliance_discrepancy(&self) -> f64 {
        (self.j_opt_eta - self.j_opt_ref).abs() / self.j_opt_ref
    }
}

/// Runs the seeded optimiser on each entry, seeding with `predict`, and
/// tabulates it against the stored reference optimum.
pub fn compare_optimisers_with(
    solver: &ElasticSolver,
    lame: &LameCoefficients,
    config: &OptimiserConfig,
    dataset: &Dataset,
    ids: &[u32],
    predict: impl Fn(&DatasetEntry) -> Result<Vec<f64>>,
) -> Result<Vec<ComparisonRow>> {
    let mesh = solver.mesh();
    ids.iter()
        .map(|&id| {
            let e = dataset.get(id).ok_or_else(|| Error::invalid(format!("id {id} not in dataset")))?;
            let seed = lift_to_triangles(mesh, &predict(e)?)?;
            let load = e.params.boundary_load(mesh)?;
            let trace = optimise_surrogate_seeded(solver, lame, &load, config, &seed)?;
            Ok(ComparisonRow {
                id,
                eta1: e.params.eta1,
                eta2: e.params.eta2,
                j0_eta: trace.initial_compliance(),
                j_opt_eta: trace.final_compliance(),
                j_opt_ref: e.j_opt,
                v0_eta: trace.initial_volume(),
                v_opt_eta: trace.final_volume(),
                v_opt_ref: e.v_opt,
                n_iter_eta: trace.total_iterations(),
                n_iter_ref: e.n_iterations as usize,
            })
        })
        .collect()
}

pub fn compare_optimisers(
    solver: &ElasticSolver,
    lame: &LameCoefficients,
    config: &OptimiserConfig,
    dataset: &Dataset,
    model: &NetworkModel,
    ids: &[u32],
) -> Result<Vec<ComparisonRow>> {
    if !model.architecture.is_predictive() {
        return Err(Error::NonPredictive("seeding needs a model that predicts from parameters"));
    }
    compare_optimisers_with(solver, lame, config, dataset, ids, |e| model.predict_theta(e.params.eta1, e.params.eta2))
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "id,eta1,eta2,J0_eta,Jopt_eta,Jopt_ref,V0_eta,Vopt_eta,Vopt_ref,n_iter_eta,n_iter_ref,reduction_percent")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.2}",
            r.id,
            r.eta1,
            r.eta2,
            r.j0_eta,
            r.j_opt_eta,
            r.j_opt_ref,
            r.v0_eta,
            r.v_opt_eta,
            r.v_opt_ref,
            r.n_iter_eta,
            r.n_iter_ref,
            r.iteration_reduction_percent()
        )?;
    }
    Ok(())
}

/// Fixed-width table with the same columns as the CSV.
pub fn write_comparison_table<W: Write>(rows: &[ComparisonRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "{:>5} {:>5} {:>4} | {:>8} {:>8} {:>8} | {:>6} {:>6} {:>6} | {:>5} {:>5} {:>7}",
        "id", "eta1", "eta2", "J0_eta", "Jopt_eta", "Jopt_ref", "V0_eta", "V_eta", "V_ref", "n_eta", "n_ref", "red.%"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:>5} {:>5.2} {:>4} | {:>8.4} {:>8.4} {:>8.4} | {:>6.3} {:>6.3} {:>6.3} | {:>5} {:>5} {:>7.1}",
            r.id,
            r.eta1,
            r.eta2,
            r.j0_eta,
            r.j_opt_eta,
            r.j_opt_ref,
            r.v0_eta,
            r.v_opt_eta,
            r.v_opt_ref,
            r.n_iter_eta,
            r.n_iter_ref,
            r.iteration_reduction_percent()
        )?;
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let red = rows.iter().map(ComparisonRow::iteration_reduction_percent).sum::<f64>() / n;
        let disc = rows.iter().map(ComparisonRow::compliance_discrepancy).sum::<f64>() / n;
        writeln!(w, "mean iteration reduction {red:.1}%, mean compliance discrepancy {:.2}%", 100.0 * disc)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramspace::enumerate_strided;

    #[test]
    fn metric_examples() {
        let t = vec![vec![1.0, 2.0, 3.0]];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(rmae(&t, &t).unwrap(), 0.0);
        let p = vec![vec![2.0, 4.0, 6.0]];
        assert!((rmse(&p, &t).unwrap() - 1.0).abs() < 1e-15);
        let ones = vec![vec![1.0; 5]];
        let half = vec![vec![0.5; 5]];
        assert!((rmae(&half, &ones).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn metric_errors() {
        let zero = vec![vec![0.0; 3]];
        assert!(matches!(rmse(&zero, &zero), Err(Error::ZeroNormTruth(0))));
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyTestSet)));
        assert!(rmse(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    fn dataset(n_points: usize) -> Dataset {
        let mut d = Dataset::new(2, 1);
        for (id, p) in enumerate_strided(1, 1).into_iter().take(n_points) {
            d.entries.push(DatasetEntry { id, params: p, theta: vec![0.5, 0.5], j_opt: 1.0, v_opt: 0.4, n_iterations: 10 });
        }
        d
    }

    #[test]
    fn crossval_sizes() {
        let s = make_crossval_splits(&dataset(100), 2, 3).unwrap();
        assert_eq!((s[0].train.len(), s[0].validation.len(), s[0].test.len()), (80, 10, 10));
        assert!(s.iter().all(SplitSpec::is_disjoint));
        assert_ne!(s[0], s[1]);
        assert_eq!(make_crossval_splits(&dataset(100), 2, 3).unwrap(), s);
        let s = make_crossval_splits(&dataset(108), 1, 0).unwrap();
        assert_eq!((s[0].train.len(), s[0].validation.len(), s[0].test.len()), (86, 11, 11));
        assert!(make_crossval_splits(&dataset(4), 1, 0).is_err());
    }

    #[test]
    fn extrapolation_examples() {
        let full = {
            let mut d = Dataset::new(2, 1);
            for (id, p) in enumerate_strided(1, 1) {
                d.entries.push(DatasetEntry { id, params: p, theta: vec![0.5, 0.5], j_opt: 1.0, v_opt: 0.4, n_iterations: 10 });
            }
            d
        };
        let one_position = ExtrapolationSpec { name: "p".into(), rule: HeldOutRule::Positions { eta1: (0.45, 0.45) } };
        let s = make_extrapolation_split(&full, &one_position, 1).unwrap();
        assert_eq!(s.test.len(), 60);
        assert!(s.is_disjoint());
        assert_eq!(s.train.len() + s.validation.len(), 2640);
        let one_angle = ExtrapolationSpec { name: "a".into(), rule: HeldOutRule::Angles { eta2: (7.0, 7.0) } };
        assert_eq!(make_extrapolation_split(&full, &one_angle, 1).unwrap().test.len(), 45);
        let nothing = ExtrapolationSpec {
            name: "r".into(),
            rule: HeldOutRule::Region { eta1: (0.62, 0.68), eta2: (0.0, 59.0) },
        };
        assert!(matches!(make_extrapolation_split(&full, &nothing, 1), Err(Error::EmptyTestSet)));
    }
}
