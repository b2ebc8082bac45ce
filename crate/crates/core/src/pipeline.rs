//! Dataset generation and conversion of datasets into training samples.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::Result;
use crate::fem::ElasticSolver;
use crate::nn::TrainingSet;
use crate::paramspace::{project_to_quads, Dataset, DatasetEntry, ParameterPoint};
use crate::topopt::{optimise_high_fidelity, OptimisationTrace, OptimiserConfig};
use crate::voigt::LameCoefficients;

/// One high-fidelity run turned into a dataset entry.
pub fn generate_entry(
    solver: &ElasticSolver,
    lame: &LameCoefficients,
    config: &OptimiserConfig,
    id: u32,
    point: ParameterPoint,
) -> Result<(DatasetEntry, OptimisationTrace)> {
    let mesh = solver.mesh();
    let load = point.boundary_load(mesh)?;
    let trace = optimise_high_fidelity(solver, lame, &load, config)?;
    let entry = DatasetEntry {
        id,
        params: point,
        theta: project_to_quads(mesh, &trace.density)?,
        j_opt: trace.final_compliance(),
        v_opt: trace.final_volume(),
        n_iterations: trace.total_iterations() as u32,
    };
    Ok((entry, trace))
}

#[derive(Debug, Default)]
pub struct GenerationReport {
    pub generated: Vec<u32>,
    pub skipped: Vec<u32>,
    pub failed: Vec<(u32, String)>,
}

/// Fills `dataset` with entries for the missing ids among `points`, using
/// `jobs` worker threads. Failed points are reported, not fatal. Entries end
/// up sorted by id. `on_done` runs after each point, under a lock.
pub fn generate_dataset(
    solver: &ElasticSolver,
    lame: &LameCoefficients,
    config: &OptimiserConfig,
    points: &[(u32, ParameterPoint)],
    jobs: usize,
    dataset: &mut Dataset,
    mut on_done: impl FnMut(u32, &Result<DatasetEntry>) + Send,
) -> GenerationReport {
    let mut report = GenerationReport::default();
    let todo: Vec<(u32, ParameterPoint)> = points
        .iter()
        .filter(|(id, _)| {
            let present = dataset.get(*id).is_some();
            if present {
                report.skipped.push(*id);
            }
            !present
        })
        .copied()
        .collect();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(u32, Result<DatasetEntry>)>> = Mutex::new(Vec::new());
    let callback = Mutex::new(&mut on_done);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(todo.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(id, point)) = todo.get(k) else { break };
                let outcome = generate_entry(solver, lame, config, id, point).map(|(e, _)| e);
                (callback.lock().unwrap())(id, &outcome);
                results.lock().unwrap().push((id, outcome));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(id, _)| *id);
    for (id, outcome) in results {
        match outcome {
            Ok(entry) => {
                dataset.entries.push(entry);
                report.generated.push(id);
            }
            Err(e) => report.failed.push((id, e.to_string())),
        }
    }
    dataset.sort_by_id();
    report
}

/// Samples in dataset order; index `i` is `dataset.entries[i]`.
pub fn training_set(dataset: &Dataset) -> TrainingSet {
    TrainingSet {
        etas: dataset.entries.iter().map(|e| [e.params.eta1, e.params.eta2]).collect(),
        thetas: dataset.entries.iter().map(|e| e.theta.clone()).collect(),
    }
}
