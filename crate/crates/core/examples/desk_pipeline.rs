//! Desk-scale end-to-end run: 108-entry dataset on a 48 × 24 mesh, FFD and
//! AE training, then seeded versus reference optimisation on the test split.
//!
//! Usage: `cargo run --release --example desk_pipeline -- [dataset-path]`

use std::path::PathBuf;
use std::time::Instant;

use lamopt_core::eval::{compare_optimisers, evaluate_model, make_crossval_splits, write_comparison_table};
use lamopt_core::fem::{ElasticSolver, StructuredMesh};
use lamopt_core::nn::{train, Architecture, NetworkDims, NetworkModel, TrainConfig};
use lamopt_core::paramspace::{enumerate_strided, read_dataset, write_dataset, Dataset};
use lamopt_core::pipeline::{generate_dataset, training_set};
use lamopt_core::topopt::OptimiserConfig;
use lamopt_core::voigt::LameCoefficients;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lamopt_core::Result<()> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "desk_dataset.bin".into()));
    let (nx, ny) = (48, 24);
    let mesh = StructuredMesh::new(nx, ny)?;
    let solver = ElasticSolver::new(&mesh)?;
    let lame = LameCoefficients::reference();
    let config = OptimiserConfig::default();

    let mut dataset = if path.exists() { read_dataset(&path)? } else { Dataset::new(nx as u32, ny as u32) };
    let start = Instant::now();
    let report = generate_dataset(&solver, &lame, &config, &enumerate_strided(5, 5), 1, &mut dataset, |_, _| {});
    eprintln!(
        "dataset: {} generated, {} skipped, {} failed in {:.1}s",
        report.generated.len(),
        report.skipped.len(),
        report.failed.len(),
        start.elapsed().as_secs_f64()
    );
    for (id, msg) in &report.failed {
        eprintln!("failed {id}: {msg}");
    }
    write_dataset(&path, &dataset)?;

    let split = &make_crossval_splits(&dataset, 1, 0)?[0];
    let (tr, va, _) = split.indices(&dataset)?;
    let data = training_set(&dataset);
    let mut models = Vec::new();
    for arch in [Architecture::Ffd, Architecture::Ae] {
        let mut model = NetworkModel::new(arch, &NetworkDims::scaled(dataset.n_t()))?;
        model.init_kaiming_uniform(&mut ChaCha8Rng::seed_from_u64(1));
        let cfg = TrainConfig { seed: 1, ..TrainConfig::for_architecture(arch) };
        let t = Instant::now();
        let history = train(&mut model, &data, &tr, &va, &cfg)?;
        let m = evaluate_model(&model, &dataset, &split.test)?;
        eprintln!(
            "{arch}: epochs {}, test rMSE {:.4}, rMAE {:.4}, active {}, {:.1}s",
            history.records.len(),
            m.rmse,
            m.rmae,
            m.active_latent,
            t.elapsed().as_secs_f64()
        );
        models.push(model);
    }
    let rows = compare_optimisers(&solver, &lame, &config, &dataset, &models[0], &split.test)?;
    write_comparison_table(&rows, std::io::stderr().lock())?;
    Ok(())
}
