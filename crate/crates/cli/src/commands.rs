use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lamopt_core::eval::{
    compare_optimisers, desk_extrapolation_specs, evaluate_model, make_crossval_splits, make_extrapolation_split,
    write_comparison_csv, write_comparison_table, ExtrapolationSpec, SplitSpec,
};
use lamopt_core::export::write_pgm;
use lamopt_core::fem::{ElasticSolver, StructuredMesh, X_MAX, X_MIN, Y_MAX, Y_MIN};
use lamopt_core::nn::{read_model, train, write_model, NetworkDims, NetworkModel, Stage, TrainConfig};
use lamopt_core::paramspace::{
    enumerate_strided, lift_to_triangles, project_to_quads, read_dataset, write_dataset, Dataset, DatasetEntry,
    ParameterPoint,
};
use lamopt_core::pipeline::{generate_dataset, training_set};
use lamopt_core::topopt::{
    optimise_high_fidelity, optimise_surrogate_seeded, GammaMode, OptimisationTrace, OptimiserConfig,
};
use lamopt_core::voigt::LameCoefficients;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::manifest::RunManifest;
use crate::{
    Algo, CliError, Command, DimsChoice, EvaluateArgs, ExportArgs, ExportFormat, GenerateArgs, MeshArgs,
    OptimiserArgs, OptimizeArgs, PredictArgs, TrainArgs,
};

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

pub fn run(command: Command, config: Map<String, Value>) -> CliResult {
    match command {
        Command::GenerateDataset(a) => generate(a, config),
        Command::Train(a) => train_cmd(a, config),
        Command::Predict(a) => predict(a, config),
        Command::Optimize(a) => optimize(a, config),
        Command::Evaluate(a) => evaluate(a, config),
        Command::Export(a) => export(a, config),
    }
}

/// Runs `body`, then writes the manifest whether or not it succeeded.
fn with_manifest(mut manifest: RunManifest, path: &Path, body: impl FnOnce(&mut RunManifest) -> CliResult) -> CliResult {
    let result = body(&mut manifest);
    let error = match &result {
        Ok(()) => None,
        Err(CliError::Usage(m) | CliError::Runtime(m)) => Some(m.as_str()),
    };
    match manifest.write(path, error) {
        Ok(()) => {}
        Err(e) if result.is_ok() => return Err(runtime(format!("cannot write {}: {e}", path.display()))),
        Err(e) => eprintln!("warning: cannot write {}: {e}", path.display()),
    }
    result
}

fn manifest_beside(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

fn create_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult {
    let mut w = BufWriter::new(File::create(path).map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes through a temporary file so an interrupted run leaves the old copy.
fn write_dataset_atomic(path: &Path, dataset: &Dataset) -> CliResult {
    let tmp = path.with_extension("partial");
    write_dataset(&tmp, dataset)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    read_dataset(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> CliResult<NetworkModel> {
    read_model(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn require_predictive(model: &NetworkModel, path: &Path) -> CliResult {
    if model.architecture.is_predictive() {
        Ok(())
    } else {
        Err(usage(format!("{}: {} cannot predict a density from load parameters", path.display(), model.architecture)))
    }
}

fn check_mesh(mesh: &MeshArgs) -> CliResult<StructuredMesh> {
    StructuredMesh::new(mesh.nx, mesh.ny).map_err(|e| usage(e.to_string()))
}

fn optimiser_config(a: &OptimiserArgs) -> CliResult<OptimiserConfig> {
    let config = OptimiserConfig {
        xi_j: a.xi,
        xi_v: a.xi,
        xi_j_tilde: a.xi_tilde,
        xi_v_tilde: a.xi_tilde,
        theta_bar: a.target_volume,
        target_volume: a.target_volume,
        max_iterations_per_phase: a.max_iterations,
        gamma_mode: a.gamma.map_or(GammaMode::VolumeBisection, GammaMode::Fixed),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn parameter_point(eta1: f64, eta2: f64) -> CliResult<ParameterPoint> {
    ParameterPoint::new(eta1, eta2).map_err(|e| usage(e.to_string()))
}

fn check_threshold(t: f64) -> CliResult {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(usage(format!("export threshold must lie in [0, 1], got {t}")))
    }
}

/// `None` for cross-validation, otherwise the named extrapolation split.
fn split_kind(name: &str) -> CliResult<Option<ExtrapolationSpec>> {
    if name == "crossval" {
        return Ok(None);
    }
    let specs = desk_extrapolation_specs();
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    specs
        .into_iter()
        .find(|s| s.name == name)
        .map(Some)
        .ok_or_else(|| usage(format!("unknown split '{name}'; expected crossval or one of {}", names.join(", "))))
}

fn split_for(dataset: &Dataset, kind: &Option<ExtrapolationSpec>, seed: u64) -> CliResult<SplitSpec> {
    Ok(match kind {
        None => make_crossval_splits(dataset, 1, seed)?.swap_remove(0),
        Some(spec) => make_extrapolation_split(dataset, spec, seed)?,
    })
}

fn generate(a: GenerateArgs, config: Map<String, Value>) -> CliResult {
    let mesh = check_mesh(&a.mesh)?;
    let opt = optimiser_config(&a.optimiser)?;
    if a.positions_stride == 0 || a.angles_stride == 0 || a.jobs == 0 || a.checkpoint_every == 0 {
        return Err(usage("strides, jobs and checkpoint interval must be positive"));
    }
    let manifest = RunManifest::new("generate-dataset", config, None);
    with_manifest(manifest, &manifest_beside(&a.output), |m| {
        let (nx, ny) = (a.mesh.nx as u32, a.mesh.ny as u32);
        let mut dataset = if a.output.exists() {
            let d = load_dataset(&a.output)?;
            if (d.nx, d.ny) != (nx, ny) {
                return Err(runtime(format!(
                    "{} holds a {}x{} dataset, requested {nx}x{ny}",
                    a.output.display(),
                    d.nx,
                    d.ny
                )));
            }
            d
        } else {
            Dataset::new(nx, ny)
        };
        let points = enumerate_strided(a.positions_stride, a.angles_stride);
        let todo = points.iter().filter(|(id, _)| dataset.get(*id).is_none()).count();
        eprintln!("{} points, {} already present, {todo} to run on {} thread(s)", points.len(), points.len() - todo, a.jobs);

        let solver = ElasticSolver::new(&mesh)?;
        let lame = LameCoefficients::reference();
        let mut partial = dataset.clone();
        let mut done = 0usize;
        let start = Instant::now();
        let output = a.output.clone();
        let every = a.checkpoint_every;
        let report = generate_dataset(&solver, &lame, &opt, &points, a.jobs, &mut dataset, |id, outcome| {
            done += 1;
            let elapsed = start.elapsed().as_secs_f64();
            match outcome {
                Ok(e) => {
                    eprintln!("[{done}/{todo}] id {id}: J {:.5} V {:.4} in {} iterations ({elapsed:.1}s)", e.j_opt, e.v_opt, e.n_iterations);
                    partial.entries.push(e.clone());
                }
                Err(err) => eprintln!("[{done}/{todo}] id {id}: failed: {err}"),
            }
            if done.is_multiple_of(every) {
                partial.sort_by_id();
                if let Err(CliError::Runtime(msg) | CliError::Usage(msg)) = write_dataset_atomic(&output, &partial) {
                    eprintln!("warning: checkpoint failed: {msg}");
                }
            }
        });

        write_dataset_atomic(&a.output, &dataset)?;
        let csv = a.output.with_extension("csv");
        create_with(&csv, |w| dataset.write_manifest_csv(w))?;
        m.output(&a.output);
        m.output(&csv);
        for (id, msg) in &report.failed {
            m.failure(*id, msg);
        }
        m.summary("entries", dataset.entries.len());
        m.summary("generated", report.generated.len());
        m.summary("skipped", report.skipped.len());
        m.summary("failed", report.failed.len());
        println!(
            "{}: {} entries ({} generated, {} skipped, {} failed)",
            a.output.display(),
            dataset.entries.len(),
            report.generated.len(),
            report.skipped.len(),
            report.failed.len()
        );
        Ok(())
    })
}

fn train_cmd(a: TrainArgs, config: Map<String, Value>) -> CliResult {
    let kind = split_kind(&a.split.split)?;
    let mut cfg = TrainConfig { seed: a.seed, ..TrainConfig::for_architecture(a.arch) };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.patience {
        cfg.early_stop_patience = v;
    }
    for (slot, v) in [
        (&mut cfg.omega_alpha, a.omega_alpha),
        (&mut cfg.omega_r, a.omega_r),
        (&mut cfg.omega_r_i, a.omega_r_i),
        (&mut cfg.omega_r_ii, a.omega_r_ii),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let manifest = RunManifest::new("train", config, Some(a.seed));
    with_manifest(manifest, &manifest_beside(&a.output), |m| {
        let dataset = load_dataset(&a.dataset)?;
        m.input(&a.dataset);
        let split = split_for(&dataset, &kind, a.split.split_seed)?;
        let (tr, va, _) = split.indices(&dataset)?;
        let dims = match a.dims {
            DimsChoice::Scaled => NetworkDims::scaled(dataset.n_t()),
            DimsChoice::Reference => NetworkDims::reference(dataset.n_t()),
        };
        let mut model = NetworkModel::new(a.arch, &dims)?;
        model.init_kaiming_uniform(&mut ChaCha8Rng::seed_from_u64(a.seed));
        model.grid = Some((dataset.nx, dataset.ny));
        eprintln!(
            "training {} ({} parameters) on {} samples, {} for validation",
            a.arch,
            model.parameter_count(),
            tr.len(),
            va.len()
        );
        let start = Instant::now();
        let history = train(&mut model, &training_set(&dataset), &tr, &va, &cfg)?;
        let seconds = start.elapsed().as_secs_f64();

        write_model(&a.output, &model)?;
        let hist = a.output.with_extension("history.csv");
        create_with(&hist, |w| history.write_csv(w))?;
        m.output(&a.output);
        m.output(&hist);
        m.summary("architecture", a.arch.name());
        m.summary("parameters", model.parameter_count());
        m.summary("epochs_run", history.records.len());
        m.summary("training_seconds", seconds);
        for &stage in Stage::stages_for(a.arch) {
            if let Some(r) = history.final_record(stage) {
                m.summary(&format!("{}_best_epoch", stage.label()), r.epoch);
                m.summary(&format!("{}_validation_loss", stage.label()), r.validation_loss);
            }
        }
        print!("{}: {} trained in {seconds:.1}s", a.output.display(), a.arch);
        if !split.test.is_empty() {
            let report = evaluate_model(&model, &dataset, &split.test)?;
            m.summary("test_entries", split.test.len());
            m.summary("test_rmse", report.rmse);
            m.summary("test_rmae", report.rmae);
            m.summary("active_latent", report.active_latent);
            print!(", test rMSE {:.5} rMAE {:.5} on {} entries", report.rmse, report.rmae, split.test.len());
        }
        println!();
        Ok(())
    })
}

fn single_entry_dataset(nx: u32, ny: u32, entry: DatasetEntry) -> Dataset {
    let mut d = Dataset::new(nx, ny);
    d.entries.push(entry);
    d
}

fn predict(a: PredictArgs, config: Map<String, Value>) -> CliResult {
    let point = parameter_point(a.eta1, a.eta2)?;
    check_threshold(a.export_threshold)?;
    let manifest = RunManifest::new("predict", config, None);
    with_manifest(manifest, &manifest_beside(&a.output), |m| {
        let model = load_model(&a.model)?;
        m.input(&a.model);
        require_predictive(&model, &a.model)?;
        let (nx, ny) = model.grid.ok_or_else(|| runtime("checkpoint does not record its grid"))?;
        let theta = model.predict_theta(point.eta1, point.eta2)?;
        let v = theta.iter().sum::<f64>() / theta.len() as f64;
        let pgm = a.output.with_extension("pgm");
        create_with(&pgm, |w| write_pgm(w, &theta, nx as usize, ny as usize, a.export_threshold).map_err(std::io::Error::other))?;
        let entry = DatasetEntry { id: 0, params: point, theta, j_opt: f64::NAN, v_opt: v, n_iterations: 0 };
        write_dataset(&a.output, &single_entry_dataset(nx, ny, entry))?;
        m.output(&a.output);
        m.output(&pgm);
        m.summary("mean_density", v);
        println!("{}: predicted density, mean {v:.4}", a.output.display());
        Ok(())
    })
}

fn optimize(a: OptimizeArgs, config: Map<String, Value>) -> CliResult {
    let point = parameter_point(a.eta1, a.eta2)?;
    let mesh = check_mesh(&a.mesh)?;
    let opt = optimiser_config(&a.optimiser)?;
    check_threshold(a.export_threshold)?;
    match (a.algo, &a.seed_model) {
        (Algo::Surrogate, None) => return Err(usage("--algo surrogate needs --seed-model")),
        (Algo::Hifi, Some(_)) => return Err(usage("--seed-model only applies to --algo surrogate")),
        _ => {}
    }
    fs::create_dir_all(&a.output_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", a.output_dir.display())))?;
    let manifest = RunManifest::new("optimize", config, None);
    with_manifest(manifest, &a.output_dir.join("manifest.json"), |m| {
        let solver = ElasticSolver::new(&mesh)?;
        let lame = LameCoefficients::reference();
        let load = point.boundary_load(&mesh)?;
        let start = Instant::now();
        let trace: OptimisationTrace = match &a.seed_model {
            None => optimise_high_fidelity(&solver, &lame, &load, &opt)?,
            Some(path) => {
                let model = load_model(path)?;
                m.input(path);
                require_predictive(&model, path)?;
                let grid = (a.mesh.nx as u32, a.mesh.ny as u32);
                if model.grid.is_some_and(|g| g != grid) {
                    let (gx, gy) = model.grid.unwrap();
                    return Err(runtime(format!("seed model was trained on a {gx}x{gy} grid, mesh is {}x{}", grid.0, grid.1)));
                }
                let seed = lift_to_triangles(&mesh, &model.predict_theta(point.eta1, point.eta2)?)?;
                optimise_surrogate_seeded(&solver, &lame, &load, &opt, &seed)?
            }
        };
        let seconds = start.elapsed().as_secs_f64();

        let theta = project_to_quads(&mesh, &trace.density)?;
        let trace_path = a.output_dir.join("trace.csv");
        let density_path = a.output_dir.join("density.bin");
        let pgm_path = a.output_dir.join("density.pgm");
        create_with(&trace_path, |w| trace.write_csv(w))?;
        create_with(&pgm_path, |w| {
            write_pgm(w, &theta, a.mesh.nx, a.mesh.ny, a.export_threshold).map_err(std::io::Error::other)
        })?;
        let entry = DatasetEntry {
            id: 0,
            params: point,
            theta,
            j_opt: trace.final_compliance(),
            v_opt: trace.final_volume(),
            n_iterations: trace.total_iterations() as u32,
        };
        write_dataset(&density_path, &single_entry_dataset(a.mesh.nx as u32, a.mesh.ny as u32, entry))?;
        for p in [&trace_path, &density_path, &pgm_path] {
            m.output(p);
        }
        m.summary("initial_compliance", trace.initial_compliance());
        m.summary("final_compliance", trace.final_compliance());
        m.summary("final_volume", trace.final_volume());
        m.summary("relaxed_iterations", trace.relaxed_iterations);
        m.summary("penalised_iterations", trace.penalised_iterations);
        m.summary("seconds", seconds);
        println!(
            "J {:.6} -> {:.6}, V {:.4}, {} relaxed + {} penalised iterations ({seconds:.1}s)",
            trace.initial_compliance(),
            trace.final_compliance(),
            trace.final_volume(),
            trace.relaxed_iterations,
            trace.penalised_iterations
        );
        Ok(())
    })
}

fn evaluate(a: EvaluateArgs, config: Map<String, Value>) -> CliResult {
    if a.split.len() != 1 && a.split.len() != a.model.len() {
        return Err(usage(format!("{} splits for {} models; give one split, or one per model", a.split.len(), a.model.len())));
    }
    let kinds: Vec<Option<ExtrapolationSpec>> = a.split.iter().map(|s| split_kind(s)).collect::<CliResult<_>>()?;
    let opt = optimiser_config(&a.optimiser)?;
    let manifest = RunManifest::new("evaluate", config, None);
    with_manifest(manifest, &manifest_beside(&a.output), |m| {
        let dataset = load_dataset(&a.dataset)?;
        m.input(&a.dataset);
                let solver = if a.compare {
            Some(ElasticSolver::new(&StructuredMesh::new(dataset.nx as usize, dataset.ny as usize)?)?)
        } else {
            None
        };
        let lame = LameCoefficients::reference();
        let mut rows = Vec::new();
        for (k, path) in a.model.iter().enumerate() {
            let model = load_model(path)?;
            m.input(path);
            let j = if a.split.len() == 1 { 0 } else { k };
            let (name, kind) = (&a.split[j], &kinds[j]);
            let split_seed = if kind.is_none() { a.split_seed + k as u64 } else { a.split_seed };
            let split = split_for(&dataset, kind, split_seed)?;
            if split.test.is_empty() {
                return Err(runtime(format!("split {name} has no test entries")));
            }
            let report = evaluate_model(&model, &dataset, &split.test)?;
            rows.push(format!(
                "{},{},{},{split_seed},{},{:.10e},{:.10e},{}",
                path.display(),
                model.architecture.name(),
                name,
                split.test.len(),
                report.rmse,
                report.rmae,
                report.active_latent
            ));
            println!(
                "{}: {} rMSE {:.5} rMAE {:.5} active latent {} on {} test entries",
                path.display(),
                model.architecture,
                report.rmse,
                report.rmae,
                report.active_latent,
                split.test.len()
            );
            let entries = a.output.with_extension(format!("entries-{k}.csv"));
            create_with(&entries, |w| report.write_csv(w))?;
            m.output(&entries);

            if let Some(solver) = &solver {
                if !model.architecture.is_predictive() {
                    eprintln!("{}: {} cannot seed the optimiser, skipping comparison", path.display(), model.architecture);
                    continue;
                }
                let cmp = compare_optimisers(solver, &lame, &opt, &dataset, &model, &split.test)?;
                write_comparison_table(&cmp, std::io::stdout().lock())?;
                let cmp_path = a.output.with_extension(format!("comparison-{k}.csv"));
                create_with(&cmp_path, |w| write_comparison_csv(&cmp, w))?;
                m.output(&cmp_path);
                let mean = cmp.iter().map(|r| r.iteration_reduction_percent()).sum::<f64>() / cmp.len() as f64;
                m.summary(&format!("model_{k}_mean_iteration_reduction_percent"), mean);
            }
        }
        create_with(&a.output, |w| {
            writeln!(w, "model,architecture,split,split_seed,n_test,rmse,rmae,active_latent")?;
            rows.iter().try_for_each(|r| writeln!(w, "{r}"))
        })?;
        m.output(&a.output);
        m.summary("models", a.model.len());
        Ok(())
    })
}

fn write_density_csv(w: &mut impl Write, theta: &[f64], nx: usize, ny: usize) -> std::io::Result<()> {
    writeln!(w, "qx,qy,x,y,theta")?;
    let (hx, hy) = ((X_MAX - X_MIN) / nx as f64, (Y_MAX - Y_MIN) / ny as f64);
    for (q, t) in theta.iter().enumerate() {
        let (qx, qy) = (q % nx, q / nx);
        let (x, y) = (X_MIN + (qx as f64 + 0.5) * hx, Y_MIN + (qy as f64 + 0.5) * hy);
        writeln!(w, "{qx},{qy},{x:.6},{y:.6},{t:.10e}")?;
    }
    Ok(())
}

fn export(a: ExportArgs, config: Map<String, Value>) -> CliResult {
    check_threshold(a.export_threshold)?;
    fs::create_dir_all(&a.output_dir)
        .map_err(|e| runtime(format!("cannot create {}: {e}", a.output_dir.display())))?;
    let manifest = RunManifest::new("export", config, None);
    with_manifest(manifest, &a.output_dir.join("manifest.json"), |m| {
        let dataset = load_dataset(&a.input)?;
        m.input(&a.input);
        let entries: Vec<&DatasetEntry> = match a.id {
            Some(id) => vec![dataset.get(id).ok_or_else(|| runtime(format!("id {id} not in {}", a.input.display())))?],
            None => dataset.entries.iter().collect(),
        };
        let (nx, ny) = (dataset.nx as usize, dataset.ny as usize);
        for e in &entries {
            if matches!(a.format, ExportFormat::Pgm | ExportFormat::Both) {
                let p = a.output_dir.join(format!("entry-{}.pgm", e.id));
                create_with(&p, |w| write_pgm(w, &e.theta, nx, ny, a.export_threshold).map_err(std::io::Error::other))?;
                m.output(p);
            }
            if matches!(a.format, ExportFormat::Csv | ExportFormat::Both) {
                let p = a.output_dir.join(format!("entry-{}.csv", e.id));
                create_with(&p, |w| write_density_csv(w, &e.theta, nx, ny))?;
                m.output(p);
            }
        }
        m.summary("entries", entries.len());
        println!("{}: exported {} entries", a.output_dir.display(), entries.len());
        Ok(())
    })
}
