use lamopt_core::fem::{BoundaryLoad, BoundarySide, ElasticSolver, StructuredMesh};
use lamopt_core::paramspace::ParameterPoint;
use lamopt_core::topopt::{
    optimise_high_fidelity, optimise_surrogate_seeded, stopping_test, OptimisationTrace, OptimiserConfig,
    Phase,
};
use lamopt_core::voigt::LameCoefficients;
use lamopt_core::Error;

fn run(mesh: &StructuredMesh, eta: (f64, f64)) -> OptimisationTrace {
    let solver = ElasticSolver::new(mesh).unwrap();
    let load = ParameterPoint::new(eta.0, eta.1).unwrap().boundary_load(mesh).unwrap();
    optimise_high_fidelity(&solver, &LameCoefficients::reference(), &load, &OptimiserConfig::default()).unwrap()
}

/// The mesh reflected through `y = 1/2`. Triangle and quad indices are
/// kept, so entry `e` of a field on the mirror is the image of entry `e`.
fn mirrored(mesh: &StructuredMesh) -> StructuredMesh {
    let mut m = mesh.clone();
    for p in &mut m.nodes {
        p[1] = 1.0 - p[1];
    }
    // Reflection reverses orientation; swap v1 and v2 to stay counter-clockwise.
    for t in &mut m.triangles {
        *t = [t[0], t[2], t[1], t[5], t[4], t[3]];
    }
    for e in &mut m.boundary_edges {
        e.side = match e.side {
            BoundarySide::Bottom => BoundarySide::Top,
            BoundarySide::Top => BoundarySide::Bottom,
            s => s,
        };
        e.nodes = [e.nodes[2], e.nodes[1], e.nodes[0]];
        e.midpoint = m.nodes[e.nodes[1]];
    }
    m
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let n: f64 = b.iter().map(|y| y * y).sum();
    (d / n).sqrt()
}

fn mirrored_load(load: &BoundaryLoad, mirror: &StructuredMesh) -> BoundaryLoad {
    let (side, segment) = match load.side {
        BoundarySide::Bottom => (BoundarySide::Top, load.segment),
        BoundarySide::Top => (BoundarySide::Bottom, load.segment),
        s => (s, (1.0 - load.segment.1, 1.0 - load.segment.0)),
    };
    BoundaryLoad::on_segment(mirror, side, segment, [load.traction[0], -load.traction[1]]).unwrap()
}

#[test]
fn desk_case_terminates_near_binary() {
    let mesh = StructuredMesh::new(48, 24).unwrap();
    let trace = run(&mesh, (0.45, 55.0));
    assert!(trace.relaxed_iterations >= 2 && trace.penalised_iterations >= 2);
    assert_eq!(trace.records.len(), trace.total_iterations());
    assert!((0.33..=0.45).contains(&trace.final_volume()), "V = {}", trace.final_volume());
    assert!(trace.intermediate_fraction(0.05, 0.95) <= 0.15);
    assert!(trace.final_compliance() <= trace.initial_compliance());
    let phases: Vec<Phase> = trace.records.iter().map(|r| r.phase).collect();
    assert!(phases[..trace.relaxed_iterations].iter().all(|&p| p == Phase::Relaxed));
    assert!(phases[trace.relaxed_iterations..].iter().all(|&p| p == Phase::Penalised));
}

#[test]
fn runs_are_deterministic() {
    let mesh = StructuredMesh::new(16, 8).unwrap();
    let a = run(&mesh, (1.6, 12.0));
    let b = run(&mesh, (1.6, 12.0));
    let key = |t: &OptimisationTrace| t.records.iter().map(|r| (r.compliance.to_bits(), r.volume.to_bits())).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
    assert_eq!(a.density, b.density);
}

#[test]
fn reflected_problem_gives_reflected_design() {
    let mesh = StructuredMesh::new(48, 24).unwrap();
    let mirror = mirrored(&mesh);
    let lame = LameCoefficients::reference();
    let config = OptimiserConfig::default();
    let (solver, mirror_solver) = (ElasticSolver::new(&mesh).unwrap(), ElasticSolver::new(&mirror).unwrap());
    // Vertical tip load at mid-height, then an oblique bottom load.
    for eta in [(1.15, 0.0), (0.45, 50.0)] {
        let load = ParameterPoint::new(eta.0, eta.1).unwrap().boundary_load(&mesh).unwrap();
        let image = mirrored_load(&load, &mirror);
        assert_eq!(image.edges.len(), load.edges.len());
        let a = optimise_high_fidelity(&solver, &lame, &load, &config).unwrap();
        let b = optimise_high_fidelity(&mirror_solver, &lame, &image, &config).unwrap();
        let err = relative_l2(b.density.values(), a.density.values());
        assert!(err <= 0.02, "reflection mismatch {err} at {eta:?}");
        let gap = (a.final_compliance() - b.final_compliance()).abs() / a.final_compliance();
        assert!(gap < 1e-3, "compliance gap {gap}");
    }
}

#[test]
fn self_seeding_converges_faster_to_same_optimum() {
    let mesh = StructuredMesh::new(48, 24).unwrap();
    let solver = ElasticSolver::new(&mesh).unwrap();
    let lame = LameCoefficients::reference();
    let config = OptimiserConfig::default();
    for eta in [(0.45, 55.0), (1.3, 20.0)] {
        let load = ParameterPoint::new(eta.0, eta.1).unwrap().boundary_load(&mesh).unwrap();
        let reference = optimise_high_fidelity(&solver, &lame, &load, &config).unwrap();
        let seeded = optimise_surrogate_seeded(&solver, &lame, &load, &config, &reference.density).unwrap();
        assert_eq!(seeded.relaxed_iterations, 0);
        assert!(seeded.total_iterations() < reference.total_iterations());
        let gap = (seeded.final_compliance() - reference.final_compliance()).abs() / reference.final_compliance();
        assert!(gap < 0.01, "compliance gap {gap}");
    }
}

#[test]
fn seeded_run_validates_seed_length() {
    let mesh = StructuredMesh::new(8, 4).unwrap();
    let solver = ElasticSolver::new(&mesh).unwrap();
    let load = ParameterPoint::new(1.0, 30.0).unwrap().boundary_load(&mesh).unwrap();
    let short = lamopt_core::fem::DensityField::uniform(3, 0.4).unwrap();
    let r = optimise_surrogate_seeded(&solver, &LameCoefficients::reference(), &load, &OptimiserConfig::default(), &short);
    assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let mesh = StructuredMesh::new(16, 8).unwrap();
    let solver = ElasticSolver::new(&mesh).unwrap();
    let load = ParameterPoint::new(0.45, 55.0).unwrap().boundary_load(&mesh).unwrap();
    let config = OptimiserConfig { max_iterations_per_phase: 2, ..OptimiserConfig::default() };
    let r = optimise_high_fidelity(&solver, &LameCoefficients::reference(), &load, &config);
    assert!(matches!(r, Err(Error::NonConvergence { .. })), "{r:?}");
}

#[test]
fn stopping_rule_semantics() {
    assert!(stopping_test(1.0, None, 0.4, None, 1e-2, 1e-2));
    assert!(!stopping_test(1.0, Some(1.0), 0.4, Some(0.4), 1e-2, 1e-2));
    assert!(stopping_test(1.0, Some(0.98), 0.4, Some(0.4), 1e-2, 1e-2));
    assert!(stopping_test(1.0, Some(1.0), 0.4, Some(0.39), 1e-2, 1e-2));
}
