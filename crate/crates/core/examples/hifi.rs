//! Runs the high-fidelity optimiser for one load case and prints the trace.
//!
//! Usage: `cargo run --release --example hifi -- [nx ny eta1 eta2]`

use lamopt_core::fem::{ElasticSolver, StructuredMesh};
use lamopt_core::paramspace::ParameterPoint;
use lamopt_core::topopt::{optimise_high_fidelity, OptimiserConfig};
use lamopt_core::voigt::LameCoefficients;

fn main() -> lamopt_core::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let (nx, ny, eta1, eta2) = match args.as_slice() {
        [nx, ny, e1, e2] => (*nx as usize, *ny as usize, *e1, *e2),
        _ => (48, 24, 0.45, 55.0),
    };
    let mesh = StructuredMesh::new(nx, ny)?;
    let solver = ElasticSolver::new(&mesh)?;
    let load = ParameterPoint::new(eta1, eta2)?.boundary_load(&mesh)?;
    let start = std::time::Instant::now();
    let config = OptimiserConfig::default();
    let trace = optimise_high_fidelity(&solver, &LameCoefficients::reference(), &load, &config)?;
    trace.write_csv(std::io::stdout().lock())?;
    eprintln!(
        "iterations {} + {}, J {:.4} -> {:.4}, V {:.4}, intermediate {:.3}, {:.1}s",
        trace.relaxed_iterations,
        trace.penalised_iterations,
        trace.initial_compliance(),
        trace.final_compliance(),
        trace.final_volume(),
        trace.intermediate_fraction(0.05, 0.95),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
