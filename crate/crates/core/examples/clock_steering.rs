//! Steering to a single clock: with the weight on clock 10 that clock is never
//! touched and every other clock follows it.

use nalgebra::{DVector, Vector2};

use eemsync::control::{ControlMode, ControllerConfig, EemController, SyncDestination};
use eemsync::decomp::EnsembleWeight;
use eemsync::models::reference;
use eemsync::simkit::{simulate_streaming, SimOptions};

fn main() -> eemsync::Result<()> {
    let m = reference::ensemble(1.0)?;
    let q = EnsembleWeight::unit(m.n, m.n - 1);
    let mut c = EemController::new(&m, ControllerConfig::new(q.clone(), m.tau, ControlMode::SyncOnly))?;
    let mut dest = SyncDestination::new(q, Vector2::zeros(), m.tau);
    let mut max_reference_input = 0.0f64;
    let mut offsets = DVector::<f64>::zeros(m.n);
    let steps = 50_000;
    simulate_streaming(&m, &mut c, steps, 10, None, SimOptions::default(), |s| {
        max_reference_input = max_reference_input.max(s.u[m.n - 1].abs());
        if s.k >= steps / 2 {
            for i in 0..m.n {
                let e = s.x[i] - dest.z;
                offsets[i] += e * e / (steps / 2) as f64;
            }
        }
        dest.advance(s.v)
    })?;
    println!("largest input applied to clock 10: {max_reference_input:e}");
    for i in 0..m.n {
        println!("clock {:>2}: rms offset from clock 10 {:.3e} s", i + 1, offsets[i].sqrt());
    }
    Ok(())
}
