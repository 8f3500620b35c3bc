//! Balanced controller: synchronization to the short-term weight plus a
//! periodic collective correction toward the long-term weighted mean.

use eemsync::allan::{allan_pi, statistical_allan, weight_long, weight_short};
use eemsync::control::{ControlMode, ControllerConfig, EemController};
use eemsync::models::reference;
use eemsync::simkit::{simulate_streaming, SimOptions};

fn main() -> eemsync::Result<()> {
    let m = reference::ensemble(1.0)?;
    let q0 = weight_short(&m.sigma1)?;
    let qi = weight_long(&m.sigma2)?;
    let cfg = ControllerConfig::new(q0.clone(), m.tau, ControlMode::Balanced);
    println!("collective period {} steps, gain {}", cfg.m, cfg.k_bo);
    let mut c = EemController::new(&m, cfg)?;
    let steps = 300_000;
    let mut h = Vec::with_capacity(steps);
    let mut mean = Vec::with_capacity(steps);
    simulate_streaming(&m, &mut c, steps, 2, None, SimOptions::default(), |s| {
        h.push(s.x[2]);
        mean.push(q0.as_vector().dot(&s.x.rows(0, m.n)));
        Ok(())
    })?;
    println!("{:>8} {:>12} {:>12} {:>12} {:>12}", "interval", "clock 3", "mean", "short dest", "long dest");
    for interval in [1usize, 10, 100, 1000, 10_000] {
        let t = interval as f64;
        println!(
            "{interval:>8} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}",
            statistical_allan(&h, m.tau, interval)?,
            statistical_allan(&mean, m.tau, interval)?,
            allan_pi(&q0, &m.sigma1, &m.sigma2, t)?,
            allan_pi(&qi, &m.sigma1, &m.sigma2, t)?
        );
    }
    Ok(())
}
