//! Kalman-filter time scale: Allan variance of the ensemble estimate error
//! compared with the best single clock.

use nalgebra::DVector;

use eemsync::allan::{allan_plot, analytical_allan_clock};
use eemsync::filters::StandardKf;
use eemsync::models::reference;
use eemsync::simkit::{simulate_streaming, FreeRun, SimOptions};

fn main() -> eemsync::Result<()> {
    let m = reference::ensemble(1.0)?;
    let steps = 200_000;
    let mut kf = StandardKf::new(&m);
    let zero = DVector::zeros(m.n);
    let mut eps = Vec::with_capacity(steps);
    simulate_streaming(&m, &mut FreeRun { clocks: m.n }, steps, 3, None, SimOptions::default(), |s| {
        if s.k == 0 {
            kf.update(&m, s.y)?;
        } else {
            kf.step(&m, &zero, s.y)?;
        }
        eps.push((s.x - &kf.xhat).rows(0, m.n).mean());
        Ok(())
    })?;
    let plot = allan_plot(&eps, m.tau, Some(&[1, 3, 10, 30, 100, 300, 1000, 3000, 10_000]))?;
    for (interval, v) in plot.points {
        let best = m
            .noise
            .iter()
            .map(|p| analytical_allan_clock(*p, interval).unwrap())
            .fold(f64::INFINITY, f64::min);
        println!("{interval:>8} s  time scale {v:.3e}  best clock {best:.3e}  ratio {:.3}", v / best);
    }
    Ok(())
}
