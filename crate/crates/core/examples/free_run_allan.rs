//! Free-running ensemble: statistical Allan variance against the closed form.

use eemsync::allan::{analytical_allan_clock, statistical_allan};
use eemsync::models::reference;
use eemsync::simkit::{simulate, FreeRun};

fn main() -> eemsync::Result<()> {
    let m = reference::ensemble(1.0)?;
    let rec = simulate(&m, &mut FreeRun { clocks: m.n }, 200_000, 7, None)?;
    println!("{:>5} {:>8} {:>12} {:>12} {:>7}", "clock", "interval", "estimate", "analytical", "ratio");
    for i in 0..m.n {
        let h = rec.clock_series(i);
        for interval in [1usize, 10, 100, 1000] {
            let est = statistical_allan(&h, m.tau, interval)?;
            let exact = analytical_allan_clock(m.noise[i], interval as f64 * m.tau)?;
            println!("{:>5} {:>8} {:>12.4e} {:>12.4e} {:>7.3}", i + 1, interval, est, exact, est / exact);
        }
    }
    Ok(())
}
