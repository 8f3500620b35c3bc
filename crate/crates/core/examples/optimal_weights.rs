//! Interval-dependent optimal weights and the Allan variance they achieve.

use eemsync::allan::{allan_pi, analytical_allan_clock, optimal_weight, weight_long, weight_short};
use eemsync::models::reference;

fn main() -> eemsync::Result<()> {
    let m = reference::ensemble(1.0)?;
    let (s1, s2) = (&m.sigma1, &m.sigma2);
    let q0 = weight_short(s1)?;
    let qi = weight_long(s2)?;
    println!("short-term weight {:.3}", q0.as_vector().transpose());
    println!("long-term weight  {:.3}", qi.as_vector().transpose());
    for e in 0..=7 {
        let tau = 10f64.powi(e);
        let qa = optimal_weight(s1, s2, tau)?;
        let best_clock = m
            .noise
            .iter()
            .map(|p| analytical_allan_clock(*p, tau).unwrap())
            .fold(f64::INFINITY, f64::min);
        println!(
            "tau 1e{e}: optimal {:.3e}  short {:.3e}  long {:.3e}  best clock {:.3e}",
            allan_pi(&qa, s1, s2, tau)?,
            allan_pi(&q0, s1, s2, tau)?,
            allan_pi(&qi, s1, s2, tau)?,
            best_clock
        );
    }
    Ok(())
}
