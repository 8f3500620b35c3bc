//! Stationary gains of the decomposed filter for three ensemble weights. The
//! unobservable gain vanishes only for the long-term weight.

use eemsync::allan::{weight_long, weight_short};
use eemsync::decomp::{decompose, Basis, EnsembleWeight};
use eemsync::filters::{estimator_spectral_radius, solve_stationary};
use eemsync::models::reference;

fn main() -> eemsync::Result<()> {
    let m = reference::ensemble(1.0)?;
    for (name, q) in [
        ("uniform", EnsembleWeight::uniform(m.n)),
        ("short-term", weight_short(&m.sigma1)?),
        ("long-term", weight_long(&m.sigma2)?),
    ] {
        let d = decompose(&m, Basis::Eem(q))?;
        let g = solve_stationary(&d, &m.meas.r)?;
        println!(
            "{name:>10}: {} iterations, residuals {:.1e}/{:.1e}, |H_bo|/|H_o| = {:.3e}, spectral radius {:.6}",
            g.iterations,
            g.residuals[0],
            g.residuals[1],
            g.h_bo.norm() / g.h_o.norm(),
            estimator_spectral_radius(&d, &g)
        );
    }
    Ok(())
}
