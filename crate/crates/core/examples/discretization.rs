//! Zero-order-hold discretization of the reference clocks.

use eemsync::models::{discretize, reference};

fn main() -> eemsync::Result<()> {
    let tau = 1.0;
    for (i, p) in reference::noise().into_iter().enumerate() {
        let m = discretize(p, tau)?;
        println!(
            "clock {:>2}: sigma1 {:.3e} sigma2 {:.3e}  Q = [[{:.4e}, {:.4e}], [{:.4e}, {:.4e}]]",
            i + 1,
            p.sigma1,
            p.sigma2,
            m.q[(0, 0)],
            m.q[(0, 1)],
            m.q[(1, 0)],
            m.q[(1, 1)]
        );
    }
    let m = reference::ensemble(tau)?;
    println!("ensemble state dimension {}, measurements {}", m.state_dim(), m.meas_dim());
    Ok(())
}
