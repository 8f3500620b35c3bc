//! Gain and covariance increments: the standard filter's covariance keeps
//! growing while the decomposed filter's quantities settle.
//!
//! `cargo run --release --example gain_divergence -- 200000`

use nalgebra::DVector;

use eemsync::decomp::{decompose, Basis, EnsembleWeight};
use eemsync::filters::{DeterminateKf, StandardKf};
use eemsync::models::reference;
use eemsync::simkit::{simulate, FreeRun};

fn main() -> eemsync::Result<()> {
    let m = reference::ensemble(1.0)?;
    let steps: usize = std::env::args().nth(1).map(|s| s.parse().expect("steps")).unwrap_or(20_000);
    let rec = simulate(&m, &mut FreeRun { clocks: m.n }, steps, 1, None)?;
    let d = decompose(&m, Basis::Eem(EnsembleWeight::uniform(m.n)))?;
    let zero = DVector::zeros(m.n);
    let mut kf = StandardKf::new(&m);
    let mut dk = DeterminateKf::new(&d);
    kf.update(&m, &rec.y[0])?;
    dk.update(&d, &m.meas.r, &rec.y[0])?;
    println!("{:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "k", "|P-|", "dH/H", "dP-/P-", "dHo/Ho", "dPoo/Poo", "dHbo/Hbo");
    for k in 1..steps {
        let (h, p) = (kf.h.clone(), kf.p_minus.clone());
        let (ho, poo, hbo) = (dk.h_o.clone(), dk.p_oo_minus.clone(), dk.h_bo.clone());
        kf.step(&m, &zero, &rec.y[k])?;
        dk.step(&d, &m.meas.r, &zero, &rec.y[k])?;
        if k.is_power_of_two() || k == steps - 1 {
            println!(
                "{k:>7} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
                kf.p_minus.norm(),
                (&kf.h - h).norm() / kf.h.norm(),
                (&kf.p_minus - p).norm() / kf.p_minus.norm(),
                (&dk.h_o - ho).norm() / dk.h_o.norm(),
                (&dk.p_oo_minus - poo).norm() / dk.p_oo_minus.norm(),
                (&dk.h_bo - hbo).norm() / dk.h_bo.norm(),
            );
        }
    }
    Ok(())
}
