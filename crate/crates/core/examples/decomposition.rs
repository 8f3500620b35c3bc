//! Observable canonical decomposition of a three-clock ensemble.

use nalgebra::DVector;

use eemsync::decomp::{decompose, expand_input, project_state, split_input, Basis, EnsembleWeight};
use eemsync::models::reference;

fn main() -> eemsync::Result<()> {
    let m = reference::subset(&[0, 4, 9], 1.0)?;
    let q = EnsembleWeight::new(DVector::from_column_slice(&[0.5, 0.3, 0.2]))?;
    let d = decompose(&m, Basis::Eem(q))?;
    println!("V+ = {}", d.vplus.as_ref().unwrap());
    println!("T = {}", d.t);
    println!("T A T^-1 = {}", d.transformed_dynamics(&m));

    let x = DVector::from_column_slice(&[1e-9, 2e-9, -1e-9, 1e-13, 0.0, -2e-13]);
    let (xi_o, xi_obar) = project_state(&x, &d)?;
    println!("relative states {}", xi_o.transpose());
    println!("weighted mean   {}", xi_obar.transpose());
    println!("reconstruction error {:.1e}", (d.reconstruct(&xi_o, &xi_obar) - &x).amax());

    let u = expand_input(&DVector::from_column_slice(&[1e-12, -2e-12]), 5e-13, &d)?;
    let (omega_o, omega_obar) = split_input(&u, &d)?;
    println!("u = {}  splits back to {} and {omega_obar:e}", u.transpose(), omega_o.transpose());
    Ok(())
}
