//! Runs a bundled scenario through the library API and prints its manifest.
//!
//! `cargo run --release --example run_scenario -- balanced 20000`

use eemsync::scenario::{bundled, run_scenario, validate_config};

fn main() -> eemsync::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "sync-best-short".into());
    let horizon: usize = args.next().map(|h| h.parse().expect("horizon must be an integer")).unwrap_or(10_000);
    let raw = bundled(&name).ok_or_else(|| eemsync::Error::Config(vec![format!("unknown scenario {name}")]))?;
    let mut res = validate_config(raw)?;
    res.cfg.horizon = Some(horizon);
    let out = std::env::temp_dir().join("eemsync-example").join(&name);
    let manifest = run_scenario(&res, &out)?;
    for f in &manifest.files {
        println!("{:>10} bytes  {}  {}", f.bytes, &f.sha256[..16], f.path);
    }
    println!("written to {}", out.display());
    Ok(())
}
