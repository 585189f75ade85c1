//! Rewrites `data/goldens/goldens.json` from the in-repo oracles.

use cinetransfer::goldens::{golden_dir, regenerate_goldens};

fn main() -> cinetransfer::Result<()> {
    let path = regenerate_goldens(&golden_dir())?;
    println!("wrote {}", path.display());
    Ok(())
}
