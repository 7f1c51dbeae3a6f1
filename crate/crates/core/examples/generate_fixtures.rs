//! Regenerates the data files under `data/fixtures` (or a directory given
//! as the first argument).

use std::path::{Path, PathBuf};

use hypermod::fixtures::shipped_fixtures;

pub fn run(dir: &Path) -> hypermod::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in shipped_fixtures()? {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}

fn main() -> hypermod::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixtures"));
    for path in run(&dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
