use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Length of the hash prefix in run directory names.
const HASH_PREFIX: usize = 12;

/// Creates `<out>/<command>-<hash>`, or `<…>.1`, `<…>.2`, … if taken, and
/// stores the resolved config in it as `config.toml`.
pub fn create_run_dir(out: &Path, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out)?;
    let base = format!("{command}-{}", &cfg.hash(command)[..HASH_PREFIX]);
    let mut dir = out.join(&base);
    let mut k = 0;
    loop {
        match fs::create_dir(&dir) {
            Ok(()) => break,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                k += 1;
                dir = out.join(format!("{base}.{k}"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(dir)
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let tmp = std::env::temp_dir().join(format!("cilwalk-out-{}", std::process::id()));
        let _ = fs::remove_dir_all(&tmp);
        let cfg = ExperimentConfig::from_toml("[graph]\ntopology = \"complete\"\nnodes = 5\n").unwrap();
        let a = create_run_dir(&tmp, "simulate", &cfg).unwrap();
        let b = create_run_dir(&tmp, "simulate", &cfg).unwrap();
        assert_ne!(a, b);
        assert!(b.to_string_lossy().ends_with(".1"));
        assert!(a.join("config.toml").exists());
        fs::remove_dir_all(&tmp).unwrap();
    }
}
