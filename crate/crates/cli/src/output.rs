//! Output directories, manifests and small file helpers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use grnn::ndmath::Parameterized;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, RunArgs};

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// `output_root / (--output | config output | fallback)`.
pub fn output_dir(args: &RunArgs, configured: Option<&Path>, fallback: &str) -> PathBuf {
    let rel = args
        .output
        .as_deref()
        .or(configured)
        .unwrap_or_else(|| Path::new(fallback));
    args.output_root.join(rel)
}

pub fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes through a buffered file, mapping every error to the path.
pub fn write_file<F>(path: &Path, body: F) -> CliResult
where
    F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
{
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn save_model<M: Parameterized>(path: &Path, model: &M) -> CliResult {
    write_file(path, |w| grnn::cells::write_params(w, model.params()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Versions {
    grnn: &'static str,
    cli: &'static str,
}

/// Everything needed to repeat a run: the effective configuration, its hash and the seed.
#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    config_file_sha256: String,
    effective_config_sha256: String,
    seed: u64,
    versions: Versions,
    overrides: Overrides,
    config: &'a C,
}

#[derive(Serialize)]
struct Overrides {
    seed: Option<u64>,
    epochs: Option<usize>,
}

/// Writes `manifest-<command>.json` into `dir`. No timestamps: reruns are byte-identical.
pub fn write_manifest<C: Serialize>(
    dir: &Path,
    command: &str,
    args: &RunArgs,
    source_text: &str,
    effective: &C,
    seed: u64,
) -> CliResult {
    let canonical = serde_json::to_vec(effective).map_err(|e| CliError::Runtime(e.to_string()))?;
    let m = Manifest {
        command,
        config_file_sha256: sha256_hex(source_text.as_bytes()),
        effective_config_sha256: sha256_hex(&canonical),
        seed,
        versions: Versions {
            grnn: grnn::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
        },
        overrides: Overrides {
            seed: args.seed,
            epochs: args.epochs,
        },
        config: effective,
    };
    write_json(&dir.join(format!("manifest-{command}.json")), &m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn output_precedence() {
        let mut a = RunArgs {
            output_root: "root".into(),
            ..Default::default()
        };
        assert_eq!(output_dir(&a, None, "x"), Path::new("root/x"));
        assert_eq!(output_dir(&a, Some(Path::new("c")), "x"), Path::new("root/c"));
        a.output = Some("o".into());
        assert_eq!(output_dir(&a, Some(Path::new("c")), "x"), Path::new("root/o"));
    }
}
