use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tradecost::ingest::sha256_hex;
use tradecost::Error;

use crate::{CliError, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const TIMING_FILE: &str = "timing.txt";

/// Machine-readable record of one run. Wall time lives in a separate file
/// so that reruns produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub epsilon: f64,
    /// Resolved configuration without the output directory.
    pub config: RunConfig,
    /// SHA-256 of every output file, keyed by path relative to the output
    /// directory. The resolved configuration is echoed above instead, since
    /// it names the output directory.
    pub outputs: BTreeMap<String, String>,
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> Result<(), Error> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect(&path, root, out)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("walked below root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == MANIFEST_FILE || rel == TIMING_FILE || rel == RESOLVED_CONFIG_FILE {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        out.insert(rel, sha256_hex(&bytes));
    }
    Ok(())
}

/// Writes the resolved configuration, the manifest and the timing file.
pub fn finish(command: &str, cfg: &RunConfig, out: &Path, seconds: f64) -> Result<(), CliError> {
    let write = |name: &str, text: String| {
        let path = out.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    write(RESOLVED_CONFIG_FILE, cfg.to_toml()?)?;
    let mut outputs = BTreeMap::new();
    collect(out, out, &mut outputs)?;
    let manifest = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        epsilon: cfg.epsilon,
        config: RunConfig {
            out: None,
            ..cfg.clone()
        },
        outputs,
    };
    let path = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write(MANIFEST_FILE, json + "\n")?;
    write(TIMING_FILE, format!("{command} {seconds:.6}\n"))?;
    Ok(())
}
