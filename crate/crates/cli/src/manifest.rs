//! The JSON record every run leaves next to its outputs.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub struct RunManifest {
    command: String,
    config: Map<String, Value>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: f64,
    summary: Map<String, Value>,
    failures: Vec<Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: Map<String, Value>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
            summary: Map::new(),
            failures: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        let path = path.into();
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
    }

    pub fn summary(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.into(), value.into());
    }

    pub fn failure(&mut self, id: u32, message: &str) {
        self.failures.push(json!({ "id": id, "error": message }));
    }

    fn artifacts(paths: &[PathBuf]) -> Value {
        Value::Array(
            paths
                .iter()
                .map(|p| {
                    let sha = sha256_file(p).ok();
                    json!({ "path": p.display().to_string(), "sha256": sha })
                })
                .collect(),
        )
    }

    /// Writes the manifest with status `ok` or the error message.
    pub fn write(&self, path: &Path, error: Option<&str>) -> io::Result<()> {
        let finished = unix_now();
        let doc = json!({
            "command": self.command,
            "lamopt_version": env!("CARGO_PKG_VERSION"),
            "status": if error.is_some() { "error" } else { "ok" },
            "error": error,
            "seed": self.seed,
            "config": self.config,
            "inputs": Self::artifacts(&self.inputs),
            "outputs": Self::artifacts(&self.outputs),
            "started_unix": self.started,
            "finished_unix": finished,
            "elapsed_seconds": finished - self.started,
            "summary": self.summary,
            "failures": self.failures,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
        std::fs::write(path, text + "\n")
    }
}
