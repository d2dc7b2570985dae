//! Run manifests: a JSONL file written before any work starts, with a
//! terminal status line appended when the run finishes. Reports stay free of
//! timestamps so reruns are byte-identical; the wall-clock lives here.

use serde::Serialize;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Serialize)]
struct StartRecord<'a> {
    status: &'a str,
    subcommand: &'a str,
    tool_version: &'a str,
    seed: u64,
    started_at_unix_ms: u128,
    config: serde_json::Value,
    outputs: &'a [PathBuf],
}

#[derive(Serialize)]
struct EndRecord<'a> {
    status: &'a str,
    finished_at_unix_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub struct Manifest {
    path: PathBuf,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl Manifest {
    /// Write the start record; fails if the manifest cannot be created.
    pub fn start(
        dir: &Path,
        subcommand: &str,
        seed: u64,
        config: serde_json::Value,
        outputs: &[PathBuf],
    ) -> std::io::Result<Manifest> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.jsonl");
        let record = StartRecord {
            status: "started",
            subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            started_at_unix_ms: now_ms(),
            config,
            outputs,
        };
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
        Ok(Manifest { path })
    }

    fn append_end(&self, status: &str, error: Option<&str>) {
        let record = EndRecord {
            status,
            finished_at_unix_ms: now_ms(),
            error,
        };
        if let Ok(mut file) = OpenOptions::new().append(true).open(&self.path) {
            let _ = writeln!(file, "{}", serde_json::to_string(&record).unwrap());
        }
    }

    pub fn complete(&self) {
        self.append_end("completed", None);
    }

    pub fn fail(&self, error: &str) {
        self.append_end("failed", Some(error));
    }
}
