//! Timestamped run directories with a manifest of their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::binary::{hex, sha256, write_atomic};
use crate::config::RunConfig;
use crate::error::{FormatError, FormatResult};

/// Environment variable naming the default root for run directories.
pub const OUT_ENV: &str = "FACETREC_OUT";
pub const MANIFEST_FILE: &str = "MANIFEST";
pub const LOG_FILE: &str = "run.log";

pub struct RunDir {
    path: PathBuf,
    command: String,
    created: String,
    files: Vec<(String, String, usize)>,
    log: String,
}

impl RunDir {
    /// Uses `explicit` as is, or creates `<root>/<command>-<UTC timestamp>`
    /// where root is `root`, then `$FACETREC_OUT`, then `./runs`.
    pub fn create(command: &str, explicit: Option<&Path>, root: Option<&Path>) -> FormatResult<Self> {
        let now = chrono::Utc::now();
        let created = now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let root = root
                    .map(Path::to_path_buf)
                    .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from("runs"));
                let stem = format!("{command}-{}", now.format("%Y%m%dT%H%M%SZ"));
                let mut candidate = root.join(&stem);
                let mut n = 1;
                while candidate.exists() {
                    candidate = root.join(format!("{stem}-{n}"));
                    n += 1;
                }
                candidate
            }
        };
        fs::create_dir_all(&path).map_err(|e| FormatError::io(&path, e))?;
        Ok(Self {
            path,
            command: command.to_string(),
            created,
            files: Vec::new(),
            log: String::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes an artifact atomically and lists it in the manifest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> FormatResult<PathBuf> {
        let path = self.file(name);
        write_atomic(&path, bytes)?;
        self.record(name, bytes);
        Ok(path)
    }

    /// Lists a file written by other means.
    pub fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.retain(|(n, _, _)| n != name);
        self.files.push((name.to_string(), hex(&sha256(bytes)), bytes.len()));
    }

    /// Appends to the run log and echoes to stderr.
    pub fn log(&mut self, line: &str) {
        eprintln!("{line}");
        self.log.push_str(line);
        self.log.push('\n');
    }

    /// Writes `run.log` (argv, resolved config, seed, log lines) and the manifest.
    pub fn finish(mut self, argv: &[String], config: &RunConfig) -> FormatResult<PathBuf> {
        let mut log = format!("command={}\ncreated={}\nargv={}\nseed={}\n", self.command, self.created, argv.join(" "), config.train.seed);
        log.push_str("[config]\n");
        log.push_str(&config.render());
        log.push_str("[log]\n");
        log.push_str(&self.log);
        let path = self.file(LOG_FILE);
        write_atomic(&path, log.as_bytes())?;
        self.record(LOG_FILE, log.as_bytes());

        let mut manifest = format!("command\t{}\ncreated\t{}\n", self.command, self.created);
        for (name, digest, size) in &self.files {
            let _ = writeln!(manifest, "file\t{name}\t{size}\t{digest}");
        }
        write_atomic(&self.file(MANIFEST_FILE), manifest.as_bytes())?;
        Ok(self.path)
    }
}
