//! Output directory with provenance headers on every file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::{Experiment, Overrides};
use crate::error::CliError;

pub struct Output {
    dir: PathBuf,
    header: Vec<String>,
    csv: bool,
    txt: bool,
    summary: Vec<String>,
    written: Vec<PathBuf>,
}

pub fn config_digest(raw: &str) -> String {
    hex::encode(Sha256::digest(raw.as_bytes()))
}

impl Output {
    pub fn create(dir: &Path, command: &str, exp: &Experiment, overrides: &Overrides) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let header = vec![
            format!("# tool: memwave {}", env!("CARGO_PKG_VERSION")),
            format!("# command: {command}"),
            format!("# config_sha256: {}", config_digest(&exp.raw)),
            format!("# seed: {}", exp.seed()),
            format!("# modes: {}", exp.n_modes()),
            format!("# grids: {}", exp.grid_summary()),
            format!(
                "# overrides: seed={} paths={} modes={}",
                opt(overrides.seed.map(|v| v.to_string())),
                opt(overrides.paths.map(|v| v.to_string())),
                opt(overrides.modes.map(|v| v.to_string()))
            ),
        ];
        let formats = &exp.config.output.formats;
        let mut out = Output {
            dir: dir.to_path_buf(),
            header,
            csv: formats.iter().any(|f| f == "csv"),
            txt: formats.iter().any(|f| f == "txt"),
            summary: Vec::new(),
            written: Vec::new(),
        };
        out.write_raw("config.toml", &exp.raw)?;
        Ok(out)
    }

    fn write_raw(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn with_header(&self, lines: impl IntoIterator<Item = String>) -> String {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let mut s = String::new();
        for l in self.header.iter().cloned().chain([format!("# generated_unix: {stamp}")]).chain(lines) {
            s.push_str(&l);
            s.push('\n');
        }
        s
    }

    pub fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<(), CliError> {
        if !self.csv {
            return Ok(());
        }
        let body = self.with_header(std::iter::once(header.to_string()).chain(rows));
        self.write_raw(name, &body)
    }

    /// Line for `summary.txt` and stdout.
    pub fn note(&mut self, line: impl Into<String>) {
        let line = line.into();
        println!("{line}");
        self.summary.push(line);
    }

    pub fn warn(&mut self, line: impl Into<String>) {
        let line = format!("warning: {}", line.into());
        eprintln!("{line}");
        self.summary.push(line);
    }

    pub fn finish(mut self) -> Result<Vec<PathBuf>, CliError> {
        if self.txt {
            let summary = std::mem::take(&mut self.summary);
            let body = self.with_header(summary);
            self.write_raw("summary.txt", &body)?;
        }
        let mut stdout = std::io::stdout();
        writeln!(stdout, "wrote {} files to {}", self.written.len(), self.dir.display())?;
        Ok(self.written)
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.12e}")
}
