//! CSV and JSON artifacts. Every file starts with the engine version, seed,
//! config hash and command, so outputs can be traced back to their run.

use crate::config::RunConfig;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    I(i64),
    S(String),
    B(bool),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

/// 17 significant digits in scientific notation; round-trips every f64.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

fn format_cell(c: &Cell) -> String {
    match c {
        Cell::F(x) => format_float(*x),
        Cell::U(x) => x.to_string(),
        Cell::I(x) => x.to_string(),
        Cell::S(s) => s.clone(),
        Cell::B(b) => b.to_string(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct Provenance<'a> {
    engine_version: &'a str,
    command: &'a str,
    seed: u64,
    config_hash: &'a str,
}

/// Writes the artifacts of one command into the output directory.
pub struct Artifacts {
    dir: PathBuf,
    command: String,
    seed: u64,
    hash: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    /// Creates the directory and echoes the resolved config as `config.json`.
    pub fn create(config: &RunConfig, command: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(&config.output_dir)?;
        let mut a = Self {
            dir: config.output_dir.clone(),
            command: command.to_string(),
            seed: config.seed,
            hash: config.hash(),
            written: Vec::new(),
        };
        a.write_file("config.json", &config.to_json())?;
        Ok(a)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn write_file(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    pub fn header(&self) -> String {
        format!(
            "# engine_version={}\n# command={}\n# seed={}\n# config_hash={}\n",
            ENGINE_VERSION, self.command, self.seed, self.hash
        )
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        columns: &[&str],
        rows: &[Vec<Cell>],
    ) -> std::io::Result<()> {
        let mut out = self.header();
        out.push_str(&columns.join(","));
        out.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), columns.len(), "{name}: row width");
            let line: Vec<String> = row.iter().map(format_cell).collect();
            writeln!(out, "{}", line.join(",")).expect("write to string");
        }
        self.write_file(name, &out)
    }

    /// JSON object with a `provenance` block followed by `body`'s fields.
    pub fn write_json<T: Serialize>(&mut self, name: &str, body: &T) -> std::io::Result<()> {
        let prov = Provenance {
            engine_version: ENGINE_VERSION,
            command: &self.command,
            seed: self.seed,
            config_hash: &self.hash,
        };
        let value = serde_json::json!({
            "provenance": prov,
            "result": body,
        });
        let text = serde_json::to_string_pretty(&value).expect("serialisable") + "\n";
        self.write_file(name, &text)
    }
}
