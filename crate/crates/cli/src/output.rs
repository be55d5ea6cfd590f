use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use hyperstrip::periodic::SpaceTimeField;
use hyperstrip::spectral::Eigenvalue;
use hyperstrip::Field;

pub const SCHEMA_VERSION: u32 = 1;

/// Shortest representation that parses back to the same double.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    fn csv(&self, name: &str, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.into_iter().map(num))?;
        }
        w.flush()?;
        Ok(())
    }

    fn component_header(n: usize, lead: &[&str]) -> Vec<String> {
        lead.iter().map(|s| s.to_string()).chain((1..=n).map(|j| format!("u_{j}"))).collect()
    }

    pub fn norms(&self, times: &[f64], l2: &[f64], h1: &[f64]) -> Result<()> {
        let header = ["t", "l2", "h1"].map(String::from);
        self.csv("norms.csv", &header, (0..times.len()).map(|k| vec![times[k], l2[k], h1[k]]))
    }

    pub fn solution(&self, index: usize, u: &Field) -> Result<()> {
        let header = Self::component_header(u.n(), &["x"]);
        self.csv(
            &format!("solution_{index:04}.csv"),
            &header,
            (0..=u.nx()).map(|i| std::iter::once(u.x(i)).chain((0..u.n()).map(|j| u.get(j, i))).collect()),
        )
    }

    pub fn spacetime(&self, u: &SpaceTimeField) -> Result<()> {
        let header = Self::component_header(u.n(), &["x", "t"]);
        let nx = u.nx();
        self.csv(
            "spacetime.csv",
            &header,
            (0..u.slices()).flat_map(|l| {
                (0..=nx).map(move |i| {
                    [i as f64 / nx as f64, u.time(l)]
                        .into_iter()
                        .chain((0..u.n()).map(|j| u.get(j, l, i)))
                        .collect()
                })
            }),
        )
    }

    pub fn spectrum(&self, name: &str, eigenvalues: &[Eigenvalue]) -> Result<()> {
        let header = ["re", "im", "residual"].map(String::from);
        self.csv(name, &header, eigenvalues.iter().map(|e| vec![e.re, e.im, e.residual]))
    }

    pub fn text(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.dir.join(name), body).with_context(|| format!("cannot write {name}"))
    }
}

#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_sha256: &'a str,
    pub seed: Option<u64>,
    pub pass: bool,
    pub summary: &'a [String],
    pub error: Option<String>,
    pub result: serde_json::Value,
}

impl Report<'_> {
    pub fn write(&self, out: &Output) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        out.text("report.json", &body)
    }
}
