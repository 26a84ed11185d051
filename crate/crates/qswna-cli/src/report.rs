//! Output directory handling: CSV, JSON and SVG artifacts plus the run manifest.

use anyhow::{Context, Result};
use qswna::ModelParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::plot::{Heatmap, LinePlot};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OutputFile {
    /// relative to the output directory
    pub path: String,
    pub kind: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub args: Vec<String>,
    pub config: ModelParams,
    /// subcommand settings after defaults are applied
    pub settings: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputFile>,
}

pub struct Artifacts {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn record(&mut self, name: &str, kind: &str) -> PathBuf {
        self.files.retain(|f| f.path != name);
        self.files.push(OutputFile { path: name.into(), kind: kind.into() });
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        let path = self.record(name, kind);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        self.write(name, "csv", &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, "json", s.as_bytes())
    }

    /// `stem.svg` and the plotted data as `stem.csv` (series, x, y).
    pub fn line_plot(&mut self, stem: &str, plot: &LinePlot) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            series: &'a str,
            x: f64,
            y: f64,
        }
        let rows: Vec<Row> = plot.series.iter().flat_map(|s| s.points.iter().map(|&(x, y)| Row { series: &s.name, x, y })).collect();
        self.csv(&format!("{stem}.csv"), &rows)?;
        self.write(&format!("{stem}.svg"), "svg", plot.to_svg().as_bytes())
    }

    /// `stem.svg` and the grid as `stem.csv` (x, y, value).
    pub fn heatmap(&mut self, stem: &str, map: &Heatmap) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            x: f64,
            y: f64,
            value: Option<f64>,
        }
        let nx = map.xs.len();
        let rows: Vec<Row> = map.values.iter().enumerate().map(|(k, v)| Row { x: map.xs[k % nx], y: map.ys[k / nx], value: *v }).collect();
        self.csv(&format!("{stem}.csv"), &rows)?;
        self.write(&format!("{stem}.svg"), "svg", map.to_svg().as_bytes())
    }

    #[cfg(test)]
    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    /// Writes manifest.json listing every file produced so far.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<PathBuf> {
        manifest.outputs = self.files.clone();
        manifest.outputs.push(OutputFile { path: "manifest.json".into(), kind: "json".into() });
        let path = self.record("manifest.json", "json");
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        std::fs::write(&path, s)?;
        Ok(path)
    }
}
