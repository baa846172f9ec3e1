//! Output files (CSV and JSON) and dataset input.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use oded_core::evaluation::RealizationRow;
use oded_core::optimize::SearchTrace;
use oded_core::{Dataset, Observation};

/// Files written by a run, removed again if the run fails.
#[derive(Debug, Default)]
pub(crate) struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn create(&mut self, path: &Path) -> Result<std::fs::File> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.written.push(path.to_path_buf());
        Ok(file)
    }

    fn csv(&mut self, path: &Path) -> Result<csv::Writer<std::fs::File>> {
        Ok(csv::Writer::from_writer(self.create(path)?))
    }

    pub(crate) fn remove_all(&mut self) {
        for p in self.written.drain(..) {
            let _ = std::fs::remove_file(&p);
        }
    }

    pub(crate) fn write_json(&mut self, path: &Path, value: &Value) -> Result<()> {
        use std::io::Write;
        let mut f = self.create(path)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    pub(crate) fn write_realizations(&mut self, path: &Path, rows: &[RealizationRow]) -> Result<()> {
        let mut w = self.csv(path)?;
        w.write_record(["curve", "t", "y"])?;
        for r in rows {
            w.write_record([r.curve.to_string(), r.t.to_string(), r.y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_dataset(&mut self, path: &Path, data: &Dataset) -> Result<()> {
        let mut w = self.csv(path)?;
        w.write_record(["time", "fruit", "y"])?;
        for r in &data.rows {
            let fruit = r.fruit.map(|g| g.to_string()).unwrap_or_default();
            w.write_record([r.time.to_string(), fruit, r.y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_per_sample(&mut self, path: &Path, utilities: &[Option<f64>]) -> Result<()> {
        let mut w = self.csv(path)?;
        w.write_record(["sample", "utility"])?;
        for (i, u) in utilities.iter().enumerate() {
            w.write_record([i.to_string(), u.map(|v| v.to_string()).unwrap_or_default()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_trace(&mut self, path: &Path, trace: &SearchTrace) -> Result<()> {
        let mut w = self.csv(path)?;
        for r in trace.records() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_matrix(
        &mut self,
        path: &Path,
        columns: &[String],
        rows: &[&str],
        values: &[Vec<f64>],
    ) -> Result<()> {
        let mut w = self.csv(path)?;
        let mut header = vec!["design".to_string()];
        header.extend(columns.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in rows.iter().zip(values) {
            let mut rec = vec![name.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct DataRow {
    time: f64,
    fruit: Option<usize>,
    y: f64,
}

/// Reads a `time,fruit,y` CSV; an empty fruit cell means no fruit id.
pub(crate) fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<DataRow>().enumerate() {
        let row = rec.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        rows.push(Observation { time: row.time, fruit: row.fruit, y: row.y });
    }
    if rows.is_empty() {
        bail!("{} has no data rows", path.display());
    }
    Ok(Dataset::new(rows))
}

#[derive(Debug, Serialize, Deserialize)]
struct DesignFile {
    times: Vec<f64>,
}

/// Times from a `design.json` written by `optimize`.
pub(crate) fn read_design_times(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let d: DesignFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(d.times)
}
