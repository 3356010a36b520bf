//! CSV/JSON writers. Floats go out as `{:.16e}` (17 significant digits).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::state::TrajectoryDistribution;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("writing {}: {e}", path.display()))
}

/// Collects the files written by a run.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(Self {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// File names written so far, in write order.
    pub fn written_names(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name()?.to_str().map(String::from))
            .collect()
    }

    pub fn into_files(self) -> Vec<PathBuf> {
        self.written
    }

    fn open(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.root.join(name);
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        self.written.push(path.clone());
        Ok((path, BufWriter::new(f)))
    }

    /// Writes a header and rows of already formatted cells.
    pub fn csv<I, R>(&mut self, name: &str, header: &[String], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let (path, out) = self.open(name)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))
    }

    /// `t,mean,var`
    pub fn trajectory(&mut self, name: &str, d: &TrajectoryDistribution<f64>) -> Result<()> {
        let header = ["t", "mean", "var"].map(String::from);
        let rows = (0..d.len()).map(|i| [d.times[i], d.means[i], d.vars[i]].map(fmt_float));
        self.csv(name, &header, rows)
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let (path, mut out) = self.open(name)?;
        serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(&path, e))?;
        writeln!(out).map_err(|e| io_err(&path, e))?;
        out.flush().map_err(|e| io_err(&path, e))
    }

    /// Raw writer for callers that stream their own format.
    pub fn with_writer(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let (path, mut out) = self.open(name)?;
        f(&mut out)?;
        out.flush().map_err(|e| io_err(&path, e))
    }
}

/// `0.05 -> "0.05"`, used in file names.
pub fn step_label(h: f64) -> String {
    format!("{h}")
}
