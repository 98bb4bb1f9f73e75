//! Run directory contents: CSV tables, metadata documents and the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use neurofield::diagnostics::SweepReport;
use neurofield::measure::{DistanceReport, FieldStats};
use neurofield::meanfield::Iterate;

use crate::CliError;

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub threads: usize,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub stages: Vec<Stage>,
    pub files: Vec<FileEntry>,
}

/// Collects the files written into one run directory.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    /// The directory itself is created by the first write.
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), files: Vec::new() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Open `name` for writing and register it in the inventory.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        let path = self.root.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(w).map_err(CliError::from)
        })
    }

    pub fn inventory(&self) -> Result<Vec<FileEntry>, CliError> {
        self.files
            .iter()
            .map(|name| {
                let path = self.root.join(name);
                let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                Ok(FileEntry { path: name.clone(), bytes: bytes.len() as u64, sha256: hex_digest(&bytes) })
            })
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_iterates<W: Write>(w: &mut W, iterates: &[Iterate]) -> std::io::Result<()> {
    writeln!(w, "iteration,w2,subsample")?;
    for it in iterates {
        writeln!(w, "{},{},{}", it.iteration, it.w2, it.subsample)?;
    }
    Ok(())
}

/// `t, node, r_1..r_d` then the unscaled and scaled statistics.
pub fn write_stats<W: Write>(w: &mut W, label: Option<&str>, stats: &FieldStats, header: bool) -> std::io::Result<()> {
    let dim = stats.r_nodes.first().map_or(0, Vec::len);
    if header {
        if label.is_some() {
            write!(w, "ensemble,")?;
        }
        write!(w, "t,node")?;
        for d in 1..=dim {
            write!(w, ",r_{d}")?;
        }
        writeln!(w, ",M,Sigma,m,K,m_se,K_se")?;
    }
    let times = stats.times();
    for (n, r) in stats.r_nodes.iter().enumerate() {
        let l = stats.lambda[n];
        for (t, time) in times.iter().enumerate() {
            if let Some(label) = label {
                write!(w, "{label},")?;
            }
            write!(w, "{time},{n}")?;
            for x in r {
                write!(w, ",{x}")?;
            }
            writeln!(
                w,
                ",{},{},{},{},{},{}",
                stats.mean[n][t],
                stats.sigma(n, t, t),
                stats.m(n, t),
                stats.k(n, t, t),
                stats.mean_se[n][t] / l,
                stats.var_se[n][t] / (l * l)
            )?;
        }
    }
    Ok(())
}

pub fn write_distances<W: Write>(w: &mut W, reports: &[DistanceReport]) -> std::io::Result<()> {
    writeln!(w, "method,value,n_a,n_b,subsample")?;
    for r in reports {
        writeln!(w, "{},{},{},{},{}", r.method.name(), r.value, r.sample_sizes.0, r.sample_sizes.1, r.subsample)?;
    }
    Ok(())
}

pub fn write_sweep<W: Write>(w: &mut W, report: &SweepReport) -> std::io::Result<()> {
    writeln!(w, "n,replicate,pair_a,pair_b,statistic,value,std_error,pass")?;
    for r in &report.rows {
        let (a, b) = r.pair.map_or((String::new(), String::new()), |[a, b]| (a.to_string(), b.to_string()));
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.n,
            r.replicate.map_or_else(String::new, |x| x.to_string()),
            a,
            b,
            r.statistic,
            r.value,
            opt(r.std_error),
            r.pass.map_or_else(String::new, |p| p.to_string())
        )?;
    }
    Ok(())
}

pub fn write_identities<W: Write>(w: &mut W, report: &SweepReport) -> std::io::Result<()> {
    writeln!(w, "identity,value,std_error,pass")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.statistic,
            r.value,
            opt(r.std_error),
            r.pass.map_or_else(String::new, |p| p.to_string())
        )?;
    }
    Ok(())
}
