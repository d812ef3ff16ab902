//! CSV files with a commented metadata header.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Prefix of the one header line that differs between identical runs.
pub const GENERATED_PREFIX: &str = "# generated:";

#[derive(Clone, Debug, PartialEq)]
pub struct RunMeta {
    pub scenario_sha256: String,
    pub master_seed: u64,
    pub n_paths: usize,
    pub h: f64,
    pub variant: String,
}

pub struct ReportWriter {
    dir: PathBuf,
    meta: RunMeta,
    pub files: Vec<PathBuf>,
}

impl ReportWriter {
    pub fn create(dir: &Path, meta: RunMeta) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ReportWriter { dir: dir.to_path_buf(), meta, files: Vec::new() })
    }

    fn header<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let m = &self.meta;
        writeln!(w, "# acert {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(w, "# scenario_sha256: {}", m.scenario_sha256)?;
        writeln!(w, "# master_seed: {}", m.master_seed)?;
        writeln!(w, "# n_paths: {}", m.n_paths)?;
        writeln!(w, "# h: {:e}", m.h)?;
        writeln!(w, "# variant: {}", m.variant)?;
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        writeln!(w, "{GENERATED_PREFIX} unix {secs}")
    }

    /// Writes `name` with the metadata header followed by `body`.
    pub fn write<F>(&mut self, name: &str, body: F) -> io::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        self.header(&mut w)?;
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }
}

/// File contents without comment lines, for reproducibility checks.
pub fn csv_body(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}
