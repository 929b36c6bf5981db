use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance block carried by every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_name: String,
    pub config_hash: String,
    pub seed: u64,
    pub pde_dt: Option<f64>,
    pub mc_dt: f64,
}

impl Meta {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: VERSION.to_string(),
            config_name: cfg.name.clone(),
            config_hash: cfg.hash(),
            seed: cfg.mc.seed,
            pde_dt: cfg.solver.dt,
            mc_dt: cfg.mc.dt,
        }
    }

    fn csv_preamble(&self) -> String {
        let dt = self.pde_dt.map_or_else(|| "default".to_string(), |v| v.to_string());
        format!(
            "# fkbranch {} schema={} config={} hash={} seed={} pde_dt={} mc_dt={}\n",
            self.tool_version, self.schema_version, self.config_name, self.config_hash, self.seed, dt, self.mc_dt
        )
    }
}

#[derive(Serialize)]
struct Wrapped<'a, T: Serialize> {
    meta: &'a Meta,
    #[serde(flatten)]
    body: &'a T,
}

/// Output directory plus the list of files written so far.
pub struct Artifacts {
    dir: PathBuf,
    meta: Meta,
    written: Vec<String>,
    started: Instant,
}

impl Artifacts {
    pub fn create(dir: &Path, meta: Meta) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// `body` must serialize to a JSON object; `meta` is merged in.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &Wrapped { meta: &self.meta, body })?;
        w.write_all(b"\n")?;
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// CSV with a `#` provenance line, then `header` and `rows`.
    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.dir.join(name);
        let mut file = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        file.write_all(self.meta.csv_preamble().as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// `run_log.<command>.json`: the only file with wall-clock data, so that
    /// the other artifacts stay byte-identical across runs.
    pub fn finish(mut self, command: &str, status: &str) -> Result<()> {
        let log = RunLog {
            command: command.to_string(),
            status: status.to_string(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64() - self.started.elapsed().as_secs_f64())
                .unwrap_or(0.0),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
            files: std::mem::take(&mut self.written),
        };
        let meta = self.meta.clone();
        let path = self.dir.join(format!("run_log.{command}.json"));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &Wrapped { meta: &meta, body: &log })?;
        Ok(())
    }
}

#[derive(Serialize)]
struct RunLog {
    command: String,
    status: String,
    started_unix: f64,
    wall_clock_seconds: f64,
    threads: usize,
    files: Vec<String>,
}

/// Shortest round-trip formatting (exponent form for extreme magnitudes).
pub fn num(v: f64) -> String {
    format!("{v:?}")
}
