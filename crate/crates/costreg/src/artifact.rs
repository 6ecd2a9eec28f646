//! Run-directory layout: `config.resolved`, `metrics.csv`, optional
//! per-dimension scaling and trace CSVs, and `checkpoints/step_N` files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use costreg_core::checkpoint::Checkpoint;
use costreg_core::train::{MetricsRow, RunSink, TraceRow, TrainConfig};
use costreg_core::{Error, Result};

use crate::format::sig6;

pub const METRICS_HEADER: &str =
    "step,episode,ep_return,ep_cost,cum_cost,rc_ratio,ret_over_logcost,mean_rho,actor_loss,rcritic_loss,ccritic_loss,reg_loss";

fn io_err(context: &str, e: std::io::Error) -> Error {
    Error::Internal(format!("{context}: {e}"))
}

/// Streams run outputs into a run directory as they are produced, so a
/// numeric abort still leaves a readable partial artifact behind.
pub struct DirSink {
    dir: PathBuf,
    metrics: BufWriter<File>,
    rho_sidecar: Option<BufWriter<File>>,
    trace: Option<BufWriter<File>>,
    action_dim: usize,
}

impl DirSink {
    pub fn create(dir: &Path, config: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints"))
            .map_err(|e| Error::Config(format!("cannot create run directory '{}': {e}", dir.display())))?;
        fs::write(dir.join("config.resolved"), config.render_flat())
            .map_err(|e| io_err("writing config.resolved", e))?;

        let mut metrics = BufWriter::new(
            File::create(dir.join("metrics.csv")).map_err(|e| io_err("creating metrics.csv", e))?,
        );
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| io_err("writing metrics header", e))?;

        let action_dim = match config.env {
            costreg_core::train::EnvKind::PointMass => 2,
            costreg_core::train::EnvKind::Cstr => 1,
        };
        let rho_sidecar = if action_dim > 1 {
            let mut file = BufWriter::new(
                File::create(dir.join("rho_per_dim.csv"))
                    .map_err(|e| io_err("creating rho_per_dim.csv", e))?,
            );
            let mut header = String::from("step,episode");
            for i in 0..action_dim {
                header.push_str(&format!(",rho_{i}"));
            }
            writeln!(file, "{header}").map_err(|e| io_err("writing rho header", e))?;
            Some(file)
        } else {
            None
        };

        let trace = if config.trace {
            let mut file = BufWriter::new(
                File::create(dir.join("trace.csv")).map_err(|e| io_err("creating trace.csv", e))?,
            );
            let mut header = String::from("step");
            let obs_dim = match config.env {
                costreg_core::train::EnvKind::PointMass => 4,
                costreg_core::train::EnvKind::Cstr => 2,
            };
            for i in 0..obs_dim {
                header.push_str(&format!(",obs_{i}"));
            }
            for i in 0..action_dim {
                header.push_str(&format!(",raw_action_{i}"));
            }
            header.push_str(",cost_estimate");
            for i in 0..action_dim {
                header.push_str(&format!(",rho_{i}"));
            }
            for i in 0..action_dim {
                header.push_str(&format!(",scaled_action_{i}"));
            }
            writeln!(file, "{header}").map_err(|e| io_err("writing trace header", e))?;
            Some(file)
        } else {
            None
        };

        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            rho_sidecar,
            trace,
            action_dim,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl RunSink for DirSink {
    fn on_metrics(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(
            self.metrics,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.step,
            row.episode,
            sig6(row.ep_return),
            sig6(row.ep_cost),
            sig6(row.cum_cost),
            sig6(row.rc_ratio),
            sig6(row.ret_over_logcost),
            sig6(row.mean_rho),
            sig6(row.actor_loss),
            sig6(row.rcritic_loss),
            sig6(row.ccritic_loss),
            sig6(row.reg_loss)
        )
        .map_err(|e| io_err("writing metrics row", e))?;
        self.metrics.flush().map_err(|e| io_err("flushing metrics", e))?;

        if let Some(sidecar) = self.rho_sidecar.as_mut() {
            let mut line = format!("{},{}", row.step, row.episode);
            for i in 0..self.action_dim {
                line.push(',');
                line.push_str(&sig6(row.rho_per_dim.get(i).copied().unwrap_or(1.0)));
            }
            writeln!(sidecar, "{line}").map_err(|e| io_err("writing rho row", e))?;
            sidecar.flush().map_err(|e| io_err("flushing rho sidecar", e))?;
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, step: u64, checkpoint: &Checkpoint) -> Result<()> {
        let path = self.dir.join("checkpoints").join(format!("step_{step}"));
        fs::write(path, checkpoint.encode()).map_err(|e| io_err("writing checkpoint", e))
    }

    fn on_trace(&mut self, row: &TraceRow) -> Result<()> {
        if let Some(trace) = self.trace.as_mut() {
            let mut line = format!("{}", row.step);
            for v in row
                .observation
                .iter()
                .chain(row.raw_action.iter())
                .chain(core::iter::once(&row.cost_estimate))
                .chain(row.rho.iter())
                .chain(row.scaled_action.iter())
            {
                line.push(',');
                line.push_str(&sig6(*v));
            }
            writeln!(trace, "{line}").map_err(|e| io_err("writing trace row", e))?;
        }
        Ok(())
    }
}

/// Parsed metrics table: the header fields and numeric rows.
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// Read a `metrics.csv` produced by [`DirSink`].
pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read '{}': {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("'{}' is empty", path.display())))?;
    let columns: Vec<String> = header.split(',').map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|_| {
            Error::Checkpoint(format!("'{}' line {}: malformed number", path.display(), i + 2))
        })?;
        if row.len() != columns.len() {
            return Err(Error::Checkpoint(format!(
                "'{}' line {}: {} fields, expected {}",
                path.display(),
                i + 2,
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok(MetricsTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use costreg_core::env::PointMassParams;
    use costreg_core::train::train;

    fn micro_config() -> TrainConfig {
        TrainConfig {
            hidden_sizes: vec![8, 8],
            batch_size: 8,
            buffer_capacity: 1024,
            warmup_steps: 10,
            total_steps: 60,
            checkpoint_every: 25,
            point_mass: PointMassParams { horizon: 20, ..PointMassParams::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn run_directory_layout_and_readback() {
        let tmp = tempfile::tempdir().unwrap();
        let config = micro_config();
        let mut sink = DirSink::create(tmp.path(), &config).unwrap();
        train(&config, &mut sink).unwrap();

        assert!(tmp.path().join("config.resolved").exists());
        assert!(tmp.path().join("rho_per_dim.csv").exists());
        assert!(tmp.path().join("checkpoints/step_25").exists());
        assert!(tmp.path().join("checkpoints/step_50").exists());
        assert!(tmp.path().join("checkpoints/step_60").exists());

        let table = read_metrics(&tmp.path().join("metrics.csv")).unwrap();
        assert_eq!(table.columns.join(","), METRICS_HEADER);
        assert_eq!(table.rows.len(), 3, "60 steps / horizon 20");
        let cum = table.column("cum_cost").unwrap();
        assert!(cum.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn checkpoint_files_decode() {
        let tmp = tempfile::tempdir().unwrap();
        let config = micro_config();
        let mut sink = DirSink::create(tmp.path(), &config).unwrap();
        train(&config, &mut sink).unwrap();
        let bytes = fs::read(tmp.path().join("checkpoints/step_60")).unwrap();
        let ckpt = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(bytes, ckpt.encode());
    }
}
