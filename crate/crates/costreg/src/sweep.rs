//! Ablation sweeps: a cross product of axis values and seeds, each cell a
//! full training run in its own artifact directory, aggregated into
//! `summary.csv` with per-cell mean and standard deviation.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use costreg_core::train::{train, MetricsRow, TrainConfig};
use costreg_core::{Error, Result};

use crate::artifact::DirSink;
use crate::format::sig6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Beta,
    Noise,
    ScalingMode,
}

impl SweepAxis {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "lambda" => Ok(SweepAxis::Lambda),
            "beta" => Ok(SweepAxis::Beta),
            "noise" => Ok(SweepAxis::Noise),
            "scaling_mode" => Ok(SweepAxis::ScalingMode),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (expected lambda, beta, noise, or scaling_mode)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Beta => "beta",
            SweepAxis::Noise => "noise",
            SweepAxis::ScalingMode => "scaling_mode",
        }
    }

    /// Apply one axis value to a config.
    pub fn apply(self, config: &mut TrainConfig, value: &str) -> Result<()> {
        match self {
            SweepAxis::Lambda => config.set_key("lambda", value),
            SweepAxis::Beta => config.set_key("beta", value),
            SweepAxis::Noise => config.set_key("noise_sigma", value),
            SweepAxis::ScalingMode => match value {
                "elementwise" => config.set_key("scalar_mode", "false"),
                "scalar" => config.set_key("scalar_mode", "true"),
                other => Err(Error::Config(format!(
                    "scaling_mode values are 'elementwise' or 'scalar', got '{other}'"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub value: String,
    pub seed: u64,
    pub dir: PathBuf,
    /// Final metrics row, or the failure message.
    pub outcome: std::result::Result<Option<MetricsRow>, String>,
}

pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub summary_path: PathBuf,
}

/// Run `values x seeds` cells under `out_dir`, `jobs` at a time. Individual
/// cell failures are recorded in the summary and do not stop the sweep.
pub fn run_sweep(
    base: &TrainConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: u64,
    out_dir: &Path,
    jobs: usize,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if seeds == 0 {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    // Validate every cell config up front so bad values fail fast.
    let mut cells: Vec<(String, u64, TrainConfig, PathBuf)> = Vec::new();
    for value in values {
        for k in 0..seeds {
            let mut config = base.clone();
            axis.apply(&mut config, value)?;
            config.seed = base.seed + k;
            config.validate()?;
            let dir = out_dir
                .join(format!("{}_{}", axis.name(), value))
                .join(format!("seed_{}", config.seed));
            cells.push((value.clone(), config.seed, config, dir));
        }
    }

    let queue: Mutex<VecDeque<(String, u64, TrainConfig, PathBuf)>> = Mutex::new(cells.into());
    let results: Mutex<Vec<CellResult>> = Mutex::new(Vec::new());
    let workers = jobs.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let cell = queue.lock().expect("queue lock").pop_front();
                let Some((value, seed, config, dir)) = cell else {
                    break;
                };
                let outcome = run_cell(&config, &dir);
                results.lock().expect("results lock").push(CellResult {
                    value,
                    seed,
                    dir,
                    outcome,
                });
            });
        }
    });

    let mut cells = results.into_inner().expect("results lock");
    cells.sort_by(|a, b| (&a.value, a.seed).cmp(&(&b.value, b.seed)));

    let summary_path = out_dir.join("summary.csv");
    write_summary(&summary_path, axis, values, &cells)?;
    Ok(SweepReport { cells, summary_path })
}

fn run_cell(config: &TrainConfig, dir: &Path) -> std::result::Result<Option<MetricsRow>, String> {
    let mut sink = DirSink::create(dir, config).map_err(|e| e.to_string())?;
    match train(config, &mut sink) {
        Ok(outcome) => Ok(outcome.final_metrics),
        Err(e) => Err(e.to_string()),
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn write_summary(path: &Path, axis: SweepAxis, values: &[String], cells: &[CellResult]) -> Result<()> {
    let mut out = String::from(
        "axis,value,seeds,failures,mean_return,std_return,mean_cum_cost,std_cum_cost,mean_rc,std_rc\n",
    );
    for value in values {
        let group: Vec<&CellResult> = cells.iter().filter(|c| &c.value == value).collect();
        let finals: Vec<&MetricsRow> = group
            .iter()
            .filter_map(|c| c.outcome.as_ref().ok().and_then(|m| m.as_ref()))
            .collect();
        let failures = group.iter().filter(|c| c.outcome.is_err()).count();
        let returns: Vec<f64> = finals.iter().map(|m| m.ep_return).collect();
        let costs: Vec<f64> = finals.iter().map(|m| m.cum_cost).collect();
        let rcs: Vec<f64> = finals.iter().map(|m| m.rc_ratio).collect();
        let (mr, sr) = mean_std(&returns);
        let (mc, sc) = mean_std(&costs);
        let (mrc, src) = mean_std(&rcs);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            axis.name(),
            value,
            group.len(),
            failures,
            sig6(mr),
            sig6(sr),
            sig6(mc),
            sig6(sc),
            sig6(mrc),
            sig6(src)
        ));
    }
    fs::write(path, out).map_err(|e| Error::Internal(format!("writing summary.csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use costreg_core::env::PointMassParams;

    fn micro_config() -> TrainConfig {
        TrainConfig {
            hidden_sizes: vec![8],
            batch_size: 8,
            buffer_capacity: 512,
            warmup_steps: 10,
            total_steps: 40,
            checkpoint_every: 0,
            point_mass: PointMassParams { horizon: 20, ..PointMassParams::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn grid_produces_one_directory_per_cell() {
        let tmp = tempfile::tempdir().unwrap();
        let values = vec!["0.001".to_string(), "0.25".to_string()];
        let report = run_sweep(&micro_config(), SweepAxis::Lambda, &values, 2, tmp.path(), 2).unwrap();
        assert_eq!(report.cells.len(), 4);
        for cell in &report.cells {
            assert!(cell.dir.join("metrics.csv").exists(), "{:?}", cell.dir);
            assert!(cell.outcome.is_ok());
        }
        let summary = std::fs::read_to_string(&report.summary_path).unwrap();
        assert_eq!(summary.lines().count(), 3, "header plus one row per value");
    }

    #[test]
    fn single_cell_equals_plain_train() {
        let tmp = tempfile::tempdir().unwrap();
        let config = micro_config();
        let values = vec!["10".to_string()];
        run_sweep(&config, SweepAxis::Beta, &values, 1, tmp.path(), 1).unwrap();

        let direct = tmp.path().join("direct");
        let mut check = config.clone();
        SweepAxis::Beta.apply(&mut check, "10").unwrap();
        let mut sink = DirSink::create(&direct, &check).unwrap();
        train(&check, &mut sink).unwrap();

        let a = std::fs::read_to_string(tmp.path().join("beta_10/seed_0/metrics.csv")).unwrap();
        let b = std::fs::read_to_string(direct.join("metrics.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_results_aggregate_to_zero_std() {
        let xs = [4.5, 4.5, 4.5];
        let (mean, std) = mean_std(&xs);
        assert_eq!(mean, 4.5);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn scaling_mode_axis_toggles_scalar_flag() {
        let mut config = micro_config();
        SweepAxis::ScalingMode.apply(&mut config, "scalar").unwrap();
        assert!(config.scalar_mode);
        SweepAxis::ScalingMode.apply(&mut config, "elementwise").unwrap();
        assert!(!config.scalar_mode);
        assert!(SweepAxis::ScalingMode.apply(&mut config, "both").is_err());
    }
}
