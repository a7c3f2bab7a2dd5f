//! Seeded Monte-Carlo harness: runs a scenario over a sweep grid, trains
//! every requested method on shared per-trial realizations, and aggregates
//! MSE / SER / iteration counts into a CSV table plus a run manifest.
//!
//! Determinism: each trial's data seed derives from
//! `(root seed, sweep value, trial index)` through splitmix64, so all
//! methods at a trial see the same symbols, channel realization and noise
//! (paired comparison), re-running a scenario reproduces the output
//! byte for byte, and trial-level parallelism cannot reorder results. The
//! CSV time column is `nan` unless the scenario opts into `timings`;
//! measured wall times always go to the manifest, which is not part of the
//! reproducibility contract.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::augmented::{AllocationMatrix, AllocationStrategy, AugmentedVector};
use crate::channel::snr_db_to_noise_var;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::metrics::{compute_mse, compute_ser, Split};
use crate::network::PhycomNetwork;
use crate::scenario::{Method, Scenario};
use crate::seed::{derive_seed, make_rng};
use crate::trainer::{semi_supervised_train, TrainOptions};

/// Which scenario dimension the harness sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// Sweep `snr_grid` at the scenario's pilot count.
    Snr,
    /// Sweep `np_grid` at `snr_fixed`.
    Pilots,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::Snr => "snr_db",
            SweepVariable::Pilots => "n_p",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "snr" | "snr_db" => Ok(SweepVariable::Snr),
            "pilots" | "n_p" | "np" => Ok(SweepVariable::Pilots),
            other => Err(Error::Config(format!("unknown sweep '{other}'"))),
        }
    }
}

/// Metrics of one method on one trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub mse_train: f64,
    pub mse_test: f64,
    pub ser_train: f64,
    pub ser_test: f64,
    pub iters_supervised: usize,
    pub iters_self: usize,
    pub train_seconds: f64,
    /// Failure message when training did not produce a usable result.
    pub failed: Option<String>,
}

/// All trials of one method at one grid point.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub x: f64,
    pub method: Method,
    pub records: Vec<TrialRecord>,
}

impl CellResult {
    pub fn successes(&self) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(|r| r.failed.is_none())
    }

    pub fn num_successes(&self) -> usize {
        self.successes().count()
    }

    pub fn failures(&self) -> usize {
        self.records.len() - self.num_successes()
    }

    fn mean(&self, f: impl Fn(&TrialRecord) -> f64) -> f64 {
        let n = self.num_successes();
        if n == 0 {
            return f64::NAN;
        }
        self.successes().map(f).sum::<f64>() / n as f64
    }

    pub fn mean_mse_train(&self) -> f64 {
        self.mean(|r| r.mse_train)
    }

    pub fn mean_mse_test(&self) -> f64 {
        self.mean(|r| r.mse_test)
    }

    pub fn mean_ser_train(&self) -> f64 {
        self.mean(|r| r.ser_train)
    }

    pub fn mean_ser_test(&self) -> f64 {
        self.mean(|r| r.ser_test)
    }

    pub fn mean_iters_supervised(&self) -> f64 {
        self.mean(|r| r.iters_supervised as f64)
    }

    pub fn mean_iters_self(&self) -> f64 {
        self.mean(|r| r.iters_self as f64)
    }

    pub fn mean_train_seconds(&self) -> f64 {
        self.mean(|r| r.train_seconds)
    }

    pub fn median_iters_supervised(&self) -> f64 {
        median(self.successes().map(|r| r.iters_supervised as f64).collect())
    }

    pub fn median_iters_self(&self) -> f64 {
        median(self.successes().map(|r| r.iters_self as f64).collect())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Outcome of a full sweep.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario_name: String,
    pub sweep: SweepVariable,
    pub cells: Vec<CellResult>,
    pub timings_in_csv: bool,
    pub total_seconds: f64,
}

impl RunResult {
    /// The cell for a given grid value and method.
    pub fn cell(&self, x: f64, method: Method) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.x == x && c.method == method)
    }

    /// Render the CSV table (one line per grid point and method).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "x,method,mse_train,mse_test,ser_train,ser_test,iters_supervised,iters_self,time_s,trials,failures\n",
        );
        for cell in &self.cells {
            let time_s = if self.timings_in_csv {
                format!("{:.4}", cell.mean_train_seconds())
            } else {
                "nan".to_string()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.2},{:.2},{},{},{}\n",
                format_x(cell.x),
                cell.method.name(),
                format_metric(cell.mean_mse_train()),
                format_metric(cell.mean_mse_test()),
                format_metric(cell.mean_ser_train()),
                format_metric(cell.mean_ser_test()),
                cell.mean_iters_supervised(),
                cell.mean_iters_self(),
                time_s,
                cell.num_successes(),
                cell.failures(),
            ));
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    /// Render the run manifest: configuration echo, versions and timings.
    pub fn manifest(&self, scenario: &Scenario) -> String {
        let mut out = String::new();
        out.push_str(&format!("phycom_version = {}\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("sweep = {}\n", self.sweep.name()));
        out.push_str(&format!("total_seconds = {:.3}\n", self.total_seconds));
        for cell in &self.cells {
            out.push_str(&format!(
                "cell {} {}: trials = {}, failures = {}, mean_train_seconds = {:.4}\n",
                format_x(cell.x),
                cell.method.name(),
                cell.num_successes(),
                cell.failures(),
                cell.mean_train_seconds(),
            ));
        }
        out.push_str("--- scenario ---\n");
        out.push_str(&scenario.to_file_string());
        out
    }
}

fn format_x(x: f64) -> String {
    if x == x.trunc() {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn format_metric(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.8e}")
    }
}

struct GridPoint {
    x: f64,
    snr_db: f64,
    n_p: usize,
}

fn build_grid(sc: &Scenario, sweep: SweepVariable) -> Result<Vec<GridPoint>> {
    match sweep {
        SweepVariable::Snr => {
            if sc.snr_grid.is_empty() {
                return Err(Error::Config("scenario has an empty snr_grid".into()));
            }
            Ok(sc
                .snr_grid
                .iter()
                .map(|&snr| GridPoint { x: snr, snr_db: snr, n_p: sc.n_p })
                .collect())
        }
        SweepVariable::Pilots => {
            if sc.np_grid.is_empty() {
                return Err(Error::Config("scenario has an empty np_grid".into()));
            }
            Ok(sc
                .np_grid
                .iter()
                .map(|&n_p| GridPoint { x: n_p as f64, snr_db: sc.snr_fixed, n_p })
                .collect())
        }
    }
}

fn allocation_for(sc: &Scenario, n_p: usize) -> Result<AllocationMatrix> {
    match (sc.allocation, sc.mixed_preamble) {
        (AllocationStrategy::Mixed, Some(p)) => AllocationMatrix::mixed(sc.n, n_p, p),
        (strategy, _) => AllocationMatrix::new(strategy, sc.n, n_p),
    }
}

/// Evaluate one method on one realized trial. Returns metrics or a failure.
fn run_method(
    sc: &Scenario,
    method: Method,
    pinned: &crate::channel::ChannelModel,
    constellation: &Constellation,
    s: &crate::constellation::SymbolVector,
    x0: &AugmentedVector,
    y0: &AugmentedVector,
    alloc: &AllocationMatrix,
    trial: usize,
) -> TrialRecord {
    let started = Instant::now();
    let outcome: Result<(PhycomNetwork, usize, usize)> = (|| match method {
        Method::Clairvoyant => {
            let net = PhycomNetwork::mirror_of(pinned, constellation.clone())?;
            Ok((net, 0, 0))
        }
        Method::Phycom1 | Method::Phycom2 => {
            let mut net = sc.network()?;
            let opts = TrainOptions {
                config: sc.lm.clone(),
                feedback: method == Method::Phycom2,
                truncate: sc.truncate,
            };
            let pilot_syms = s.select(alloc.pilot_indices());
            let (report, _) = semi_supervised_train(&mut net, y0, &pilot_syms, alloc, &opts)?;
            Ok((net, report.iterations_supervised(), report.iterations_self()))
        }
    })();

    match outcome.and_then(|(net, it1, it2)| {
        let trace = net.forward(y0)?;
        let y_l = trace.output();
        let s_hat = net.detect(y_l);
        let full_pilots = alloc.num_pilots() == alloc.n();
        Ok(TrialRecord {
            trial,
            mse_train: compute_mse(x0, y_l, alloc, Split::Train)?,
            mse_test: if full_pilots {
                f64::NAN
            } else {
                compute_mse(x0, y_l, alloc, Split::Test)?
            },
            ser_train: compute_ser(s, &s_hat, alloc, Split::Train)?,
            ser_test: if full_pilots {
                f64::NAN
            } else {
                compute_ser(s, &s_hat, alloc, Split::Test)?
            },
            iters_supervised: it1,
            iters_self: it2,
            train_seconds: started.elapsed().as_secs_f64(),
            failed: None,
        })
    }) {
        Ok(record) => record,
        Err(e) => TrialRecord {
            trial,
            mse_train: f64::NAN,
            mse_test: f64::NAN,
            ser_train: f64::NAN,
            ser_test: f64::NAN,
            iters_supervised: 0,
            iters_self: 0,
            train_seconds: started.elapsed().as_secs_f64(),
            failed: Some(e.to_string()),
        },
    }
}

/// Run every grid point, trial and method of a scenario sweep.
///
/// Trials run in parallel; results reduce in `(grid, trial, method)` order
/// so the output never depends on scheduling. Fails when any cell exceeds a
/// 5% trial failure rate.
pub fn run_scenario(sc: &Scenario, sweep: SweepVariable) -> Result<RunResult> {
    sc.validate()?;
    let started = Instant::now();
    let constellation = Constellation::by_name(&sc.constellation)?;
    let channel = sc.channel()?;
    let grid = build_grid(sc, sweep)?;

    let mut cells: Vec<CellResult> = Vec::new();
    for point in &grid {
        let alloc = allocation_for(sc, point.n_p)?;
        let noise_var = snr_db_to_noise_var(point.snr_db);
        let noisy = channel.with_noise_variance(noise_var);

        // One job per trial: realize the data once, then evaluate every
        // method on it.
        let per_trial: Vec<Vec<TrialRecord>> = (0..sc.trials)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed(sc.seed, &[point.x.to_bits(), trial as u64]);
                let mut rng = make_rng(seed);
                let s = constellation.draw_symbols(sc.n, &mut rng);
                let pinned = noisy.pin_stochastic(sc.n, &mut rng);
                let y0 = pinned
                    .propagate(&s, &mut rng)
                    .expect("pinned channels propagate deterministically");
                let x0 = AugmentedVector::from_complex(s.symbols());
                sc.methods
                    .iter()
                    .map(|&method| {
                        run_method(sc, method, &pinned, &constellation, &s, &x0, &y0, &alloc, trial)
                    })
                    .collect()
            })
            .collect();

        for (mi, &method) in sc.methods.iter().enumerate() {
            let records: Vec<TrialRecord> =
                per_trial.iter().map(|methods| methods[mi].clone()).collect();
            cells.push(CellResult { x: point.x, method, records });
        }
    }

    for cell in &cells {
        let rate = cell.failures() as f64 / cell.records.len() as f64;
        if rate > 0.05 {
            return Err(Error::Benchmark(format!(
                "{} failures out of {} trials for {} at {} = {}",
                cell.failures(),
                cell.records.len(),
                cell.method.name(),
                sweep.name(),
                format_x(cell.x),
            )));
        }
    }

    Ok(RunResult {
        scenario_name: sc.name.clone(),
        sweep,
        cells,
        timings_in_csv: sc.timings,
        total_seconds: started.elapsed().as_secs_f64(),
    })
}
