//! Levenberg-Marquardt training of compensation networks.
//!
//! The optimizer minimizes half the squared pilot residual. Steps solve the
//! damped normal equations `(J^T J + mu I) h = -J^T f` on the K x K system
//! (K is small), with gain-ratio trust-region damping: a step is accepted
//! when the actual cost reduction is a positive fraction of the reduction
//! predicted by the linear model, the damping then shrinks by
//! `max(1/3, 1 - (2 rho - 1)^3)`; a rejected step doubles the damping and
//! reuses the current Jacobian, so only the cheap forward pass reruns.
//!
//! Training comes in two flavors: supervised (pilots only) and
//! semi-supervised, which re-trains on the network's own detected symbols
//! over the full block after the supervised stage. The self stage never
//! touches ground-truth data symbols; its labels are exactly the detected
//! symbols of the first stage.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::augmented::{AllocationMatrix, AugmentedVector};
use crate::constellation::SymbolVector;
use crate::error::{Error, Result};
use crate::network::{ForwardTrace, PhycomNetwork};

/// Optimizer settings. Defaults reproduce the catalogue scenarios in a few
/// tens of iterations.
#[derive(Debug, Clone)]
pub struct LmConfig {
    /// Bound on attempted steps per stage.
    pub max_iterations: usize,
    /// Stop when an accepted step reduces the cost by less than
    /// `ftol * cost`.
    pub ftol: f64,
    /// Stop when the accepted step norm falls below
    /// `xtol * (|theta| + xtol)`.
    pub xtol: f64,
    /// Stop when the gradient infinity-norm falls below `gtol`.
    pub gtol: f64,
    /// Explicit initial damping; `None` derives it from the first Jacobian
    /// as `mu_init_scale * max(diag(J^T J))`.
    pub mu_init: Option<f64>,
    pub mu_init_scale: f64,
    /// Damping multiplier on rejection (> 1).
    pub mu_increase: f64,
    /// Lower bound of the damping shrink factor on acceptance (< 1).
    pub mu_decrease_floor: f64,
    /// A step is accepted when the gain ratio exceeds this (>= 0).
    pub gain_ratio_accept: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-8,
            mu_init: None,
            mu_init_scale: 1e-3,
            mu_increase: 2.0,
            mu_decrease_floor: 1.0 / 3.0,
            gain_ratio_accept: 0.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ftol <= 0.0 || self.xtol <= 0.0 || self.gtol <= 0.0 {
            return Err(Error::Config("LM tolerances must be positive".into()));
        }
        if self.mu_increase <= 1.0 {
            return Err(Error::Config("damping increase factor must exceed 1".into()));
        }
        if !(0.0..1.0).contains(&self.mu_decrease_floor) {
            return Err(Error::Config("damping decrease floor must be in (0, 1)".into()));
        }
        if self.gain_ratio_accept < 0.0 {
            return Err(Error::Config("gain-ratio acceptance threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Why a stage stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Cost reduction fell below `ftol * cost`.
    Ftol,
    /// Step norm fell below the parameter resolution.
    Xtol,
    /// Gradient infinity-norm fell below `gtol`.
    Gtol,
    /// Iteration budget exhausted.
    MaxIterations,
    /// Nothing to optimize (zero trainable parameters).
    NoParameters,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::Ftol => "ftol",
            Termination::Xtol => "xtol",
            Termination::Gtol => "gtol",
            Termination::MaxIterations => "max_iterations",
            Termination::NoParameters => "no_parameters",
        };
        f.write_str(s)
    }
}

/// Outcome of one optimization stage.
#[derive(Debug, Clone)]
pub struct StageReport {
    /// Attempted steps (each solves the normal equations and tries a point).
    pub iterations: usize,
    /// How many of those were accepted.
    pub accepted: usize,
    /// `(iteration, cost)` after the initial point and every accepted step.
    pub history: Vec<(usize, f64)>,
    pub termination: Termination,
    /// Wall time spent in forward passes / in Jacobian backpropagation.
    pub forward_time: Duration,
    pub backward_time: Duration,
    pub forward_passes: usize,
    pub backward_passes: usize,
}

impl StageReport {
    pub fn final_cost(&self) -> f64 {
        self.history.last().map(|&(_, c)| c).unwrap_or(f64::NAN)
    }
}

/// Combined report of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub supervised: StageReport,
    pub self_stage: Option<StageReport>,
    pub final_params: Vec<f64>,
}

impl TrainReport {
    pub fn iterations_supervised(&self) -> usize {
        self.supervised.iterations
    }

    pub fn iterations_self(&self) -> usize {
        self.self_stage.as_ref().map_or(0, |s| s.iterations)
    }

    pub fn forward_time(&self) -> Duration {
        self.supervised.forward_time
            + self.self_stage.as_ref().map_or(Duration::ZERO, |s| s.forward_time)
    }

    pub fn backward_time(&self) -> Duration {
        self.supervised.backward_time
            + self.self_stage.as_ref().map_or(Duration::ZERO, |s| s.backward_time)
    }
}

/// Options for [`semi_supervised_train`].
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub config: LmConfig,
    /// Run the self-labeled second stage.
    pub feedback: bool,
    /// Train on the first `n_t` samples only (preamble-style allocations).
    /// Detection and reporting still cover the full block.
    pub truncate: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { config: LmConfig::default(), feedback: true, truncate: None }
    }
}

/// A residual/Jacobian pair the LM core can drive.
///
/// Call protocol: `jacobian` is always evaluated at the parameters of the
/// immediately preceding `residuals` call, which lets implementations cache
/// the forward state.
pub trait LeastSquares {
    fn residuals(&mut self, theta: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&mut self) -> Result<DMatrix<f64>>;
}

/// Solve `(J^T J + mu I) h = -g`. Cholesky first, LU as fallback.
pub(crate) fn damped_step(jtj: &DMatrix<f64>, g: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let k = jtj.nrows();
    let mut a = jtj.clone();
    for i in 0..k {
        a[(i, i)] += mu;
    }
    let rhs = -g;
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(&rhs));
    }
    a.lu().solve(&rhs)
}

fn half_norm_sq(f: &[f64]) -> f64 {
    0.5 * f.iter().map(|x| x * x).sum::<f64>()
}

/// Minimize `0.5 ||f(theta)||^2` from `theta0`. Returns the best parameters
/// and the stage report; the problem is left at an unspecified parameter
/// state (callers restore the returned vector).
pub fn lm_minimize_problem<P: LeastSquares>(
    problem: &mut P,
    theta0: &[f64],
    cfg: &LmConfig,
) -> Result<(Vec<f64>, StageReport)> {
    cfg.validate()?;
    let mut theta = theta0.to_vec();
    let f = problem.residuals(&theta)?;
    let mut cost = half_norm_sq(&f);
    let mut f = DVector::from_vec(f);
    let mut history = vec![(0usize, cost)];

    if theta.is_empty() {
        return Ok((
            theta,
            StageReport {
                iterations: 0,
                accepted: 0,
                history,
                termination: Termination::NoParameters,
                forward_time: Duration::ZERO,
                backward_time: Duration::ZERO,
                forward_passes: 1,
                backward_passes: 0,
            },
        ));
    }

    let mut j = problem.jacobian()?;
    let mut jtj = j.tr_mul(&j);
    let mut g = j.tr_mul(&f);
    let mut mu = cfg.mu_init.unwrap_or_else(|| {
        let max_diag = (0..jtj.nrows()).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        (cfg.mu_init_scale * max_diag).max(f64::MIN_POSITIVE)
    });

    let mut iterations = 0;
    let mut accepted = 0;
    let mut consecutive_rejects = 0;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < cfg.max_iterations {
        if g.amax() < cfg.gtol {
            termination = Termination::Gtol;
            break;
        }
        iterations += 1;

        let Some(h) = damped_step(&jtj, &g, mu) else {
            // Normal equations unsolvable at this damping; retreat.
            mu *= cfg.mu_increase;
            consecutive_rejects += 1;
            if consecutive_rejects > 64 {
                return Err(Error::Training(format!(
                    "normal equations unsolvable after {iterations} iterations (mu = {mu:.3e})"
                )));
            }
            continue;
        };

        let trial: Vec<f64> = theta.iter().zip(h.iter()).map(|(t, d)| t + d).collect();
        // A singular layer at the trial point counts as a rejected step.
        let trial_cost = match problem.residuals(&trial) {
            Ok(ft) => Some((half_norm_sq(&ft), ft)),
            Err(Error::SingularLayer { .. }) => None,
            Err(e) => return Err(e),
        };

        // Predicted reduction of the quadratic model: 0.5 h^T (mu h - g).
        let predicted = 0.5 * h.iter().zip(g.iter()).map(|(hi, gi)| hi * (mu * hi - gi)).sum::<f64>();
        let rho = match &trial_cost {
            Some((ct, _)) if predicted > 0.0 && ct.is_finite() => (cost - ct) / predicted,
            _ => -1.0,
        };

        if rho > cfg.gain_ratio_accept {
            let (ct, ft) = trial_cost.expect("accepted step has a cost");
            let reduction = cost - ct;
            let step_norm = h.norm();
            let theta_norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            theta = trial;
            cost = ct;
            f = DVector::from_vec(ft);
            history.push((iterations, cost));
            accepted += 1;
            consecutive_rejects = 0;

            j = problem.jacobian()?;
            jtj = j.tr_mul(&j);
            g = j.tr_mul(&f);

            mu *= cfg.mu_decrease_floor.max(1.0 - (2.0 * rho - 1.0).powi(3));

            if reduction <= cfg.ftol * cost.max(f64::MIN_POSITIVE) {
                termination = Termination::Ftol;
                break 'outer;
            }
            if step_norm <= cfg.xtol * (theta_norm + cfg.xtol) {
                termination = Termination::Xtol;
                break 'outer;
            }
        } else {
            mu *= cfg.mu_increase;
            consecutive_rejects += 1;
            // Near a minimum every step is rejected while h shrinks like
            // 1/mu; a vanishing step is convergence, not failure.
            let theta_norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            if h.norm() <= cfg.xtol * (theta_norm + cfg.xtol) {
                termination = Termination::Xtol;
                break 'outer;
            }
            if consecutive_rejects > 64 {
                return Err(Error::Training(format!(
                    "no acceptable step after {consecutive_rejects} rejections \
                     (iteration {iterations}, cost {cost:.6e}, mu {mu:.3e})"
                )));
            }
        }
    }

    Ok((
        theta,
        StageReport {
            iterations,
            accepted,
            history,
            termination,
            forward_time: Duration::ZERO,
            backward_time: Duration::ZERO,
            forward_passes: 0,
            backward_passes: 0,
        },
    ))
}

/// Adapter exposing a network's pilot residual as a least-squares problem.
struct NetworkProblem<'a> {
    net: &'a mut PhycomNetwork,
    y0: &'a AugmentedVector,
    pilots: &'a AugmentedVector,
    alloc: &'a AllocationMatrix,
    trace: Option<ForwardTrace>,
    forward_time: Duration,
    backward_time: Duration,
    forward_passes: usize,
    backward_passes: usize,
}

impl<'a> NetworkProblem<'a> {
    fn new(
        net: &'a mut PhycomNetwork,
        y0: &'a AugmentedVector,
        pilots: &'a AugmentedVector,
        alloc: &'a AllocationMatrix,
    ) -> Self {
        Self {
            net,
            y0,
            pilots,
            alloc,
            trace: None,
            forward_time: Duration::ZERO,
            backward_time: Duration::ZERO,
            forward_passes: 0,
            backward_passes: 0,
        }
    }
}

impl LeastSquares for NetworkProblem<'_> {
    fn residuals(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        self.net.set_params(theta)?;
        let t0 = Instant::now();
        let trace = self.net.forward(self.y0)?;
        self.forward_time += t0.elapsed();
        self.forward_passes += 1;
        let f = self.net.residual(&trace, self.pilots, self.alloc)?;
        self.trace = Some(trace);
        Ok(f)
    }

    fn jacobian(&mut self) -> Result<DMatrix<f64>> {
        let trace = self
            .trace
            .as_ref()
            .expect("jacobian follows a residuals call");
        let t0 = Instant::now();
        let j = self.net.jacobian(trace, self.alloc)?;
        self.backward_time += t0.elapsed();
        self.backward_passes += 1;
        Ok(j.into_inner())
    }
}

fn run_stage(
    net: &mut PhycomNetwork,
    y0: &AugmentedVector,
    pilots: &AugmentedVector,
    alloc: &AllocationMatrix,
    cfg: &LmConfig,
) -> Result<StageReport> {
    let k = net.trainable_param_count();
    if k > 2 * alloc.num_pilots() {
        log::warn!(
            "underdetermined residual: {k} trainable parameters vs {} pilot equations",
            2 * alloc.num_pilots()
        );
    }
    let theta0 = net.params();
    let mut problem = NetworkProblem::new(net, y0, pilots, alloc);
    let (theta, mut report) = lm_minimize_problem(&mut problem, &theta0, cfg)?;
    report.forward_time = problem.forward_time;
    report.backward_time = problem.backward_time;
    report.forward_passes = problem.forward_passes;
    report.backward_passes = problem.backward_passes;
    net.set_params(&theta)?;
    Ok(report)
}

/// Minimize the pilot residual of `net` in place. `pilots` is the augmented
/// pilot vector selected by `alloc` from the transmitted block.
pub fn lm_minimize(
    net: &mut PhycomNetwork,
    y0: &AugmentedVector,
    pilots: &AugmentedVector,
    alloc: &AllocationMatrix,
    cfg: &LmConfig,
) -> Result<TrainReport> {
    let supervised = run_stage(net, y0, pilots, alloc, cfg)?;
    Ok(TrainReport { supervised, self_stage: None, final_params: net.params() })
}

/// Supervised training from known pilot symbols.
pub fn supervised_train(
    net: &mut PhycomNetwork,
    y0: &AugmentedVector,
    pilot_symbols: &SymbolVector,
    alloc: &AllocationMatrix,
    cfg: &LmConfig,
) -> Result<TrainReport> {
    if pilot_symbols.len() != alloc.num_pilots() {
        return Err(Error::Shape(format!(
            "{} pilot symbols for an allocation of {}",
            pilot_symbols.len(),
            alloc.num_pilots()
        )));
    }
    let pilots = AugmentedVector::from_complex(pilot_symbols.symbols());
    lm_minimize(net, y0, &pilots, alloc, cfg)
}

/// Two-stage training: a supervised stage on the pilots, then (with
/// `feedback`) a self-labeled stage over the whole block using the detected
/// symbols as labels. Returns the report and the final detected block.
pub fn semi_supervised_train(
    net: &mut PhycomNetwork,
    y0: &AugmentedVector,
    pilot_symbols: &SymbolVector,
    alloc: &AllocationMatrix,
    opts: &TrainOptions,
) -> Result<(TrainReport, SymbolVector)> {
    if pilot_symbols.len() != alloc.num_pilots() {
        return Err(Error::Shape(format!(
            "{} pilot symbols for an allocation of {}",
            pilot_symbols.len(),
            alloc.num_pilots()
        )));
    }
    let (train_y0, train_alloc) = match opts.truncate {
        Some(n_t) => (y0.truncated(n_t)?, alloc.truncated(n_t)?),
        None => (y0.clone(), alloc.clone()),
    };
    let pilots = AugmentedVector::from_complex(pilot_symbols.symbols());

    let supervised = run_stage(net, &train_y0, &pilots, &train_alloc, &opts.config)?;

    let self_stage = if opts.feedback {
        // Labels are the network's own detections over the (possibly
        // truncated) block; ground truth is never consulted here.
        let trace = net.forward(&train_y0)?;
        let detected = net.detect(trace.output());
        let labels = AugmentedVector::from_complex(detected.symbols());
        let full = AllocationMatrix::full(train_y0.half_len());
        Some(run_stage(net, &train_y0, &labels, &full, &opts.config)?)
    } else {
        None
    };

    let trace = net.forward(y0)?;
    let s_hat = net.detect(trace.output());
    Ok((
        TrainReport { supervised, self_stage, final_params: net.params() },
        s_hat,
    ))
}
