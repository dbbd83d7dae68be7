//! Concurrent solves of independent problems on a bounded worker pool.
//!
//! One task runs per problem. Every solve is a pure function of its inputs,
//! and results are collected in input order, so a batch result does not
//! depend on the worker count or on completion order.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::qpform::{ProblemSpec, Reference, Trajectory};
use crate::sqp::{sqp_solve, SolverSettings, SqpResult};

/// One member of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub problem: ProblemSpec,
    pub init: Trajectory,
    /// Full settings override for this member.
    pub settings: Option<SolverSettings>,
    /// Initial damping override, applied on top of the effective settings.
    pub rho_init: Option<f64>,
}

impl BatchItem {
    pub fn new(problem: ProblemSpec, init: Trajectory) -> Self {
        Self {
            problem,
            init,
            settings: None,
            rho_init: None,
        }
    }

    pub fn with_rho_init(mut self, rho: f64) -> Self {
        self.rho_init = Some(rho);
        self
    }
}

/// `M` homogeneous problems with shared settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub items: Vec<BatchItem>,
    pub settings: SolverSettings,
}

impl BatchSpec {
    pub fn new(settings: SolverSettings) -> Self {
        Self {
            items: Vec::new(),
            settings,
        }
    }

    pub fn push(&mut self, item: BatchItem) {
        self.items.push(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Settings used for member `i`.
    pub fn settings_for(&self, i: usize) -> SolverSettings {
        let item = &self.items[i];
        let mut s = item.settings.unwrap_or(self.settings);
        if let Some(rho) = item.rho_init {
            s.rho_init = rho;
        }
        s
    }

    /// All members must share state, control and horizon dimensions.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .items
            .first()
            .ok_or_else(|| Error::InvalidConfig("a batch needs at least one problem".into()))?;
        let (n, m, horizon) = (
            first.problem.state_dim(),
            first.problem.control_dim(),
            first.problem.horizon,
        );
        for item in &self.items {
            let p = &item.problem;
            if p.state_dim() != n {
                return Err(Error::dim("batch state dimension", n, p.state_dim()));
            }
            if p.control_dim() != m {
                return Err(Error::dim("batch control dimension", m, p.control_dim()));
            }
            if p.horizon != horizon {
                return Err(Error::dim("batch horizon", horizon, p.horizon));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// One slot per problem, in input order.
    pub results: Vec<Result<SqpResult>>,
    /// Seconds for the whole batch.
    pub wall_time: f64,
    /// Seconds per member solve.
    pub solve_times: Vec<f64>,
}

impl BatchResult {
    /// Successful member with the lowest final merit; ties go to the lowest index.
    pub fn best_by_merit(&self) -> Option<(usize, &SqpResult)> {
        let mut best: Option<(usize, &SqpResult)> = None;
        for (i, r) in self.results.iter().enumerate() {
            if let Ok(r) = r {
                if best.is_none_or(|(_, b)| r.final_merit < b.final_merit) {
                    best = Some((i, r));
                }
            }
        }
        best
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.is_err()).count()
    }
}

/// Reusable worker pool. `workers = 1` solves on the calling thread.
pub struct BatchEngine {
    workers: usize,
    pool: Option<ThreadPool>,
}

impl std::fmt::Debug for BatchEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchEngine").field("workers", &self.workers).finish()
    }
}

impl BatchEngine {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidConfig("workers must be >= 1".into()));
        }
        let pool = if workers > 1 {
            Some(
                ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("batch-worker-{i}"))
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { workers, pool })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn solve(&self, spec: &BatchSpec) -> Result<BatchResult> {
        spec.validate()?;
        let start = Instant::now();
        let run = |i: usize| solve_member(spec, i);
        let outcomes: Vec<(Result<SqpResult>, f64)> = match &self.pool {
            Some(pool) => pool.install(|| (0..spec.len()).into_par_iter().map(run).collect()),
            None => (0..spec.len()).map(run).collect(),
        };
        let wall_time = start.elapsed().as_secs_f64();
        let (results, solve_times) = outcomes.into_iter().unzip();
        Ok(BatchResult {
            results,
            wall_time,
            solve_times,
        })
    }
}

fn solve_member(spec: &BatchSpec, i: usize) -> (Result<SqpResult>, f64) {
    let item = &spec.items[i];
    let settings = spec.settings_for(i);
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| sqp_solve(&item.problem, &item.init, &settings)));
    let result = outcome.unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Error::Panicked(msg))
    });
    (result, start.elapsed().as_secs_f64())
}

/// Solves every member of `spec` on `workers` threads.
pub fn batch_solve(spec: &BatchSpec, workers: usize) -> Result<BatchResult> {
    BatchEngine::new(workers)?.solve(spec)
}

/// One `(M, N)` cell of a scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingCell {
    pub batch_size: usize,
    pub horizon: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
}

impl ScalingCell {
    pub fn total_knots(&self) -> usize {
        self.batch_size * self.horizon
    }
}

/// Template settings for a scaling study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub solver: SolverSettings,
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings {
                max_iterations: 5,
                fixed_budget: true,
                ..Default::default()
            },
            repeats: 5,
            warmup: 1,
        }
    }
}

/// Median and 90th percentile (nearest rank) of the samples.
pub fn median_p90(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    let median = if s.len() % 2 == 1 {
        s[mid]
    } else {
        0.5 * (s[mid - 1] + s[mid])
    };
    let rank = ((0.9 * s.len() as f64).ceil() as usize).clamp(1, s.len());
    (median, s[rank - 1])
}

/// Problem with its horizon replaced, truncating or extending a per-knot
/// reference by holding its last entry.
pub fn with_horizon(template: &ProblemSpec, horizon: usize) -> Result<ProblemSpec> {
    let mut p = template.clone();
    p.horizon = horizon;
    if let Reference::PerKnot(goals) = &template.cost.reference {
        let last = goals.last().cloned().ok_or_else(|| Error::InvalidConfig("empty reference".into()))?;
        p.cost.reference = Reference::PerKnot(
            (0..=horizon).map(|k| goals.get(k).cloned().unwrap_or_else(|| last.clone())).collect(),
        );
    }
    p.validate()?;
    Ok(p)
}

/// Median wall time of fixed-budget batches of `M` copies of the template
/// over the grid `M_list × N_list`, zero-initialized.
pub fn bench_scaling(
    template: &ProblemSpec,
    batch_sizes: &[usize],
    horizons: &[usize],
    workers: usize,
    settings: &BenchSettings,
) -> Result<Vec<ScalingCell>> {
    let engine = BatchEngine::new(workers)?;
    let mut solver = settings.solver;
    solver.fixed_budget = true;
    let mut cells = Vec::new();
    for &horizon in horizons {
        let problem = with_horizon(template, horizon)?;
        let init = Trajectory::zeros(problem.state_dim(), problem.control_dim(), horizon);
        for &m in batch_sizes {
            let mut spec = BatchSpec::new(solver);
            for _ in 0..m {
                spec.push(BatchItem::new(problem.clone(), init.clone()));
            }
            for _ in 0..settings.warmup {
                engine.solve(&spec)?;
            }
            let times: Vec<f64> = (0..settings.repeats.max(1))
                .map(|_| engine.solve(&spec).map(|r| r.wall_time * 1e3))
                .collect::<Result<_>>()?;
            let (median_ms, p90_ms) = median_p90(&times);
            cells.push(ScalingCell {
                batch_size: m,
                horizon,
                median_ms,
                p90_ms,
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsModel, ExternalForce};
    use crate::qpform::CostSpec;
    use nalgebra::{DMatrix, DVector};

    fn pendulum(horizon: usize, goal: f64) -> ProblemSpec {
        ProblemSpec::new(
            DynamicsModel::by_name("pendulum").unwrap(),
            CostSpec::tracking(DMatrix::identity(2, 2), DMatrix::identity(1, 1) * 0.1, DVector::from_vec(vec![goal, 0.0])),
            horizon,
            0.05,
            DVector::zeros(2),
            ExternalForce::zero(1),
        )
        .unwrap()
    }

    fn settings() -> SolverSettings {
        SolverSettings {
            max_iterations: 10,
            ..Default::default()
        }
    }

    #[test]
    fn single_member_equals_direct_solve() {
        let p = pendulum(16, 1.0);
        let init = Trajectory::zeros(2, 1, 16);
        let mut spec = BatchSpec::new(settings());
        spec.push(BatchItem::new(p.clone(), init.clone()));
        let res = batch_solve(&spec, 1).unwrap();
        assert_eq!(res.results.len(), 1);
        assert_eq!(res.results[0], sqp_solve(&p, &init, &settings()));
    }

    #[test]
    fn copies_give_identical_results() {
        let mut spec = BatchSpec::new(settings());
        for _ in 0..6 {
            spec.push(BatchItem::new(pendulum(12, 0.7), Trajectory::zeros(2, 1, 12)));
        }
        let res = batch_solve(&spec, 3).unwrap();
        assert!(res.results.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(res.solve_times.len(), 6);
    }

    #[test]
    fn mixed_rho_matches_serial_for_any_worker_count() {
        let mut spec = BatchSpec::new(settings());
        for i in 0..8 {
            spec.push(
                BatchItem::new(pendulum(12, 0.2 * i as f64), Trajectory::zeros(2, 1, 12))
                    .with_rho_init(10f64.powi(-(i as i32))),
            );
        }
        let serial: Vec<_> = (0..8)
            .map(|i| sqp_solve(&spec.items[i].problem, &spec.items[i].init, &spec.settings_for(i)))
            .collect();
        for workers in [1, 2, 4] {
            assert_eq!(batch_solve(&spec, workers).unwrap().results, serial);
        }
    }

    #[test]
    fn failure_is_isolated_to_its_slot() {
        let mut spec = BatchSpec::new(settings());
        spec.push(BatchItem::new(pendulum(8, 1.0), Trajectory::zeros(2, 1, 8)));
        let mut bad = pendulum(8, 1.0);
        bad.force = ExternalForce::custom(1, |t| {
            if t > 0.1 {
                panic!("force profile failed")
            }
            DVector::zeros(1)
        });
        spec.push(BatchItem::new(bad, Trajectory::zeros(2, 1, 8)));
        let mut nan_init = Trajectory::zeros(2, 1, 8);
        nan_init.states[3][0] = f64::NAN;
        spec.push(BatchItem::new(pendulum(8, 1.0), nan_init));
        spec.push(BatchItem::new(pendulum(8, 1.0), Trajectory::zeros(2, 1, 8)));
        let prev = panic::take_hook();
        panic::set_hook(Box::new(|_| {}));
        let res = batch_solve(&spec, 2).unwrap();
        panic::set_hook(prev);
        assert!(matches!(&res.results[1], Err(Error::Panicked(m)) if m.contains("force profile")));
        assert!(res.results[2].is_err());
        assert!(res.results[0].is_ok());
        assert_eq!(res.results[0], res.results[3]);
        assert_eq!(res.failures(), 2);
    }

    #[test]
    fn heterogeneous_batch_is_rejected() {
        let mut spec = BatchSpec::new(settings());
        spec.push(BatchItem::new(pendulum(8, 1.0), Trajectory::zeros(2, 1, 8)));
        spec.push(BatchItem::new(pendulum(9, 1.0), Trajectory::zeros(2, 1, 9)));
        assert!(matches!(batch_solve(&spec, 1), Err(Error::Dimension { .. })));
        assert!(matches!(
            batch_solve(&BatchSpec::new(settings()), 1),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(BatchEngine::new(0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn best_by_merit_prefers_lowest_index_on_ties() {
        let mut spec = BatchSpec::new(settings());
        for _ in 0..3 {
            spec.push(BatchItem::new(pendulum(8, 1.0), Trajectory::zeros(2, 1, 8)));
        }
        let res = batch_solve(&spec, 1).unwrap();
        assert_eq!(res.best_by_merit().unwrap().0, 0);
    }

    #[test]
    fn percentiles() {
        assert_eq!(median_p90(&[3.0]), (3.0, 3.0));
        assert_eq!(median_p90(&[4.0, 1.0, 3.0, 2.0]), (2.5, 4.0));
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(median_p90(&v), (5.5, 9.0));
    }

    #[test]
    fn scaling_grid_shape() {
        let b = BenchSettings {
            repeats: 2,
            warmup: 0,
            ..Default::default()
        };
        let cells = bench_scaling(&pendulum(8, 1.0), &[1, 2], &[4, 8], 1, &b).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!((cells[3].batch_size, cells[3].horizon), (2, 8));
        assert!(cells.iter().all(|c| c.median_ms > 0.0 && c.p90_ms >= c.median_ms));
    }
}
