//! Monte Carlo harness: repetitions × λ-grid × loss kind × iteration
//! budget, with error and timing aggregation.
//!
//! Repetition `r` always consumes the dataset drawn with seed
//! `base_seed + r`, so every cell sees the same `r`-th realization and
//! per-repetition comparisons between cells are paired (checked through a
//! dataset hash stored on every record). Timing covers the estimation
//! call only, never data generation.
//!
//! Reports persist as one CSV of raw records
//! (`loss,lambda,ell,rep,error,seconds,sinkhorn_iters,converged,dataset_hash`)
//! plus one JSON file of per-cell aggregates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::datagen::{draw, GaussianMixtureSpec, SampleBudget};
use crate::error::{Error, Result};
use crate::estimator::{estimate, DescentConfig, LossKind, LossSpec};
use crate::measures::{DiscreteMeasure, LabeledSample, MixtureModel, SimplexVector};
use crate::ot::IterationBudget;

/// What the sweep runs on: fresh simulated draws per repetition, or one
/// fixed ingested dataset shared by all repetitions.
#[derive(Debug, Clone)]
pub enum DataSource {
    Simulated {
        spec: GaussianMixtureSpec,
        budget: SampleBudget,
    },
    Fixed {
        source: LabeledSample,
        target: DiscreteMeasure,
    },
}

/// Sweep definition.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Strictly increasing positive grid; ignored by `W0` cells.
    pub lambda_grid: Vec<f64>,
    pub losses: Vec<LossKind>,
    /// Budgets crossed with the grid for regularized losses.
    pub iteration_budgets: Vec<IterationBudget>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Ground truth for the error metric `‖θ̂ − θ*‖²`.
    pub theta_star: SimplexVector,
    pub descent: DescentConfig,
    /// Worker threads; `0` or `1` runs serially.
    pub threads: usize,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.losses.is_empty() {
            return Err(Error::InvalidConfig("no losses selected".into()));
        }
        let needs_grid = self.losses.iter().any(|l| *l != LossKind::W0);
        if needs_grid {
            if self.lambda_grid.is_empty() {
                return Err(Error::InvalidConfig(
                    "regularized losses need a lambda grid".into(),
                ));
            }
            if self.iteration_budgets.is_empty() {
                return Err(Error::InvalidConfig(
                    "regularized losses need at least one iteration budget".into(),
                ));
            }
        }
        let increasing = self
            .lambda_grid
            .windows(2)
            .all(|w| w[0] < w[1]);
        if !increasing || self.lambda_grid.iter().any(|l| *l <= 0.0) {
            return Err(Error::InvalidConfig(
                "lambda grid must be strictly increasing and positive".into(),
            ));
        }
        Ok(())
    }
}

/// One experiment cell: a loss with its regularization and budget.
/// `W0` cells carry neither a `lambda` nor an `ell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub loss: LossKind,
    pub lambda: Option<f64>,
    /// `None` means run until convergence.
    pub ell: Option<usize>,
}

impl CellKey {
    pub fn w0() -> Self {
        Self {
            loss: LossKind::W0,
            lambda: None,
            ell: None,
        }
    }

    fn loss_spec(&self) -> LossSpec {
        let budget = match self.ell {
            Some(ell) => IterationBudget::Fixed(ell),
            None => IterationBudget::Unbounded,
        };
        LossSpec {
            kind: self.loss,
            lambda: self.lambda,
            budget,
        }
    }
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.loss)?;
        if let Some(l) = self.lambda {
            write!(f, " lambda={l}")?;
        }
        match self.ell {
            Some(e) => write!(f, " ell={e}"),
            None => write!(f, " ell=unbounded"),
        }
    }
}

/// Result of one `(cell, repetition)` estimation.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub cell: CellKey,
    pub rep: usize,
    /// `‖θ̂ − θ*‖²`; NaN when the solver failed.
    pub error: f64,
    /// Wall time of the estimation call.
    pub seconds: f64,
    pub sinkhorn_iters: usize,
    pub converged: bool,
    pub dataset_hash: u64,
    /// Present when the cell's solver failed; such records are excluded
    /// from aggregates and not persisted beyond the NaN error.
    pub solver_error: Option<String>,
}

/// Per-cell summary over successful repetitions.
#[derive(Debug, Clone)]
pub struct CellAggregate {
    pub cell: CellKey,
    /// Arithmetic mean of per-repetition errors.
    pub mean_error: f64,
    pub median_error: f64,
    pub q1_error: f64,
    pub q3_error: f64,
    pub total_seconds: f64,
    pub total_sinkhorn_iterations: usize,
    pub repetitions: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<CellAggregate>,
}

/// Paired per-repetition error differences between two cells.
#[derive(Debug, Clone)]
pub struct PairedComparison {
    /// `error_a − error_b` ordered by repetition.
    pub differences: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// Empirical class frequencies of a label vector; classes are `1..=K`
/// with `K` the largest label, and every class must occur.
pub fn evaluate_target_proportions(labels: &[usize]) -> Result<SimplexVector> {
    if labels.is_empty() {
        return Err(Error::InvalidConfig("no labels to evaluate".into()));
    }
    if labels.contains(&0) {
        return Err(Error::Parse {
            path: "labels".into(),
            msg: "class ids are 1-based; found 0".into(),
        });
    }
    let k = *labels.iter().max().unwrap();
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l - 1] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(missing + 1));
    }
    let total = labels.len() as f64;
    SimplexVector::from_slice(
        &counts
            .iter()
            .map(|&c| c as f64 / total)
            .collect::<Vec<f64>>(),
    )
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn dataset_hash(source: &LabeledSample, target: &DiscreteMeasure) -> u64 {
    let source_points = source.points();
    let target_points = target.points();
    let coords = source_points
        .iter()
        .chain(target_points.iter())
        .flat_map(|x| x.to_bits().to_le_bytes());
    let labels = source
        .labels()
        .iter()
        .flat_map(|l| (*l as u64).to_le_bytes());
    fnv1a(coords.chain(labels))
}

/// Linear-interpolation quantile of an already sorted slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

fn enumerate_cells(cfg: &SweepConfig) -> Vec<CellKey> {
    let mut cells = Vec::new();
    for loss in &cfg.losses {
        match loss {
            LossKind::W0 => cells.push(CellKey::w0()),
            kind => {
                for &lambda in &cfg.lambda_grid {
                    for budget in &cfg.iteration_budgets {
                        let ell = match budget {
                            IterationBudget::Fixed(e) => Some(*e),
                            IterationBudget::Unbounded => None,
                        };
                        cells.push(CellKey {
                            loss: *kind,
                            lambda: Some(lambda),
                            ell,
                        });
                    }
                }
            }
        }
    }
    cells
}

fn run_task(data: &DataSource, cfg: &SweepConfig, cell: CellKey, rep: usize) -> RunRecord {
    let (source, target) = match data {
        DataSource::Simulated { spec, budget } => match draw(spec, budget, cfg.base_seed + rep as u64)
        {
            Ok(d) => (d.source, d.target),
            Err(e) => {
                return RunRecord {
                    cell,
                    rep,
                    error: f64::NAN,
                    seconds: 0.0,
                    sinkhorn_iters: 0,
                    converged: false,
                    dataset_hash: 0,
                    solver_error: Some(e.to_string()),
                }
            }
        },
        DataSource::Fixed { source, target } => (source.clone(), target.clone()),
    };
    let hash = dataset_hash(&source, &target);
    let spec = cell.loss_spec();
    let outcome = MixtureModel::from_labeled(&source).and_then(|model| {
        let start = Instant::now();
        let result = estimate(&model, &target, &spec, &cfg.descent)?;
        Ok((start.elapsed().as_secs_f64(), result))
    });
    match outcome {
        Ok((seconds, result)) => RunRecord {
            cell,
            rep,
            error: result.theta_hat.squared_distance(&cfg.theta_star),
            seconds,
            sinkhorn_iters: result.total_sinkhorn_iterations,
            converged: result.converged,
            dataset_hash: hash,
            solver_error: None,
        },
        Err(e) => RunRecord {
            cell,
            rep,
            error: f64::NAN,
            seconds: 0.0,
            sinkhorn_iters: 0,
            converged: false,
            dataset_hash: hash,
            solver_error: Some(e.to_string()),
        },
    }
}

fn aggregate(cells: &[CellKey], records: &[RunRecord]) -> Vec<CellAggregate> {
    cells
        .iter()
        .map(|cell| {
            let mut errors: Vec<f64> = records
                .iter()
                .filter(|r| r.cell == *cell && r.solver_error.is_none())
                .map(|r| r.error)
                .collect();
            errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = errors.len();
            let mean = if n == 0 {
                f64::NAN
            } else {
                errors.iter().sum::<f64>() / n as f64
            };
            let total_seconds = records
                .iter()
                .filter(|r| r.cell == *cell)
                .map(|r| r.seconds)
                .sum();
            let total_iters = records
                .iter()
                .filter(|r| r.cell == *cell)
                .map(|r| r.sinkhorn_iters)
                .sum();
            CellAggregate {
                cell: *cell,
                mean_error: mean,
                median_error: quantile_sorted(&errors, 0.5),
                q1_error: quantile_sorted(&errors, 0.25),
                q3_error: quantile_sorted(&errors, 0.75),
                total_seconds,
                total_sinkhorn_iterations: total_iters,
                repetitions: n,
            }
        })
        .collect()
}

/// Runs the full sweep. Cells and repetitions are independent; with
/// `threads > 1` they execute on a local rayon pool, with per-task
/// deterministic seeds either way.
pub fn run_sweep(data: &DataSource, cfg: &SweepConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let DataSource::Simulated { spec, budget } = data {
        spec.validate()?;
        budget.validate(spec.num_components)?;
    }
    let cells = enumerate_cells(cfg);
    let tasks: Vec<(CellKey, usize)> = cells
        .iter()
        .flat_map(|cell| (0..cfg.repetitions).map(move |rep| (*cell, rep)))
        .collect();

    let records: Vec<RunRecord> = if cfg.threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        pool.install(|| {
            tasks
                .par_iter()
                .map(|(cell, rep)| run_task(data, cfg, *cell, *rep))
                .collect()
        })
    } else {
        tasks
            .iter()
            .map(|(cell, rep)| run_task(data, cfg, *cell, *rep))
            .collect()
    };

    let aggregates = aggregate(&cells, &records);
    Ok(ExperimentReport {
        records,
        aggregates,
    })
}

/// Paired error differences `a − b` over the shared repetition set.
pub fn compare_cells(
    report: &ExperimentReport,
    cell_a: &CellKey,
    cell_b: &CellKey,
) -> Result<PairedComparison> {
    let collect = |cell: &CellKey| -> Vec<(usize, f64)> {
        let mut reps: Vec<(usize, f64)> = report
            .records
            .iter()
            .filter(|r| r.cell == *cell && r.solver_error.is_none())
            .map(|r| (r.rep, r.error))
            .collect();
        reps.sort_by_key(|(rep, _)| *rep);
        reps
    };
    let a = collect(cell_a);
    let b = collect(cell_b);
    if a.is_empty() {
        return Err(Error::UnknownCell(cell_a.to_string()));
    }
    if b.is_empty() {
        return Err(Error::UnknownCell(cell_b.to_string()));
    }
    if a.len() != b.len() || a.iter().zip(&b).any(|((ra, _), (rb, _))| ra != rb) {
        return Err(Error::MismatchedRepetitions);
    }
    let differences: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|((_, ea), (_, eb))| ea - eb)
        .collect();
    let mean = differences.iter().sum::<f64>() / differences.len() as f64;
    let mut sorted = differences.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(PairedComparison {
        differences,
        mean,
        median: quantile_sorted(&sorted, 0.5),
    })
}

impl ExperimentReport {
    pub fn aggregate_for(&self, cell: &CellKey) -> Option<&CellAggregate> {
        self.aggregates.iter().find(|a| a.cell == *cell)
    }

    pub fn records_for(&self, cell: &CellKey) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| r.cell == *cell).collect()
    }

    /// Raw records as CSV with the stable header
    /// `loss,lambda,ell,rep,error,seconds,sinkhorn_iters,converged,dataset_hash`.
    /// Empty `lambda`/`ell` fields mean "not applicable" (`W0`) or
    /// "unbounded".
    pub fn write_records_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path.as_ref())?);
        writeln!(
            out,
            "loss,lambda,ell,rep,error,seconds,sinkhorn_iters,converged,dataset_hash"
        )?;
        for r in &self.records {
            let lambda = r.cell.lambda.map(|l| l.to_string()).unwrap_or_default();
            let ell = r.cell.ell.map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:016x}",
                r.cell.loss,
                lambda,
                ell,
                r.rep,
                r.error,
                r.seconds,
                r.sinkhorn_iters,
                r.converged,
                r.dataset_hash
            )?;
        }
        out.flush()?;
        Ok(())
    }

    /// Aggregates as a JSON document `{"cells": [...]}` with one object
    /// per cell.
    pub fn write_aggregates_json(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct CellJson {
            loss: String,
            lambda: Option<f64>,
            ell: Option<usize>,
            mean_error: f64,
            median_error: f64,
            q1_error: f64,
            q3_error: f64,
            total_seconds: f64,
            total_sinkhorn_iterations: usize,
            repetitions: usize,
        }
        #[derive(Serialize)]
        struct Doc {
            cells: Vec<CellJson>,
        }
        let doc = Doc {
            cells: self
                .aggregates
                .iter()
                .map(|a| CellJson {
                    loss: a.cell.loss.to_string(),
                    lambda: a.cell.lambda,
                    ell: a.cell.ell,
                    mean_error: a.mean_error,
                    median_error: a.median_error,
                    q1_error: a.q1_error,
                    q3_error: a.q3_error,
                    total_seconds: a.total_seconds,
                    total_sinkhorn_iterations: a.total_sinkhorn_iterations,
                    repetitions: a.repetitions,
                })
                .collect(),
        };
        let file = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer_pretty(file, &doc)
            .map_err(|e| Error::InvalidConfig(format!("aggregate serialization: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SeededRng;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn fixed_disjoint_data() -> (LabeledSample, DiscreteMeasure) {
        let mut rng = SeededRng::new(60);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (k, center) in [[0.0, 0.0], [6.0, 6.0]].iter().enumerate() {
            for _ in 0..6 {
                points.push(center[0] + 0.4 * (2.0 * rng.uniform() - 1.0));
                points.push(center[1] + 0.4 * (2.0 * rng.uniform() - 1.0));
                labels.push(k + 1);
            }
        }
        let source =
            LabeledSample::new(Array2::from_shape_vec((12, 2), points).unwrap(), labels).unwrap();
        let model = MixtureModel::from_labeled(&source).unwrap();
        let tau = SimplexVector::from_slice(&[0.25, 0.75]).unwrap();
        let target = model.reweight(&tau).unwrap();
        (source, target)
    }

    fn small_cfg(losses: Vec<LossKind>, reps: usize) -> SweepConfig {
        SweepConfig {
            lambda_grid: vec![0.5],
            losses,
            iteration_budgets: vec![IterationBudget::Unbounded],
            repetitions: reps,
            base_seed: 11,
            theta_star: SimplexVector::from_slice(&[0.25, 0.75]).unwrap(),
            descent: DescentConfig::default(),
            threads: 1,
        }
    }

    #[test]
    fn sweep_on_fixed_disjoint_data_beats_grid_oracle() {
        let (source, target) = fixed_disjoint_data();
        let model = MixtureModel::from_labeled(&source).unwrap();
        let data = DataSource::Fixed {
            source,
            target: target.clone(),
        };
        let cfg = small_cfg(vec![LossKind::Wlambda], 1);
        let report = run_sweep(&data, &cfg).unwrap();
        assert_eq!(report.records.len(), 1);
        let record = &report.records[0];
        assert!(record.solver_error.is_none());

        // Grid-search oracle over the 2-simplex at resolution 0.01.
        let spec = LossSpec::w_lambda(0.5, IterationBudget::Unbounded);
        let mut best = f64::INFINITY;
        let mut best_theta = SimplexVector::uniform(2).unwrap();
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let theta = SimplexVector::from_slice(&[t, 1.0 - t]).unwrap();
            let v = crate::estimator::loss(&model, &theta, &target, &spec).unwrap();
            if v < best {
                best = v;
                best_theta = theta;
            }
        }
        let oracle_error = best_theta.squared_distance(&cfg.theta_star);
        assert!(
            record.error <= oracle_error + 1e-3,
            "sweep error {} vs oracle {}",
            record.error,
            oracle_error
        );
    }

    #[test]
    fn reruns_are_identical_up_to_timing() {
        let (source, target) = fixed_disjoint_data();
        let data = DataSource::Fixed { source, target };
        let cfg = small_cfg(vec![LossKind::W0, LossKind::Wlambda], 2);
        let a = run_sweep(&data, &cfg).unwrap();
        let b = run_sweep(&data, &cfg).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.cell, rb.cell);
            assert_eq!(ra.rep, rb.rep);
            assert_eq!(ra.error.to_bits(), rb.error.to_bits());
            assert_eq!(ra.sinkhorn_iters, rb.sinkhorn_iters);
            assert_eq!(ra.dataset_hash, rb.dataset_hash);
        }
    }

    #[test]
    fn repetitions_are_paired_across_cells() {
        let (spec, budget) = crate::datagen::default_paper_spec(3).unwrap();
        let tiny_budget = SampleBudget {
            per_class_source: vec![3; 5],
            per_class_target: vec![2; 5],
        };
        let data = DataSource::Simulated {
            spec: spec.clone(),
            budget: tiny_budget,
        };
        let cfg = SweepConfig {
            lambda_grid: vec![0.5, 1.0],
            losses: vec![LossKind::W0, LossKind::Wlambda],
            iteration_budgets: vec![IterationBudget::Fixed(3)],
            repetitions: 2,
            base_seed: 5,
            theta_star: spec.target_props.clone(),
            descent: DescentConfig {
                max_outer_iterations: 3,
                ..DescentConfig::default()
            },
            threads: 1,
        };
        let _ = budget;
        let report = run_sweep(&data, &cfg).unwrap();
        for rep in 0..2 {
            let hashes: Vec<u64> = report
                .records
                .iter()
                .filter(|r| r.rep == rep)
                .map(|r| r.dataset_hash)
                .collect();
            assert!(hashes.windows(2).all(|w| w[0] == w[1]));
        }
        // W0 contributes exactly one cell despite the two-point grid.
        let w0_records = report.records_for(&CellKey::w0());
        assert_eq!(w0_records.len(), 2);
    }

    #[test]
    fn aggregates_recompute_from_records() {
        let (source, target) = fixed_disjoint_data();
        let data = DataSource::Fixed { source, target };
        let cfg = small_cfg(vec![LossKind::Wlambda], 3);
        let report = run_sweep(&data, &cfg).unwrap();
        for agg in &report.aggregates {
            let errors: Vec<f64> = report
                .records_for(&agg.cell)
                .iter()
                .filter(|r| r.solver_error.is_none())
                .map(|r| r.error)
                .collect();
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            assert_abs_diff_eq!(agg.mean_error, mean, epsilon = 1e-15);
            assert_eq!(agg.repetitions, errors.len());
            assert!(agg.total_seconds >= 0.0);
        }
    }

    #[test]
    fn compare_cells_is_zero_against_itself() {
        let (source, target) = fixed_disjoint_data();
        let data = DataSource::Fixed { source, target };
        let cfg = small_cfg(vec![LossKind::Wlambda], 2);
        let report = run_sweep(&data, &cfg).unwrap();
        let cell = report.aggregates[0].cell;
        let cmp = compare_cells(&report, &cell, &cell).unwrap();
        assert!(cmp.differences.iter().all(|d| *d == 0.0));
        assert_eq!(cmp.mean, 0.0);
    }

    #[test]
    fn compare_cells_rejects_disjoint_repetition_sets() {
        let (source, target) = fixed_disjoint_data();
        let data = DataSource::Fixed { source, target };
        let cfg = small_cfg(vec![LossKind::W0, LossKind::Wlambda], 2);
        let mut report = run_sweep(&data, &cfg).unwrap();
        let w0 = CellKey::w0();
        let other = report
            .aggregates
            .iter()
            .find(|a| a.cell.loss == LossKind::Wlambda)
            .unwrap()
            .cell;
        // Damage one repetition of the W0 cell.
        let idx = report
            .records
            .iter()
            .position(|r| r.cell == w0 && r.rep == 1)
            .unwrap();
        report.records[idx].solver_error = Some("injected".into());
        assert!(matches!(
            compare_cells(&report, &w0, &other),
            Err(Error::MismatchedRepetitions)
        ));
    }

    #[test]
    fn target_proportion_examples() {
        let p = evaluate_target_proportions(&[1, 1, 2, 2]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let labels: Vec<usize> = [(1usize, 20), (2, 5), (3, 8), (4, 7), (5, 10)]
            .iter()
            .flat_map(|&(k, n)| std::iter::repeat_n(k, n))
            .collect();
        let p = evaluate_target_proportions(&labels).unwrap();
        let expected = [0.4, 0.1, 0.16, 0.14, 0.2];
        for (got, want) in p.as_slice().iter().zip(&expected) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-15);
        }

        let p = evaluate_target_proportions(&[1, 1, 1]).unwrap();
        assert_eq!(p.as_slice(), &[1.0]);

        assert!(matches!(
            evaluate_target_proportions(&[1, 3]),
            Err(Error::EmptyClass(2))
        ));
    }

    #[test]
    fn csv_and_json_outputs_are_readable() {
        let (source, target) = fixed_disjoint_data();
        let data = DataSource::Fixed { source, target };
        let cfg = small_cfg(vec![LossKind::W0, LossKind::Wlambda], 2);
        let report = run_sweep(&data, &cfg).unwrap();
        let dir = tempfile::TempDir::new().unwrap();
        let csv_path = dir.path().join("records.csv");
        let json_path = dir.path().join("aggregates.json");
        report.write_records_csv(&csv_path).unwrap();
        report.write_aggregates_json(&json_path).unwrap();

        let text = std::fs::read_to_string(&csv_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "loss,lambda,ell,rep,error,seconds,sinkhorn_iters,converged,dataset_hash"
        );
        assert_eq!(lines.count(), report.records.len());

        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        let cells = parsed["cells"].as_array().unwrap();
        assert_eq!(cells.len(), report.aggregates.len());
        assert!(cells[0]["mean_error"].is_number());
    }

    #[test]
    fn threaded_run_matches_serial() {
        let (source, target) = fixed_disjoint_data();
        let data = DataSource::Fixed { source, target };
        let mut cfg = small_cfg(vec![LossKind::Wlambda], 2);
        let serial = run_sweep(&data, &cfg).unwrap();
        cfg.threads = 3;
        let threaded = run_sweep(&data, &cfg).unwrap();
        for (a, b) in serial.records.iter().zip(&threaded.records) {
            assert_eq!(a.error.to_bits(), b.error.to_bits());
            assert_eq!(a.cell, b.cell);
            assert_eq!(a.rep, b.rep);
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = small_cfg(vec![LossKind::Wlambda], 1);
        cfg.lambda_grid = vec![0.5, 0.1];
        assert!(cfg.validate().is_err());
        cfg.lambda_grid = vec![-0.5];
        assert!(cfg.validate().is_err());
        cfg.lambda_grid = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(vec![LossKind::W0], 1);
        cfg.lambda_grid = vec![];
        assert!(cfg.validate().is_ok(), "W0 alone needs no grid");
    }
}
