//! Quantitative evaluation: split errors, prediction horizons,
//! eigenfunction and eigenvalue grids, and linearity diagnostics.
//!
//! Everything here is read-only over the model and deterministic. Grid
//! exports are plain tables (named columns plus `f64` rows) that the
//! companion crate serializes; rows are ordered lexicographically by grid
//! index with the last axis fastest.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{Dataset, Split, Trajectory};
use crate::error::Error;
use crate::koopman::KoopmanModel;
use crate::mat::Mat;
use crate::math;
use crate::training::{dataset_loss, LossBreakdown, LossWeights};

/// One grid axis: closed interval `[min, max]` sampled at `resolution`
/// evenly spaced points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub resolution: usize,
}

/// A rectangular grid over state or latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self, Error> {
        if axes.is_empty() {
            return Err(Error::Config(String::from("grid needs at least one axis")));
        }
        for a in &axes {
            if !(a.min < a.max) || a.resolution < 2 {
                return Err(Error::Config(String::from(
                    "grid axis needs min < max and resolution >= 2",
                )));
            }
        }
        Ok(GridSpec { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.resolution).product()
    }

    /// All grid points, ordered lexicographically by index tuple with the
    /// last axis varying fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.point_count());
        let mut idx = vec![0usize; self.dim()];
        loop {
            let point: Vec<f64> = idx
                .iter()
                .zip(&self.axes)
                .map(|(&i, a)| a.min + (a.max - a.min) * i as f64 / (a.resolution - 1) as f64)
                .collect();
            out.push(point);
            // Increment the mixed-radix index, last axis fastest.
            let mut axis = self.dim();
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < self.axes[axis].resolution {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }
}

/// A named-column table of `f64` rows, ready for CSV serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Objective value of each provided split.
pub fn split_errors(
    model: &KoopmanModel,
    datasets: &[&Dataset],
    w: &LossWeights,
    batch_size: usize,
) -> Result<Vec<(Split, LossBreakdown)>, Error> {
    datasets
        .iter()
        .map(|ds| Ok((ds.split, dataset_loss(model, &ds.trajectories, w, batch_size)?)))
        .collect()
}

fn norm2(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// Relative prediction error at each step ahead of the first snapshot.
///
/// Entry `k` (0-based) compares the model's `k + 1`-step prediction against
/// the true snapshot at that time, Euclidean norm over components, divided
/// by the true norm floored at 1e-12.
pub fn prediction_errors(model: &KoopmanModel, traj: &Trajectory) -> Result<Vec<f64>, Error> {
    let t_len = traj.len();
    if t_len < 2 {
        return Ok(Vec::new());
    }
    let pred = model.predict_states(traj.states.row(0), t_len - 1)?;
    let mut out = Vec::with_capacity(t_len - 1);
    for k in 1..t_len {
        let truth = traj.states.row(k);
        let diff: Vec<f64> = pred
            .row(k - 1)
            .iter()
            .zip(truth)
            .map(|(a, b)| a - b)
            .collect();
        out.push(norm2(&diff) / norm2(truth).max(1e-12));
    }
    Ok(out)
}

/// Number of steps the model can predict before the relative error reaches
/// `threshold`: the largest `h` such that every step `1..=h` stays below
/// it. Returns 0 when the first step already violates.
pub fn prediction_horizon(
    model: &KoopmanModel,
    traj: &Trajectory,
    threshold: f64,
) -> Result<usize, Error> {
    assert!(threshold > 0.0, "threshold must be positive");
    let errors = prediction_errors(model, traj)?;
    let mut horizon = 0;
    for e in errors {
        if e < threshold {
            horizon += 1;
        } else {
            break;
        }
    }
    Ok(horizon)
}

fn pair_columns(model: &KoopmanModel, prefix_mag: &str, prefix_phase: &str) -> Vec<String> {
    let mut cols = Vec::new();
    for j in 0..model.spectrum.complex_pairs {
        cols.push(alloc::format!("{prefix_mag}{}", j + 1));
        cols.push(alloc::format!("{prefix_phase}{}", j + 1));
    }
    cols
}

/// Encodes every grid point; for each complex pair the pair's magnitude
/// and phase are appended. Columns: `x1..xn, y1..yp`, then
/// `magnitude_j, phase_j` per pair.
pub fn eigenfunction_grid(model: &KoopmanModel, grid: &GridSpec) -> Result<ExportTable, Error> {
    eigenfunction_grid_masked(model, grid, |_| true)
}

/// Like [`eigenfunction_grid`] but keeps only points where `mask` holds.
pub fn eigenfunction_grid_masked<F>(
    model: &KoopmanModel,
    grid: &GridSpec,
    mask: F,
) -> Result<ExportTable, Error>
where
    F: Fn(&[f64]) -> bool,
{
    let n = model.state_dim();
    if grid.dim() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: grid.dim(),
        });
    }
    let p = model.latent_dim();
    let kept: Vec<Vec<f64>> = grid.points().into_iter().filter(|pt| mask(pt)).collect();
    let mut columns: Vec<String> = (1..=n).map(|i| alloc::format!("x{i}")).collect();
    columns.extend((1..=p).map(|i| alloc::format!("y{i}")));
    columns.extend(pair_columns(model, "magnitude", "phase"));

    let mut rows = Vec::with_capacity(kept.len());
    if kept.is_empty() {
        return Ok(ExportTable { columns, rows });
    }
    let x = Mat::from_rows(&kept);
    let y = model.encode(&x)?;
    for (r, pt) in kept.iter().enumerate() {
        let latent = y.row(r);
        let mut row = Vec::with_capacity(columns.len());
        row.extend_from_slice(pt);
        row.extend_from_slice(latent);
        for j in 0..model.spectrum.complex_pairs {
            let i = model.spectrum.pair_index(j);
            let (u, v) = (latent[i], latent[i + 1]);
            row.push(math::sqrt(math::hypot2(u, v)));
            row.push(math::atan2(v, u));
        }
        rows.push(row);
    }
    Ok(ExportTable { columns, rows })
}

/// Evaluates the eigenvalue networks over a latent-space grid. Columns:
/// `y1..yp`, then `mu_j, omega_j` per pair, then `lambda_j` per real
/// eigenvalue.
pub fn eigenvalue_field(model: &KoopmanModel, grid: &GridSpec) -> Result<ExportTable, Error> {
    let p = model.latent_dim();
    if grid.dim() != p {
        return Err(Error::ShapeMismatch {
            expected: p,
            got: grid.dim(),
        });
    }
    let mut columns: Vec<String> = (1..=p).map(|i| alloc::format!("y{i}")).collect();
    for j in 1..=model.spectrum.complex_pairs {
        columns.push(alloc::format!("mu{j}"));
        columns.push(alloc::format!("omega{j}"));
    }
    for j in 1..=model.spectrum.real_eigs {
        columns.push(alloc::format!("lambda{j}"));
    }
    let points = grid.points();
    let mut rows = Vec::with_capacity(points.len());
    for pt in &points {
        let eigs = model.eigenvalues_at(pt)?;
        let mut row = Vec::with_capacity(columns.len());
        row.extend_from_slice(pt);
        for &(mu, om) in &eigs.pairs {
            row.push(mu);
            row.push(om);
        }
        row.extend_from_slice(&eigs.reals);
        rows.push(row);
    }
    Ok(ExportTable { columns, rows })
}

/// How linear the latent dynamics are along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearityDiagnostic {
    /// `|phi(x_{m+1}) - K^m phi(x_1)|_2` for `m = 1..T-1`.
    pub residuals: Vec<f64>,
    /// Radius of the encoded latents per complex pair, length `T`.
    pub encoded_radii: Vec<Vec<f64>>,
}

/// Latent residuals between the encoded trajectory and the rollout, plus
/// the encoded radius trace of each complex pair.
pub fn linearity_diagnostic(
    model: &KoopmanModel,
    traj: &Trajectory,
) -> Result<LinearityDiagnostic, Error> {
    let t_len = traj.len();
    let encoded = model.encode(&traj.states)?;
    let rollout = model.latent_rollout(encoded.row(0), t_len - 1)?;
    let mut residuals = Vec::with_capacity(t_len - 1);
    for m in 1..t_len {
        let diff: Vec<f64> = rollout[m - 1]
            .iter()
            .zip(encoded.row(m))
            .map(|(a, b)| a - b)
            .collect();
        residuals.push(norm2(&diff));
    }
    let mut encoded_radii = Vec::with_capacity(model.spectrum.complex_pairs);
    for j in 0..model.spectrum.complex_pairs {
        let i = model.spectrum.pair_index(j);
        let trace: Vec<f64> = (0..t_len)
            .map(|t| {
                let row = encoded.row(t);
                math::sqrt(math::hypot2(row[i], row[i + 1]))
            })
            .collect();
        encoded_radii.push(trace);
    }
    Ok(LinearityDiagnostic {
        residuals,
        encoded_radii,
    })
}

/// Mean/min/max of one quantity over a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeStat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl RangeStat {
    pub fn over(values: &[f64]) -> RangeStat {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        RangeStat {
            mean: sum / values.len() as f64,
            min,
            max,
        }
    }
}

/// Eigenvalue statistics over a set of latent points.
#[derive(Debug, Clone, PartialEq)]
pub struct EigStats {
    /// `(mu, omega)` statistics per complex pair.
    pub pairs: Vec<(RangeStat, RangeStat)>,
    pub reals: Vec<RangeStat>,
}

/// Evaluates the eigenvalue networks at every row of `latents` and
/// summarizes each output.
pub fn eigenvalue_stats(model: &KoopmanModel, latents: &Mat) -> Result<EigStats, Error> {
    let c = model.spectrum.complex_pairs;
    let r = model.spectrum.real_eigs;
    let rows = latents.rows();
    let mut mus = vec![Vec::with_capacity(rows); c];
    let mut oms = vec![Vec::with_capacity(rows); c];
    let mut las = vec![Vec::with_capacity(rows); r];
    for row in 0..rows {
        let eigs = model.eigenvalues_at(latents.row(row))?;
        for (j, &(mu, om)) in eigs.pairs.iter().enumerate() {
            mus[j].push(mu);
            oms[j].push(om);
        }
        for (j, &la) in eigs.reals.iter().enumerate() {
            las[j].push(la);
        }
    }
    Ok(EigStats {
        pairs: (0..c)
            .map(|j| (RangeStat::over(&mus[j]), RangeStat::over(&oms[j])))
            .collect(),
        reals: las.iter().map(|v| RangeStat::over(v)).collect(),
    })
}

/// Full evaluation: per-split errors, per-trajectory prediction horizons on
/// the test split, and eigenvalue statistics over encoded test states.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub splits: Vec<(Split, LossBreakdown)>,
    pub horizons: Vec<usize>,
    pub horizon_threshold: f64,
    pub eigenvalues: Option<EigStats>,
}

pub fn eval_report(
    model: &KoopmanModel,
    datasets: &[&Dataset],
    w: &LossWeights,
    batch_size: usize,
    horizon_threshold: f64,
) -> Result<EvalReport, Error> {
    let splits = split_errors(model, datasets, w, batch_size)?;
    let mut horizons = Vec::new();
    let mut eigenvalues = None;
    if let Some(test) = datasets.iter().find(|d| d.split == Split::Test) {
        for traj in &test.trajectories {
            horizons.push(prediction_horizon(model, traj, horizon_threshold)?);
        }
        let firsts: Vec<Vec<f64>> = test
            .trajectories
            .iter()
            .map(|t| t.states.row(0).to_vec())
            .collect();
        let latents = model.encode(&Mat::from_rows(&firsts))?;
        eigenvalues = Some(eigenvalue_stats(model, &latents)?);
    }
    Ok(EvalReport {
        splits,
        horizons,
        horizon_threshold,
        eigenvalues,
    })
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("no NaN in median input"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Coefficient of variation: population standard deviation over mean.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    math::sqrt(var) / mean
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in ranks"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        // Average ranks across ties.
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation of two equal-length samples.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    cov / math::sqrt(vx * vy)
}
