//! Seeded Monte-Carlo sweeps of the subspace loss of sample CCA.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{gaussian_factor, sample_cca_ridge, sample_covariances, sample_with_factor};
use crate::linalg::{self, Matrix};
use crate::losses::{distance_from_bases, principal_angles, SubspaceDistance};
use crate::model::{apply_transform, build_joint, conditioned_spec, population_cca, CanonicalSpec, JointCovariance};
use crate::seeds;
use crate::theory::{sample_size_condition, upper_rate, MeanSe, NormKind, RateParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `‖ΔP‖² = sin²θ₁`.
    Op,
    /// `‖ΔP‖_F² = 2 Σ sin²θᵢ`.
    Fro,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Op => "op",
            Metric::Fro => "fro",
        }
    }

    pub fn value(self, d: &SubspaceDistance) -> f64 {
        match self {
            Metric::Op => d.l1,
            Metric::Fro => 2.0 * d.l2,
        }
    }

    pub fn norm(self) -> NormKind {
        match self {
            Metric::Op => NormKind::Operator,
            Metric::Fro => NormKind::Frobenius,
        }
    }
}

fn default_losses() -> Vec<Metric> {
    vec![Metric::Op, Metric::Fro]
}

/// `p1 = p2 = 10`, `λ = (0.9, 0.8, 0.3, 0.1, 0, ...)`.
pub fn default_models() -> Vec<ModelSource> {
    let mut lambdas = vec![0.9, 0.8, 0.3, 0.1];
    lambdas.resize(10, 0.0);
    vec![ModelSource::Standard { p1: 10, p2: 10, lambdas }]
}

fn unit() -> f64 {
    1.0
}

/// Where a sweep's population model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Spec(CanonicalSpec),
    /// `Σx = I`, `Σy = I`, coordinate frames.
    Standard { p1: usize, p2: usize, lambdas: Vec<f64> },
    /// Random rotations of log-spaced spectra with exact condition numbers.
    Conditioned {
        p1: usize,
        p2: usize,
        lambdas: Vec<f64>,
        #[serde(default = "unit")]
        kappa_x: f64,
        #[serde(default = "unit")]
        kappa_y: f64,
        seed: u64,
    },
}

impl ModelSource {
    pub fn build(&self, k: usize) -> Result<CanonicalSpec> {
        let spec = match self {
            ModelSource::Spec(s) => {
                let mut s = s.clone();
                s.k = Some(k);
                s.validate()?;
                s
            }
            ModelSource::Standard { p1, p2, lambdas } => CanonicalSpec::standard(*p1, *p2, lambdas.clone(), Some(k))?,
            ModelSource::Conditioned {
                p1,
                p2,
                lambdas,
                kappa_x,
                kappa_y,
                seed,
            } => conditioned_spec(*p1, *p2, lambdas.clone(), Some(k), (*kappa_x, *kappa_y), *seed)?,
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_models")]
    pub models: Vec<ModelSource>,
    pub n_grid: Vec<usize>,
    pub k: usize,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_losses")]
    pub losses: Vec<Metric>,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub center: bool,
}

impl ExperimentConfig {
    /// Validates the settings and builds every model of the grid.
    pub fn prepare(&self) -> Result<Vec<PreparedModel>> {
        if self.models.is_empty() || self.n_grid.is_empty() || self.losses.is_empty() {
            return Err(Error::InvalidParams("models, n_grid and losses must be non-empty".into()));
        }
        if self.replicates < 2 {
            return Err(Error::InvalidParams("replicates must be >= 2".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidParams(format!("ridge {} must be >= 0", self.ridge)));
        }
        let models = self
            .models
            .iter()
            .map(|m| PreparedModel::new(m.build(self.k)?))
            .collect::<Result<Vec<_>>>()?;
        for m in &models {
            let pmax = m.spec.p1.max(m.spec.p2);
            if let Some(&n) = self.n_grid.iter().find(|&&n| n <= pmax) {
                return Err(Error::InvalidParams(format!("n = {n} must exceed max(p1, p2) = {pmax}")));
            }
        }
        Ok(models)
    }

    pub fn cell_count(&self) -> usize {
        self.models.len() * self.n_grid.len()
    }

    fn settings(&self) -> CellSettings {
        CellSettings {
            k: self.k,
            replicates: self.replicates,
            ridge: self.ridge,
            center: self.center,
            metrics: self.losses.clone(),
        }
    }
}

/// Per-cell knobs shared across a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSettings {
    pub k: usize,
    pub replicates: usize,
    pub ridge: f64,
    pub center: bool,
    pub metrics: Vec<Metric>,
}

/// Population quantities computed once per model and shared by its cells.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    pub spec: CanonicalSpec,
    pub cov: JointCovariance,
    pub kappa_x: f64,
    pub kappa_y: f64,
    factor: Matrix,
    sigma_x_half: Matrix,
    /// Orthonormal basis of `Σx^{1/2} Φ₁:k`.
    target: Matrix,
}

impl PreparedModel {
    pub fn new(spec: CanonicalSpec) -> Result<Self> {
        let k = spec
            .k
            .ok_or_else(|| Error::InvalidParams("model needs a target rank k".into()))?;
        let cov = build_joint(&spec)?;
        let pop = population_cca(&cov)?;
        let sigma_x_half = linalg::psd_sqrt(&cov.sigma_x)?;
        let target = linalg::orthonormal_basis(&(&sigma_x_half * pop.phi_top(k)))?;
        Ok(Self {
            kappa_x: cov.kappa_x()?,
            kappa_y: cov.kappa_y()?,
            factor: gaussian_factor(&cov)?,
            spec,
            cov,
            sigma_x_half,
            target,
        })
    }

    fn k(&self) -> usize {
        self.spec.k.unwrap_or(1)
    }

    fn rate_params(&self, n: usize) -> Result<RateParams> {
        let k = self.k();
        RateParams::new(
            self.spec.p1,
            self.spec.p2,
            n,
            k,
            self.spec.lambdas[k - 1],
            self.spec.lambdas[k],
        )
    }

    /// One replicate; `Ok(None)` when the sample covariance is singular.
    fn replicate(&self, n: usize, settings: &CellSettings, seed: u64) -> Result<Option<SubspaceDistance>> {
        let data = sample_with_factor(&self.factor, self.spec.p1, n, seed)?;
        let covs = sample_covariances(&data, settings.center)?;
        let est = match sample_cca_ridge(&covs, settings.k, settings.ridge) {
            Ok(e) => e,
            Err(Error::Singular(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let basis = match linalg::orthonormal_basis(&(&self.sigma_x_half * est.phi_top(settings.k))) {
            Ok(b) => b,
            Err(Error::RankDeficient { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        Ok(Some(distance_from_bases(&basis, &self.target)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean_loss: f64,
    pub std_err: f64,
    pub rate_principal: f64,
    pub rate_high_order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_index: usize,
    pub model_index: usize,
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub k: usize,
    pub lambda_k: f64,
    pub lambda_k1: f64,
    pub kappa_x: f64,
    pub kappa_y: f64,
    pub replicates: usize,
    pub failures: usize,
    pub metrics: Vec<MetricSummary>,
}

impl CellResult {
    pub fn metric(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Runs all replicates of one cell. Seeds depend only on
/// `(master_seed, cell_index, replicate)`.
pub fn run_cell(
    model: &PreparedModel,
    n: usize,
    settings: &CellSettings,
    master_seed: u64,
    cell_index: usize,
    model_index: usize,
) -> Result<CellResult> {
    if settings.k != model.k() {
        return Err(Error::InvalidParams("cell rank differs from model rank".into()));
    }
    let draws: Vec<Option<SubspaceDistance>> = (0..settings.replicates)
        .into_par_iter()
        .map(|r| model.replicate(n, settings, seeds::derive(master_seed, &[cell_index as u64, r as u64])))
        .collect::<Result<_>>()?;
    let ok: Vec<&SubspaceDistance> = draws.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::AllReplicatesFailed(settings.replicates));
    }
    let params = model.rate_params(n)?;
    let metrics = settings
        .metrics
        .iter()
        .map(|&metric| {
            let values: Vec<f64> = ok.iter().map(|d| metric.value(d)).collect();
            let stats = MeanSe::from_samples(&values);
            let rate = upper_rate(&params, metric.norm())?;
            Ok(MetricSummary {
                metric,
                mean_loss: stats.mean,
                std_err: stats.std_err,
                rate_principal: rate.principal,
                rate_high_order: rate.high_order,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CellResult {
        cell_index,
        model_index,
        n,
        p1: model.spec.p1,
        p2: model.spec.p2,
        k: settings.k,
        lambda_k: params.lambda_k,
        lambda_k1: params.lambda_k1,
        kappa_x: model.kappa_x,
        kappa_y: model.kappa_y,
        replicates: settings.replicates,
        failures: draws.len() - ok.len(),
        metrics,
    })
}

/// Outcome of one grid cell; failures do not stop the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell_index: usize,
    pub model_index: usize,
    pub n: usize,
    pub result: std::result::Result<CellResult, Error>,
}

/// Runs the whole grid. Cells are ordered by model, then by position in `n_grid`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<CellOutcome>> {
    let order: Vec<usize> = (0..config.cell_count()).collect();
    run_cells(config, &order)
}

/// Runs the listed cells in the given order and returns them sorted by index.
pub fn run_cells(config: &ExperimentConfig, order: &[usize]) -> Result<Vec<CellOutcome>> {
    let models = config.prepare()?;
    let settings = config.settings();
    let per_model = config.n_grid.len();
    if let Some(&bad) = order.iter().find(|&&c| c >= config.cell_count()) {
        return Err(Error::InvalidParams(format!("cell index {bad} out of range")));
    }
    let mut out: Vec<CellOutcome> = order
        .par_iter()
        .map(|&cell| {
            let (mi, ni) = (cell / per_model, cell % per_model);
            let n = config.n_grid[ni];
            CellOutcome {
                cell_index: cell,
                model_index: mi,
                n,
                result: run_cell(&models[mi], n, &settings, config.master_seed, cell, mi),
            }
        })
        .collect();
    out.sort_by_key(|c| c.cell_index);
    Ok(out)
}

pub fn successful(outcomes: &[CellOutcome]) -> Vec<CellResult> {
    outcomes.iter().filter_map(|o| o.result.as_ref().ok().cloned()).collect()
}

pub const CSV_HEADER: [&str; 16] = [
    "cell_index",
    "n",
    "p1",
    "p2",
    "k",
    "lambda_k",
    "lambda_k1",
    "kappa_x",
    "kappa_y",
    "metric",
    "mean_loss",
    "std_err",
    "replicates",
    "failures",
    "rate_principal",
    "rate_high_order",
];

/// One row per (cell, metric).
pub fn write_results_csv<W: Write>(cells: &[CellResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for c in cells {
        for m in &c.metrics {
            w.write_record([
                c.cell_index.to_string(),
                c.n.to_string(),
                c.p1.to_string(),
                c.p2.to_string(),
                c.k.to_string(),
                c.lambda_k.to_string(),
                c.lambda_k1.to_string(),
                c.kappa_x.to_string(),
                c.kappa_y.to_string(),
                m.metric.name().to_string(),
                m.mean_loss.to_string(),
                m.std_err.to_string(),
                c.replicates.to_string(),
                c.failures.to_string(),
                m.rate_principal.to_string(),
                m.rate_high_order.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
}

/// OLS of `ln(loss)` on `ln(n)`.
pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if let Some(&(_, bad)) = points.iter().find(|(_, l)| !(*l > 0.0)) {
        return Err(Error::NonPositiveLoss(bad));
    }
    if points.iter().any(|(n, _)| !(*n > 0.0)) {
        return Err(Error::InvalidParams("sample sizes must be positive".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParams("all sample sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(SlopeFit {
        slope,
        intercept,
        std_err: (ssr / (m - 2.0) / sxx).sqrt(),
    })
}

/// `(n, mean_loss)` pairs of one model and metric, in grid order.
pub fn slope_points(cells: &[CellResult], model_index: usize, metric: Metric) -> Vec<(f64, f64)> {
    cells
        .iter()
        .filter(|c| c.model_index == model_index)
        .filter_map(|c| c.metric(metric).map(|m| (c.n as f64, m.mean_loss)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub n: usize,
    pub observed: f64,
    pub std_err: f64,
    pub predicted: f64,
    pub within: bool,
    /// Largest sample-size ratio of the two cells; above 1 the principal term
    /// is not expected to dominate.
    pub condition_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub metric: Metric,
    pub cells: Vec<RatioCell>,
    pub pass_fraction: f64,
    pub pass: bool,
}

/// Compares per-`n` loss ratios of two sweeps with the ratio of their
/// principal rate terms. Passes when at least 80% of cells agree within 3 SE.
pub fn factor_ratio_test(a: &[CellResult], b: &[CellResult], metric: Metric) -> Result<RatioReport> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::MismatchedGrids(format!("{} vs {} cells", a.len(), b.len())));
    }
    let mut cells = Vec::with_capacity(a.len());
    for (ca, cb) in a.iter().zip(b) {
        if (ca.n, ca.p1, ca.p2, ca.k) != (cb.n, cb.p1, cb.p2, cb.k) {
            return Err(Error::MismatchedGrids(format!(
                "cell (n={}, p1={}, p2={}, k={}) vs (n={}, p1={}, p2={}, k={})",
                ca.n, ca.p1, ca.p2, ca.k, cb.n, cb.p1, cb.p2, cb.k
            )));
        }
        let missing = || Error::MismatchedGrids(format!("metric {} missing", metric.name()));
        let ma = ca.metric(metric).ok_or_else(missing)?;
        let mb = cb.metric(metric).ok_or_else(missing)?;
        let observed = ma.mean_loss / mb.mean_loss;
        let std_err = observed.abs() * ((ma.std_err / ma.mean_loss).powi(2) + (mb.std_err / mb.mean_loss).powi(2)).sqrt();
        let predicted = ma.rate_principal / mb.rate_principal;
        let condition = |c: &CellResult| {
            RateParams::new(c.p1, c.p2, c.n, c.k, c.lambda_k, c.lambda_k1).and_then(|p| sample_size_condition(&p))
        };
        cells.push(RatioCell {
            n: ca.n,
            observed,
            std_err,
            predicted,
            within: (observed - predicted).abs() <= 3.0 * std_err,
            condition_ratio: condition(ca)?.max(condition(cb)?),
        });
    }
    let pass_fraction = cells.iter().filter(|c| c.within).count() as f64 / cells.len() as f64;
    Ok(RatioReport {
        metric,
        cells,
        pass_fraction,
        pass: pass_fraction >= 0.8,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub replicates: usize,
    pub transforms: usize,
    pub max_abs_diff: f64,
    pub per_transform_max: Vec<f64>,
}

/// Losses on `(X, Y)` versus `(X T₁, Y T₂)` with the transformed population
/// loadings `T₁⁻¹ Φ`, on identical Gaussian draws.
pub fn invariance_experiment(
    spec: &CanonicalSpec,
    transforms: &[(Matrix, Matrix)],
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<InvarianceReport> {
    let k = spec
        .k
        .ok_or_else(|| Error::InvalidParams("model needs a target rank k".into()))?;
    let cov = build_joint(spec)?;
    let phi = population_cca(&cov)?.phi_top(k);
    let factor = gaussian_factor(&cov)?;
    let mapped = transforms
        .iter()
        .map(|(t1, t2)| {
            let inv = t1
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular("transform is not invertible".into()))?;
            if t2.clone().try_inverse().is_none() {
                return Err(Error::Singular("transform is not invertible".into()));
            }
            Ok((apply_transform(&cov, t1, t2)?, inv * &phi))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = |data: &crate::estimator::DataPair, target: &Matrix, sigma_x: &Matrix| -> Result<(f64, f64)> {
        let covs = sample_covariances(data, false)?;
        let est = sample_cca_ridge(&covs, k, 0.0)?;
        let d = principal_angles(&est.phi_top(k), target, sigma_x)?;
        Ok((d.l1, 2.0 * d.l2))
    };
    let diffs: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let data = sample_with_factor(&factor, spec.p1, n, seeds::derive(seed, &[r as u64]))?;
            let base = loss(&data, &phi, &cov.sigma_x)?;
            transforms
                .iter()
                .zip(&mapped)
                .map(|((t1, t2), (cov_t, phi_t))| {
                    let moved = loss(&data.transform(t1, t2), phi_t, &cov_t.sigma_x)?;
                    Ok((base.0 - moved.0).abs().max((base.1 - moved.1).abs()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let per_transform_max: Vec<f64> = (0..transforms.len())
        .map(|t| diffs.iter().map(|d| d[t]).fold(0.0, f64::max))
        .collect();
    Ok(InvarianceReport {
        replicates,
        transforms: transforms.len(),
        max_abs_diff: per_transform_max.iter().cloned().fold(0.0, f64::max),
        per_transform_max,
    })
}

/// Standard-form models with fixed `p1` and correlations, varying only `p2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Design {
    pub p1: usize,
    pub k: usize,
    /// Length `p1`; entries past `k` are the shared residual correlations.
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Row {
    pub p2: usize,
    pub mean_loss: f64,
    pub std_err: f64,
    pub failures: usize,
    pub condition_ratio: f64,
    pub condition_violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Pair {
    pub p2_a: usize,
    pub p2_b: usize,
    /// `|a − b| / min(a, b)`.
    pub relative_diff: f64,
    /// `|a − b| / sqrt(se_a² + se_b²)`.
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2Report {
    pub rows: Vec<P2Row>,
    pub pairs: Vec<P2Pair>,
    pub condition_violated: bool,
    pub pass: bool,
}

pub fn p2_independence_experiment(design: &P2Design, p2_grid: &[usize]) -> Result<P2Report> {
    if p2_grid.is_empty() {
        return Err(Error::InvalidParams("p2 grid is empty".into()));
    }
    if design.lambdas.len() != design.p1 {
        return Err(Error::InvalidLambdas(format!("need {} correlations", design.p1)));
    }
    let settings = CellSettings {
        k: design.k,
        replicates: design.replicates,
        ridge: 0.0,
        center: false,
        metrics: vec![design.metric],
    };
    let rows = p2_grid
        .iter()
        .enumerate()
        .map(|(i, &p2)| {
            if p2 < design.p1 {
                return Err(Error::InvalidParams(format!("p2 = {p2} below p1 = {}", design.p1)));
            }
            let spec = CanonicalSpec::standard(design.p1, p2, design.lambdas.clone(), Some(design.k))?;
            let model = PreparedModel::new(spec)?;
            let cell = run_cell(&model, design.n, &settings, design.seed, i, 0)?;
            let condition_ratio = sample_size_condition(&model.rate_params(design.n)?)?;
            Ok(P2Row {
                p2,
                mean_loss: cell.metrics[0].mean_loss,
                std_err: cell.metrics[0].std_err,
                failures: cell.failures,
                condition_ratio,
                condition_violated: condition_ratio > 1.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let diff = (a.mean_loss - b.mean_loss).abs();
            let relative_diff = diff / a.mean_loss.min(b.mean_loss);
            let se = a.std_err.hypot(b.std_err);
            let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
            pairs.push(P2Pair {
                p2_a: a.p2,
                p2_b: b.p2,
                relative_diff,
                z,
                pass: relative_diff <= 0.2 && z <= 3.0,
            });
        }
    }
    Ok(P2Report {
        condition_violated: rows.iter().any(|r| r.condition_violated),
        pass: pairs.iter().all(|p| p.pass),
        rows,
        pairs,
    })
}
