//! Goodness of fit and grid-search calibration of the decay parameter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BalancingOptions, Constraint, FlowMatrix, Marginals, ModelSpec, Museum, PreparedModel, SpecPreset, Zone,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub pearson_r: f64,
    pub rms: f64,
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Shape("correlation needs at least two observations".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateVariance("first vector"));
    }
    if !(syy > 0.0) {
        return Err(Error::DegenerateVariance("second vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rms_error(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Shape("rms of empty vectors".into()));
    }
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// Model plus observed matrix, aligned by label and ready for repeated fits.
#[derive(Debug, Clone)]
pub struct Calibrator {
    model: PreparedModel,
    observed: Vec<f64>,
}

impl Calibrator {
    /// The observed matrix is reordered to match zone and museum order. The
    /// constrained variants take their margins from the observed matrix.
    pub fn new(zones: &[Zone], museums: &[Museum], observed: &FlowMatrix, spec: &ModelSpec) -> Result<Self> {
        if observed.n_origins() != zones.len() || observed.n_destinations() != museums.len() {
            return Err(Error::Shape(format!(
                "observed matrix is {}×{}, model is {}×{}",
                observed.n_origins(),
                observed.n_destinations(),
                zones.len(),
                museums.len()
            )));
        }
        let zone_ids: Vec<String> = zones.iter().map(|z| z.id.clone()).collect();
        let museum_ids: Vec<String> = museums.iter().map(|m| m.id.clone()).collect();
        let observed = observed.aligned_to(&zone_ids, &museum_ids)?;
        let marginals = match spec.constraint {
            Constraint::Unconstrained => None,
            _ => Some(Marginals::of(&observed)),
        };
        let model = PreparedModel::new(zones, museums, spec, marginals)?;
        Ok(Calibrator {
            model,
            observed: observed.values().to_vec(),
        })
    }

    /// Solver settings for the doubly constrained variant.
    pub fn with_balancing(mut self, opts: BalancingOptions) -> Self {
        self.model = self.model.with_balancing(opts);
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn model(&self) -> &PreparedModel {
        &self.model
    }

    pub fn fit(&self, beta: f64) -> Result<FitMetrics> {
        let t = self.model.values(beta)?;
        Ok(FitMetrics {
            pearson_r: pearson_r(&t, &self.observed)?,
            rms: rms_error(&t, &self.observed)?,
        })
    }
}

/// Builds the model at `beta` and compares it cell by cell with `observed`.
pub fn fit_at_beta(
    zones: &[Zone],
    museums: &[Museum],
    observed: &FlowMatrix,
    spec: &ModelSpec,
    beta: f64,
) -> Result<FitMetrics> {
    Calibrator::new(zones, museums, observed, spec)?.fit(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Default for BetaGrid {
    /// β = 0.01, 0.02, …, 2.00
    fn default() -> Self {
        BetaGrid {
            start: 0.01,
            step: 0.01,
            count: 200,
        }
    }
}

impl BetaGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step >= 1e-9) || !self.step.is_finite() || !self.start.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid needs a finite start and a step of at least 1e-9, got {} / {}",
                self.start, self.step
            )));
        }
        if self.count < 1 {
            return Err(Error::InvalidParameter("grid needs at least one point".into()));
        }
        Ok(())
    }

    /// Grid points, rounded to 12 decimals so that 0.01 + 94 × 0.01 is 0.95.
    pub fn values(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

/// How independent grid points are evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

/// Maps `f` over `items`, keeping input order regardless of `exec`.
pub fn map_ordered<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub betas: Vec<f64>,
    /// `None` where the model matrix had no variance.
    pub r_values: Vec<Option<f64>>,
    pub rms_values: Vec<Option<f64>>,
    pub best_beta: f64,
    pub best_r: f64,
    pub spec: ModelSpec,
}

impl SweepResult {
    /// Picks the largest r; ties go to the smallest β.
    fn from_points(betas: Vec<f64>, fits: Vec<Option<FitMetrics>>, spec: ModelSpec) -> Result<Self> {
        let mut best: Option<(f64, f64)> = None;
        for (b, fit) in betas.iter().zip(&fits) {
            let Some(fit) = fit else { continue };
            let r = fit.pearson_r;
            best = match best {
                Some((bb, br)) if br > r || (br == r && bb <= *b) => Some((bb, br)),
                _ => Some((*b, r)),
            };
        }
        let (best_beta, best_r) = best.ok_or(Error::NoDefinedFit)?;
        Ok(SweepResult {
            r_values: fits.iter().map(|f| f.map(|f| f.pearson_r)).collect(),
            rms_values: fits.iter().map(|f| f.map(|f| f.rms)).collect(),
            betas,
            best_beta,
            best_r,
            spec,
        })
    }
}

pub fn sweep_beta(
    zones: &[Zone],
    museums: &[Museum],
    observed: &FlowMatrix,
    spec: &ModelSpec,
    grid: &BetaGrid,
) -> Result<SweepResult> {
    Calibrator::new(zones, museums, observed, spec)?.sweep(grid, Execution::default())
}

impl Calibrator {
    /// Evaluates every grid point. Points whose model matrix has zero
    /// variance are recorded as undefined and skipped by the argmax.
    pub fn sweep(&self, grid: &BetaGrid, exec: Execution) -> Result<SweepResult> {
        grid.validate()?;
        self.sweep_values(grid.values(), exec)
    }

    /// Like [`Calibrator::sweep`] over an explicit list of β values, in the given order.
    pub fn sweep_values(&self, betas: Vec<f64>, exec: Execution) -> Result<SweepResult> {
        if betas.is_empty() {
            return Err(Error::EmptyInput("beta values"));
        }
        let fits = map_ordered(&betas, exec, |&b| match self.fit(b) {
            Ok(f) => Ok(Some(f)),
            Err(Error::DegenerateVariance(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        SweepResult::from_points(betas, fits, self.spec().clone())
    }
}

/// Sweeps the baseline, attractiveness and attractiveness+demand models, in
/// that order.
pub fn compare_specifications(
    zones: &[Zone],
    museums: &[Museum],
    observed: &FlowMatrix,
    grid: &BetaGrid,
) -> Result<Vec<SweepResult>> {
    SpecPreset::ALL
        .iter()
        .map(|p| sweep_beta(zones, museums, observed, &ModelSpec::preset(*p, grid.start), grid))
        .collect()
}
