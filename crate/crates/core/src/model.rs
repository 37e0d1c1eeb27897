//! Spatial interaction models: unconstrained, origin-constrained and doubly
//! constrained flows between zones and museums.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{haversine_km, GeoPoint, GeoPolygon};

/// Constant term of the demand weight.
pub const DEMAND_INTERCEPT: f64 = 0.1;
/// Earnings coefficient of the demand weight.
pub const DEMAND_EARNINGS_COEF: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    pub name: String,
    pub centroid: GeoPoint,
    #[serde(default)]
    pub boundary: Option<GeoPolygon>,
    pub population: f64,
    pub arts_share: f64,
    pub earnings_proxy: f64,
}

impl Zone {
    pub fn validate(&self) -> Result<()> {
        self.centroid.validate()?;
        let bad = |what: &str, v: f64| Err(Error::InvalidAttribute(format!("zone `{}`: {what} = {v}", self.id)));
        if !(self.population >= 0.0) || !self.population.is_finite() {
            return bad("population", self.population);
        }
        if !(0.0..=1.0).contains(&self.arts_share) {
            return bad("arts_share", self.arts_share);
        }
        if !(self.earnings_proxy >= 0.0) || !self.earnings_proxy.is_finite() {
            return bad("earnings_proxy", self.earnings_proxy);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Museum {
    pub id: String,
    pub name: String,
    pub location: GeoPoint,
    pub floor_area_m2: f64,
    pub media_mentions: u64,
}

impl Museum {
    pub fn validate(&self) -> Result<()> {
        self.location.validate()?;
        if !(self.floor_area_m2 > 0.0) || !self.floor_area_m2.is_finite() {
            return Err(Error::InvalidAttribute(format!(
                "museum `{}`: floor_area_m2 = {}",
                self.id, self.floor_area_m2
            )));
        }
        Ok(())
    }
}

/// Labelled origin × destination matrix, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMatrix {
    origin_ids: Vec<String>,
    destination_ids: Vec<String>,
    values: Vec<f64>,
}

impl FlowMatrix {
    pub fn new(origin_ids: Vec<String>, destination_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != origin_ids.len() * destination_ids.len() {
            return Err(Error::Shape(format!(
                "{} values for {} origins × {} destinations",
                values.len(),
                origin_ids.len(),
                destination_ids.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidAttribute(format!(
                "flow value {v} is not a finite non-negative number"
            )));
        }
        Ok(FlowMatrix {
            origin_ids,
            destination_ids,
            values,
        })
    }

    pub fn zeros(origin_ids: Vec<String>, destination_ids: Vec<String>) -> Self {
        let values = vec![0.0; origin_ids.len() * destination_ids.len()];
        FlowMatrix {
            origin_ids,
            destination_ids,
            values,
        }
    }

    pub fn origin_ids(&self) -> &[String] {
        &self.origin_ids
    }

    pub fn destination_ids(&self) -> &[String] {
        &self.destination_ids
    }

    pub fn n_origins(&self) -> usize {
        self.origin_ids.len()
    }

    pub fn n_destinations(&self) -> usize {
        self.destination_ids.len()
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_destinations() + j]
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let m = self.n_destinations();
        self.values[i * m + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_destinations();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_origins()).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_destinations()];
        for i in 0..self.n_origins() {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Reorders rows and columns to follow the given labels. Every label must
    /// be present exactly once on each side.
    pub fn aligned_to(&self, origin_ids: &[String], destination_ids: &[String]) -> Result<FlowMatrix> {
        let rows = permutation(&self.origin_ids, origin_ids, "origin")?;
        let cols = permutation(&self.destination_ids, destination_ids, "destination")?;
        let mut values = Vec::with_capacity(self.values.len());
        for &i in &rows {
            values.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        Ok(FlowMatrix {
            origin_ids: origin_ids.to_vec(),
            destination_ids: destination_ids.to_vec(),
            values,
        })
    }
}

/// For each wanted label, its index in `have`.
fn permutation(have: &[String], want: &[String], side: &str) -> Result<Vec<usize>> {
    if have.len() != want.len() {
        return Err(Error::Shape(format!(
            "{} {side} labels, expected {}",
            have.len(),
            want.len()
        )));
    }
    let index: std::collections::HashMap<&str, usize> = have.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if index.len() != have.len() {
        return Err(Error::Shape(format!("duplicate {side} labels")));
    }
    want.iter()
        .map(|w| {
            index
                .get(w.as_str())
                .copied()
                .ok_or_else(|| Error::Shape(format!("{side} `{w}` missing from matrix")))
        })
        .collect()
}

/// Zone × museum distances in kilometres.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    origin_ids: Vec<String>,
    destination_ids: Vec<String>,
    km: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_values(origin_ids: Vec<String>, destination_ids: Vec<String>, km: Vec<f64>) -> Result<Self> {
        if km.len() != origin_ids.len() * destination_ids.len() {
            return Err(Error::Shape("distance matrix size does not match its labels".into()));
        }
        if km.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidParameter(
                "distances must be finite and non-negative".into(),
            ));
        }
        Ok(DistanceMatrix {
            origin_ids,
            destination_ids,
            km,
        })
    }

    pub fn origin_ids(&self) -> &[String] {
        &self.origin_ids
    }

    pub fn destination_ids(&self) -> &[String] {
        &self.destination_ids
    }

    pub fn n_origins(&self) -> usize {
        self.origin_ids.len()
    }

    pub fn n_destinations(&self) -> usize {
        self.destination_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.km[i * self.n_destinations() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.km
    }
}

pub fn distance_matrix(zones: &[Zone], museums: &[Museum]) -> Result<DistanceMatrix> {
    if zones.is_empty() {
        return Err(Error::EmptyInput("zones"));
    }
    if museums.is_empty() {
        return Err(Error::EmptyInput("museums"));
    }
    let mut km = Vec::with_capacity(zones.len() * museums.len());
    for z in zones {
        for m in museums {
            km.push(haversine_km(z.centroid, m.location)?);
        }
    }
    Ok(DistanceMatrix {
        origin_ids: zones.iter().map(|z| z.id.clone()).collect(),
        destination_ids: museums.iter().map(|m| m.id.clone()).collect(),
        km,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeterrenceKind {
    Exponential,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deterrence {
    pub kind: DeterrenceKind,
    pub beta: f64,
}

impl Deterrence {
    pub const fn exponential(beta: f64) -> Self {
        Deterrence {
            kind: DeterrenceKind::Exponential,
            beta,
        }
    }

    pub const fn power(beta: f64) -> Self {
        Deterrence {
            kind: DeterrenceKind::Power,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn value(&self, d_km: f64) -> Result<f64> {
        deterrence_value(d_km, *self)
    }
}

pub fn deterrence_value(d_km: f64, det: Deterrence) -> Result<f64> {
    if !(d_km >= 0.0) || !d_km.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "distance must be finite and >= 0, got {d_km}"
        )));
    }
    match det.kind {
        DeterrenceKind::Exponential => Ok((-det.beta * d_km).exp()),
        DeterrenceKind::Power if d_km == 0.0 => Err(Error::SingularDistance),
        DeterrenceKind::Power => Ok(d_km.powf(-det.beta)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractivenessFactor {
    FloorArea,
    MediaMentions,
}

impl AttractivenessFactor {
    fn raw(&self, m: &Museum) -> f64 {
        match self {
            AttractivenessFactor::FloorArea => m.floor_area_m2,
            AttractivenessFactor::MediaMentions => m.media_mentions as f64,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            AttractivenessFactor::FloorArea => "floor_area_m2",
            AttractivenessFactor::MediaMentions => "media_mentions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorTerm {
    pub factor: AttractivenessFactor,
    /// Exponent applied to the mean-normalised factor.
    pub exponent: f64,
    /// Multiplier in additive mode; ignored in multiplicative mode.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// W = Π X̄ₙ^aₙ
    Multiplicative,
    /// W = Σ wₙ·X̄ₙ^aₙ
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractivenessSpec {
    pub factors: Vec<FactorTerm>,
    pub mode: CombineMode,
}

impl Default for AttractivenessSpec {
    /// W = 0.5·FA̅^0.5 + 0.3·MM̅^0.5
    fn default() -> Self {
        AttractivenessSpec {
            factors: vec![
                FactorTerm {
                    factor: AttractivenessFactor::FloorArea,
                    exponent: 0.5,
                    weight: 0.5,
                },
                FactorTerm {
                    factor: AttractivenessFactor::MediaMentions,
                    exponent: 0.5,
                    weight: 0.3,
                },
            ],
            mode: CombineMode::Additive,
        }
    }
}

impl AttractivenessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(Error::InvalidParameter(
                "attractiveness needs at least one factor".into(),
            ));
        }
        if self
            .factors
            .iter()
            .any(|f| !f.exponent.is_finite() || !f.weight.is_finite())
        {
            return Err(Error::InvalidParameter(
                "attractiveness coefficients must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Combines one museum's mean-normalised factor values (in `factors` order).
    pub fn combine(&self, normalized: &[f64]) -> f64 {
        let terms = self.factors.iter().zip(normalized);
        match self.mode {
            CombineMode::Additive => terms.map(|(t, x)| t.weight * x.powf(t.exponent)).sum(),
            CombineMode::Multiplicative => terms.map(|(t, x)| x.powf(t.exponent)).product(),
        }
    }
}

fn divide_by_mean(v: &mut [f64]) -> Option<()> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= mean);
    Some(())
}

/// Museum attractiveness W, scaled to mean one.
pub fn attractiveness_weights(museums: &[Museum], spec: &AttractivenessSpec) -> Result<Vec<f64>> {
    if museums.is_empty() {
        return Err(Error::EmptyInput("museums"));
    }
    spec.validate()?;
    for m in museums {
        m.validate()?;
    }
    let normalized = spec
        .factors
        .iter()
        .map(|t| {
            let mut col: Vec<f64> = museums.iter().map(|m| t.factor.raw(m)).collect();
            divide_by_mean(&mut col).ok_or_else(|| Error::DegenerateFactor(t.factor.name().into()))?;
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = (0..museums.len())
        .map(|j| {
            let xs: Vec<f64> = normalized.iter().map(|col| col[j]).collect();
            let w = spec.combine(&xs);
            if w.is_finite() && w >= 0.0 {
                Ok(w)
            } else {
                Err(Error::InvalidAttribute(format!(
                    "attractiveness of museum `{}` is {w}",
                    museums[j].id
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    divide_by_mean(&mut w).ok_or_else(|| Error::DegenerateFactor("attractiveness".into()))?;
    Ok(w)
}

/// Raw (unnormalised) demand weight for a single zone.
pub fn raw_demand(arts_share: f64, earnings_proxy: f64) -> f64 {
    DEMAND_INTERCEPT + arts_share + DEMAND_EARNINGS_COEF * earnings_proxy
}

/// Zone demand weights Inc, scaled to mean one.
pub fn demand_weights(zones: &[Zone]) -> Result<Vec<f64>> {
    if zones.is_empty() {
        return Err(Error::EmptyInput("zones"));
    }
    for z in zones {
        z.validate()?;
    }
    let mut inc: Vec<f64> = zones
        .iter()
        .map(|z| raw_demand(z.arts_share, z.earnings_proxy))
        .collect();
    divide_by_mean(&mut inc).ok_or_else(|| Error::DegenerateFactor("demand".into()))?;
    Ok(inc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Unconstrained,
    OriginConstrained,
    DoublyConstrained,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Unconstrained => "unconstrained",
            Constraint::OriginConstrained => "origin",
            Constraint::DoublyConstrained => "doubly",
        })
    }
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(Constraint::Unconstrained),
            "origin" | "origin_constrained" => Ok(Constraint::OriginConstrained),
            "doubly" | "doubly_constrained" => Ok(Constraint::DoublyConstrained),
            other => Err(Error::InvalidParameter(format!("unknown constraint `{other}`"))),
        }
    }
}

/// The three nested specifications compared during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecPreset {
    /// Inc = W = 1.
    Baseline,
    /// Museum attractiveness only.
    Attract,
    /// Attractiveness and demand.
    AttractDemand,
}

impl SpecPreset {
    pub const ALL: [SpecPreset; 3] = [SpecPreset::Baseline, SpecPreset::Attract, SpecPreset::AttractDemand];
}

impl fmt::Display for SpecPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpecPreset::Baseline => "baseline",
            SpecPreset::Attract => "attract",
            SpecPreset::AttractDemand => "attract-demand",
        })
    }
}

impl FromStr for SpecPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(SpecPreset::Baseline),
            "attract" => Ok(SpecPreset::Attract),
            "attract-demand" => Ok(SpecPreset::AttractDemand),
            other => Err(Error::InvalidParameter(format!("unknown model spec `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub deterrence: Deterrence,
    pub use_attractiveness: bool,
    pub use_demand: bool,
    pub constraint: Constraint,
    #[serde(default)]
    pub attractiveness: AttractivenessSpec,
}

impl ModelSpec {
    /// Unconstrained exponential-decay model for a preset.
    pub fn preset(preset: SpecPreset, beta: f64) -> Self {
        ModelSpec {
            deterrence: Deterrence::exponential(beta),
            use_attractiveness: preset != SpecPreset::Baseline,
            use_demand: preset == SpecPreset::AttractDemand,
            constraint: Constraint::Unconstrained,
            attractiveness: AttractivenessSpec::default(),
        }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        let mut spec = self.clone();
        spec.deterrence.beta = beta;
        spec
    }

    pub fn with_constraint(mut self, constraint: Constraint) -> Self {
        self.constraint = constraint;
        self
    }

    /// Short label such as `attract` or `baseline/doubly`.
    pub fn label(&self) -> String {
        let base = match (self.use_attractiveness, self.use_demand) {
            (false, false) => "baseline",
            (true, false) => "attract",
            (true, true) => "attract-demand",
            (false, true) => "demand",
        };
        match self.constraint {
            Constraint::Unconstrained => base.to_string(),
            c => format!("{base}/{c}"),
        }
    }
}

/// Known margins for the constrained variants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Marginals {
    pub origins: Option<Vec<f64>>,
    pub destinations: Option<Vec<f64>>,
}

impl Marginals {
    pub fn of(matrix: &FlowMatrix) -> Self {
        Marginals {
            origins: Some(matrix.row_sums()),
            destinations: Some(matrix.col_sums()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancingOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BalancingOptions {
    fn default() -> Self {
        BalancingOptions {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

fn deterrence_matrix(dmat: &DistanceMatrix, det: Deterrence) -> Result<Vec<f64>> {
    det.validate()?;
    dmat.values().iter().map(|d| deterrence_value(*d, det)).collect()
}

fn check_totals(v: &[f64], expected: usize, what: &str) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Shape(format!("{} {what} totals, expected {expected}", v.len())));
    }
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what} totals must be finite and >= 0"
        )));
    }
    Ok(())
}

/// T_ij = Inc_i · P_i · W_j · f(d_ij)
pub fn unconstrained_flows(zones: &[Zone], museums: &[Museum], spec: &ModelSpec) -> Result<FlowMatrix> {
    if spec.constraint != Constraint::Unconstrained {
        return Err(Error::InvalidParameter(format!(
            "unconstrained_flows called with a {} spec",
            spec.constraint
        )));
    }
    PreparedModel::new(zones, museums, spec, None)?.flows(spec.deterrence.beta)
}

/// Doubly constrained flows T_ij = A_i B_j O_i D_j f(d_ij).
///
/// Balancing factors start at one and are updated B then A each sweep until
/// the largest relative change in any factor drops below `opts.tol`.
pub fn doubly_constrained_flows(
    origins: &[f64],
    destinations: &[f64],
    dmat: &DistanceMatrix,
    det: Deterrence,
    opts: BalancingOptions,
) -> Result<FlowMatrix> {
    let f = deterrence_matrix(dmat, det)?;
    let values = balance(origins, destinations, dmat, &f, opts)?;
    Ok(FlowMatrix {
        origin_ids: dmat.origin_ids.clone(),
        destination_ids: dmat.destination_ids.clone(),
        values,
    })
}

fn balance(
    origins: &[f64],
    destinations: &[f64],
    dmat: &DistanceMatrix,
    f: &[f64],
    opts: BalancingOptions,
) -> Result<Vec<f64>> {
    let (n, m) = (dmat.n_origins(), dmat.n_destinations());
    check_totals(origins, n, "origin")?;
    check_totals(destinations, m, "destination")?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let (so, sd): (f64, f64) = (origins.iter().sum(), destinations.iter().sum());
    if (so - sd).abs() > 1e-9 * so.abs().max(sd.abs()) {
        return Err(Error::MarginalMismatch {
            origins: so,
            destinations: sd,
        });
    }

    let rel_change = |new: f64, old: f64| (new - old).abs() / old.abs();
    let mut a = vec![1.0; n];
    let mut b = vec![1.0; m];
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut change: f64 = 0.0;
        for j in 0..m {
            let s: f64 = (0..n).map(|i| a[i] * origins[i] * f[i * m + j]).sum();
            if s > 0.0 {
                let nb = 1.0 / s;
                change = change.max(rel_change(nb, b[j]));
                b[j] = nb;
            } else if destinations[j] > 0.0 {
                return Err(Error::UnreachableDestination(dmat.destination_ids[j].clone()));
            }
        }
        for i in 0..n {
            let s: f64 = (0..m).map(|j| b[j] * destinations[j] * f[i * m + j]).sum();
            if s > 0.0 {
                let na = 1.0 / s;
                change = change.max(rel_change(na, a[i]));
                a[i] = na;
            } else if origins[i] > 0.0 {
                return Err(Error::UnreachableOrigin(dmat.origin_ids[i].clone()));
            }
        }
        residual = change;
        if change < opts.tol {
            let mut values = Vec::with_capacity(n * m);
            for i in 0..n {
                for j in 0..m {
                    values.push(a[i] * b[j] * origins[i] * destinations[j] * f[i * m + j]);
                }
            }
            return Ok(values);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Origin-constrained flows T_ij = O_i · W_j f(d_ij) / Σ_k W_k f(d_ik).
pub fn origin_constrained_flows(
    origins: &[f64],
    museums: &[Museum],
    dmat: &DistanceMatrix,
    spec: &ModelSpec,
) -> Result<FlowMatrix> {
    let w = if spec.use_attractiveness {
        attractiveness_weights(museums, &spec.attractiveness)?
    } else {
        vec![1.0; museums.len()]
    };
    if museums.len() != dmat.n_destinations() {
        return Err(Error::Shape(format!(
            "{} museums for a distance matrix with {} destinations",
            museums.len(),
            dmat.n_destinations()
        )));
    }
    let f = deterrence_matrix(dmat, spec.deterrence)?;
    let values = allocate_by_origin(origins, &w, dmat, &f)?;
    Ok(FlowMatrix {
        origin_ids: dmat.origin_ids.clone(),
        destination_ids: dmat.destination_ids.clone(),
        values,
    })
}

fn allocate_by_origin(origins: &[f64], w: &[f64], dmat: &DistanceMatrix, f: &[f64]) -> Result<Vec<f64>> {
    let m = dmat.n_destinations();
    check_totals(origins, dmat.n_origins(), "origin")?;
    let mut values = Vec::with_capacity(f.len());
    for (i, o) in origins.iter().enumerate() {
        let row = &f[i * m..(i + 1) * m];
        let denom: f64 = row.iter().zip(w).map(|(f, w)| w * f).sum();
        if !(denom > 0.0) {
            return Err(Error::UnreachableOrigin(dmat.origin_ids[i].clone()));
        }
        values.extend(row.iter().zip(w).map(|(f, w)| o * w * f / denom));
    }
    Ok(values)
}

/// A model with everything except β precomputed, for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedModel {
    spec: ModelSpec,
    dmat: DistanceMatrix,
    /// Inc_i·P_i for the unconstrained form.
    mass: Vec<f64>,
    attractiveness: Vec<f64>,
    marginals: Marginals,
    balancing: BalancingOptions,
}

impl PreparedModel {
    pub fn new(zones: &[Zone], museums: &[Museum], spec: &ModelSpec, marginals: Option<Marginals>) -> Result<Self> {
        let dmat = distance_matrix(zones, museums)?;
        for z in zones {
            z.validate()?;
        }
        for m in museums {
            m.validate()?;
        }
        let demand = if spec.use_demand {
            demand_weights(zones)?
        } else {
            vec![1.0; zones.len()]
        };
        let mass = zones.iter().zip(&demand).map(|(z, inc)| inc * z.population).collect();
        let attractiveness = if spec.use_attractiveness {
            attractiveness_weights(museums, &spec.attractiveness)?
        } else {
            vec![1.0; museums.len()]
        };
        let marginals = marginals.unwrap_or_default();
        match spec.constraint {
            Constraint::Unconstrained => {}
            Constraint::OriginConstrained if marginals.origins.is_none() => {
                return Err(Error::InvalidParameter(
                    "origin-constrained model needs origin totals".into(),
                ))
            }
            Constraint::DoublyConstrained if marginals.origins.is_none() || marginals.destinations.is_none() => {
                return Err(Error::InvalidParameter(
                    "doubly constrained model needs origin and destination totals".into(),
                ))
            }
            _ => {}
        }
        Ok(PreparedModel {
            spec: spec.clone(),
            dmat,
            mass,
            attractiveness,
            marginals,
            balancing: BalancingOptions::default(),
        })
    }

    pub fn with_balancing(mut self, opts: BalancingOptions) -> Self {
        self.balancing = opts;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.dmat
    }

    pub fn origin_ids(&self) -> &[String] {
        &self.dmat.origin_ids
    }

    pub fn destination_ids(&self) -> &[String] {
        &self.dmat.destination_ids
    }

    /// Row-major flow values at `beta`.
    pub fn values(&self, beta: f64) -> Result<Vec<f64>> {
        let det = Deterrence {
            kind: self.spec.deterrence.kind,
            beta,
        };
        let f = deterrence_matrix(&self.dmat, det)?;
        match self.spec.constraint {
            Constraint::Unconstrained => {
                let m = self.dmat.n_destinations();
                Ok(f.iter()
                    .enumerate()
                    .map(|(k, f)| self.mass[k / m] * self.attractiveness[k % m] * f)
                    .collect())
            }
            Constraint::OriginConstrained => {
                let origins = self.marginals.origins.as_deref().unwrap_or_default();
                allocate_by_origin(origins, &self.attractiveness, &self.dmat, &f)
            }
            Constraint::DoublyConstrained => {
                let origins = self.marginals.origins.as_deref().unwrap_or_default();
                let destinations = self.marginals.destinations.as_deref().unwrap_or_default();
                balance(origins, destinations, &self.dmat, &f, self.balancing)
            }
        }
    }

    pub fn flows(&self, beta: f64) -> Result<FlowMatrix> {
        Ok(FlowMatrix {
            origin_ids: self.dmat.origin_ids.clone(),
            destination_ids: self.dmat.destination_ids.clone(),
            values: self.values(beta)?,
        })
    }
}
