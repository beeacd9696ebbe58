//! Config-driven experiments: validation, error-curve runs, invariant
//! suites and reproducible artifacts.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    clt_bounds, clt_holder, lln_bounds, lln_holder, nisio_bounds, nisio_holder, BoundReport, HolderParameters, Side,
};
use crate::convex_expectation::{Coords, Scenario, ScenarioConvexExpectation, Spread};
use crate::error::{Error, Result};
use crate::grid::{weighted_norm_on, Grid, GridFunction, Subdomain, WeightFunction, WeightKind};
use crate::iterate::{chernoff_iterate, OneStepOperator, StepOperator};
use crate::mollifier::MollifierKernel;
use crate::nisio::{Control, NisioFamily};
use crate::payoff::Payoff;
use crate::properties::{lemma_suite, structural_suite, PropertyReport};
use crate::rates::{
    errors_csv, holder_check, interior_margin, measure_errors, rate_report, HolderReport, RateReport, Reference,
    Verdict, DEFAULT_NOISE_MULTIPLIER, DEFAULT_SLOPE_TOLERANCE,
};
use crate::reference::{clt_limit_reference, fine_oracle, gheat_convex_reference, heat_exact};

pub const ERRORS_FILE: &str = "errors.csv";
pub const RATE_FILE: &str = "rate_report.json";
pub const BOUND_FILE: &str = "bound_report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

fn default_nodes() -> usize {
    crate::nisio::DEFAULT_NODES
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Nisio {
        controls: Vec<Control>,
        #[serde(default = "default_nodes")]
        quadrature_nodes: usize,
        #[serde(default)]
        smooth_coefficients: bool,
    },
    Lln {
        scenarios: Vec<Scenario>,
        #[serde(default = "default_nodes")]
        quadrature_nodes: usize,
    },
    Clt {
        scenarios: Vec<Scenario>,
        #[serde(default = "default_nodes")]
        quadrature_nodes: usize,
        /// Also report the faster rate for vanishing third moments.
        #[serde(default)]
        symmetric: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub t: f64,
    /// Step sizes h = 2^−n.
    #[serde(default)]
    pub levels: Option<Vec<i32>>,
    #[serde(default)]
    pub steps: Option<Vec<f64>>,
    /// Lipschitz radius r of the payoff; derived from the payoff if absent.
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// The operator itself at h = 2^−level.
    Oracle { level: i32 },
    HeatExact,
    GheatConvex,
    MaximallyDistributed,
    /// G-heat limit; `level` sets the fallback oracle step.
    CltLimit { level: i32 },
}

impl ReferenceSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceSpec::Oracle { .. } => "oracle",
            ReferenceSpec::HeatExact => "heat_exact",
            ReferenceSpec::GheatConvex => "gheat_convex",
            ReferenceSpec::MaximallyDistributed => "maximally_distributed",
            ReferenceSpec::CltLimit { .. } => "clt_limit",
        }
    }
}

fn default_slope() -> f64 {
    DEFAULT_SLOPE_TOLERANCE
}
fn default_noise() -> f64 {
    DEFAULT_NOISE_MULTIPLIER
}
fn default_holder_tolerance() -> f64 {
    0.01
}
fn default_holder_samples() -> usize {
    129
}
fn default_pairs() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default = "default_slope")]
    pub slope_tolerance: f64,
    #[serde(default = "default_noise")]
    pub noise_multiplier: f64,
    /// Spatial smoothing radius entering the interior margin.
    #[serde(default)]
    pub eps2: f64,
    /// Overrides the derived interior margin.
    #[serde(default)]
    pub margin: Option<f64>,
    /// Require e⁻ at the noise floor; defaults to true for Nisio families.
    #[serde(default)]
    pub one_sided: Option<bool>,
    #[serde(default)]
    pub holder: bool,
    #[serde(default = "default_holder_tolerance")]
    pub holder_tolerance: f64,
    #[serde(default = "default_holder_samples")]
    pub holder_samples: usize,
    #[serde(default = "default_pairs")]
    pub property_pairs: usize,
    /// Step used by the invariant suites; the largest run step if absent.
    #[serde(default)]
    pub property_step: Option<f64>,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            slope_tolerance: default_slope(),
            noise_multiplier: default_noise(),
            eps2: 0.0,
            margin: None,
            one_sided: None,
            holder: false,
            holder_tolerance: default_holder_tolerance(),
            holder_samples: default_holder_samples(),
            property_pairs: default_pairs(),
            property_step: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub grid: GridSpec,
    pub weight: WeightKind,
    pub operator: OperatorSpec,
    pub payoff: Payoff,
    pub run: RunSpec,
    pub reference: ReferenceSpec,
    pub cross_check: Option<ReferenceSpec>,
    pub checks: CheckSpec,
}

fn section<T: DeserializeOwned>(table: &mut toml::Table, key: &str, errors: &mut Vec<String>) -> Option<T> {
    let value = table.remove(key)?;
    match value.try_into::<T>() {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(format!("{key}: {}", e.to_string().trim()));
            None
        }
    }
}

fn required<T: DeserializeOwned>(table: &mut toml::Table, key: &str, errors: &mut Vec<String>) -> Option<T> {
    if !table.contains_key(key) {
        errors.push(format!("{key}: missing"));
        return None;
    }
    section(table, key, errors)
}

impl ExperimentConfig {
    /// Parses and validates a config, listing every offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![format!("syntax: {}", e.to_string().trim())]))?;
        let mut errors = Vec::new();
        let name = section::<String>(&mut table, "name", &mut errors).unwrap_or_default();
        let seed = section::<u64>(&mut table, "seed", &mut errors).unwrap_or(0);
        let grid = required::<GridSpec>(&mut table, "grid", &mut errors);
        let weight = section::<WeightKind>(&mut table, "weight", &mut errors).unwrap_or(WeightKind::One);
        let operator = required::<OperatorSpec>(&mut table, "operator", &mut errors);
        let payoff = required::<Payoff>(&mut table, "payoff", &mut errors);
        let run = required::<RunSpec>(&mut table, "run", &mut errors);
        let reference = required::<ReferenceSpec>(&mut table, "reference", &mut errors);
        let cross_check = section::<ReferenceSpec>(&mut table, "cross_check", &mut errors);
        let checks = section::<CheckSpec>(&mut table, "checks", &mut errors).unwrap_or_default();
        for key in table.keys() {
            errors.push(format!("{key}: unknown field"));
        }
        let (Some(grid), Some(operator), Some(payoff), Some(run), Some(reference)) =
            (grid, operator, payoff, run, reference)
        else {
            return Err(Error::Config(errors));
        };
        let config = Self {
            name,
            seed,
            grid,
            weight,
            operator,
            payoff,
            run,
            reference,
            cross_check,
            checks,
        };
        errors.extend(config.semantic_errors());
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)?;
        Ok((Self::from_toml(&text)?, text))
    }

    /// Step sizes in decreasing order.
    pub fn steps(&self) -> Vec<f64> {
        match (&self.run.levels, &self.run.steps) {
            (Some(levels), _) => levels.iter().map(|&n| 2f64.powi(-n)).collect(),
            (None, Some(steps)) => steps.clone(),
            (None, None) => Vec::new(),
        }
    }

    fn semantic_errors(&self) -> Vec<String> {
        let mut e = Vec::new();
        let g = &self.grid;
        let dim = g.lower.len();
        if !(1..=2).contains(&dim) || g.upper.len() != dim || g.counts.len() != dim {
            e.push(format!(
                "grid: lower, upper and counts must have equal length 1 or 2, got {}, {}, {}",
                g.lower.len(),
                g.upper.len(),
                g.counts.len()
            ));
        } else if let Err(err) = Grid::new(&g.lower, &g.upper, &g.counts) {
            e.push(format!("grid: {err}"));
        }
        if !(self.run.t.is_finite() && self.run.t >= 0.0) {
            e.push(format!("run.t: must be finite and ≥ 0, got {}", self.run.t));
        }
        match (&self.run.levels, &self.run.steps) {
            (Some(_), Some(_)) => e.push("run: give either levels or steps, not both".into()),
            (None, None) => e.push("run: one of levels or steps is required".into()),
            _ => {}
        }
        let steps = self.steps();
        if steps.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            e.push("run.steps: every step must be positive".into());
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) {
            e.push("run.steps: steps must be strictly decreasing".into());
        }
        if steps.len() < 3 {
            e.push(format!("run.steps: at least 3 steps are needed for a fit, got {}", steps.len()));
        }
        if let Some(r) = self.run.radius {
            if !(r.is_finite() && r > 0.0) {
                e.push(format!("run.radius: must be positive, got {r}"));
            }
        } else if self.payoff.lipschitz(dim.max(1)).is_none() || self.payoff.sup_bound().is_none() {
            e.push("run.radius: required when the payoff has no finite sup and Lipschitz bound".into());
        }
        let h_min = steps.iter().copied().fold(f64::INFINITY, f64::min);
        for (field, spec) in [("reference", Some(&self.reference)), ("cross_check", self.cross_check.as_ref())] {
            let Some(spec) = spec else { continue };
            if let ReferenceSpec::Oracle { level } | ReferenceSpec::CltLimit { level } = spec {
                let fine = 2f64.powi(-level);
                if h_min.is_finite() && fine > h_min / 8.0 {
                    e.push(format!("{field}.level: oracle step 2^-{level} must be at most h_min/8"));
                }
            }
            let fits = match (spec, &self.operator) {
                (ReferenceSpec::Oracle { .. }, _) => true,
                (ReferenceSpec::HeatExact, OperatorSpec::Nisio { controls, .. }) => controls.len() == 1,
                (ReferenceSpec::GheatConvex, OperatorSpec::Nisio { controls, .. }) => {
                    dim == 1
                        && controls
                            .iter()
                            .all(|c| matches!(c.sigma, Spread::Scalar(_)) && c.m.to_vec().iter().all(|m| *m == 0.0))
                }
                (ReferenceSpec::MaximallyDistributed, OperatorSpec::Lln { .. }) => true,
                (ReferenceSpec::CltLimit { .. }, OperatorSpec::Clt { .. }) => true,
                _ => false,
            };
            if !fits {
                e.push(format!(
                    "{field}.kind: {} does not apply to this operator",
                    spec.name()
                ));
            }
        }
        let c = &self.checks;
        for (field, v, min) in [
            ("checks.slope_tolerance", c.slope_tolerance, 0.0),
            ("checks.noise_multiplier", c.noise_multiplier, 1.0),
            ("checks.eps2", c.eps2, 0.0),
            ("checks.holder_tolerance", c.holder_tolerance, 0.0),
        ] {
            if !(v.is_finite() && v >= min) {
                e.push(format!("{field}: must be finite and ≥ {min}, got {v}"));
            }
        }
        if let Some(m) = c.margin {
            if !(m.is_finite() && m >= 0.0) {
                e.push(format!("checks.margin: must be ≥ 0, got {m}"));
            }
        }
        if c.holder_samples < 2 {
            e.push("checks.holder_samples: must be at least 2".into());
        }
        if c.property_pairs == 0 {
            e.push("checks.property_pairs: must be at least 1".into());
        }
        if let Some(h) = c.property_step {
            if !(h.is_finite() && h > 0.0) {
                e.push(format!("checks.property_step: must be positive, got {h}"));
            }
        }
        if e.is_empty() {
            if let Err(err) = self.build_operator() {
                e.push(format!("operator: {err}"));
            } else if let Err(err) = Experiment::new(self.clone()) {
                e.push(format!("setup: {err}"));
            }
        }
        e
    }

    fn build_operator(&self) -> Result<StepOperator> {
        let dim = self.grid.lower.len();
        let op = match &self.operator {
            OperatorSpec::Nisio {
                controls,
                quadrature_nodes,
                smooth_coefficients,
            } => StepOperator::Nisio(
                NisioFamily::with_nodes(controls.clone(), *quadrature_nodes)?
                    .assume_smooth_coefficients(*smooth_coefficients),
            ),
            OperatorSpec::Lln {
                scenarios,
                quadrature_nodes,
            } => StepOperator::Lln(ScenarioConvexExpectation::with_nodes(scenarios.clone(), *quadrature_nodes)?),
            OperatorSpec::Clt {
                scenarios,
                quadrature_nodes,
                ..
            } => {
                let ce = ScenarioConvexExpectation::with_nodes(scenarios.clone(), *quadrature_nodes)?;
                if !ce.has_zero_means() {
                    return Err(Error::Domain("CLT scenarios must be centred".into()));
                }
                StepOperator::Clt(ce)
            }
        };
        if op.dim() != dim {
            return Err(Error::Domain(format!(
                "operator dimension {} differs from grid dimension {dim}",
                op.dim()
            )));
        }
        Ok(op)
    }
}

/// A validated config with its grid, weight, operator and payoff built.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: Arc<Grid>,
    pub kappa: WeightFunction,
    pub op: StepOperator,
    pub payoff: GridFunction,
    pub steps: Vec<f64>,
    pub region: Subdomain,
    pub margin: f64,
    pub radius: f64,
    pub kernel: MollifierKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    pub reference: String,
    /// What was compared against the cross reference.
    pub compared: String,
    pub h: f64,
    pub distance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub operator: String,
    pub reference: String,
    pub t: f64,
    pub radius: f64,
    pub margin: f64,
    pub rate: RateReport,
    pub cross_check: Option<CrossCheck>,
    pub holder: Option<HolderReport>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub kernel_table_sha256: String,
    pub artifacts: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let op = config.build_operator()?;
        let grid = Arc::new(Grid::new(&config.grid.lower, &config.grid.upper, &config.grid.counts)?);
        let kappa = WeightFunction::new(config.weight, grid.clone())?;
        let payoff = config.payoff.sample(grid.clone())?;
        let steps = config.steps();
        let t = config.run.t;
        let (sigma, drift) = match &op {
            StepOperator::Nisio(f) => (f.sigma_max(), f.drift_max()),
            StepOperator::Lln(e) | StepOperator::Clt(e) => (e.sigma_max(), e.drift_max()),
        };
        let margin = config
            .checks
            .margin
            .unwrap_or_else(|| interior_margin(sigma, drift, t, config.checks.eps2));
        let region = Subdomain::interior(&grid, margin)?;
        let dim = grid.dim();
        let mut radius = config.run.radius.unwrap_or_else(|| {
            config
                .payoff
                .lipschitz(dim)
                .unwrap_or(f64::INFINITY)
                .max(config.payoff.sup_bound().unwrap_or(f64::INFINITY))
        });
        if !matches!(op, StepOperator::Nisio(_)) {
            // Lip_b(r) ⊂ Lip_b(1) for r < 1, and these constants need r ≥ 1.
            radius = radius.max(1.0);
        }
        let kernel = MollifierKernel::new(dim)?;
        Ok(Self {
            config,
            grid,
            kappa,
            op,
            payoff,
            steps,
            region,
            margin,
            radius,
            kernel,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::new(ExperimentConfig::from_toml(text)?)
    }

    fn t(&self) -> f64 {
        self.config.run.t
    }

    /// The theoretical bounds that apply to this experiment.
    pub fn bound_reports(&self) -> Result<Vec<BoundReport>> {
        let (r, t) = (self.radius, self.t());
        let h0 = self.steps[0];
        let k = &self.kernel;
        match (&self.op, &self.config.operator) {
            (StepOperator::Nisio(fam), _) => Ok(vec![nisio_bounds(
                &fam.generator_bounds(),
                fam.smooth(),
                r,
                t,
                h0,
                self.kappa.c_kappa(),
                k,
            )?]),
            (StepOperator::Lln(ce), _) => Ok(vec![
                lln_bounds(ce, r, t, Side::Lower, k)?,
                lln_bounds(ce, r, t, Side::Upper, k)?,
            ]),
            (StepOperator::Clt(ce), spec) => {
                let cert = ce.growth_certificate()?;
                let symmetric = matches!(spec, OperatorSpec::Clt { symmetric: true, .. });
                let mut out = Vec::new();
                for sym in [false, true] {
                    if sym && !symmetric {
                        continue;
                    }
                    for side in [Side::Lower, Side::Upper] {
                        out.push(clt_bounds(ce, &cert, r, t, side, sym, k)?);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn holder_parameters(&self) -> Result<HolderParameters> {
        let (r, t) = (self.radius, self.t());
        match &self.op {
            StepOperator::Nisio(fam) => nisio_holder(&fam.generator_bounds(), r, t, &self.kernel),
            StepOperator::Lln(ce) => lln_holder(ce, r, t, &self.kernel),
            StepOperator::Clt(ce) => clt_holder(ce, &ce.growth_certificate()?, r, t, &self.kernel),
        }
    }

    pub fn reference(&self, spec: &ReferenceSpec) -> Result<Reference> {
        let (f, t) = (&self.payoff, self.t());
        let exact = |value| Reference {
            value,
            uncertainty: 0.0,
            h_fine: None,
        };
        match (spec, &self.op) {
            (ReferenceSpec::Oracle { level }, op) => {
                let o = fine_oracle(op, f, t, 2f64.powi(-level), &self.kappa, &self.region)?;
                Ok(Reference {
                    value: o.value,
                    uncertainty: o.uncertainty,
                    h_fine: Some(o.h_fine),
                })
            }
            (ReferenceSpec::HeatExact, StepOperator::Nisio(fam)) if fam.controls().len() == 1 => {
                let c = &fam.controls()[0];
                Ok(exact(heat_exact(f, c.sigma.clone(), c.m.clone(), t)?))
            }
            (ReferenceSpec::GheatConvex, StepOperator::Nisio(fam)) => {
                let sigmas: Vec<f64> = fam
                    .controls()
                    .iter()
                    .map(|c| match (&c.sigma, &c.m) {
                        (Spread::Scalar(s), Coords::Scalar(m)) if *m == 0.0 => Ok(s.abs()),
                        _ => Err(Error::Domain("worst-case volatility needs scalar centred controls".into())),
                    })
                    .collect::<Result<_>>()?;
                let lo = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = sigmas.iter().copied().fold(0.0, f64::max);
                Ok(exact(gheat_convex_reference(f, lo, hi, t)?))
            }
            (ReferenceSpec::MaximallyDistributed, StepOperator::Lln(ce)) => {
                Ok(exact(ce.maximally_distributed_limit(f, t)?))
            }
            (ReferenceSpec::CltLimit { level }, StepOperator::Clt(ce)) => {
                let lim = clt_limit_reference(ce, f, t, 2f64.powi(-level), &self.kappa, &self.region)?;
                Ok(Reference {
                    value: lim.value,
                    uncertainty: lim.uncertainty,
                    h_fine: (!lim.closed_form).then(|| 2f64.powi(-level)),
                })
            }
            (spec, op) => Err(Error::Domain(format!(
                "{} reference does not apply to the {} operator",
                spec.name(),
                op.name()
            ))),
        }
    }

    fn cross_check(&self, spec: &ReferenceSpec, primary: &Reference, bounds: &[BoundReport]) -> Result<CrossCheck> {
        let cross = self.reference(spec)?;
        // An oracle on either side is compared directly with the other
        // reference; two exact references are compared through the finest
        // iterate.
        let (compared, value, h) = match (primary.h_fine, cross.h_fine) {
            (Some(h), _) | (None, Some(h)) => ("reference", primary.value.clone(), h),
            (None, None) => {
                let h = *self.steps.last().expect("validated non-empty");
                ("finest_iterate", chernoff_iterate(&self.op, &self.payoff, self.t(), h, false)?.result, h)
            }
        };
        let distance = weighted_norm_on(&value.sub(&cross.value)?, &self.kappa, &self.region)?;
        let allowance = bounds
            .iter()
            .filter(|b| b.admissible(h))
            .map(|b| b.bound_at(h))
            .fold(0.0, f64::max);
        let tolerance = allowance + primary.uncertainty + cross.uncertainty;
        Ok(CrossCheck {
            reference: spec.name().to_string(),
            compared: compared.to_string(),
            h,
            distance,
            tolerance,
            pass: distance <= tolerance,
        })
    }

    /// Measures the error curve and evaluates every configured check.
    pub fn run(&self) -> Result<(RunReport, String, Vec<BoundReport>)> {
        let t = self.t();
        let reference = self.reference(&self.config.reference)?;
        let curve = measure_errors(&self.op, &self.payoff, t, &self.steps, &reference, &self.kappa, &self.region)?;
        let bounds = self.bound_reports()?;
        let one_sided = self
            .config
            .checks
            .one_sided
            .unwrap_or(matches!(self.op, StepOperator::Nisio(_)));
        let rate = rate_report(
            &curve,
            &bounds,
            self.config.checks.slope_tolerance,
            self.config.checks.noise_multiplier,
            one_sided,
        );
        let csv = errors_csv(&curve, &rate);
        let cross_check = match &self.config.cross_check {
            Some(spec) => Some(self.cross_check(spec, &reference, &bounds)?),
            None => None,
        };
        let holder = if self.config.checks.holder {
            let h = *self.steps.last().expect("validated non-empty");
            let it = chernoff_iterate(&self.op, &self.payoff, t, h, true)?;
            let params = self.holder_parameters()?;
            Some(holder_check(
                it.trajectory.as_ref().expect("recorded"),
                h,
                params.alpha,
                params.constant,
                &self.kappa,
                &self.region,
                self.config.checks.holder_tolerance,
                self.config.checks.holder_samples,
            )?)
        } else {
            None
        };
        let side_fail = cross_check.as_ref().is_some_and(|c| !c.pass) || holder.as_ref().is_some_and(|h| !h.pass);
        let verdict = if side_fail { Verdict::Fail } else { rate.verdict };
        let report = RunReport {
            name: self.config.name.clone(),
            operator: self.op.name().to_string(),
            reference: self.config.reference.name().to_string(),
            t,
            radius: self.radius,
            margin: self.margin,
            rate,
            cross_check,
            holder,
            verdict,
        };
        Ok((report, csv, bounds))
    }

    /// Structural and lemma suites at the configured step.
    pub fn check_invariants(&self) -> Result<PropertyReport> {
        let h = self.config.checks.property_step.unwrap_or(self.steps[0]);
        let step = self.op.prepare(&self.grid, h)?;
        let identity = self.op.prepare(&self.grid, 0.0)?;
        let pairs = self.config.checks.property_pairs;
        let seed = self.config.seed;
        let structural = structural_suite(step.as_ref(), identity.as_ref(), &self.grid, pairs, seed)?;
        // ω = 0 and I(h)0 = 0, so ‖I(h)f‖ ≤ ‖f‖.
        let lemmas = lemma_suite(step.as_ref(), &self.grid, 1.0, pairs, seed)?;
        Ok(structural.merge(lemmas))
    }
}

/// Runs the experiment in `config_text` and writes the four artifacts to
/// `out`.
pub fn run_to_dir(config_text: &str, out: &Path) -> Result<RunReport> {
    let exp = Experiment::from_toml(config_text)?;
    let (report, csv, bounds) = exp.run()?;
    fs::create_dir_all(out)?;
    fs::write(out.join(ERRORS_FILE), csv)?;
    fs::write(out.join(RATE_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(out.join(BOUND_FILE), serde_json::to_string_pretty(&bounds)? + "\n")?;
    let manifest = Manifest {
        name: exp.config.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: exp.config.seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        kernel_table_sha256: sha256_hex(exp.kernel.table_csv().as_bytes()),
        artifacts: [ERRORS_FILE, RATE_FILE, BOUND_FILE].iter().map(|s| s.to_string()).collect(),
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "small"
[grid]
lower = [-6.0]
upper = [6.0]
counts = [481]
[operator]
kind = "nisio"
controls = [{ sigma = 0.5 }, { sigma = 1.0 }]
smooth_coefficients = true
[payoff]
kind = "capped_abs"
cap = 1.0
[run]
t = 0.5
levels = [2, 3, 4]
[reference]
kind = "oracle"
level = 7
[checks]
property_pairs = 20
"#;

    #[test]
    fn parses_and_runs_small_config() {
        let exp = Experiment::from_toml(SMALL).unwrap();
        assert_eq!(exp.steps, vec![0.25, 0.125, 0.0625]);
        assert_eq!(exp.radius, 1.0);
        let (report, csv, bounds) = exp.run().unwrap();
        assert_eq!(bounds.len(), 1);
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(report.rate.one_sided, Some(true));
        assert!(exp.check_invariants().unwrap().pass);
    }

    #[test]
    fn lists_every_offending_field() {
        let bad = r#"
[grid]
lower = [-1.0]
upper = [1.0]
counts = [1]
[operator]
kind = "nisio"
controls = []
[payoff]
kind = "square"
[run]
t = -1.0
levels = [3, 4]
[reference]
kind = "maximally_distributed"
[checks]
slope_tolerance = -1.0
bogus = 1
[extra]
"#;
        let Err(Error::Config(fields)) = ExperimentConfig::from_toml(bad) else {
            panic!("expected a config error");
        };
        let text = fields.join("\n");
        for key in ["checks", "extra: unknown field"] {
            assert!(text.contains(key), "{text}");
        }
        let bad = bad.replace("bogus = 1\n", "");
        let Err(Error::Config(fields)) = ExperimentConfig::from_toml(&bad) else {
            panic!("expected a config error");
        };
        let text = fields.join("\n");
        for key in ["grid:", "run.t", "run.steps", "run.radius", "reference.kind", "checks.slope_tolerance"] {
            assert!(text.contains(key), "missing {key} in {text}");
        }
        assert!(matches!(ExperimentConfig::from_toml("[grid"), Err(Error::Config(_))));
        let Err(Error::Config(fields)) = ExperimentConfig::from_toml("") else {
            panic!("expected a config error");
        };
        assert_eq!(fields.len(), 5);
    }

    #[test]
    fn artifacts_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_to_dir(SMALL, a.path()).unwrap();
        run_to_dir(SMALL, b.path()).unwrap();
        for name in [ERRORS_FILE, RATE_FILE, BOUND_FILE, MANIFEST_FILE] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["config_sha256"], sha256_hex(SMALL.as_bytes()));
    }
}
