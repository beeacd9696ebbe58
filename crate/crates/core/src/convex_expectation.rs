//! Convex expectations given by finitely many scenarios,
//! E[X] = maxᵢ (Eᵢ[X] − αᵢ), and the one-step operators built from them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{Grid, GridFunction, MAX_DIM};
use crate::quadrature::GaussHermite;
use crate::stencil::{gaussian_nodes, cholesky, Branch, SplitCorrection, Stencil, StencilStep};

/// Default Gauss–Hermite node count per axis.
pub const DEFAULT_NODES: usize = 32;

/// A scalar or a vector in the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coords {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Coords {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Coords::Scalar(v) => vec![*v],
            Coords::Vector(v) => v.clone(),
        }
    }
}

/// A scalar (1D standard deviation) or a square matrix σ with covariance σσᵀ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spread {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub at: Coords,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distribution {
    PointMass { mean: Coords },
    Gaussian { mean: Coords, sigma: Spread },
    Discrete { atoms: Vec<Atom> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub distribution: Distribution,
    #[serde(default)]
    pub penalty: f64,
}

/// Normalized internal form of a scenario.
#[derive(Debug, Clone)]
enum Law {
    Points(Vec<([f64; MAX_DIM], f64)>),
    Gaussian {
        mean: [f64; MAX_DIM],
        sigma: [[f64; MAX_DIM]; MAX_DIM],
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ScenarioFile {
    List(Vec<Scenario>),
    Object {
        scenarios: Vec<Scenario>,
        #[serde(default)]
        quadrature_nodes: Option<usize>,
    },
}

/// E[X] = maxᵢ (Eᵢ[X] − αᵢ) over a finite scenario list with min αᵢ = 0.
#[derive(Debug, Clone)]
pub struct ScenarioConvexExpectation {
    dim: usize,
    scenarios: Vec<Scenario>,
    laws: Vec<Law>,
    rule: GaussHermite,
    correction: SplitCorrection,
}

fn fixed(v: &[f64], dim: usize, what: &str) -> Result<[f64; MAX_DIM]> {
    if v.len() != dim {
        return domain(format!("{what} has {} entries, expected {dim}", v.len()));
    }
    let mut out = [0.0; MAX_DIM];
    out[..dim].copy_from_slice(v);
    if out.iter().any(|x| !x.is_finite()) {
        return domain(format!("{what} is not finite"));
    }
    Ok(out)
}

impl ScenarioConvexExpectation {
    pub fn new(scenarios: Vec<Scenario>) -> Result<Self> {
        Self::with_nodes(scenarios, DEFAULT_NODES)
    }

    pub fn with_nodes(scenarios: Vec<Scenario>, nodes: usize) -> Result<Self> {
        if scenarios.is_empty() {
            return domain("at least one scenario is required");
        }
        if !(1..=256).contains(&nodes) {
            return domain(format!("quadrature node count {nodes} out of range"));
        }
        let dim = match &scenarios[0].distribution {
            Distribution::PointMass { mean } | Distribution::Gaussian { mean, .. } => mean.to_vec().len(),
            Distribution::Discrete { atoms } => atoms.first().map_or(0, |a| a.at.to_vec().len()),
        };
        if dim == 0 || dim > MAX_DIM {
            return domain(format!("scenario dimension must be 1 or 2, got {dim}"));
        }
        let mut laws = Vec::with_capacity(scenarios.len());
        let mut min_penalty = f64::INFINITY;
        for (i, s) in scenarios.iter().enumerate() {
            if !(s.penalty.is_finite() && s.penalty >= 0.0) {
                return domain(format!("scenario {i}: penalty must be finite and ≥ 0"));
            }
            min_penalty = min_penalty.min(s.penalty);
            let law = match &s.distribution {
                Distribution::PointMass { mean } => {
                    Law::Points(vec![(fixed(&mean.to_vec(), dim, "point mass")?, 1.0)])
                }
                Distribution::Gaussian { mean, sigma } => {
                    let mean = fixed(&mean.to_vec(), dim, "gaussian mean")?;
                    let sigma = match sigma {
                        Spread::Scalar(v) if dim == 1 => [[*v, 0.0], [0.0, 0.0]],
                        Spread::Scalar(v) => [[*v, 0.0], [0.0, *v]],
                        Spread::Matrix(m) => {
                            if m.len() != dim || m.iter().any(|r| r.len() != dim) {
                                return domain(format!("scenario {i}: sigma must be {dim}x{dim}"));
                            }
                            let mut out = [[0.0; MAX_DIM]; MAX_DIM];
                            for a in 0..dim {
                                for b in 0..dim {
                                    out[a][b] = m[a][b];
                                }
                            }
                            out
                        }
                    };
                    if sigma.iter().flatten().any(|v| !v.is_finite()) {
                        return domain(format!("scenario {i}: sigma is not finite"));
                    }
                    Law::Gaussian { mean, sigma }
                }
                Distribution::Discrete { atoms } => {
                    if atoms.is_empty() {
                        return domain(format!("scenario {i}: no atoms"));
                    }
                    let mut pts = Vec::with_capacity(atoms.len());
                    let mut total = 0.0;
                    for a in atoms {
                        if !(a.prob.is_finite() && a.prob >= 0.0) {
                            return domain(format!("scenario {i}: atom probability {} invalid", a.prob));
                        }
                        total += a.prob;
                        pts.push((fixed(&a.at.to_vec(), dim, "atom")?, a.prob));
                    }
                    if (total - 1.0).abs() > 1e-12 {
                        return domain(format!("scenario {i}: atom probabilities sum to {total}"));
                    }
                    Law::Points(pts)
                }
            };
            laws.push(law);
        }
        if min_penalty != 0.0 {
            return domain(format!(
                "the smallest penalty must be 0 so that E[0] = 0, got {min_penalty}"
            ));
        }
        Ok(Self {
            dim,
            scenarios,
            laws,
            rule: GaussHermite::new(nodes),
            correction: SplitCorrection::default(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        match serde_json::from_str::<ScenarioFile>(text)? {
            ScenarioFile::List(s) => Self::new(s),
            ScenarioFile::Object {
                scenarios,
                quadrature_nodes,
            } => Self::with_nodes(scenarios, quadrature_nodes.unwrap_or(DEFAULT_NODES)),
        }
    }

    pub fn with_correction(mut self, correction: SplitCorrection) -> Self {
        self.correction = correction;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.rule.len()
    }

    pub fn is_sublinear(&self) -> bool {
        self.scenarios.iter().all(|s| s.penalty == 0.0)
    }

    pub fn penalty(&self, i: usize) -> f64 {
        self.scenarios[i].penalty
    }

    /// Eᵢ[payoff(ξ)] under scenario i.
    pub fn scenario_expectation(&self, i: usize, payoff: &dyn Fn(&[f64]) -> f64) -> f64 {
        let d = self.dim;
        match &self.laws[i] {
            Law::Points(pts) => pts.iter().map(|(x, p)| p * payoff(&x[..d])).sum(),
            Law::Gaussian { mean, sigma } => gaussian_nodes(d, *mean, *sigma, &self.rule)
                .iter()
                .map(|(x, w)| w * payoff(&x[..d]))
                .sum(),
        }
    }

    /// E[payoff(ξ)] = maxᵢ (Eᵢ[payoff(ξ)] − αᵢ).
    pub fn cexp_eval(&self, payoff: &dyn Fn(&[f64]) -> f64) -> f64 {
        (0..self.laws.len())
            .map(|i| self.scenario_expectation(i, payoff) - self.scenarios[i].penalty)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self, i: usize) -> [f64; MAX_DIM] {
        match &self.laws[i] {
            Law::Points(pts) => {
                let mut m = [0.0; MAX_DIM];
                for (x, p) in pts {
                    for a in 0..MAX_DIM {
                        m[a] += p * x[a];
                    }
                }
                m
            }
            Law::Gaussian { mean, .. } => *mean,
        }
    }

    /// Eᵢ[ξξᵀ].
    pub fn second_moment(&self, i: usize) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut c = [[0.0; MAX_DIM]; MAX_DIM];
        match &self.laws[i] {
            Law::Points(pts) => {
                for (x, p) in pts {
                    for a in 0..MAX_DIM {
                        for b in 0..MAX_DIM {
                            c[a][b] += p * x[a] * x[b];
                        }
                    }
                }
            }
            Law::Gaussian { mean, sigma } => {
                for a in 0..MAX_DIM {
                    for b in 0..MAX_DIM {
                        let cov: f64 = (0..MAX_DIM).map(|k| sigma[a][k] * sigma[b][k]).sum();
                        c[a][b] = cov + mean[a] * mean[b];
                    }
                }
            }
        }
        c
    }

    /// max over scenarios of the largest standard deviation along an axis.
    pub fn sigma_max(&self) -> f64 {
        (0..self.laws.len())
            .flat_map(|i| {
                let (m, c) = (self.mean(i), self.second_moment(i));
                (0..self.dim).map(move |a| (c[a][a] - m[a] * m[a]).max(0.0).sqrt())
            })
            .fold(0.0, f64::max)
    }

    /// max over scenarios of |Eᵢ[ξ]|.
    pub fn drift_max(&self) -> f64 {
        (0..self.laws.len())
            .map(|i| self.mean(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn has_zero_means(&self) -> bool {
        (0..self.laws.len()).all(|i| self.mean(i).iter().all(|m| m.abs() < 1e-14))
    }

    /// Branches for x ↦ maxᵢ (Eᵢ f(x + scale·ξ) − penalty_scale·αᵢ).
    fn step(&self, grid: &Arc<Grid>, scale: f64, penalty_scale: f64) -> Result<StencilStep> {
        if grid.dim() != self.dim {
            return domain("grid and scenario dimensions differ");
        }
        let mut branches = Vec::with_capacity(self.laws.len());
        for (law, s) in self.laws.iter().zip(&self.scenarios) {
            let stencil = match law {
                Law::Points(pts) => {
                    let scaled: Vec<_> = pts
                        .iter()
                        .map(|(x, p)| ([scale * x[0], scale * x[1]], *p))
                        .collect();
                    Stencil::from_points(grid, &scaled)?
                }
                Law::Gaussian { mean, sigma } => {
                    let mut cov = [[0.0; MAX_DIM]; MAX_DIM];
                    for a in 0..MAX_DIM {
                        for b in 0..MAX_DIM {
                            cov[a][b] = scale
                                * scale
                                * (0..MAX_DIM).map(|k| sigma[a][k] * sigma[b][k]).sum::<f64>();
                        }
                    }
                    let m = [scale * mean[0], scale * mean[1]];
                    Stencil::gaussian_cov(grid, m, cov, &self.rule, self.correction)?
                }
            };
            branches.push(Branch {
                stencil,
                penalty: penalty_scale * s.penalty,
            });
        }
        StencilStep::new(grid.clone(), branches)
    }

    /// Prepared law-of-large-numbers step for a fixed t > 0.
    pub fn lln_operator(&self, grid: &Arc<Grid>, t: f64) -> Result<StencilStep> {
        check_time(t)?;
        if t == 0.0 {
            return StencilStep::identity(grid.clone());
        }
        self.step(grid, t, t)
    }

    /// Prepared central-limit step for a fixed t > 0. Needs scenario-wise
    /// zero means.
    pub fn clt_operator(&self, grid: &Arc<Grid>, t: f64) -> Result<StencilStep> {
        check_time(t)?;
        if !self.has_zero_means() {
            return domain("the central-limit step needs every scenario to have zero mean");
        }
        if t == 0.0 {
            return StencilStep::identity(grid.clone());
        }
        self.step(grid, t.sqrt(), t)
    }

    /// (I(t)f)(x) = maxᵢ (Eᵢ f(x + tξ) − tαᵢ).
    pub fn lln_step(&self, f: &GridFunction, t: f64) -> Result<GridFunction> {
        if t == 0.0 {
            return Ok(f.clone());
        }
        self.lln_operator(f.grid(), t)?.apply(f)
    }

    /// (I(t)f)(x) = maxᵢ (Eᵢ f(x + √t ξ) − tαᵢ).
    pub fn clt_step(&self, f: &GridFunction, t: f64) -> Result<GridFunction> {
        if t == 0.0 {
            check_time(t)?;
            return Ok(f.clone());
        }
        self.clt_operator(f.grid(), t)?.apply(f)
    }

    /// z ↦ E[z·ξ] = maxᵢ (z·mᵢ − αᵢ).
    pub fn linear_functional(&self, z: &[f64]) -> f64 {
        (0..self.laws.len())
            .map(|i| {
                let m = self.mean(i);
                (0..self.dim).map(|a| z[a] * m[a]).sum::<f64>() - self.scenarios[i].penalty
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn z_radius(&self) -> f64 {
        let mut r = 0.0_f64;
        for i in 0..self.laws.len() {
            let m = self.mean(i);
            r = r.max((m[0] * m[0] + m[1] * m[1]).sqrt());
        }
        4.0 * r + 4.0
    }

    fn in_mean_hull(&self, y: &[f64], slack: f64) -> bool {
        let dirs: Vec<[f64; 2]> = if self.dim == 1 {
            vec![[1.0, 0.0], [-1.0, 0.0]]
        } else {
            (0..720)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::PI / 360.0;
                    [a.cos(), a.sin()]
                })
                .collect()
        };
        dirs.iter().all(|u| {
            let yu: f64 = (0..self.dim).map(|a| y[a] * u[a]).sum();
            let best = (0..self.laws.len())
                .map(|i| {
                    let m = self.mean(i);
                    (0..self.dim).map(|a| m[a] * u[a]).sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            yu <= best + slack
        })
    }

    /// φ(y) = sup_z (y·z − E[z·ξ]) by a discrete transform over a symmetric
    /// z-grid of radius 4·max|mᵢ| + 4 with 4096 points (64² in 2D), refined
    /// locally in 1D. `None` marks y outside the certified domain, where φ
    /// is +∞.
    pub fn conjugate(&self, ys: &[[f64; MAX_DIM]]) -> Result<Vec<Option<f64>>> {
        let r = self.z_radius();
        if self.dim == 1 {
            let n = 4096;
            let dz = 2.0 * r / (n - 1) as f64;
            let zs: Vec<f64> = (0..n).map(|j| -r + j as f64 * dz).collect();
            let es: Vec<f64> = zs.iter().map(|&z| self.linear_functional(&[z])).collect();
            ys.iter()
                .map(|y| {
                    let psi = |j: usize| y[0] * zs[j] - es[j];
                    let mut best = 0;
                    for j in 1..n {
                        if psi(j) > psi(best) {
                            best = j;
                        }
                    }
                    let tol = 1e-12 * (1.0 + y[0].abs() * r);
                    let rising_out = (best == n - 1 && psi(n - 1) - psi(n - 2) > tol)
                        || (best == 0 && psi(0) - psi(1) > tol);
                    if rising_out {
                        return if self.in_mean_hull(&y[..1], -1e-9) {
                            Err(Error::Domain(format!(
                                "z-grid of radius {r} is too narrow: the conjugate at y = {} is not attained",
                                y[0]
                            )))
                        } else {
                            Ok(None)
                        };
                    }
                    // ψ is concave: ternary search between the neighbours.
                    let f = |z: f64| y[0] * z - self.linear_functional(&[z]);
                    let (mut a, mut b) = (zs[best.saturating_sub(1)], zs[(best + 1).min(n - 1)]);
                    for _ in 0..200 {
                        let m1 = a + (b - a) / 3.0;
                        let m2 = b - (b - a) / 3.0;
                        if f(m1) < f(m2) {
                            a = m1;
                        } else {
                            b = m2;
                        }
                    }
                    Ok(Some(f(0.5 * (a + b)).max(psi(best))))
                })
                .collect()
        } else {
            let n = 64;
            let dz = 2.0 * r / (n - 1) as f64;
            let zs: Vec<[f64; 2]> = (0..n * n)
                .map(|k| [-r + (k / n) as f64 * dz, -r + (k % n) as f64 * dz])
                .collect();
            let es: Vec<f64> = zs.iter().map(|z| self.linear_functional(z)).collect();
            ys.iter()
                .map(|y| {
                    let mut best = 0;
                    let mut bv = f64::NEG_INFINITY;
                    for (k, z) in zs.iter().enumerate() {
                        let v = y[0] * z[0] + y[1] * z[1] - es[k];
                        if v > bv {
                            bv = v;
                            best = k;
                        }
                    }
                    let (i0, i1) = (best / n, best % n);
                    let on_edge = i0 == 0 || i0 == n - 1 || i1 == 0 || i1 == n - 1;
                    if on_edge && !self.in_mean_hull(y, 1e-9) {
                        return Ok(None);
                    }
                    if on_edge && self.in_mean_hull(y, -1e-6) {
                        return Err(Error::Domain(format!(
                            "z-grid of radius {r} is too narrow at y = {y:?}"
                        )));
                    }
                    Ok(Some(bv))
                })
                .collect()
        }
    }

    /// x ↦ sup_y (f(x + y) − tφ(y/t)) over grid offsets y; at t = 1 this is
    /// Ē[f(x + ζ)] for the maximally distributed ζ.
    pub fn maximally_distributed_limit(&self, f: &GridFunction, t: f64) -> Result<GridFunction> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(f.clone());
        }
        let grid = f.grid();
        if grid.dim() != self.dim {
            return domain("grid and scenario dimensions differ");
        }
        let h = grid.spacing();
        let d = grid.dim();
        let mut reach = [0isize; MAX_DIM];
        let mut hull_lo = [f64::INFINITY; MAX_DIM];
        let mut hull_hi = [f64::NEG_INFINITY; MAX_DIM];
        for i in 0..self.laws.len() {
            let m = self.mean(i);
            for a in 0..d {
                hull_lo[a] = hull_lo[a].min(m[a]);
                hull_hi[a] = hull_hi[a].max(m[a]);
            }
        }
        for a in 0..d {
            let ext = t * hull_lo[a].abs().max(hull_hi[a].abs());
            reach[a] = (ext / h[a] + 1e-9).floor() as isize;
        }
        let mut offsets = Vec::new();
        let mut ys = Vec::new();
        let r1 = if d == 2 { reach[1] } else { 0 };
        for j0 in -reach[0]..=reach[0] {
            for j1 in -r1..=r1 {
                offsets.push([j0, j1]);
                ys.push([j0 as f64 * h[0] / t, j1 as f64 * h.get(1).copied().unwrap_or(0.0) / t]);
            }
        }
        let phi = self.conjugate(&ys)?;
        let finite: Vec<([isize; MAX_DIM], f64)> = offsets
            .iter()
            .zip(&phi)
            .filter_map(|(o, p)| p.map(|v| (*o, t * v)))
            .collect();
        if finite.is_empty() {
            return domain("no grid offset lies in the domain of the conjugate");
        }
        let mut out = Vec::with_capacity(grid.len());
        for flat in 0..grid.len() {
            let idx = grid.multi_index(flat);
            let mut best = f64::NEG_INFINITY;
            for (o, p) in &finite {
                let v = f.at_clamped([idx[0] as isize + o[0], idx[1] as isize + o[1]]) - p;
                best = best.max(v);
            }
            out.push(best);
        }
        GridFunction::new(grid.clone(), out)
    }

    /// G(a) = E[½ ξᵀaξ] = maxᵢ (½ tr(a Eᵢ[ξξᵀ]) − αᵢ).
    pub fn g_function(&self, a: [[f64; MAX_DIM]; MAX_DIM]) -> f64 {
        (0..self.laws.len())
            .map(|i| {
                let m = self.second_moment(i);
                let mut tr = 0.0;
                for p in 0..self.dim {
                    for q in 0..self.dim {
                        tr += a[p][q] * m[q][p];
                    }
                }
                0.5 * tr - self.scenarios[i].penalty
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest p ∈ {1, 2, 3} with a finite a such that
    /// E[λX] ≤ aλ^p E[X] for X = c₁|ξ|² + c₂|ξ|³ on a test grid of λ ≥ 1 and
    /// c₁, c₂ ≥ 0.
    pub fn growth_certificate(&self) -> Result<GrowthCertificate> {
        let lambdas = [1.0, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0, 30.0, 100.0, 1e3, 1e4];
        let cs = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0];
        let mut samples = Vec::new();
        for &c1 in &cs {
            for &c2 in &cs {
                if c1 == 0.0 && c2 == 0.0 {
                    continue;
                }
                let x = |xi: &[f64]| {
                    let r2: f64 = xi.iter().map(|v| v * v).sum();
                    c1 * r2 + c2 * r2 * r2.sqrt()
                };
                let base = self.cexp_eval(&x);
                for &l in &lambdas {
                    let scaled = self.cexp_eval(&|xi: &[f64]| l * x(xi));
                    samples.push((l, base, scaled));
                }
            }
        }
        'p: for p in 1..=3 {
            let mut a = 1.0_f64;
            for &(l, base, scaled) in &samples {
                if base <= 0.0 {
                    if scaled > 1e-12 {
                        continue 'p;
                    }
                    continue;
                }
                a = a.max(scaled / (l.powi(p) * base));
            }
            return Ok(GrowthCertificate { a, p: p as f64 });
        }
        Err(Error::Certificate(
            "no p ≤ 3 bounds the growth of the expectation".into(),
        ))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return domain(format!("time must be finite and ≥ 0, got {t}"));
    }
    Ok(())
}

/// Growth parameters with E[λX] ≤ aλ^p E[X].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthCertificate {
    pub a: f64,
    pub p: f64,
}

/// Validates that σ is usable as a Gaussian factor (σσᵀ is always PSD, this
/// only guards against malformed input).
pub fn check_sigma(sigma: [[f64; MAX_DIM]; MAX_DIM]) -> Result<()> {
    let mut c = [[0.0; MAX_DIM]; MAX_DIM];
    for a in 0..MAX_DIM {
        for b in 0..MAX_DIM {
            c[a][b] = (0..MAX_DIM).map(|k| sigma[a][k] * sigma[b][k]).sum();
        }
    }
    cholesky(c).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(s: f64, penalty: f64) -> Scenario {
        Scenario {
            distribution: Distribution::Gaussian {
                mean: Coords::Scalar(0.0),
                sigma: Spread::Scalar(s),
            },
            penalty,
        }
    }

    fn point(m: f64, penalty: f64) -> Scenario {
        Scenario {
            distribution: Distribution::PointMass {
                mean: Coords::Scalar(m),
            },
            penalty,
        }
    }

    #[test]
    fn sublinear_variance_is_max() {
        let e = ScenarioConvexExpectation::new(vec![gaussian(0.5, 0.0), gaussian(1.0, 0.0)]).unwrap();
        assert!((e.cexp_eval(&|x| x[0] * x[0]) - 1.0).abs() < 1e-12);
        assert!(e.is_sublinear());
    }

    #[test]
    fn penalized_point_masses() {
        let e = ScenarioConvexExpectation::new(vec![point(1.0, 0.0), point(-1.0, 0.5)]).unwrap();
        assert_eq!(e.cexp_eval(&|x| x[0]), 1.0);
        assert!(!e.is_sublinear());
    }

    #[test]
    fn requires_a_free_scenario() {
        assert!(ScenarioConvexExpectation::new(vec![point(1.0, 0.1)]).is_err());
        assert!(ScenarioConvexExpectation::new(vec![point(1.0, -0.1), point(0.0, 0.0)]).is_err());
    }

    #[test]
    fn lln_step_examples() {
        let g = Arc::new(Grid::line(-4.0, 4.0, 801).unwrap());
        let f = GridFunction::from_fn(g.clone(), |x| x[0].abs()).unwrap();
        let e = ScenarioConvexExpectation::new(vec![point(1.0, 0.0), point(-1.0, 0.0)]).unwrap();
        let out = e.lln_step(&f, 0.1).unwrap();
        assert!((out.values()[400] - 0.1).abs() < 1e-14);
        assert_eq!(e.lln_step(&f, 0.0).unwrap(), f);
        assert!(e.lln_step(&f, -0.1).is_err());
    }

    #[test]
    fn clt_needs_zero_means() {
        let g = Arc::new(Grid::line(-4.0, 4.0, 81).unwrap());
        let f = GridFunction::constant(g, 1.0).unwrap();
        let e = ScenarioConvexExpectation::new(vec![point(1.0, 0.0)]).unwrap();
        assert!(e.clt_step(&f, 0.1).is_err());
    }

    #[test]
    fn g_function_examples() {
        let e = ScenarioConvexExpectation::new(vec![gaussian(0.5, 0.0), gaussian(1.0, 0.0)]).unwrap();
        assert!((e.g_function([[2.0, 0.0], [0.0, 0.0]]) - 1.0).abs() < 1e-14);
        let pm = ScenarioConvexExpectation::new(vec![Scenario {
            distribution: Distribution::Discrete {
                atoms: vec![
                    Atom { at: Coords::Scalar(1.0), prob: 0.5 },
                    Atom { at: Coords::Scalar(-1.0), prob: 0.5 },
                ],
            },
            penalty: 0.0,
        }])
        .unwrap();
        assert!((pm.g_function([[1.0, 0.0], [0.0, 0.0]]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conjugate_of_penalized_pair() {
        let e = ScenarioConvexExpectation::new(vec![point(0.0, 0.0), point(1.0, 1.0)]).unwrap();
        let ys: Vec<[f64; 2]> = [-0.5, 0.0, 0.3, 0.75, 1.0, 1.5].iter().map(|&y| [y, 0.0]).collect();
        let phi = e.conjugate(&ys).unwrap();
        assert_eq!(phi[0], None);
        assert_eq!(phi[5], None);
        for (y, p) in ys[1..5].iter().zip(&phi[1..5]) {
            assert!((p.unwrap() - y[0]).abs() < 1e-12, "y={} φ={:?}", y[0], p);
        }
    }

    #[test]
    fn narrow_z_grid_is_reported() {
        // Kink of E[zξ] at z = 50, far outside radius 8.
        let e = ScenarioConvexExpectation::new(vec![point(-1.0, 0.0), point(1.0, 100.0)]).unwrap();
        assert!(e.conjugate(&[[0.5, 0.0]]).is_err());
    }

    #[test]
    fn growth_certificates() {
        let sub = ScenarioConvexExpectation::new(vec![gaussian(0.5, 0.0), gaussian(1.0, 0.0)]).unwrap();
        let c = sub.growth_certificate().unwrap();
        assert_eq!(c.p, 1.0);
        assert!((c.a - 1.0).abs() < 1e-9);
        let lin = ScenarioConvexExpectation::new(vec![gaussian(1.0, 0.0)]).unwrap();
        let c = lin.growth_certificate().unwrap();
        assert_eq!(c.p, 1.0);
        assert!((c.a - 1.0).abs() < 1e-12);
        let pen = ScenarioConvexExpectation::new(vec![gaussian(0.5, 0.0), gaussian(1.0, 0.3)]).unwrap();
        assert!(pen.growth_certificate().unwrap().p >= 1.0);
        // A free point mass at zero next to a penalized spread law: no bound.
        let bad = ScenarioConvexExpectation::new(vec![point(0.0, 0.0), gaussian(1.0, 0.3)]).unwrap();
        assert!(bad.growth_certificate().is_err());
    }

    #[test]
    fn scenario_file_forms() {
        let list = r#"[{"type":"gaussian","mean":0.0,"sigma":0.5},
                       {"type":"point_mass","mean":[1.0],"penalty":0.5}]"#;
        let e = ScenarioConvexExpectation::from_json(list).unwrap();
        assert_eq!(e.scenarios().len(), 2);
        let obj = r#"{"scenarios":[{"type":"discrete","atoms":[{"at":1.0,"prob":0.5},{"at":-1.0,"prob":0.5}]}],
                      "quadrature_nodes":16}"#;
        let e = ScenarioConvexExpectation::from_json(obj).unwrap();
        assert_eq!(e.quadrature_nodes(), 16);
    }
}
