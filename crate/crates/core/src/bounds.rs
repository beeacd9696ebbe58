//! Explicit convergence exponents and error constants.
//!
//! Every constant is a sum of named addends. The addend formulas live in
//! `data/bound_terms.toml` and are copied verbatim into each report.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::convex_expectation::{GrowthCertificate, ScenarioConvexExpectation};
use crate::error::{domain, Error, Result};
use crate::mollifier::MollifierKernel;
use crate::nisio::GeneratorBounds;

const TERMS: &str = include_str!("../data/bound_terms.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    fn key(self) -> &'static str {
        match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct TermRow {
    pub family: String,
    pub side: String,
    pub name: String,
    pub formula: String,
}

#[derive(Deserialize)]
struct TermFile {
    term: Vec<TermRow>,
}

/// The transcription table.
pub fn term_table() -> &'static [TermRow] {
    static TABLE: OnceLock<Vec<TermRow>> = OnceLock::new();
    TABLE.get_or_init(|| {
        toml::from_str::<TermFile>(TERMS)
            .expect("bundled term table parses")
            .term
    })
}

/// The rows of one family and side, in table order.
pub fn terms_for(family: &str, side: Side) -> Vec<&'static TermRow> {
    term_table()
        .iter()
        .filter(|row| row.family == family && (row.side == "both" || row.side == side.key()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Addend {
    pub name: String,
    pub formula: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub family: String,
    pub side: Side,
    pub gamma: f64,
    pub constant: f64,
    /// Only points with h^γ ≤ eps0 are covered by the bound.
    pub eps0: f64,
    pub addends: Vec<Addend>,
}

impl BoundReport {
    /// c·h^γ.
    pub fn bound_at(&self, h: f64) -> f64 {
        self.constant * h.powf(self.gamma)
    }

    pub fn admissible(&self, h: f64) -> bool {
        h.powf(self.gamma) <= self.eps0
    }
}

/// Pairs computed addends with their table rows; the names must match the
/// table exactly and in order.
fn assemble(family: &str, side: Side, gamma: f64, eps0: f64, values: &[(&str, f64)]) -> Result<BoundReport> {
    let rows = terms_for(family, side);
    if rows.len() != values.len() || rows.iter().zip(values).any(|(row, (name, _))| row.name != *name) {
        return Err(Error::Domain(format!(
            "term table for {family}/{} does not match the computed addends",
            side.key()
        )));
    }
    let mut addends = Vec::with_capacity(values.len());
    for (row, &(name, value)) in rows.iter().zip(values) {
        if !(value.is_finite() && value >= 0.0) {
            return domain(format!("addend {name} of {family} is {value}"));
        }
        addends.push(Addend {
            name: name.to_string(),
            formula: row.formula.clone(),
            value,
        });
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return domain(format!("exponent {gamma} outside (0, 1]"));
    }
    let constant = addends.iter().map(|a| a.value).sum();
    Ok(BoundReport {
        family: family.to_string(),
        side,
        gamma,
        constant,
        eps0,
        addends,
    })
}

pub type RadiusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ThetaFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A consistency-error term θ(r, t)·h^{1+α}ε^{−β} and its exponents.
#[derive(Clone)]
pub struct ConsistencyTerm {
    pub alpha: f64,
    pub beta: f64,
    pub theta: ThetaFn,
}

impl fmt::Debug for ConsistencyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConsistencyTerm")
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .finish_non_exhaustive()
    }
}

/// Inputs of the generic rate theorem.
#[derive(Clone)]
pub struct RateParameters {
    pub p: f64,
    pub a1: RadiusFn,
    pub a2: f64,
    pub lower: Vec<ConsistencyTerm>,
    pub upper: Vec<ConsistencyTerm>,
    pub omega: f64,
    /// Translation constant L.
    pub shift: f64,
    pub eps0: f64,
    /// Largest step h₀.
    pub h0: f64,
    pub c_kappa: f64,
    pub kernel: MollifierKernel,
}

impl fmt::Debug for RateParameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateParameters")
            .field("p", &self.p)
            .field("a2", &self.a2)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("omega", &self.omega)
            .field("shift", &self.shift)
            .field("eps0", &self.eps0)
            .field("h0", &self.h0)
            .field("c_kappa", &self.c_kappa)
            .finish_non_exhaustive()
    }
}

impl RateParameters {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("p", self.p),
            ("a2", self.a2),
            ("omega", self.omega),
            ("shift", self.shift),
            ("c_kappa", self.c_kappa),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("{name} must be finite and ≥ 0, got {v}"));
            }
        }
        if !(self.eps0 > 0.0 && self.eps0 <= 1.0) {
            bad.push(format!("eps0 must lie in (0, 1], got {}", self.eps0));
        }
        if !(self.h0.is_finite() && self.h0 > 0.0) {
            bad.push(format!("h0 must be positive, got {}", self.h0));
        }
        for term in self.lower.iter().chain(&self.upper) {
            if !(term.alpha >= 0.0 && term.beta >= 0.0) {
                bad.push(format!("exponents must be ≥ 0, got ({}, {})", term.alpha, term.beta));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn side(&self, side: Side) -> &[ConsistencyTerm] {
        match side {
            Side::Lower => &self.lower,
            Side::Upper => &self.upper,
        }
    }
}

/// γ = min{1/(1+p), αᵢ/(1+βᵢ)}.
pub fn general_rate_exponent(params: &RateParameters, side: Side) -> Result<f64> {
    params.validate()?;
    let terms = params.side(side);
    if terms.is_empty() {
        return domain(format!("no consistency terms on the {} side", side.key()));
    }
    Ok(terms
        .iter()
        .map(|t| t.alpha / (1.0 + t.beta))
        .fold(1.0 / (1.0 + params.p), f64::min))
}

/// The constant c_{r,t} of the generic theorem for the given side.
pub fn general_rate_constant(params: &RateParameters, r: f64, t: f64, side: Side) -> Result<BoundReport> {
    if r < 1.0 {
        return domain(format!("the generic constant needs r ≥ 1, got {r}"));
    }
    check_time(t)?;
    let gamma = general_rate_exponent(params, side)?;
    let b01 = params.kernel.kernel_constant(0, 1)?;
    let w = params.omega;
    let eps1 = params.h0.powf((1.0 + params.p) * gamma);
    let growth = (params.a1)(r) + params.a2 * b01.powf(params.p) * r.powf(params.p);
    let translation = match side {
        Side::Lower => params.shift * r * (w * (t + eps1)).exp(),
        Side::Upper => params.shift * r * (w * eps1).exp(),
    };
    let theta: f64 = params.side(side).iter().map(|term| (term.theta)(r, t)).sum();
    assemble(
        "generic",
        side,
        gamma,
        params.eps0,
        &[
            ("propagation", (w * (t + params.h0)).exp() * (2.0 * r + growth)),
            (
                "mollification",
                (w * (t + eps1)).exp() * (1.0 + (w * params.h0).exp()) * (3.0 * r + growth),
            ),
            ("translation", (w * t).exp() * translation * t),
            ("consistency", (w * t).exp() * theta * t),
        ],
    )
}

/// Time-regularity exponent α and constant c_{r,T}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderParameters {
    pub alpha: f64,
    pub constant: f64,
}

/// α = 1/(1+p), c_{r,T} = e^{ωT}(2r + a₁(r) + a₂b₀₁ᵖrᵖ) with a₁(r) given as
/// its value.
pub fn holder_parameters(
    r: f64,
    horizon: f64,
    omega: f64,
    a1: f64,
    a2: f64,
    p: f64,
    kernel: &MollifierKernel,
) -> Result<HolderParameters> {
    if r < 1.0 {
        return domain(format!("time regularity needs r ≥ 1, got {r}"));
    }
    for (name, v) in [("T", horizon), ("ω", omega), ("a₁", a1), ("a₂", a2), ("p", p)] {
        if !(v.is_finite() && v >= 0.0) {
            return domain(format!("{name} must be finite and ≥ 0, got {v}"));
        }
    }
    let b01 = kernel.kernel_constant(0, 1)?;
    Ok(HolderParameters {
        alpha: 1.0 / (1.0 + p),
        constant: (omega * horizon).exp() * (2.0 * r + a1 + a2 * b01.powf(p) * r.powf(p)),
    })
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return domain(format!("time must be finite and ≥ 0, got {t}"));
    }
    Ok(())
}

fn check_radius(r: f64) -> Result<()> {
    if !(r.is_finite() && r >= 0.0) {
        return domain(format!("radius must be finite and ≥ 0, got {r}"));
    }
    Ok(())
}

/// Growth parameters of a Nisio family: a₁ = e^ω v₁ r, a₂ = e^ω v₂, p = 1
/// unless the family is first order.
fn nisio_growth(gb: &GeneratorBounds) -> (f64, f64) {
    let p = if gb.v[1] == 0.0 { 0.0 } else { 1.0 };
    (p, gb.omega.exp() * gb.v[1])
}

/// Time regularity of a Nisio family. r ≥ 1 is not needed here.
pub fn nisio_holder(gb: &GeneratorBounds, r: f64, horizon: f64, kernel: &MollifierKernel) -> Result<HolderParameters> {
    check_radius(r)?;
    check_time(horizon)?;
    let (p, a2) = nisio_growth(gb);
    let b01 = kernel.kernel_constant(0, 1)?;
    let e = gb.omega.exp();
    Ok(HolderParameters {
        alpha: 1.0 / (1.0 + p),
        constant: (gb.omega * horizon).exp() * (2.0 * r + e * gb.v[0] * r + a2 * b01.powf(p) * r.powf(p)),
    })
}

/// Upper error constant of a Nisio family. With `smooth` the
/// constant-coefficient variant (γ = 1/4) is used for second-order families.
pub fn nisio_bounds(
    gb: &GeneratorBounds,
    smooth: bool,
    r: f64,
    t: f64,
    h0: f64,
    c_kappa: f64,
    kernel: &MollifierKernel,
) -> Result<BoundReport> {
    check_radius(r)?;
    check_time(t)?;
    if !(h0.is_finite() && h0 > 0.0) {
        return domain(format!("h0 must be positive, got {h0}"));
    }
    if smooth && gb.v_tilde.is_none() {
        return domain("smooth constants requested but ṽ is not available");
    }
    let use_smooth = smooth && !gb.is_first_order();
    let (p, a2) = nisio_growth(gb);
    let gamma = if gb.is_first_order() {
        0.5
    } else if use_smooth {
        0.25
    } else {
        1.0 / 6.0
    };
    let b = |k, l| kernel.kernel_constant(k, l);
    let w = gb.omega;
    let e = w.exp();
    let eps1 = h0.powf((1.0 + p) * gamma);
    let growth = e * gb.v[0] * r + a2 * b(0, 1)?.powf(p) * r.powf(p);
    let holder = nisio_holder(gb, r, t, kernel)?;
    let time_derivative = (2.0 * c_kappa * holder.constant + (w * t).exp() * r)
        * (gb.v[0] * b(1, 1)? + gb.v[1] * b(1, 2)? + 0.5 * b(2, 0)?);
    let generator = if use_smooth {
        let vt = gb.v_tilde.expect("checked above");
        let mut s = 0.0;
        for (i, v) in vt.iter().enumerate() {
            s += v * b(0, i)?;
        }
        ("squared_generator", 0.5 * (w * (t + eps1)).exp() * r * s)
    } else {
        let mut s = 0.0;
        for (i, v) in gb.w.iter().enumerate() {
            s += v * b(0, i)?;
        }
        (
            "generator_lipschitz",
            holder.constant / (1.0 + holder.alpha) * (w * (t + eps1)).exp() * s,
        )
    };
    let et = (w * t).exp();
    assemble(
        if use_smooth { "nisio_smooth" } else { "nisio" },
        Side::Upper,
        gamma,
        1.0,
        &[
            ("propagation", (w * (t + h0)).exp() * (2.0 * r + growth)),
            ("mollification", (w * (t + eps1)).exp() * (1.0 + (w * h0).exp()) * (3.0 * r + growth)),
            ("translation", et * gb.shift * r * (w * eps1).exp() * t),
            (generator.0, et * generator.1 * t),
            ("time_derivative", et * time_derivative * t),
        ],
    )
}

fn norm(xi: &[f64]) -> f64 {
    xi.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// c_r = 2r + E[√d r|ξ|] of the law of large numbers.
pub fn lln_radius_constant(ce: &ScenarioConvexExpectation, r: f64) -> f64 {
    let sd = (ce.dim() as f64).sqrt();
    2.0 * r + ce.cexp_eval(&|xi| sd * r * norm(xi))
}

/// Constants of the law of large numbers; γ = 1/2.
pub fn lln_bounds(ce: &ScenarioConvexExpectation, r: f64, t: f64, side: Side, kernel: &MollifierKernel) -> Result<BoundReport> {
    if r < 1.0 {
        return domain(format!("the LLN constant needs r ≥ 1, got {r}"));
    }
    check_time(t)?;
    let d = ce.dim() as f64;
    let sd = d.sqrt();
    let (b01, b11, b20) = (kernel.kernel_constant(0, 1)?, kernel.kernel_constant(1, 1)?, kernel.kernel_constant(2, 0)?);
    let cr = lln_radius_constant(ce, r);
    let cr = match side {
        Side::Lower => cr,
        Side::Upper => 2.0 * cr,
    };
    let e = |g: &dyn Fn(f64) -> f64| ce.cexp_eval(&|xi| g(norm(xi)));
    assemble(
        "lln",
        side,
        0.5,
        1.0,
        &[
            ("skeleton", 8.0 * r),
            ("drift", 5.0 * e(&|x| sd * r * x) * t),
            ("first_order", e(&|x| 0.5 * d * r * b01 * x * x + sd * r * x) * t),
            ("mixed", e(&|x| (sd * (cr + r) * b11 + sd * r) * x) * t),
            ("time_curvature", 0.5 * (cr + r) * b20 * t),
        ],
    )
}

/// Time regularity of the LLN iterates: p = 0 and a₁(r) = E[√d r|ξ|].
pub fn lln_holder(ce: &ScenarioConvexExpectation, r: f64, horizon: f64, kernel: &MollifierKernel) -> Result<HolderParameters> {
    let sd = (ce.dim() as f64).sqrt();
    let a1 = ce.cexp_eval(&|xi| sd * r * norm(xi));
    holder_parameters(r, horizon, 0.0, a1, 0.0, 0.0, kernel)
}

/// a₂ = a·E[(d/2)|ξ|²] of the central limit theorem.
fn clt_growth(ce: &ScenarioConvexExpectation, cert: &GrowthCertificate) -> f64 {
    let d = ce.dim() as f64;
    cert.a * ce.cexp_eval(&|xi| 0.5 * d * norm(xi).powi(2))
}

/// Time regularity of the CLT iterates: a₁ = 0, a₂ = a·E[(d/2)|ξ|²].
pub fn clt_holder(
    ce: &ScenarioConvexExpectation,
    cert: &GrowthCertificate,
    r: f64,
    horizon: f64,
    kernel: &MollifierKernel,
) -> Result<HolderParameters> {
    holder_parameters(r, horizon, 0.0, 0.0, clt_growth(ce, cert), cert.p, kernel)
}

/// Whether E[ξ³] = E[−ξ³] = 0 for a one-dimensional expectation.
pub fn has_vanishing_third_moment(ce: &ScenarioConvexExpectation) -> bool {
    if ce.dim() != 1 {
        return false;
    }
    let scale = 1e-12 * (1.0 + ce.cexp_eval(&|xi| xi[0].abs().powi(3)));
    ce.cexp_eval(&|xi| xi[0].powi(3)).abs() <= scale && ce.cexp_eval(&|xi| -xi[0].powi(3)).abs() <= scale
}

/// Constants of the central limit theorem: γ = 1/(4+2p), or 1/(2+2p) with
/// `symmetric` in one dimension when third moments vanish.
pub fn clt_bounds(
    ce: &ScenarioConvexExpectation,
    cert: &GrowthCertificate,
    r: f64,
    t: f64,
    side: Side,
    symmetric: bool,
    kernel: &MollifierKernel,
) -> Result<BoundReport> {
    if r < 1.0 {
        return domain(format!("the CLT constant needs r ≥ 1, got {r}"));
    }
    check_time(t)?;
    if !ce.has_zero_means() {
        return domain("the CLT constant needs centred scenarios");
    }
    if symmetric && !has_vanishing_third_moment(ce) {
        return domain("the symmetric CLT rate needs d = 1 and vanishing third moments");
    }
    let b = |k, l| kernel.kernel_constant(k, l);
    let (a, p) = (cert.a, cert.p);
    let d = ce.dim() as f64;
    let b01p = b(0, 1)?.powf(p) * r.powf(p);
    let cr = 2.0 * r + clt_growth(ce, cert) * b01p;
    let cr = match side {
        Side::Lower => cr,
        Side::Upper => 2.0 * cr,
    };
    let e = |g: &dyn Fn(f64) -> f64| ce.cexp_eval(&|xi| g(norm(xi)));
    let (b01, b02, b03, b12, b20) = (b(0, 1)?, b(0, 2)?, b(0, 3)?, b(1, 2)?, b(2, 0)?);
    if symmetric {
        assemble(
            "clt_symmetric",
            side,
            1.0 / (2.0 + 2.0 * p),
            1.0,
            &[
                ("skeleton", 8.0 * r),
                ("growth", 3.0 * a * e(&|x| 0.5 * x * x) * b01p),
                ("second_order", 2.0 * a * e(&|x| 0.5 * r * b01 * x * x) * t),
                (
                    "taylor_remainder",
                    a * e(&|x| r * b03 * x.powi(4) / 24.0 + 0.5 * r * b01 * x * x),
                ),
                ("mixed", e(&|x| 0.5 * ((cr + r) * b12 + r * b01) * x * x)),
                ("time_curvature", 0.5 * (cr + r) * b20),
            ],
        )
    } else {
        assemble(
            "clt",
            side,
            1.0 / (4.0 + 2.0 * p),
            1.0,
            &[
                ("skeleton", 8.0 * r),
                ("growth", 3.0 * a * e(&|x| 0.5 * d * x * x) * b01p),
                ("second_order", 2.0 * a * e(&|x| 0.5 * d * r * b01 * x * x) * t),
                (
                    "taylor_remainder",
                    a * e(&|x| d.powf(1.5) * r * b02 * x.powi(3) / 6.0 + 0.5 * d * r * b01 * x * x) * t,
                ),
                ("mixed", a * e(&|x| 0.5 * d * ((cr + r) * b12 + r * b01) * x * x)),
                ("time_curvature", 0.5 * (cr + r) * b20),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_expectation::{Atom, Coords, Distribution, Scenario, Spread};
    use crate::nisio::{Control, NisioFamily};
    use proptest::prelude::*;

    fn kernel() -> MollifierKernel {
        MollifierKernel::new(1).unwrap()
    }

    fn params(p: f64, pairs: &[(f64, f64)]) -> RateParameters {
        let terms: Vec<ConsistencyTerm> = pairs
            .iter()
            .map(|&(alpha, beta)| ConsistencyTerm {
                alpha,
                beta,
                theta: Arc::new(|_, _| 0.0),
            })
            .collect();
        RateParameters {
            p,
            a1: Arc::new(|_| 0.0),
            a2: 0.0,
            lower: terms.clone(),
            upper: terms,
            omega: 0.0,
            shift: 0.0,
            eps0: 1.0,
            h0: 0.125,
            c_kappa: 1.0,
            kernel: kernel(),
        }
    }

    #[test]
    fn exponent_examples() {
        let e = |p, pairs: &[(f64, f64)]| general_rate_exponent(&params(p, pairs), Side::Lower).unwrap();
        assert_eq!(e(0.0, &[(1.0, 1.0)]), 0.5);
        assert!((e(1.0, &[(0.5, 2.0)]) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(e(1.0, &[(1.0, 3.0)]), 0.25);
        assert!(general_rate_exponent(&params(0.0, &[]), Side::Upper).is_err());
    }

    #[test]
    fn skeleton_constant_is_eight() {
        let rep = general_rate_constant(&params(0.0, &[(1.0, 1.0)]), 1.0, 1.0, Side::Lower).unwrap();
        assert!((rep.constant - 8.0).abs() < 1e-12);
        let later = general_rate_constant(&params(0.0, &[(1.0, 1.0)]), 1.0, 7.0, Side::Upper).unwrap();
        assert_eq!(later.constant, rep.constant);
        assert!(general_rate_constant(&params(0.0, &[(1.0, 1.0)]), 0.5, 1.0, Side::Lower).is_err());
    }

    #[test]
    fn holder_examples() {
        let k = kernel();
        assert_eq!(holder_parameters(1.0, 1.0, 0.0, 0.0, 0.0, 0.0, &k).unwrap().alpha, 1.0);
        assert_eq!(holder_parameters(1.0, 1.0, 0.0, 0.0, 1.0, 1.0, &k).unwrap().alpha, 0.5);
        assert_eq!(holder_parameters(3.0, 1.0, 0.0, 0.0, 0.0, 1.0, &k).unwrap().constant, 6.0);
    }

    #[test]
    fn every_table_family_is_reachable() {
        for row in term_table() {
            assert!(["lower", "upper", "both"].contains(&row.side.as_str()));
            assert!(!row.formula.is_empty());
        }
        for fam in ["generic", "nisio", "nisio_smooth", "lln", "clt", "clt_symmetric"] {
            assert!(!terms_for(fam, Side::Upper).is_empty());
        }
    }

    fn family(sigmas: &[f64], smooth: bool) -> NisioFamily {
        NisioFamily::new(
            sigmas
                .iter()
                .map(|&s| Control {
                    sigma: Spread::Scalar(s),
                    m: Coords::Scalar(0.0),
                })
                .collect(),
        )
        .unwrap()
        .assume_smooth_coefficients(smooth)
    }

    /// The Nisio constant recomputed by hand for ω = L = 0, d = 1.
    fn nisio_by_hand(v: [f64; 2], w: [f64; 3], r: f64, t: f64, ck: f64, k: &MollifierKernel) -> f64 {
        let b = |a, c| k.kernel_constant(a, c).unwrap();
        let p = if v[1] == 0.0 { 0.0 } else { 1.0 };
        let crt = 2.0 * r + v[0] * r + v[1] * b(0, 1).powf(p) * r.powf(p);
        let alpha = 1.0 / (1.0 + p);
        let core = v[0] * r + v[1] * b(0, 1).powf(p) * r.powf(p);
        (2.0 * r + core)
            + 2.0 * (3.0 * r + core)
            + (crt / (1.0 + alpha) * (w[0] * b(0, 0) + w[1] * b(0, 1) + w[2] * b(0, 2))
                + (2.0 * ck * crt + r) * (v[0] * b(1, 1) + v[1] * b(1, 2) + 0.5 * b(2, 0)))
                * t
    }

    #[test]
    fn nisio_matches_hand_transcription() {
        let k = kernel();
        let fam = family(&[0.5, 1.0], false);
        let gb = fam.generator_bounds();
        let rep = nisio_bounds(&gb, false, 1.0, 1.0, 0.125, 1.0, &k).unwrap();
        assert!((rep.gamma - 1.0 / 6.0).abs() < 1e-15);
        let hand = nisio_by_hand(gb.v, gb.w, 1.0, 1.0, 1.0, &k);
        assert!((rep.constant - hand).abs() < 1e-12 * hand);
        let sum: f64 = rep.addends.iter().map(|a| a.value).sum();
        assert_eq!(sum, rep.constant);
    }

    #[test]
    fn nisio_variants() {
        let k = kernel();
        let smooth = family(&[0.5, 1.0], true).generator_bounds();
        let rep = nisio_bounds(&smooth, true, 1.0, 1.0, 0.125, 1.0, &k).unwrap();
        assert_eq!(rep.gamma, 0.25);
        assert_eq!(rep.family, "nisio_smooth");
        // ½·r·ṽ₄·b₀₃ with ṽ₄ = ¼σ⁴ for σ = 1.
        let sq = rep.addends.iter().find(|a| a.name == "squared_generator").unwrap();
        assert!((sq.value - 0.125 * k.kernel_constant(0, 3).unwrap()).abs() < 1e-12);
        let rough = family(&[0.5, 1.0], false).generator_bounds();
        assert!(nisio_bounds(&rough, true, 1.0, 1.0, 0.125, 1.0, &k).is_err());
        let drift = NisioFamily::new(vec![Control {
            sigma: Spread::Scalar(0.0),
            m: Coords::Scalar(1.0),
        }])
        .unwrap();
        let rep = nisio_bounds(&drift.generator_bounds(), false, 0.5, 1.0, 0.125, 1.0, &k).unwrap();
        assert_eq!(rep.gamma, 0.5);
    }

    fn two_point() -> ScenarioConvexExpectation {
        let mass = |x: f64, penalty| Scenario {
            distribution: Distribution::PointMass { mean: Coords::Scalar(x) },
            penalty,
        };
        ScenarioConvexExpectation::new(vec![mass(-1.0, 0.0), mass(1.0, 0.5)]).unwrap()
    }

    fn g_pair() -> ScenarioConvexExpectation {
        let g = |s| Scenario {
            distribution: Distribution::Gaussian {
                mean: Coords::Scalar(0.0),
                sigma: Spread::Scalar(s),
            },
            penalty: 0.0,
        };
        ScenarioConvexExpectation::new(vec![g(0.5), g(1.0)]).unwrap()
    }

    #[test]
    fn lln_by_hand() {
        let k = kernel();
        let b = |a, c| k.kernel_constant(a, c).unwrap();
        let ce = two_point();
        // |ξ| = 1 under both masses; the penalty enters only the unpenalized one.
        let cr = 2.0 + 1.0;
        let lower = 8.0 + 5.0 + (0.5 * b(0, 1) + 1.0) + ((cr + 1.0) * b(1, 1) + 1.0) + 0.5 * (cr + 1.0) * b(2, 0);
        let rep = lln_bounds(&ce, 1.0, 1.0, Side::Lower, &k).unwrap();
        assert_eq!(rep.gamma, 0.5);
        assert!((rep.constant - lower).abs() < 1e-12);
        let up = lln_bounds(&ce, 1.0, 1.0, Side::Upper, &k).unwrap();
        assert!(up.constant > rep.constant);
    }

    #[test]
    fn clt_exponents_and_errors() {
        let k = kernel();
        let ce = g_pair();
        let cert = GrowthCertificate { a: 1.0, p: 1.0 };
        let rep = clt_bounds(&ce, &cert, 1.0, 1.0, Side::Upper, false, &k).unwrap();
        assert!((rep.gamma - 1.0 / 6.0).abs() < 1e-15);
        let sym = clt_bounds(&ce, &cert, 1.0, 1.0, Side::Upper, true, &k).unwrap();
        assert_eq!(sym.gamma, 0.25);
        let skew = ScenarioConvexExpectation::new(vec![Scenario {
            distribution: Distribution::Discrete {
                atoms: vec![
                    Atom { at: Coords::Scalar(-1.0), prob: 2.0 / 3.0 },
                    Atom { at: Coords::Scalar(2.0), prob: 1.0 / 3.0 },
                ],
            },
            penalty: 0.0,
        }])
        .unwrap();
        assert!(clt_bounds(&skew, &cert, 1.0, 1.0, Side::Upper, true, &k).is_err());
        assert!(clt_bounds(&skew, &cert, 1.0, 1.0, Side::Upper, false, &k).is_ok());
        let h = clt_holder(&ce, &cert, 1.0, 1.0, &k).unwrap();
        assert_eq!(h.alpha, 0.5);
        assert!((h.constant - (2.0 + 0.5 * k.kernel_constant(0, 1).unwrap())).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn constants_monotone_in_radius_and_time(r in 1.0f64..5.0, dr in 0.0f64..2.0, t in 0.0f64..3.0, dt in 0.0f64..2.0) {
            let k = kernel();
            let ce = g_pair();
            let cert = GrowthCertificate { a: 1.0, p: 1.0 };
            let gb = family(&[0.5, 1.0], true).generator_bounds();
            for side in [Side::Lower, Side::Upper] {
                let c = |r, t| clt_bounds(&ce, &cert, r, t, side, true, &k).unwrap().constant;
                prop_assert!(c(r + dr, t) >= c(r, t) && c(r, t + dt) >= c(r, t));
                let l = |r, t| lln_bounds(&two_point(), r, t, side, &k).unwrap().constant;
                prop_assert!(l(r + dr, t) >= l(r, t) && l(r, t + dt) >= l(r, t));
            }
            let n = |r, t| nisio_bounds(&gb, true, r, t, 0.125, 1.0, &k).unwrap().constant;
            prop_assert!(n(r + dr, t) >= n(r, t) && n(r, t + dt) >= n(r, t));
        }

        #[test]
        fn exponents_ignore_theta_scale(scale in 0.01f64..100.0, alpha in 0.1f64..2.0, beta in 0.0f64..4.0) {
            let mut p = params(1.0, &[(alpha, beta)]);
            let g0 = general_rate_exponent(&p, Side::Upper).unwrap();
            p.upper = vec![ConsistencyTerm { alpha, beta, theta: Arc::new(move |r, t| scale * r * t) }];
            prop_assert_eq!(general_rate_exponent(&p, Side::Upper).unwrap(), g0);
            let rep = general_rate_constant(&p, 1.0, 1.0, Side::Upper).unwrap();
            prop_assert_eq!(rep.addends.iter().map(|a| a.value).sum::<f64>(), rep.constant);
        }
    }
}
