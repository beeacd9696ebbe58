//! Error curves against a reference, rate fitting, bound and Hölder checks.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundReport, Side};
use crate::error::{domain, Error, Result};
use crate::grid::{negative_part_norm_on, positive_part_norm_on, weighted_norm_on, GridFunction, SpaceTimeFunction, Subdomain, WeightFunction};
use crate::iterate::{chernoff_iterate, OneStepOperator};

pub const DEFAULT_SLOPE_TOLERANCE: f64 = 0.05;
pub const DEFAULT_NOISE_MULTIPLIER: f64 = 10.0;
/// The oracle is too coarse when its uncertainty exceeds this fraction of
/// the smallest measured error.
pub const INCONCLUSIVE_FRACTION: f64 = 0.1;

/// Boundary margin 3(σ_max√t + |m|t + ε₂) excluded from error measurement.
pub fn interior_margin(sigma_max: f64, drift_max: f64, t: f64, eps2: f64) -> f64 {
    3.0 * (sigma_max * t.sqrt() + drift_max * t + eps2)
}

/// S(t)f on the grid together with how far it can be trusted.
#[derive(Debug, Clone)]
pub struct Reference {
    pub value: GridFunction,
    pub uncertainty: f64,
    /// Step of the fine oracle, if the reference is one.
    pub h_fine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub h: f64,
    /// ‖(S(t)f − I(π_n^t)f)⁺‖_κ.
    pub e_plus: f64,
    /// ‖(S(t)f − I(π_n^t)f)⁻‖_κ.
    pub e_minus: f64,
    pub oracle_uncertainty: f64,
    /// Excluded from serialized artifacts so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl ErrorPoint {
    pub fn error(&self) -> f64 {
        self.e_plus.max(self.e_minus)
    }

    pub fn side(&self, side: Side) -> f64 {
        match side {
            Side::Upper => self.e_plus,
            Side::Lower => self.e_minus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub points: Vec<ErrorPoint>,
}

impl ErrorCurve {
    pub fn new(points: Vec<ErrorPoint>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].h >= w[0].h) {
            return domain("step sizes must be strictly decreasing");
        }
        if points.iter().any(|p| !(p.e_plus >= 0.0 && p.e_minus >= 0.0 && p.oracle_uncertainty >= 0.0)) {
            return domain("errors must be non-negative");
        }
        Ok(Self { points })
    }

    /// Parses a CSV with at least the columns h, e_plus, e_minus.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty error curve".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| Error::Parse(format!("missing column {name}")))
        };
        let (ih, ip, im) = (col("h")?, col("e_plus")?, col("e_minus")?);
        let iu = header.iter().position(|h| *h == "oracle_uncertainty");
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |i: usize| -> Result<f64> {
                cells
                    .get(i)
                    .ok_or_else(|| Error::Parse(format!("row {}: too few cells", n + 2)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", n + 2)))
            };
            points.push(ErrorPoint {
                h: num(ih)?,
                e_plus: num(ip)?,
                e_minus: num(im)?,
                oracle_uncertainty: iu.map(num).transpose()?.unwrap_or(0.0),
                wall_seconds: 0.0,
            });
        }
        Self::new(points)
    }

    /// The largest oracle uncertainty over the curve.
    pub fn uncertainty(&self) -> f64 {
        self.points.iter().map(|p| p.oracle_uncertainty).fold(0.0, f64::max)
    }
}

/// Signed split errors of the iterates at each step size, computed in
/// parallel and measured on `region`.
pub fn measure_errors(
    op: &dyn OneStepOperator,
    f: &GridFunction,
    t: f64,
    steps: &[f64],
    reference: &Reference,
    kappa: &WeightFunction,
    region: &Subdomain,
) -> Result<ErrorCurve> {
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return domain("step sizes must be strictly decreasing");
    }
    if let (Some(fine), Some(&smallest)) = (reference.h_fine, steps.last()) {
        if fine > smallest / 8.0 {
            return domain(format!("oracle step {fine} must be at most {} (h_min/8)", smallest / 8.0));
        }
    }
    let points: Vec<Result<ErrorPoint>> = steps
        .par_iter()
        .map(|&h| {
            let start = Instant::now();
            let it = chernoff_iterate(op, f, t, h, false)?;
            let wall_seconds = start.elapsed().as_secs_f64();
            let diff = reference.value.sub(&it.result)?;
            Ok(ErrorPoint {
                h,
                e_plus: positive_part_norm_on(&diff, kappa, region)?,
                e_minus: negative_part_norm_on(&diff, kappa, region)?,
                oracle_uncertainty: reference.uncertainty,
                wall_seconds,
            })
        })
        .collect();
    ErrorCurve::new(points.into_iter().collect::<Result<_>>()?)
}

/// Least-squares line through (log h, log e).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub points_used: usize,
}

fn least_squares(xy: &[(f64, f64)]) -> (f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn fit_values(curve: &ErrorCurve, noise_multiplier: f64, value: impl Fn(&ErrorPoint) -> f64) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| value(p) > noise_multiplier * p.oracle_uncertainty && value(p) > 0.0)
        .map(|p| (p.h.ln(), value(p).ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::Inconclusive(format!(
            "{} points above the noise floor, need 3",
            usable.len()
        )));
    }
    let keep = usable.len().div_ceil(2).max(3);
    let finest = &usable[usable.len() - keep..];
    let (slope, intercept) = least_squares(finest);
    Ok(RateFit {
        slope,
        intercept,
        points_used: keep,
    })
}

/// Fit on log max(e⁺, e⁻) over the finest half of the points above the
/// noise floor.
pub fn fit_rate(curve: &ErrorCurve, noise_multiplier: f64) -> Result<RateFit> {
    fit_values(curve, noise_multiplier, ErrorPoint::error)
}

pub fn fit_rate_side(curve: &ErrorCurve, noise_multiplier: f64, side: Side) -> Result<RateFit> {
    fit_values(curve, noise_multiplier, |p| p.side(side))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCheck {
    pub h: f64,
    pub error: f64,
    pub bound: f64,
    pub admissible: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundVerdict {
    pub family: String,
    pub side: Side,
    pub gamma: f64,
    pub constant: f64,
    pub checks: Vec<PointCheck>,
    /// Largest e/(c·h^γ) over admissible points.
    pub max_ratio: f64,
    pub pass: bool,
}

/// Checks e_n ≤ c·h_n^γ on the side of `bound` at every point with h^γ ≤ ε₀.
pub fn verify_bound(curve: &ErrorCurve, bound: &BoundReport) -> BoundVerdict {
    let mut max_ratio = 0.0_f64;
    let checks: Vec<PointCheck> = curve
        .points
        .iter()
        .map(|p| {
            let error = p.side(bound.side);
            let limit = bound.bound_at(p.h);
            let admissible = bound.admissible(p.h);
            if admissible && error > 0.0 {
                max_ratio = max_ratio.max(error / limit);
            }
            PointCheck {
                h: p.h,
                error,
                bound: limit,
                admissible,
                pass: !admissible || error <= limit,
            }
        })
        .collect();
    BoundVerdict {
        family: bound.family.clone(),
        side: bound.side,
        gamma: bound.gamma,
        constant: bound.constant,
        pass: checks.iter().all(|c| c.pass),
        checks,
        max_ratio,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderReport {
    pub alpha: f64,
    pub constant: f64,
    pub pairs: usize,
    pub max_ratio: f64,
    pub worst_pair: Option<(f64, f64)>,
    pub pass: bool,
}

/// Time indices used for pair sampling: every index when short, otherwise
/// an even subsample that keeps both ends.
fn sample_indices(len: usize, max_samples: usize) -> Vec<usize> {
    if len <= max_samples {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..max_samples)
        .map(|i| (i as f64 * (len - 1) as f64 / (max_samples - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// max ‖u(s) − u(t)‖_κ/(|s−t| + h)^α over sampled pairs with |s−t| ≤ 1,
/// compared against c·(1 + tol). Consecutive pairs are always included.
#[allow(clippy::too_many_arguments)]
pub fn holder_check(
    trajectory: &SpaceTimeFunction,
    h: f64,
    alpha: f64,
    constant: f64,
    kappa: &WeightFunction,
    region: &Subdomain,
    tol: f64,
    max_samples: usize,
) -> Result<HolderReport> {
    let times = trajectory.times();
    let slices = trajectory.slices();
    let idx = sample_indices(times.len(), max_samples.max(2));
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            if times[j] - times[i] <= 1.0 + 1e-12 {
                pairs.push((i, j));
            }
        }
    }
    for i in 1..times.len() {
        pairs.push((i - 1, i));
    }
    pairs.sort_unstable();
    pairs.dedup();
    let ratios: Vec<Result<(f64, usize, usize)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let gap = weighted_norm_on(&slices[j].sub(&slices[i])?, kappa, region)?;
            Ok((gap / ((times[j] - times[i]).abs() + h).powf(alpha), i, j))
        })
        .collect();
    let mut max_ratio = 0.0_f64;
    let mut worst_pair = None;
    for r in ratios {
        let (ratio, i, j) = r?;
        if ratio > max_ratio {
            max_ratio = ratio;
            worst_pair = Some((times[i], times[j]));
        }
    }
    Ok(HolderReport {
        alpha,
        constant,
        pairs: pairs.len(),
        max_ratio,
        worst_pair,
        pass: max_ratio <= constant * (1.0 + tol),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub fit: Option<RateFit>,
    pub fit_plus: Option<RateFit>,
    pub fit_minus: Option<RateFit>,
    /// The sharpest theoretical exponent among the supplied bounds.
    pub gamma: f64,
    pub slope_tolerance: f64,
    pub noise_multiplier: f64,
    pub oracle_uncertainty: f64,
    pub bounds: Vec<BoundVerdict>,
    /// e⁻ ≤ noise_multiplier × uncertainty at every point, when required.
    pub one_sided: Option<bool>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Assembles the verdict: every bound check passes and γ̂ ≥ γ − tolerance.
/// Inconclusive when the oracle uncertainty exceeds 10% of the smallest
/// error or too few points clear the noise floor.
pub fn rate_report(
    curve: &ErrorCurve,
    bounds: &[BoundReport],
    slope_tolerance: f64,
    noise_multiplier: f64,
    require_one_sided: bool,
) -> RateReport {
    let mut notes = Vec::new();
    let uncertainty = curve.uncertainty();
    let smallest = curve.points.iter().map(ErrorPoint::error).fold(f64::INFINITY, f64::min);
    let mut inconclusive = false;
    if uncertainty > INCONCLUSIVE_FRACTION * smallest {
        inconclusive = true;
        notes.push(format!(
            "oracle uncertainty {uncertainty:e} exceeds {INCONCLUSIVE_FRACTION} of the smallest error {smallest:e}"
        ));
    }
    let fit = match fit_rate(curve, noise_multiplier) {
        Ok(f) => Some(f),
        Err(e) => {
            inconclusive = true;
            notes.push(e.to_string());
            None
        }
    };
    let gamma = bounds.iter().map(|b| b.gamma).fold(0.0, f64::max);
    let verdicts: Vec<BoundVerdict> = bounds.iter().map(|b| verify_bound(curve, b)).collect();
    let one_sided = require_one_sided.then(|| {
        curve
            .points
            .iter()
            .all(|p| p.e_minus <= noise_multiplier * p.oracle_uncertainty)
    });
    let slope_ok = fit.map(|f| f.slope >= gamma - slope_tolerance);
    let checks_ok = verdicts.iter().all(|v| v.pass) && one_sided != Some(false);
    let verdict = if !checks_ok || slope_ok == Some(false) {
        Verdict::Fail
    } else if inconclusive {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    RateReport {
        fit,
        fit_plus: fit_rate_side(curve, noise_multiplier, Side::Upper).ok(),
        fit_minus: fit_rate_side(curve, noise_multiplier, Side::Lower).ok(),
        gamma,
        slope_tolerance,
        noise_multiplier,
        oracle_uncertainty: uncertainty,
        bounds: verdicts,
        one_sided,
        verdict,
        notes,
    }
}

/// CSV with columns h, e_plus, e_minus, bound_value, pass. `bound_value` is
/// the smallest admissible bound at that step; `pass` covers every bound.
pub fn errors_csv(curve: &ErrorCurve, report: &RateReport) -> String {
    let mut out = String::from("h,e_plus,e_minus,bound_value,pass\n");
    for (n, p) in curve.points.iter().enumerate() {
        let checks = report.bounds.iter().map(|b| &b.checks[n]);
        let bound = checks
            .clone()
            .filter(|c| c.admissible)
            .map(|c| c.bound)
            .fold(f64::INFINITY, f64::min);
        let pass = checks.clone().all(|c| c.pass);
        out.push_str(&format!("{},{},{},{},{}\n", p.h, p.e_plus, p.e_minus, bound, pass));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(f: impl Fn(f64) -> f64) -> ErrorCurve {
        let points = (3..=9)
            .map(|n| {
                let h = 2f64.powi(-n);
                ErrorPoint {
                    h,
                    e_plus: f(h),
                    e_minus: 0.0,
                    oracle_uncertainty: 0.0,
                    wall_seconds: 0.0,
                }
            })
            .collect();
        ErrorCurve::new(points).unwrap()
    }

    fn bound(c: f64, gamma: f64) -> BoundReport {
        BoundReport {
            family: "synthetic".into(),
            side: Side::Upper,
            gamma,
            constant: c,
            eps0: 1.0,
            addends: vec![],
        }
    }

    #[test]
    fn exact_power_laws() {
        let fit = fit_rate(&curve(|h| 3.0 * h), 10.0).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        let fit = fit_rate(&curve(|h| 2.0 * h.sqrt()), 10.0).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert_eq!(fit.points_used, 4);
    }

    #[test]
    fn noisy_quarter_rate() {
        // ±1% deterministic perturbation.
        let noise = [0.01, -0.01, 0.005, -0.008, 0.01, -0.01, 0.0];
        let mut c = curve(|h| 0.7 * h.powf(0.25));
        for (p, n) in c.points.iter_mut().zip(noise) {
            p.e_plus *= 1.0 + n;
        }
        let s = fit_rate(&c, 10.0).unwrap().slope;
        assert!((0.23..=0.27).contains(&s), "{s}");
    }

    #[test]
    fn too_few_points_is_inconclusive() {
        let mut c = curve(|h| h);
        for p in &mut c.points {
            p.oracle_uncertainty = 0.01;
        }
        assert!(matches!(fit_rate(&c, 10.0), Err(Error::Inconclusive(_))));
    }

    #[test]
    fn bound_strictness() {
        let v = verify_bound(&curve(|_| 0.0), &bound(2.0, 0.5));
        assert!(v.pass && v.max_ratio == 0.0);
        let v = verify_bound(&curve(|h| 2.0 * h.powf(0.5)), &bound(2.0, 0.5));
        assert!(v.pass && (v.max_ratio - 1.0).abs() < 1e-15);
        let v = verify_bound(&curve(|h| 1.01 * 2.0 * h.powf(0.5)), &bound(2.0, 0.5));
        assert!(!v.pass);
        let mut narrow = bound(2.0, 0.5);
        narrow.eps0 = 0.1;
        let v = verify_bound(&curve(|h| 1.01 * 2.0 * h.powf(0.5)), &narrow);
        // Only h ≤ 0.01 is admissible: h = 2⁻⁷, 2⁻⁸, 2⁻⁹.
        assert_eq!(v.checks.iter().filter(|c| c.admissible).count(), 3);
    }

    #[test]
    fn report_and_csv() {
        let c = curve(|h| h.sqrt());
        let r = rate_report(&c, &[bound(2.0, 0.5)], 0.05, 10.0, false);
        assert_eq!(r.verdict, Verdict::Pass);
        let csv = errors_csv(&c, &r);
        assert!(csv.starts_with("h,e_plus,e_minus,bound_value,pass\n0.125,"));
        let back = ErrorCurve::from_csv(&csv).unwrap();
        assert_eq!(back.points.len(), 7);
        let slow = rate_report(&curve(|h| h.powf(0.3)), &[bound(2.0, 0.5)], 0.05, 10.0, false);
        assert_eq!(slow.verdict, Verdict::Fail);
    }

    #[test]
    fn holder_on_constant_and_transport() {
        use crate::grid::Grid;
        use std::sync::Arc;
        let g = Arc::new(Grid::line(-4.0, 4.0, 801).unwrap());
        let kappa = WeightFunction::one(g.clone());
        let region = Subdomain::interior(&g, 2.0).unwrap();
        let times: Vec<f64> = (0..=10).map(|j| j as f64 * 0.1).collect();
        let flat: Vec<GridFunction> = times.iter().map(|_| GridFunction::constant(g.clone(), 1.0).unwrap()).collect();
        let traj = SpaceTimeFunction::new(times.clone(), flat).unwrap();
        let r = holder_check(&traj, 0.1, 1.0, 1.0, &kappa, &region, 0.01, 64).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        // u(t, x) = sin(x + 0.5t): speed 0.5 with r = 1.
        let moving: Vec<GridFunction> = times
            .iter()
            .map(|&t| GridFunction::from_fn(g.clone(), |x| (x[0] + 0.5 * t).sin()).unwrap())
            .collect();
        let traj = SpaceTimeFunction::new(times, moving).unwrap();
        let r = holder_check(&traj, 0.1, 1.0, 2.5, &kappa, &region, 0.01, 64).unwrap();
        assert!(r.max_ratio <= 0.5 && r.pass);
    }

    proptest! {
        #[test]
        fn looser_tolerance_never_fails_more(c in 0.1f64..3.0, g in 0.1f64..1.0, tol in 0.0f64..0.2, extra in 0.0f64..0.2) {
            let cur = curve(|h| c * h.powf(g));
            let b = [bound(3.0, 0.5)];
            let tight = rate_report(&cur, &b, tol, 10.0, false).verdict;
            let loose = rate_report(&cur, &b, tol + extra, 10.0, false).verdict;
            prop_assert!(!(tight == Verdict::Pass && loose == Verdict::Fail));
        }
    }
}
