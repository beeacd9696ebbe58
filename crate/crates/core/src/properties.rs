//! Seeded randomized property suites for one-step operators: structural
//! contracts and the convexity lemmas.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{Grid, GridFunction};
use crate::iterate::PreparedStep;

/// Absolute tolerance for order, convexity and lemma violations.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;
/// Relative slack on contraction and Lipschitz growth factors.
pub const GROWTH_TOLERANCE: f64 = 1e-9;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A random profile of one variable with sup ≤ 1.
fn profile(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Box<dyn Fn(f64) -> f64 + Send + Sync> {
    match rng.gen_range(0..4) {
        0 => {
            let terms: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| (rng.gen_range(-1.0..1.0) / 3.0, rng.gen_range(0.2..3.0), rng.gen_range(0.0..6.3)))
                .collect();
            Box::new(move |x| terms.iter().map(|(a, w, p)| a * (w * x + p).sin()).sum())
        }
        1 => {
            let knots = ((hi - lo).ceil() as usize).max(1) + 1;
            let values: Vec<f64> = (0..knots).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Box::new(move |x| {
                let s = ((x - lo).max(0.0)).min((knots - 1) as f64);
                let i = (s.floor() as usize).min(knots - 2);
                let w = s - i as f64;
                (1.0 - w) * values[i] + w * values[i + 1]
            })
        }
        2 => {
            let centre = rng.gen_range(lo..hi);
            let cap = rng.gen_range(0.2..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let shift = rng.gen_range(-0.5..0.5) * (1.0 - cap);
            Box::new(move |x| sign * (x - centre).abs().min(cap) + shift)
        }
        _ => {
            // Rough: independent values on a coarse lattice of step 0.05.
            let n = ((hi - lo) / 0.05).ceil() as usize + 2;
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Box::new(move |x| values[(((x - lo) / 0.05).round().max(0.0) as usize).min(n - 1)])
        }
    }
}

/// The `index`-th random function of the stream `seed`. Values lie in
/// [−1, 1]; smooth, piecewise-linear, kinked and rough profiles are mixed.
pub fn random_function(grid: &Arc<Grid>, seed: u64, index: u64) -> Result<GridFunction> {
    let mut rng = rng_for(seed, index);
    let (lo, hi) = (grid.lower()[0], grid.upper()[0]);
    let first = profile(&mut rng, lo, hi);
    if grid.dim() == 1 {
        return GridFunction::from_fn(grid.clone(), |x| first(x[0]));
    }
    let second = profile(&mut rng, grid.lower()[1], grid.upper()[1]);
    if rng.gen_bool(0.5) {
        GridFunction::from_fn(grid.clone(), |x| first(x[0]) * second(x[1]))
    } else {
        GridFunction::from_fn(grid.clone(), |x| 0.5 * (first(x[0]) + second(x[1])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyOutcome {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest violation, or largest factor for growth properties.
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub seed: u64,
    pub properties: Vec<PropertyOutcome>,
    pub pass: bool,
}

impl PropertyReport {
    fn new(seed: u64, properties: Vec<PropertyOutcome>) -> Self {
        let pass = properties.iter().all(|p| p.pass);
        Self { seed, properties, pass }
    }

    pub fn get(&self, name: &str) -> Option<&PropertyOutcome> {
        self.properties.iter().find(|p| p.name == name)
    }

    /// Concatenates two reports from the same seed.
    pub fn merge(mut self, other: PropertyReport) -> Self {
        self.properties.extend(other.properties);
        self.pass = self.properties.iter().all(|p| p.pass);
        self
    }
}

/// Tally of one property; `limit` is the largest acceptable value.
#[derive(Clone, Copy)]
struct Tally {
    trials: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    const EMPTY: Tally = Tally {
        trials: 0,
        failures: 0,
        worst: 0.0,
    };

    fn record(value: f64, limit: f64) -> Tally {
        Tally {
            trials: 1,
            failures: usize::from(value.is_nan() || value > limit),
            worst: value,
        }
    }

    fn join(self, other: Tally) -> Tally {
        Tally {
            trials: self.trials + other.trials,
            failures: self.failures + other.failures,
            worst: self.worst.max(other.worst),
        }
    }

    fn outcome(self, name: &str, tolerance: f64) -> PropertyOutcome {
        PropertyOutcome {
            name: name.to_string(),
            trials: self.trials,
            failures: self.failures,
            worst: self.worst,
            tolerance,
            pass: self.failures == 0,
        }
    }
}

/// max(a − b)⁺ over the grid.
fn max_excess(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    Ok(a.sub(b)?.values().iter().copied().fold(0.0, f64::max))
}

fn sup_diff(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    Ok(a.sub(b)?.sup_norm())
}

/// Shifts by `s` cells along axis 0 with constant continuation.
fn shift_cells(f: &GridFunction, s: isize) -> Result<GridFunction> {
    let g = f.grid();
    let values = (0..g.len())
        .map(|flat| {
            let idx = g.multi_index(flat);
            f.at_clamped([idx[0] as isize + s, idx[1] as isize])
        })
        .collect();
    GridFunction::new(g.clone(), values)
}

/// Points at least `margin` cells from every edge.
fn inner_mask(grid: &Grid, margin: usize) -> Vec<bool> {
    (0..grid.len())
        .map(|flat| {
            let idx = grid.multi_index(flat);
            (0..grid.dim()).all(|a| idx[a] >= margin && idx[a] + margin < grid.counts()[a])
        })
        .collect()
}

/// Identity at zero time, order, convexity, I(0) = 0, sup-norm contraction,
/// translation commutation on the interior and Lipschitz propagation, on
/// `pairs` seeded random pairs. `identity` is the operator at t = 0.
pub fn structural_suite(
    step: &dyn PreparedStep,
    identity: &dyn PreparedStep,
    grid: &Arc<Grid>,
    pairs: usize,
    seed: u64,
) -> Result<PropertyReport> {
    let zero = GridFunction::constant(grid.clone(), 0.0)?;
    let at_zero = step.apply(&zero)?.sup_norm();
    let reach = step.reach();
    let tallies: Vec<Result<[Tally; 7]>> = (0..pairs as u64)
        .into_par_iter()
        .map(|n| {
            let f = random_function(grid, seed, 2 * n)?;
            let g = random_function(grid, seed, 2 * n + 1)?;
            let mut rng = rng_for(seed ^ 0x5eed, n);
            let (if_, ig) = (step.apply(&f)?, step.apply(&g)?);

            let id = sup_diff(&identity.apply(&f)?, &f)?;

            let upper = f.zip_with(&g, f64::max)?;
            let iu = step.apply(&upper)?;
            let order = max_excess(&if_, &iu)?.max(max_excess(&ig, &iu)?);

            let lambda: f64 = rng.gen_range(0.0..=1.0);
            let mix = f.zip_with(&g, |a, b| lambda * a + (1.0 - lambda) * b)?;
            let chord = if_.zip_with(&ig, |a, b| lambda * a + (1.0 - lambda) * b)?;
            let convex = max_excess(&step.apply(&mix)?, &chord)?;

            let fg = sup_diff(&f, &g)?;
            let contraction = if fg > 0.0 { sup_diff(&if_, &ig)? / fg } else { 0.0 };

            let translation = match reach {
                Some(r) => {
                    let s = rng.gen_range(1..=8isize);
                    let mask = inner_mask(grid, r + s as usize + 1);
                    if mask.iter().any(|m| *m) {
                        let lhs = step.apply(&shift_cells(&f, s)?)?;
                        let rhs = shift_cells(&if_, s)?;
                        let d = lhs.sub(&rhs)?;
                        let worst = d
                            .values()
                            .iter()
                            .zip(&mask)
                            .filter(|(_, m)| **m)
                            .map(|(v, _)| v.abs())
                            .fold(0.0, f64::max);
                        Tally::record(worst, VIOLATION_TOLERANCE)
                    } else {
                        Tally::EMPTY
                    }
                }
                None => Tally::EMPTY,
            };

            let lf = f.lipschitz();
            let growth = if lf > 0.0 { if_.lipschitz() / lf } else { 0.0 };
            let sup_growth = if f.sup_norm() > 0.0 { if_.sup_norm() / f.sup_norm() } else { 0.0 };

            Ok([
                Tally::record(id, VIOLATION_TOLERANCE),
                Tally::record(order, VIOLATION_TOLERANCE),
                Tally::record(convex, VIOLATION_TOLERANCE),
                Tally::record(contraction, 1.0 + GROWTH_TOLERANCE),
                translation,
                Tally::record(growth, 1.0 + GROWTH_TOLERANCE),
                Tally::record(sup_growth, 1.0 + GROWTH_TOLERANCE),
            ])
        })
        .collect();
    let mut total = [Tally::EMPTY; 7];
    for t in tallies {
        for (acc, x) in total.iter_mut().zip(t?) {
            *acc = acc.join(x);
        }
    }
    let names = [
        ("identity_at_zero", VIOLATION_TOLERANCE),
        ("monotone", VIOLATION_TOLERANCE),
        ("convex", VIOLATION_TOLERANCE),
        ("contraction", 1.0 + GROWTH_TOLERANCE),
        ("translation", VIOLATION_TOLERANCE),
        ("lipschitz_growth", 1.0 + GROWTH_TOLERANCE),
        ("sup_growth", 1.0 + GROWTH_TOLERANCE),
    ];
    let mut properties = vec![Tally::record(at_zero, VIOLATION_TOLERANCE).outcome("zero", VIOLATION_TOLERANCE)];
    properties.extend(total.iter().zip(names).map(|(t, (name, tol))| t.outcome(name, tol)));
    Ok(PropertyReport::new(seed, properties))
}

/// The λ-lemma Φ(f) − Φ(g) ≤ λ(Φ((f−g)/λ + g) − Φ(g)), the constant bound
/// Φ(f + a) ≤ Φ(f) + c|a| with κ ≡ 1, and finite-mixture Jensen
/// Φ(Σ wⱼuⱼ) ≤ Σ wⱼΦ(uⱼ), on `instances` random instances each.
/// `growth` is the c with ‖Φ(f)‖ ≤ c‖f‖.
pub fn lemma_suite(
    step: &dyn PreparedStep,
    grid: &Arc<Grid>,
    growth: f64,
    instances: usize,
    seed: u64,
) -> Result<PropertyReport> {
    let stream = seed.wrapping_add(0x1e44a);
    let tallies: Vec<Result<[Tally; 3]>> = (0..instances as u64)
        .into_par_iter()
        .map(|n| {
            let mut rng = rng_for(stream, n);
            let f = random_function(grid, stream, 8 * n)?;
            let g = random_function(grid, stream, 8 * n + 1)?;
            let (pf, pg) = (step.apply(&f)?, step.apply(&g)?);

            let lambda: f64 = rng.gen_range(0.05..=1.0);
            let lifted = f.zip_with(&g, |a, b| (a - b) / lambda + b)?;
            let pl = step.apply(&lifted)?;
            let lhs = pf.sub(&pg)?;
            let rhs = pl.sub(&pg)?.map(|v| lambda * v)?;
            let lam = max_excess(&lhs, &rhs)?;

            let a: f64 = rng.gen_range(-2.0..2.0);
            let shifted = step.apply(&f.map(|v| v + a)?)?;
            let kap = max_excess(&shifted, &pf.map(|v| v + growth * a.abs())?)?;

            let m = rng.gen_range(2..=5);
            let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0) + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let mut mix = vec![0.0; grid.len()];
            let mut avg = vec![0.0; grid.len()];
            for (j, w) in weights.iter().enumerate() {
                let u = random_function(grid, stream, 8 * n + 2 + j as u64)?;
                let pu = step.apply(&u)?;
                for i in 0..grid.len() {
                    mix[i] += w * u.values()[i];
                    avg[i] += w * pu.values()[i];
                }
            }
            let pmix = step.apply(&GridFunction::new(grid.clone(), mix)?)?;
            let jensen = max_excess(&pmix, &GridFunction::new(grid.clone(), avg)?)?;

            Ok([
                Tally::record(lam, VIOLATION_TOLERANCE),
                Tally::record(kap, VIOLATION_TOLERANCE),
                Tally::record(jensen, VIOLATION_TOLERANCE),
            ])
        })
        .collect();
    let mut total = [Tally::EMPTY; 3];
    for t in tallies {
        for (acc, x) in total.iter_mut().zip(t?) {
            *acc = acc.join(x);
        }
    }
    let names = ["lambda_lemma", "constant_shift", "jensen_mixture"];
    Ok(PropertyReport::new(
        seed,
        total
            .iter()
            .zip(names)
            .map(|(t, name)| t.outcome(name, VIOLATION_TOLERANCE))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_expectation::{Coords, Distribution, Scenario, ScenarioConvexExpectation, Spread};
    use crate::iterate::{OneStepOperator, StepOperator};
    use crate::nisio::{Control, NisioFamily};

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::line(-6.0, 6.0, 241).unwrap())
    }

    fn nisio() -> StepOperator {
        StepOperator::Nisio(
            NisioFamily::new(vec![
                Control {
                    sigma: Spread::Scalar(0.5),
                    m: Coords::Scalar(0.3),
                },
                Control {
                    sigma: Spread::Scalar(1.0),
                    m: Coords::Scalar(-0.2),
                },
            ])
            .unwrap(),
        )
    }

    struct Negated(Box<dyn PreparedStep>);

    impl PreparedStep for Negated {
        fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
            self.0.apply(f)?.map(|v| -v)
        }
    }

    #[test]
    fn random_functions_are_bounded_and_reproducible() {
        let g = grid();
        for n in 0..40 {
            let f = random_function(&g, 7, n).unwrap();
            assert!(f.sup_norm() <= 1.0 + 1e-12);
            assert_eq!(f, random_function(&g, 7, n).unwrap());
        }
        assert_ne!(random_function(&g, 7, 0).unwrap(), random_function(&g, 8, 0).unwrap());
    }

    #[test]
    fn nisio_passes_both_suites() {
        let g = grid();
        let op = nisio();
        let step = op.prepare(&g, 0.125).unwrap();
        let id = op.prepare(&g, 0.0).unwrap();
        let r = structural_suite(step.as_ref(), id.as_ref(), &g, 50, 0).unwrap();
        assert!(r.pass, "{r:#?}");
        assert_eq!(r.get("translation").unwrap().trials, 50);
        let l = lemma_suite(step.as_ref(), &g, 1.0, 50, 0).unwrap();
        assert!(l.pass, "{l:#?}");
    }

    #[test]
    fn penalized_expectation_passes() {
        let g = grid();
        let mass = |x: f64, penalty| Scenario {
            distribution: Distribution::PointMass { mean: Coords::Scalar(x) },
            penalty,
        };
        let op = StepOperator::Lln(ScenarioConvexExpectation::new(vec![mass(-1.0, 0.0), mass(1.0, 0.5)]).unwrap());
        let step = op.prepare(&g, 0.25).unwrap();
        let id = op.prepare(&g, 0.0).unwrap();
        assert!(structural_suite(step.as_ref(), id.as_ref(), &g, 30, 3).unwrap().pass);
        assert!(lemma_suite(step.as_ref(), &g, 1.0, 30, 3).unwrap().pass);
    }

    #[test]
    fn negated_operator_fails_monotonicity() {
        let g = grid();
        let op = nisio();
        let step = Negated(op.prepare(&g, 0.125).unwrap());
        let id = op.prepare(&g, 0.0).unwrap();
        let r = structural_suite(&step, id.as_ref(), &g, 20, 0).unwrap();
        assert!(!r.get("monotone").unwrap().pass);
        assert!(!r.pass);
    }

    #[test]
    fn suites_are_deterministic() {
        let g = grid();
        let op = nisio();
        let step = op.prepare(&g, 0.125).unwrap();
        let id = op.prepare(&g, 0.0).unwrap();
        let a = structural_suite(step.as_ref(), id.as_ref(), &g, 16, 11).unwrap();
        let b = structural_suite(step.as_ref(), id.as_ref(), &g, 16, 11).unwrap();
        assert_eq!(a, b);
    }
}
