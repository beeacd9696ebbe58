//! Chernoff iteration: I(π_n^t)f = I(h)^k f with k = max{k : kh ≤ t}.

use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::convex_expectation::ScenarioConvexExpectation;
use crate::error::{domain, Error, Result};
use crate::grid::{positive_part_norm, Grid, GridFunction, SpaceTimeFunction, WeightFunction};
use crate::nisio::NisioFamily;
use crate::stencil::StencilStep;

/// Relative slack when deciding k·h ≤ t for floating-point step sizes.
const PARTITION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Partition {
    pub t: f64,
    pub h: f64,
    pub k: usize,
}

impl Partition {
    pub fn new(t: f64, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return domain(format!("step must be positive, got {h}"));
        }
        if !(t.is_finite() && t >= 0.0) {
            return domain(format!("time must be finite and ≥ 0, got {t}"));
        }
        let k = (t / h * (1.0 + PARTITION_SLACK)).floor();
        if k > u32::MAX as f64 {
            return domain(format!("{k} steps is too many"));
        }
        Ok(Self { t, h, k: k as usize })
    }

    /// Lattice times 0, h, …, k·h.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.k).map(|j| j as f64 * self.h).collect()
    }
}

/// A one-step operator fixed to a grid and a step size.
pub trait PreparedStep: Send + Sync {
    fn apply(&self, f: &GridFunction) -> Result<GridFunction>;

    /// Largest offset read from f, in cells, when known.
    fn reach(&self) -> Option<usize> {
        None
    }
}

impl PreparedStep for StencilStep {
    fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        StencilStep::apply(self, f)
    }

    fn reach(&self) -> Option<usize> {
        Some(StencilStep::reach(self))
    }
}

/// A family (I(t))_{t ≥ 0} that can be prepared for a grid and step.
pub trait OneStepOperator: Send + Sync {
    fn prepare(&self, grid: &Arc<Grid>, h: f64) -> Result<Box<dyn PreparedStep>>;

    fn apply(&self, f: &GridFunction, h: f64) -> Result<GridFunction> {
        self.prepare(f.grid(), h)?.apply(f)
    }
}

/// The shipped one-step operators.
#[derive(Debug, Clone)]
pub enum StepOperator {
    Nisio(NisioFamily),
    Lln(ScenarioConvexExpectation),
    Clt(ScenarioConvexExpectation),
}

impl StepOperator {
    pub fn name(&self) -> &'static str {
        match self {
            StepOperator::Nisio(_) => "nisio",
            StepOperator::Lln(_) => "lln",
            StepOperator::Clt(_) => "clt",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StepOperator::Nisio(f) => f.dim(),
            StepOperator::Lln(e) | StepOperator::Clt(e) => e.dim(),
        }
    }
}

impl OneStepOperator for StepOperator {
    fn prepare(&self, grid: &Arc<Grid>, h: f64) -> Result<Box<dyn PreparedStep>> {
        Ok(Box::new(match self {
            StepOperator::Nisio(f) => f.operator(grid, h)?,
            StepOperator::Lln(e) => e.lln_operator(grid, h)?,
            StepOperator::Clt(e) => e.clt_operator(grid, h)?,
        }))
    }
}

/// Result of an iteration, with all iterates when recorded.
#[derive(Debug, Clone)]
pub struct Iteration {
    pub partition: Partition,
    pub result: GridFunction,
    pub trajectory: Option<SpaceTimeFunction>,
}

/// k sequential applications of the prepared step at mesh h.
pub fn chernoff_iterate(
    op: &dyn OneStepOperator,
    f: &GridFunction,
    t: f64,
    h: f64,
    record: bool,
) -> Result<Iteration> {
    let partition = Partition::new(t, h)?;
    let mut slices = Vec::new();
    if record {
        slices.push(f.clone());
    }
    let mut u = f.clone();
    if partition.k > 0 {
        let step = op.prepare(f.grid(), h)?;
        for j in 1..=partition.k {
            u = step.apply(&u).map_err(|e| Error::Step {
                step: j,
                source: Box::new(e),
            })?;
            if record {
                slices.push(u.clone());
            }
        }
    }
    let trajectory = if record {
        Some(SpaceTimeFunction::new(partition.times(), slices)?)
    } else {
        None
    };
    Ok(Iteration {
        partition,
        result: u,
        trajectory,
    })
}

#[derive(Debug, Serialize)]
struct TrajectoryIndex<'a> {
    h: f64,
    k: usize,
    t: f64,
    file: &'a str,
    wall_seconds: Option<f64>,
}

/// Writes `<stem>.bin` in the space-time binary format and `<stem>.json`
/// with h, k and the optional timing.
pub fn write_trajectory(dir: &Path, stem: &str, it: &Iteration, wall_seconds: Option<f64>) -> Result<()> {
    let traj = it
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::Domain("iteration was not recorded".into()))?;
    fs::create_dir_all(dir)?;
    let bin = format!("{stem}.bin");
    let mut w = BufWriter::new(fs::File::create(dir.join(&bin))?);
    traj.write_binary(&mut w)?;
    let index = TrajectoryIndex {
        h: it.partition.h,
        k: it.partition.k,
        t: it.partition.t,
        file: &bin,
        wall_seconds,
    };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

/// Outcome of the discrete comparison inequality at every lattice time.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// Whether the residual certificates hold; if not, the check is vacuous.
    pub certificates_hold: bool,
    /// ‖(u(t) − v(t))⁺‖_κ per lattice time.
    pub gaps: Vec<f64>,
    /// e^{ωt}(‖(u(0) − v(0))⁺‖_κ + t·sup‖(f − g)⁺‖_κ) per lattice time.
    pub bounds: Vec<f64>,
    /// min over times of bound − gap.
    pub min_slack: f64,
    pub pass: bool,
}

/// Residual certificates for the comparison check: `upper[j-1]` bounds
/// (u(jh) − I(h)u((j−1)h))/h from above, `lower[j-1]` bounds the same
/// quantity for v from below.
pub struct Residuals<'a> {
    pub upper: &'a [GridFunction],
    pub lower: &'a [GridFunction],
}

/// Checks ‖(u(t) − v(t))⁺‖_κ ≤ e^{ωt}(‖(u(0) − v(0))⁺‖_κ + t·sup_{s ≤ t}‖(f − g)⁺‖_κ)
/// on the h-lattice.
#[allow(clippy::too_many_arguments)]
pub fn discrete_comparison_check(
    step: &dyn PreparedStep,
    u: &SpaceTimeFunction,
    v: &SpaceTimeFunction,
    residuals: Residuals<'_>,
    h: f64,
    omega: f64,
    kappa: &WeightFunction,
    tol: f64,
) -> Result<ComparisonReport> {
    if u.len() != v.len() || u.is_empty() {
        return domain("trajectories must share a non-empty time lattice");
    }
    let k = u.len() - 1;
    if residuals.upper.len() != k || residuals.lower.len() != k {
        return domain(format!("expected {k} residual bounds per side"));
    }
    let mut certificates_hold = true;
    for j in 1..=k {
        let su = step.apply(&u.slices()[j - 1])?;
        let sv = step.apply(&v.slices()[j - 1])?;
        let ru = u.slices()[j].sub(&su)?.map(|x| x / h)?;
        let rv = v.slices()[j].sub(&sv)?.map(|x| x / h)?;
        let over = ru.sub(&residuals.upper[j - 1])?;
        let under = residuals.lower[j - 1].sub(&rv)?;
        if over.values().iter().chain(under.values()).any(|x| *x > tol) {
            certificates_hold = false;
        }
    }
    let initial = positive_part_norm(&u.slices()[0].sub(&v.slices()[0])?, kappa)?;
    let mut drive = 0.0_f64;
    let mut gaps = Vec::with_capacity(k + 1);
    let mut bounds = Vec::with_capacity(k + 1);
    let mut min_slack = f64::INFINITY;
    for j in 0..=k {
        if j > 0 {
            let fg = residuals.upper[j - 1].sub(&residuals.lower[j - 1])?;
            drive = drive.max(positive_part_norm(&fg, kappa)?);
        }
        let t = j as f64 * h;
        let gap = positive_part_norm(&u.slices()[j].sub(&v.slices()[j])?, kappa)?;
        let bound = (omega * t).exp() * (initial + t * drive);
        min_slack = min_slack.min(bound - gap);
        gaps.push(gap);
        bounds.push(bound);
    }
    Ok(ComparisonReport {
        certificates_hold,
        pass: certificates_hold && min_slack >= -tol,
        gaps,
        bounds,
        min_slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_expectation::{Coords, Spread};
    use crate::nisio::{linear_step, Control};

    #[test]
    fn partition_examples() {
        assert_eq!(Partition::new(1.0, 0.25).unwrap().k, 4);
        assert_eq!(Partition::new(1.0, 0.3).unwrap().k, 3);
        assert_eq!(Partition::new(0.1, 0.25).unwrap().k, 0);
        assert_eq!(Partition::new(1.0, 0.1).unwrap().k, 10);
        assert!(Partition::new(1.0, 0.0).is_err());
        assert!(Partition::new(1.0, -1.0).is_err());
    }

    fn family(sigma: f64, m: f64) -> StepOperator {
        StepOperator::Nisio(
            NisioFamily::new(vec![Control {
                sigma: Spread::Scalar(sigma),
                m: Coords::Scalar(m),
            }])
            .unwrap(),
        )
    }

    #[test]
    fn zero_steps_leave_f() {
        let g = Arc::new(Grid::line(-4.0, 4.0, 81).unwrap());
        let f = GridFunction::from_fn(g, |x| x[0].sin()).unwrap();
        let it = chernoff_iterate(&family(1.0, 0.0), &f, 0.1, 0.25, true).unwrap();
        assert_eq!(it.result, f);
        assert_eq!(it.trajectory.unwrap().len(), 1);
    }

    #[test]
    fn transport_iterates_shift() {
        let g = Arc::new(Grid::line(-4.0, 4.0, 801).unwrap());
        let f = GridFunction::from_fn(g.clone(), |x| x[0].sin()).unwrap();
        let it = chernoff_iterate(&family(0.0, 1.0), &f, 0.2, 0.1, false).unwrap();
        let x = g.coord(0, 300);
        assert!((it.result.values()[300] - (x + 0.2).sin()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_iterates_match_single_step() {
        let g = Arc::new(Grid::line(-12.0, 12.0, 2401).unwrap());
        let f = GridFunction::from_fn(g.clone(), |x| x[0].cos()).unwrap();
        let it = chernoff_iterate(&family(1.0, 0.0), &f, 1.0, 1.0 / 16.0, true).unwrap();
        let once = linear_step(Spread::Scalar(1.0), Coords::Scalar(0.0), &f, 1.0).unwrap();
        for i in 600..1800 {
            assert!((it.result.values()[i] - once.values()[i]).abs() < 1e-4);
        }
        assert_eq!(it.trajectory.unwrap().times().len(), 17);
    }

    #[test]
    fn comparison_with_constant_offset() {
        let g = Arc::new(Grid::line(-4.0, 4.0, 161).unwrap());
        let op = family(0.5, 0.0);
        let h = 0.125;
        let f = GridFunction::from_fn(g.clone(), |x| x[0].sin()).unwrap();
        let exact = chernoff_iterate(&op, &f, 1.0, h, true).unwrap().trajectory.unwrap();
        let shifted = chernoff_iterate(&op, &f.map(|x| x + 0.3).unwrap(), 1.0, h, true)
            .unwrap()
            .trajectory
            .unwrap();
        let zero = GridFunction::constant(g.clone(), 0.0).unwrap();
        let res = vec![zero; exact.len() - 1];
        let step = op.prepare(&g, h).unwrap();
        let kappa = WeightFunction::one(g);
        let r = discrete_comparison_check(
            step.as_ref(),
            &shifted,
            &exact,
            Residuals { upper: &res, lower: &res },
            h,
            0.0,
            &kappa,
            1e-12,
        )
        .unwrap();
        assert!(r.certificates_hold && r.pass);
        assert!(r.gaps.iter().all(|g| *g <= 0.3 + 1e-12));
    }
}
