//! Reference solutions: exact Gaussian propagation, worst-case volatility
//! for convex or concave payoffs, and fine-step oracles.

use serde::Serialize;

use crate::convex_expectation::{Distribution, ScenarioConvexExpectation, Spread};
use crate::convex_expectation::Coords;
use crate::error::{domain, Error, Result};
use crate::grid::{weighted_norm_on, GridFunction, Subdomain, WeightFunction};
use crate::iterate::{chernoff_iterate, OneStepOperator};
use crate::nisio::{Control, NisioFamily};
use crate::stencil::SplitCorrection;

/// Gauss–Hermite order of the exact reference in 2D.
pub const REFERENCE_NODES: usize = 128;

/// E f(x + σW_t + mt) in one Gaussian step. In 1D this is the closed-form
/// expectation of the piecewise-linear interpolant; in 2D a tensor
/// Gauss–Hermite rule of order 128.
pub fn heat_exact(f: &GridFunction, sigma: Spread, m: Coords, t: f64) -> Result<GridFunction> {
    NisioFamily::with_nodes(vec![Control { sigma, m }], REFERENCE_NODES)?
        .with_correction(SplitCorrection::None)
        .nisio_step(f, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    Linear,
    Convex,
    Concave,
    Neither,
}

/// Sign of the discrete second differences of a 1D grid function.
pub fn curvature(f: &GridFunction) -> Result<Curvature> {
    if f.grid().dim() != 1 {
        return domain("curvature is only classified in 1D");
    }
    let v = f.values();
    let tol = 1e-12 * (1.0 + f.sup_norm());
    let (mut up, mut down) = (false, false);
    for w in v.windows(3) {
        let d2 = w[0] - 2.0 * w[1] + w[2];
        up |= d2 > tol;
        down |= d2 < -tol;
    }
    Ok(match (up, down) {
        (false, false) => Curvature::Linear,
        (true, false) => Curvature::Convex,
        (false, true) => Curvature::Concave,
        (true, true) => Curvature::Neither,
    })
}

/// Solution of the G-heat equation with volatility in [σ_min, σ_max] for
/// convex (σ_max) or concave (σ_min) payoffs.
pub fn gheat_convex_reference(f: &GridFunction, sigma_min: f64, sigma_max: f64, t: f64) -> Result<GridFunction> {
    if !(0.0 <= sigma_min && sigma_min <= sigma_max) {
        return domain(format!("need 0 ≤ σ_min ≤ σ_max, got {sigma_min}, {sigma_max}"));
    }
    let sigma = match curvature(f)? {
        Curvature::Linear | Curvature::Convex => sigma_max,
        Curvature::Concave => sigma_min,
        Curvature::Neither => {
            return domain("payoff is neither convex nor concave; use the fine oracle");
        }
    };
    heat_exact(f, Spread::Scalar(sigma), Coords::Scalar(0.0), t)
}

/// Chernoff iterate at a fine step standing in for S(t)f.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub value: GridFunction,
    pub h_fine: f64,
    /// ‖oracle(h_fine) − oracle(2h_fine)‖_κ on the measurement region.
    pub uncertainty: f64,
}

pub fn fine_oracle(
    op: &dyn OneStepOperator,
    f: &GridFunction,
    t: f64,
    h_fine: f64,
    kappa: &WeightFunction,
    region: &Subdomain,
) -> Result<Oracle> {
    let (fine, coarse) = rayon::join(
        || chernoff_iterate(op, f, t, h_fine, false),
        || chernoff_iterate(op, f, t, 2.0 * h_fine, false),
    );
    let fine = fine?.result;
    let coarse = coarse?.result;
    let uncertainty = weighted_norm_on(&fine.sub(&coarse)?, kappa, region)?;
    Ok(Oracle {
        value: fine,
        h_fine,
        uncertainty,
    })
}

/// The volatility range of a sublinear family of centred 1D Gaussians.
pub fn sigma_range(ce: &ScenarioConvexExpectation) -> Result<(f64, f64)> {
    if ce.dim() != 1 || !ce.is_sublinear() {
        return domain("the limit reference needs a sublinear one-dimensional expectation");
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for s in ce.scenarios() {
        match &s.distribution {
            Distribution::Gaussian {
                mean,
                sigma: Spread::Scalar(v),
            } if mean.to_vec() == [0.0] => {
                lo = lo.min(v.abs());
                hi = hi.max(v.abs());
            }
            _ => return domain("the limit reference needs centred Gaussian scenarios"),
        }
    }
    Ok((lo, hi))
}

/// Ē[f(x + √t ζ)] for G-distributed ζ, as a G-heat solution at time t.
#[derive(Debug, Clone)]
pub struct LimitReference {
    pub value: GridFunction,
    pub uncertainty: f64,
    pub closed_form: bool,
}

/// Closed form for convex or concave f, otherwise the G-heat fine oracle
/// built from the extreme volatilities.
pub fn clt_limit_reference(
    ce: &ScenarioConvexExpectation,
    f: &GridFunction,
    t: f64,
    h_fine: f64,
    kappa: &WeightFunction,
    region: &Subdomain,
) -> Result<LimitReference> {
    let (lo, hi) = sigma_range(ce)?;
    match gheat_convex_reference(f, lo, hi, t) {
        Ok(value) => Ok(LimitReference {
            value,
            uncertainty: 0.0,
            closed_form: true,
        }),
        Err(Error::Domain(_)) => {
            let family = NisioFamily::new(
                [lo, hi]
                    .iter()
                    .map(|&s| Control {
                        sigma: Spread::Scalar(s),
                        m: Coords::Scalar(0.0),
                    })
                    .collect(),
            )?;
            let op = crate::iterate::StepOperator::Nisio(family);
            let o = fine_oracle(&op, f, t, h_fine, kappa, region)?;
            Ok(LimitReference {
                value: o.value,
                uncertainty: o.uncertainty,
                closed_form: false,
            })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::sync::Arc;

    fn line() -> Arc<Grid> {
        Arc::new(Grid::line(-12.0, 12.0, 4096).unwrap())
    }

    fn nearest(g: &Grid, x: f64) -> usize {
        ((x - g.lower()[0]) / g.spacing()[0]).round() as usize
    }

    #[test]
    fn heat_examples() {
        let g = line();
        let cos = GridFunction::from_fn(g.clone(), |x| x[0].cos()).unwrap();
        assert_eq!(heat_exact(&cos, Spread::Scalar(1.0), Coords::Scalar(0.0), 0.0).unwrap(), cos);
        let out = heat_exact(&cos, Spread::Scalar(1.0), Coords::Scalar(0.0), 0.7).unwrap();
        for i in (1000..3000).step_by(101) {
            let x = g.coord(0, i);
            // Interpolation error of cos is about Δx²/8.
            assert!((out.values()[i] - (-0.35f64).exp() * x.cos()).abs() < 5e-6);
        }
        let sq = GridFunction::from_fn(g.clone(), |x| x[0] * x[0]).unwrap();
        let out = heat_exact(&sq, Spread::Scalar(1.0), Coords::Scalar(0.0), 0.5).unwrap();
        let i = nearest(&g, 1.0);
        let x = g.coord(0, i);
        // The interpolant of x² exceeds it by at most Δx²/4.
        assert!((out.values()[i] - x * x - 0.5).abs() < 1e-5);
    }

    #[test]
    fn worst_case_volatility() {
        let g = line();
        let abs = GridFunction::from_fn(g.clone(), |x| x[0].abs()).unwrap();
        let out = gheat_convex_reference(&abs, 0.5, 1.0, 1.0).unwrap();
        let i = nearest(&g, 0.0);
        // Grid has an even count: x = 0 is half a cell from the nearest node.
        let x = g.coord(0, i);
        let exact = (2.0 / std::f64::consts::PI).sqrt() * (-x * x / 2.0).exp()
            + x * (1.0 - 2.0 * 0.5 * libm::erfc(x / std::f64::consts::SQRT_2));
        assert!((out.values()[i] - exact).abs() < 1e-5);
        let neg = GridFunction::from_fn(g.clone(), |x| -x[0] * x[0]).unwrap();
        let out = gheat_convex_reference(&neg, 0.5, 1.0, 1.0).unwrap();
        let j = nearest(&g, 1.0);
        let x = g.coord(0, j);
        assert!((out.values()[j] + x * x + 0.25).abs() < 1e-5);
        let capped = GridFunction::from_fn(g.clone(), |x| x[0].abs().min(1.0)).unwrap();
        assert!(gheat_convex_reference(&capped, 0.5, 1.0, 1.0).is_err());
        let lin = GridFunction::from_fn(g, |x| 2.0 * x[0]).unwrap();
        assert_eq!(curvature(&lin).unwrap(), Curvature::Linear);
    }

    #[test]
    fn oracle_at_zero_time_is_identity() {
        let g = line();
        let f = GridFunction::from_fn(g.clone(), |x| x[0].sin()).unwrap();
        let fam = NisioFamily::new(vec![Control {
            sigma: Spread::Scalar(1.0),
            m: Coords::Scalar(0.0),
        }])
        .unwrap();
        let op = crate::iterate::StepOperator::Nisio(fam);
        let kappa = WeightFunction::one(g.clone());
        let o = fine_oracle(&op, &f, 0.0, 1e-3, &kappa, &Subdomain::whole(&g)).unwrap();
        assert_eq!(o.value, f);
        assert_eq!(o.uncertainty, 0.0);
    }

    #[test]
    fn limit_falls_back_to_oracle_for_non_convex_payoffs() {
        use crate::convex_expectation::Scenario;
        let g = Arc::new(Grid::line(-8.0, 8.0, 1025).unwrap());
        let scenario = |s: f64| Scenario {
            distribution: Distribution::Gaussian {
                mean: Coords::Scalar(0.0),
                sigma: Spread::Scalar(s),
            },
            penalty: 0.0,
        };
        let ce = ScenarioConvexExpectation::new(vec![scenario(0.5), scenario(1.0)]).unwrap();
        let kappa = WeightFunction::one(g.clone());
        let region = Subdomain::interior(&g, 3.0).unwrap();
        let capped = GridFunction::from_fn(g.clone(), |x| x[0].abs().min(1.0)).unwrap();
        let lim = clt_limit_reference(&ce, &capped, 1.0, 2f64.powi(-8), &kappa, &region).unwrap();
        assert!(!lim.closed_form);
        assert!(lim.uncertainty > 0.0 && lim.uncertainty < 1e-2, "{}", lim.uncertainty);
        // Sandwiched between the linear expectations at the extreme volatilities.
        let lo = heat_exact(&capped, Spread::Scalar(0.5), Coords::Scalar(0.0), 1.0).unwrap();
        let hi = heat_exact(&capped, Spread::Scalar(1.0), Coords::Scalar(0.0), 1.0).unwrap();
        for i in region.mask(&g).iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i) {
            let v = lim.value.values()[i];
            assert!(v >= lo.values()[i].max(hi.values()[i]) - 1e-3);
        }
        let abs = GridFunction::from_fn(g, |x| x[0].abs()).unwrap();
        assert!(clt_limit_reference(&ce, &abs, 1.0, 1e-3, &kappa, &region).unwrap().closed_form);
    }
}
