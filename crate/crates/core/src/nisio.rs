//! Gaussian control families: I(t)f(x) = max over (σ, m) of E f(x + σW_t + mt).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convex_expectation::{Coords, Spread};
use crate::error::{domain, Result};
use crate::grid::{Grid, GridFunction, Subdomain, MAX_DIM};
use crate::quadrature::GaussHermite;
use crate::stencil::{Branch, SplitCorrection, Stencil, StencilStep};

/// Gauss–Hermite nodes per axis for the Gaussian step.
pub const DEFAULT_NODES: usize = 32;

/// One control (σ, m) with generator ½ tr(σσᵀ D²f) + mᵀDf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub sigma: Spread,
    #[serde(default = "zero_drift")]
    pub m: Coords,
}

fn zero_drift() -> Coords {
    Coords::Scalar(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Coefficients {
    drift: [f64; MAX_DIM],
    /// σσᵀ
    cov: [[f64; MAX_DIM]; MAX_DIM],
}

/// Constants bounding the generators and their Lipschitz moduli.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorBounds {
    /// v₁, v₂ with ‖A_λf‖ ≤ Σ vᵢ d^{-i/2} ‖Dⁱf‖.
    pub v: [f64; 2],
    /// w₁..w₃ with A_λf ∈ Lip_b(Σ wᵢ d^{-i/2} ‖Dⁱf‖).
    pub w: [f64; 3],
    /// ṽ₁..ṽ₄ bounding A_λ²f, present when smooth coefficients are assumed.
    pub v_tilde: Option<[f64; 4]>,
    pub omega: f64,
    /// Translation constant L.
    pub shift: f64,
}

impl GeneratorBounds {
    pub fn is_first_order(&self) -> bool {
        self.v[1] == 0.0 && self.w[2] == 0.0
    }
}

/// A finite family of constant-coefficient Gaussian controls.
#[derive(Debug, Clone)]
pub struct NisioFamily {
    dim: usize,
    controls: Vec<Control>,
    coeffs: Vec<Coefficients>,
    rule: GaussHermite,
    correction: SplitCorrection,
    smooth: bool,
}

/// Polynomial in the partial derivatives: coefficient of ∂₀^a ∂₁^b at [a][b].
type DiffPoly = [[f64; 5]; 5];

impl NisioFamily {
    pub fn new(controls: Vec<Control>) -> Result<Self> {
        Self::with_nodes(controls, DEFAULT_NODES)
    }

    pub fn with_nodes(controls: Vec<Control>, nodes: usize) -> Result<Self> {
        if controls.is_empty() {
            return domain("a control family needs at least one control");
        }
        if !(1..=256).contains(&nodes) {
            return domain(format!("quadrature node count {nodes} out of range"));
        }
        let dim = controls[0].m.to_vec().len();
        if dim == 0 || dim > MAX_DIM {
            return domain(format!("control dimension must be 1 or 2, got {dim}"));
        }
        let mut coeffs = Vec::with_capacity(controls.len());
        for (i, c) in controls.iter().enumerate() {
            let m = c.m.to_vec();
            if m.len() != dim {
                return domain(format!("control {i}: drift has {} entries, expected {dim}", m.len()));
            }
            let mut drift = [0.0; MAX_DIM];
            drift[..dim].copy_from_slice(&m);
            let mut sigma = [[0.0; MAX_DIM]; MAX_DIM];
            match &c.sigma {
                Spread::Scalar(s) => {
                    for (a, row) in sigma.iter_mut().enumerate().take(dim) {
                        row[a] = *s;
                    }
                }
                Spread::Matrix(rows) => {
                    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                        return domain(format!("control {i}: sigma must be {dim}x{dim}"));
                    }
                    for a in 0..dim {
                        for b in 0..dim {
                            sigma[a][b] = rows[a][b];
                        }
                    }
                }
            }
            if drift.iter().chain(sigma.iter().flatten()).any(|v| !v.is_finite()) {
                return domain(format!("control {i}: coefficients must be finite"));
            }
            let mut cov = [[0.0; MAX_DIM]; MAX_DIM];
            for a in 0..MAX_DIM {
                for b in 0..MAX_DIM {
                    cov[a][b] = (0..MAX_DIM).map(|k| sigma[a][k] * sigma[b][k]).sum();
                }
            }
            coeffs.push(Coefficients { drift, cov });
        }
        Ok(Self {
            dim,
            controls,
            coeffs,
            rule: GaussHermite::new(nodes),
            correction: SplitCorrection::default(),
            smooth: false,
        })
    }

    /// Marks the coefficients as smooth, enabling the ṽ constants. Constant
    /// coefficients always qualify, so this only records the caller's choice.
    pub fn assume_smooth_coefficients(mut self, smooth: bool) -> Self {
        self.smooth = smooth;
        self
    }

    pub fn with_correction(mut self, correction: SplitCorrection) -> Self {
        self.correction = correction;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn controls(&self) -> &[Control] {
        &self.controls
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.rule.len()
    }

    pub fn smooth(&self) -> bool {
        self.smooth
    }

    /// max over controls of the largest standard deviation along an axis.
    pub fn sigma_max(&self) -> f64 {
        self.coeffs
            .iter()
            .flat_map(|c| (0..self.dim).map(move |a| c.cov[a][a].sqrt()))
            .fold(0.0, f64::max)
    }

    pub fn drift_max(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| (c.drift[0] * c.drift[0] + c.drift[1] * c.drift[1]).sqrt())
            .fold(0.0, f64::max)
    }

    fn generator_poly(&self, c: &Coefficients) -> DiffPoly {
        let mut p = [[0.0; 5]; 5];
        p[1][0] = c.drift[0];
        p[2][0] = 0.5 * c.cov[0][0];
        if self.dim == 2 {
            p[0][1] = c.drift[1];
            p[1][1] = 0.5 * (c.cov[0][1] + c.cov[1][0]);
            p[0][2] = 0.5 * c.cov[1][1];
        }
        p
    }

    /// Euclidean norm of the order-`l` coefficients; each multi-index counted once.
    fn order_norm(p: &DiffPoly, l: usize) -> f64 {
        let mut s = 0.0;
        for (a, row) in p.iter().enumerate() {
            if a <= l && l - a < 5 {
                s += row[l - a] * row[l - a];
            }
        }
        s.sqrt()
    }

    fn square(p: &DiffPoly) -> DiffPoly {
        let mut q = [[0.0; 5]; 5];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        q[a + c][b + d] += p[a][b] * p[c][d];
                    }
                }
            }
        }
        q
    }

    /// Bounds derived from the coefficients; ω = 0 and L = 0 since the
    /// steps are translation invariant sup-norm contractions.
    pub fn generator_bounds(&self) -> GeneratorBounds {
        let d = self.dim as f64;
        let mut v = [0.0_f64; 2];
        let mut w = [0.0_f64; 3];
        let mut vt = [0.0_f64; 4];
        for c in &self.coeffs {
            let p = self.generator_poly(c);
            let n: Vec<f64> = (0..=4).map(|l| Self::order_norm(&p, l)).collect();
            for i in 1..=2 {
                v[i - 1] = v[i - 1].max(d.powf(i as f64 / 2.0) * n[i]);
            }
            // sup|Af| ≤ Σ |aˡ| ‖Dˡf‖ and |D(Af)| ≤ √d Σ |aˡ| ‖Dˡ⁺¹f‖.
            for i in 1..=3 {
                let coef = n[i] + d.sqrt() * n[i - 1];
                w[i - 1] = w[i - 1].max(d.powf(i as f64 / 2.0) * coef);
            }
            let sq = Self::square(&p);
            for i in 1..=4 {
                vt[i - 1] = vt[i - 1].max(d.powf(i as f64 / 2.0) * Self::order_norm(&sq, i));
            }
        }
        GeneratorBounds {
            v,
            w,
            v_tilde: self.smooth.then_some(vt),
            omega: 0.0,
            shift: 0.0,
        }
    }

    fn control_stencil(&self, grid: &Grid, c: &Coefficients, t: f64) -> Result<Stencil> {
        let mean = [c.drift[0] * t, c.drift[1] * t];
        let mut cov = c.cov;
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v *= t;
            }
        }
        if cov.iter().flatten().all(|v| *v == 0.0) {
            return Stencil::from_points(grid, &[(mean, 1.0)]);
        }
        Stencil::gaussian_cov(grid, mean, cov, &self.rule, self.correction)
    }

    /// The step I(t) prepared for a grid.
    pub fn operator(&self, grid: &Arc<Grid>, t: f64) -> Result<StencilStep> {
        if !(t.is_finite() && t >= 0.0) {
            return domain(format!("time must be finite and ≥ 0, got {t}"));
        }
        if grid.dim() != self.dim {
            return domain("grid and control dimensions differ");
        }
        if t == 0.0 {
            return StencilStep::identity(grid.clone());
        }
        let branches = self
            .coeffs
            .iter()
            .map(|c| {
                Ok(Branch {
                    stencil: self.control_stencil(grid, c, t)?,
                    penalty: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        StencilStep::new(grid.clone(), branches)
    }

    /// (I(t)f)(x) = max over controls of E f(x + σW_t + mt).
    pub fn nisio_step(&self, f: &GridFunction, t: f64) -> Result<GridFunction> {
        if t == 0.0 {
            return Ok(f.clone());
        }
        self.operator(f.grid(), t)?.apply(f)
    }

    /// Finite-difference generator max_λ (½ tr(σσᵀD²f) + mᵀDf) on points at
    /// least two cells from the boundary; other points are masked out.
    pub fn generator_apply(&self, f: &GridFunction) -> Result<MaskedFunction> {
        let grid = f.grid();
        if grid.dim() != self.dim {
            return domain("grid and control dimensions differ");
        }
        let derivs = finite_differences(f);
        let mut values = vec![0.0; grid.len()];
        for (k, dv) in derivs.iter().enumerate() {
            let Some(dv) = dv else { continue };
            values[k] = self
                .coeffs
                .iter()
                .map(|c| {
                    let mut a = 0.0;
                    for p in 0..self.dim {
                        a += c.drift[p] * dv.grad[p];
                        for q in 0..self.dim {
                            a += 0.5 * c.cov[p][q] * dv.hess[p][q];
                        }
                    }
                    a
                })
                .fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(MaskedFunction {
            values: GridFunction::new(grid.clone(), values)?,
            mask: derivs.iter().map(Option::is_some).collect(),
        })
    }

    /// ‖(I(h)f − f)/h‖ on the interior against its cap
    /// v₁d^{-1/2}‖Df‖ + v₂d^{-1}‖D²f‖ from finite differences.
    pub fn consistency_residual(&self, f: &GridFunction, h: f64, tol: f64) -> Result<ConsistencyResidual> {
        if !(h.is_finite() && h > 0.0) {
            return domain(format!("step must be positive, got {h}"));
        }
        let grid = f.grid();
        let stepped = self.nisio_step(f, h)?;
        let reach = self.drift_max() * h + 8.0 * self.sigma_max() * h.sqrt();
        let margin = reach + 3.0 * grid.spacing().iter().cloned().fold(0.0, f64::max);
        let region = Subdomain::interior(grid, margin)?;
        let mask = region.mask(grid);
        let derivs = finite_differences(f);
        let (mut residual, mut d1, mut d2) = (0.0_f64, 0.0_f64, 0.0_f64);
        for k in 0..grid.len() {
            if !mask[k] {
                continue;
            }
            residual = residual.max(((stepped.values()[k] - f.values()[k]) / h).abs());
            if let Some(dv) = &derivs[k] {
                d1 = d1.max(dv.grad.iter().map(|v| v * v).sum::<f64>().sqrt());
                let mut s = 0.0;
                for p in 0..self.dim {
                    for q in p..self.dim {
                        s += dv.hess[p][q] * dv.hess[p][q];
                    }
                }
                d2 = d2.max(s.sqrt());
            }
        }
        let b = self.generator_bounds();
        let d = self.dim as f64;
        let cap = b.v[0] * d.powf(-0.5) * d1 + b.v[1] / d * d2;
        Ok(ConsistencyResidual {
            residual,
            cap,
            pass: residual <= cap * (1.0 + tol) + 1e-12,
        })
    }
}

/// (I(t)f) for a single control.
pub fn linear_step(sigma: Spread, m: Coords, f: &GridFunction, t: f64) -> Result<GridFunction> {
    NisioFamily::new(vec![Control { sigma, m }])?.nisio_step(f, t)
}

/// Values with a validity mask.
#[derive(Debug, Clone)]
pub struct MaskedFunction {
    pub values: GridFunction,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyResidual {
    pub residual: f64,
    pub cap: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
struct PointDerivatives {
    grad: [f64; MAX_DIM],
    hess: [[f64; MAX_DIM]; MAX_DIM],
}

/// Central differences at points at least two cells from every edge.
fn finite_differences(f: &GridFunction) -> Vec<Option<PointDerivatives>> {
    let grid = f.grid();
    let d = grid.dim();
    let n = grid.counts();
    let h = grid.spacing();
    let at = |i: [isize; MAX_DIM]| f.at_clamped(i);
    (0..grid.len())
        .map(|k| {
            let idx = grid.multi_index(k);
            for a in 0..d {
                if idx[a] < 2 || idx[a] + 2 >= n[a] {
                    return None;
                }
            }
            let c = [idx[0] as isize, idx[1] as isize];
            let mut grad = [0.0; MAX_DIM];
            let mut hess = [[0.0; MAX_DIM]; MAX_DIM];
            for a in 0..d {
                let mut p = c;
                let mut m = c;
                p[a] += 1;
                m[a] -= 1;
                grad[a] = (at(p) - at(m)) / (2.0 * h[a]);
                hess[a][a] = (at(p) - 2.0 * at(c) + at(m)) / (h[a] * h[a]);
            }
            if d == 2 {
                let v = (at([c[0] + 1, c[1] + 1]) - at([c[0] + 1, c[1] - 1]) - at([c[0] - 1, c[1] + 1])
                    + at([c[0] - 1, c[1] - 1]))
                    / (4.0 * h[0] * h[1]);
                hess[0][1] = v;
                hess[1][0] = v;
            }
            Some(PointDerivatives { grad, hess })
        })
        .collect()
}
