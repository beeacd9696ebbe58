//! Grid stencils for expectation operators.
//!
//! A displacement law is sampled at quadrature nodes, and each node is split
//! multilinearly onto the neighbouring grid offsets. In 1D Gaussian laws skip
//! the nodes: each offset gets the exact expectation of its hat function, so
//! the step integrates the piecewise-linear interpolant exactly. On a uniform
//! grid the weights are the same at every point, so a one-step operator
//! reduces to a maximum over a few fixed stencils minus penalties.
//!
//! Interpolation adds variance to every step. Over many small steps this
//! numerical diffusion dominates, so Gaussian laws are by default sampled
//! with a reduced covariance chosen so that the stencil reproduces the
//! target covariance exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::grid::{Grid, GridFunction, MAX_DIM};
use crate::quadrature::GaussHermite;

/// Whether Gaussian stencils compensate the variance added by splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCorrection {
    None,
    #[default]
    MatchVariance,
}

/// Positive weights on grid offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    offsets: Vec<[isize; MAX_DIM]>,
    weights: Vec<f64>,
    flat: Vec<isize>,
    lo: [isize; MAX_DIM],
    hi: [isize; MAX_DIM],
}

const SNAP: f64 = 1e-9;

impl Stencil {
    /// Splits weighted displacements onto the grid.
    pub fn from_points(grid: &Grid, points: &[([f64; MAX_DIM], f64)]) -> Result<Self> {
        let d = grid.dim();
        let h = grid.spacing();
        let mut acc: BTreeMap<[isize; MAX_DIM], f64> = BTreeMap::new();
        for (y, w) in points {
            if !(w.is_finite() && *w >= 0.0) {
                return domain(format!("stencil weight {w} is not a finite non-negative number"));
            }
            if *w == 0.0 {
                continue;
            }
            let mut base = [0isize; MAX_DIM];
            let mut frac = [0.0; MAX_DIM];
            for a in 0..d {
                let p = y[a] / h[a];
                if !p.is_finite() || p.abs() > 1e9 {
                    return domain(format!("displacement {} is out of range", y[a]));
                }
                let r = p.round();
                let p = if (p - r).abs() < SNAP { r } else { p };
                let fl = p.floor();
                base[a] = fl as isize;
                frac[a] = p - fl;
            }
            let corners = if d == 1 { 2 } else { 4 };
            for c in 0..corners {
                let mut off = [0isize; MAX_DIM];
                let mut wc = *w;
                for a in 0..d {
                    let bit = (c >> a) & 1;
                    off[a] = base[a] + bit as isize;
                    wc *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                if wc > 0.0 {
                    *acc.entry(off).or_insert(0.0) += wc;
                }
            }
        }
        if acc.is_empty() {
            return domain("stencil has no mass");
        }
        let n1 = if d == 2 { grid.counts()[1] as isize } else { 1 };
        let mut lo = [0isize; MAX_DIM];
        let mut hi = [0isize; MAX_DIM];
        let mut offsets = Vec::with_capacity(acc.len());
        let mut weights = Vec::with_capacity(acc.len());
        let mut flat = Vec::with_capacity(acc.len());
        for (k, (o, w)) in acc.into_iter().enumerate() {
            for a in 0..d {
                if k == 0 || o[a] < lo[a] {
                    lo[a] = o[a];
                }
                if k == 0 || o[a] > hi[a] {
                    hi[a] = o[a];
                }
            }
            offsets.push(o);
            weights.push(w);
            flat.push(if d == 1 { o[0] } else { o[0] * n1 + o[1] });
        }
        Ok(Self {
            offsets,
            weights,
            flat,
            lo,
            hi,
        })
    }

    /// Gaussian displacement N(mean, LLᵀ) for a lower-triangular `factor`
    /// L, using a tensor Gauss–Hermite rule.
    pub fn gaussian(
        grid: &Grid,
        mean: [f64; MAX_DIM],
        factor: [[f64; MAX_DIM]; MAX_DIM],
        rule: &GaussHermite,
    ) -> Result<Self> {
        Self::from_points(grid, &gaussian_nodes(grid.dim(), mean, factor, rule))
    }

    /// Gaussian displacement with covariance `cov`, optionally compensating
    /// the split variance. In 1D the weights are exact integrals of the hat
    /// functions and `rule` is unused.
    pub fn gaussian_cov(
        grid: &Grid,
        mean: [f64; MAX_DIM],
        cov: [[f64; MAX_DIM]; MAX_DIM],
        rule: &GaussHermite,
        correction: SplitCorrection,
    ) -> Result<Self> {
        if grid.dim() == 1 {
            if cov[0][0] < 0.0 {
                return domain("variance must be non-negative");
            }
            let h = grid.spacing()[0];
            let s = match correction {
                SplitCorrection::None => cov[0][0].sqrt(),
                SplitCorrection::MatchVariance => matched_scale_1d(h, mean[0], cov[0][0]),
            };
            return Self::from_points(grid, &hat_weights_1d(h, mean[0], s));
        }
        let factor = match correction {
            SplitCorrection::None => cholesky(cov)?,
            SplitCorrection::MatchVariance => matched_factor_2d(grid, mean, cov, rule)?,
        };
        Self::gaussian(grid, mean, factor, rule)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offsets(&self) -> &[[isize; MAX_DIM]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean and covariance of the stencil as a law on grid displacements.
    pub fn moments(&self, grid: &Grid) -> ([f64; MAX_DIM], [[f64; MAX_DIM]; MAX_DIM]) {
        let h = grid.spacing();
        let d = grid.dim();
        let total: f64 = self.weights.iter().sum();
        let mut m = [0.0; MAX_DIM];
        for (o, w) in self.offsets.iter().zip(&self.weights) {
            for a in 0..d {
                m[a] += w * o[a] as f64 * h[a] / total;
            }
        }
        let mut c = [[0.0; MAX_DIM]; MAX_DIM];
        for (o, w) in self.offsets.iter().zip(&self.weights) {
            for a in 0..d {
                for b in 0..d {
                    c[a][b] += w * (o[a] as f64 * h[a] - m[a]) * (o[b] as f64 * h[b] - m[b]) / total;
                }
            }
        }
        (m, c)
    }

    #[inline]
    fn sum_1d(&self, v: &[f64], i: usize) -> f64 {
        let n = v.len() as isize;
        let ii = i as isize;
        if ii + self.lo[0] >= 0 && ii + self.hi[0] < n {
            let mut acc = 0.0;
            for (o, w) in self.flat.iter().zip(&self.weights) {
                acc += w * v[(ii + o) as usize];
            }
            acc
        } else {
            let mut acc = 0.0;
            for (o, w) in self.flat.iter().zip(&self.weights) {
                acc += w * v[(ii + o).clamp(0, n - 1) as usize];
            }
            acc
        }
    }

    #[inline]
    fn sum_2d(&self, v: &[f64], n0: isize, n1: isize, i0: isize, i1: isize) -> f64 {
        let inside = i0 + self.lo[0] >= 0
            && i0 + self.hi[0] < n0
            && i1 + self.lo[1] >= 0
            && i1 + self.hi[1] < n1;
        let mut acc = 0.0;
        if inside {
            let base = i0 * n1 + i1;
            for (o, w) in self.flat.iter().zip(&self.weights) {
                acc += w * v[(base + o) as usize];
            }
        } else {
            for (o, w) in self.offsets.iter().zip(&self.weights) {
                let a = (i0 + o[0]).clamp(0, n0 - 1);
                let b = (i1 + o[1]).clamp(0, n1 - 1);
                acc += w * v[(a * n1 + b) as usize];
            }
        }
        acc
    }
}

/// Tensor Gauss–Hermite nodes mean + L z.
pub fn gaussian_nodes(
    dim: usize,
    mean: [f64; MAX_DIM],
    factor: [[f64; MAX_DIM]; MAX_DIM],
    rule: &GaussHermite,
) -> Vec<([f64; MAX_DIM], f64)> {
    let mut out = Vec::new();
    if dim == 1 {
        for (z, w) in rule.nodes.iter().zip(&rule.weights) {
            out.push(([mean[0] + factor[0][0] * z, 0.0], *w));
        }
        return out;
    }
    for (z0, w0) in rule.nodes.iter().zip(&rule.weights) {
        for (z1, w1) in rule.nodes.iter().zip(&rule.weights) {
            let y0 = mean[0] + factor[0][0] * z0 + factor[0][1] * z1;
            let y1 = mean[1] + factor[1][0] * z0 + factor[1][1] * z1;
            out.push(([y0, y1], w0 * w1));
        }
    }
    out
}

/// Cholesky factor of a symmetric positive semidefinite matrix of size ≤ 2.
pub fn cholesky(c: [[f64; MAX_DIM]; MAX_DIM]) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
    let tol = 1e-12 * (1.0 + c[0][0].abs() + c[1][1].abs());
    if c[0][0] < -tol || c[1][1] < -tol || (c[0][1] - c[1][0]).abs() > tol {
        return domain("covariance is not symmetric positive semidefinite");
    }
    let l00 = c[0][0].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
    let rest = c[1][1] - l10 * l10;
    if rest < -tol {
        return domain("covariance is not positive semidefinite");
    }
    Ok([[l00, 0.0], [l10, rest.max(0.0).sqrt()]])
}

fn split_variance(frac: f64, h: f64) -> f64 {
    frac * (1.0 - frac) * h * h
}

fn frac_of(p: f64) -> f64 {
    let r = p.round();
    if (p - r).abs() < SNAP {
        0.0
    } else {
        p - p.floor()
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// E[(U − c)⁺] for U ~ N(a, b²), b > 0.
fn call_value(a: f64, b: f64, c: f64) -> f64 {
    let z = (a - c) / b;
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (a - c) * normal_cdf(z) + b * pdf
}

/// Second difference of c ↦ E[(U − c)⁺] at c = 0, i.e. E[hat(U)]. For
/// a > 0 the reflected form avoids cancelling large linear parts.
fn hat_expectation(a: f64, b: f64) -> f64 {
    let a = -a.abs();
    call_value(a, b, -1.0) - 2.0 * call_value(a, b, 0.0) + call_value(a, b, 1.0)
}

/// Weights E[hat(Y/h − j)] for Y ~ N(mean, s²): the exact Gaussian
/// expectation of the piecewise-linear interpolant.
fn hat_weights_1d(h: f64, mean: f64, s: f64) -> Vec<([f64; MAX_DIM], f64)> {
    if s <= 0.0 {
        return vec![([mean, 0.0], 1.0)];
    }
    let a = mean / h;
    let b = s / h;
    let lo = (a - 12.0 * b).floor() as isize - 1;
    let hi = (a + 12.0 * b).ceil() as isize + 1;
    (lo..=hi)
        .filter_map(|j| {
            let w = hat_expectation(a - j as f64, b);
            (w > 0.0).then_some(([j as f64 * h, 0.0], w))
        })
        .collect()
}

fn variance_of(points: &[([f64; MAX_DIM], f64)]) -> f64 {
    let total: f64 = points.iter().map(|p| p.1).sum();
    let m: f64 = points.iter().map(|p| p.1 * p.0[0]).sum::<f64>() / total;
    points.iter().map(|p| p.1 * (p.0[0] - m).powi(2)).sum::<f64>() / total
}

/// Scale s for which the exact interpolant weights have variance `var`.
/// Falls back to s = 0 if the split of the mean alone already exceeds it.
fn matched_scale_1d(h: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 0.0;
    }
    let total = |s: f64| variance_of(&hat_weights_1d(h, mean, s));
    if split_variance(frac_of(mean / h), h) >= var {
        return 0.0;
    }
    let (mut a, mut b) = (0.0, var.sqrt());
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if total(m) < var {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Two-dimensional analogue: the node covariance is the target minus the
/// diagonal split covariance, found by damped fixed-point iteration.
fn matched_factor_2d(
    grid: &Grid,
    mean: [f64; MAX_DIM],
    cov: [[f64; MAX_DIM]; MAX_DIM],
    rule: &GaussHermite,
) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
    let h = grid.spacing();
    let mut delta = [0.0; MAX_DIM];
    let mut factor = cholesky(cov)?;
    for _ in 0..40 {
        let c = [[cov[0][0] - delta[0], cov[0][1]], [cov[1][0], cov[1][1] - delta[1]]];
        let Ok(f) = cholesky(c) else {
            delta = [0.5 * delta[0], 0.5 * delta[1]];
            continue;
        };
        factor = f;
        let mut split = [0.0; MAX_DIM];
        for (y, w) in gaussian_nodes(2, mean, f, rule) {
            for a in 0..2 {
                split[a] += w * split_variance(frac_of(y[a] / h[a]), h[a]);
            }
        }
        let next = [0.5 * (delta[0] + split[0]), 0.5 * (delta[1] + split[1])];
        if (next[0] - delta[0]).abs() < 1e-15 && (next[1] - delta[1]).abs() < 1e-15 {
            break;
        }
        delta = next;
    }
    Ok(factor)
}

/// One branch of a step: a stencil and the penalty subtracted from it.
#[derive(Debug, Clone)]
pub struct Branch {
    pub stencil: Stencil,
    pub penalty: f64,
}

/// x ↦ max over branches of (Σ w f(x + offset) − penalty), prepared for a
/// fixed grid and step.
#[derive(Debug, Clone)]
pub struct StencilStep {
    grid: Arc<Grid>,
    branches: Vec<Branch>,
}

const CHUNK: usize = 512;

impl StencilStep {
    pub fn new(grid: Arc<Grid>, branches: Vec<Branch>) -> Result<Self> {
        if branches.is_empty() {
            return domain("a step needs at least one branch");
        }
        Ok(Self { grid, branches })
    }

    /// The identity step.
    pub fn identity(grid: Arc<Grid>) -> Result<Self> {
        let s = Stencil::from_points(&grid, &[([0.0; MAX_DIM], 1.0)])?;
        Self::new(
            grid,
            vec![Branch {
                stencil: s,
                penalty: 0.0,
            }],
        )
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Largest offset of any stencil, in cells along one axis.
    pub fn reach(&self) -> usize {
        self.branches
            .iter()
            .flat_map(|b| b.stencil.offsets())
            .flat_map(|o| o.iter().map(|v| v.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        self.grid.check_same(f.grid())?;
        let v = f.values();
        let mut out = vec![0.0; v.len()];
        let branches = &self.branches;
        if self.grid.dim() == 1 {
            out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                for (k, o) in chunk.iter_mut().enumerate() {
                    let i = c * CHUNK + k;
                    let mut best = f64::NEG_INFINITY;
                    for b in branches {
                        best = best.max(b.stencil.sum_1d(v, i) - b.penalty);
                    }
                    *o = best;
                }
            });
        } else {
            let n0 = self.grid.counts()[0] as isize;
            let n1 = self.grid.counts()[1] as isize;
            out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
                for (k, o) in chunk.iter_mut().enumerate() {
                    let flat = (c * CHUNK + k) as isize;
                    let (i0, i1) = (flat / n1, flat % n1);
                    let mut best = f64::NEG_INFINITY;
                    for b in branches {
                        best = best.max(b.stencil.sum_2d(v, n0, n1, i0, i1) - b.penalty);
                    }
                    *o = best;
                }
            });
        }
        GridFunction::new(self.grid.clone(), out)
    }
}
