//! Space-time mollification with a tensor-product bump kernel.
//!
//! The kernel is η(s, y) = C·β(2s − 1)·Π β(√d·yᵢ) with β(z) = exp(−1/(1 − z²))
//! on |z| < 1. It is supported in [0,1] × B(1), has unit mass, and the time
//! factor looks forward: u^ε(t, x) averages u over [t, t + ε₁].

use std::sync::Arc;

use serde::Serialize;

use crate::error::{domain, Result};
use crate::grid::{Grid, GridFunction, SpaceTimeFunction, Subdomain, MAX_DIM};
use crate::quadrature;

/// Highest time-derivative order with a tabulated constant.
pub const MAX_TIME_ORDER: usize = 2;
/// Highest space-derivative order with a tabulated constant.
pub const MAX_SPACE_ORDER: usize = 3;

const CELLS: usize = 64;
const CELL_TOL: f64 = 1e-13;

/// k-th derivative of β.
pub fn bump_derivative(k: usize, z: f64) -> f64 {
    let u = 1.0 - z * z;
    // exp(−1/u) underflows to zero well before u reaches this.
    if u <= 1.2e-3 {
        return 0.0;
    }
    let b = (-1.0 / u).exp();
    match k {
        0 => b,
        1 => -2.0 * z / (u * u) * b,
        2 => 2.0 * (3.0 * z.powi(4) - 1.0) / u.powi(4) * b,
        3 => {
            let z2 = z * z;
            -4.0 * z * (((6.0 * z2 + 3.0) * z2 - 10.0) * z2 + 3.0) / u.powi(6) * b
        }
        _ => panic!("bump derivative of order {k} is not implemented"),
    }
}

/// The bump kernel in `dim` space dimensions with its table of L1 constants.
#[derive(Debug, Clone, Serialize)]
pub struct MollifierKernel {
    dim: usize,
    /// ∫|β^{(j)}| for j = 0..=3.
    bump_l1: [f64; 4],
    norm: f64,
    /// b[k][l] = max over |α| = l of ‖∂_t^k D^α η‖_{L1}.
    b: [[f64; MAX_SPACE_ORDER + 1]; MAX_TIME_ORDER + 1],
}

impl MollifierKernel {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return domain(format!("kernel dimension must be 1 or 2, got {dim}"));
        }
        let mut bump_l1 = [0.0; 4];
        for (j, v) in bump_l1.iter_mut().enumerate() {
            *v = quadrature::integrate(|z| bump_derivative(j, z).abs(), -1.0, 1.0, CELLS, CELL_TOL);
        }
        let d = dim as f64;
        let mass = bump_l1[0];
        // ∫β(2s−1)ds = mass/2 and ∫β(√d y)dy = mass/√d.
        let norm = 1.0 / (0.5 * mass * (mass / d.sqrt()).powi(dim as i32));
        let mut b = [[0.0; MAX_SPACE_ORDER + 1]; MAX_TIME_ORDER + 1];
        for (k, row) in b.iter_mut().enumerate() {
            let time = 2f64.powi(k as i32) * bump_l1[k] / mass;
            for (l, v) in row.iter_mut().enumerate() {
                let space = multi_indices(dim, l)
                    .iter()
                    .map(|alpha| {
                        alpha[..dim]
                            .iter()
                            .map(|&a| bump_l1[a] / mass)
                            .product::<f64>()
                    })
                    .fold(0.0, f64::max);
                *v = time * d.powf(0.5 * l as f64) * space;
            }
        }
        Ok(Self {
            dim,
            bump_l1,
            norm,
            b,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// η(s, y).
    pub fn eval(&self, s: f64, y: &[f64]) -> f64 {
        self.derivative(0, &[0, 0], s, y)
    }

    /// ∂_s^k D^α η(s, y), computed from the closed-form bump derivatives.
    pub fn derivative(&self, k: usize, alpha: &[usize], s: f64, y: &[f64]) -> f64 {
        let sd = (self.dim as f64).sqrt();
        let mut v = self.norm * 2f64.powi(k as i32) * bump_derivative(k, 2.0 * s - 1.0);
        for i in 0..self.dim {
            v *= sd.powi(alpha[i] as i32) * bump_derivative(alpha[i], sd * y[i]);
        }
        v
    }

    /// The constant b_{k,l}; b_{0,0} = 1.
    pub fn kernel_constant(&self, k: usize, l: usize) -> Result<f64> {
        if k > MAX_TIME_ORDER || l > MAX_SPACE_ORDER {
            return domain(format!(
                "b_{{{k},{l}}} is tabulated only for k ≤ {MAX_TIME_ORDER}, l ≤ {MAX_SPACE_ORDER}"
            ));
        }
        Ok(self.b[k][l])
    }

    /// ∫|β^{(j)}| over (−1, 1).
    pub fn bump_l1(&self, j: usize) -> f64 {
        self.bump_l1[j]
    }

    /// The table as CSV with columns `k,l,value`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("k,l,value\n");
        for k in 0..=MAX_TIME_ORDER {
            for l in 0..=MAX_SPACE_ORDER {
                out.push_str(&format!("{k},{l},{}\n", self.b[k][l]));
            }
        }
        out
    }
}

/// Multi-indices α ∈ ℕ₀^dim with |α| = order.
pub fn multi_indices(dim: usize, order: usize) -> Vec<[usize; MAX_DIM]> {
    match dim {
        1 => vec![[order, 0]],
        _ => (0..=order).map(|a| [a, order - a]).collect(),
    }
}

/// Mollification radii: ε₁ in time, ε₂ in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Epsilon {
    pub time: f64,
    pub space: f64,
}

impl Epsilon {
    pub fn new(time: f64, space: f64) -> Result<Self> {
        if !(time > 0.0 && space > 0.0 && time.is_finite() && space.is_finite()) {
            return domain(format!("radii must be positive, got ({time}, {space})"));
        }
        Ok(Self { time, space })
    }
}

/// Normalized time weights for the output time t. The data samples act as
/// quadrature nodes with trapezoid weights.
fn time_weights(profile: impl Fn(f64) -> f64, times: &[f64], t: f64, eps1: f64) -> Result<Vec<(usize, f64)>> {
    let last = *times.last().unwrap();
    if t + eps1 > last + 1e-12 || t < times[0] - 1e-12 {
        return domain(format!(
            "trajectory covers [{}, {last}] but [{t}, {}] is needed",
            times[0],
            t + eps1
        ));
    }
    let n = times.len();
    let mut out = Vec::new();
    for a in 0..n {
        let s = times[a] - t;
        if s <= 0.0 || s >= eps1 {
            continue;
        }
        let left = if a > 0 { times[a] - times[a - 1] } else { 0.0 };
        let right = if a + 1 < n { times[a + 1] - times[a] } else { 0.0 };
        let w = 0.5 * (left + right) * profile(s / eps1);
        if w > 0.0 {
            out.push((a, w));
        }
    }
    if out.len() < 3 {
        return domain(format!(
            "only {} time samples inside (t, t + ε₁); refine the trajectory or enlarge ε₁",
            out.len()
        ));
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in &mut out {
        p.1 /= total;
    }
    Ok(out)
}

/// Normalized spatial weights on grid offsets along one axis.
fn space_weights(dim: usize, spacing: f64, eps2: f64) -> Result<Vec<(isize, f64)>> {
    let sd = (dim as f64).sqrt();
    let reach = (eps2 / (sd * spacing)).ceil() as isize;
    let mut out = Vec::new();
    for j in -reach..=reach {
        let w = bump_derivative(0, sd * j as f64 * spacing / eps2);
        if w > 0.0 {
            out.push((j, w));
        }
    }
    if out.len() < 3 {
        return domain(format!(
            "ε₂ = {eps2} spans fewer than 3 grid points at spacing {spacing}"
        ));
    }
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in &mut out {
        p.1 /= total;
    }
    Ok(out)
}

fn convolve_axis(grid: &Grid, values: &[f64], axis: usize, weights: &[(isize, f64)]) -> Vec<f64> {
    let c = grid.counts();
    let mut out = vec![0.0; values.len()];
    if grid.dim() == 1 {
        let n = c[0] as isize;
        for (i, o) in out.iter_mut().enumerate() {
            *o = weights
                .iter()
                .map(|&(j, w)| w * values[(i as isize + j).clamp(0, n - 1) as usize])
                .sum();
        }
        return out;
    }
    let (n0, n1) = (c[0] as isize, c[1] as isize);
    for i0 in 0..n0 {
        for i1 in 0..n1 {
            let mut acc = 0.0;
            for &(j, w) in weights {
                let (a, b) = if axis == 0 {
                    ((i0 + j).clamp(0, n0 - 1), i1)
                } else {
                    (i0, (i1 + j).clamp(0, n1 - 1))
                };
                acc += w * values[(a * n1 + b) as usize];
            }
            out[(i0 * n1 + i1) as usize] = acc;
        }
    }
    out
}

/// u^ε(t, x) = ∫ u(t + s, x + y) η^ε(s, y) ds dy at the requested times.
///
/// The integral is a quadrature over the data samples: trapezoid weights in
/// time, grid weights in space, normalized to unit mass. The result is
/// therefore a smooth function of (t, x) that preserves constants exactly.
pub fn mollify(
    kernel: &MollifierKernel,
    u: &SpaceTimeFunction,
    eps: Epsilon,
    times: &[f64],
) -> Result<SpaceTimeFunction> {
    let grid: Arc<Grid> = u.grid().clone();
    if grid.dim() != kernel.dim() {
        return domain("kernel and grid dimensions differ");
    }
    let axis_weights: Vec<Vec<(isize, f64)>> = (0..grid.dim())
        .map(|a| space_weights(grid.dim(), grid.spacing()[a], eps.space))
        .collect::<Result<_>>()?;
    let mut slices = Vec::with_capacity(times.len());
    for &t in times {
        let tw = time_weights(|z| bump_derivative(0, 2.0 * z - 1.0), u.times(), t, eps.time)?;
        let mut acc = vec![0.0; grid.len()];
        for &(a, w) in &tw {
            for (o, v) in acc.iter_mut().zip(u.slices()[a].values()) {
                *o += w * v;
            }
        }
        for (a, wts) in axis_weights.iter().enumerate() {
            acc = convolve_axis(&grid, &acc, a, wts);
        }
        slices.push(GridFunction::new(grid.clone(), acc)?);
    }
    SpaceTimeFunction::new(times.to_vec(), slices)
}

/// Outcome of a derivative-bound comparison.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub k: usize,
    pub l: usize,
    pub measured: f64,
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// Tolerance factor applied to the measured/bound ratio.
pub const DERIVATIVE_TOLERANCE: f64 = 1.05;

fn fd_coefficients(order: usize) -> &'static [(isize, f64)] {
    match order {
        0 => &[(0, 1.0)],
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        _ => unreachable!(),
    }
}

/// sup over evaluation times and interior points of the finite-difference
/// |∂_t^k D^l u^ε|, with D^l the Euclidean norm over multi-indices.
fn measure_derivative(
    kernel: &MollifierKernel,
    u: &SpaceTimeFunction,
    eps: Epsilon,
    k: usize,
    l: usize,
    eval_times: &[f64],
    region: Option<&Subdomain>,
) -> Result<f64> {
    let grid = u.grid().clone();
    let d = grid.dim();
    let dts: Vec<f64> = u.times().windows(2).map(|w| w[1] - w[0]).collect();
    if k > 0 && dts.is_empty() {
        return domain("time derivatives need at least two samples");
    }
    let tau = if dts.is_empty() {
        0.0
    } else {
        let mut s = dts.clone();
        s.sort_by(f64::total_cmp);
        s[s.len() / 2]
    };
    let mask = region.map(|r| r.mask(&grid));
    let c = grid.counts();
    let mut sup = 0.0_f64;
    for &t in eval_times {
        let stencil = fd_coefficients(k);
        let times: Vec<f64> = stencil.iter().map(|&(j, _)| t + j as f64 * tau).collect();
        let moll = mollify(kernel, u, eps, &times)?;
        let mut g = vec![0.0; grid.len()];
        for (slice, &(_, w)) in moll.slices().iter().zip(stencil) {
            for (o, v) in g.iter_mut().zip(slice.values()) {
                *o += w * v;
            }
        }
        let tscale = tau.powi(k as i32);
        for v in &mut g {
            *v /= tscale;
        }
        let alphas = multi_indices(d, l);
        let derivs: Vec<Vec<f64>> = alphas
            .iter()
            .map(|alpha| space_derivative(&grid, &g, alpha))
            .collect();
        for flat in 0..grid.len() {
            let idx = grid.multi_index(flat);
            if (0..d).any(|a| idx[a] < 2 || idx[a] + 2 >= c[a]) {
                continue;
            }
            if let Some(m) = &mask {
                if !m[flat] {
                    continue;
                }
            }
            let norm = derivs.iter().map(|dv| dv[flat] * dv[flat]).sum::<f64>().sqrt();
            sup = sup.max(norm);
        }
    }
    Ok(sup)
}

fn space_derivative(grid: &Grid, g: &[f64], alpha: &[usize; MAX_DIM]) -> Vec<f64> {
    let mut cur = g.to_vec();
    for (a, &order) in alpha.iter().enumerate().take(grid.dim()) {
        if order == 0 {
            continue;
        }
        let h = grid.spacing()[a].powi(order as i32);
        let coeffs: Vec<(isize, f64)> = fd_coefficients(order)
            .iter()
            .map(|&(j, w)| (j, w / h))
            .collect();
        cur = convolve_axis(grid, &cur, a, &coeffs);
    }
    cur
}

fn finish(k: usize, l: usize, measured: f64, bound: f64) -> DerivativeCheck {
    let ratio = if bound > 0.0 { measured / bound } else { f64::INFINITY };
    DerivativeCheck {
        k,
        l,
        measured,
        bound,
        ratio,
        pass: ratio <= DERIVATIVE_TOLERANCE,
    }
}

/// Compares finite-difference derivatives of u^ε with
/// d^{l/2}·r·b_{k,l−1}·ε₁^{−k}·ε₂^{1−l}, where `r` bounds the Lipschitz
/// radius of u on the time window used. Requires l ≥ 1.
#[allow(clippy::too_many_arguments)]
pub fn derivative_bound_check(
    kernel: &MollifierKernel,
    u: &SpaceTimeFunction,
    eps: Epsilon,
    k: usize,
    l: usize,
    r: f64,
    eval_times: &[f64],
    region: Option<&Subdomain>,
) -> Result<DerivativeCheck> {
    if l == 0 {
        return domain("this bound moves one space derivative onto u and needs l ≥ 1");
    }
    if l > MAX_SPACE_ORDER + 1 {
        return domain(format!("l = {l} exceeds the tabulated range"));
    }
    let b = kernel.kernel_constant(k, l - 1)?;
    let d = kernel.dim() as f64;
    let bound = d.powf(0.5 * l as f64)
        * r
        * b
        * eps.time.powi(-(k as i32))
        * eps.space.powi(1 - l as i32);
    let measured = measure_derivative(kernel, u, eps, k, l, eval_times, region)?;
    Ok(finish(k, l, measured, bound))
}

/// Time-regularity data of a trajectory: ‖u(s) − u(t)‖ ≤ c(|s − t| + h)^α
/// and u(t) ∈ Lip_b(e^{ωt} r).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderData {
    pub c_kappa: f64,
    pub c: f64,
    pub alpha: f64,
    pub omega: f64,
    pub r: f64,
    /// Step of a discrete trajectory, zero for the semigroup itself.
    pub h: f64,
}

/// Compares finite-difference derivatives of u^ε with
/// d^{l/2}(c_κ c (ε₁ + h)^α + e^{ωt} r ε₂) b_{k,l} ε₁^{−k} ε₂^{−l}.
/// Covers l = 0; (k, l) = (0, 0) is rejected.
#[allow(clippy::too_many_arguments)]
pub fn holder_derivative_bound_check(
    kernel: &MollifierKernel,
    u: &SpaceTimeFunction,
    eps: Epsilon,
    k: usize,
    l: usize,
    data: HolderData,
    eval_times: &[f64],
    region: Option<&Subdomain>,
) -> Result<DerivativeCheck> {
    if k == 0 && l == 0 {
        return domain("(k, l) = (0, 0) asks for no derivative");
    }
    let b = kernel.kernel_constant(k, l)?;
    let d = kernel.dim() as f64;
    let t_max = eval_times.iter().cloned().fold(0.0, f64::max);
    let bound = d.powf(0.5 * l as f64)
        * (data.c_kappa * data.c * (eps.time + data.h).powf(data.alpha)
            + (data.omega * t_max).exp() * data.r * eps.space)
        * b
        * eps.time.powi(-(k as i32))
        * eps.space.powi(-(l as i32));
    let measured = measure_derivative(kernel, u, eps, k, l, eval_times, region)?;
    Ok(finish(k, l, measured, bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_mass_and_identity_constant() {
        for d in [1, 2] {
            let k = MollifierKernel::new(d).unwrap();
            assert!((k.kernel_constant(0, 0).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn first_space_constant_is_twice_peak_marginal() {
        let k = MollifierKernel::new(1).unwrap();
        // ∫|∂_y η| = 2∫η(s, 0)ds for a kernel unimodal in y.
        let peak = quadrature::integrate(|s| k.eval(s, &[0.0]), 0.0, 1.0, 16, 1e-14);
        assert!((k.kernel_constant(0, 1).unwrap() - 2.0 * peak).abs() < 1e-10);
    }

    #[test]
    fn rejects_untabulated_orders() {
        let k = MollifierKernel::new(1).unwrap();
        assert!(k.kernel_constant(3, 0).is_err());
        assert!(k.kernel_constant(0, 4).is_err());
    }

    #[test]
    fn derivatives_match_differences() {
        for j in 1..=3 {
            for &z in &[-0.7, -0.2, 0.1, 0.55] {
                let h = 1e-5;
                let fd = (bump_derivative(j - 1, z + h) - bump_derivative(j - 1, z - h)) / (2.0 * h);
                let ex = bump_derivative(j, z);
                assert!((fd - ex).abs() < 1e-6 * (1.0 + ex.abs()), "j={j} z={z}");
            }
        }
    }

    #[test]
    fn support_is_forward_in_time() {
        let k = MollifierKernel::new(1).unwrap();
        assert_eq!(k.eval(-0.1, &[0.0]), 0.0);
        assert_eq!(k.eval(0.5, &[1.0]), 0.0);
        assert!(k.eval(0.5, &[0.0]) > 0.0);
    }

    fn trajectory(f: impl Fn(f64, f64) -> f64, n_t: usize, dt: f64) -> SpaceTimeFunction {
        let g = Arc::new(Grid::line(-4.0, 4.0, 801).unwrap());
        let times: Vec<f64> = (0..n_t).map(|i| i as f64 * dt).collect();
        let slices = times
            .iter()
            .map(|&t| GridFunction::from_fn(g.clone(), |x| f(t, x[0])).unwrap())
            .collect();
        SpaceTimeFunction::new(times, slices).unwrap()
    }

    #[test]
    fn mollify_preserves_constants() {
        let k = MollifierKernel::new(1).unwrap();
        let u = trajectory(|_, _| 2.5, 41, 0.01);
        let m = mollify(&k, &u, Epsilon::new(0.1, 0.3).unwrap(), &[0.0, 0.2]).unwrap();
        for s in m.slices() {
            assert!(s.values().iter().all(|v| (v - 2.5).abs() < 1e-13));
        }
    }

    #[test]
    fn mollify_needs_forward_coverage() {
        let k = MollifierKernel::new(1).unwrap();
        let u = trajectory(|_, x| x, 11, 0.01);
        let err = mollify(&k, &u, Epsilon::new(0.05, 0.3).unwrap(), &[0.08]).unwrap_err();
        assert!(err.to_string().contains("is needed"));
    }

    #[test]
    fn sine_time_derivative_within_bound() {
        let k = MollifierKernel::new(1).unwrap();
        let u = trajectory(|t, x| (x + t).sin(), 121, 0.005);
        let eps = Epsilon::new(0.1, 0.25).unwrap();
        let c = derivative_bound_check(&k, &u, eps, 1, 1, 1.0, &[0.2, 0.4], None).unwrap();
        assert!(c.pass, "{c:?}");
        assert!((c.bound - k.kernel_constant(1, 0).unwrap() / 0.1).abs() < 1e-12);
        assert!(derivative_bound_check(&k, &u, eps, 1, 0, 1.0, &[0.2], None).is_err());
    }

    #[test]
    fn kink_second_derivative_within_bound() {
        let k = MollifierKernel::new(1).unwrap();
        let u = trajectory(|_, x| x.abs().min(1.0), 41, 0.01);
        let eps = Epsilon::new(0.1, 0.25).unwrap();
        let c = derivative_bound_check(&k, &u, eps, 0, 2, 1.0, &[0.1], None).unwrap();
        assert!(c.pass, "{c:?}");
        assert!(c.measured > 0.3 * c.bound);
    }
}
