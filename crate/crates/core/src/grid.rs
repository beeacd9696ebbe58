//! Uniform grids on boxes in one or two dimensions, functions sampled on
//! them, weights and the weighted supremum norms built from them.
//!
//! Values outside the box are defined by constant continuation of the
//! boundary value, so every grid function is a function on all of space.
//! Off-grid evaluation is multilinear.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 2;

/// Uniform tensor grid on a box. The last axis varies fastest in the flat
/// index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Self> {
        let d = counts.len();
        if d == 0 || d > MAX_DIM {
            return domain(format!("grid dimension must be 1 or 2, got {d}"));
        }
        if lower.len() != d || upper.len() != d {
            return domain("grid bounds and counts disagree in length");
        }
        for a in 0..d {
            if !(lower[a].is_finite() && upper[a].is_finite()) || lower[a] >= upper[a] {
                return domain(format!("axis {a}: need finite lower < upper"));
            }
            if counts[a] < 2 {
                return domain(format!("axis {a}: need at least 2 points"));
            }
        }
        let total: usize = counts.iter().product();
        if total < 4 {
            return domain(format!("grid needs at least 4 points, got {total}"));
        }
        let spacing = (0..d)
            .map(|a| (upper[a] - lower[a]) / (counts[a] - 1) as f64)
            .collect();
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            counts: counts.to_vec(),
            spacing,
        })
    }

    pub fn line(lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(&[lower], &[upper], &[count])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing[axis]
    }

    /// Per-axis indices of a flat index.
    pub fn multi_index(&self, flat: usize) -> [usize; MAX_DIM] {
        match self.dim() {
            1 => [flat, 0],
            _ => [flat / self.counts[1], flat % self.counts[1]],
        }
    }

    pub fn flat_index(&self, idx: [usize; MAX_DIM]) -> usize {
        match self.dim() {
            1 => idx[0],
            _ => idx[0] * self.counts[1] + idx[1],
        }
    }

    /// Coordinates of a grid point; unused trailing entries are zero.
    pub fn point(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.multi_index(flat);
        let mut p = [0.0; MAX_DIM];
        for (a, v) in p.iter_mut().enumerate().take(self.dim()) {
            *v = self.coord(a, idx[a]);
        }
        p
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; MAX_DIM]> + '_ {
        (0..self.len()).map(move |k| self.point(k))
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?}x{:?} vs {:?}x{:?}",
                self.lower, self.counts, other.lower, other.counts
            )))
        }
    }
}

/// Axis-aligned sub-box used to restrict norms to the interior of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Subdomain {
    pub fn whole(grid: &Grid) -> Self {
        Self {
            lower: grid.lower().to_vec(),
            upper: grid.upper().to_vec(),
        }
    }

    /// The box shrunk by `margin` on every side.
    pub fn interior(grid: &Grid, margin: f64) -> Result<Self> {
        let lower: Vec<f64> = grid.lower().iter().map(|l| l + margin).collect();
        let upper: Vec<f64> = grid.upper().iter().map(|u| u - margin).collect();
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return domain(format!("margin {margin} leaves no interior"));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        // Small slack so that grid points on the edge count as inside.
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= l - 1e-12 && *v <= u + 1e-12)
    }

    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        grid.points()
            .map(|p| self.contains(&p[..grid.dim()]))
            .collect()
    }
}

/// Values on a grid with cached sup-norm and discrete Lipschitz estimate.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
    sup: f64,
    lip: f64,
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return domain(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return domain(format!("non-finite value at index {k}"));
        }
        let sup = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let lip = discrete_lipschitz(&grid, &values);
        Ok(Self {
            grid,
            values,
            sup,
            lip,
        })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let d = grid.dim();
        let values = grid.points().map(|p| f(&p[..d])).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![c; n])
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn lipschitz(&self) -> f64 {
        self.lip
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Value at a grid multi-index after clamping into range, i.e. the
    /// constant continuation outside the box.
    pub fn at_clamped(&self, idx: [isize; MAX_DIM]) -> f64 {
        let c = self.grid.counts();
        let i0 = idx[0].clamp(0, c[0] as isize - 1) as usize;
        if self.grid.dim() == 1 {
            return self.values[i0];
        }
        let i1 = idx[1].clamp(0, c[1] as isize - 1) as usize;
        self.values[i0 * c[1] + i1]
    }

    /// Multilinear interpolation with constant continuation outside the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let mut base = [0isize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for a in 0..d {
            let last = g.counts()[a] - 1;
            let p = ((x[a] - g.lower()[a]) / g.spacing()[a]).clamp(0.0, last as f64);
            let fl = (p.floor() as usize).min(last.saturating_sub(1));
            base[a] = fl as isize;
            frac[a] = p - fl as f64;
        }
        if d == 1 {
            let v0 = self.at_clamped([base[0], 0]);
            let v1 = self.at_clamped([base[0] + 1, 0]);
            return v0 + frac[0] * (v1 - v0);
        }
        let mut acc = 0.0;
        for c0 in 0..2 {
            for c1 in 0..2 {
                let w0 = if c0 == 0 { 1.0 - frac[0] } else { frac[0] };
                let w1 = if c1 == 0 { 1.0 - frac[1] } else { frac[1] };
                if w0 * w1 != 0.0 {
                    acc += w0 * w1 * self.at_clamped([base[0] + c0, base[1] + c1]);
                }
            }
        }
        acc
    }

    /// CSV with columns `x0[,x1],value`.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let mut out = String::new();
        for a in 0..d {
            out.push_str(&format!("x{a},"));
        }
        out.push_str("value\n");
        for (k, v) in self.values.iter().enumerate() {
            let p = self.grid.point(k);
            for c in &p[..d] {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    /// Inverse of [`GridFunction::to_csv`]. The grid is rebuilt from the
    /// distinct coordinates found on each axis.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty csv".into()))?;
        let d = header.split(',').count().saturating_sub(1);
        if d == 0 || d > MAX_DIM {
            return Err(Error::Parse(format!("bad header '{header}'")));
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let fields: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let fields = fields.map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?;
            if fields.len() != d + 1 {
                return Err(Error::Parse(format!("row {}: expected {} fields", ln + 2, d + 1)));
            }
            rows.push(fields);
        }
        let mut lower = vec![0.0; d];
        let mut upper = vec![0.0; d];
        let mut counts = vec![0; d];
        for a in 0..d {
            let mut axis: Vec<f64> = rows.iter().map(|r| r[a]).collect();
            axis.sort_by(f64::total_cmp);
            axis.dedup();
            lower[a] = axis[0];
            upper[a] = *axis.last().unwrap();
            counts[a] = axis.len();
        }
        let grid = Arc::new(Grid::new(&lower, &upper, &counts)?);
        if rows.len() != grid.len() {
            return Err(Error::Parse("rows do not form a full tensor grid".into()));
        }
        Self::new(grid, rows.iter().map(|r| r[d]).collect())
    }

    /// Binary layout, all little-endian: `u32` dimension, one `u64` count per
    /// axis, `f64` lower and upper per axis, then the values.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        write_grid_header(&self.grid, w)?;
        write_f64s(&self.values, w)
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let grid = Arc::new(read_grid_header(r)?);
        let values = read_f64s(r, grid.len())?;
        Self::new(grid, values)
    }
}

fn discrete_lipschitz(grid: &Grid, values: &[f64]) -> f64 {
    let c = grid.counts();
    let h = grid.spacing();
    let mut lip = 0.0_f64;
    if grid.dim() == 1 {
        for w in values.windows(2) {
            lip = lip.max((w[1] - w[0]).abs() / h[0]);
        }
        return lip;
    }
    for i in 0..c[0] {
        for j in 0..c[1] {
            let v = values[i * c[1] + j];
            if i + 1 < c[0] {
                lip = lip.max((values[(i + 1) * c[1] + j] - v).abs() / h[0]);
            }
            if j + 1 < c[1] {
                lip = lip.max((values[i * c[1] + j + 1] - v).abs() / h[1]);
            }
        }
    }
    lip
}

pub(crate) fn write_grid_header(grid: &Grid, w: &mut impl Write) -> Result<()> {
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    for &c in grid.counts() {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for a in 0..grid.dim() {
        w.write_all(&grid.lower()[a].to_le_bytes())?;
        w.write_all(&grid.upper()[a].to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_grid_header(r: &mut impl Read) -> Result<Grid> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    if d == 0 || d > MAX_DIM {
        return Err(Error::Parse(format!("bad dimension {d} in header")));
    }
    let mut b8 = [0u8; 8];
    let mut counts = Vec::with_capacity(d);
    for _ in 0..d {
        r.read_exact(&mut b8)?;
        counts.push(u64::from_le_bytes(b8) as usize);
    }
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for _ in 0..d {
        r.read_exact(&mut b8)?;
        lower.push(f64::from_le_bytes(b8));
        r.read_exact(&mut b8)?;
        upper.push(f64::from_le_bytes(b8));
    }
    Grid::new(&lower, &upper, &counts)
}

pub(crate) fn write_f64s(values: &[f64], w: &mut impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Closed form of a weight κ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    One,
    /// κ(x) = (1 + |x|²)^(−q/2).
    InversePolynomial { q: f64 },
}

impl WeightKind {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            WeightKind::One => 1.0,
            WeightKind::InversePolynomial { q } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                (1.0 + r2).powf(-0.5 * q)
            }
        }
    }
}

/// A weight tabulated on a grid together with its shift constant c_κ.
#[derive(Debug, Clone)]
pub struct WeightFunction {
    kind: WeightKind,
    grid: Arc<Grid>,
    values: Vec<f64>,
    c_kappa: f64,
}

impl WeightFunction {
    pub fn new(kind: WeightKind, grid: Arc<Grid>) -> Result<Self> {
        if let WeightKind::InversePolynomial { q } = kind {
            if !(q.is_finite() && q > 0.0) {
                return domain(format!("weight exponent must be positive, got {q}"));
            }
        }
        let d = grid.dim();
        let values = grid.points().map(|p| kind.eval(&p[..d])).collect();
        let c_kappa = kappa_constant(kind, &grid)?;
        Ok(Self {
            kind,
            grid,
            values,
            c_kappa,
        })
    }

    pub fn one(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self {
            kind: WeightKind::One,
            grid,
            values: vec![1.0; n],
            c_kappa: 1.0,
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn c_kappa(&self) -> f64 {
        self.c_kappa
    }
}

/// Discrete scan of sup κ(x)/κ(x−y) over grid points x and grid offsets
/// with |y| ≤ 1.
pub fn kappa_constant(kind: WeightKind, grid: &Grid) -> Result<f64> {
    if kind == WeightKind::One {
        return Ok(1.0);
    }
    let d = grid.dim();
    for a in 0..d {
        if grid.upper()[a] - grid.lower()[a] < 2.0 {
            return domain(format!(
                "axis {a} is narrower than a ball of radius 1"
            ));
        }
    }
    let h = grid.spacing();
    let reach: Vec<isize> = (0..d).map(|a| (1.0 / h[a]).floor() as isize).collect();
    let mut offsets = Vec::new();
    if d == 1 {
        for j in -reach[0]..=reach[0] {
            offsets.push([j as f64 * h[0], 0.0]);
        }
    } else {
        for j0 in -reach[0]..=reach[0] {
            for j1 in -reach[1]..=reach[1] {
                let y = [j0 as f64 * h[0], j1 as f64 * h[1]];
                if y[0] * y[0] + y[1] * y[1] <= 1.0 + 1e-12 {
                    offsets.push(y);
                }
            }
        }
    }
    let mut c = 1.0_f64;
    for p in grid.points() {
        let kx = kind.eval(&p[..d]);
        for y in &offsets {
            let shifted = [p[0] - y[0], p[1] - y[1]];
            c = c.max(kx / kind.eval(&shifted[..d]));
        }
    }
    Ok(c)
}

fn weighted_max(
    f: &GridFunction,
    kappa: &WeightFunction,
    region: Option<&Subdomain>,
    part: impl Fn(f64) -> f64,
) -> Result<f64> {
    f.grid().check_same(kappa.grid())?;
    let d = f.grid().dim();
    let mut m = 0.0_f64;
    for (k, (&v, &w)) in f.values().iter().zip(kappa.values()).enumerate() {
        if let Some(r) = region {
            let p = f.grid().point(k);
            if !r.contains(&p[..d]) {
                continue;
            }
        }
        m = m.max(part(v) * w);
    }
    Ok(m)
}

/// sup |f|κ over the grid.
pub fn weighted_norm(f: &GridFunction, kappa: &WeightFunction) -> Result<f64> {
    weighted_max(f, kappa, None, f64::abs)
}

/// ‖f⁺‖_κ.
pub fn positive_part_norm(f: &GridFunction, kappa: &WeightFunction) -> Result<f64> {
    weighted_max(f, kappa, None, |v| v.max(0.0))
}

/// ‖f⁻‖_κ.
pub fn negative_part_norm(f: &GridFunction, kappa: &WeightFunction) -> Result<f64> {
    weighted_max(f, kappa, None, |v| (-v).max(0.0))
}

pub fn weighted_norm_on(f: &GridFunction, kappa: &WeightFunction, region: &Subdomain) -> Result<f64> {
    weighted_max(f, kappa, Some(region), f64::abs)
}

pub fn positive_part_norm_on(
    f: &GridFunction,
    kappa: &WeightFunction,
    region: &Subdomain,
) -> Result<f64> {
    weighted_max(f, kappa, Some(region), |v| v.max(0.0))
}

pub fn negative_part_norm_on(
    f: &GridFunction,
    kappa: &WeightFunction,
    region: &Subdomain,
) -> Result<f64> {
    weighted_max(f, kappa, Some(region), |v| (-v).max(0.0))
}

/// Largest difference quotient over adjacent grid points along any axis.
pub fn lipschitz_estimate(f: &GridFunction) -> f64 {
    f.lipschitz()
}

/// A trajectory t ↦ u(t) sampled at increasing times on a common grid.
#[derive(Debug, Clone)]
pub struct SpaceTimeFunction {
    times: Vec<f64>,
    slices: Vec<GridFunction>,
}

impl SpaceTimeFunction {
    pub fn new(times: Vec<f64>, slices: Vec<GridFunction>) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return domain("need one slice per time sample and at least one sample");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return domain("time samples must be strictly increasing");
        }
        let g = slices[0].grid().clone();
        for s in &slices[1..] {
            g.check_same(s.grid())?;
        }
        Ok(Self { times, slices })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[GridFunction] {
        &self.slices
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.slices[0].grid()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid header, `u64` sample count, the times, then each slice's values.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        write_grid_header(self.grid(), w)?;
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        write_f64s(&self.times, w)?;
        for s in &self.slices {
            write_f64s(s.values(), w)?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let grid = Arc::new(read_grid_header(r)?);
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let times = read_f64s(r, n)?;
        let mut slices = Vec::with_capacity(n);
        for _ in 0..n {
            slices.push(GridFunction::new(grid.clone(), read_f64s(r, grid.len())?)?);
        }
        Self::new(times, slices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(lo: f64, hi: f64, n: usize) -> Arc<Grid> {
        Arc::new(Grid::line(lo, hi, n).unwrap())
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::line(1.0, 1.0, 10).is_err());
        assert!(Grid::line(0.0, 1.0, 1).is_err());
        assert!(Grid::line(0.0, 1.0, 3).is_err());
        assert!(Grid::new(&[0.0; 3], &[1.0; 3], &[2; 3]).is_err());
        assert!(Grid::new(&[0.0, 0.0], &[1.0, 1.0], &[2, 2]).is_ok());
    }

    #[test]
    fn zero_and_constant_norms() {
        let g = line(-1.0, 1.0, 11);
        let k = WeightFunction::one(g.clone());
        let zero = GridFunction::constant(g.clone(), 0.0).unwrap();
        assert_eq!(weighted_norm(&zero, &k).unwrap(), 0.0);
        let one = GridFunction::constant(g, 1.0).unwrap();
        assert_eq!(weighted_norm(&one, &k).unwrap(), 1.0);
    }

    #[test]
    fn weighted_identity_norm() {
        let g = line(-2.0, 2.0, 129);
        let k = WeightFunction::new(WeightKind::InversePolynomial { q: 1.0 }, g.clone()).unwrap();
        let f = GridFunction::from_fn(g.clone(), |x| x[0]).unwrap();
        let expected = g
            .points()
            .map(|p| p[0].abs() / (1.0 + p[0] * p[0]).sqrt())
            .fold(0.0, f64::max);
        let n = weighted_norm(&f, &k).unwrap();
        assert_eq!(n, expected);
        assert!((n - 2.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sign_split() {
        let g = line(-1.0, 1.0, 21);
        let k = WeightFunction::one(g.clone());
        let f = GridFunction::constant(g.clone(), -3.0).unwrap();
        assert_eq!(positive_part_norm(&f, &k).unwrap(), 0.0);
        assert_eq!(negative_part_norm(&f, &k).unwrap(), 3.0);
        let odd = GridFunction::from_fn(g, |x| x[0]).unwrap();
        assert_eq!(
            positive_part_norm(&odd, &k).unwrap(),
            negative_part_norm(&odd, &k).unwrap()
        );
    }

    #[test]
    fn grid_mismatch_is_error() {
        let f = GridFunction::constant(line(0.0, 1.0, 5), 1.0).unwrap();
        let k = WeightFunction::one(line(0.0, 1.0, 6));
        assert!(matches!(weighted_norm(&f, &k), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn lipschitz_examples() {
        let g = line(-3.0, 3.0, 61);
        let abs = GridFunction::from_fn(g.clone(), |x| x[0].abs()).unwrap();
        assert!((lipschitz_estimate(&abs) - 1.0).abs() < 1e-12);
        let c = GridFunction::constant(g.clone(), 4.0).unwrap();
        assert_eq!(lipschitz_estimate(&c), 0.0);
        let sin = GridFunction::from_fn(g, |x| x[0].sin()).unwrap();
        let l = lipschitz_estimate(&sin);
        assert!(l <= 1.0 && l > 0.99);
    }

    #[test]
    fn kappa_constant_grows_with_exponent() {
        let g = line(-6.0, 6.0, 241);
        let c1 = kappa_constant(WeightKind::InversePolynomial { q: 1.0 }, &g).unwrap();
        let c2 = kappa_constant(WeightKind::InversePolynomial { q: 2.0 }, &g).unwrap();
        assert!(c1 > 1.0);
        assert!(c2 > c1);
        assert_eq!(kappa_constant(WeightKind::One, &g).unwrap(), 1.0);
        let narrow = line(-0.5, 0.5, 11);
        assert!(kappa_constant(WeightKind::InversePolynomial { q: 1.0 }, &narrow).is_err());
    }

    #[test]
    fn interpolation_is_exact_on_linear_and_constant_outside() {
        let g = Arc::new(Grid::new(&[-1.0, 0.0], &[1.0, 2.0], &[5, 9]).unwrap());
        let f = GridFunction::from_fn(g, |x| 2.0 * x[0] - x[1] + 0.5).unwrap();
        assert!((f.interpolate(&[0.3, 1.1]) - (0.6 - 1.1 + 0.5)).abs() < 1e-14);
        // Outside the box the boundary value is continued.
        assert_eq!(f.interpolate(&[5.0, 1.0]), f.interpolate(&[1.0, 1.0]));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let g = Arc::new(Grid::new(&[-1.0, 0.0], &[1.0, 2.0], &[4, 3]).unwrap());
        let f = GridFunction::from_fn(g, |x| x[0] * x[1] + 0.1).unwrap();
        let back = GridFunction::from_csv(&f.to_csv()).unwrap();
        assert_eq!(back.values(), f.values());
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = GridFunction::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn space_time_round_trip() {
        let g = line(0.0, 1.0, 5);
        let a = GridFunction::constant(g.clone(), 1.0).unwrap();
        let b = GridFunction::constant(g, 2.0).unwrap();
        let u = SpaceTimeFunction::new(vec![0.0, 0.5], vec![a, b]).unwrap();
        let mut buf = Vec::new();
        u.write_binary(&mut buf).unwrap();
        let back = SpaceTimeFunction::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.times(), u.times());
        assert_eq!(back.slices()[1], u.slices()[1]);
        assert!(SpaceTimeFunction::new(vec![0.5, 0.5], back.slices().to_vec()).is_err());
    }
}
