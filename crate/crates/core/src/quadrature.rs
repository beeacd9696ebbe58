//! Quadrature rules: Gauss–Hermite for Gaussian expectations and adaptive
//! Gauss–Kronrod for finite intervals.

/// Gauss–Hermite rule for the standard normal law: E[g(Z)] ≈ Σ wᵢ g(zᵢ).
/// Nodes are ascending and the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence, started from
    /// the usual asymptotic guesses.
    pub fn new(n: usize) -> Self {
        assert!((1..=512).contains(&n), "node count {n} out of range");
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        // Physicists' rule for e^{-x²} to the normal law.
        let mut nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let total: f64 = w.iter().sum();
        let mut weights: Vec<f64> = w.iter().map(|v| v / total).collect();
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// E[g(Z)] for standard normal Z.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * g(z))
            .sum()
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod estimate with its embedded 7-point Gauss error.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS_K[7] * fc;
    let mut g = GK_WEIGHTS_G[3] * fc;
    for j in 0..7 {
        let dx = h * GK_NODES[j];
        let s = f(c - dx) + f(c + dx);
        k += GK_WEIGHTS_K[j] * s;
        if j % 2 == 1 {
            g += GK_WEIGHTS_G[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth - 1) + adaptive(f, m, b, 0.5 * tol, depth - 1)
}

/// ∫_a^b f over `cells` equal cells, each refined by bisection until the
/// Kronrod/Gauss discrepancy falls below `tol` per cell.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, cells: usize, tol: f64) -> f64 {
    let w = (b - a) / cells as f64;
    (0..cells)
        .map(|i| adaptive(&f, a + i as f64 * w, a + (i + 1) as f64 * w, tol, 40))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for n in [8, 32, 64, 128] {
            let gh = GaussHermite::new(n);
            assert!((gh.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(gh.expect(|z| z).abs() < 1e-12);
            assert!((gh.expect(|z| z * z) - 1.0).abs() < 1e-11, "n={n}");
            assert!((gh.expect(|z| z.powi(4)) - 3.0).abs() < 1e-10);
            assert!(gh.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn hermite_cosine() {
        let gh = GaussHermite::new(32);
        assert!((gh.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn odd_rule_has_center_node() {
        let gh = GaussHermite::new(7);
        assert_eq!(gh.nodes[3], 0.0);
        assert!((gh.expect(|z| z.powi(6)) - 15.0).abs() < 1e-11);
    }

    #[test]
    fn kronrod_polynomial_and_kink() {
        let v = integrate(|x| x.powi(5) - x, -1.0, 2.0, 4, 1e-12);
        assert!((v - (64.0 / 6.0 - 2.0 - (1.0 / 6.0 - 0.5))).abs() < 1e-12);
        let v = integrate(|x: f64| (x - 0.3).abs(), -1.0, 1.0, 3, 1e-12);
        assert!((v - (1.3 * 1.3 / 2.0 + 0.7 * 0.7 / 2.0)).abs() < 1e-10);
    }
}
