//! Small quadrature and fitting helpers shared by the modules.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule on `[a, b]` with `panels` equal panels.
#[derive(Debug, Clone)]
pub struct Composite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Composite {
    pub fn new(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let h = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(lo + 0.5 * h * (x + 1.0));
                weights.push(0.5 * h * w);
            }
        }
        Composite { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Uniform periodic grid `-π + (j + shift) 2π/n`, `j = 0..n`.
pub fn periodic_grid(n: usize, shift: f64) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    (0..n).map(|j| -PI + (j as f64 + shift) * h).collect()
}

/// Least-squares line `y = slope * x + intercept`; also returns the rms residual.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (s, _, r) = linear_fit(&lx, &ly);
    (s, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 8, 16, 24] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let s: f64 = x
                .iter()
                .zip(&w)
                .map(|(x, w)| w * x.powi(deg as i32 - 1))
                .sum();
            let exact = if (deg - 1) % 2 == 0 {
                2.0 / deg as f64
            } else {
                0.0
            };
            assert!((s - exact).abs() < 1e-13, "n={n} {s} {exact}");
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn composite_rule_sine() {
        let q = Composite::new(0.0, PI, 4, 10);
        assert!((q.integrate(f64::sin) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (s, i, r) = linear_fit(&x, &y);
        assert!((s - 2.5).abs() < 1e-12 && (i + 1.0).abs() < 1e-12 && r < 1e-12);
    }
}
