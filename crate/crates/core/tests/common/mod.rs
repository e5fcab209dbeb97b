#![allow(dead_code)]

/// 5-point Gauss-Legendre nodes and weights on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Composite Gauss-Legendre nodes and weights over `[lo, hi]`, split at
/// `breaks` so that kinks and jumps fall on panel edges.
pub fn gl_rule(lo: f64, hi: f64, breaks: &[f64], panels: usize) -> Vec<(f64, f64)> {
    let mut edges = vec![lo];
    edges.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
    edges.push(hi);
    edges.sort_by(f64::total_cmp);
    let mut rule = Vec::new();
    for w in edges.windows(2) {
        let h = (w[1] - w[0]) / panels as f64;
        for p in 0..panels {
            let mid = w[0] + (p as f64 + 0.5) * h;
            for (t, wt) in GL5 {
                rule.push((mid + 0.5 * h * t, 0.5 * h * wt));
            }
        }
    }
    rule
}

pub fn integrate_1d(f: impl Fn(f64) -> f64, rule: &[(f64, f64)]) -> f64 {
    rule.iter().map(|(x, w)| w * f(*x)).sum()
}

pub fn integrate_2d(f: impl Fn(f64, f64) -> f64, rx: &[(f64, f64)], ry: &[(f64, f64)]) -> f64 {
    rx.iter()
        .map(|(x, wx)| wx * ry.iter().map(|(y, wy)| wy * f(*x, *y)).sum::<f64>())
        .sum()
}

/// Mean and standard error, accumulated in one pass.
#[derive(Default, Clone, Copy)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (v - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std_error(&self) -> f64 {
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }

    /// `|mean - truth| ≤ k` standard errors.
    pub fn within(&self, truth: f64, k: f64) -> bool {
        let se = self.std_error();
        if se == 0.0 {
            (self.mean - truth).abs() <= 1e-12
        } else {
            (self.mean - truth).abs() <= k * se
        }
    }
}

/// `|a - b| / max(1, |b|)`.
pub fn mixed_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
