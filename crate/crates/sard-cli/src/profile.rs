//! Nadaraya–Watson profiles of growth contributions against log initial
//! level, with pairs-bootstrap percentile bands.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    pub grid: Vec<f64>,
    pub curve: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bandwidth: f64,
}

/// `0.9 · min(sd, IQR/1.34) · n^{-1/5}`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (i, f) = (pos.floor() as usize, pos.fract());
        s[i] + f * (s[(i + 1).min(s.len() - 1)] - s[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian-kernel local-constant regression at `at`; `NaN` where no
/// observation carries weight.
pub fn nadaraya_watson(x: &[f64], y: &[f64], at: &[f64], h: f64) -> Vec<f64> {
    at.iter()
        .map(|&a| {
            let (mut num, mut den) = (0.0, 0.0);
            for (xi, yi) in x.iter().zip(y) {
                let u = (xi - a) / h;
                let k = (-0.5 * u * u).exp();
                num += k * yi;
                den += k;
            }
            if den > 0.0 {
                num / den
            } else {
                f64::NAN
            }
        })
        .collect()
}

fn percentile(v: &mut [f64], p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    v[i] + f * (v[(i + 1).min(v.len() - 1)] - v[i])
}

/// Profile of `g` on `log_y0` over `points` equally spaced grid values
/// spanning the data. Pairs with a missing `g` are dropped.
pub fn convergence_profile(
    log_y0: &[f64],
    g: &[Option<f64>],
    points: usize,
    bandwidth: Option<f64>,
    replications: usize,
    seed: u64,
) -> ProfileCurve {
    let (x, y): (Vec<f64>, Vec<f64>) = log_y0
        .iter()
        .zip(g)
        .filter_map(|(a, b)| b.filter(|v| v.is_finite() && a.is_finite()).map(|b| (*a, b)))
        .unzip();
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(&x)).max(1e-12);
    let (lo_x, hi_x) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let points = points.max(2);
    let grid: Vec<f64> = (0..points).map(|k| lo_x + (hi_x - lo_x) * k as f64 / (points - 1) as f64).collect();
    let curve = nadaraya_watson(&x, &y, &grid, h);
    let n = x.len();
    let reps: Vec<Vec<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let bx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            nadaraya_watson(&bx, &by, &grid, h)
        })
        .collect();
    let band = |p: f64| -> Vec<f64> {
        (0..points)
            .map(|k| {
                let mut v: Vec<f64> = reps.iter().map(|r| r[k]).filter(|v| v.is_finite()).collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    percentile(&mut v, p)
                }
            })
            .collect()
    };
    ProfileCurve {
        lo: band(0.025),
        hi: band(0.975),
        grid,
        curve,
        bandwidth: h,
    }
}

impl ProfileCurve {
    pub fn write_csv<W: Write>(&self, component: &str, mut w: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "component,logy0,curve,lo,hi")?;
        }
        for k in 0..self.grid.len() {
            writeln!(w, "{component},{:e},{:e},{:e},{:e}", self.grid[k], self.curve[k], self.lo[k], self.hi[k])?;
        }
        Ok(())
    }

    /// Least-squares slope of the curve over the grid.
    pub fn slope(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.grid.iter().zip(&self.curve).filter(|p| p.1.is_finite()).map(|(a, b)| (*a, *b)).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_contribution_gives_flat_curve() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let g = vec![Some(0.02); 200];
        let p = convergence_profile(&x, &g, 20, None, 50, 1);
        assert!(p.curve.iter().all(|v| (v - 0.02).abs() < 1e-15));
        assert!(p.lo.iter().zip(&p.hi).all(|(a, b)| (a - 0.02).abs() < 1e-15 && (b - 0.02).abs() < 1e-15));
    }

    #[test]
    fn negative_relation_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..5.0)).collect();
        let g: Vec<Option<f64>> = x.iter().map(|v| Some(-0.1 * v + rng.random_range(-0.05..0.05))).collect();
        let p = convergence_profile(&x, &g, 30, None, 100, 2);
        assert!(p.slope() < 0.0);
        assert!(p.curve.windows(2).filter(|w| w[1] < w[0]).count() >= 25);
        assert!(p.lo.iter().zip(&p.curve).zip(&p.hi).all(|((l, c), h)| l <= c && c <= h));
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let g: Vec<Option<f64>> = x.iter().map(|v| Some(v.cos())).collect();
        assert_eq!(convergence_profile(&x, &g, 10, Some(0.5), 40, 7), convergence_profile(&x, &g, 10, Some(0.5), 40, 7));
    }
}
