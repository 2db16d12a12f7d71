use crate::units::Unit;

/// CDF implied by the unit's log-density, by cumulative trapezoid on a fine grid.
pub(crate) fn implied_cdf(u: &Unit, theta: &[f64], lo: f64, hi: f64, n: usize) -> impl Fn(f64) -> f64 {
    let h = (hi - lo) / n as f64;
    let dens: Vec<f64> = (0..=n).map(|i| u.loglk(theta, lo + i as f64 * h).unwrap().exp()).collect();
    let mut cum = vec![0.0; n + 1];
    for i in 1..=n {
        cum[i] = cum[i - 1] + 0.5 * h * (dens[i - 1] + dens[i]);
    }
    move |x: f64| {
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return cum[n];
        }
        let t = (x - lo) / h;
        let i = (t.floor() as usize).min(n - 1);
        cum[i] + (cum[i + 1] - cum[i]) * (t - i as f64)
    }
}

pub(crate) fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
