//! Confidence radii for the moment estimates, the composite error radius `epsilon(delta)` and
//! Rényi-divergence diagnostics of the importance weights.
//!
//! All logarithms are natural. The composite radius applies the per-event radii at `delta / 3`
//! so that the three events hold jointly with probability at least `1 - delta`.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radii {
    pub delta_p: f64,
    pub delta_q: f64,
    pub delta_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimationPath {
    Categorical,
    Functional,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid("delta", format!("{delta} is outside (0, 1)")))
    }
}

fn check_counts(alpha: f64, n: usize, m: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", format!("{alpha} is outside (0, 1]")));
    }
    if n == 0 || m == 0 {
        return Err(invalid("sample counts", "n and m must be positive"));
    }
    Ok(())
}

/// Hoeffding-type radii for `(p_hat, q_hat, T_hat)` with a `d`-dimensional statistic bounded
/// in `[-1, 1]^d` and `k` classes.
pub fn categorical_radii(
    d: usize,
    k: usize,
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
) -> Result<Radii> {
    check_delta(delta)?;
    check_counts(alpha, n, m)?;
    let (d_f, k_f) = (d as f64, k as f64);
    let an = alpha * n as f64;
    Ok(Radii {
        delta_p: (d_f / an * (2.0 * d_f / delta).ln()).sqrt(),
        delta_q: (d_f / m as f64 * (2.0 * d_f / delta).ln()).sqrt(),
        delta_t: 2.0 * (2.0 * d_f / an * (2.0 * (d_f + k_f) / delta).ln()).sqrt(),
    })
}

/// Hilbert-space radii for the kernel embeddings; `kappa_bar` bounds the kernel.
pub fn functional_radii(
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
    kappa_bar: f64,
) -> Result<Radii> {
    check_delta(delta)?;
    check_counts(alpha, n, m)?;
    if !(kappa_bar >= 0.0) {
        return Err(invalid("kappa_bar", format!("{kappa_bar} is negative")));
    }
    let an = alpha * n as f64;
    let log_term = (2.0 / delta).ln();
    let source = 2.0 * kappa_bar * (2.0 / an * log_term).sqrt();
    Ok(Radii {
        delta_p: source,
        delta_q: 2.0 * kappa_bar * (2.0 / m as f64 * log_term).sqrt(),
        delta_t: source,
    })
}

/// Composite radius from radii that were evaluated at `delta / 3`.
///
/// Categorical: `2 proxy (dq + dp + theta_max dT)`.
/// Functional: `4 proxy (dp/2 + dq/2 + theta_max dT/2)`; the functional radii already include
/// a factor 2.
pub fn composite_epsilon(
    radii: &Radii,
    inverse_norm_proxy: f64,
    theta_max: f64,
    path: EstimationPath,
) -> f64 {
    match path {
        EstimationPath::Categorical => {
            2.0 * inverse_norm_proxy * (radii.delta_q + radii.delta_p + theta_max * radii.delta_t)
        }
        EstimationPath::Functional => {
            4.0 * inverse_norm_proxy
                * (0.5 * radii.delta_p + 0.5 * radii.delta_q + theta_max * 0.5 * radii.delta_t)
        }
    }
}

/// Radii at `delta / 3` together with the composite radius and the inputs that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport {
    pub path: EstimationPath,
    pub delta_p: f64,
    pub delta_q: f64,
    pub delta_t: f64,
    pub epsilon_delta: f64,
    pub delta: f64,
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub n: usize,
    pub m: usize,
    pub kappa_bar: f64,
    pub theta_max: f64,
    pub inverse_norm_proxy: f64,
}

pub fn categorical_report(
    d: usize,
    k: usize,
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
    theta_max: f64,
    inverse_norm_proxy: f64,
) -> Result<ConfidenceReport> {
    check_delta(delta)?;
    let r = categorical_radii(d, k, alpha, n, m, delta / 3.0)?;
    Ok(ConfidenceReport {
        path: EstimationPath::Categorical,
        delta_p: r.delta_p,
        delta_q: r.delta_q,
        delta_t: r.delta_t,
        epsilon_delta: composite_epsilon(
            &r,
            inverse_norm_proxy,
            theta_max,
            EstimationPath::Categorical,
        ),
        delta,
        d,
        k,
        alpha,
        n,
        m,
        kappa_bar: 1.0,
        theta_max,
        inverse_norm_proxy,
    })
}

pub fn functional_report(
    alpha: f64,
    n: usize,
    m: usize,
    delta: f64,
    kappa_bar: f64,
    theta_max: f64,
    inverse_norm_proxy: f64,
) -> Result<ConfidenceReport> {
    check_delta(delta)?;
    let r = functional_radii(alpha, n, m, delta / 3.0, kappa_bar)?;
    Ok(ConfidenceReport {
        path: EstimationPath::Functional,
        delta_p: r.delta_p,
        delta_q: r.delta_q,
        delta_t: r.delta_t,
        epsilon_delta: composite_epsilon(
            &r,
            inverse_norm_proxy,
            theta_max,
            EstimationPath::Functional,
        ),
        delta,
        d: 1,
        k: 0,
        alpha,
        n,
        m,
        kappa_bar,
        theta_max,
        inverse_norm_proxy,
    })
}

/// Infinite-order and second-order Rényi diagnostics of an importance weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceReport {
    /// Essential supremum of omega under the source.
    pub d_inf: f64,
    /// `E_P[omega^2]`.
    pub d_second: f64,
}

/// Categorical weights against the source label marginal.
pub fn divergence_report(omega: &[f64], source_probs: &[f64]) -> Result<DivergenceReport> {
    if omega.len() != source_probs.len() || omega.is_empty() {
        return Err(invalid("omega", "length must match the label marginal"));
    }
    if omega.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(invalid("omega", "weights must be finite and nonnegative"));
    }
    let mean: f64 = omega.iter().zip(source_probs).map(|(w, p)| w * p).sum();
    if (mean - 1.0).abs() > 1e-6 {
        return Err(invalid("omega", format!("E_P[omega] = {mean}, expected 1")));
    }
    let d_inf = omega
        .iter()
        .zip(source_probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(w, _)| *w)
        .fold(0.0, f64::max);
    let d_second = omega.iter().zip(source_probs).map(|(w, p)| p * w * w).sum();
    Ok(DivergenceReport { d_inf, d_second })
}

/// Uniform grid of `points` values covering `[0, 1]` inclusive.
pub fn unit_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Weight function on `[0, 1]` against a source density on `[0, 1]`.
///
/// `d_inf` is the maximum over `grid`; the expectations use composite Simpson quadrature with
/// 2000 panels.
pub fn divergence_report_function<W, P>(
    omega: W,
    source_density: P,
    grid: &[f64],
) -> Result<DivergenceReport>
where
    W: Fn(f64) -> f64,
    P: Fn(f64) -> f64,
{
    if grid.is_empty() {
        return Err(invalid("grid", "empty evaluation grid"));
    }
    let on_grid: Vec<f64> = grid.iter().map(|&y| omega(y)).collect();
    if on_grid.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(invalid("omega", "weights must be finite and nonnegative"));
    }
    let mean = simpson(|y| omega(y) * source_density(y), 2000);
    if (mean - 1.0).abs() > 1e-6 {
        return Err(invalid("omega", format!("E_P[omega] = {mean}, expected 1")));
    }
    let d_second = simpson(|y| omega(y).powi(2) * source_density(y), 2000);
    Ok(DivergenceReport {
        d_inf: on_grid.into_iter().fold(0.0, f64::max),
        d_second,
    })
}

fn simpson(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
    let panels = panels + panels % 2;
    let h = 1.0 / panels as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categorical_radii_by_hand() {
        let r = categorical_radii(2, 2, 0.5, 400, 400, 0.1).unwrap();
        assert!((r.delta_p - (0.01 * 40f64.ln()).sqrt()).abs() < 1e-13);
        assert!((r.delta_t - 2.0 * (0.02 * 80f64.ln()).sqrt()).abs() < 1e-13);
        assert!((r.delta_p - 0.192055).abs() < 1e-5);
        assert!((r.delta_t - 0.592085).abs() < 1e-5);
    }

    #[test]
    fn functional_radii_by_hand() {
        let r = functional_radii(0.5, 1000, 800, 0.1, 1.0).unwrap();
        assert!((r.delta_q - 2.0 * (0.0025 * 20f64.ln()).sqrt()).abs() < 1e-13);
        assert!((r.delta_q - 0.173083).abs() < 1e-5);
        assert_eq!(r.delta_p, r.delta_t);
        let zero = functional_radii(0.5, 1000, 800, 0.1, 0.0).unwrap();
        assert_eq!((zero.delta_p, zero.delta_q, zero.delta_t), (0.0, 0.0, 0.0));
    }

    #[test]
    fn radii_vanish_with_samples() {
        let big = categorical_radii(3, 3, 0.5, 1 << 50, 1 << 50, 0.1).unwrap();
        assert!(big.delta_p < 1e-5 && big.delta_q < 1e-5 && big.delta_t < 1e-5);
    }

    #[test]
    fn invalid_delta_rejected() {
        assert!(categorical_radii(2, 2, 0.5, 10, 10, 0.0).is_err());
        assert!(functional_radii(0.5, 10, 10, 1.0, 1.0).is_err());
        assert!(categorical_radii(2, 2, 0.0, 10, 10, 0.1).is_err());
    }

    #[test]
    fn zero_radii_zero_epsilon() {
        let r = Radii {
            delta_p: 0.0,
            delta_q: 0.0,
            delta_t: 0.0,
        };
        assert_eq!(
            composite_epsilon(&r, 5.0, 2.0, EstimationPath::Categorical),
            0.0
        );
        assert_eq!(
            composite_epsilon(&r, 5.0, 2.0, EstimationPath::Functional),
            0.0
        );
    }

    #[test]
    fn categorical_epsilon_matches_closed_form() {
        let (d, k, alpha, n, m, delta) = (2usize, 2usize, 0.5, 800usize, 800usize, 0.1);
        let rep = categorical_report(d, k, alpha, n, m, delta, 1.0, 1.0).unwrap();
        let an = alpha * n as f64;
        let df = d as f64;
        let closed = 2.0
            * ((df / an * (6.0 * df / delta).ln()).sqrt()
                + (df / m as f64 * (6.0 * df / delta).ln()).sqrt()
                + 2.0 * (2.0 * df / an * (6.0 * (df + k as f64) / delta).ln()).sqrt());
        assert!((rep.epsilon_delta - closed).abs() < 1e-12);
        let bigger = categorical_report(d, k, alpha, 2 * n, 2 * m, delta, 1.0, 1.0).unwrap();
        assert!(bigger.epsilon_delta < rep.epsilon_delta);
    }

    #[test]
    fn functional_epsilon_matches_closed_form() {
        let (alpha, n, m, delta, kb, proxy, tmax) = (0.5, 1000usize, 700usize, 0.05, 1.0, 3.0, 0.7);
        let rep = functional_report(alpha, n, m, delta, kb, tmax, proxy).unwrap();
        let an = alpha * n as f64;
        let l = (6.0 / delta).ln();
        let closed = 4.0
            * proxy
            * (kb * (2.0 / an * l).sqrt()
                + kb * (2.0 / m as f64 * l).sqrt()
                + tmax * kb * (2.0 / an * l).sqrt());
        assert!((rep.epsilon_delta - closed).abs() < 1e-12);
    }

    #[test]
    fn four_class_divergences() {
        let rep = divergence_report(
            &[3.0, 1.0 / 3.0, 3.0, 1.0 / 3.0],
            &[0.125, 0.375, 0.125, 0.375],
        )
        .unwrap();
        assert_eq!(rep.d_inf, 3.0);
        assert!((rep.d_second - 7.0 / 3.0).abs() < 1e-13);
        let none = divergence_report(&[1.0; 3], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!((none.d_inf, none.d_second), (1.0, 1.0));
        assert!(divergence_report(&[2.0, 2.0], &[0.5, 0.5]).is_err());
        assert!(divergence_report(&[-1.0, 3.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn regression_divergences() {
        let (a, b) = (0.2, 0.8);
        let omega = |y: f64| (2.0 * b * y + 1.0 - b) / (2.0 * a * y + 1.0 - a);
        let density = |y: f64| 1.0 - a + 2.0 * a * y;
        let rep = divergence_report_function(omega, density, &unit_grid(100)).unwrap();
        assert!((rep.d_inf - 1.5).abs() < 1e-13);
        // E_P[omega^2] = int q^2 / p, evaluated independently with a fine midpoint sum
        let fine = 200_000;
        let mid: f64 = (0..fine)
            .map(|i| {
                let y = (i as f64 + 0.5) / fine as f64;
                let q = 1.0 - b + 2.0 * b * y;
                q * q / density(y)
            })
            .sum::<f64>()
            / fine as f64;
        assert!((rep.d_second - mid).abs() < 1e-8);
    }
}
