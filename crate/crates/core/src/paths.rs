//! Gaussian bridge between a noise draw `x0` and a data point `x1`.
//!
//! `x_t ~ N(t x1 + (1 - t) x0, sigma0^2 t (1 - t) I)`, together with the
//! closed-form velocity and log-density derivatives used as training targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Default bandwidth `sigma0`.
pub const DEFAULT_SIGMA0: f64 = 0.1;
/// Default training-time clamp: `t` is kept in `[eps, 1 - eps]`.
pub const DEFAULT_T_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub sigma0: f64,
    pub t_clamp_eps: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            sigma0: DEFAULT_SIGMA0,
            t_clamp_eps: DEFAULT_T_EPS,
        }
    }
}

impl PathConfig {
    pub fn new(sigma0: f64, t_clamp_eps: f64) -> Result<Self> {
        let cfg = Self { sigma0, t_clamp_eps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config(format!("sigma0 = {} must be > 0", self.sigma0)));
        }
        if !(self.t_clamp_eps > 0.0 && self.t_clamp_eps < 0.1) {
            return Err(Error::Config(format!(
                "t_clamp_eps = {} must lie in (0, 0.1)",
                self.t_clamp_eps
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.t_clamp_eps, 1.0 - self.t_clamp_eps)
    }

    /// Largest time at which the drift is evaluated.
    pub fn t_max(&self) -> f64 {
        1.0 - self.t_clamp_eps
    }
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("t = {t} outside [0, 1]")))
    }
}

/// `sigma_t = sigma0 sqrt(t (1 - t))`.
pub fn sigma_schedule(t: f64, cfg: &PathConfig) -> Result<f64> {
    check_unit(t)?;
    Ok(cfg.sigma0 * (t * (1.0 - t)).sqrt())
}

/// One draw from the bridge. `eps0` is the standardized noise, so
/// `xt = mu_t + sigma_t * eps0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub xt: Vec<f64>,
    pub mu_t: Vec<f64>,
    pub sigma_t: f64,
    pub eps0: Vec<f64>,
}

/// Bridge point for a given standardized noise vector.
pub fn bridge_point(x0: &[f64], x1: &[f64], t: f64, cfg: &PathConfig, eps0: Vec<f64>) -> Result<BridgeSample> {
    if x0.len() != x1.len() || eps0.len() != x0.len() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, x1 {}, noise {}",
            x0.len(),
            x1.len(),
            eps0.len()
        )));
    }
    let sigma_t = sigma_schedule(t, cfg)?;
    let mu_t: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| t * b + (1.0 - t) * a).collect();
    let xt = mu_t.iter().zip(&eps0).map(|(m, e)| m + sigma_t * e).collect();
    Ok(BridgeSample {
        x0: x0.to_vec(),
        x1: x1.to_vec(),
        t,
        xt,
        mu_t,
        sigma_t,
        eps0,
    })
}

/// Draw `x_t` from the bridge at time `t`. Clamping `t` is the caller's job.
pub fn sample_bridge(x0: &[f64], x1: &[f64], t: f64, cfg: &PathConfig, rng: &mut Rng) -> Result<BridgeSample> {
    if x0.len() != x1.len() {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, x1 {}", x0.len(), x1.len())));
    }
    let eps0 = rng.normals(x0.len());
    bridge_point(x0, x1, t, cfg, eps0)
}

/// `(x1 - xt) / (1 - t)`.
pub fn conditional_velocity(xt: &[f64], x1: &[f64], t: f64) -> Result<Vec<f64>> {
    if xt.len() != x1.len() {
        return Err(Error::DimensionMismatch(format!("xt has {} entries, x1 {}", xt.len(), x1.len())));
    }
    // Clamped times reach exactly 1 - DEFAULT_T_EPS; allow rounding there.
    if !(1.0 - t >= DEFAULT_T_EPS * (1.0 - 1e-9)) {
        return Err(Error::Singular(format!("conditional velocity at t = {t}")));
    }
    Ok(xt.iter().zip(x1).map(|(x, y)| (y - x) / (1.0 - t)).collect())
}

/// Gradient of the Gaussian log-density, `-(xt - mu_t) / sigma_t^2`.
pub fn conditional_score(xt: &[f64], mu_t: &[f64], sigma_t: f64) -> Result<Vec<f64>> {
    if !(sigma_t > 0.0) {
        return Err(Error::ZeroBandwidth);
    }
    if xt.len() != mu_t.len() {
        return Err(Error::DimensionMismatch(format!("xt has {} entries, mu_t {}", xt.len(), mu_t.len())));
    }
    let inv = 1.0 / (sigma_t * sigma_t);
    Ok(xt.iter().zip(mu_t).map(|(x, m)| -(x - m) * inv).collect())
}

/// Diagonal of the Hessian of the Gaussian log-density, `-1 / sigma_t^2`.
/// The off-diagonal entries are identically zero.
pub fn conditional_score_order2(sigma_t: f64, dim: usize) -> Result<Vec<f64>> {
    if !(sigma_t > 0.0) {
        return Err(Error::ZeroBandwidth);
    }
    Ok(vec![-1.0 / (sigma_t * sigma_t); dim])
}

/// Third and higher derivatives of a Gaussian log-density vanish.
pub fn conditional_score_orderk(k: usize, dim: usize) -> Vec<f64> {
    assert!(k >= 3, "order {k} has a non-zero closed form; use the order-1/2 functions");
    vec![0.0; dim]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn log_density(x: &[f64], mu: &[f64], sigma: f64) -> f64 {
        let d = x.len() as f64;
        let r2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
        -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - r2 / (2.0 * sigma * sigma)
    }

    #[test]
    fn sigma_boundaries_and_midpoint() {
        let cfg = PathConfig::new(1.0, 1e-3).unwrap();
        assert_eq!(sigma_schedule(0.0, &cfg).unwrap(), 0.0);
        assert_eq!(sigma_schedule(1.0, &cfg).unwrap(), 0.0);
        assert_eq!(sigma_schedule(0.5, &cfg).unwrap(), 0.5);
        assert!(matches!(sigma_schedule(1.5, &cfg), Err(Error::Domain(_))));
        assert!(matches!(sigma_schedule(-0.1, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn config_validation() {
        assert!(PathConfig::new(0.0, 1e-3).is_err());
        assert!(PathConfig::new(1.0, 0.2).is_err());
        assert!(PathConfig::new(1.0, 0.0).is_err());
        assert!(PathConfig::new(0.5, 0.05).is_ok());
    }

    #[test]
    fn endpoints_recover_x0_and_x1() {
        let cfg = PathConfig::default();
        let (x0, x1) = ([0.3, -1.0], [2.0, 4.0]);
        let mut rng = Rng::new(1);
        let b = sample_bridge(&x0, &x1, 0.0, &cfg, &mut rng).unwrap();
        assert_eq!(b.xt, x0.to_vec());
        let b = sample_bridge(&x0, &x1, 1.0, &cfg, &mut rng).unwrap();
        assert_eq!(b.xt, x1.to_vec());
        assert!(matches!(
            sample_bridge(&x0, &[1.0], 0.5, &cfg, &mut rng),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn bridge_mean_monte_carlo() {
        let cfg = PathConfig::new(1.0, 1e-3).unwrap();
        let (x0, x1, t) = ([1.0, -2.0], [3.0, 0.5], 0.3);
        let mut rng = Rng::new(42);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sigma = 0.0;
        let mut mu = vec![];
        for _ in 0..n {
            let b = sample_bridge(&x0, &x1, t, &cfg, &mut rng).unwrap();
            sum[0] += b.xt[0];
            sum[1] += b.xt[1];
            sigma = b.sigma_t;
            mu = b.mu_t;
        }
        for j in 0..2 {
            let mean = sum[j] / n as f64;
            assert!((mean - mu[j]).abs() < 3.0 * sigma / (n as f64).sqrt(), "component {j}");
        }
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(conditional_velocity(&[1.0], &[2.0], 0.5).unwrap(), vec![2.0]);
        assert_eq!(conditional_velocity(&[0.7, 0.1], &[0.7, 0.1], 0.2).unwrap(), vec![0.0, 0.0]);
        let v = conditional_velocity(&[0.0], &[1.0], 0.9).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
        assert!(conditional_velocity(&[0.0], &[1.0], 1.0 - DEFAULT_T_EPS).is_ok());
        assert!(matches!(conditional_velocity(&[0.0], &[1.0], 1.0), Err(Error::Singular(_))));
        assert!(matches!(conditional_velocity(&[0.0], &[1.0], 0.9999), Err(Error::Singular(_))));
    }

    #[test]
    fn score_examples() {
        assert_eq!(conditional_score(&[0.4, 0.4], &[0.4, 0.4], 0.3).unwrap(), vec![0.0, 0.0]);
        assert_eq!(conditional_score(&[1.5], &[1.0], 0.5).unwrap(), vec![-2.0]);
        assert!(matches!(conditional_score(&[1.0], &[1.0], 0.0), Err(Error::ZeroBandwidth)));
        assert_eq!(conditional_score_order2(0.5, 2).unwrap(), vec![-4.0, -4.0]);
        assert_eq!(conditional_score_order2(1.0, 1).unwrap(), vec![-1.0]);
        assert!(matches!(conditional_score_order2(0.0, 1), Err(Error::ZeroBandwidth)));
        assert_eq!(conditional_score_orderk(3, 2), vec![0.0, 0.0]);
        assert_eq!(conditional_score_orderk(5, 1), vec![0.0]);
        assert_eq!(conditional_score_orderk(7, 2), conditional_score_orderk(3, 2));
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let h = 1e-5;
        for _ in 0..20 {
            let x = rng.normals(3);
            let mu = rng.normals(3);
            let sigma = 0.2 + rng.uniform();
            let s = conditional_score(&x, &mu, sigma).unwrap();
            let h2 = conditional_score_order2(sigma, 3).unwrap();
            for j in 0..3 {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let (fp, f0, fm) = (log_density(&xp, &mu, sigma), log_density(&x, &mu, sigma), log_density(&xm, &mu, sigma));
                let fd1 = (fp - fm) / (2.0 * h);
                assert!((fd1 - s[j]).abs() / s[j].abs().max(1e-3) < 1e-5);
                let hh = 1e-3;
                let mut xp = x.clone();
                xp[j] += hh;
                let mut xm = x.clone();
                xm[j] -= hh;
                let fd2 = (log_density(&xp, &mu, sigma) - 2.0 * f0 + log_density(&xm, &mu, sigma)) / (hh * hh);
                assert!((fd2 - h2[j]).abs() / h2[j].abs() < 1e-4);
            }
        }
    }

    #[test]
    fn single_point_marginal_monte_carlo() {
        // x1 fixed, x0 ~ N(0, I): x_t ~ N(t x1, ((1-t)^2 + sigma0^2 t (1-t)) I).
        let cfg = PathConfig::new(0.8, 1e-3).unwrap();
        let x1 = [1.5, -0.5];
        let t = 0.35;
        let mut rng = Rng::new(9);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let x0 = rng.normals(2);
                sample_bridge(&x0, &x1, t, &cfg, &mut rng).unwrap().xt
            })
            .collect();
        let var = (1.0 - t).powi(2) + cfg.sigma0.powi(2) * t * (1.0 - t);
        for j in 0..2 {
            let mean = draws.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            let v = draws.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - t * x1[j]).abs() < 4.0 * (var / n as f64).sqrt());
            assert!((v / var - 1.0).abs() < 0.05);
        }
    }

    proptest! {
        #[test]
        fn bridge_invariants(
            x0 in prop::collection::vec(-5.0f64..5.0, 3),
            x1 in prop::collection::vec(-5.0f64..5.0, 3),
            t in 0.0f64..=1.0,
            sigma0 in 0.01f64..3.0,
            seed in any::<u64>(),
        ) {
            let cfg = PathConfig::new(sigma0, 1e-3).unwrap();
            let b = sample_bridge(&x0, &x1, t, &cfg, &mut Rng::new(seed)).unwrap();
            for j in 0..3 {
                prop_assert!((b.mu_t[j] - (t * x1[j] + (1.0 - t) * x0[j])).abs() < 1e-12);
                prop_assert!((b.xt[j] - (b.mu_t[j] + b.sigma_t * b.eps0[j])).abs() < 1e-12);
            }
            prop_assert!((b.sigma_t - sigma0 * (t * (1.0 - t)).sqrt()).abs() < 1e-12);
            if b.sigma_t >= 0.05 {
                let s = conditional_score(&b.xt, &b.mu_t, b.sigma_t).unwrap();
                for (g, e) in s.iter().zip(&b.eps0) {
                    let expect = -e / b.sigma_t;
                    prop_assert!((g - expect).abs() <= 1e-12 * expect.abs().max(1.0));
                }
            }
        }

        #[test]
        fn sigma_is_symmetric(t in 0.0f64..=1.0, sigma0 in 0.01f64..3.0) {
            let cfg = PathConfig::new(sigma0, 1e-3).unwrap();
            let a = sigma_schedule(t, &cfg).unwrap();
            let b = sigma_schedule(1.0 - t, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
