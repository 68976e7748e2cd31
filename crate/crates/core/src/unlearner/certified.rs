//! Noisy clipped fine-tuning with Gaussian noise calibrated to an
//! `(epsilon, zeta)` indistinguishability budget.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Classifier, LossSpec};
use crate::numcore::{clip_l2, l2_project, ParameterVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub gamma: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub epsilon: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub zeta: f64,
}

impl PrivacyBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::Config(format!(
                "privacy budget needs epsilon >= 0 and zeta in [0, 1), got ({}, {})",
                self.epsilon, self.zeta
            )));
        }
        Ok(())
    }
}

impl CertConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return bad(format!("zeta {} outside (0, 1)", self.zeta));
        }
        let cap = 3.0 * (1.0 / self.zeta).ln();
        if !(self.epsilon > 0.0 && self.epsilon < cap) {
            return bad(format!("epsilon {} outside (0, {cap})", self.epsilon));
        }
        if self.t < 1 {
            return bad("T must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.c0 > 0.0 && self.c1 > 0.0) {
            return bad("gamma, C0 and C1 must be > 0".into());
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        cert_sigma(self.c0, self.c1, self.gamma, self.t as f64, self.epsilon, self.zeta)
    }
}

/// `sigma = sqrt(9 ln(1/zeta) / (epsilon^2 T)) * (C0 + C1 gamma T)`.
pub fn cert_sigma(c0: f64, c1: f64, gamma: f64, t: f64, epsilon: f64, zeta: f64) -> f64 {
    cert_sigma_sq(c0, c1, gamma, t, epsilon, zeta).sqrt()
}

pub fn cert_sigma_sq(c0: f64, c1: f64, gamma: f64, t: f64, epsilon: f64, zeta: f64) -> f64 {
    9.0 * (1.0 / zeta).ln() / (epsilon * epsilon * t) * (c0 + c1 * gamma * t).powi(2)
}

/// Step count at which the calibration formula returns `sigma`: the larger
/// root of `a^2 T^2 + (2 a C0 - k) T + C0^2 = 0` with `a = C1 gamma` and
/// `k = sigma^2 epsilon^2 / (9 ln(1/zeta))`. `None` when no real root exists.
pub fn solve_steps(sigma: f64, gamma: f64, c0: f64, c1: f64, epsilon: f64, zeta: f64) -> Option<f64> {
    let a = c1 * gamma;
    let k = sigma * sigma * epsilon * epsilon / (9.0 * (1.0 / zeta).ln());
    let b = k - 2.0 * a * c0;
    let disc = b * b - 4.0 * a * a * c0 * c0;
    if a <= 0.0 || disc < 0.0 || b <= 0.0 {
        return None;
    }
    Some((b + disc.sqrt()) / (2.0 * a * a))
}

/// Diagnostics of a certified run.
#[derive(Debug, Clone, Default)]
pub struct CertTrace {
    /// `||Pi_C1(g_t)||` for every applied step.
    pub step_norms: Vec<f64>,
    /// The noise drawn for coordinate 0 at every step.
    pub first_coord_noise: Vec<f64>,
}

/// The certified dynamics with an explicit `sigma` and no budget checks;
/// `gamma = 0` or `sigma = 0` are allowed here.
#[allow(clippy::too_many_arguments)]
pub fn certified_descent(
    clf: &Classifier,
    d_r: &Dataset,
    steps: usize,
    gamma: f64,
    c0: f64,
    c1: f64,
    sigma: f64,
    spec: &LossSpec,
    rng: &RngStream,
) -> Result<(Classifier, CertTrace)> {
    if d_r.is_empty() {
        return Err(Error::Domain("certified unlearning needs a non-empty retain set".into()));
    }
    let origin = ParameterVector::zeros(clf.params.layout().clone());
    let mut model = clf.with_params(l2_project(&clf.params, &origin, c0)?)?;
    let mut noise = rng.child("cert-noise");
    let mut trace = CertTrace::default();
    for _ in 0..steps {
        let g = if gamma != 0.0 {
            let (_, g) = model.loss_and_grad(d_r, spec)?;
            clip_l2(g.values(), c1)
        } else {
            vec![0.0; model.params.len()]
        };
        trace.step_norms.push(crate::numcore::l2(&g));
        let theta = model.params.values_mut();
        for (j, (t, gj)) in theta.iter_mut().zip(&g).enumerate() {
            let phi = if sigma > 0.0 { sigma * noise.standard_normal() } else { 0.0 };
            if j == 0 {
                trace.first_coord_noise.push(phi);
            }
            *t += -gamma * gj + phi;
        }
        if !model.params.all_finite() {
            return Err(Error::Numeric("certified descent produced non-finite weights".into()));
        }
    }
    Ok((model, trace))
}

/// Validated entry point: returns the unlearned model and the calibrated sigma.
pub fn unlearn_certified(
    clf: &Classifier,
    d_r: &Dataset,
    cfg: &CertConfig,
    spec: &LossSpec,
    seed: u64,
) -> Result<(Classifier, f64)> {
    cfg.validate()?;
    let sigma = cfg.sigma();
    let (m, _) = certified_descent(clf, d_r, cfg.t, cfg.gamma, cfg.c0, cfg.c1, sigma, spec, &RngStream::new(seed, 0))?;
    Ok((m, sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishabilityResult {
    pub holds_empirically: bool,
    pub p_a: f64,
    pub p_b: f64,
}

/// Both directions of `p <= e^eps q + zeta`.
pub fn indistinguishable_probs(p_a: f64, p_b: f64, budget: &PrivacyBudget) -> IndistinguishabilityResult {
    let e = budget.epsilon.exp();
    IndistinguishabilityResult {
        holds_empirically: p_a <= e * p_b + budget.zeta && p_b <= e * p_a + budget.zeta,
        p_a,
        p_b,
    }
}

/// Empirical check restricted to the ball `{theta : ||theta - center|| <= radius}`.
pub fn indistinguishability_check(
    runs_a: &[ParameterVector],
    runs_b: &[ParameterVector],
    center: &ParameterVector,
    radius: f64,
    budget: &PrivacyBudget,
) -> Result<IndistinguishabilityResult> {
    budget.validate()?;
    if runs_a.len() < 30 || runs_b.len() < 30 {
        return Err(Error::Statistics(format!(
            "need >= 30 runs per side, got {} and {}",
            runs_a.len(),
            runs_b.len()
        )));
    }
    let frac = |runs: &[ParameterVector]| -> Result<f64> {
        let mut inside = 0usize;
        for r in runs {
            if r.distance(center)? <= radius {
                inside += 1;
            }
        }
        Ok(inside as f64 / runs.len() as f64)
    };
    Ok(indistinguishable_probs(frac(runs_a)?, frac(runs_b)?, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::Arch;
    use std::f64::consts::E;

    #[test]
    fn calibration_formula_examples() {
        assert!((cert_sigma_sq(1.0, 0.0, 0.1, 9.0, 1.0, 1.0 / E) - 1.0).abs() < 1e-12);
        assert!((cert_sigma_sq(1.0, 1.0, 1.0, 1.0, 1.0, 1.0 / E) - 36.0).abs() < 1e-12);
    }

    #[test]
    fn step_solver_inverts_the_formula() {
        let (gamma, c0, c1, eps, zeta) = (0.05, 0.5, 2.0, 1.0, 1e-3);
        let sigma = cert_sigma(c0, c1, gamma, 40.0, eps, zeta);
        let t = solve_steps(sigma, gamma, c0, c1, eps, zeta).unwrap();
        assert!((cert_sigma(c0, c1, gamma, t, eps, zeta) - sigma).abs() < 1e-9);
    }

    #[test]
    fn halving_the_clip_radius_quadruples_the_step_count() {
        // With C0 -> 0 the formula gives T = sigma^2 eps^2 / (9 ln(1/zeta) C1^2 gamma^2).
        let (sigma, gamma, c0, eps, zeta) = (1.0, 0.1, 1e-6, 1.0, 0.01);
        let t1 = solve_steps(sigma, gamma, c0, 1.0, eps, zeta).unwrap();
        let t2 = solve_steps(sigma, gamma, c0, 0.5, eps, zeta).unwrap();
        assert!((t2 / t1 - 4.0).abs() < 1e-4, "{}", t2 / t1);
    }

    #[test]
    fn invalid_budgets_are_config_errors() {
        let ok = CertConfig {
            t: 5,
            gamma: 0.1,
            c0: 1.0,
            c1: 1.0,
            epsilon: 1.0,
            zeta: 0.01,
        };
        assert!(ok.validate().is_ok());
        for bad in [
            CertConfig { zeta: 1.0, ..ok },
            CertConfig { epsilon: 0.0, ..ok },
            CertConfig { epsilon: 3.0 * 100f64.ln(), ..ok },
            CertConfig { t: 0, ..ok },
            CertConfig { c1: 0.0, ..ok },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    fn setup() -> (Classifier, Dataset) {
        let ds = make_blobs(10, 3, 4, 2.0, &RngStream::new(1, 0)).unwrap();
        let clf = Classifier::init(Arch::Linear, 4, 3, &RngStream::new(1, 1)).unwrap();
        (clf, ds)
    }

    #[test]
    fn no_dynamics_returns_the_clipped_start() {
        let (clf, ds) = setup();
        let spec = LossSpec::cross_entropy(0.0);
        let (out, _) = certified_descent(&clf, &ds, 7, 0.0, 0.5, 1.0, 0.0, &spec, &RngStream::new(0, 0)).unwrap();
        let origin = ParameterVector::zeros(clf.params.layout().clone());
        assert_eq!(out.params, l2_project(&clf.params, &origin, 0.5).unwrap());
    }

    #[test]
    fn clipped_steps_stay_inside_c1() {
        let (clf, ds) = setup();
        let spec = LossSpec::cross_entropy(0.0);
        let (_, tr) = certified_descent(&clf, &ds, 30, 0.5, 10.0, 0.01, 0.01, &spec, &RngStream::new(0, 0)).unwrap();
        assert!(tr.step_norms.iter().all(|&n| n <= 0.01 * (1.0 + 1e-12)));
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let (clf, ds) = setup();
        let spec = LossSpec::cross_entropy(0.0);
        let sigma = 0.3;
        let (_, tr) = certified_descent(&clf, &ds, 10_000, 0.0, 1.0, 1.0, sigma, &spec, &RngStream::new(5, 0)).unwrap();
        let n = tr.first_coord_noise.len() as f64;
        let m = tr.first_coord_noise.iter().sum::<f64>() / n;
        let v = tr.first_coord_noise.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((v / (sigma * sigma) - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn indistinguishability_examples() {
        let b = |eps: f64, zeta: f64| PrivacyBudget { epsilon: eps, zeta };
        assert!(!indistinguishable_probs(1.0, 0.0, &b(5.0, 0.0)).holds_empirically);
        assert!(indistinguishable_probs(0.9, 0.5, &b(2f64.ln(), 0.0)).holds_empirically);
        let mut r = RngStream::new(3, 0);
        let center = ParameterVector::from_slice(&[0.0, 0.0]);
        let runs: Vec<ParameterVector> = (0..40)
            .map(|_| ParameterVector::from_slice(&[r.standard_normal(), r.standard_normal()]))
            .collect();
        let res = indistinguishability_check(&runs, &runs, &center, 1.0, &b(0.0, 0.0)).unwrap();
        assert!(res.holds_empirically);
        assert_eq!(res.p_a, res.p_b);
        assert!(matches!(
            indistinguishability_check(&runs[..10], &runs, &center, 1.0, &b(0.0, 0.0)),
            Err(Error::Statistics(_))
        ));
    }
}
