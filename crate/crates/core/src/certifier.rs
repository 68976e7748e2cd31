//! Weight-space recovery attacks, Monte-Carlo dememorization-depth bounds,
//! bound transfer between indistinguishable models, and the paired
//! retain/forget friendliness diagnostic.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{Classifier, LossKind, LossSpec};
use crate::numcore::normal::{clopper_pearson_interval, clopper_pearson_lower, clopper_pearson_upper};
use crate::numcore::params::hex_digest;
use crate::numcore::{gaussian_perturb, l2_project, normal_cdf, normal_quantile, ParameterVector, RngStream};
use crate::trainer::accuracy_of;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub eta: f64,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub recovery_fraction: f64,
    pub seed: u64,
    /// Accuracy is recorded every this many steps (and at the end).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_checkpoint_every() -> usize {
    10
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) {
            return Err(Error::Config(format!("eta {} < 0", self.eta)));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("recovery needs lr > 0 and batch_size >= 1".into()));
        }
        if !(self.recovery_fraction > 0.0 && self.recovery_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "recovery fraction {} outside (0, 1]",
                self.recovery_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPoint {
    pub step: usize,
    pub accuracy: f64,
    /// `||theta - theta_start||`.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub model: Classifier,
    pub trajectory: Vec<RecoveryPoint>,
}

/// Gradient descent with a projection onto `||theta - start|| <= eta` after
/// every step. `on_step` sees the step index and the projected iterate.
pub fn projected_descent<G, C>(
    start: &ParameterVector,
    eta: f64,
    steps: usize,
    lr: f64,
    mut grad: G,
    mut on_step: C,
) -> Result<ParameterVector>
where
    G: FnMut(usize, &ParameterVector) -> Result<ParameterVector>,
    C: FnMut(usize, &ParameterVector) -> Result<()>,
{
    if eta == 0.0 {
        for s in 1..=steps {
            on_step(s, start)?;
        }
        return Ok(start.clone());
    }
    let mut theta = start.clone();
    for s in 1..=steps {
        let g = grad(s - 1, &theta)?;
        theta = l2_project(&theta.axpy(-lr, &g)?, start, eta)?;
        if !theta.all_finite() {
            return Err(Error::Numeric("recovery attack diverged".into()));
        }
        on_step(s, &theta)?;
    }
    Ok(theta)
}

/// Projected minibatch descent on the recovery data's cross-entropy;
/// accuracy on `target` is recorded at step 0, every checkpoint, and the end.
pub fn recovery_attack(clf: &Classifier, recovery: &Dataset, target: &Dataset, cfg: &RecoveryConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    if recovery.is_empty() {
        return Err(Error::Domain("recovery attack needs recovery data".into()));
    }
    let spec = LossSpec {
        kind: LossKind::CrossEntropy,
        weight_decay: 0.0,
    };
    let mut r = RngStream::new(cfg.seed, 0).child("recovery-batches");
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut batches = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        if cursor >= order.len() {
            order = r.permutation(recovery.len());
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        batches.push(order[cursor..end].to_vec());
        cursor = end;
    }
    let start = clf.params.clone();
    let mut trajectory = vec![RecoveryPoint {
        step: 0,
        accuracy: accuracy_of(clf, target)?,
        distance: 0.0,
    }];
    let every = cfg.checkpoint_every.max(1);
    let theta = projected_descent(
        &start,
        cfg.eta,
        cfg.steps,
        cfg.lr,
        |s, t| Ok(clf.with_params(t.clone())?.loss_and_grad(&recovery.select(&batches[s]), &spec)?.1),
        |s, t| {
            if s % every == 0 || s == cfg.steps {
                trajectory.push(RecoveryPoint {
                    step: s,
                    accuracy: accuracy_of(&clf.with_params(t.clone())?, target)?,
                    distance: t.distance(&start)?,
                });
            }
            Ok(())
        },
    )?;
    Ok(RecoveryResult {
        model: clf.with_params(theta)?,
        trajectory,
    })
}

/// `(q_bar, q_under) = (Phi(Phi^-1(q) + eta/sigma), Phi(Phi^-1(q) - eta/sigma))`,
/// clamped so that `q_under <= q <= q_bar`.
pub fn adjusted_quantile_levels(q: f64, eta: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    if !(sigma > 0.0) || !(eta >= 0.0) {
        return Err(Error::Domain(format!("need sigma > 0 and eta >= 0, got ({sigma}, {eta})")));
    }
    if eta == 0.0 {
        return Ok((q, q));
    }
    let z = normal_quantile(q);
    let shift = eta / sigma;
    Ok((normal_cdf(z + shift).max(q), normal_cdf(z - shift).min(q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjustment {
    /// One-sided exact binomial limits on the empirical CDF.
    ClopperPearson,
    /// Plain empirical quantiles; no finite-sample correction.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub one_minus_alpha: f64,
    pub adjustment: Adjustment,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            one_minus_alpha: 0.999,
            adjustment: Adjustment::ClopperPearson,
            exec: Exec::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub q: f64,
    pub eta: f64,
    /// `eta / ||theta_hat||`.
    pub eta_relative: f64,
    pub sigma: f64,
    pub n_samples: usize,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub one_minus_alpha: f64,
    pub q_bar: f64,
    pub q_under: f64,
    pub adjustment: Adjustment,
    pub mc_digest: String,
    /// Both bounds are claimed jointly at `one_minus_alpha`.
    pub simultaneous: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub mc_values: Vec<f64>,
}

/// Accuracy of `theta_hat + kappa` on `d_star` for `n` Gaussian draws,
/// sorted ascending. Draw `i` uses its own child stream.
pub fn monte_carlo_accuracies(
    clf: &Classifier,
    d_star: &Dataset,
    sigma: f64,
    n: usize,
    rng: &RngStream,
    exec: Exec,
) -> Result<Vec<f64>> {
    if d_star.is_empty() {
        return Err(Error::Domain("certification set is empty".into()));
    }
    let mut vals = exec.try_map(n, |i| -> Result<f64> {
        let mut r = rng.child_indexed("mc-draw", i as u64);
        let theta = gaussian_perturb(&clf.params, sigma, &mut r)?;
        accuracy_of(&clf.with_params(theta)?, d_star)
    })?;
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Bounds from sorted samples at levels `(q_bar, q_under)`. Each bound gets
/// half of the error budget `1 - one_minus_alpha`. Upper bound falls back to
/// 1.0 and lower bound to 0.0 when no order statistic qualifies.
pub fn bounds_from_samples(
    sorted: &[f64],
    q_bar: f64,
    q_under: f64,
    adjustment: Adjustment,
    one_minus_alpha: f64,
) -> Result<(f64, f64)> {
    let n = sorted.len();
    if n == 0 {
        return Err(Error::SampleSize("no Monte-Carlo samples".into()));
    }
    if q_bar >= 1.0 - 1.0 / n as f64 {
        return Err(Error::SampleSize(format!(
            "level {q_bar} needs more than {n} samples (must stay below 1 - 1/n)"
        )));
    }
    let alpha = (1.0 - one_minus_alpha) / 2.0;
    let at_most = |k: usize| -> usize {
        let v = sorted[k];
        k + 1 + sorted[k + 1..].iter().take_while(|&&x| x == v).count()
    };
    let below = |k: usize| -> usize {
        let v = sorted[k];
        k - sorted[..k].iter().rev().take_while(|&&x| x == v).count()
    };
    let mut upper = 1.0;
    for k in 0..n {
        let c = at_most(k);
        let level = match adjustment {
            Adjustment::ClopperPearson => clopper_pearson_lower(c, n, alpha),
            Adjustment::Raw => c as f64 / n as f64,
        };
        if level >= q_bar {
            upper = sorted[k];
            break;
        }
    }
    let mut lower = 0.0;
    for k in (0..n).rev() {
        let c = below(k);
        let level = match adjustment {
            Adjustment::ClopperPearson => clopper_pearson_upper(c, n, alpha),
            Adjustment::Raw => c as f64 / n as f64,
        };
        if level <= q_under {
            lower = sorted[k];
            break;
        }
    }
    Ok((upper, lower.min(upper)))
}

pub(crate) fn digest_values(sorted: &[f64]) -> String {
    let bytes: Vec<u8> = sorted.iter().flat_map(|v| v.to_le_bytes()).collect();
    hex_digest(&bytes)
}

/// Certificate from an existing sorted sample set.
pub fn certify_from_samples(
    sorted: Vec<f64>,
    theta_norm: f64,
    q: f64,
    eta: f64,
    sigma: f64,
    opts: &CertifyOptions,
) -> Result<CertificateReport> {
    let (q_bar, q_under) = adjusted_quantile_levels(q, eta, sigma)?;
    let (upper, lower) = bounds_from_samples(&sorted, q_bar, q_under, opts.adjustment, opts.one_minus_alpha)?;
    Ok(CertificateReport {
        q,
        eta,
        eta_relative: if theta_norm > 0.0 { eta / theta_norm } else { f64::INFINITY },
        sigma,
        n_samples: sorted.len(),
        upper_bound: upper,
        lower_bound: lower,
        one_minus_alpha: opts.one_minus_alpha,
        q_bar,
        q_under,
        adjustment: opts.adjustment,
        mc_digest: digest_values(&sorted),
        simultaneous: true,
        mc_values: sorted,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn certify_depth(
    clf: &Classifier,
    d_star: &Dataset,
    q: f64,
    eta: f64,
    sigma: f64,
    n_samples: usize,
    rng: &RngStream,
    opts: &CertifyOptions,
) -> Result<CertificateReport> {
    if n_samples < 100 {
        return Err(Error::SampleSize(format!("need >= 100 Monte-Carlo samples, got {n_samples}")));
    }
    let (q_bar, _) = adjusted_quantile_levels(q, eta, sigma)?;
    if q_bar >= 1.0 - 1.0 / n_samples as f64 {
        return Err(Error::SampleSize(format!(
            "level {q_bar} needs more than {n_samples} samples"
        )));
    }
    let sorted = monte_carlo_accuracies(clf, d_star, sigma, n_samples, rng, opts.exec)?;
    certify_from_samples(sorted, clf.params.norm(), q, eta, sigma, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub epsilon: f64,
    pub zeta: f64,
    pub eta: f64,
    pub p_hat: f64,
    pub transfer_probability: f64,
}

/// `max(0, e^-epsilon (p_hat - zeta))`.
pub fn transfer_bound(epsilon: f64, zeta: f64, p_hat: f64) -> Result<f64> {
    if !(epsilon >= 0.0) || !(0.0..1.0).contains(&zeta) || !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::Domain(format!(
            "transfer needs epsilon >= 0, zeta in [0,1), p_hat in [0,1]; got ({epsilon}, {zeta}, {p_hat})"
        )));
    }
    Ok(((-epsilon).exp() * (p_hat - zeta)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusMass {
    pub p_hat: f64,
    pub inside: usize,
    pub runs: usize,
    /// Two-sided 95% Clopper-Pearson interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fraction of `runs` within `eta` of `theta_hat`.
pub fn estimate_radius_mass(runs: &[ParameterVector], theta_hat: &ParameterVector, eta: f64) -> Result<RadiusMass> {
    if runs.len() < 30 {
        return Err(Error::Statistics(format!("need >= 30 runs, got {}", runs.len())));
    }
    let mut inside = 0;
    for r in runs {
        if r.distance(theta_hat)? <= eta {
            inside += 1;
        }
    }
    Ok(mass_from_counts(inside, runs.len()))
}

pub fn mass_from_counts(inside: usize, runs: usize) -> RadiusMass {
    let (lo, hi) = clopper_pearson_interval(inside, runs, 0.05);
    RadiusMass {
        p_hat: inside as f64 / runs as f64,
        inside,
        runs,
        ci_low: lo,
        ci_high: hi,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriendlinessReport {
    pub retain: CertificateReport,
    pub forget: CertificateReport,
}

impl FriendlinessReport {
    /// `self` is friendlier when its retain lower bound is higher and its
    /// forget upper bound is lower.
    pub fn friendlier_than(&self, other: &Self) -> bool {
        self.retain.lower_bound > other.retain.lower_bound && self.forget.upper_bound < other.forget.upper_bound
    }
}

/// Certificates on the retain and forget sets from the same stream.
#[allow(clippy::too_many_arguments)]
pub fn unlearning_friendliness(
    clf: &Classifier,
    d_r: &Dataset,
    d_f: &Dataset,
    q: f64,
    eta: f64,
    sigma: f64,
    n_samples: usize,
    rng: &RngStream,
    opts: &CertifyOptions,
) -> Result<FriendlinessReport> {
    Ok(FriendlinessReport {
        retain: certify_depth(clf, d_r, q, eta, sigma, n_samples, rng, opts)?,
        forget: certify_depth(clf, d_f, q, eta, sigma, n_samples, rng, opts)?,
    })
}
