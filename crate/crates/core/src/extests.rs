//! Tests of the exclusion restriction `H0: alpha_ZY = 0` built on the
//! DirectLiNGAM estimate, and the consensus verdict over all five.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::independence::{at_least, for_each_permutation, hsic_test, Permutations};
use crate::lingam::{direct_lingam, fit_with_order, restrict, CausalModel};
use crate::regress::ols;
use crate::report::{Decision, Payload, TestName, TestOutcome};
use crate::rng::{permutation, resample_indices, RandomSource};
use crate::scalar::{centered, Scalar};

/// Minimum resample count for bootstrap and permutation references.
pub const MIN_RESAMPLES: usize = 99;
/// Largest sample for which the LiNGAM permutation test may enumerate
/// every permutation (8! = 40320 refits).
pub const MAX_EXHAUSTIVE_REFIT_N: usize = 8;

/// Outcome-error density in the likelihood ratio uses this multiple of
/// the Silverman bandwidth. At the plain rule, isolated tail residuals of
/// heavy-tailed errors get erratic kernel scores.
pub const LR_BANDWIDTH_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionConfig {
    pub alpha: f64,
    pub bootstrap: usize,
    pub permutations: Permutations,
    pub hsic_permutations: Permutations,
}

impl Default for ExclusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            bootstrap: 1000,
            permutations: Permutations::Random(1000),
            hsic_permutations: Permutations::Random(1000),
        }
    }
}

impl ExclusionConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_resamples(self.bootstrap)?;
        for p in [self.permutations, self.hsic_permutations] {
            if let Permutations::Random(r) = p {
                check_resamples(r)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_resamples(r: usize) -> Result<()> {
    if r < MIN_RESAMPLES {
        return Err(Error::InvalidConfig(format!(
            "at least {MIN_RESAMPLES} resamples required, got {r}"
        )));
    }
    Ok(())
}

fn single_instrument<T: Scalar>(dataset: &Dataset<T>) -> Result<()> {
    dataset.validate()?;
    match dataset.instrument_count() {
        1 => Ok(()),
        k => Err(Error::NotSupported(format!(
            "exclusion tests take one instrument at a time, got {k}"
        ))),
    }
}

/// Unrestricted and restricted fits on the observed data.
#[derive(Debug, Clone)]
pub struct PointFit<T> {
    pub unrestricted: CausalModel<T>,
    pub restricted: CausalModel<T>,
}

impl<T: Scalar> PointFit<T> {
    pub fn new(dataset: &Dataset<T>) -> Result<Self> {
        single_instrument(dataset)?;
        let unrestricted = direct_lingam(dataset)?;
        let restricted = restrict(dataset, &unrestricted)?;
        Ok(Self { unrestricted, restricted })
    }

    pub fn alpha_zy(&self) -> f64 {
        self.unrestricted.alpha_zy().as_f64()
    }
}

/// Bootstrap replicates of the direct instrument effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub requested: usize,
    /// Replicate estimates in replicate order.
    pub estimates: Vec<f64>,
    /// Replicates refit under the instrument ordering because their own
    /// estimated ordering contradicted it.
    pub inconsistent: usize,
    pub failed: usize,
}

impl BootstrapDraws {
    fn payload(&self) -> Payload {
        Payload {
            resamples: Some(self.requested),
            resamples_used: Some(self.estimates.len()),
            inconsistent_orderings: Some(self.inconsistent),
            failed_resamples: Some(self.failed),
            ..Payload::default()
        }
    }
}

/// `b` row resamples, each refit with DirectLiNGAM.
pub fn bootstrap_draws<T: Scalar>(dataset: &Dataset<T>, b: usize, rng: &RandomSource) -> Result<BootstrapDraws> {
    check_resamples(b)?;
    let n = dataset.n();
    let canonical: Vec<usize> = (0..dataset.role_columns().len()).collect();
    let fits: Vec<Option<(bool, f64)>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut s = rng.stream("bootstrap", i as u64);
            let rows = resample_indices(n, &mut s);
            let sample = dataset.select_rows(&rows);
            match direct_lingam(&sample) {
                Ok(m) if m.is_consistent_with_iv() => Some((true, m.alpha_zy().as_f64())),
                // the replicate's own ordering estimates a different quantity;
                // refit it under the instrument layout instead of dropping it
                Ok(_) => fit_with_order(&sample, &canonical)
                    .ok()
                    .map(|m| (false, m.alpha_zy().as_f64())),
                Err(_) => None,
            }
        })
        .collect();
    let mut draws = BootstrapDraws { requested: b, estimates: Vec::with_capacity(b), inconsistent: 0, failed: 0 };
    for f in fits {
        match f {
            None => draws.failed += 1,
            Some((consistent, a)) => {
                draws.inconsistent += usize::from(!consistent);
                draws.estimates.push(a);
            }
        }
    }
    if draws.estimates.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "only {} of {b} bootstrap replicates usable",
            draws.estimates.len()
        )));
    }
    Ok(draws)
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval and decision from already drawn replicates.
pub fn percentile_from_draws(estimate: f64, draws: &BootstrapDraws, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let mut sorted = draws.estimates.clone();
    sorted.sort_by(f64::total_cmp);
    let ci = (quantile(&sorted, alpha / 2.0), quantile(&sorted, 1.0 - alpha / 2.0));
    let m = sorted.len();
    let below = sorted.iter().filter(|&&a| a <= 0.0).count();
    let above = sorted.iter().filter(|&&a| a >= 0.0).count();
    let p = (2.0 * (1 + below.min(above)) as f64 / (m + 1) as f64).min(1.0);
    let decision = if ci.0 > 0.0 || ci.1 < 0.0 { Decision::Reject } else { Decision::NonReject };
    let payload = Payload { estimate: Some(estimate), ci: Some(ci), ..draws.payload() };
    Ok(TestOutcome {
        test: TestName::BootstrapPercentile,
        statistic: estimate,
        p_value: Some(p),
        decision,
        alpha,
        payload,
    })
}

/// Wald test with the bootstrap standard deviation as standard error.
pub fn asymptotic_from_draws(estimate: f64, draws: &BootstrapDraws, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let m = draws.estimates.len() as f64;
    let mean = draws.estimates.iter().sum::<f64>() / m;
    let var = draws.estimates.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (m - 1.0);
    let se = var.sqrt();
    let first = draws.estimates[0];
    if !(se > 0.0) || draws.estimates.iter().all(|&a| a == first) {
        return Err(Error::ZeroBootstrapSpread);
    }
    let w = estimate / se;
    let p = 2.0 * Normal::standard().sf(w.abs());
    let payload = Payload { estimate: Some(estimate), se: Some(se), ..draws.payload() };
    Ok(TestOutcome::from_p(TestName::AsymptoticNormal, w, p, alpha).with_payload(payload))
}

pub fn bootstrap_percentile_test<T: Scalar>(
    dataset: &Dataset<T>,
    b: usize,
    alpha: f64,
    rng: &RandomSource,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let fit = PointFit::new(dataset)?;
    percentile_from_draws(fit.alpha_zy(), &bootstrap_draws(dataset, b, rng)?, alpha)
}

pub fn asymptotic_normal_test<T: Scalar>(
    dataset: &Dataset<T>,
    b: usize,
    alpha: f64,
    rng: &RandomSource,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let fit = PointFit::new(dataset)?;
    asymptotic_from_draws(fit.alpha_zy(), &bootstrap_draws(dataset, b, rng)?, alpha)
}

/// Studentized `|alpha_ZY / se|`; zero when the instrument does not enter
/// the outcome equation.
fn abs_t<T: Scalar>(m: &CausalModel<T>) -> f64 {
    let (a, se) = (m.alpha_zy().as_f64().abs(), m.alpha_zy_se().as_f64());
    if a == 0.0 {
        0.0
    } else if se > 0.0 {
        a / se
    } else {
        // exact fit; finite so reports stay valid JSON
        f64::MAX
    }
}

/// Permutes the instrument column and refits the coefficients under the
/// ordering estimated on the observed data, comparing studentized
/// `|alpha_ZY|`.
pub fn permutation_test<T: Scalar>(
    dataset: &Dataset<T>,
    permutations: Permutations,
    alpha: f64,
    rng: &RandomSource,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let fit = PointFit::new(dataset)?;
    permutation_with_fit(dataset, &fit, permutations, alpha, rng)
}

fn permutation_with_fit<T: Scalar>(
    dataset: &Dataset<T>,
    fit: &PointFit<T>,
    permutations: Permutations,
    alpha: f64,
    rng: &RandomSource,
) -> Result<TestOutcome> {
    let n = dataset.n();
    let z = dataset.instruments().next().expect("one instrument").name.clone();
    let order = &fit.unrestricted.order;
    let observed = abs_t(&fit.unrestricted);
    let refit = |perm: &[usize]| -> Option<f64> {
        let permuted = dataset.permute_column(&z, perm).ok()?;
        fit_with_order(&permuted, order).ok().map(|m| abs_t(&m))
    };
    let results: Vec<Option<f64>> = match permutations {
        Permutations::Random(r) => {
            check_resamples(r)?;
            (0..r)
                .into_par_iter()
                .map(|i| refit(&permutation(n, &mut rng.stream("permutation", i as u64))))
                .collect()
        }
        Permutations::Exhaustive => {
            if n > MAX_EXHAUSTIVE_REFIT_N {
                return Err(Error::NotSupported(format!(
                    "exhaustive permutation refits limited to n <= {MAX_EXHAUSTIVE_REFIT_N}, got {n}"
                )));
            }
            let mut all = Vec::new();
            for_each_permutation(n, |p| all.push(p.to_vec()));
            all.par_iter().map(|p| refit(p)).collect()
        }
    };
    let failed = results.iter().filter(|r| r.is_none()).count();
    let used = results.len() - failed;
    let exceed = results.iter().flatten().filter(|&&t| at_least(t, observed)).count();
    if used == 0 {
        return Err(Error::DegenerateInput("every permutation refit failed".into()));
    }
    let exhaustive = permutations == Permutations::Exhaustive;
    let p = if exhaustive {
        exceed as f64 / used as f64
    } else {
        (1 + exceed) as f64 / (used + 1) as f64
    };
    let payload = Payload {
        estimate: Some(fit.alpha_zy()),
        se: Some(fit.unrestricted.alpha_zy_se().as_f64()),
        resamples: Some(results.len()),
        resamples_used: Some(used),
        failed_resamples: Some(failed),
        exhaustive: Some(exhaustive),
        ..Payload::default()
    };
    Ok(TestOutcome::from_p(TestName::Permutation, observed, p, alpha).with_payload(payload))
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`, falling back to
/// whichever spread measure is positive.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return Err(Error::BandwidthDegenerate),
    };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Sum over observations of the leave-one-out Gaussian KDE log density.
pub fn loo_kde_log_likelihood(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewObservations { needed: 3, given: n });
    }
    let h = silverman_bandwidth(x)?;
    let scale = 1.0 / (2.0 * h * h);
    let log_norm = ((n - 1) as f64 * h * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let total = (0..n)
        .into_par_iter()
        .map(|i| {
            // log-sum-exp around the nearest neighbour so far tails cannot underflow
            let d2 = |j: usize| (x[i] - x[j]) * (x[i] - x[j]) * scale;
            let nearest = (0..n).filter(|&j| j != i).map(d2).fold(f64::INFINITY, f64::min);
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| (nearest - d2(j)).exp()).sum();
            s.ln() - nearest - log_norm
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total)
}

/// Log-likelihood of `e = y - W theta` under a fixed leave-one-out
/// Gaussian kernel density built on `centers`: observation `i` is scored
/// by the density of every center except its own. Returns the value with
/// its gradient and Hessian in `theta`.
struct KdeRegression<'a> {
    y: &'a [f64],
    w: Vec<&'a [f64]>,
    centers: &'a [f64],
    h: f64,
}

struct KdeValue {
    loglik: f64,
    grad: Vec<f64>,
    hess: Vec<Vec<f64>>,
}

impl KdeRegression<'_> {
    /// Per observation: log density, and its first and second derivative
    /// in the residual.
    fn rows(&self, theta: &[f64]) -> Vec<(f64, f64, f64)> {
        let n = self.y.len();
        let inv_h2 = 1.0 / (self.h * self.h);
        let log_norm = ((n - 1) as f64 * self.h * (2.0 * std::f64::consts::PI).sqrt()).ln();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let e = self.y[i] - self.w.iter().zip(theta).map(|(c, t)| c[i] * t).sum::<f64>();
                let g = |j: usize| -0.5 * (e - self.centers[j]) * (e - self.centers[j]) * inv_h2;
                let top = (0..n).filter(|&j| j != i).map(g).fold(f64::NEG_INFINITY, f64::max);
                let (mut total, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for j in (0..n).filter(|&j| j != i) {
                    let wt = (g(j) - top).exp();
                    let d = (e - self.centers[j]) * inv_h2;
                    total += wt;
                    s1 += wt * d;
                    s2 += wt * (d * d - inv_h2);
                }
                let (s1, s2) = (s1 / total, s2 / total);
                (top + total.ln() - log_norm, -s1, s2 - s1 * s1)
            })
            .collect()
    }

    fn evaluate(&self, theta: &[f64]) -> KdeValue {
        let p = theta.len();
        let rows = self.rows(theta);
        let mut out = KdeValue { loglik: 0.0, grad: vec![0.0; p], hess: vec![vec![0.0; p]; p] };
        for (i, &(l, d1, d2)) in rows.iter().enumerate() {
            out.loglik += l;
            for a in 0..p {
                out.grad[a] -= d1 * self.w[a][i];
                for b in 0..p {
                    out.hess[a][b] += d2 * self.w[a][i] * self.w[b][i];
                }
            }
        }
        out
    }

    /// Newton ascent from `theta`, never accepting a decrease.
    fn maximize(&self, mut theta: Vec<f64>) -> (Vec<f64>, f64) {
        let mut cur = self.evaluate(&theta);
        if theta.is_empty() {
            return (theta, cur.loglik);
        }
        for _ in 0..100 {
            let step = newton_step(&cur.hess, &cur.grad).unwrap_or_else(|| {
                // not concave here: scaled gradient step instead
                let scale = cur.hess.iter().enumerate().map(|(a, r)| r[a].abs()).fold(1e-12, f64::max);
                cur.grad.iter().map(|g| g / scale).collect()
            });
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-10 {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, d)| a + t * d).collect();
                let next = self.evaluate(&cand);
                if next.loglik > cur.loglik {
                    let gain = next.loglik - cur.loglik;
                    theta = cand;
                    cur = next;
                    moved = gain > 1e-12 * (1.0 + cur.loglik.abs());
                    break;
                }
                t /= 2.0;
            }
            if !moved {
                break;
            }
        }
        (theta, cur.loglik)
    }
}

/// `H_eff / J_eff` for the last coordinate of `theta` (the instrument), at
/// the restricted optimum. The kernel density only estimates the error
/// law, so the likelihood's curvature and its score variance disagree;
/// this ratio rescales the likelihood ratio to a chi-square(1) reference.
///
/// Curvature uses the pooled mean of `-(log f)''` (errors independent of
/// the regressors under the null), which makes the nuisance projection an
/// ordinary least-squares residual `z~` of the instrument on the other
/// regressors: `H_eff = mean(-(log f)'') sum z~^2`,
/// `J_eff = mean((log f)'^2) sum z~^2`. Pooling both keeps a few isolated
/// tail residuals, whose kernel scores are huge, from dominating.
fn calibrate(kde: &KdeRegression<'_>, theta: &[f64]) -> Result<Calibration> {
    let t = theta.len() - 1;
    let rows = kde.rows(theta);
    let z_tilde = if t == 0 {
        kde.w[t].to_vec()
    } else {
        let others: Vec<(&str, &[f64])> = kde.w[..t].iter().map(|c| ("", *c)).collect();
        ols(kde.w[t], &others)?.residuals
    };
    let n = rows.len() as f64;
    let curvature = -rows.iter().map(|r| r.2).sum::<f64>() / n;
    let ss_z: f64 = z_tilde.iter().map(|v| v * v).sum();
    let h_eff = curvature * ss_z;
    let score: f64 = rows.iter().zip(&z_tilde).map(|(r, z)| r.1 * z).sum();
    let j_eff = rows.iter().map(|r| r.1 * r.1).sum::<f64>() / n * ss_z;
    if !(j_eff > 0.0) {
        return Err(Error::DegenerateInput("kernel score is identically zero".into()));
    }
    Ok(Calibration { h_eff, j_eff, score })
}

struct Calibration {
    h_eff: f64,
    j_eff: f64,
    score: f64,
}

/// Solves `-H d = g` when `-H` is positive definite (Cholesky).
fn newton_step(hess: &[Vec<f64>], grad: &[f64]) -> Option<Vec<f64>> {
    let p = grad.len();
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = -hess[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        z[i] = (grad[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut d = vec![0.0; p];
    for i in (0..p).rev() {
        d[i] = (z[i] - (i + 1..p).map(|k| l[k][i] * d[k]).sum::<f64>()) / l[i][i];
    }
    Some(d)
}

pub fn likelihood_ratio_test<T: Scalar>(dataset: &Dataset<T>, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    likelihood_ratio_with_fit(dataset, &PointFit::new(dataset)?, alpha)
}

/// Both models share the instrument and treatment equations, so the ratio
/// reduces to the outcome equation. Its error density is estimated once,
/// by a leave-one-out kernel density on the restricted residuals, and the
/// outcome coefficients of each model are then chosen to maximize the
/// likelihood under that fixed density.
fn likelihood_ratio_with_fit<T: Scalar>(dataset: &Dataset<T>, fit: &PointFit<T>, alpha: f64) -> Result<TestOutcome> {
    let m = &fit.unrestricted;
    let y = m.outcome_index();
    let cols: Vec<Vec<f64>> = dataset
        .role_columns()
        .iter()
        .map(|c| centered(&c.values).iter().map(|v| v.as_f64()).collect())
        .collect();
    let preds: Vec<usize> = m.order[..m.position(y)].to_vec();
    let kept: Vec<usize> = preds.iter().copied().filter(|&j| m.roles[j] != Role::Instrument).collect();
    let dropped: Vec<usize> = preds.iter().copied().filter(|&j| m.roles[j] == Role::Instrument).collect();

    let restricted_resid: Vec<f64> = fit.restricted.residuals[y].iter().map(|v| v.as_f64()).collect();
    let h = LR_BANDWIDTH_SCALE * silverman_bandwidth(&restricted_resid)?;
    let kde = |regs: &[usize]| KdeRegression {
        y: &cols[y],
        w: regs.iter().map(|&j| cols[j].as_slice()).collect(),
        centers: &restricted_resid,
        h,
    };
    let start: Vec<f64> = kept.iter().map(|&j| fit.restricted.b[y][j].as_f64()).collect();
    let (theta_r, ly_r) = kde(&kept).maximize(start);
    let (theta_u, ly_u, calibration) = if dropped.is_empty() {
        (theta_r.clone(), ly_r, None)
    } else {
        let all: Vec<usize> = kept.iter().chain(&dropped).copied().collect();
        let full = kde(&all);
        let start: Vec<f64> = theta_r.iter().copied().chain(dropped.iter().map(|_| 0.0)).collect();
        let calibration = calibrate(&full, &start)?;
        let (theta_u, ly_u) = full.maximize(start);
        (theta_u, ly_u, Some(calibration))
    };

    let mut shared = 0.0;
    for (i, r) in m.residuals.iter().enumerate().filter(|&(i, _)| i != y) {
        let v: Vec<f64> = r.iter().map(|x| x.as_f64()).collect();
        shared += loo_kde_log_likelihood(&v).map_err(|e| match e {
            Error::BandwidthDegenerate => Error::BandwidthDegenerate,
            other => Error::DegenerateInput(format!("{}: {other}", m.names[i])),
        })?;
    }
    let (lu, lr) = (shared + ly_u, shared + ly_r);
    let raw = 2.0 * (ly_u - ly_r);
    let mut notes = Vec::new();
    let stat = match &calibration {
        None => raw.max(0.0),
        Some(c) if c.h_eff > 0.0 => {
            notes.push(format!("unadjusted ratio {raw:.4}, scaled by {:.4}", c.h_eff / c.j_eff));
            (raw * c.h_eff / c.j_eff).max(0.0)
        }
        Some(c) => {
            // no usable curvature: the score form the adjusted ratio approximates
            notes.push(format!("kernel likelihood not concave here; score form used (unadjusted ratio {raw:.4})"));
            c.score * c.score / c.j_eff
        }
    };
    let p = ChiSquared::new(1.0).expect("df 1").sf(stat);
    let mut payload = Payload {
        estimate: Some(fit.alpha_zy()),
        df: Some((1.0, 0.0)),
        log_likelihood_unrestricted: Some(lu),
        log_likelihood_restricted: Some(lr),
        ..Payload::default()
    };
    if !dropped.is_empty() {
        payload.notes.push(format!(
            "kernel likelihood maximized at alpha_ZY = {:.4} (bandwidth {h:.4})",
            theta_u[kept.len()]
        ));
    }
    payload.notes.extend(notes);
    if raw < -1e-6 {
        payload.notes.push(format!("raw likelihood ratio {raw:.6} was negative and floored at 0"));
    }
    Ok(TestOutcome::from_p(TestName::LikelihoodRatio, stat, p, alpha).with_payload(payload))
}

/// HSIC permutation test between the instrument and the outcome residual
/// of the restricted model.
pub fn hsic_exclusion_test<T: Scalar>(
    dataset: &Dataset<T>,
    permutations: Permutations,
    alpha: f64,
    rng: &RandomSource,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    hsic_with_fit(dataset, &PointFit::new(dataset)?, permutations, alpha, rng)
}

fn hsic_with_fit<T: Scalar>(
    dataset: &Dataset<T>,
    fit: &PointFit<T>,
    permutations: Permutations,
    alpha: f64,
    rng: &RandomSource,
) -> Result<TestOutcome> {
    let z = &dataset.instruments().next().expect("one instrument").values;
    let resid = ols(&dataset.outcome().values, &[("x", &dataset.treatment().values)])?.residuals;
    let h = hsic_test(z, &resid, permutations, rng)?;
    let payload = Payload {
        estimate: Some(fit.alpha_zy()),
        resamples: Some(h.permutations_used),
        exhaustive: Some(h.exhaustive),
        notes: vec![format!(
            "dependence can be nonlinear; read together with alpha_ZY estimate {:.4}",
            fit.alpha_zy()
        )],
        ..Payload::default()
    };
    Ok(TestOutcome::from_p(TestName::Hsic, h.statistic, h.permutation_p, alpha).with_payload(payload))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictLabel {
    #[serde(rename = "Consensus NonRejection")]
    ConsensusNonRejection,
    #[serde(rename = "Mixed Evidence")]
    MixedEvidence,
    #[serde(rename = "Strong Violation")]
    StrongViolation,
}

impl VerdictLabel {
    pub fn from_rejections(rejections: usize) -> Self {
        match rejections {
            0 => VerdictLabel::ConsensusNonRejection,
            1..=3 => VerdictLabel::MixedEvidence,
            _ => VerdictLabel::StrongViolation,
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictLabel::ConsensusNonRejection => "Consensus NonRejection",
            VerdictLabel::MixedEvidence => "Mixed Evidence",
            VerdictLabel::StrongViolation => "Strong Violation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFailure {
    pub test: TestName,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionVerdict {
    pub alpha_zy_hat: f64,
    pub alpha_xy_hat: f64,
    pub ordering: Vec<String>,
    pub ordering_consistent: bool,
    pub outcomes: Vec<TestOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<TestFailure>,
    pub rejections: usize,
    pub tests_run: usize,
    pub label: VerdictLabel,
}

impl ExclusionVerdict {
    pub fn outcome(&self, test: TestName) -> Option<&TestOutcome> {
        self.outcomes.iter().find(|o| o.test == test)
    }
}

/// All five tests on one fit, bootstrap replicates shared between the
/// percentile and Wald tests. A failing test is recorded, not fatal.
pub fn run_all<T: Scalar>(dataset: &Dataset<T>, config: &ExclusionConfig, rng: &RandomSource) -> Result<ExclusionVerdict> {
    config.validate()?;
    let fit = PointFit::new(dataset)?;
    let estimate = fit.alpha_zy();
    let draws = bootstrap_draws(dataset, config.bootstrap, &rng.child("bootstrap", 0));
    let attempts: Vec<(TestName, Result<TestOutcome>)> = vec![
        (
            TestName::BootstrapPercentile,
            draws.clone().and_then(|d| percentile_from_draws(estimate, &d, config.alpha)),
        ),
        (
            TestName::AsymptoticNormal,
            draws.and_then(|d| asymptotic_from_draws(estimate, &d, config.alpha)),
        ),
        (
            TestName::Permutation,
            permutation_with_fit(dataset, &fit, config.permutations, config.alpha, &rng.child("permutation", 0)),
        ),
        (TestName::LikelihoodRatio, likelihood_ratio_with_fit(dataset, &fit, config.alpha)),
        (
            TestName::Hsic,
            hsic_with_fit(dataset, &fit, config.hsic_permutations, config.alpha, &rng.child("hsic", 0)),
        ),
    ];
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (test, r) in attempts {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(TestFailure { test, error: e.to_string() }),
        }
    }
    let rejections = outcomes.iter().filter(|o| o.rejects()).count();
    let m = &fit.unrestricted;
    Ok(ExclusionVerdict {
        alpha_zy_hat: estimate,
        alpha_xy_hat: m.iv_effects().alpha_xy,
        ordering: m.order.iter().map(|&i| m.names[i].clone()).collect(),
        ordering_consistent: m.is_consistent_with_iv(),
        tests_run: outcomes.len(),
        outcomes,
        failures,
        rejections,
        label: VerdictLabel::from_rejections(rejections),
    })
}
