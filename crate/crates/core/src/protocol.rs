//! The six-step validation protocol for one instrument, and the
//! Bonferroni-adjusted per-instrument analysis for several.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::extests::{
    asymptotic_from_draws, bootstrap_draws, check_alpha, hsic_exclusion_test, likelihood_ratio_test,
    percentile_from_draws, permutation_test, run_all, ExclusionConfig, ExclusionVerdict, PointFit,
};
use crate::independence::Permutations;
use crate::normality::{nongaussianity_report, NonGaussianityReport};
use crate::regress::{exogeneity_check, first_stage_f, ols, tsls};
use crate::report::{Decision, InstrumentStrength, TestName, TestOutcome};
use crate::rng::RandomSource;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub exclusion: ExclusionConfig,
    /// Permutations for the instrument / first-stage residual HSIC check.
    pub exogeneity_permutations: Permutations,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { exclusion: ExclusionConfig::default(), exogeneity_permutations: Permutations::Random(1000) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarningCode {
    /// No role column rejects normality; LiNGAM identification is doubtful.
    NonGaussianityNotSatisfied,
    /// First-stage F below 10.
    WeakInstrument,
    /// The instrument is dependent on the first-stage residual.
    ExogeneityRejected,
    /// The estimated ordering contradicts instrument -> treatment -> outcome.
    OrderingInconsistentWithIV,
    /// One of the exclusion tests could not be computed.
    TestFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub step: u8,
    pub code: WarningCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub ordering: Vec<String>,
    pub consistent_with_iv: bool,
    pub alpha_zx: f64,
    pub alpha_xy: f64,
    pub alpha_zy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub lingam_alpha_xy: f64,
    pub tsls_beta: f64,
    pub tsls_se: f64,
    /// `|lingam_alpha_xy - tsls_beta|`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub step1_nongaussianity: NonGaussianityReport,
    pub step2_first_stage: TestOutcome,
    pub step3_exogeneity: Vec<TestOutcome>,
    pub step4_model: ModelSummary,
    pub step5_exclusion: ExclusionVerdict,
    pub step6_comparison: Comparison,
    pub warnings: Vec<Warning>,
}

impl ProtocolReport {
    pub fn warning_codes(&self) -> Vec<WarningCode> {
        self.warnings.iter().map(|w| w.code).collect()
    }
}

/// Runs the six steps in order. Soft problems (Gaussian-looking data, a
/// weak instrument, a flipped ordering) become warnings; only invalid data
/// stops the run.
pub fn run_protocol<T: Scalar>(dataset: &Dataset<T>, config: &ProtocolConfig, rng: &RandomSource) -> Result<ProtocolReport> {
    config.exclusion.validate()?;
    dataset.validate()?;
    if dataset.instrument_count() != 1 {
        return Err(Error::NotSupported(format!(
            "the protocol takes exactly one instrument, got {}; use the multi-instrument analysis",
            dataset.instrument_count()
        )));
    }
    let alpha = config.exclusion.alpha;
    let mut warnings = Vec::new();
    let mut warn = |step: u8, code: WarningCode, message: String| warnings.push(Warning { step, code, message });

    let step1 = nongaussianity_report(dataset, alpha)?;
    if !step1.satisfied {
        warn(1, WarningCode::NonGaussianityNotSatisfied, "no role column rejects normality; proceed with caution".into());
    }

    let step2 = first_stage_f(dataset, alpha)?;
    let weak = step2.payload.strength == Some(InstrumentStrength::Weak);

    let step3 = exogeneity_check(dataset, config.exogeneity_permutations, alpha, &rng.child("exogeneity", 0))?;
    for o in step3.iter().filter(|o| o.rejects()) {
        warn(
            3,
            WarningCode::ExogeneityRejected,
            format!(
                "{} is dependent on the first-stage residual (p = {:.4})",
                o.payload.variable.as_deref().unwrap_or("instrument"),
                o.p_value.unwrap_or(f64::NAN)
            ),
        );
    }

    let verdict = run_all(dataset, &config.exclusion, &rng.child("exclusion", 0))?;
    let fit = PointFit::new(dataset)?;
    let effects = fit.unrestricted.iv_effects();
    let step4 = ModelSummary {
        ordering: verdict.ordering.clone(),
        consistent_with_iv: verdict.ordering_consistent,
        alpha_zx: effects.alpha_zx,
        alpha_xy: effects.alpha_xy,
        alpha_zy: effects.alpha_zy,
    };
    if !step4.consistent_with_iv {
        warn(
            4,
            WarningCode::OrderingInconsistentWithIV,
            format!("estimated ordering {} contradicts the instrument layout", step4.ordering.join(" -> ")),
        );
    }
    for f in &verdict.failures {
        warn(5, WarningCode::TestFailed, format!("{}: {}", f.test, f.error));
    }

    let iv = tsls(dataset)?;
    let (beta, se) = (iv.coefficients[0].as_f64(), iv.se[0].as_f64());
    let step6 = Comparison { lingam_alpha_xy: effects.alpha_xy, tsls_beta: beta, tsls_se: se, gap: (effects.alpha_xy - beta).abs() };

    if weak {
        let f = step2.statistic;
        for step in 2..=6 {
            warn(step, WarningCode::WeakInstrument, format!("weak instrument (first-stage F = {f:.2} < 10)"));
        }
    }
    warnings.sort_by_key(|w| w.step);

    Ok(ProtocolReport {
        step1_nongaussianity: step1,
        step2_first_stage: step2,
        step3_exogeneity: step3,
        step4_model: step4,
        step5_exclusion: verdict,
        step6_comparison: step6,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiIvLabel {
    #[serde(rename = "Strong Violation")]
    StrongViolation,
    #[serde(rename = "Mixed Validation")]
    MixedValidation,
    #[serde(rename = "Validated")]
    Validated,
}

impl fmt::Display for MultiIvLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MultiIvLabel::StrongViolation => "Strong Violation",
            MultiIvLabel::MixedValidation => "Mixed Validation",
            MultiIvLabel::Validated => "Validated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIvConfig {
    pub exclusion: ExclusionConfig,
    pub tests: Vec<TestName>,
}

impl Default for MultiIvConfig {
    fn default() -> Self {
        Self {
            exclusion: ExclusionConfig::default(),
            tests: vec![TestName::BootstrapPercentile, TestName::LikelihoodRatio, TestName::Hsic],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentResult {
    pub instrument: String,
    /// Decisions taken at `alpha_adj`.
    pub outcomes: Vec<TestOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<crate::extests::TestFailure>,
    pub rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiIvReport {
    pub k: usize,
    pub alpha: f64,
    pub alpha_adj: f64,
    pub instruments: Vec<InstrumentResult>,
    pub final_label: MultiIvLabel,
}

/// Each instrument in its own `(Z_k, X, Y)` system (see [`instrument_system`]), decisions at
/// `alpha / K`: a test rejects iff its p-value is below `alpha_adj`.
pub fn run_multi_instrument<T: Scalar>(
    dataset: &Dataset<T>,
    alpha: f64,
    config: &MultiIvConfig,
    rng: &RandomSource,
) -> Result<MultiIvReport> {
    check_alpha(alpha)?;
    dataset.validate()?;
    let k = dataset.instrument_count();
    if k < 2 {
        return Err(Error::NotSupported(format!("multi-instrument analysis needs at least two instruments, got {k}")));
    }
    if config.tests.is_empty() {
        return Err(Error::InvalidConfig("no tests selected".into()));
    }
    let alpha_adj = alpha / k as f64;
    let exclusion = ExclusionConfig { alpha: alpha_adj, ..config.exclusion };
    exclusion.validate()?;
    let names: Vec<String> = dataset.instruments().map(|c| c.name.clone()).collect();
    let instruments: Vec<InstrumentResult> = names
        .par_iter()
        .enumerate()
        .map(|(i, name)| {
            let src = rng.child("instrument", i as u64);
            let attempts = match instrument_system(dataset, name) {
                Ok(d) => run_subset(&d, &config.tests, &exclusion, &src),
                Err(e) => config.tests.iter().map(|&t| (t, Err(e.clone()))).collect(),
            };
            let mut outcomes = Vec::new();
            let mut failures = Vec::new();
            for (test, r) in attempts {
                match r {
                    Ok(mut o) => {
                        o.decision = Decision::from_p(o.p_value.unwrap_or(1.0), alpha_adj);
                        outcomes.push(o);
                    }
                    Err(e) => failures.push(crate::extests::TestFailure { test, error: e.to_string() }),
                }
            }
            let rejections = outcomes.iter().filter(|o| o.rejects()).count();
            InstrumentResult { instrument: name.clone(), outcomes, failures, rejections }
        })
        .collect();
    let final_label = multi_label(&instruments, config.tests.len());
    Ok(MultiIvReport { k, alpha, alpha_adj, instruments, final_label })
}

/// `(Z_k, X, Y)` with the remaining instruments partialled out of all three
/// columns, so that they do not act as confounders of `X` and `Y`.
pub fn instrument_system<T: Scalar>(dataset: &Dataset<T>, instrument: &str) -> Result<Dataset<T>> {
    let mut system = dataset.single_instrument(instrument)?;
    let others: Vec<(&str, &[T])> = dataset
        .instruments()
        .filter(|c| c.name != instrument)
        .map(|c| (c.name.as_str(), c.values.as_slice()))
        .collect();
    if others.is_empty() {
        return Ok(system);
    }
    let mut columns = system.columns().to_vec();
    for c in &mut columns {
        c.values = ols(&c.values, &others)?.residuals;
    }
    system = Dataset::new(columns)?;
    Ok(system)
}

fn run_subset<T: Scalar>(
    dataset: &Dataset<T>,
    tests: &[TestName],
    config: &ExclusionConfig,
    rng: &RandomSource,
) -> Vec<(TestName, Result<TestOutcome>)> {
    let fit = PointFit::new(dataset);
    let wants_draws = tests.iter().any(|t| matches!(t, TestName::BootstrapPercentile | TestName::AsymptoticNormal));
    let draws = if wants_draws {
        Some(bootstrap_draws(dataset, config.bootstrap, &rng.child("bootstrap", 0)))
    } else {
        None
    };
    tests
        .iter()
        .map(|&t| {
            let r = match (&fit, t) {
                (Err(e), _) => Err(e.clone()),
                (Ok(f), TestName::BootstrapPercentile) => draws
                    .clone()
                    .expect("requested")
                    .and_then(|d| percentile_from_draws(f.alpha_zy(), &d, config.alpha)),
                (Ok(f), TestName::AsymptoticNormal) => draws
                    .clone()
                    .expect("requested")
                    .and_then(|d| asymptotic_from_draws(f.alpha_zy(), &d, config.alpha)),
                (Ok(_), TestName::Permutation) => {
                    permutation_test(dataset, config.permutations, config.alpha, &rng.child("permutation", 0))
                }
                (Ok(_), TestName::LikelihoodRatio) => likelihood_ratio_test(dataset, config.alpha),
                (Ok(_), TestName::Hsic) => {
                    hsic_exclusion_test(dataset, config.hsic_permutations, config.alpha, &rng.child("hsic", 0))
                }
                (Ok(_), other) => Err(Error::InvalidConfig(format!("{other} is not an exclusion test"))),
            };
            (t, r)
        })
        .collect()
}

/// "Strong Violation" when every instrument rejects at least two thirds of
/// its tests, "Validated" when nothing rejects, "Mixed Validation"
/// otherwise (HSIC-only rejections being the typical case).
fn multi_label(results: &[InstrumentResult], tests: usize) -> MultiIvLabel {
    let total: usize = results.iter().map(|r| r.rejections).sum();
    if total == 0 {
        MultiIvLabel::Validated
    } else if results.iter().all(|r| 3 * r.rejections >= 2 * tests) {
        MultiIvLabel::StrongViolation
    } else {
        MultiIvLabel::MixedValidation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate_multi, MultiInstrumentSpec, SimulationSpec};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn quick() -> ProtocolConfig {
        ProtocolConfig {
            exclusion: ExclusionConfig {
                alpha: 0.05,
                bootstrap: 99,
                permutations: Permutations::Random(99),
                hsic_permutations: Permutations::Random(99),
            },
            exogeneity_permutations: Permutations::Random(99),
        }
    }

    fn multi(k: usize, alpha_zy: f64, n: usize) -> Dataset<f64> {
        let spec = MultiInstrumentSpec { n, alpha_zx: vec![0.7; k], alpha_xy: 0.5, alpha_zy: vec![alpha_zy; k], df: 5.0 };
        generate_multi(&spec, &RandomSource::new(17)).unwrap()
    }

    #[test]
    fn weak_instrument_warned_at_every_later_step() {
        let d = SimulationSpec { n: 200, alpha_zx: 0.02, seed: 4, ..SimulationSpec::default() }.generate().unwrap();
        let r = run_protocol(&d, &quick(), &RandomSource::new(1)).unwrap();
        assert!(r.step2_first_stage.statistic < 10.0);
        let steps: Vec<u8> = r.warnings.iter().filter(|w| w.code == WarningCode::WeakInstrument).map(|w| w.step).collect();
        assert_eq!(steps, vec![2, 3, 4, 5, 6]);
        assert!(r.warnings.windows(2).all(|w| w[0].step <= w[1].step));
    }

    #[test]
    fn strong_instrument_has_no_weak_warning() {
        let d = SimulationSpec { n: 300, seed: 6, ..SimulationSpec::default() }.generate().unwrap();
        let r = run_protocol(&d, &quick(), &RandomSource::new(1)).unwrap();
        assert!(!r.warning_codes().contains(&WarningCode::WeakInstrument));
        assert_eq!(r.step4_model.alpha_zy, r.step5_exclusion.alpha_zy_hat);
        assert!((r.step6_comparison.gap - (r.step6_comparison.lingam_alpha_xy - r.step6_comparison.tsls_beta).abs()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_data_warns_at_step_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 300;
        let mut draw = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let (ez, ex, ey) = (draw(), draw(), draw());
        let x: Vec<f64> = ez.iter().zip(&ex).map(|(z, e)| 0.7 * z + e).collect();
        let y: Vec<f64> = x.iter().zip(&ey).map(|(x, e)| 0.5 * x + e).collect();
        let d = Dataset::from_iv(ez, x, y).unwrap();
        let r = run_protocol(&d, &quick(), &RandomSource::new(1)).unwrap();
        assert!(!r.step1_nongaussianity.satisfied, "{:?}", r.step1_nongaussianity);
        assert_eq!(r.step1_nongaussianity.jb_rejections, 0);
        assert_eq!(r.warnings[0].code, WarningCode::NonGaussianityNotSatisfied);
        assert_eq!(r.warnings[0].step, 1);
    }

    #[test]
    fn report_round_trips_through_json() {
        let d = SimulationSpec { n: 120, seed: 9, ..SimulationSpec::default() }.generate().unwrap();
        let r = run_protocol(&d, &quick(), &RandomSource::new(2)).unwrap();
        let back: ProtocolReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn instrument_counts_are_checked() {
        let d = multi(2, 0.0, 80);
        assert!(matches!(run_protocol(&d, &quick(), &RandomSource::new(0)), Err(Error::NotSupported(_))));
        let one = SimulationSpec { n: 80, ..SimulationSpec::default() }.generate().unwrap();
        let cfg = MultiIvConfig { exclusion: quick().exclusion, ..MultiIvConfig::default() };
        assert!(matches!(run_multi_instrument(&one, 0.05, &cfg, &RandomSource::new(0)), Err(Error::NotSupported(_))));
    }

    #[test]
    fn bonferroni_level_is_exact() {
        let cfg = MultiIvConfig { exclusion: quick().exclusion, ..MultiIvConfig::default() };
        let r = run_multi_instrument(&multi(2, 0.0, 120), 0.05, &cfg, &RandomSource::new(0)).unwrap();
        assert_eq!(r.alpha_adj, 0.025);
        assert_eq!(r.k, 2);
        let r = run_multi_instrument(&multi(3, 0.0, 120), 0.05, &cfg, &RandomSource::new(0)).unwrap();
        assert_eq!(r.alpha_adj, 0.05 / 3.0);
        for inst in &r.instruments {
            assert_eq!(inst.outcomes.len() + inst.failures.len(), 3);
            for o in &inst.outcomes {
                assert_eq!(o.decision, Decision::from_p(o.p_value.unwrap(), 0.05 / 3.0));
            }
        }
    }

    #[test]
    fn partialled_system_is_orthogonal_to_other_instruments() {
        let d = multi(3, 0.2, 200);
        let s = instrument_system(&d, "z2").unwrap();
        assert_eq!(s.columns().iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), ["z2", "x", "y"]);
        for other in ["z1", "z3"] {
            let o = &d.column(other).unwrap().values;
            for c in s.columns() {
                let dot: f64 = c.values.iter().zip(o).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-8, "{} vs {other}: {dot}", c.name);
            }
        }
        let single = SimulationSpec { n: 50, ..SimulationSpec::default() }.generate().unwrap();
        assert_eq!(instrument_system(&single, "z").unwrap(), single);
    }

    fn result(rejections: usize) -> InstrumentResult {
        InstrumentResult { instrument: "z".into(), outcomes: Vec::new(), failures: Vec::new(), rejections }
    }

    #[test]
    fn multi_labels() {
        assert_eq!(multi_label(&[result(0), result(0)], 3), MultiIvLabel::Validated);
        assert_eq!(multi_label(&[result(2), result(3)], 3), MultiIvLabel::StrongViolation);
        assert_eq!(multi_label(&[result(1), result(1)], 3), MultiIvLabel::MixedValidation);
        assert_eq!(multi_label(&[result(3), result(0)], 3), MultiIvLabel::MixedValidation);
    }

    #[test]
    fn unknown_instrument_name() {
        let d = multi(2, 0.0, 40);
        assert_eq!(instrument_system(&d, "nope"), Err(Error::MissingColumn("nope".into())));
    }
}
