//! Plain-text tables. Everything printed here is read off a report body;
//! nothing is recomputed.

use std::fmt::Write;

use crate::extests::ExclusionVerdict;
use crate::protocol::{MultiIvReport, ProtocolReport};
use crate::report::{TestName, TestOutcome};
use crate::simulate::{PowerTable, EXCLUSION_TESTS};

use super::envelope::Body;

pub fn render(body: &Body) -> String {
    match body {
        Body::Exclusion(v) => exclusion(v),
        Body::Protocol(p) => protocol(p),
        Body::MultiInstrument(m) => multi(m),
        Body::Power(t) => power(t),
    }
}

fn p_text(p: Option<f64>) -> String {
    match p {
        Some(p) if p < 1e-4 => "<0.0001".to_string(),
        Some(p) => format!("{p:.4}"),
        None => "-".to_string(),
    }
}

fn row_label(o: &TestOutcome) -> String {
    match (o.test, o.payload.resamples) {
        (TestName::LikelihoodRatio, _) | (_, None) => o.test.label().to_string(),
        (_, Some(r)) if o.payload.exhaustive == Some(true) => format!("{} (exact, {r} perm.)", o.test.label()),
        (_, Some(r)) => format!("{} ({r} iter.)", o.test.label()),
    }
}

fn outcome_rows(out: &mut String, outcomes: &[TestOutcome]) {
    let width = outcomes.iter().map(|o| row_label(o).len()).max().unwrap_or(0).max(4);
    writeln!(out, "  {:<width$}  {:>12}  {:>9}  {}", "Test", "Statistic", "p-value", "Decision").unwrap();
    for o in outcomes {
        writeln!(
            out,
            "  {:<width$}  {:>12.4}  {:>9}  {}",
            row_label(o),
            o.statistic,
            p_text(o.p_value),
            o.decision.code()
        )
        .unwrap();
    }
}

fn exclusion(v: &ExclusionVerdict) -> String {
    let mut out = String::new();
    writeln!(out, "Exclusion restriction tests (H0: alpha_ZY = 0)").unwrap();
    writeln!(out, "  ordering: {}{}", v.ordering.join(" -> "), if v.ordering_consistent { "" } else { "  [inconsistent with IV layout]" }).unwrap();
    writeln!(out, "  alpha_ZY estimate: {:.4}   alpha_XY estimate: {:.4}", v.alpha_zy_hat, v.alpha_xy_hat).unwrap();
    if let Some(a) = v.outcomes.first().map(|o| o.alpha) {
        writeln!(out, "  alpha = {a}").unwrap();
    }
    writeln!(out).unwrap();
    outcome_rows(&mut out, &v.outcomes);
    for f in &v.failures {
        writeln!(out, "  {}: failed ({})", f.test.label(), f.error).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "Verdict: {} ({}/{})", v.label, v.rejections, v.tests_run).unwrap();
    out
}

fn protocol(p: &ProtocolReport) -> String {
    let mut out = String::new();
    writeln!(out, "Step 1. Non-Gaussianity").unwrap();
    writeln!(out, "  {:<10}  {:>9}  {:>9}  {:>9}  {:>9}  {:>10}", "variable", "skewness", "kurtosis", "JB p", "SW p", "negentropy").unwrap();
    for c in &p.step1_nongaussianity.columns {
        writeln!(
            out,
            "  {:<10}  {:>9.4}  {:>9.4}  {:>9}  {:>9}  {:>10.5}",
            c.name,
            c.moments.skewness,
            c.moments.kurtosis,
            p_text(c.jarque_bera.p_value),
            p_text(c.shapiro_wilk.as_ref().and_then(|o| o.p_value)),
            c.negentropy
        )
        .unwrap();
    }
    writeln!(out, "  satisfied: {}", if p.step1_nongaussianity.satisfied { "yes" } else { "no" }).unwrap();
    for note in &p.step1_nongaussianity.notes {
        writeln!(out, "  note: {note}").unwrap();
    }

    let f = &p.step2_first_stage;
    writeln!(out, "\nStep 2. Instrument relevance").unwrap();
    writeln!(
        out,
        "  first-stage F = {:.2} (p {}), {}",
        f.statistic,
        p_text(f.p_value),
        match f.payload.strength {
            Some(crate::report::InstrumentStrength::Weak) => "Weak",
            _ => "Strong",
        }
    )
    .unwrap();

    writeln!(out, "\nStep 3. Exogeneity (instrument vs first-stage residual, HSIC)").unwrap();
    for o in &p.step3_exogeneity {
        writeln!(
            out,
            "  {:<10}  HSIC {:.6}  p {}  {}",
            o.payload.variable.as_deref().unwrap_or("-"),
            o.statistic,
            p_text(o.p_value),
            o.decision.code()
        )
        .unwrap();
    }

    let m = &p.step4_model;
    writeln!(out, "\nStep 4. DirectLiNGAM").unwrap();
    writeln!(out, "  ordering: {}{}", m.ordering.join(" -> "), if m.consistent_with_iv { "" } else { "  [inconsistent with IV layout]" }).unwrap();
    writeln!(out, "  alpha_ZX = {:.4}   alpha_XY = {:.4}   alpha_ZY = {:.4}", m.alpha_zx, m.alpha_xy, m.alpha_zy).unwrap();

    writeln!(out, "\nStep 5. Exclusion tests").unwrap();
    outcome_rows(&mut out, &p.step5_exclusion.outcomes);
    for f in &p.step5_exclusion.failures {
        writeln!(out, "  {}: failed ({})", f.test.label(), f.error).unwrap();
    }
    let v = &p.step5_exclusion;
    writeln!(out, "  Verdict: {} ({}/{})", v.label, v.rejections, v.tests_run).unwrap();

    let c = &p.step6_comparison;
    writeln!(out, "\nStep 6. Comparison with 2SLS").unwrap();
    writeln!(out, "  LiNGAM alpha_XY = {:.4}   2SLS = {:.4} (se {:.4})   gap = {:.4}", c.lingam_alpha_xy, c.tsls_beta, c.tsls_se, c.gap).unwrap();

    if !p.warnings.is_empty() {
        writeln!(out, "\nWarnings").unwrap();
        for w in &p.warnings {
            writeln!(out, "  [step {}] {:?}: {}", w.step, w.code, w.message).unwrap();
        }
    }
    out
}

fn multi(m: &MultiIvReport) -> String {
    let mut out = String::new();
    writeln!(out, "Per-instrument exclusion tests, Bonferroni over K = {}", m.k).unwrap();
    writeln!(out, "  alpha = {}, alpha_adj = {}", m.alpha, m.alpha_adj).unwrap();
    for r in &m.instruments {
        writeln!(out, "\nInstrument {}", r.instrument).unwrap();
        outcome_rows(&mut out, &r.outcomes);
        for f in &r.failures {
            writeln!(out, "  {}: failed ({})", f.test.label(), f.error).unwrap();
        }
        writeln!(out, "  rejections at alpha_adj: {}/{}", r.rejections, r.outcomes.len() + r.failures.len()).unwrap();
    }
    writeln!(out, "\nVerdict: {}", m.final_label).unwrap();
    out
}

fn short(test: TestName) -> &'static str {
    match test {
        TestName::BootstrapPercentile => "Boot",
        TestName::AsymptoticNormal => "Asym",
        TestName::Permutation => "Perm",
        TestName::LikelihoodRatio => "LR",
        TestName::Hsic => "HSIC",
        _ => "?",
    }
}

fn power(t: &PowerTable) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "Rejection rates at alpha = {} ({} replications per cell; alpha_zx = {}, alpha_xy = {}, t({}) errors)",
        t.alpha, t.reps, t.alpha_zx, t.alpha_xy, t.df
    )
    .unwrap();
    write!(out, "  {:>8}  {:>6}", "alpha_zy", "n").unwrap();
    for test in EXCLUSION_TESTS {
        write!(out, "  {:>6}", short(test)).unwrap();
    }
    writeln!(out).unwrap();
    for c in &t.cells {
        write!(out, "  {:>8}  {:>6}", c.alpha_zy, c.n).unwrap();
        for test in EXCLUSION_TESTS {
            match c.rate(test) {
                Some(r) => write!(out, "  {r:>6.3}").unwrap(),
                None => write!(out, "  {:>6}", "-").unwrap(),
            }
        }
        writeln!(out).unwrap();
    }
    out
}
