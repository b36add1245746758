//! Normality diagnostics: Jarque–Bera, Shapiro–Wilk (Royston's
//! approximation) and a contrast-function negentropy estimate.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::report::{Payload, TestName, TestOutcome};
use crate::scalar::Scalar;

pub const JB_MIN_N: usize = 8;
pub const SW_MIN_N: usize = 3;
pub const SW_MAX_N: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: f64,
    /// Population (divide-by-n) standard deviation.
    pub sd: f64,
    pub skewness: f64,
    /// Non-excess kurtosis; 3 for a Gaussian.
    pub kurtosis: f64,
}

impl MomentSummary {
    pub fn of<T: Scalar>(x: &[T]) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(Error::TooFewObservations { needed: 2, given: n });
        }
        let nt = T::from_len(n);
        let mean = x.iter().copied().sum::<T>() / nt;
        let (mut m2, mut m3, mut m4) = (T::zero(), T::zero(), T::zero());
        for &v in x {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= nt;
        m3 /= nt;
        m4 /= nt;
        if !(m2 > T::zero()) {
            return Err(Error::ZeroVariance);
        }
        let m2f = m2.as_f64();
        Ok(Self {
            n,
            mean: mean.as_f64(),
            sd: m2f.sqrt(),
            skewness: m3.as_f64() / m2f.powf(1.5),
            kurtosis: m4.as_f64() / (m2f * m2f),
        })
    }
}

/// `JB = n/6 (S² + (K-3)²/4)` against chi-square with two degrees of freedom.
pub fn jarque_bera<T: Scalar>(x: &[T], alpha: f64) -> Result<TestOutcome> {
    if x.len() < JB_MIN_N {
        return Err(Error::TooFewObservations { needed: JB_MIN_N, given: x.len() });
    }
    let m = MomentSummary::of(x)?;
    let ex = m.kurtosis - 3.0;
    let jb = m.n as f64 / 6.0 * (m.skewness * m.skewness + ex * ex / 4.0);
    let p = ChiSquared::new(2.0).expect("df > 0").sf(jb);
    Ok(TestOutcome::from_p(TestName::JarqueBera, jb, p, alpha))
}

// Royston (1995) polynomial coefficients.
const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Upper-half Shapiro–Wilk weights `a_1 >= a_2 >= ... > 0` for sample size
/// `n`; `a_i` multiplies `x_(n+1-i) - x_(i)`.
fn upper_weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let nf = n as f64;
    let m: Vec<f64> = (0..half)
        .map(|i| -std_normal.inverse_cdf((i as f64 + 1.0 - 0.375) / (nf + 0.25)))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / nf.sqrt();
    let a1 = poly(&C1, rsn) + m[0] / ssumm2;
    let mut a = vec![0.0; half];
    a[0] = a1;
    if n > 5 {
        let a2 = poly(&C2, rsn) + m[1] / ssumm2;
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
        a[1] = a2;
        for i in 2..half {
            a[i] = m[i] / fac;
        }
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        for i in 1..half {
            a[i] = m[i] / fac;
        }
    }
    a
}

/// Full antisymmetric weight vector, aligned with the ascending order
/// statistics. Unit norm.
pub fn shapiro_wilk_weights(n: usize) -> Result<Vec<f64>> {
    check_sw_size(n)?;
    let upper = upper_weights(n);
    let mut w = vec![0.0; n];
    for (i, &a) in upper.iter().enumerate() {
        w[n - 1 - i] = a;
        w[i] = -a;
    }
    Ok(w)
}

fn check_sw_size(n: usize) -> Result<()> {
    if n < SW_MIN_N {
        return Err(Error::TooFewObservations { needed: SW_MIN_N, given: n });
    }
    if n > SW_MAX_N {
        return Err(Error::TooManyObservations { limit: SW_MAX_N, given: n });
    }
    Ok(())
}

fn sw_p_value(w: f64, n: usize) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let nf = n as f64;
    if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        return p.clamp(0.0, 1.0);
    }
    let w1 = 1.0 - w;
    if w1 <= 0.0 {
        return 1.0;
    }
    let y = w1.ln();
    let z = if n <= 11 {
        let gamma = poly(&G, nf);
        if y >= gamma {
            return 1e-99;
        }
        let y = -(gamma - y).ln();
        (y - poly(&C3, nf)) / poly(&C4, nf).exp()
    } else {
        let ln_n = nf.ln();
        (y - poly(&C5, ln_n)) / poly(&C6, ln_n).exp()
    };
    std_normal.sf(z).clamp(0.0, 1.0)
}

/// Shapiro–Wilk W with Royston's coefficients and normalizing transform.
pub fn shapiro_wilk<T: Scalar>(x: &[T], alpha: f64) -> Result<TestOutcome> {
    let n = x.len();
    check_sw_size(n)?;
    let mut v: Vec<f64> = x.iter().map(|t| t.as_f64()).collect();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite input"));
    let mean = v.iter().sum::<f64>() / n as f64;
    let ss: f64 = v.iter().map(|t| (t - mean) * (t - mean)).sum();
    if !(ss > 0.0) || v[n - 1] == v[0] {
        return Err(Error::ZeroVariance);
    }
    let a = upper_weights(n);
    let num: f64 = a.iter().enumerate().map(|(i, &ai)| ai * (v[n - 1 - i] - v[i])).sum();
    let w = (num * num / ss).clamp(f64::MIN_POSITIVE, 1.0);
    let p = sw_p_value(w, n);
    Ok(TestOutcome::from_p(TestName::ShapiroWilk, w, p, alpha))
}

const NEGENTROPY_K1: f64 = 36.0 / (8.0 * 1.732_050_807_568_877_2 - 9.0);
const NEGENTROPY_K2: f64 = 24.0 / (16.0 * 1.732_050_807_568_877_2 - 27.0);

/// Negentropy approximation
/// `k1 E[x e^{-x²/2}]² + k2 (E[e^{-x²/2}] - √½)²` on the standardized sample.
pub fn negentropy<T: Scalar>(x: &[T]) -> Result<f64> {
    let m = MomentSummary::of(x)?;
    let n = x.len() as f64;
    let (mut odd, mut even) = (0.0, 0.0);
    for v in x {
        let s = (v.as_f64() - m.mean) / m.sd;
        let g = (-0.5 * s * s).exp();
        odd += s * g;
        even += g;
    }
    let odd = odd / n;
    let even = even / n - std::f64::consts::FRAC_1_SQRT_2;
    Ok((NEGENTROPY_K1 * odd * odd + NEGENTROPY_K2 * even * even).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNormality {
    pub name: String,
    pub role: Role,
    pub moments: MomentSummary,
    pub jarque_bera: TestOutcome,
    /// Absent when the sample size is outside Shapiro–Wilk's range.
    pub shapiro_wilk: Option<TestOutcome>,
    pub negentropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonGaussianityReport {
    pub columns: Vec<ColumnNormality>,
    pub jb_rejections: usize,
    /// At least one role column rejects normality under Jarque–Bera.
    pub satisfied: bool,
    pub notes: Vec<String>,
}

/// Jarque–Bera, Shapiro–Wilk and negentropy for every role column.
pub fn nongaussianity_report<T: Scalar>(dataset: &Dataset<T>, alpha: f64) -> Result<NonGaussianityReport> {
    let mut columns = Vec::new();
    let mut notes = Vec::new();
    for c in dataset.role_columns() {
        let jb = jarque_bera(&c.values, alpha)?;
        let sw = match shapiro_wilk(&c.values, alpha) {
            Ok(o) => Some(o),
            Err(Error::TooManyObservations { .. }) => {
                notes.push(format!("`{}`: Shapiro-Wilk skipped (n > {SW_MAX_N})", c.name));
                None
            }
            Err(e) => return Err(e),
        };
        if distinct_at_most_two(&c.values) {
            notes.push(format!(
                "`{}` takes only two values; its Jarque-Bera statistic is formally valid but distributionally degenerate",
                c.name
            ));
        }
        columns.push(ColumnNormality {
            name: c.name.clone(),
            role: c.role,
            moments: MomentSummary::of(&c.values)?,
            jarque_bera: jb,
            shapiro_wilk: sw.map(|mut o| {
                o.payload = Payload { variable: Some(c.name.clone()), ..Payload::default() };
                o
            }),
            negentropy: negentropy(&c.values)?,
        });
        let last = columns.last_mut().expect("just pushed");
        last.jarque_bera.payload.variable = Some(c.name.clone());
    }
    let jb_rejections = columns.iter().filter(|c| c.jarque_bera.rejects()).count();
    let satisfied = jb_rejections > 0;
    if !satisfied {
        notes.push("normality not rejected for any variable: identification may fail, proceed with caution".into());
    }
    Ok(NonGaussianityReport { columns, jb_rejections, satisfied, notes })
}

fn distinct_at_most_two<T: Scalar>(x: &[T]) -> bool {
    let first = x[0];
    let other = x.iter().find(|&&v| v != first);
    match other {
        None => true,
        Some(&o) => x.iter().all(|&v| v == first || v == o),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T25: [f64; 25] = [
        2.695, -0.579, -0.401, -0.418, -1.302, -0.191, 0.017, -0.578, 2.285, 1.507, 0.788, 1.04, 0.238, -1.146,
        1.194, 1.283, 0.521, -0.779, 0.633, 0.095, -3.095, 3.397, 0.44, -1.14, 1.521,
    ];
    const EXP9: [f64; 9] = [2.434, 1.035, 1.698, 2.033, 0.086, 0.952, 0.962, 0.044, 3.358];

    // reference values from scipy.stats.shapiro (AS R94, single precision)
    #[test]
    fn shapiro_matches_reference() {
        let cases: [(&[f64], f64, f64); 4] = [
            (&T25, 0.9829470857398206, 0.9365931066679665),
            (&EXP9, 0.9467831300519461, 0.6548102944444399),
            (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
            (&[0.1, 0.5, 0.2, 0.9, 0.3], 0.9124006561391406, 0.48215053005116),
        ];
        for (x, w, p) in cases {
            let o = shapiro_wilk(x, 0.05).unwrap();
            assert!((o.statistic - w).abs() < 2e-5, "W {} vs {w}", o.statistic);
            assert!((o.p_value.unwrap() - p).abs() < 2e-4, "p {:?} vs {p}", o.p_value);
        }
    }

    #[test]
    fn shapiro_perfect_scores_give_one() {
        for n in [3, 4, 5, 6, 11, 12, 50, 400] {
            let a = shapiro_wilk_weights(n).unwrap();
            let x: Vec<f64> = a.iter().map(|v| 3.0 * v - 2.0).collect();
            let o = shapiro_wilk(&x, 0.05).unwrap();
            assert!((o.statistic - 1.0).abs() < 1e-6, "n={n}: {}", o.statistic);
            assert!(o.statistic <= 1.0);
            let norm: f64 = a.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shapiro_size_limits() {
        assert!(matches!(shapiro_wilk(&[1.0, 2.0], 0.05), Err(Error::TooFewObservations { .. })));
        let big: Vec<f64> = (0..5001).map(|i| (i as f64).sin()).collect();
        assert!(matches!(shapiro_wilk(&big, 0.05), Err(Error::TooManyObservations { .. })));
        assert_eq!(shapiro_wilk(&[2.0; 10], 0.05).unwrap_err(), Error::ZeroVariance);
    }

    #[test]
    fn jb_zero_when_moments_gaussian() {
        // symmetric, one third of the mass at ±1: S = 0, K = 1/(1/3) = 3
        let x = [-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let m = MomentSummary::of(&x).unwrap();
        assert!(m.skewness.abs() < 1e-12);
        assert!((m.kurtosis - 3.0).abs() < 1e-12);
        let o = jarque_bera(&x, 0.05).unwrap();
        assert!(o.statistic.abs() < 1e-12);
        assert!((o.p_value.unwrap() - 1.0).abs() < 1e-12);
        assert!(!o.rejects());
    }

    #[test]
    fn jb_affine_invariance() {
        let a = jarque_bera(&T25, 0.05).unwrap().statistic;
        let y: Vec<f64> = T25.iter().map(|v| -4.5 * v + 17.0).collect();
        let b = jarque_bera(&y, 0.05).unwrap().statistic;
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn jb_errors() {
        assert!(matches!(jarque_bera(&[1.0, 2.0, 3.0], 0.05), Err(Error::TooFewObservations { .. })));
        assert_eq!(jarque_bera(&[1.0; 9], 0.05).unwrap_err(), Error::ZeroVariance);
    }

    #[test]
    fn negentropy_two_point() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let j = negentropy(&x).unwrap();
        // standardized ±1: odd term vanishes, even term is (e^{-1/2} - √½)²
        let expected = NEGENTROPY_K2 * ((-0.5f64).exp() - 0.5f64.sqrt()).powi(2);
        assert!((j - expected).abs() < 1e-12);
        assert!(j > 0.2);
        assert!(negentropy(&[1.0; 5]).is_err());
    }
}
