//! Least squares building blocks: OLS, the first-stage F test, the
//! instrument exogeneity check and two-stage least squares.
//!
//! Every regression centers its inputs first, so intercepts are implicit and
//! never reported.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::independence::{hsic_test, Permutations};
use crate::report::{InstrumentStrength, Payload, TestName, TestOutcome};
use crate::rng::RandomSource;
use crate::scalar::{centered, dot, Scalar};

/// Conventional first-stage F threshold below which an instrument is weak.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit<T> {
    pub names: Vec<String>,
    pub coefficients: Vec<T>,
    pub se: Vec<T>,
    /// Two-sided p-values from Student t with `df.1` degrees of freedom.
    pub p_values: Vec<f64>,
    pub residuals: Vec<T>,
    pub r2: T,
    pub f: T,
    pub df: (usize, usize),
}

impl<T: Scalar> OlsFit<T> {
    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn se_of(&self, name: &str) -> Option<T> {
        self.names.iter().position(|n| n == name).map(|i| self.se[i])
    }
}

/// Householder QR of a column-major `n x k` matrix.
struct Qr<T> {
    n: usize,
    k: usize,
    /// Householder vectors below the diagonal, `R` on and above it.
    a: Vec<Vec<T>>,
    tau: Vec<T>,
    diag: Vec<T>,
}

impl<T: Scalar> Qr<T> {
    fn new(columns: Vec<Vec<T>>) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        let norms: Vec<T> = columns.iter().map(|c| dot(c, c).sqrt()).collect();
        let mut a = columns;
        let mut tau = vec![T::zero(); k];
        let mut diag = vec![T::zero(); k];
        for j in 0..k {
            let norm = a[j][j..].iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(norm > T::lit(1e-10) * norms[j]) || norms[j] == T::zero() {
                return Err(Error::RankDeficient);
            }
            let alpha = if a[j][j] > T::zero() { -norm } else { norm };
            let v0 = a[j][j] - alpha;
            // v = (1, a[j+1..]/v0), tau = -v0/alpha
            for i in j + 1..n {
                a[j][i] /= v0;
            }
            tau[j] = -v0 / alpha;
            diag[j] = alpha;
            a[j][j] = T::one();
            let (head, tail) = a.split_at_mut(j + 1);
            let v = &head[j][j..];
            for col in tail.iter_mut() {
                let s = tau[j] * dot(v, &col[j..]);
                for (c, &vi) in col[j..].iter_mut().zip(v) {
                    *c -= s * vi;
                }
            }
        }
        Ok(Self { n, k, a, tau, diag })
    }

    fn r(&self, i: usize, j: usize) -> T {
        if i == j {
            self.diag[i]
        } else {
            self.a[j][i]
        }
    }

    /// Least squares solution of `A b = y`.
    fn solve(&self, y: &[T]) -> Vec<T> {
        let mut qty = y.to_vec();
        for j in 0..self.k {
            let v = &self.a[j][j..];
            let s = self.tau[j] * dot(v, &qty[j..]);
            for (q, &vi) in qty[j..].iter_mut().zip(v) {
                *q -= s * vi;
            }
        }
        let mut b = vec![T::zero(); self.k];
        for i in (0..self.k).rev() {
            let mut acc = qty[i];
            for j in i + 1..self.k {
                acc -= self.r(i, j) * b[j];
            }
            b[i] = acc / self.r(i, i);
        }
        debug_assert_eq!(qty.len(), self.n);
        b
    }

    /// Diagonal of `(AᵀA)⁻¹ = R⁻¹ R⁻ᵀ`.
    fn inverse_gram_diagonal(&self) -> Vec<T> {
        let k = self.k;
        // rows of R^{-1}
        let mut inv = vec![vec![T::zero(); k]; k];
        for c in 0..k {
            for i in (0..=c).rev() {
                let mut acc = if i == c { T::one() } else { T::zero() };
                for j in i + 1..=c {
                    acc -= self.r(i, j) * inv[j][c];
                }
                inv[i][c] = acc / self.r(i, i);
            }
        }
        inv.iter().map(|row| row.iter().map(|&v| v * v).sum()).collect()
    }
}

fn two_sided_t(t: f64, df: usize) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive df");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub(crate) fn f_survival(f: f64, df1: usize, df2: usize) -> f64 {
    if !f.is_finite() {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    let dist = FisherSnedecor::new(df1 as f64, df2 as f64).expect("positive df");
    dist.sf(f).clamp(0.0, 1.0)
}

/// Centered least squares of `y` on the named regressors.
pub fn ols<T: Scalar>(y: &[T], regressors: &[(&str, &[T])]) -> Result<OlsFit<T>> {
    let n = y.len();
    let k = regressors.len();
    if k == 0 {
        return Err(Error::InvalidConfig("at least one regressor required".into()));
    }
    for (_, x) in regressors {
        if x.len() != n {
            return Err(Error::LengthMismatch(n, x.len()));
        }
    }
    if n <= k + 1 {
        return Err(Error::TooFewObservations { needed: k + 2, given: n });
    }
    let yc = centered(y);
    let xs: Vec<Vec<T>> = regressors.iter().map(|(_, x)| centered(x)).collect();
    let qr = Qr::new(xs.clone())?;
    let coefficients = qr.solve(&yc);
    let residuals: Vec<T> = (0..n)
        .map(|i| yc[i] - xs.iter().zip(&coefficients).map(|(x, &b)| x[i] * b).sum::<T>())
        .collect();
    let rss = dot(&residuals, &residuals);
    let tss = dot(&yc, &yc);
    let dfr = n - k - 1;
    let sigma2 = rss / T::from_len(dfr);
    let se: Vec<T> = qr.inverse_gram_diagonal().into_iter().map(|d| (sigma2 * d).sqrt()).collect();
    let r2 = if tss > T::zero() {
        (T::one() - rss / tss).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let f = if r2 < T::one() {
        (r2 / T::from_len(k)) / ((T::one() - r2) / T::from_len(dfr))
    } else {
        T::infinity()
    };
    let p_values = coefficients
        .iter()
        .zip(&se)
        .map(|(&b, &s)| {
            if s > T::zero() {
                two_sided_t((b / s).as_f64(), dfr)
            } else if b == T::zero() {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(OlsFit {
        names: regressors.iter().map(|(name, _)| name.to_string()).collect(),
        coefficients,
        se,
        p_values,
        residuals,
        r2,
        f,
        df: (k, dfr),
    })
}

fn first_stage<T: Scalar>(dataset: &Dataset<T>) -> Result<OlsFit<T>> {
    let x = dataset.treatment();
    let instruments: Vec<(&str, &[T])> = dataset
        .instruments()
        .map(|c| (c.name.as_str(), c.values.as_slice()))
        .collect();
    ols(&x.values, &instruments)
}

/// F test of the treatment regressed on the instrument(s). The payload flags
/// the instrument as weak when `F < 10`.
pub fn first_stage_f<T: Scalar>(dataset: &Dataset<T>, alpha: f64) -> Result<TestOutcome> {
    let fit = first_stage(dataset)?;
    let f = fit.f.as_f64();
    let p = f_survival(f, fit.df.0, fit.df.1);
    let strength = if f < WEAK_INSTRUMENT_F {
        InstrumentStrength::Weak
    } else {
        InstrumentStrength::Strong
    };
    Ok(TestOutcome::from_p(TestName::FirstStageF, f, p, alpha).with_payload(Payload {
        df: Some((fit.df.0 as f64, fit.df.1 as f64)),
        strength: Some(strength),
        variable: Some(dataset.treatment().name.clone()),
        ..Payload::default()
    }))
}

/// HSIC permutation test of each instrument against the first-stage residual
/// of the treatment. One outcome per instrument, in dataset order.
pub fn exogeneity_check<T: Scalar>(
    dataset: &Dataset<T>,
    permutations: Permutations,
    alpha: f64,
    rng: &RandomSource,
) -> Result<Vec<TestOutcome>> {
    let fit = first_stage(dataset)?;
    dataset
        .instruments()
        .enumerate()
        .map(|(i, z)| {
            let res = hsic_test(&z.values, &fit.residuals, permutations, &rng.child("exogeneity", i as u64))?;
            Ok(TestOutcome::from_p(TestName::Hsic, res.statistic, res.permutation_p, alpha).with_payload(Payload {
                resamples: Some(res.permutations_used),
                exhaustive: Some(res.exhaustive),
                variable: Some(z.name.clone()),
                notes: vec![format!(
                    "instrument `{}` vs first-stage residual of `{}`",
                    z.name,
                    dataset.treatment().name
                )],
                ..Payload::default()
            }))
        })
        .collect()
}

/// Two-stage least squares of the outcome on the treatment, instrumented by
/// every instrument column. Conventional homoskedastic standard error.
pub fn tsls<T: Scalar>(dataset: &Dataset<T>) -> Result<OlsFit<T>> {
    let first = first_stage(dataset)?;
    let n = dataset.n();
    if n < 3 {
        return Err(Error::TooFewObservations { needed: 3, given: n });
    }
    let xc = centered(&dataset.treatment().values);
    let yc = centered(&dataset.outcome().values);
    let fitted: Vec<T> = xc.iter().zip(&first.residuals).map(|(&x, &r)| x - r).collect();
    let denom = dot(&fitted, &xc);
    let fitted_ss = dot(&fitted, &fitted);
    let scale = dot(&xc, &xc);
    if !(fitted_ss > T::lit(1e-12) * scale) || denom == T::zero() {
        return Err(Error::RankDeficient);
    }
    let beta = dot(&fitted, &yc) / denom;
    let residuals: Vec<T> = yc.iter().zip(&xc).map(|(&y, &x)| y - beta * x).collect();
    let rss = dot(&residuals, &residuals);
    let dfr = n - 2;
    let se = (rss / T::from_len(dfr) / fitted_ss).sqrt();
    let tss = dot(&yc, &yc);
    let r2 = (T::one() - rss / tss).max(T::zero()).min(T::one());
    let t = if se > T::zero() { beta / se } else { T::infinity() };
    Ok(OlsFit {
        names: vec![dataset.treatment().name.clone()],
        coefficients: vec![beta],
        se: vec![se],
        p_values: vec![two_sided_t(t.as_f64(), dfr)],
        residuals,
        r2,
        f: t * t,
        df: (1, dfr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, Role};

    fn lcg(n: usize, mut s: u64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let fit = ols(&y, &[("x", &x)]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        assert_eq!(fit.r2, 1.0);
    }

    #[test]
    fn matches_closed_form_slope() {
        let x = lcg(200, 1);
        let e = lcg(200, 2);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + b).collect();
        let (mx, my) = (x.iter().sum::<f64>() / 200.0, y.iter().sum::<f64>() / 200.0);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let fit = ols(&y, &[("x", &x)]).unwrap();
        assert!((fit.coefficients[0] - sxy / sxx).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_regressor() {
        // x and y centered and orthogonal by construction
        let x: Vec<f64> = vec![1.0, -1.0, 1.0, -1.0, 0.0, 0.0];
        let y = vec![1.0, 1.0, -1.0, -1.0, 0.5, -0.5];
        let fit = ols(&y, &[("x", &x)]).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert!(fit.f.abs() < 1e-12);
    }

    #[test]
    fn residuals_orthogonal_multi() {
        let (a, b, e) = (lcg(300, 3), lcg(300, 4), lcg(300, 5));
        let y: Vec<f64> = (0..300).map(|i| 0.4 * a[i] - 1.2 * b[i] + e[i] + 3.0).collect();
        let fit = ols(&y, &[("a", &a), ("b", &b)]).unwrap();
        for x in [&a, &b] {
            let xc = centered(x);
            assert!(dot(&xc, &fit.residuals).abs() <= 1e-8 * 300.0);
        }
        assert!((0.0..=1.0).contains(&fit.r2));
    }

    #[test]
    fn rank_deficiency_detected() {
        let a = lcg(50, 6);
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        let y = lcg(50, 7);
        assert_eq!(ols(&y, &[("a", &a), ("b", &b)]).unwrap_err(), Error::RankDeficient);
        assert!(matches!(ols(&y[..2], &[("a", &a[..2])]), Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn se_matches_textbook_formula() {
        let x = lcg(100, 8);
        let e = lcg(100, 9);
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 0.7 * a + b).collect();
        let fit = ols(&y, &[("x", &x)]).unwrap();
        let xc = centered(&x);
        let rss = dot(&fit.residuals, &fit.residuals);
        let se = (rss / 98.0 / dot(&xc, &xc)).sqrt();
        assert!((fit.se[0] - se).abs() < 1e-14);
    }

    fn iv_dataset(z: Vec<f64>, x: Vec<f64>, y: Vec<f64>) -> Dataset<f64> {
        Dataset::from_iv(z, x, y).unwrap()
    }

    #[test]
    fn tsls_single_instrument_is_wald_ratio() {
        let (z, u, v) = (lcg(400, 10), lcg(400, 11), lcg(400, 12));
        let x: Vec<f64> = (0..400).map(|i| 0.8 * z[i] + u[i]).collect();
        let y: Vec<f64> = (0..400).map(|i| 0.5 * x[i] + v[i] + 0.3 * u[i]).collect();
        let fit = tsls(&iv_dataset(z.clone(), x.clone(), y.clone())).unwrap();
        let (zc, xc, yc) = (centered(&z), centered(&x), centered(&y));
        let wald = dot(&zc, &yc) / dot(&zc, &xc);
        assert!((fit.coefficients[0] - wald).abs() < 1e-10);
    }

    #[test]
    fn tsls_with_instrument_equal_to_treatment_is_ols() {
        let (x, e) = (lcg(100, 13), lcg(100, 14));
        let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 1.5 * a + b).collect();
        let iv = tsls(&iv_dataset(x.clone(), x.clone(), y.clone())).unwrap();
        let o = ols(&y, &[("x", &x)]).unwrap();
        assert!((iv.coefficients[0] - o.coefficients[0]).abs() < 1e-10);
    }

    #[test]
    fn first_stage_f_scale_invariant() {
        let (z, u, y) = (lcg(150, 15), lcg(150, 16), lcg(150, 17));
        let x: Vec<f64> = (0..150).map(|i| 0.3 * z[i] + u[i]).collect();
        let f1 = first_stage_f(&iv_dataset(z.clone(), x.clone(), y.clone()), 0.05).unwrap();
        let z2: Vec<f64> = z.iter().map(|v| 37.5 * v).collect();
        let f2 = first_stage_f(&iv_dataset(z2, x, y), 0.05).unwrap();
        assert!((f1.statistic - f2.statistic).abs() <= 1e-8 * f1.statistic);
        assert_eq!(f1.payload.df, Some((1.0, 148.0)));
    }

    #[test]
    fn weak_flag() {
        let (z, x, y) = (lcg(100, 18), lcg(100, 19), lcg(100, 20));
        let f = first_stage_f(&iv_dataset(z, x, y), 0.05).unwrap();
        if f.statistic < 10.0 {
            assert_eq!(f.payload.strength, Some(InstrumentStrength::Weak));
        }
    }

    #[test]
    fn multiple_instruments_first_stage() {
        let (z1, z2, u, y) = (lcg(120, 21), lcg(120, 22), lcg(120, 23), lcg(120, 24));
        let x: Vec<f64> = (0..120).map(|i| z1[i] - z2[i] + u[i]).collect();
        let ds = Dataset::new(vec![
            Column { name: "z1".into(), role: Role::Instrument, values: z1 },
            Column { name: "z2".into(), role: Role::Instrument, values: z2 },
            Column { name: "x".into(), role: Role::Treatment, values: x },
            Column { name: "y".into(), role: Role::Outcome, values: y },
        ])
        .unwrap();
        let f = first_stage_f(&ds, 0.05).unwrap();
        assert_eq!(f.payload.df, Some((2.0, 117.0)));
        assert!(f.rejects());
    }
}
