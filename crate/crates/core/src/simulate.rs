//! The linear instrumental-variable data-generating process with Student t
//! errors, and the Monte Carlo rejection-rate harness built on it.
//!
//! ```text
//! Z = e_z
//! X = alpha_zx Z + e_x
//! Y = alpha_xy X + alpha_zy Z + e_y        e_* iid t(df), not rescaled
//! ```

use std::io::Write;

use rand::Rng;
use rand_distr::StudentT;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, Role};
use crate::error::{Error, Result};
use crate::extests::{run_all, ExclusionConfig};
use crate::report::TestName;
use crate::rng::RandomSource;

pub const MIN_SIMULATION_N: usize = 10;

/// The five exclusion tests in table order.
pub const EXCLUSION_TESTS: [TestName; 5] = [
    TestName::BootstrapPercentile,
    TestName::AsymptoticNormal,
    TestName::Permutation,
    TestName::LikelihoodRatio,
    TestName::Hsic,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n: usize,
    pub alpha_zx: f64,
    pub alpha_xy: f64,
    pub alpha_zy: f64,
    pub df: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self { n: 500, alpha_zx: 0.7, alpha_xy: 0.5, alpha_zy: 0.0, df: 5.0, seed: 0 }
    }
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_SIMULATION_N {
            return Err(Error::InvalidConfig(format!(
                "n must be at least {MIN_SIMULATION_N}, got {}",
                self.n
            )));
        }
        if !(self.df > 2.0) || !self.df.is_finite() {
            return Err(Error::InvalidConfig(format!("df must be a finite value above 2, got {}", self.df)));
        }
        for (name, v) in [("alpha_zx", self.alpha_zx), ("alpha_xy", self.alpha_xy), ("alpha_zy", self.alpha_zy)] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Dataset drawn from `RandomSource::new(self.seed)`.
    pub fn generate(&self) -> Result<Dataset<f64>> {
        generate(self, &RandomSource::new(self.seed))
    }
}

fn t_draws(n: usize, df: f64, rng: &RandomSource, tag: &str) -> Vec<f64> {
    let dist = StudentT::new(df).expect("df validated");
    let mut s = rng.stream(tag, 0);
    (0..n).map(|_| s.sample(dist)).collect()
}

/// Columns `z`, `x`, `y`. The seed field of `spec` is ignored; draws come
/// from `rng`.
pub fn generate(spec: &SimulationSpec, rng: &RandomSource) -> Result<Dataset<f64>> {
    spec.validate()?;
    let n = spec.n;
    let z = t_draws(n, spec.df, rng, "e_z");
    let ex = t_draws(n, spec.df, rng, "e_x");
    let ey = t_draws(n, spec.df, rng, "e_y");
    let x: Vec<f64> = (0..n).map(|i| spec.alpha_zx * z[i] + ex[i]).collect();
    let y: Vec<f64> = (0..n).map(|i| spec.alpha_xy * x[i] + spec.alpha_zy * z[i] + ey[i]).collect();
    Dataset::from_iv(z, x, y)
}

/// Several independent instruments, each with its own first-stage and
/// direct effect. Columns `z1..zK`, `x`, `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiInstrumentSpec {
    pub n: usize,
    pub alpha_zx: Vec<f64>,
    pub alpha_xy: f64,
    pub alpha_zy: Vec<f64>,
    pub df: f64,
}

pub fn generate_multi(spec: &MultiInstrumentSpec, rng: &RandomSource) -> Result<Dataset<f64>> {
    let k = spec.alpha_zx.len();
    if k == 0 || spec.alpha_zy.len() != k {
        return Err(Error::InvalidConfig("alpha_zx and alpha_zy need one entry per instrument".into()));
    }
    SimulationSpec { n: spec.n, alpha_zx: 0.0, alpha_xy: spec.alpha_xy, alpha_zy: 0.0, df: spec.df, seed: 0 }
        .validate()?;
    let n = spec.n;
    let zs: Vec<Vec<f64>> = (0..k).map(|j| t_draws(n, spec.df, rng, &format!("e_z{}", j + 1))).collect();
    let mut x = t_draws(n, spec.df, rng, "e_x");
    let mut y = t_draws(n, spec.df, rng, "e_y");
    for i in 0..n {
        x[i] += (0..k).map(|j| spec.alpha_zx[j] * zs[j][i]).sum::<f64>();
        y[i] += spec.alpha_xy * x[i] + (0..k).map(|j| spec.alpha_zy[j] * zs[j][i]).sum::<f64>();
    }
    let mut columns: Vec<Column<f64>> = zs
        .into_iter()
        .enumerate()
        .map(|(j, values)| Column { name: format!("z{}", j + 1), role: Role::Instrument, values })
        .collect();
    columns.push(Column { name: "x".into(), role: Role::Treatment, values: x });
    columns.push(Column { name: "y".into(), role: Role::Outcome, values: y });
    Dataset::new(columns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRate {
    pub test: TestName,
    pub rate: f64,
    pub rejections: usize,
    /// Replicates where the test could not be computed; they count as
    /// non-rejections.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub alpha_zy: f64,
    pub n: usize,
    pub reps: usize,
    pub rates: Vec<TestRate>,
}

impl PowerCell {
    pub fn rate(&self, test: TestName) -> Option<f64> {
        self.rates.iter().find(|r| r.test == test).map(|r| r.rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub reps: usize,
    pub alpha: f64,
    pub alpha_zx: f64,
    pub alpha_xy: f64,
    pub df: f64,
    pub cells: Vec<PowerCell>,
}

impl PowerTable {
    pub fn cell(&self, alpha_zy: f64, n: usize) -> Option<&PowerCell> {
        self.cells.iter().find(|c| c.alpha_zy == alpha_zy && c.n == n)
    }

    /// Long format: one row per cell and test.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["alpha_zy", "n", "test", "rate", "reps"])?;
        for c in &self.cells {
            for r in &c.rates {
                w.write_record([
                    c.alpha_zy.to_string(),
                    c.n.to_string(),
                    r.test.label().to_string(),
                    r.rate.to_string(),
                    c.reps.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Stream for one replicate of one cell. Keyed on the cell's parameters,
/// not its position, so a cell gives the same draws in any grid.
fn replicate_source(base: &SimulationSpec, alpha_zy: f64, n: usize, rep: usize, rng: &RandomSource) -> RandomSource {
    let tag = format!(
        "power/{}/{}/{}/{}/{}",
        alpha_zy.to_bits(),
        n,
        base.alpha_zx.to_bits(),
        base.alpha_xy.to_bits(),
        base.df.to_bits()
    );
    rng.child(&tag, rep as u64)
}

/// Rejection rate of each exclusion test over `reps` simulated datasets
/// per `(alpha_zy, n)` cell.
pub fn power_analysis(
    grid_alpha_zy: &[f64],
    grid_n: &[usize],
    reps: usize,
    base: &SimulationSpec,
    config: &ExclusionConfig,
    rng: &RandomSource,
) -> Result<PowerTable> {
    if grid_alpha_zy.is_empty() || grid_n.is_empty() {
        return Err(Error::InvalidConfig("power grid must be nonempty".into()));
    }
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    config.validate()?;
    let mut cells = Vec::new();
    for &alpha_zy in grid_alpha_zy {
        for &n in grid_n {
            let spec = SimulationSpec { n, alpha_zy, ..*base };
            spec.validate()?;
            let decisions: Vec<Vec<Option<bool>>> = (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let src = replicate_source(base, alpha_zy, n, rep, rng);
                    replicate_decisions(&spec, config, &src)
                })
                .collect();
            let rates = EXCLUSION_TESTS
                .iter()
                .enumerate()
                .map(|(t, &test)| {
                    let rejections = decisions.iter().filter(|d| d[t] == Some(true)).count();
                    let failures = decisions.iter().filter(|d| d[t].is_none()).count();
                    TestRate { test, rate: rejections as f64 / reps as f64, rejections, failures }
                })
                .collect();
            cells.push(PowerCell { alpha_zy, n, reps, rates });
        }
    }
    Ok(PowerTable {
        reps,
        alpha: config.alpha,
        alpha_zx: base.alpha_zx,
        alpha_xy: base.alpha_xy,
        df: base.df,
        cells,
    })
}

/// Reject / not reject per test, `None` where the test failed.
fn replicate_decisions(spec: &SimulationSpec, config: &ExclusionConfig, src: &RandomSource) -> Vec<Option<bool>> {
    let verdict = generate(spec, &src.child("data", 0)).and_then(|d| run_all(&d, config, &src.child("tests", 0)));
    EXCLUSION_TESTS
        .iter()
        .map(|&t| match &verdict {
            Ok(v) => v.outcome(t).map(|o| o.rejects()),
            Err(_) => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{centered, dot};

    #[test]
    fn generate_is_deterministic_and_seed_sensitive() {
        let spec = SimulationSpec { seed: 3, ..SimulationSpec::default() };
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        assert_eq!(a.n(), 500);
        let b = SimulationSpec { seed: 4, ..spec }.generate().unwrap();
        assert_ne!(a.treatment().values, b.treatment().values);
        let names: Vec<&str> = a.columns().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["z", "x", "y"]);
    }

    #[test]
    fn structural_equations_hold_exactly() {
        // zero out every coefficient but one to isolate each equation
        let base = SimulationSpec { n: 50, alpha_zx: 0.0, alpha_xy: 0.0, alpha_zy: 0.0, df: 5.0, seed: 9 };
        let iso = base.generate().unwrap();
        let full = SimulationSpec { alpha_zx: 0.7, alpha_xy: 0.5, alpha_zy: 0.3, ..base }.generate().unwrap();
        let (z, ex, ey) = (&iso.columns()[0].values, &iso.columns()[1].values, &iso.columns()[2].values);
        for i in 0..50 {
            let x = 0.7 * z[i] + ex[i];
            assert_eq!(full.columns()[1].values[i], x);
            assert_eq!(full.columns()[2].values[i], 0.5 * x + 0.3 * z[i] + ey[i]);
        }
    }

    #[test]
    fn independent_when_no_effects() {
        let d = SimulationSpec { n: 20_000, alpha_zx: 0.0, alpha_zy: 0.0, alpha_xy: 0.0, seed: 1, ..Default::default() }
            .generate()
            .unwrap();
        let cols: Vec<Vec<f64>> = d.columns().iter().map(|c| centered(&c.values)).collect();
        let bound = 3.0 / (20_000f64).sqrt();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let r = dot(&cols[a], &cols[b]) / (dot(&cols[a], &cols[a]) * dot(&cols[b], &cols[b])).sqrt();
            assert!(r.abs() < bound, "{a},{b}: {r}");
        }
    }

    #[test]
    fn t5_variance_and_heavy_tails() {
        let d = SimulationSpec { n: 100_000, alpha_zx: 0.0, alpha_zy: 0.0, alpha_xy: 0.0, seed: 2, ..Default::default() }
            .generate()
            .unwrap();
        let m = crate::normality::MomentSummary::of(&d.columns()[0].values).unwrap();
        // Var t(5) = 5/3; sample kurtosis of t(5) converges too slowly to pin
        assert!((m.sd * m.sd - 5.0 / 3.0).abs() < 0.06, "{}", m.sd);
        assert!(m.kurtosis > 4.5, "{}", m.kurtosis);
    }

    #[test]
    fn rejects_invalid_specs() {
        for spec in [
            SimulationSpec { n: 5, ..Default::default() },
            SimulationSpec { df: 2.0, ..Default::default() },
            SimulationSpec { alpha_zy: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(spec.generate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn multi_instrument_layout() {
        let spec = MultiInstrumentSpec { n: 100, alpha_zx: vec![0.7, 0.7], alpha_xy: 0.5, alpha_zy: vec![0.5, 0.5], df: 5.0 };
        let d = generate_multi(&spec, &RandomSource::new(1)).unwrap();
        assert_eq!(d.instrument_count(), 2);
        let names: Vec<&str> = d.columns().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["z1", "z2", "x", "y"]);
    }

    #[test]
    fn power_grid_shape_and_single_rep_rates() {
        let config = ExclusionConfig {
            bootstrap: 99,
            permutations: crate::independence::Permutations::Random(99),
            hsic_permutations: crate::independence::Permutations::Random(99),
            ..Default::default()
        };
        let base = SimulationSpec { n: 60, ..Default::default() };
        let t = power_analysis(&[0.0, 0.5], &[40, 60], 1, &base, &config, &RandomSource::new(1)).unwrap();
        assert_eq!(t.cells.len(), 4);
        for c in &t.cells {
            assert_eq!(c.rates.len(), 5);
            assert!(c.rates.iter().all(|r| r.rate == 0.0 || r.rate == 1.0));
        }
        let csv = t.to_csv_string();
        assert!(csv.starts_with("alpha_zy,n,test,rate,reps\n"));
        assert_eq!(csv.lines().count(), 1 + 20);
        // a cell's result does not depend on the rest of the grid
        let alone = power_analysis(&[0.5], &[60], 1, &base, &config, &RandomSource::new(1)).unwrap();
        assert_eq!(alone.cells[0], *t.cell(0.5, 60).unwrap());
    }

    #[test]
    fn empty_grid_is_config_error() {
        let r = power_analysis(&[], &[100], 1, &SimulationSpec::default(), &ExclusionConfig::default(), &RandomSource::new(0));
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
