//! DirectLiNGAM: causal ordering by repeated root search, then coefficient
//! recovery by least squares of each variable on its predecessors.
//!
//! A root is the variable whose regression residuals (of every other
//! variable on it) are least dependent on it, dependence measured by the
//! sum of pairwise HSIC statistics under median-heuristic Gaussian kernels.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Role};
use crate::error::{Error, Result};
use crate::independence::{hsic_from_grams, median_heuristic, Gram};
use crate::regress::ols;
use crate::scalar::{centered, dot, Scalar};

/// Root scores closer than this are ties, resolved toward the lower index.
pub const ROOT_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootScore {
    pub candidate: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFlag {
    /// The estimated ordering does not place every instrument before the
    /// treatment and the treatment before the outcome.
    OrderingInconsistentWithIV,
}

/// Direct effects among the role columns of an instrumental-variable layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvEffects {
    pub alpha_zx: f64,
    pub alpha_xy: f64,
    pub alpha_zy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalModel<T> {
    pub names: Vec<String>,
    pub roles: Vec<Role>,
    /// Variable indices from root to sink.
    pub order: Vec<usize>,
    /// `b[i][j]` is the direct effect of variable `j` on variable `i`.
    pub b: Vec<Vec<T>>,
    /// Least-squares standard errors matching `b` (zero where `b` is
    /// structurally zero).
    pub b_se: Vec<Vec<T>>,
    /// Estimated structural errors, one per variable, mean zero.
    pub residuals: Vec<Vec<T>>,
    pub flags: Vec<ModelFlag>,
}

impl<T: Scalar> CausalModel<T> {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn role_index(&self, role: Role) -> usize {
        self.roles.iter().position(|&r| r == role).expect("model carries every role")
    }

    pub fn treatment_index(&self) -> usize {
        self.role_index(Role::Treatment)
    }

    pub fn outcome_index(&self) -> usize {
        self.role_index(Role::Outcome)
    }

    pub fn instrument_indices(&self) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] == Role::Instrument).collect()
    }

    pub fn is_consistent_with_iv(&self) -> bool {
        !self.flags.contains(&ModelFlag::OrderingInconsistentWithIV)
    }

    /// Effects for the first instrument. `alpha_zy` is read from `B`
    /// whatever the ordering; it is exactly zero when the instrument does
    /// not precede the outcome.
    pub fn iv_effects(&self) -> IvEffects {
        let z = self.instrument_indices()[0];
        let (x, y) = (self.treatment_index(), self.outcome_index());
        IvEffects {
            alpha_zx: self.b[x][z].as_f64(),
            alpha_xy: self.b[y][x].as_f64(),
            alpha_zy: self.b[y][z].as_f64(),
        }
    }

    pub fn alpha_zy(&self) -> T {
        let z = self.instrument_indices()[0];
        self.b[self.outcome_index()][z]
    }

    pub fn alpha_zy_se(&self) -> T {
        let z = self.instrument_indices()[0];
        self.b_se[self.outcome_index()][z]
    }

    pub fn position(&self, var: usize) -> usize {
        self.order.iter().position(|&v| v == var).expect("variable in ordering")
    }
}

struct Candidate<T> {
    values: Vec<T>,
    gram: Option<Gram<T>>,
}

fn gram_for<T: Scalar>(v: &[T]) -> Result<Gram<T>> {
    Ok(Gram::gaussian(v, median_heuristic(v)?))
}

/// Residual of `target` regressed on `regressor` (both centered).
fn residualize<T: Scalar>(target: &[T], regressor: &[T]) -> Result<Vec<T>> {
    let ss = dot(regressor, regressor);
    let beta = dot(target, regressor) / ss;
    let r: Vec<T> = target.iter().zip(regressor).map(|(&t, &x)| t - beta * x).collect();
    if !(dot(&r, &r) > T::lit(1e-12) * dot(target, target)) {
        return Err(Error::RankDeficient);
    }
    Ok(r)
}

struct RootSearch<T> {
    scores: Vec<RootScore>,
    winner: usize,
    /// Residuals (and their Gram matrices) of the other variables on the
    /// winner, in index order.
    residuals: Vec<(usize, Vec<T>, Gram<T>)>,
}

fn search_root<T: Scalar>(vars: &mut [Candidate<T>]) -> Result<RootSearch<T>> {
    let p = vars.len();
    for v in vars.iter_mut() {
        if v.gram.is_none() {
            v.gram = Some(gram_for(&v.values)?);
        }
    }
    let mut scores = Vec::with_capacity(p);
    let mut best: Option<(f64, usize, Vec<(usize, Vec<T>, Gram<T>)>)> = None;
    for j in 0..p {
        let mut score = T::zero();
        let mut kept = Vec::with_capacity(p - 1);
        for i in (0..p).filter(|&i| i != j) {
            let r = residualize(&vars[i].values, &vars[j].values)?;
            let g = gram_for(&r)?;
            score += hsic_from_grams(vars[j].gram.as_ref().expect("filled above"), &g);
            kept.push((i, r, g));
        }
        let score = score.as_f64();
        scores.push(RootScore { candidate: j, score });
        let better = match &best {
            None => true,
            Some((b, _, _)) => score < *b - ROOT_TIE_TOLERANCE,
        };
        if better {
            best = Some((score, j, kept));
        }
    }
    let (_, winner, residuals) = best.expect("p >= 1");
    Ok(RootSearch { scores, winner, residuals })
}

fn rank_scores(mut scores: Vec<RootScore>, winner: usize) -> Vec<RootScore> {
    scores.sort_by(|a, b| {
        (a.candidate != winner)
            .cmp(&(b.candidate != winner))
            .then(a.score.total_cmp(&b.score))
            .then(a.candidate.cmp(&b.candidate))
    });
    scores
}

/// Root scores for each column, the chosen root first and the rest in
/// ascending score order.
pub fn find_root<T: Scalar>(columns: &[&[T]]) -> Result<Vec<RootScore>> {
    if columns.len() < 2 {
        return Err(Error::DegenerateInput("root search needs at least two variables".into()));
    }
    let mut vars = prepare(columns)?;
    let search = search_root(&mut vars)?;
    Ok(rank_scores(search.scores, search.winner))
}

fn prepare<T: Scalar>(columns: &[&[T]]) -> Result<Vec<Candidate<T>>> {
    let n = columns[0].len();
    columns
        .iter()
        .map(|c| {
            if c.len() != n {
                return Err(Error::LengthMismatch(n, c.len()));
            }
            let v = centered(c);
            if !(dot(&v, &v) > T::zero()) {
                return Err(Error::DegenerateInput("zero-variance column".into()));
            }
            Ok(Candidate { values: v, gram: None })
        })
        .collect()
}

/// Causal ordering of `columns` by recursive root search on residuals.
pub fn causal_order<T: Scalar>(columns: &[&[T]]) -> Result<Vec<usize>> {
    let mut vars = prepare(columns)?;
    let mut ids: Vec<usize> = (0..columns.len()).collect();
    let mut order = Vec::with_capacity(columns.len());
    while vars.len() > 1 {
        let search = search_root(&mut vars)?;
        order.push(ids[search.winner]);
        ids = search.residuals.iter().map(|(i, _, _)| ids[*i]).collect();
        vars = search
            .residuals
            .into_iter()
            .map(|(_, values, gram)| Candidate { values, gram: Some(gram) })
            .collect();
    }
    order.push(ids[0]);
    Ok(order)
}

/// Which predecessors enter each variable's regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Restriction {
    None,
    /// The outcome may not load on any instrument.
    ExcludeInstrumentsFromOutcome,
}

fn estimate<T: Scalar>(dataset: &Dataset<T>, order: Option<Vec<usize>>, restriction: Restriction) -> Result<CausalModel<T>> {
    let cols = dataset.role_columns();
    let p = cols.len();
    let names: Vec<String> = cols.iter().map(|c| c.name.clone()).collect();
    let roles: Vec<Role> = cols.iter().map(|c| c.role).collect();
    let centered_cols: Vec<Vec<T>> = cols.iter().map(|c| centered(&c.values)).collect();
    let order = match order {
        Some(o) => o,
        None => {
            let views: Vec<&[T]> = centered_cols.iter().map(Vec::as_slice).collect();
            causal_order(&views)?
        }
    };
    let mut b = vec![vec![T::zero(); p]; p];
    let mut b_se = vec![vec![T::zero(); p]; p];
    let mut residuals = vec![Vec::new(); p];
    for (pos, &target) in order.iter().enumerate() {
        let preds: Vec<usize> = order[..pos]
            .iter()
            .copied()
            .filter(|&j| {
                !(restriction == Restriction::ExcludeInstrumentsFromOutcome
                    && roles[target] == Role::Outcome
                    && roles[j] == Role::Instrument)
            })
            .collect();
        if preds.is_empty() {
            residuals[target] = centered_cols[target].clone();
            continue;
        }
        let regressors: Vec<(&str, &[T])> = preds
            .iter()
            .map(|&j| (names[j].as_str(), centered_cols[j].as_slice()))
            .collect();
        let fit = ols(&centered_cols[target], &regressors)?;
        for (k, &j) in preds.iter().enumerate() {
            b[target][j] = fit.coefficients[k];
            b_se[target][j] = fit.se[k];
        }
        residuals[target] = fit.residuals;
    }
    let pos = |v: usize| order.iter().position(|&o| o == v).expect("in order");
    let x = roles.iter().position(|&r| r == Role::Treatment).expect("treatment");
    let y = roles.iter().position(|&r| r == Role::Outcome).expect("outcome");
    let consistent = pos(x) < pos(y)
        && (0..p).filter(|&i| roles[i] == Role::Instrument).all(|z| pos(z) < pos(x));
    let flags = if consistent { Vec::new() } else { vec![ModelFlag::OrderingInconsistentWithIV] };
    Ok(CausalModel { names, roles, order, b, b_se, residuals, flags })
}

/// DirectLiNGAM on the dataset's role columns (instruments, treatment,
/// outcome), on the original centered scale.
pub fn direct_lingam<T: Scalar>(dataset: &Dataset<T>) -> Result<CausalModel<T>> {
    estimate(dataset, None, Restriction::None)
}

/// Same ordering as [`direct_lingam`], but the outcome is regressed on its
/// non-instrument predecessors only (the direct instrument effect is
/// forced to zero).
pub fn restricted_lingam<T: Scalar>(dataset: &Dataset<T>) -> Result<CausalModel<T>> {
    let unrestricted = direct_lingam(dataset)?;
    restrict(dataset, &unrestricted)
}

/// Coefficients and residuals for a given ordering of the role columns
/// (indices in canonical role order), without searching for one.
pub fn fit_with_order<T: Scalar>(dataset: &Dataset<T>, order: &[usize]) -> Result<CausalModel<T>> {
    let p = dataset.role_columns().len();
    let mut seen = vec![false; p];
    for &v in order {
        if v >= p || std::mem::replace(&mut seen[v], true) {
            return Err(Error::InvalidConfig(format!("{order:?} is not an ordering of {p} variables")));
        }
    }
    if order.len() != p {
        return Err(Error::InvalidConfig(format!("{order:?} is not an ordering of {p} variables")));
    }
    estimate(dataset, Some(order.to_vec()), Restriction::None)
}

/// Restricted model reusing the ordering of an already fitted model.
pub fn restrict<T: Scalar>(dataset: &Dataset<T>, fitted: &CausalModel<T>) -> Result<CausalModel<T>> {
    estimate(dataset, Some(fitted.order.clone()), Restriction::ExcludeInstrumentsFromOutcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use rand::Rng;
    use rand_distr::{StandardNormal, StudentT};

    fn t5(n: usize, seed: u64, tag: &str) -> Vec<f64> {
        let mut s = RandomSource::new(seed).stream(tag, 0);
        let d = StudentT::new(5.0).unwrap();
        (0..n).map(|_| s.sample(d)).collect()
    }

    fn iv_data(n: usize, seed: u64, azx: f64, axy: f64, azy: f64) -> Dataset<f64> {
        let (ez, ex, ey) = (t5(n, seed, "z"), t5(n, seed, "x"), t5(n, seed, "y"));
        let x: Vec<f64> = (0..n).map(|i| azx * ez[i] + ex[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| axy * x[i] + azy * ez[i] + ey[i]).collect();
        Dataset::from_iv(ez, x, y).unwrap()
    }

    #[test]
    fn independent_columns_tie_to_lower_index() {
        // x and y exactly orthogonal, symmetric, and each a permutation of the other
        let x = [1.0, -1.0, 2.0, -2.0, 0.0, 0.5, -0.5, 3.0, -3.0];
        let scores = find_root::<f64>(&[&x, &x.map(|v| -v)]);
        // perfectly collinear: rank deficient
        assert_eq!(scores.unwrap_err(), Error::RankDeficient);
        let a = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let b = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let scores = find_root::<f64>(&[&a, &b]).unwrap();
        assert!(scores.iter().all(|s| s.score.abs() < 1e-12));
        assert_eq!(scores[0].candidate, 0);
    }

    #[test]
    fn scores_non_negative_and_sorted() {
        let d = iv_data(300, 3, 0.7, 0.5, 0.0);
        let cols: Vec<&[f64]> = d.role_columns().iter().map(|c| c.values.as_slice()).collect();
        let s = find_root(&cols).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|r| r.score >= -1e-12));
        assert!(s[1].score <= s[2].score);
        assert!(s[0].score <= s[1].score + ROOT_TIE_TOLERANCE);
    }

    #[test]
    fn b_strictly_lower_triangular_in_order() {
        let d = iv_data(400, 4, 0.7, 0.5, 0.3);
        let m = direct_lingam(&d).unwrap();
        for (pi, &i) in m.order.iter().enumerate() {
            for &j in &m.order[pi..] {
                assert_eq!(m.b[i][j], 0.0);
            }
        }
        for r in &m.residuals {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            assert!(mean.abs() < 1e-8);
        }
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let d = iv_data(400, 5, 0.7, 0.5, 0.3);
        let m = direct_lingam(&d).unwrap();
        let cols: Vec<Vec<f64>> = d.role_columns().iter().map(|c| centered(&c.values)).collect();
        for (pos, &i) in m.order.iter().enumerate() {
            for &j in &m.order[..pos] {
                assert!(dot(&m.residuals[i], &cols[j]).abs() <= 1e-8 * 400.0);
            }
        }
    }

    #[test]
    fn recovers_violation_dgp() {
        let d = iv_data(2000, 11, 0.7, 0.5, 0.3);
        let m = direct_lingam(&d).unwrap();
        assert_eq!(m.order, vec![0, 1, 2]);
        assert!(m.is_consistent_with_iv());
        let e = m.iv_effects();
        assert!((e.alpha_zy - 0.3).abs() < 0.1, "{e:?}");
        assert!((e.alpha_xy - 0.5).abs() < 0.1, "{e:?}");
        assert!((e.alpha_zx - 0.7).abs() < 0.1, "{e:?}");
    }

    #[test]
    fn column_order_does_not_matter() {
        let d = iv_data(500, 12, 0.7, 0.5, 0.2);
        let cols = d.columns();
        let shuffled = Dataset::new(vec![cols[2].clone(), cols[0].clone(), cols[1].clone()]).unwrap();
        let (a, b) = (direct_lingam(&d).unwrap().iv_effects(), direct_lingam(&shuffled).unwrap().iv_effects());
        assert!((a.alpha_zy - b.alpha_zy).abs() < 1e-10);
        assert!((a.alpha_xy - b.alpha_xy).abs() < 1e-10);
        assert!((a.alpha_zx - b.alpha_zx).abs() < 1e-10);
    }

    #[test]
    fn restricted_forces_zero_direct_effect() {
        let d = iv_data(500, 13, 0.7, 0.5, 0.5);
        let u = direct_lingam(&d).unwrap();
        let r = restrict(&d, &u).unwrap();
        assert_eq!(r.order, u.order);
        assert_eq!(r.alpha_zy(), 0.0);
        let var = |v: &[f64]| dot(v, v);
        let y = r.outcome_index();
        assert!(var(&r.residuals[y]) > var(&u.residuals[y]));
        // instrument and treatment equations are untouched
        assert_eq!(r.residuals[0], u.residuals[0]);
        assert_eq!(r.residuals[1], u.residuals[1]);
    }

    #[test]
    fn perfectly_collinear_outcome_is_rank_deficient() {
        let z = t5(100, 14, "z");
        let x: Vec<f64> = t5(100, 14, "x").iter().zip(&z).map(|(e, z)| e + 0.7 * z).collect();
        let d = Dataset::from_iv(z, x.clone(), x).unwrap();
        assert_eq!(direct_lingam(&d).unwrap_err(), Error::RankDeficient);
    }

    #[test]
    fn works_in_single_precision() {
        let d = iv_data(600, 15, 0.7, 0.5, 0.3);
        let to32 = |c: &crate::data::Column<f64>| crate::data::Column {
            name: c.name.clone(),
            role: c.role,
            values: c.values.iter().map(|&v| v as f32).collect::<Vec<f32>>(),
        };
        let d32 = Dataset::new(d.columns().iter().map(to32).collect()).unwrap();
        let (a, b) = (direct_lingam(&d).unwrap(), direct_lingam(&d32).unwrap());
        assert_eq!(a.order, b.order);
        assert!((a.iv_effects().alpha_zy - b.iv_effects().alpha_zy).abs() < 1e-3);
    }

    #[test]
    fn gaussian_bivariate_scores_are_exchangeable() {
        // swapping the columns swaps the scores exactly
        let mut s = RandomSource::new(16).stream("g", 0);
        let z: Vec<f64> = (0..200).map(|_| s.sample(StandardNormal)).collect();
        let x: Vec<f64> = z.iter().map(|v| 0.7 * v + s.sample::<f64, _>(StandardNormal)).collect();
        let a = find_root::<f64>(&[&z, &x]).unwrap();
        let b = find_root::<f64>(&[&x, &z]).unwrap();
        let score = |v: &[RootScore], c| v.iter().find(|r| r.candidate == c).unwrap().score;
        assert!((score(&a, 0) - score(&b, 1)).abs() < 1e-12);
        assert!((score(&a, 1) - score(&b, 0)).abs() < 1e-12);
    }
}
