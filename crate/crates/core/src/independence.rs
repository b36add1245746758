//! Gaussian-kernel HSIC with median-heuristic bandwidths and permutation
//! calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{permutation, RandomSource};
use crate::scalar::Scalar;

/// Largest sample for which dense Gram matrices are materialized.
pub const MAX_DENSE_N: usize = 6000;
/// Largest sample for which all `n!` permutations may be enumerated.
pub const MAX_EXHAUSTIVE_N: usize = 10;
/// Relative tolerance under which a resampled statistic counts as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth<T> {
    Fixed(T),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth<T>,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn median_heuristic() -> Self {
        Self { kind: KernelKind::Gaussian, bandwidth: Bandwidth::MedianHeuristic }
    }

    pub fn fixed(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { kind: KernelKind::Gaussian, bandwidth: Bandwidth::Fixed(bandwidth) })
    }

    pub fn resolve(&self, x: &[T]) -> Result<T> {
        match self.bandwidth {
            Bandwidth::Fixed(b) => Ok(b),
            Bandwidth::MedianHeuristic => median_heuristic(x),
        }
    }
}

/// How the permutation reference distribution is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Permutations {
    /// `R` uniformly drawn permutations; p-value uses the add-one rule.
    Random(usize),
    /// Every one of the `n!` permutations, identity included.
    Exhaustive,
}

impl Permutations {
    pub(crate) fn check(&self, n: usize) -> Result<()> {
        match *self {
            Permutations::Random(r) if r < 99 => Err(Error::InvalidConfig(format!(
                "at least 99 permutations required, got {r}"
            ))),
            Permutations::Exhaustive if n > MAX_EXHAUSTIVE_N => Err(Error::NotSupported(format!(
                "exhaustive enumeration limited to n <= {MAX_EXHAUSTIVE_N}, got {n}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsicResult {
    pub statistic: f64,
    pub permutation_p: f64,
    pub permutations_used: usize,
    pub exhaustive: bool,
    pub bandwidths: (f64, f64),
}

/// Median of the pairwise absolute differences `|x_i - x_j|`, `i < j`.
///
/// Computed exactly in `O(n log n)` by bisecting on the value with a
/// two-pointer pair count over the sorted sample, so no subsampling is
/// needed at any `n`. When more than half of the pairs are tied (common for
/// binary columns) the median would be zero; the median of the strictly
/// positive differences is returned instead.
pub fn median_heuristic<T: Scalar>(x: &[T]) -> Result<T> {
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewObservations { needed: 2, given: n });
    }
    let mut v = x.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite input"));
    let range = v[n - 1] - v[0];
    if !(range > T::zero()) {
        return Err(Error::DegenerateInput("all values identical".into()));
    }
    let pairs = n * (n - 1) / 2;
    let zeros = count_pairs_within(&v, T::zero());
    let (offset, m) = if 2 * zeros >= pairs + 1 && zeros < pairs {
        (zeros, pairs - zeros)
    } else {
        (0, pairs)
    };
    let med = if m % 2 == 1 {
        kth_pair_difference(&v, offset + m / 2 + 1, range)
    } else {
        let lo = kth_pair_difference(&v, offset + m / 2, range);
        let hi = kth_pair_difference(&v, offset + m / 2 + 1, range);
        (lo + hi) / T::lit(2.0)
    };
    Ok(med)
}

/// Number of pairs `a < b` with `v[b] - v[a] <= t`, `v` sorted ascending.
fn count_pairs_within<T: Scalar>(v: &[T], t: T) -> usize {
    let n = v.len();
    let mut count = 0;
    let mut b = 0;
    for a in 0..n {
        if b < a + 1 {
            b = a + 1;
        }
        while b < n && v[b] - v[a] <= t {
            b += 1;
        }
        count += b - a - 1;
    }
    count
}

/// The `k`-th smallest (1-based) pairwise difference, exactly: bisect on
/// the value until few candidates remain, then enumerate them.
fn kth_pair_difference<T: Scalar>(v: &[T], k: usize, range: T) -> T {
    let n = v.len();
    // invariant: count(lo) < k <= count(hi)
    let mut lo = -T::one();
    let mut hi = range;
    let mut count_lo = 0;
    let mut count_hi = count_pairs_within(v, hi);
    while count_hi - count_lo > 4 * n {
        let mid = lo + (hi - lo) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            return hi;
        }
        let c = count_pairs_within(v, mid);
        if c >= k {
            hi = mid;
            count_hi = c;
        } else {
            lo = mid;
            count_lo = c;
        }
    }
    let mut window = Vec::with_capacity(count_hi - count_lo);
    let (mut first, mut last) = (0, 0);
    for a in 0..n {
        first = first.max(a + 1);
        while first < n && v[first] - v[a] <= lo {
            first += 1;
        }
        last = last.max(first);
        while last < n && v[last] - v[a] <= hi {
            last += 1;
        }
        window.extend(v[first..last].iter().map(|&b| b - v[a]));
    }
    let rank = k - count_lo - 1;
    let (_, kth, _) = window.select_nth_unstable_by(rank, |a, b| a.partial_cmp(b).expect("finite"));
    *kth
}

/// Packed Gaussian Gram matrix: strict upper triangle plus row sums. The
/// diagonal is identically one.
#[derive(Debug, Clone)]
pub(crate) struct Gram<T> {
    n: usize,
    upper: Vec<T>,
    row_sums: Vec<T>,
    total: T,
}

impl<T: Scalar> Gram<T> {
    pub(crate) fn gaussian(x: &[T], bandwidth: T) -> Self {
        let n = x.len();
        let scale = T::one() / (T::lit(2.0) * bandwidth * bandwidth);
        let mut upper = vec![T::zero(); n * n.saturating_sub(1) / 2];
        let mut row_sums = vec![T::one(); n];
        fill_gaussian(x, scale, &mut upper, &mut row_sums);
        let total = row_sums.iter().copied().sum();
        Self { n, upper, row_sums, total }
    }

    pub(crate) fn with_kernel(x: &[T], kernel: &KernelSpec<T>) -> Result<(Self, T)> {
        let bw = kernel.resolve(x)?;
        Ok((Self::gaussian(x, bw), bw))
    }
}

fn fill_gaussian<T: Scalar>(x: &[T], scale: T, upper: &mut [T], row_sums: &mut [T]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { fill_gaussian_avx2(x, scale, upper, row_sums) };
            return;
        }
    }
    fill_gaussian_portable(x, scale, upper, row_sums);
}

// Wider vectors only; no FMA, so results match the portable path bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_gaussian_avx2<T: Scalar>(x: &[T], scale: T, upper: &mut [T], row_sums: &mut [T]) {
    fill_gaussian_portable(x, scale, upper, row_sums);
}

#[inline(always)]
fn fill_gaussian_portable<T: Scalar>(x: &[T], scale: T, upper: &mut [T], row_sums: &mut [T]) {
    let n = x.len();
    let mut pos = 0;
    for a in 0..n {
        let xa = x[a];
        let rest = &x[a + 1..];
        let row = &mut upper[pos..pos + rest.len()];
        for (k, &xb) in row.iter_mut().zip(rest) {
            let d = xa - xb;
            *k = T::exp_nonpositive(-(d * d) * scale);
        }
        let mut acc = T::zero();
        for (s, &k) in row_sums[a + 1..].iter_mut().zip(row.iter()) {
            acc += k;
            *s += k;
        }
        row_sums[a] += acc;
        pos += rest.len();
    }
}

/// `(1/n²) tr(K H L H)` from two packed Gram matrices.
pub(crate) fn hsic_from_grams<T: Scalar>(k: &Gram<T>, l: &Gram<T>) -> T {
    let n = T::from_len(k.n);
    let cross: T = k.upper.iter().zip(&l.upper).map(|(&a, &b)| a * b).sum();
    let elementwise = n + T::lit(2.0) * cross;
    let rows: T = k.row_sums.iter().zip(&l.row_sums).map(|(&a, &b)| a * b).sum();
    (elementwise - T::lit(2.0) * rows / n + k.total * l.total / (n * n)) / (n * n)
}

fn check_pair<T>(x: &[T], y: &[T], min_n: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min_n {
        return Err(Error::TooFewObservations { needed: min_n, given: x.len() });
    }
    if x.len() > MAX_DENSE_N {
        return Err(Error::NotSupported(format!(
            "dense Gram matrices limited to n <= {MAX_DENSE_N}, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Biased HSIC estimate `(1/n²) tr(K H L H)`.
pub fn hsic_statistic<T: Scalar>(x: &[T], y: &[T], kx: &KernelSpec<T>, ky: &KernelSpec<T>) -> Result<T> {
    check_pair(x, y, 4)?;
    let (k, _) = Gram::with_kernel(x, kx)?;
    let (l, _) = Gram::with_kernel(y, ky)?;
    Ok(hsic_from_grams(&k, &l))
}

/// HSIC permutation test with median-heuristic bandwidths.
pub fn hsic_test<T: Scalar>(x: &[T], y: &[T], permutations: Permutations, rng: &RandomSource) -> Result<HsicResult> {
    let k = KernelSpec::median_heuristic();
    hsic_test_with(x, y, &k, &k, permutations, rng)
}

pub fn hsic_test_with<T: Scalar>(
    x: &[T],
    y: &[T],
    kx: &KernelSpec<T>,
    ky: &KernelSpec<T>,
    permutations: Permutations,
    rng: &RandomSource,
) -> Result<HsicResult> {
    let min_n = if permutations == Permutations::Exhaustive { 4 } else { 8 };
    check_pair(x, y, min_n)?;
    permutations.check(x.len())?;
    let bx = kx.resolve(x)?;
    let by = ky.resolve(y)?;
    let dense = DensePair::new(x, y, bx, by);
    let n = x.len();
    let identity: Vec<usize> = (0..n).collect();
    let observed = dense.statistic(&identity);

    let (exceed, used) = match permutations {
        Permutations::Random(r) => {
            let exceed = (0..r)
                .into_par_iter()
                .map(|i| {
                    let mut s = rng.stream("hsic-permutation", i as u64);
                    let perm = permutation(n, &mut s);
                    usize::from(at_least(dense.statistic(&perm), observed))
                })
                .sum::<usize>();
            (exceed, r)
        }
        Permutations::Exhaustive => {
            let mut exceed = 0;
            let mut total = 0;
            for_each_permutation(n, |perm| {
                total += 1;
                exceed += usize::from(at_least(dense.statistic(perm), observed));
            });
            (exceed, total)
        }
    };
    let p = match permutations {
        Permutations::Random(r) => (1 + exceed) as f64 / (r + 1) as f64,
        Permutations::Exhaustive => exceed as f64 / used as f64,
    };
    Ok(HsicResult {
        statistic: observed.as_f64(),
        permutation_p: p,
        permutations_used: used,
        exhaustive: permutations == Permutations::Exhaustive,
        bandwidths: (bx.as_f64(), by.as_f64()),
    })
}

/// `resampled >= observed`, treating values within a relative
/// [`TIE_TOLERANCE`] as ties (and therefore as exceedances).
pub fn at_least<T: Scalar>(resampled: T, observed: T) -> bool {
    let tol = T::lit(TIE_TOLERANCE) * observed.abs().max(resampled.abs());
    resampled >= observed - tol
}

/// Centered `K` and raw `L`, both dense, for repeated permuted evaluation.
struct DensePair<T> {
    n: usize,
    kc: Vec<T>,
    l: Vec<T>,
}

impl<T: Scalar> DensePair<T> {
    fn new(x: &[T], y: &[T], bx: T, by: T) -> Self {
        let n = x.len();
        let full = |v: &[T], bw: T| {
            let scale = T::one() / (T::lit(2.0) * bw * bw);
            let mut m = vec![T::one(); n * n];
            for a in 0..n {
                for b in a + 1..n {
                    let d = v[a] - v[b];
                    let k = (-(d * d) * scale).exp();
                    m[a * n + b] = k;
                    m[b * n + a] = k;
                }
            }
            m
        };
        let mut kc = full(x, bx);
        let l = full(y, by);
        let nn = T::from_len(n);
        let means: Vec<T> = (0..n).map(|a| kc[a * n..(a + 1) * n].iter().copied().sum::<T>() / nn).collect();
        let grand = means.iter().copied().sum::<T>() / nn;
        for a in 0..n {
            for b in 0..n {
                kc[a * n + b] = kc[a * n + b] - means[a] - means[b] + grand;
            }
        }
        Self { n, kc, l }
    }

    /// HSIC with `y` reordered as `y[perm[i]]`.
    fn statistic(&self, perm: &[usize]) -> T {
        let n = self.n;
        let mut acc = T::zero();
        for a in 0..n {
            let krow = &self.kc[a * n..(a + 1) * n];
            let lrow = &self.l[perm[a] * n..(perm[a] + 1) * n];
            let mut row = T::zero();
            for b in 0..n {
                row += krow[b] * lrow[perm[b]];
            }
            acc += row;
        }
        let nn = T::from_len(n);
        acc / (nn * nn)
    }
}

/// Calls `f` on every permutation of `0..n` in lexicographic order.
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        f(&p);
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            return;
        };
        let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).expect("successor exists");
        p.swap(i, j);
        p[i + 1..].reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut s = RandomSource::new(seed).stream("test", 0);
        (0..n).map(|_| s.sample(StandardNormal)).collect()
    }

    fn brute_median(x: &[f64]) -> f64 {
        let mut d = Vec::new();
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                d.push((x[i] - x[j]).abs());
            }
        }
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = d.len();
        if m % 2 == 1 {
            d[m / 2]
        } else {
            (d[m / 2 - 1] + d[m / 2]) / 2.0
        }
    }

    #[test]
    fn median_small_cases() {
        assert_eq!(median_heuristic(&[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(median_heuristic(&[0.0, 1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(median_heuristic(&[2.0, 0.0, 1.0, 7.0]).unwrap(), 3.5);
        assert!(matches!(median_heuristic(&[3.0, 3.0, 3.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn median_matches_brute_force() {
        for seed in 0..20 {
            let x = gaussian_sample(57 + seed as usize, seed);
            let mut x = x;
            x[3] = x[5]; // a tie
            assert_eq!(median_heuristic(&x).unwrap(), brute_median(&x), "seed {seed}");
        }
    }

    #[test]
    fn median_skips_zero_differences_for_binary_data() {
        let x: Vec<f64> = (0..100).map(|i| if i < 80 { 1.0 } else { 0.0 }).collect();
        assert_eq!(median_heuristic(&x).unwrap(), 1.0);
    }

    #[test]
    fn constant_y_gives_zero() {
        let x = gaussian_sample(30, 1);
        let y = vec![2.5; 30];
        let k = KernelSpec::fixed(1.0).unwrap();
        let s = hsic_statistic(&x, &y, &KernelSpec::median_heuristic(), &k).unwrap();
        assert!(s.abs() < 1e-14, "{s}");
    }

    #[test]
    fn self_dependence_is_positive() {
        let x = gaussian_sample(50, 2);
        let k = KernelSpec::median_heuristic();
        assert!(hsic_statistic(&x, &x, &k, &k).unwrap() > 0.0);
    }

    #[test]
    fn length_and_size_errors() {
        let k = KernelSpec::<f64>::median_heuristic();
        assert_eq!(
            hsic_statistic(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0], &k, &k).unwrap_err(),
            Error::LengthMismatch(4, 3)
        );
        let x = gaussian_sample(20, 3);
        assert!(matches!(
            hsic_test(&x, &x, Permutations::Random(50), &RandomSource::new(1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn permutation_enumeration_count() {
        let mut c = 0;
        let mut seen = std::collections::HashSet::new();
        for_each_permutation(5, |p| {
            c += 1;
            seen.insert(p.to_vec());
        });
        assert_eq!(c, 120);
        assert_eq!(seen.len(), 120);
    }

    #[test]
    fn dense_and_packed_paths_agree() {
        let x = gaussian_sample(40, 4);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let (bx, by) = (median_heuristic(&x).unwrap(), median_heuristic(&y).unwrap());
        let packed = hsic_from_grams(&Gram::gaussian(&x, bx), &Gram::gaussian(&y, by));
        let dense = DensePair::new(&x, &y, bx, by).statistic(&(0..40).collect::<Vec<_>>());
        assert!((packed - dense).abs() < 1e-14);
    }

    #[test]
    fn p_value_resolution() {
        let x = gaussian_sample(30, 5);
        let y = gaussian_sample(30, 6);
        let r = hsic_test(&x, &y, Permutations::Random(99), &RandomSource::new(9)).unwrap();
        let scaled = r.permutation_p * 100.0;
        assert!((scaled - scaled.round()).abs() < 1e-9);
        assert!(r.permutation_p > 0.0);
    }
}
