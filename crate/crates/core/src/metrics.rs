//! Discrepancies between posterior sample sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::ParameterVector;

/// `n ≥ 1` finite points of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dim: usize,
    points: Vec<f64>,
}

impl SampleSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidConfig("a sample set needs at least one point".into()));
        };
        let dim = first.len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("sample points differ in dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample set entry".into()));
        }
        Ok(SampleSet {
            dim,
            points: points.concat(),
        })
    }

    pub fn from_params<S: Scalar>(params: &[ParameterVector<S>]) -> Result<Self> {
        Self::new(params.iter().map(|p| p.iter().map(|v| v.as_f64()).collect()).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn pooled(&self, other: &SampleSet) -> SampleSet {
        SampleSet {
            dim: self.dim,
            points: [self.points.as_slice(), other.points.as_slice()].concat(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn same_dim(a: &SampleSet, b: &SampleSet) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::Shape(format!("sample sets of dimension {} and {}", a.dim, b.dim)));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Minimum-cost perfect assignment of an `n × n` cost given by `cost(i, j)`.
/// Returns the column of each row.
fn assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=n {
        col_of[p[j] - 1] = j - 1;
    }
    col_of
}

/// Exact 1-Wasserstein distance between the uniform empirical measures on `a`
/// and `b` under Euclidean ground cost.
///
/// With `L = lcm(|a|, |b|)`, every point of `a` is split into `L/|a|` and every
/// point of `b` into `L/|b|` equal atoms, and the resulting assignment problem is
/// solved exactly.
pub fn wasserstein(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    same_dim(a, b)?;
    let (n, m) = (a.len(), b.len());
    let l = n / gcd(n, m) * m;
    let (ra, rb) = (l / n, l / m);
    let dist: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(a.point(i), b.point(j)).sqrt())
        .collect();
    let cost = |i: usize, j: usize| dist[(i / ra) * m + j / rb];
    let col_of = assignment(l, cost);
    let total: f64 = col_of.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    Ok((total / l as f64).max(0.0))
}

fn median(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut hi, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Median of the squared pairwise distances over all unordered pairs, with the
/// mean of the two middle values for an even pair count.
pub fn median_heuristic(pooled: &SampleSet) -> Result<f64> {
    let n = pooled.len();
    if n < 2 {
        return Err(Error::Degenerate("median heuristic needs two points".into()));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(pooled.point(i), pooled.point(j)));
        }
    }
    if d.iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("all pooled points coincide".into()));
    }
    let eta2 = median(d);
    if eta2 == 0.0 {
        return Err(Error::Degenerate("median squared distance is zero".into()));
    }
    Ok(eta2)
}

fn kernel_mean(x: &SampleSet, y: &SampleSet, eta2: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let p = x.point(i);
        for j in 0..y.len() {
            s += (-sq_dist(p, y.point(j)) / (2.0 * eta2)).exp();
        }
    }
    s / (x.len() * y.len()) as f64
}

/// Biased squared MMD with an RBF kernel of bandwidth `η² = median_heuristic(a ∪ b)`.
pub fn mmd_squared(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    same_dim(a, b)?;
    let eta2 = median_heuristic(&a.pooled(b))?;
    Ok(mmd_squared_with(a, b, eta2))
}

/// Biased squared MMD for a given bandwidth.
pub fn mmd_squared_with(a: &SampleSet, b: &SampleSet, eta2: f64) -> f64 {
    let v = kernel_mean(a, a, eta2) + kernel_mean(b, b, eta2) - 2.0 * kernel_mean(a, b, eta2);
    v.max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub method: String,
    pub wass: f64,
    pub mmd_sq: f64,
    pub n_ref: usize,
    pub n_est: usize,
    pub seeds: Vec<u64>,
    pub timestamp: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(p: &[&[f64]]) -> SampleSet {
        SampleSet::new(p.iter().map(|x| x.to_vec()).collect()).unwrap()
    }

    fn brute_force(a: &SampleSet, b: &SampleSet) -> f64 {
        fn go(k: usize, perm: &mut Vec<usize>, a: &SampleSet, b: &SampleSet, best: &mut f64) {
            if k == perm.len() {
                let c: f64 = perm.iter().enumerate().map(|(i, &j)| sq_dist(a.point(i), b.point(j)).sqrt()).sum();
                *best = best.min(c);
                return;
            }
            for s in k..perm.len() {
                perm.swap(k, s);
                go(k + 1, perm, a, b, best);
                perm.swap(k, s);
            }
        }
        let mut best = f64::INFINITY;
        go(0, &mut (0..a.len()).collect(), a, b, &mut best);
        best / a.len() as f64
    }

    fn random_set(rng: &mut crate::rng::Rng, n: usize, d: usize) -> SampleSet {
        SampleSet::new((0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).unwrap()
    }

    #[test]
    fn wasserstein_small_cases() {
        let a = set(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let b = set(&[&[0.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(wasserstein(&a, &b).unwrap(), 1.0);
        assert_eq!(wasserstein(&a, &a).unwrap(), 0.0);
        let p = set(&[&[1.0, 2.0]]);
        let q = set(&[&[4.0, 6.0]]);
        assert_eq!(wasserstein(&p, &q).unwrap(), 5.0);
        assert!(wasserstein(&p, &set(&[&[1.0]])).is_err());
    }

    #[test]
    fn wasserstein_matches_brute_force_assignment() {
        let mut rng = seeded(1);
        for trial in 0..100 {
            let n = 1 + trial % 8;
            let a = random_set(&mut rng, n, 2);
            let b = random_set(&mut rng, n, 2);
            let w = wasserstein(&a, &b).unwrap();
            assert!((w - brute_force(&a, &b)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn unequal_sizes_split_mass() {
        // One point against two: all mass moves to both targets equally.
        let a = set(&[&[0.0]]);
        let b = set(&[&[1.0], &[3.0]]);
        assert!((wasserstein(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        let c = set(&[&[0.0], &[1.0], &[2.0]]);
        let d = set(&[&[0.0], &[2.0]]);
        // 1/3 from 0 to 0, 1/3 from 2 to 2, 1/6 + 1/6 from 1 to each side.
        assert!((wasserstein(&c, &d).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(median_heuristic(&set(&[&[0.0], &[1.0], &[2.0]])).unwrap(), 1.0);
        assert_eq!(median_heuristic(&set(&[&[0.0], &[2.0]])).unwrap(), 4.0);
        // {0, 1, 3, 4}: squared distances {1, 9, 16, 4, 9, 1}, middle pair 4 and 9.
        assert_eq!(median_heuristic(&set(&[&[0.0], &[1.0], &[3.0], &[4.0]])).unwrap(), 6.5);
        assert!(median_heuristic(&set(&[&[1.0], &[1.0]])).is_err());
        let s = set(&[&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5]]);
        let scaled = SampleSet::new((0..3).map(|i| s.point(i).iter().map(|v| v * 3.0).collect()).collect()).unwrap();
        assert!((median_heuristic(&scaled).unwrap() - 9.0 * median_heuristic(&s).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mmd_examples() {
        let a = set(&[&[0.0], &[1.0], &[5.0]]);
        assert!(mmd_squared(&a, &a).unwrap().abs() < 1e-12);
        let p = set(&[&[0.0, 0.0]]);
        let q = set(&[&[1.0, 2.0]]);
        let eta2 = 5.0;
        let expect = 2.0 - 2.0 * (-5.0f64 / (2.0 * eta2)).exp();
        assert_eq!(mmd_squared(&p, &q).unwrap(), expect);
        assert!(mmd_squared(&p, &p).is_err());
    }

    #[test]
    fn mmd_is_rotation_invariant() {
        let mut rng = seeded(3);
        let a = random_set(&mut rng, 20, 2);
        let b = random_set(&mut rng, 15, 2);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = |x: &SampleSet| {
            SampleSet::new((0..x.len()).map(|i| {
                let p = x.point(i);
                vec![c * p[0] - s * p[1], s * p[0] + c * p[1]]
            }).collect()).unwrap()
        };
        let m1 = mmd_squared(&a, &b).unwrap();
        let m2 = mmd_squared(&rot(&a), &rot(&b)).unwrap();
        assert!((m1 - m2).abs() < 1e-12);
        assert!((m1 - mmd_squared(&b, &a).unwrap()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn wasserstein_is_a_metric(seed in 0u64..1000, n in 1usize..6, m in 1usize..6, k in 1usize..6) {
            let mut rng = seeded(seed);
            let a = random_set(&mut rng, n, 2);
            let b = random_set(&mut rng, m, 2);
            let c = random_set(&mut rng, k, 2);
            let ab = wasserstein(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - wasserstein(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= wasserstein(&a, &c).unwrap() + wasserstein(&c, &b).unwrap() + 1e-12);
            let rev = SampleSet::new((0..n).rev().map(|i| a.point(i).to_vec()).collect()).unwrap();
            prop_assert!((wasserstein(&rev, &b).unwrap() - ab).abs() < 1e-12);
        }

        #[test]
        fn mmd_is_symmetric_and_permutation_invariant(seed in 0u64..1000, n in 2usize..8) {
            let mut rng = seeded(seed);
            let a = random_set(&mut rng, n, 3);
            let b = random_set(&mut rng, n + 1, 3);
            let m = mmd_squared(&a, &b).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert!((m - mmd_squared(&b, &a).unwrap()).abs() < 1e-12);
            let rev = SampleSet::new((0..n).rev().map(|i| a.point(i).to_vec()).collect()).unwrap();
            prop_assert!((m - mmd_squared(&rev, &b).unwrap()).abs() < 1e-12);
        }
    }
}
