//! Degree-bounded multi-indices over `d` coordinates.
//!
//! Indices are produced in graded lexicographic order: ascending total degree,
//! and within one degree the first coordinate carries the largest exponent
//! first, so for `d = 2` the order is `(0,0) (1,0) (0,1) (2,0) (1,1) (0,2) ...`.
//! Feature matrices rely on this order to slice columns into degree blocks.

use std::fmt;

use crate::error::{Error, Result};

/// Exponent tuple `(r_1, ..., r_d)` with its cached total degree.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Vec<u32>,
    degree: u32,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        let degree = exponents.iter().sum();
        MultiIndex { exponents, degree }
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex {
            exponents: vec![0; dim],
            degree: 0,
        }
    }

    /// The index with a single exponent `power` at coordinate `coord`.
    pub fn unit(dim: usize, coord: usize, power: u32) -> Self {
        let mut exponents = vec![0; dim];
        exponents[coord] = power;
        MultiIndex {
            exponents,
            degree: power,
        }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn max_exponent(&self) -> u32 {
        self.exponents.iter().copied().max().unwrap_or(0)
    }

    /// Coordinates with a nonzero exponent, paired with that exponent.
    pub fn support(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.exponents
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0)
            .map(|(i, &r)| (i, r))
    }

    /// Componentwise sum.
    pub fn add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        if self.dim() != other.dim() {
            return Err(Error::usage(format!(
                "multi-index dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(MultiIndex::new(
            self.exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, r) in self.exponents.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

/// Exact binomial coefficient with checked 64-bit arithmetic.
pub fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc * (n - k + i) is always divisible by i
        acc = acc * u128::from(n - k + i) / u128::from(i);
        if acc > u128::from(u64::MAX) {
            return Err(Error::Capacity(format!("C({n}, {k}) exceeds u64")));
        }
    }
    Ok(acc as u64)
}

/// Number of multi-indices over `dim` coordinates with degree at most `max_degree`,
/// i.e. `C(dim + max_degree, max_degree)`.
pub fn multi_index_count(dim: usize, max_degree: u32) -> Result<usize> {
    let c = binomial(dim as u64 + u64::from(max_degree), u64::from(max_degree))?;
    usize::try_from(c).map_err(|_| Error::Capacity(format!("{c} indices exceed usize")))
}

/// Lazy graded-lex enumeration of all multi-indices with degree `<= max_degree`.
#[derive(Debug, Clone)]
pub struct MultiIndexIter {
    current: Option<Vec<u32>>,
    degree: u32,
    max_degree: u32,
}

impl MultiIndexIter {
    pub fn new(dim: usize, max_degree: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("multi-index dimension must be at least 1"));
        }
        Ok(MultiIndexIter {
            current: Some(vec![0; dim]),
            degree: 0,
            max_degree,
        })
    }

    fn advance(&mut self) {
        let Some(a) = self.current.as_mut() else {
            return;
        };
        let last = a.len() - 1;
        let tail = a[last];
        a[last] = 0;
        match (0..last).rev().find(|&j| a[j] > 0) {
            Some(j) => {
                a[j] -= 1;
                a[j + 1] = tail + 1;
            }
            None => {
                if self.degree == self.max_degree {
                    self.current = None;
                } else {
                    self.degree += 1;
                    a[0] = self.degree;
                }
            }
        }
    }
}

impl Iterator for MultiIndexIter {
    type Item = MultiIndex;

    fn next(&mut self) -> Option<MultiIndex> {
        let out = self.current.as_ref().map(|a| MultiIndex {
            exponents: a.clone(),
            degree: self.degree,
        })?;
        self.advance();
        Some(out)
    }
}

/// All multi-indices of degree `<= max_degree` in graded-lex order.
pub fn enumerate_multi_indices(dim: usize, max_degree: u32) -> Result<Vec<MultiIndex>> {
    let count = multi_index_count(dim, max_degree)?;
    let mut out = Vec::new();
    out.try_reserve_exact(count)
        .map_err(|_| Error::Capacity(format!("cannot allocate {count} multi-indices")))?;
    out.extend(MultiIndexIter::new(dim, max_degree)?);
    debug_assert_eq!(out.len(), count);
    Ok(out)
}

/// `(sum r_i)! / prod(r_i!)`, built as a product of binomials so no factorial
/// is ever formed.
pub fn multinomial_coeff(r: &MultiIndex) -> Result<u64> {
    let mut acc: u64 = 1;
    let mut partial: u64 = 0;
    for &ri in &r.exponents {
        if ri == 0 {
            continue;
        }
        partial += u64::from(ri);
        let b = binomial(partial, u64::from(ri))?;
        acc = acc
            .checked_mul(b)
            .ok_or_else(|| Error::Capacity(format!("multinomial coefficient of {r:?}")))?;
    }
    Ok(acc)
}

pub(crate) fn pow_u(mut base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

/// `prod_i x[i]^{r_i}` with `0^0 = 1`.
pub fn monomial_eval(r: &MultiIndex, x: &[f64]) -> Result<f64> {
    crate::error::check_dims(r.dim(), x.len(), "monomial_eval")?;
    Ok(r.support().map(|(i, ri)| pow_u(x[i], ri)).product())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tuples(v: &[MultiIndex]) -> Vec<Vec<u32>> {
        v.iter().map(|m| m.exponents().to_vec()).collect()
    }

    // Brute force: every tuple in [0, max]^d with sum <= max.
    fn brute_count(dim: usize, max: u32) -> usize {
        let mut count = 0;
        let mut t = vec![0u32; dim];
        loop {
            if t.iter().sum::<u32>() <= max {
                count += 1;
            }
            let mut i = 0;
            loop {
                if i == dim {
                    return count;
                }
                t[i] += 1;
                if t[i] <= max {
                    break;
                }
                t[i] = 0;
                i += 1;
            }
        }
    }

    fn pascal(n: usize, k: usize) -> u64 {
        let mut row = vec![1u64];
        for _ in 0..n {
            let mut next = vec![1u64; row.len() + 1];
            for j in 1..row.len() {
                next[j] = row[j - 1] + row[j];
            }
            row = next;
        }
        row[k]
    }

    fn factorial(n: u32) -> u128 {
        (1..=u128::from(n)).product()
    }

    #[test]
    fn two_dims_degree_two() {
        let v = enumerate_multi_indices(2, 2).unwrap();
        assert_eq!(
            tuples(&v),
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn one_dim() {
        let v = enumerate_multi_indices(1, 3).unwrap();
        assert_eq!(tuples(&v), vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn three_dims_degree_two_count() {
        assert_eq!(brute_count(3, 2), 10);
        assert_eq!(enumerate_multi_indices(3, 2).unwrap().len(), 10);
    }

    #[test]
    fn degree_zero_is_single_index() {
        let v = enumerate_multi_indices(5, 0).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].degree(), 0);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(MultiIndexIter::new(0, 2), Err(Error::Usage(_))));
    }

    #[test]
    fn capacity_error_on_huge_instance() {
        assert!(matches!(
            multi_index_count(1_000_000, 40),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn distinct_and_graded() {
        let v = enumerate_multi_indices(4, 4).unwrap();
        let set: std::collections::HashSet<_> = v.iter().cloned().collect();
        assert_eq!(set.len(), v.len());
        assert!(v.windows(2).all(|w| w[0].degree() <= w[1].degree()));
        for w in v.windows(2).filter(|w| w[0].degree() == w[1].degree()) {
            assert!(w[0].exponents() > w[1].exponents());
        }
    }

    #[test]
    fn counts_match_pascal() {
        for dim in 1..=12usize {
            for deg in 0..=6u32 {
                let expected = pascal(dim + deg as usize, deg as usize);
                if expected > 1_000_000 {
                    continue;
                }
                assert_eq!(multi_index_count(dim, deg).unwrap() as u64, expected);
                assert_eq!(
                    MultiIndexIter::new(dim, deg).unwrap().count() as u64,
                    expected,
                    "d={dim} iota={deg}"
                );
            }
        }
        assert_eq!(brute_count(4, 3), pascal(7, 3) as usize);
    }

    #[test]
    fn multinomial_examples() {
        assert_eq!(multinomial_coeff(&MultiIndex::new(vec![1, 1, 0])).unwrap(), 2);
        assert_eq!(multinomial_coeff(&MultiIndex::new(vec![2, 0, 0])).unwrap(), 1);
        let expected = factorial(4) / (factorial(2) * factorial(1) * factorial(1));
        assert_eq!(expected, 12);
        assert_eq!(
            multinomial_coeff(&MultiIndex::new(vec![2, 1, 1])).unwrap() as u128,
            expected
        );
    }

    #[test]
    fn multinomial_degree_twenty_fits() {
        let r = MultiIndex::new(vec![20]);
        assert_eq!(multinomial_coeff(&r).unwrap(), 1);
        let r = MultiIndex::new(vec![1; 20]);
        assert_eq!(multinomial_coeff(&r).unwrap() as u128, factorial(20));
        assert!(matches!(
            multinomial_coeff(&MultiIndex::new(vec![1; 30])),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn multinomial_matches_factorials_exhaustively() {
        for dim in 1..=6 {
            for r in MultiIndexIter::new(dim, 10).unwrap() {
                let denom: u128 = r.exponents().iter().map(|&e| factorial(e)).product();
                assert_eq!(
                    multinomial_coeff(&r).unwrap() as u128,
                    factorial(r.degree()) / denom,
                    "{r:?}"
                );
            }
        }
    }

    #[test]
    fn monomial_examples() {
        let x = [0.3, -2.0, 5.0];
        assert_eq!(monomial_eval(&MultiIndex::zero(3), &x).unwrap(), 1.0);
        assert_eq!(
            monomial_eval(&MultiIndex::new(vec![1, 2]), &[2.0, 3.0]).unwrap(),
            18.0
        );
        assert_eq!(
            monomial_eval(&MultiIndex::new(vec![1, 0]), &[-1.5, 7.0]).unwrap(),
            -1.5
        );
        assert_eq!(monomial_eval(&MultiIndex::new(vec![0]), &[0.0]).unwrap(), 1.0);
        assert!(matches!(
            monomial_eval(&MultiIndex::new(vec![1, 0]), &[1.0]),
            Err(Error::Usage(_))
        ));
    }

    proptest! {
        #[test]
        fn monomial_is_multiplicative(
            a in proptest::collection::vec(0u32..4, 4),
            b in proptest::collection::vec(0u32..4, 4),
            x in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let ra = MultiIndex::new(a);
            let rb = MultiIndex::new(b);
            let sum = ra.add(&rb).unwrap();
            let lhs = monomial_eval(&sum, &x).unwrap();
            let rhs = monomial_eval(&ra, &x).unwrap() * monomial_eval(&rb, &x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
