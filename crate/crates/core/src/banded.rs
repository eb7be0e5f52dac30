//! Real banded LU with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` layout: row `i` keeps columns
//! `i - kl ..= i + kl + ku`, the extra `kl` super-diagonals holding fill-in
//! from row interchanges. Multipliers are not swapped after the fact, so the
//! solve replays the pivots in factorization order.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandedError {
    #[error("zero pivot in column {0}")]
    SingularPivot(usize),
    #[error("entry ({row}, {col}) outside an {n}x{n} system")]
    OutOfRange { row: usize, col: usize, n: usize },
    #[error("right-hand side has length {got}, expected {expected}")]
    RhsLength { expected: usize, got: usize },
}

/// Sparse triplet accumulator; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct BandedBuilder {
    n: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl BandedBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, entries: BTreeMap::new() }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) -> Result<(), BandedError> {
        if row >= self.n || col >= self.n {
            return Err(BandedError::OutOfRange { row, col, n: self.n });
        }
        *self.entries.entry((row, col)).or_insert(0.0) += value;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `(kl, ku)` of the accumulated pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        self.entries.keys().fold((0, 0), |(kl, ku), &(i, j)| {
            if i > j {
                (kl.max(i - j), ku)
            } else {
                (kl, ku.max(j - i))
            }
        })
    }

    pub fn factor(&self) -> Result<BandedLu, BandedError> {
        let (kl, ku) = self.bandwidths();
        let mut lu = BandedLu::zeroed(self.n, kl, ku);
        for (&(i, j), &v) in &self.entries {
            *lu.at_mut(i, j) = v;
        }
        lu.factorize()?;
        Ok(lu)
    }

    /// Dense matrix-vector product with the assembled (unfactored) matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (&(i, j), &v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    /// Upper bandwidth including fill-in, `kl + ku`.
    ku_fill: usize,
    width: usize,
    ab: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    fn zeroed(n: usize, kl: usize, ku: usize) -> Self {
        let ku_fill = kl + ku;
        let width = kl + ku_fill + 1;
        Self { n, kl, ku_fill, width, ab: vec![0.0; n * width], pivots: vec![0; n] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku_fill);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.ab[k]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn factorize(&mut self) -> Result<(), BandedError> {
        let n = self.n;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku_fill).min(n - 1);
            let mut p = k;
            let mut best = self.at(k, k).abs();
            for i in (k + 1)..=last_row {
                let v = self.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(BandedError::SingularPivot(k));
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.at(k, k);
            for i in (k + 1)..=last_row {
                let l = self.at(i, k) / pivot;
                *self.at_mut(i, k) = l;
                if l != 0.0 {
                    for j in (k + 1)..=last_col {
                        let akj = self.at(k, j);
                        *self.at_mut(i, j) -= l * akj;
                    }
                }
            }
        }
        Ok(())
    }

    /// Solve in place.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<(), BandedError> {
        let n = self.n;
        if b.len() != n {
            return Err(BandedError::RhsLength { expected: n, got: b.len() });
        }
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in (k + 1)..=(k + self.kl).min(n - 1) {
                    b[i] -= self.at(i, k) * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in (i + 1)..=(i + self.ku_fill).min(n - 1) {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, BandedError> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn residual(builder: &BandedBuilder, x: &[f64], b: &[f64]) -> f64 {
        builder.apply(x).iter().zip(b).map(|(y, b)| (y - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn tridiagonal_poisson() {
        let n = 50;
        let mut m = BandedBuilder::new(n);
        for i in 0..n {
            m.add(i, i, 2.0).unwrap();
            if i > 0 {
                m.add(i, i - 1, -1.0).unwrap();
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0).unwrap();
            }
        }
        let b = vec![1.0; n];
        let x = m.factor().unwrap().solve(&b).unwrap();
        assert!(residual(&m, &x, &b) < 1e-12);
        // exact solution x_i = (i+1)(n-i)/2
        for (i, xi) in x.iter().enumerate() {
            let exact = ((i + 1) * (n - i)) as f64 / 2.0;
            assert!((xi - exact).abs() < 1e-10 * exact);
        }
    }

    #[test]
    fn needs_pivoting() {
        // zero on the diagonal: only solvable with row interchanges
        let mut m = BandedBuilder::new(3);
        m.add(0, 1, 1.0).unwrap();
        m.add(1, 0, 1.0).unwrap();
        m.add(1, 2, 2.0).unwrap();
        m.add(2, 1, 3.0).unwrap();
        m.add(2, 2, 1.0).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = m.factor().unwrap().solve(&b).unwrap();
        assert!(residual(&m, &x, &b) < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let mut m = BandedBuilder::new(2);
        m.add(0, 0, 1.0).unwrap();
        m.add(1, 0, 2.0).unwrap();
        assert!(matches!(m.factor(), Err(BandedError::SingularPivot(1))));
        assert!(m.add(2, 0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn random_banded_systems_solve(
            seed in any::<u64>(),
            n in 5usize..40,
            kl in 0usize..4,
            ku in 0usize..4,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut m = BandedBuilder::new(n);
            for i in 0..n {
                let lo = i.saturating_sub(kl);
                let hi = (i + ku).min(n - 1);
                for j in lo..=hi {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    m.add(i, j, if i == j { v + 4.0 * v.signum() } else { v }).unwrap();
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = m.factor().unwrap().solve(&b).unwrap();
            prop_assert!(residual(&m, &x, &b) < 1e-11);
        }
    }
}
