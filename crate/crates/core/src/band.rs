//! Banded LU factorization with partial pivoting.
//!
//! The saddle-point systems assembled on a uniform grid have all their
//! nonzeros within a narrow band once unknowns are ordered strip by strip, so
//! a band factorization does the work of a general sparse direct solver at a
//! fraction of the complexity: O(n·kl·(kl+ku)) to factor and O(n·(kl+ku))
//! per right-hand side. The factorization is computed once per coefficient
//! field and reused across all time steps and excitations.
//!
//! Storage is row-major: row `i` holds columns `i−kl ..= i+kl+ku`; the extra
//! `kl` columns beyond the original upper bandwidth receive the fill produced
//! by row swaps, exactly as in the classic banded LAPACK layout.

use crate::error::{Error, Result};

/// A square matrix stored by diagonals band, assembled from triplets.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row stride: kl + (kl + ku) + 1.
    w: usize,
    data: Vec<f64>,
}

/// LU factors of a [`BandMatrix`] with the pivot sequence.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku_fill: usize,
    w: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandMatrix {
    /// Assemble from `(row, col, value)` triplets; duplicate positions add.
    ///
    /// Bandwidths are taken from the extreme offsets present in the triplets.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        let mut kl = 0usize;
        let mut ku = 0usize;
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(Error::invalid(format!(
                    "triplet ({i},{j}) outside {n}x{n} matrix"
                )));
            }
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let w = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * w];
        for &(i, j, v) in triplets {
            data[i * w + (j + kl - i)] += v;
        }
        Ok(BandMatrix { n, kl, ku, w, data })
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Lower and upper bandwidths as assembled.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// y = A·x.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let row = &self.data[i * self.w..];
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += row[j + self.kl - i] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Factor in place with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, w) = (self.n, self.kl, self.w);
        let ku_fill = self.kl + self.ku; // upper bandwidth after pivoting
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            // pivot search in column k, rows k..=k+kl
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in (k + 1)..=imax {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(format!("zero pivot at column {k}")));
            }
            pivots[k] = p;
            let jmax = (k + ku_fill).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    self.set(k, j, b);
                    self.set(p, j, a);
                }
            }
            let diag = self.get(k, k);
            for i in (k + 1)..=imax {
                let m = self.get(i, k) / diag;
                self.set(i, k, m);
                if m != 0.0 {
                    // rows are contiguous: subtract m * row_k over columns k+1..=jmax
                    let (ro, ko) = (i * w + kl - i, k * w + kl - k);
                    for j in (k + 1)..=jmax {
                        self.data[ro + j] -= m * self.data[ko + j];
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku_fill,
            w,
            data: self.data,
            pivots,
        })
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + (j + self.kl - i)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.w + (j + self.kl - i)] = v;
    }
}

impl BandLu {
    /// Solve A·x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, w) = (self.n, self.kl, self.w);
        // forward: apply pivots and L
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let imax = (k + kl).min(n - 1);
            let bk = b[k];
            if bk != 0.0 {
                for i in (k + 1)..=imax {
                    b[i] -= self.data[i * w + (k + kl - i)] * bk;
                }
            }
        }
        // back substitution on U
        for k in (0..n).rev() {
            let jmax = (k + self.ku_fill).min(n - 1);
            let row = &self.data[k * w + kl - k..];
            let mut acc = b[k];
            for j in (k + 1)..=jmax {
                acc -= row[j] * b[j];
            }
            b[k] = acc / row[k];
        }
    }

    /// Solve A·x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Random banded system solved by the band LU and by dense LU; the two
    /// solutions must agree.
    fn check_against_dense(n: usize, kl: usize, ku: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triplets = Vec::new();
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v: f64 = rng.gen_range(-1.0..1.0);
                let v = if i == j { v + 4.0 } else { v }; // keep well-conditioned
                triplets.push((i, j, v));
                dense[(i, j)] = v;
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let band = BandMatrix::from_triplets(n, &triplets).unwrap();
        assert_eq!(band.bandwidths(), (kl.min(n - 1), ku.min(n - 1)));
        let lu = band.factor().unwrap();
        let x = lu.solve(&b);
        let xd = dense
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .expect("dense solve");
        for (a, e) in x.iter().zip(xd.iter()) {
            assert!((a - e).abs() < 1e-10, "band {a} vs dense {e}");
        }
    }

    #[test]
    fn matches_dense_lu() {
        check_against_dense(1, 0, 0, 1);
        check_against_dense(12, 1, 1, 2);
        check_against_dense(40, 3, 5, 3);
        check_against_dense(120, 17, 11, 4);
        check_against_dense(75, 74, 74, 5); // effectively dense
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]] requires a row swap
        let m = BandMatrix::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let lu = m.factor().unwrap();
        let x = lu.solve(&[3.0, 7.0]);
        assert_eq!(x, vec![7.0, 3.0]);
    }

    #[test]
    fn singular_matrix_reported() {
        let m = BandMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, 0.0)]).unwrap();
        assert!(m.factor().is_err());
    }

    #[test]
    fn duplicate_triplets_accumulate() {
        let m = BandMatrix::from_triplets(1, &[(0, 0, 2.0), (0, 0, 3.0)]).unwrap();
        let x = m.factor().unwrap().solve(&[10.0]);
        assert!((x[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matvec_consistent_with_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30usize;
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 4).min(n - 1) {
                let v = if i == j { 5.0 } else { rng.gen_range(-1.0..1.0) };
                triplets.push((i, j, v));
            }
        }
        let m = BandMatrix::from_triplets(n, &triplets).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = m.matvec(&x);
        let got = m.clone().factor().unwrap().solve(&b);
        for (a, e) in got.iter().zip(&x) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_out_of_range_triplets() {
        assert!(BandMatrix::from_triplets(2, &[(0, 2, 1.0)]).is_err());
        assert!(BandMatrix::from_triplets(0, &[]).is_err());
    }
}
