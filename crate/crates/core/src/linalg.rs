//! Banded matrices with LU factorization (partial pivoting, LAPACK-style
//! band storage). Kept in-crate so fold-proximity behavior of the solves
//! stays transparent; desk-scale problems never need more.

use crate::error::{Error, Result};

/// General band matrix with `kl` subdiagonals and `ku` superdiagonals.
///
/// Storage holds `kl` extra superdiagonals for LU fill. Entry (i, j) lives at
/// row offset `(i - j) + kl + ku`, so valid offsets are `-(kl+ku) ..= kl`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>, // (2*kl + ku + 1) band rows, each of length n
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let rows = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            data: vec![0.0; rows * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            (i as isize - j as isize) <= self.kl as isize
                && (j as isize - i as isize) <= (self.kl + self.ku) as isize,
            "index ({i},{j}) outside band kl={}, ku={}",
            self.kl,
            self.ku
        );
        let r = (i + self.kl + self.ku) - j;
        r * self.n + j
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        let diff = i as isize - j as isize;
        diff <= self.kl as isize && -diff <= self.ku as isize
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// A + c I in place.
    pub fn shift_diagonal(&mut self, c: f64) {
        for i in 0..self.n {
            let s = self.slot(i, i);
            self.data[s] += c;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            let mut acc = 0.0;
            for j in jmin..=jmax {
                acc += self.data[self.slot(i, j)] * x[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            for j in jmin..=jmax {
                out[j] += self.data[self.slot(i, j)] * x[i];
            }
        }
        out
    }

    pub fn transpose(&self) -> BandMatrix {
        let mut t = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            for j in jmin..=jmax {
                t.set(j, i, self.data[self.slot(i, j)]);
            }
        }
        t
    }

    /// (A + A^T) / 2 with symmetric bandwidth max(kl, ku).
    pub fn symmetrized(&self) -> BandMatrix {
        let k = self.kl.max(self.ku);
        let mut s = BandMatrix::zeros(self.n, k, k);
        for i in 0..self.n {
            let jmin = i.saturating_sub(k);
            let jmax = (i + k).min(self.n - 1);
            for j in jmin..=jmax {
                s.set(i, j, 0.5 * (self.get(i, j) + self.get(j, i)));
            }
        }
        s
    }

    /// Lower bound for the spectrum by Gershgorin discs (rows).
    pub fn gershgorin_lower(&self) -> f64 {
        let mut lb = f64::INFINITY;
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            let mut off = 0.0;
            let mut diag = 0.0;
            for j in jmin..=jmax {
                let v = self.data[self.slot(i, j)];
                if i == j {
                    diag = v;
                } else {
                    off += v.abs();
                }
            }
            lb = lb.min(diag - off);
        }
        lb
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            for j in jmin..=jmax {
                m = m.max(self.data[self.slot(i, j)].abs());
            }
        }
        m
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut a = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let jmin = i.saturating_sub(self.kl);
            let jmax = (i + self.ku).min(self.n - 1);
            for j in jmin..=jmax {
                a[(i, j)] = self.data[self.slot(i, j)];
            }
        }
        a
    }

    /// LU factorization with partial pivoting. Errors only on an exactly
    /// zero pivot column; near-singular factors are returned (shifted
    /// inverse iteration depends on them) with the pivot ratio available
    /// as a conditioning hint.
    pub fn factorize(&self) -> Result<BandLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut a = self.clone();
        let mut ipiv = vec![0usize; n];
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot: f64 = 0.0;
        for j in 0..n {
            let imax = (j + kl).min(n - 1);
            let mut p = j;
            let mut pv = a.data[a.slot(j, j)].abs();
            for i in (j + 1)..=imax {
                let v = a.data[a.slot(i, j)].abs();
                if v > pv {
                    pv = v;
                    p = i;
                }
            }
            if pv == 0.0 {
                return Err(Error::SingularJacobian(format!(
                    "zero pivot column {j} of {n}"
                )));
            }
            ipiv[j] = p;
            let kmax = (j + kl + ku).min(n - 1);
            if p != j {
                for k in j..=kmax {
                    let sj = a.slot(j, k);
                    let sp = a.slot(p, k);
                    a.data.swap(sj, sp);
                }
            }
            let piv = a.data[a.slot(j, j)];
            min_pivot = min_pivot.min(piv.abs());
            max_pivot = max_pivot.max(piv.abs());
            for i in (j + 1)..=imax {
                let s_ij = a.slot(i, j);
                let l = a.data[s_ij] / piv;
                a.data[s_ij] = l;
                if l != 0.0 {
                    for k in (j + 1)..=kmax {
                        let s_jk = a.slot(j, k);
                        let s_ik = a.slot(i, k);
                        a.data[s_ik] -= l * a.data[s_jk];
                    }
                }
            }
        }
        Ok(BandLu {
            mat: a,
            ipiv,
            min_pivot,
            max_pivot,
        })
    }
}

/// Factored band matrix, PA = LU.
#[derive(Debug, Clone)]
pub struct BandLu {
    mat: BandMatrix,
    ipiv: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.mat.n;
        let (kl, ku) = (self.mat.kl, self.mat.ku);
        assert_eq!(b.len(), n);
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(p, j);
            }
            let imax = (j + kl).min(n - 1);
            let bj = b[j];
            if bj != 0.0 {
                for i in (j + 1)..=imax {
                    b[i] -= self.mat.data[self.mat.slot(i, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= self.mat.data[self.mat.slot(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                let imin = j.saturating_sub(kl + ku);
                for i in imin..j {
                    b[i] -= self.mat.data[self.mat.slot(i, j)] * bj;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// max |pivot| / min |pivot|; large values flag near-singularity.
    pub fn pivot_ratio(&self) -> f64 {
        self.max_pivot / self.min_pivot
    }

    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            let jmin = i.saturating_sub(kl);
            let jmax = (i + ku).min(n - 1);
            for j in jmin..=jmax {
                a.set(i, j, rng.random_range(-1.0..1.0));
            }
            // diagonal dominance keeps the test matrices comfortably regular
            a.add(i, i, 3.0 * (kl + ku + 1) as f64);
        }
        a
    }

    #[test]
    fn band_solve_matches_dense() {
        for (n, kl, ku, seed) in [(7, 1, 1, 1u64), (25, 3, 2, 2), (40, 5, 9, 3), (30, 0, 2, 4)] {
            let a = random_band(n, kl, ku, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lu = a.factorize().unwrap();
            let x = lu.solve(&b);
            let dense = a.to_dense();
            let xd = dense
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&b))
                .unwrap();
            for i in 0..n {
                assert!(
                    (x[i] - xd[i]).abs() <= 1e-11 * (1.0 + xd[i].abs()),
                    "n={n} kl={kl} ku={ku} i={i}: {} vs {}",
                    x[i],
                    xd[i]
                );
            }
        }
    }

    #[test]
    fn band_solve_needs_pivoting() {
        // zero diagonal forces row interchanges
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.set(0, 0, 0.0);
        a.set(0, 1, 2.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(1, 2, 1.0);
        a.set(2, 1, 4.0);
        a.set(2, 2, 1.0);
        let lu = a.factorize().unwrap();
        let x = lu.solve(&[2.0, 3.0, 5.0]);
        let ax = a.matvec(&x);
        for (got, want) in ax.iter().zip([2.0, 3.0, 5.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_and_transpose_consistent() {
        let a = random_band(15, 2, 4, 9);
        let dense = a.to_dense();
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.7).sin()).collect();
        let y = a.matvec(&x);
        let yd = &dense * nalgebra::DVector::from_column_slice(&x);
        let yt = a.matvec_transpose(&x);
        let ytd = dense.transpose() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..15 {
            assert!((y[i] - yd[i]).abs() < 1e-12);
            assert!((yt[i] - ytd[i]).abs() < 1e-12);
        }
        let t = a.transpose();
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(t.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn symmetrized_is_symmetric() {
        let a = random_band(12, 1, 3, 5);
        let s = a.symmetrized();
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(s.get(i, j), s.get(j, i));
                assert!((s.get(i, j) - 0.5 * (a.get(i, j) + a.get(j, i))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = BandMatrix::zeros(4, 1, 1);
        assert!(matches!(a.factorize(), Err(Error::SingularJacobian(_))));
    }

    #[test]
    fn gershgorin_bounds_spectrum() {
        let a = random_band(20, 2, 2, 11).symmetrized();
        let lb = a.gershgorin_lower();
        let eig = nalgebra::SymmetricEigen::new(a.to_dense());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lb <= min + 1e-12);
    }
}
