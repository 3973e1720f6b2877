//! Banded LU factorization with partial pivoting.
//!
//! Row `i` is stored over columns `[i − kl, i + kl + ku]`; the extra `kl` upper
//! diagonals absorb fill from row interchanges. A matrix with full bandwidth is
//! factored like a dense one.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` at `(i, j)`; the entry must lie within the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside bandwidths ({}, {})", self.kl, self.ku);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut lower = vec![0.0; n * kl.max(1)];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale {
                return Err(Error::SolverAbort(format!("singular KKT matrix at pivot {k}")));
            }
            piv[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last_row {
                let sik = self.slot(i, k);
                let m = self.data[sik] / pivot;
                self.data[sik] = 0.0;
                lower[k * kl.max(1) + (i - k - 1)] = m;
                if m != 0.0 {
                    let rk = self.slot(k, k);
                    let ri = self.slot(i, k);
                    for off in 1..=(last_col - k) {
                        self.data[ri + off] -= m * self.data[rk + off];
                    }
                }
            }
        }
        Ok(BandLu { u: self, lower, piv })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    u: BandMatrix,
    lower: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.u.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.u.n, self.u.kl, self.u.ku);
        let stride = kl.max(1);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.lower[k * stride + (i - k - 1)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let rk = self.u.slot(k, k);
            let last_col = (k + kl + ku).min(n - 1);
            let mut s = b[k];
            for off in 1..=(last_col - k) {
                s -= self.u.data[rk + off] * b[k + off];
            }
            b[k] = s / self.u.data[rk];
        }
    }
}
