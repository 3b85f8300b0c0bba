//! Banded LU with partial pivoting, LAPACK `gbtrf` storage.

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored column
/// by column with `kl` extra rows of head room for pivoting fill-in.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SingularMatrix {
    pub column: usize,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            ab: vec![0.0; ldab * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            0.0
        }
    }

    #[cfg(test)]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for (i, yi) in y.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *yi += self.get(i, j) * x[j];
            }
        }
        y
    }

    /// Factorizes in place.
    pub fn factor(mut self) -> Result<BandLu, SingularMatrix> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = 0;
            let mut best = self.ab[self.idx(j, j)].abs();
            for t in 1..=km {
                let v = self.ab[self.idx(j + t, j)].abs();
                if v > best {
                    best = v;
                    p = t;
                }
            }
            ipiv[j] = j + p;
            if best == 0.0 || !best.is_finite() {
                return Err(SingularMatrix { column: j });
            }
            let ju = (j + kv).min(n - 1);
            if p != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + p, c);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.idx(j, j)];
            for t in 1..=km {
                let k = self.idx(j + t, j);
                self.ab[k] /= pivot;
            }
            for c in (j + 1)..=ju {
                let a = self.ab[self.idx(j, c)];
                if a == 0.0 {
                    continue;
                }
                for t in 1..=km {
                    let l = self.ab[self.idx(j + t, j)];
                    let k = self.idx(j + t, c);
                    self.ab[k] -= l * a;
                }
            }
        }
        Ok(BandLu { m: self, ipiv })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandLu {
    m: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        let kv = m.kl + m.ku;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = m.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for t in 1..=km {
                    b[j + t] -= m.ab[m.idx(j + t, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= m.ab[m.idx(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= m.ab[m.idx(i, j)] * bj;
                }
            }
        }
    }
}
