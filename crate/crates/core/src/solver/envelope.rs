//! Symmetric envelope (skyline) storage with an in-place LDLᵀ factorization
//! without pivoting.
//!
//! Row `i` stores the lower-triangle entries from its first structural
//! nonzero column up to the diagonal. Fill-in stays inside the envelope, so
//! for matrices ordered into a narrow band the factorization is linear in
//! the dimension.

#[derive(Debug, Clone)]
pub struct Envelope {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

/// Signs of the pivots of a factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
}

impl Envelope {
    /// `first[i] ≤ i` is the first stored column of row `i`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut off = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "envelope start beyond diagonal");
            start.push(off);
            off += i - f + 1;
        }
        start.push(off);
        Self { first, start, vals: vec![0.0; off] }
    }

    /// Builds the envelope covering the given lower or upper entries.
    pub fn from_pattern(dim: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..dim).collect();
        for (i, j) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            first[r] = first[r].min(c);
        }
        Self::new(first)
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.vals.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn pos(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i], "entry ({i},{j}) outside envelope");
        self.start[i] + j - self.first[i]
    }

    /// Adds `v` to the symmetric entry `(i, j)`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let p = self.pos(r, c);
        self.vals[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            0.0
        } else {
            self.vals[self.pos(r, c)]
        }
    }

    /// `y = A x` for the symmetric matrix currently stored.
    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.dim() {
            let f = self.first[i];
            let row = &self.vals[self.start[i]..self.start[i + 1]];
            let mut acc = 0.0;
            for (k, &a) in row.iter().enumerate() {
                let j = f + k;
                acc += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
            y[i] += acc;
        }
    }

    /// Factorizes in place into `L D Lᵀ` (unit lower `L`, diagonal `D`).
    /// Returns the inertia, or `None` when a pivot is zero or not finite.
    pub fn factor(&mut self) -> Option<Inertia> {
        let n = self.dim();
        let mut w = Vec::new();
        let mut inertia = Inertia { positive: 0, negative: 0 };
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let len = i - fi;
            w.clear();
            w.resize(len, 0.0);
            // w[j] = l_ij d_j
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let lo = fi.max(fj);
                let mut acc = self.vals[si + j - fi];
                for k in lo..j {
                    acc -= w[k - fi] * self.vals[sj + k - fj];
                }
                w[j - fi] = acc;
            }
            let mut d = self.vals[si + len];
            for j in fi..i {
                let dj = self.vals[self.start[j + 1] - 1];
                let l = w[j - fi] / dj;
                self.vals[si + j - fi] = l;
                d -= l * w[j - fi];
            }
            if !d.is_finite() || d == 0.0 {
                return None;
            }
            self.vals[si + len] = d;
            if d > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
        }
        Some(inertia)
    }

    /// Solves with a factorized matrix, overwriting `b`.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            let mut acc = b[i];
            for j in fi..i {
                acc -= self.vals[si + j - fi] * b[j];
            }
            b[i] = acc;
        }
        for i in 0..n {
            b[i] /= self.vals[self.start[i + 1] - 1];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let bi = b[i];
            for j in fi..i {
                b[j] -= self.vals[si + j - fi] * bi;
            }
        }
    }
}
