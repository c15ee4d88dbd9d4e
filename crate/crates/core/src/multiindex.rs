//! Multi-indices over phase-space coordinates `z = (p, x)`.

use std::fmt;

/// Nonnegative integer exponents, one per phase-space coordinate
/// (momenta first, then positions).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn zero(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn unit(len: usize, i: usize) -> Self {
        let mut v = vec![0; len];
        v[i] = 1;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `|α|`, the total order.
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// `α! = Π α_i!`.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a)).product()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `α − β`, or `None` when some entry would go negative.
    pub fn checked_sub(&self, other: &Self) -> Option<Self> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(Self)
    }

    /// All multi-indices of length `len` with `|α| = order`, in ascending
    /// lexicographic order.
    pub fn all_of_order(len: usize, order: usize) -> Vec<Self> {
        let mut out = Vec::new();
        let mut cur = vec![0; len];
        fill(&mut cur, 0, order, &mut out);
        out
    }

    /// All multi-indices with `lo ≤ |α| ≤ hi`, grouped by order.
    pub fn all_in_range(len: usize, lo: usize, hi: usize) -> Vec<Self> {
        (lo..=hi).flat_map(|k| Self::all_of_order(len, k)).collect()
    }

    /// Label such as `pp` or `pxx`, used for CSV headers (1D and nD alike,
    /// with coordinate numbers appended when `n > 1`).
    pub fn label(&self) -> String {
        let n = self.len() / 2;
        let mut s = String::new();
        for (i, &a) in self.0.iter().enumerate() {
            let (c, k) = if i < n { ('p', i) } else { ('x', i - n) };
            for _ in 0..a {
                s.push(c);
                if n > 1 {
                    s.push_str(&(k + 1).to_string());
                }
            }
        }
        if s.is_empty() {
            s.push('1');
        }
        s
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

fn fill(cur: &mut Vec<usize>, pos: usize, left: usize, out: &mut Vec<MultiIndex>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(MultiIndex(cur.clone()));
        cur[pos] = 0;
        return;
    }
    if cur.is_empty() {
        return;
    }
    for a in 0..=left {
        cur[pos] = a;
        fill(cur, pos + 1, left - a, out);
    }
    cur[pos] = 0;
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Falling factorial `n (n−1) … (n−k+1)`; zero when `k > n`.
pub fn falling(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).map(|i| (n - i) as f64).product()
}
