//! Exact coefficient tables `t_0..t_N` by fixpoint iteration on truncated
//! power series.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

use crate::system::{ClassId, GfSystem, Monomial};

/// Exact counts per class: `coefficients[c][n]` is the number of objects of
/// size `n` in class `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountingTable {
    cutoff: usize,
    coefficients: Vec<Vec<BigUint>>,
}

impl CountingTable {
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn class(&self, c: ClassId) -> &[BigUint] {
        &self.coefficients[c.index()]
    }

    pub fn get(&self, c: ClassId, n: usize) -> &BigUint {
        &self.coefficients[c.index()][n]
    }

    /// `Σ_{n ≤ N} t_n x^n` in floating point.
    pub fn truncated_sum(&self, c: ClassId, x: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for t in &self.coefficients[c.index()] {
            acc += t.to_f64().unwrap_or(f64::INFINITY) * pow;
            pow *= x;
        }
        acc
    }

    /// `Σ_{n ≤ N} n t_n x^n`, the numerator of the expected size.
    pub fn truncated_size_moment(&self, c: ClassId, x: f64) -> f64 {
        let mut acc = 0.0;
        let mut pow = 1.0;
        for (n, t) in self.coefficients[c.index()].iter().enumerate() {
            acc += n as f64 * t.to_f64().unwrap_or(f64::INFINITY) * pow;
            pow *= x;
        }
        acc
    }
}

type Series = Vec<BigUint>;

fn series_mul(a: &[BigUint], b: &[BigUint], cutoff: usize) -> Series {
    let mut out = vec![BigUint::zero(); cutoff + 1];
    for (i, ai) in a.iter().enumerate() {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(cutoff + 1 - i) {
            if !bj.is_zero() {
                out[i + j] += ai * bj;
            }
        }
    }
    out
}

fn monomial_series(m: &Monomial, current: &[Series], cutoff: usize) -> Option<Series> {
    let shift = m.x_exp as usize;
    if shift > cutoff {
        return None;
    }
    let mut acc: Series = vec![BigUint::zero(); cutoff + 1];
    acc[shift] = BigUint::from(m.coeff);
    for &(c, e) in &m.classes {
        for _ in 0..e {
            acc = series_mul(&acc, &current[c.index()], cutoff);
        }
    }
    Some(acc)
}

/// Exact coefficients up to `cutoff` for every class of a well-founded
/// system, starting from the zero series and iterating `t ← Φ(x, t)`
/// (truncated) until nothing changes.
pub fn count_coefficients(system: &GfSystem, cutoff: usize) -> CountingTable {
    let m = system.len();
    let mut current: Vec<Series> = vec![vec![BigUint::zero(); cutoff + 1]; m];
    // Each pass fixes at least one more coefficient along every chain of
    // size-free dependencies, so this bound is never reached on a
    // well-founded system.
    let max_passes = (cutoff + 1) * (m + 1) + 1;
    for _ in 0..max_passes {
        let mut next = Vec::with_capacity(m);
        for c in system.class_ids() {
            let mut s: Series = vec![BigUint::zero(); cutoff + 1];
            for mono in system.equation(c).terms() {
                if let Some(ms) = monomial_series(mono, &current, cutoff) {
                    for (acc, v) in s.iter_mut().zip(ms) {
                        *acc += v;
                    }
                }
            }
            next.push(s);
        }
        if next == current {
            break;
        }
        current = next;
    }
    CountingTable { cutoff, coefficients: current }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use crate::parse::parse_grammar;
    use crate::system::compile;

    fn table(src: &str, n: usize) -> (GfSystem, CountingTable) {
        let sys = compile(&parse_grammar(src.as_bytes()).unwrap()).unwrap();
        let t = count_coefficients(&sys, n);
        (sys, t)
    }

    fn as_u64(t: &CountingTable, c: ClassId) -> Vec<u64> {
        t.class(c).iter().map(|v| v.to_u64().unwrap()).collect()
    }

    /// Number of ternary trees with `k` internal nodes: C(3k, k) / (2k + 1).
    fn fuss_catalan3(k: u64) -> u64 {
        let mut binom: u128 = 1;
        for i in 0..k as u128 {
            binom = binom * (3 * k as u128 - i) / (i + 1);
        }
        (binom / (2 * k as u128 + 1)) as u64
    }

    #[test]
    fn ternary_counts() {
        let (sys, t) = table(bundled::TERNARY, 13);
        let got = as_u64(&t, sys.start());
        let mut want = vec![0u64; 14];
        for k in 0..=4 {
            want[3 * k + 1] = fuss_catalan3(k as u64);
        }
        assert_eq!(want[1..14].iter().filter(|v| **v != 0).count(), 5);
        assert_eq!(got, want);
        assert_eq!(&got[..], &[0, 1, 0, 0, 1, 0, 0, 3, 0, 0, 12, 0, 0, 55]);
    }

    #[test]
    fn binary_counts_are_catalan() {
        let (sys, t) = table(bundled::BINARY, 7);
        assert_eq!(as_u64(&t, sys.start()), vec![0, 1, 0, 1, 0, 2, 0, 5]);
    }

    #[test]
    fn single_element() {
        let (sys, t) = table(bundled::SINGLE, 3);
        assert_eq!(as_u64(&t, sys.start()), vec![0, 1, 0, 0]);
    }

    #[test]
    fn sequences_count_compositions() {
        // list = x·seq(item), item = x·(1 + list): a list of size n.
        let (sys, t) = table(bundled::LISTS, 6);
        let got = as_u64(&t, sys.start());
        // Brute force: plane trees where every internal "list" node has ≥1
        // item child and every item is a leaf or wraps a list.
        fn lists(n: usize, memo: &mut Vec<Option<u64>>) -> u64 {
            if n < 2 {
                return 0;
            }
            if let Some(v) = memo[n] {
                return v;
            }
            let mut items_memo = vec![None; n + 1];
            let v = seqs(n - 1, memo, &mut items_memo);
            memo[n] = Some(v);
            v
        }
        fn item(n: usize, memo: &mut Vec<Option<u64>>) -> u64 {
            match n {
                0 => 0,
                1 => 1,
                _ => lists(n - 1, memo),
            }
        }
        fn seqs(n: usize, memo: &mut Vec<Option<u64>>, sm: &mut Vec<Option<u64>>) -> u64 {
            if n == 0 {
                return 0;
            }
            if let Some(v) = sm[n] {
                return v;
            }
            let mut total = item(n, memo);
            for first in 1..n {
                total += item(first, memo) * seqs(n - first, memo, sm);
            }
            sm[n] = Some(total);
            total
        }
        let mut memo = vec![None; 7];
        let want: Vec<u64> = (0..=6).map(|n| lists(n, &mut memo)).collect();
        assert_eq!(got, want);
    }
}
