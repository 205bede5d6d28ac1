//! Sector arithmetic for product weights `∏ exp(a_x η_x)`: partition values
//! `Z(k, n)` by the recurrence `Z(k,n) = Z(k-1,n) + w·Z(k-1,n-1)`, exact
//! canonical sampling, one-site marginals and particle-number laws.
//!
//! Tables are kept in linear scale up to [`LINEAR_MAX_SITES`] sites and in
//! log scale beyond.

use rand::Rng;

pub const LINEAR_MAX_SITES: usize = 64;

trait Semiring: Copy {
    fn zero() -> f64;
    fn one() -> f64;
    fn add(a: f64, b: f64) -> f64;
    fn mul(a: f64, b: f64) -> f64;
    fn from_ln(x: f64) -> f64;
    fn to_ln(x: f64) -> f64;
}

#[derive(Clone, Copy)]
struct Linear;
#[derive(Clone, Copy)]
struct LogSpace;

impl Semiring for Linear {
    fn zero() -> f64 {
        0.0
    }
    fn one() -> f64 {
        1.0
    }
    #[inline]
    fn add(a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline]
    fn mul(a: f64, b: f64) -> f64 {
        a * b
    }
    fn from_ln(x: f64) -> f64 {
        x.exp()
    }
    fn to_ln(x: f64) -> f64 {
        x.ln()
    }
}

impl Semiring for LogSpace {
    fn zero() -> f64 {
        f64::NEG_INFINITY
    }
    fn one() -> f64 {
        0.0
    }
    #[inline]
    fn add(a: f64, b: f64) -> f64 {
        if a == f64::NEG_INFINITY {
            return b;
        }
        if b == f64::NEG_INFINITY {
            return a;
        }
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        hi + (lo - hi).exp().ln_1p()
    }
    #[inline]
    fn mul(a: f64, b: f64) -> f64 {
        a + b
    }
    fn from_ln(x: f64) -> f64 {
        x
    }
    fn to_ln(x: f64) -> f64 {
        x
    }
}

/// Table of `Z(k, n)` over the last `k` sites of a site sequence.
#[derive(Debug, Clone)]
pub struct SuffixPartition {
    log_scale: bool,
    len: usize,
    width: usize,
    table: Vec<f64>,
}

fn fill<S: Semiring>(log_weights: &[f64], max_n: usize) -> Vec<f64> {
    let len = log_weights.len();
    let width = max_n + 1;
    let mut t = vec![S::zero(); (len + 1) * width];
    t[0] = S::one();
    for k in 1..=len {
        // the k-th site from the end
        let w = S::from_ln(log_weights[len - k]);
        for n in 0..width {
            let mut v = t[(k - 1) * width + n];
            if n > 0 {
                v = S::add(v, S::mul(w, t[(k - 1) * width + n - 1]));
            }
            t[k * width + n] = v;
        }
    }
    t
}

impl SuffixPartition {
    pub fn new(log_weights: &[f64], max_n: usize) -> Self {
        let log_scale = log_weights.len() > LINEAR_MAX_SITES;
        let table = if log_scale {
            fill::<LogSpace>(log_weights, max_n)
        } else {
            fill::<Linear>(log_weights, max_n)
        };
        Self {
            log_scale,
            len: log_weights.len(),
            width: max_n + 1,
            table,
        }
    }

    pub fn is_log_scale(&self) -> bool {
        self.log_scale
    }

    /// `ln Z(k, n)`; `-inf` when `n > k`.
    pub fn ln_z(&self, k: usize, n: usize) -> f64 {
        if n >= self.width || k > self.len {
            return f64::NEG_INFINITY;
        }
        let v = self.table[k * self.width + n];
        if self.log_scale {
            LogSpace::to_ln(v)
        } else {
            Linear::to_ln(v)
        }
    }

    /// Probability that site `i` is occupied given `n` particles on sites
    /// `i..len`.
    pub fn occupation_prob(&self, log_weights: &[f64], i: usize, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let k = self.len - i;
        (log_weights[i] + self.ln_z(k - 1, n - 1) - self.ln_z(k, n)).exp()
    }
}

/// Exact draw from the canonical law with `n` particles, by sequential
/// conditional sampling.
pub fn sample_canonical<R: Rng + ?Sized>(log_weights: &[f64], n: usize, rng: &mut R) -> Vec<u8> {
    let len = log_weights.len();
    assert!(n <= len);
    let table = SuffixPartition::new(log_weights, n);
    let mut out = vec![0u8; len];
    let mut left = n;
    for i in 0..len {
        if left == 0 {
            break;
        }
        if len - i == left {
            out[i..].iter_mut().for_each(|e| *e = 1);
            break;
        }
        let p = table.occupation_prob(log_weights, i, left);
        if rng.random::<f64>() < p {
            out[i] = 1;
            left -= 1;
        }
    }
    out
}

/// `ln Z(n)` for `n = 0..=len` over all sites.
pub fn ln_partition_all(log_weights: &[f64]) -> Vec<f64> {
    let len = log_weights.len();
    let t = SuffixPartition::new(log_weights, len);
    (0..=len).map(|n| t.ln_z(len, n)).collect()
}

fn marginals_impl<S: Semiring>(log_weights: &[f64], n: usize) -> Vec<f64> {
    let len = log_weights.len();
    let width = n + 1;
    // prefix[i][j]: first i sites carry j particles
    let mut prefix = vec![S::zero(); (len + 1) * width];
    prefix[0] = S::one();
    for i in 1..=len {
        let w = S::from_ln(log_weights[i - 1]);
        for j in 0..width {
            let mut v = prefix[(i - 1) * width + j];
            if j > 0 {
                v = S::add(v, S::mul(w, prefix[(i - 1) * width + j - 1]));
            }
            prefix[i * width + j] = v;
        }
    }
    let suffix = fill::<S>(log_weights, n);
    let total = S::to_ln(prefix[len * width + n]);
    (0..len)
        .map(|x| {
            if n == 0 {
                return 0.0;
            }
            // sites before x: x of them; after x: len - x - 1
            let after = len - x - 1;
            let mut acc = S::zero();
            for j in 0..n {
                let rest = n - 1 - j;
                acc = S::add(
                    acc,
                    S::mul(prefix[x * width + j], suffix[after * width + rest]),
                );
            }
            (log_weights[x] + S::to_ln(acc) - total).exp()
        })
        .collect()
}

/// One-site occupation probabilities under the canonical law with `n`
/// particles.
pub fn canonical_marginals(log_weights: &[f64], n: usize) -> Vec<f64> {
    assert!(n <= log_weights.len());
    if log_weights.len() > LINEAR_MAX_SITES {
        marginals_impl::<LogSpace>(log_weights, n)
    } else {
        marginals_impl::<Linear>(log_weights, n)
    }
}

/// Law of the particle number under independent occupations with
/// probabilities `probs` (Poisson-binomial).
pub fn count_distribution(probs: &[f64]) -> Vec<f64> {
    let mut dist = vec![0.0; probs.len() + 1];
    dist[0] = 1.0;
    for (k, &p) in probs.iter().enumerate() {
        for n in (0..=k + 1).rev() {
            let stay = dist[n] * (1.0 - p);
            let come = if n > 0 { dist[n - 1] * p } else { 0.0 };
            dist[n] = stay + come;
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_z(a: &[f64], n: usize) -> f64 {
        let l = a.len();
        (0u32..1 << l)
            .filter(|m| m.count_ones() as usize == n)
            .map(|m| (0..l).filter(|i| m >> i & 1 == 1).map(|i| a[i]).sum::<f64>().exp())
            .sum()
    }

    #[test]
    fn partition_matches_enumeration() {
        let a = [0.3, -0.7, 1.0, 0.1, -0.2, 0.9];
        let z = ln_partition_all(&a);
        for n in 0..=a.len() {
            assert!((z[n] - brute_z(&a, n).ln()).abs() < 1e-13);
        }
    }

    #[test]
    fn log_scale_agrees_with_linear() {
        let a: Vec<f64> = (0..80).map(|i| ((i * 37 % 11) as f64 / 5.0) - 1.0).collect();
        let t = SuffixPartition::new(&a, 40);
        assert!(t.is_log_scale());
        let lin = fill::<Linear>(&a, 40);
        let rel = (t.ln_z(80, 40) - lin[80 * 41 + 40].ln()).abs();
        assert!(rel < 1e-12);
        let m_log = marginals_impl::<LogSpace>(&a, 40);
        let m_lin = marginals_impl::<Linear>(&a, 40);
        for (x, y) in m_log.iter().zip(&m_lin) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((m_log.iter().sum::<f64>() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn marginals_match_enumeration() {
        let a = [0.5, -1.0, 0.2, 0.8, -0.3];
        for n in 0..=5 {
            let m = canonical_marginals(&a, n);
            let z = brute_z(&a, n);
            for x in 0..5 {
                let num: f64 = (0u32..32)
                    .filter(|s| s.count_ones() as usize == n && s >> x & 1 == 1)
                    .map(|s| (0..5).filter(|i| s >> i & 1 == 1).map(|i| a[i]).sum::<f64>().exp())
                    .sum();
                assert!((m[x] - num / z).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn sampler_conserves_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = [0.1; 10];
        for n in 0..=10 {
            let s = sample_canonical(&a, n, &mut rng);
            assert_eq!(s.iter().map(|&v| v as usize).sum::<usize>(), n);
        }
    }

    #[test]
    fn count_distribution_sums_to_one() {
        let d = count_distribution(&[0.2, 0.5, 0.9]);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((d[3] - 0.09).abs() < 1e-15);
    }
}
