//! Grand canonical and canonical Gibbs measures for the single-site
//! Hamiltonian `H = -Σ (α_x + λ) η_x`, chemical potentials, compressibility,
//! exact expectations and samplers.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::error::{Error, Result};
use crate::numerics;
use crate::partition;
use crate::scalar::Real;

/// Largest region enumerated exactly under the grand canonical measure.
pub const GRAND_ENUMERATION_CAP: usize = 22;
/// Largest canonical sector enumerated exactly.
pub const SECTOR_ENUMERATION_CAP: usize = 5_000_000;
/// Densities closer than this to 0 or 1 are clamped in reported tables.
pub const DENSITY_CLAMP: f64 = 1e-6;

/// Occupation variables on a region plus the cached particle count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    occ: Vec<u8>,
    count: usize,
}

impl Configuration {
    pub fn empty(len: usize) -> Self {
        Self {
            occ: vec![0; len],
            count: 0,
        }
    }

    pub fn from_occupations(occ: Vec<u8>) -> Self {
        assert!(occ.iter().all(|&v| v <= 1), "occupations must be 0/1");
        let count = occ.iter().map(|&v| v as usize).sum();
        Self { occ, count }
    }

    pub fn occupations(&self) -> &[u8] {
        &self.occ
    }

    pub fn into_occupations(self) -> Vec<u8> {
        self.occ
    }

    pub fn len(&self) -> usize {
        self.occ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occ.is_empty()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn density(&self) -> f64 {
        self.count as f64 / self.occ.len() as f64
    }

    #[inline]
    pub fn get(&self, x: usize) -> u8 {
        self.occ[x]
    }

    pub fn set(&mut self, x: usize, v: u8) {
        assert!(v <= 1);
        self.count = self.count + v as usize - self.occ[x] as usize;
        self.occ[x] = v;
    }

    /// Swap the occupations of `x` and `y` (the count is unchanged).
    #[inline]
    pub fn exchange(&mut self, x: usize, y: usize) {
        self.occ.swap(x, y);
    }
}

/// Numerically stable `e^{a+λ} / (1 + e^{a+λ})`.
pub fn occupation_prob<T: Real>(alpha: T, lambda: T) -> T {
    let z = alpha + lambda;
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn check_density(m: f64) -> Result<()> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::InvalidArgument(format!("density {m} not in (0, 1)")));
    }
    Ok(())
}

fn logit(m: f64) -> f64 {
    (m / (1.0 - m)).ln()
}

/// Empirical chemical potential: the `λ` with `Σ_x p_x(λ) = m |Λ|`.
pub fn empirical_lambda(alphas: &[f64], m: f64) -> Result<f64> {
    check_density(m)?;
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("empty region".into()));
    }
    let amax = alphas.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let target = m * alphas.len() as f64;
    let f = |l: f64| {
        let mut s = 0.0;
        let mut ds = 0.0;
        for &a in alphas {
            let p = occupation_prob(a, l);
            s += p;
            ds += p * (1.0 - p);
        }
        (s - target, ds)
    };
    numerics::increasing_root(
        f,
        logit(m) - amax - 1.0,
        logit(m) + amax + 1.0,
        1e-12 * alphas.len() as f64,
    )
}

/// Annealed chemical potential `λ₀(m)`: `E[p(α, λ)] = m`.
pub fn annealed_lambda(law: &DisorderLaw, m: f64) -> Result<f64> {
    check_density(m)?;
    law.validate()?;
    let b = law.bound();
    let failure = std::cell::RefCell::new(None);
    let f = |l: f64| {
        let moments = law.expectation(|a| occupation_prob(a, l)).and_then(|v| {
            law.expectation(|a| {
                let p = occupation_prob(a, l);
                p * (1.0 - p)
            })
            .map(|dv| (v - m, dv))
        });
        moments.unwrap_or_else(|e| {
            failure.borrow_mut().get_or_insert(e);
            (0.0, 1.0)
        })
    };
    let root = numerics::increasing_root(f, logit(m) - b - 1.0, logit(m) + b + 1.0, 1e-14);
    match failure.into_inner() {
        Some(e) => Err(e),
        None => root,
    }
}

/// Static compressibility `χ(m) = E[p(1-p)]` at `λ₀(m)`.
pub fn compressibility(law: &DisorderLaw, m: f64) -> Result<f64> {
    let l0 = annealed_lambda(law, m)?;
    law.expectation(|a| {
        let p = occupation_prob(a, l0);
        p * (1.0 - p)
    })
}

/// `dλ₀/dm` by a five-point central difference.
pub fn annealed_lambda_derivative(law: &DisorderLaw, m: f64) -> Result<f64> {
    check_density(m)?;
    let h = 1e-3 * m.min(1.0 - m);
    let f = |x| annealed_lambda(law, x);
    Ok((-f(m + 2.0 * h)? + 8.0 * f(m + h)? - 8.0 * f(m - h)? + f(m - 2.0 * h)?) / (12.0 * h))
}

/// One row of a thermodynamic table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoRow {
    pub m: f64,
    pub lambda0: f64,
    pub chi: f64,
    /// `χ(m) · dλ₀/dm`, equal to one by the thermodynamic relation.
    pub relation: f64,
    pub clamped: bool,
}

/// `λ₀(m)` and `χ(m)` on a density grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermoTable {
    pub law: DisorderLaw,
    pub rows: Vec<ThermoRow>,
}

impl ThermoTable {
    pub fn compute(law: &DisorderLaw, grid: &[f64]) -> Result<Self> {
        let rows = grid
            .iter()
            .map(|&m0| {
                let m = m0.clamp(DENSITY_CLAMP, 1.0 - DENSITY_CLAMP);
                let lambda0 = annealed_lambda(law, m)?;
                let chi = compressibility(law, m)?;
                let relation = chi * annealed_lambda_derivative(law, m)?;
                Ok(ThermoRow {
                    m,
                    lambda0,
                    chi,
                    relation,
                    clamped: m != m0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            law: law.clone(),
            rows,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["m", "lambda0", "chi", "chi_dlambda0_dm", "clamped"])?;
        for r in &self.rows {
            wr.write_record([
                format!("{:.12}", r.m),
                format!("{:.15e}", r.lambda0),
                format!("{:.15e}", r.chi),
                format!("{:.15e}", r.relation),
                r.clamped.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Product measure on a region with disorder `alphas` and chemical potential `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrandCanonicalSpec {
    pub alphas: Vec<f64>,
    pub lambda: f64,
}

/// Product measure conditioned on `n` particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSpec {
    pub alphas: Vec<f64>,
    pub n: usize,
}

impl GrandCanonicalSpec {
    pub fn probabilities(&self) -> Vec<f64> {
        self.alphas
            .iter()
            .map(|&a| occupation_prob(a, self.lambda))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        Configuration::from_occupations(
            self.probabilities()
                .into_iter()
                .map(|p| (rng.random::<f64>() < p) as u8)
                .collect(),
        )
    }

    /// Exact `μ(f)` by enumeration of all `2^|Λ|` configurations.
    pub fn expectation<F: Fn(&[u8]) -> f64>(&self, f: F) -> Result<f64> {
        let len = self.alphas.len();
        if len > GRAND_ENUMERATION_CAP {
            return Err(Error::CapExceeded {
                what: "grand canonical enumeration (sites)",
                needed: len,
                cap: GRAND_ENUMERATION_CAP,
            });
        }
        let p = self.probabilities();
        let mut occ = vec![0u8; len];
        let mut total = 0.0;
        for mask in 0u64..(1u64 << len) {
            let mut w = 1.0;
            for (i, o) in occ.iter_mut().enumerate() {
                *o = (mask >> i & 1) as u8;
                w *= if *o == 1 { p[i] } else { 1.0 - p[i] };
            }
            if w != 0.0 {
                total += w * f(&occ);
            }
        }
        Ok(total)
    }
}

/// Iterate the `n`-subsets of `len` bits in increasing numeric order.
pub fn subsets(len: usize, n: usize) -> impl Iterator<Item = u64> {
    assert!(len <= 63);
    let first: u64 = if n == 0 { 0 } else { (1u64 << n) - 1 };
    let limit = 1u64 << len;
    let mut next = Some(first);
    std::iter::from_fn(move || {
        let cur = next?;
        if cur >= limit || (n == 0 && cur != 0) {
            return None;
        }
        next = if n == 0 {
            None
        } else {
            // Gosper's hack
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            Some((((r ^ cur) >> 2) / c) | r)
        };
        Some(cur)
    })
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r.min(usize::MAX as u128) as usize
}

impl CanonicalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n > self.alphas.len() {
            return Err(Error::InvalidArgument(format!(
                "particle number {} exceeds region size {}",
                self.n,
                self.alphas.len()
            )));
        }
        Ok(())
    }

    /// Exact draw by sequential conditional sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Configuration> {
        self.validate()?;
        Ok(Configuration::from_occupations(partition::sample_canonical(
            &self.alphas,
            self.n,
            rng,
        )))
    }

    /// One-site marginals `ν(η_x)`.
    pub fn marginals(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(partition::canonical_marginals(&self.alphas, self.n))
    }

    /// Sector enumeration: every configuration with its probability.
    pub fn enumerate(&self) -> Result<Vec<(Vec<u8>, f64)>> {
        self.validate()?;
        let len = self.alphas.len();
        let size = binomial(len, self.n);
        if len > 63 || size > SECTOR_ENUMERATION_CAP {
            return Err(Error::CapExceeded {
                what: "canonical sector enumeration (states)",
                needed: size,
                cap: SECTOR_ENUMERATION_CAP,
            });
        }
        let ln_z = partition::ln_partition_all(&self.alphas)[self.n];
        Ok(subsets(len, self.n)
            .map(|mask| {
                let occ: Vec<u8> = (0..len).map(|i| (mask >> i & 1) as u8).collect();
                let e: f64 = (0..len)
                    .filter(|&i| occ[i] == 1)
                    .map(|i| self.alphas[i])
                    .sum();
                (occ, (e - ln_z).exp())
            })
            .collect())
    }

    /// Exact `ν(f)` by sector enumeration.
    pub fn expectation<F: Fn(&[u8]) -> f64>(&self, f: F) -> Result<f64> {
        Ok(self.enumerate()?.iter().map(|(occ, w)| w * f(occ)).sum())
    }
}

/// Partition of a region into atoms, each with its disorder and particle number.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCanonical {
    pub atoms: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

/// First and second moments of `f` under the multicanonical measure and the
/// matched multi-grand-canonical measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleMoments {
    pub canonical_mean: f64,
    pub canonical_second: f64,
    pub grand_mean: f64,
    pub grand_second: f64,
}

impl EnsembleMoments {
    pub fn gap(&self) -> f64 {
        self.canonical_mean - self.grand_mean
    }

    pub fn canonical_variance(&self) -> f64 {
        self.canonical_second - self.canonical_mean * self.canonical_mean
    }

    pub fn grand_variance(&self) -> f64 {
        self.grand_second - self.grand_mean * self.grand_mean
    }
}

impl MultiCanonical {
    fn validate(&self) -> Result<()> {
        if self.atoms.len() != self.counts.len() {
            return Err(Error::InvalidArgument("atoms/counts length mismatch".into()));
        }
        for (a, &n) in self.atoms.iter().zip(&self.counts) {
            if a.is_empty() || n > a.len() {
                return Err(Error::InvalidArgument(format!(
                    "infeasible constraint: {n} particles on {} sites",
                    a.len()
                )));
            }
        }
        Ok(())
    }

    /// Exact moments of a function of the occupations on `support`, given as
    /// `(atom, site)` pairs; `f` receives the occupations in support order.
    pub fn moments<F: Fn(&[u8]) -> f64>(
        &self,
        support: &[(usize, usize)],
        f: F,
    ) -> Result<EnsembleMoments> {
        self.validate()?;
        if support.len() > GRAND_ENUMERATION_CAP {
            return Err(Error::CapExceeded {
                what: "local function support (sites)",
                needed: support.len(),
                cap: GRAND_ENUMERATION_CAP,
            });
        }
        // per-atom: partition values of the atom minus its support sites
        struct AtomData {
            ln_z_full: f64,
            ln_z_rest: Vec<f64>,
            n: usize,
            probs: Vec<f64>,
        }
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (i, (alphas, &n)) in self.atoms.iter().zip(&self.counts).enumerate() {
            let in_support: Vec<usize> = support
                .iter()
                .filter(|(a, _)| *a == i)
                .map(|&(_, s)| s)
                .collect();
            let rest: Vec<f64> = (0..alphas.len())
                .filter(|s| !in_support.contains(s))
                .map(|s| alphas[s])
                .collect();
            let m = n as f64 / alphas.len() as f64;
            let probs = if n == 0 {
                vec![0.0; alphas.len()]
            } else if n == alphas.len() {
                vec![1.0; alphas.len()]
            } else {
                let l = empirical_lambda(alphas, m)?;
                alphas.iter().map(|&a| occupation_prob(a, l)).collect()
            };
            atoms.push(AtomData {
                ln_z_full: partition::ln_partition_all(alphas)[n],
                ln_z_rest: partition::ln_partition_all(&rest),
                n,
                probs,
            });
        }
        let k = support.len();
        let mut out = EnsembleMoments {
            canonical_mean: 0.0,
            canonical_second: 0.0,
            grand_mean: 0.0,
            grand_second: 0.0,
        };
        let mut occ = vec![0u8; k];
        let mut per_atom = vec![0usize; atoms.len()];
        let mut ln_e = vec![0.0; atoms.len()];
        for mask in 0u64..(1u64 << k) {
            per_atom.iter_mut().for_each(|c| *c = 0);
            ln_e.iter_mut().for_each(|c| *c = 0.0);
            let mut grand_w = 1.0;
            for (j, &(a, s)) in support.iter().enumerate() {
                occ[j] = (mask >> j & 1) as u8;
                let p = atoms[a].probs[s];
                if occ[j] == 1 {
                    per_atom[a] += 1;
                    ln_e[a] += self.atoms[a][s];
                    grand_w *= p;
                } else {
                    grand_w *= 1.0 - p;
                }
            }
            let mut can_w = 1.0;
            for (a, d) in atoms.iter().enumerate() {
                if per_atom[a] > d.n || d.n - per_atom[a] >= d.ln_z_rest.len() {
                    can_w = 0.0;
                    break;
                }
                can_w *= (ln_e[a] + d.ln_z_rest[d.n - per_atom[a]] - d.ln_z_full).exp();
            }
            if can_w == 0.0 && grand_w == 0.0 {
                continue;
            }
            let v = f(&occ);
            out.canonical_mean += can_w * v;
            out.canonical_second += can_w * v * v;
            out.grand_mean += grand_w * v;
            out.grand_second += grand_w * v * v;
        }
        Ok(out)
    }
}

/// `ν̄(f) − μ̄(f)` between the multicanonical measure and the matched product
/// of grand canonical measures.
pub fn ensemble_gap<F: Fn(&[u8]) -> f64>(
    ensemble: &MultiCanonical,
    support: &[(usize, usize)],
    f: F,
) -> Result<f64> {
    Ok(ensemble.moments(support, f)?.gap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logistic_values() {
        assert_eq!(occupation_prob(0.0f64, 0.0), 0.5);
        assert_eq!(occupation_prob(1.0f64, -1.0), 0.5);
        let e = 1f64.exp();
        assert!((occupation_prob(1.0f64, 0.0) - e / (1.0 + e)).abs() < 1e-15);
        assert!(occupation_prob(800.0f64, 0.0) == 1.0);
        assert!(occupation_prob(-800.0f64, 0.0) == 0.0);
        assert!((occupation_prob(0.5f32, 0.0) - 0.622_459_3).abs() < 1e-6);
    }

    #[test]
    fn empirical_lambda_examples() {
        assert!(empirical_lambda(&[0.0; 5], 0.5).unwrap().abs() < 1e-12);
        let l = empirical_lambda(&[0.0; 5], 0.25).unwrap();
        assert!((l - (1.0f64 / 3.0).ln()).abs() < 1e-10);
        assert!(empirical_lambda(&[1.0, -1.0], 0.5).unwrap().abs() < 1e-12);
        assert!(empirical_lambda(&[0.0], 1.0).is_err());
        assert!(empirical_lambda(&[0.0], 0.0).is_err());
    }

    #[test]
    fn annealed_lambda_examples() {
        assert!(annealed_lambda(&DisorderLaw::constant(0.0), 0.5).unwrap().abs() < 1e-14);
        assert!(annealed_lambda(&DisorderLaw::two_point(1.0), 0.5).unwrap().abs() < 1e-14);
        // oracle: bisection on the two-term sum, independent of the solver
        let target = |l: f64| 0.5 * (occupation_prob(-1.0, l) + occupation_prob(1.0, l)) - 0.25;
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if target(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        let l = annealed_lambda(&DisorderLaw::two_point(1.0), 0.25).unwrap();
        assert!((l - lo).abs() < 1e-12, "{l} vs {lo}");
        // frozen from an independent scipy brentq solve
        assert!((l - (-1.351_392_304_218_585_4)).abs() < 1e-12);
    }

    #[test]
    fn compressibility_examples() {
        let c = DisorderLaw::constant(0.0);
        assert!((compressibility(&c, 0.5).unwrap() - 0.25).abs() < 1e-14);
        assert!((compressibility(&c, 0.1).unwrap() - 0.09).abs() < 1e-14);
        let pp = occupation_prob(1.0, 0.0);
        let pm = occupation_prob(-1.0, 0.0);
        let expect = 0.5 * (pp * (1.0 - pp) + pm * (1.0 - pm));
        let chi = compressibility(&DisorderLaw::two_point(1.0), 0.5).unwrap();
        assert!((chi - expect).abs() < 1e-14);
        assert!((chi - 0.196_611_933_241_481_85).abs() < 1e-14);
    }

    #[test]
    fn thermodynamic_relation_uniform_law() {
        let law = DisorderLaw::uniform(1.0);
        for &m in &[0.05, 0.3, 0.5, 0.9] {
            let r = compressibility(&law, m).unwrap() * annealed_lambda_derivative(&law, m).unwrap();
            assert!((r - 1.0).abs() < 1e-6, "m={m}: {r}");
        }
    }

    #[test]
    fn monotone_chemical_potentials() {
        let alphas = [0.3, -0.9, 0.5, 1.0, -0.1];
        let law = DisorderLaw::uniform(1.0);
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for k in 1..20 {
            let m = k as f64 / 20.0;
            let cur = (empirical_lambda(&alphas, m).unwrap(), annealed_lambda(&law, m).unwrap());
            assert!(cur.0 > prev.0 && cur.1 > prev.1);
            prev = cur;
        }
    }

    #[test]
    fn grand_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = GrandCanonicalSpec { alphas: vec![0.0; 100], lambda: -50.0 };
        assert_eq!(spec.sample(&mut rng).count(), 0);
        let spec = GrandCanonicalSpec { alphas: vec![0.0; 10_000], lambda: 0.0 };
        let d = spec.sample(&mut rng).density();
        assert!((d - 0.5).abs() < 0.02);
        let a = spec.sample(&mut ChaCha8Rng::seed_from_u64(9));
        let b = spec.sample(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_two_sites() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = 0.7;
        let spec = CanonicalSpec { alphas: vec![a, 0.0], n: 1 };
        let draws = 20_000;
        let hits = (0..draws)
            .filter(|_| spec.sample(&mut rng).unwrap().get(0) == 1)
            .count();
        let p = a.exp() / (a.exp() + 1.0);
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - p).abs() < 3.0 * sd);
        assert!(CanonicalSpec { alphas: vec![0.0; 2], n: 3 }.sample(&mut rng).is_err());
    }

    #[test]
    fn exact_expectations() {
        let spec = GrandCanonicalSpec { alphas: vec![0.2, -0.4, 0.9], lambda: 0.3 };
        let p = spec.probabilities();
        assert!((spec.expectation(|o| o[1] as f64).unwrap() - p[1]).abs() < 1e-15);
        let can = CanonicalSpec { alphas: vec![0.2, -0.4, 0.9], n: 2 };
        assert!((can.expectation(|o| o.iter().map(|&v| v as f64).sum()).unwrap() - 2.0).abs() < 1e-14);
        // η0η1 with N=2 on 3 sites: only {0,1} contributes
        let w01 = (0.2f64 - 0.4).exp();
        let z = w01 + (0.2f64 + 0.9).exp() + (-0.4f64 + 0.9).exp();
        assert!((can.expectation(|o| (o[0] * o[1]) as f64).unwrap() - w01 / z).abs() < 1e-14);
        assert!(GrandCanonicalSpec { alphas: vec![0.0; 23], lambda: 0.0 }
            .expectation(|_| 1.0)
            .is_err());
    }

    #[test]
    fn subsets_enumeration() {
        assert_eq!(subsets(4, 2).count(), 6);
        assert_eq!(subsets(5, 0).collect::<Vec<_>>(), vec![0]);
        assert_eq!(subsets(5, 5).collect::<Vec<_>>(), vec![31]);
        assert_eq!(binomial(16, 8), 12870);
    }

    #[test]
    fn ensemble_gap_trivial_cases() {
        let ens = MultiCanonical { atoms: vec![vec![0.3, -0.2, 0.8, 0.1]], counts: vec![2] };
        assert!(ensemble_gap(&ens, &[(0, 0)], |_| 3.0).unwrap().abs() < 1e-14);
        // f = density of the whole atom: exactly N/|Δ| under both measures
        let all = [(0, 0), (0, 1), (0, 2), (0, 3)];
        let g = ensemble_gap(&ens, &all, |o| o.iter().map(|&v| v as f64).sum::<f64>() / 4.0).unwrap();
        assert!(g.abs() < 1e-12);
    }
}
