//! Exact analysis of the exchange generator on canonical sectors of a finite
//! region: sparse rate matrices, spectral gaps, Dirichlet forms, resolvent
//! (H₋₁) quantities and the perturbed top eigenvalue.
//!
//! States of a sector are the `N`-subsets of the region's sites encoded as
//! bitmasks and ranked in colexicographic order, which is also the increasing
//! numeric order of the masks.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::dynamics::RateFamily;
use crate::error::{Error, Result};
use crate::gibbs::{annealed_lambda, binomial, compressibility, subsets};
use crate::lattice::{Bond, Region};
use crate::linalg::{conjugate_gradient, lanczos_lowest};
use crate::observables::PairedWindow;
use crate::partition::ln_partition_all;

/// Sectors up to this many states are diagonalized densely.
pub const DENSE_EIGEN_MAX: usize = 3000;
/// Default cap on the number of states in a sector.
pub const SECTOR_CAP: usize = 5_000_000;
/// Relative tolerance of the resolvent solves.
pub const RESOLVENT_TOL: f64 = 1e-10;
/// Tolerance on the structural checks done while building a sector.
pub const INVARIANT_TOL: f64 = 1e-12;

/// The generator restricted to the configurations of a region with a fixed
/// particle number.
#[derive(Debug, Clone)]
pub struct SectorOperator {
    region: Region,
    alphas: Vec<f64>,
    particles: usize,
    states: Vec<u64>,
    binom: Vec<Vec<u64>>,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    rates: Vec<f64>,
    sym: Vec<f64>,
    out_rate: Vec<f64>,
    pi: Vec<f64>,
    sqrt_pi: Vec<f64>,
}

fn binomial_table(n: usize) -> Vec<Vec<u64>> {
    let mut t = vec![vec![0u64; n + 2]; n + 1];
    for i in 0..=n {
        t[i][0] = 1;
        for k in 1..=i {
            t[i][k] = t[i - 1][k - 1] + if k <= i - 1 { t[i - 1][k] } else { 0 };
        }
    }
    t
}

impl SectorOperator {
    pub fn build(region: &Region, alphas: &[f64], family: &RateFamily<f64>, particles: usize) -> Result<Self> {
        Self::build_with_cap(region, alphas, family, particles, SECTOR_CAP)
    }

    pub fn build_with_cap(
        region: &Region,
        alphas: &[f64],
        family: &RateFamily<f64>,
        particles: usize,
        cap: usize,
    ) -> Result<Self> {
        let len = region.len();
        if alphas.len() != len {
            return Err(Error::InvalidArgument(format!(
                "{} disorder values for a region of {len} sites",
                alphas.len()
            )));
        }
        if len > 63 {
            return Err(Error::CapExceeded {
                what: "sector region (sites)",
                needed: len,
                cap: 63,
            });
        }
        if particles > len {
            return Err(Error::InvalidArgument(format!("{particles} particles on {len} sites")));
        }
        let size = binomial(len, particles);
        if size > cap {
            return Err(Error::CapExceeded {
                what: "canonical sector (states)",
                needed: size,
                cap,
            });
        }
        let states: Vec<u64> = subsets(len, particles).collect();
        let energy = |mask: u64| -> f64 {
            (0..len).filter(|&i| mask >> i & 1 == 1).map(|i| alphas[i]).sum()
        };
        let ln_z = ln_partition_all(alphas)[particles];
        let pi: Vec<f64> = states.iter().map(|&s| (energy(s) - ln_z).exp()).collect();
        let sqrt_pi = pi.iter().map(|p| p.sqrt()).collect();
        let mut op = Self {
            region: region.clone(),
            alphas: alphas.to_vec(),
            particles,
            binom: binomial_table(len),
            states,
            row_start: Vec::with_capacity(size + 1),
            cols: Vec::new(),
            rates: Vec::new(),
            sym: Vec::new(),
            out_rate: Vec::with_capacity(size),
            pi,
            sqrt_pi,
        };
        op.row_start.push(0);
        let mut worst_reversibility = 0.0f64;
        for i in 0..op.states.len() {
            let mask = op.states[i];
            let mut out = 0.0;
            for b in &region.bonds {
                let (sx, sy) = ((mask >> b.x & 1) as u8, (mask >> b.y & 1) as u8);
                if sx == sy {
                    continue;
                }
                let other = mask ^ (1u64 << b.x) ^ (1u64 << b.y);
                let j = op.rank(other);
                let q = family.rate(b.axis, alphas[b.x], sx, alphas[b.y], sy);
                let back = family.rate(b.axis, alphas[b.x], sy, alphas[b.y], sx);
                let (fwd_flux, back_flux) = (op.pi[i] * q, op.pi[j] * back);
                worst_reversibility =
                    worst_reversibility.max((fwd_flux - back_flux).abs() / fwd_flux.max(back_flux));
                op.cols.push(j as u32);
                op.rates.push(q);
                op.sym.push((q * back).sqrt());
                out += q;
            }
            op.out_rate.push(out);
            op.row_start.push(op.cols.len());
        }
        if worst_reversibility > INVARIANT_TOL {
            return Err(Error::Rates(format!(
                "sector generator is not reversible (relative defect {worst_reversibility:e})"
            )));
        }
        if !op.is_irreducible() {
            return Err(Error::InvalidArgument("sector is not irreducible (disconnected region?)".into()));
        }
        Ok(op)
    }

    fn is_irreducible(&self) -> bool {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &self.cols[self.row_start[i]..self.row_start[i + 1]] {
                let j = j as usize;
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    /// Colexicographic rank of an `N`-subset mask.
    pub fn rank(&self, mask: u64) -> usize {
        let mut r = 0u64;
        let mut k = 0;
        let mut m = mask;
        while m != 0 {
            let p = m.trailing_zeros() as usize;
            k += 1;
            r += self.binom[p].get(k).copied().unwrap_or(0);
            m &= m - 1;
        }
        r as usize
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn state(&self, i: usize) -> u64 {
        self.states[i]
    }

    pub fn occupations(&self, i: usize) -> Vec<u8> {
        let m = self.states[i];
        (0..self.region.len()).map(|x| (m >> x & 1) as u8).collect()
    }

    /// Canonical weights of the states.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn sqrt_pi(&self) -> &[f64] {
        &self.sqrt_pi
    }

    /// Number of stored off-diagonal transitions.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Values of a configuration function on every state.
    pub fn evaluate<F: Fn(&[u8]) -> f64>(&self, f: F) -> Vec<f64> {
        let mut occ = vec![0u8; self.region.len()];
        self.states
            .iter()
            .map(|&m| {
                for (x, o) in occ.iter_mut().enumerate() {
                    *o = (m >> x & 1) as u8;
                }
                f(&occ)
            })
            .collect()
    }

    /// `Σ π f`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.pi.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// `⟨f, g⟩_π`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.pi.iter().zip(f).zip(g).map(|((p, a), b)| p * a * b).sum()
    }

    /// `(ℒf)_i = Σ_j Q_ij (f_j − f_i)`.
    pub fn apply_generator(&self, f: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let mut acc = 0.0;
            for k in self.row_start[i]..self.row_start[i + 1] {
                acc += self.rates[k] * (f[self.cols[k] as usize] - f[i]);
            }
            out[i] = acc;
        }
    }

    /// `−Π^{1/2} ℒ Π^{−1/2} x`.
    pub fn apply_neg_sym(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let mut acc = self.out_rate[i] * x[i];
            for k in self.row_start[i]..self.row_start[i + 1] {
                acc -= self.sym[k] * x[self.cols[k] as usize];
            }
            out[i] = acc;
        }
    }

    /// Dense `−Π^{1/2} ℒ Π^{−1/2}`.
    pub fn dense_neg_sym(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.out_rate[i];
            for k in self.row_start[i]..self.row_start[i + 1] {
                m[(i, self.cols[k] as usize)] -= self.sym[k];
            }
        }
        m
    }

    /// Dense generator matrix `Q` with diagonal `−Σ_j Q_ij`.
    pub fn dense_generator(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = -self.out_rate[i];
            for k in self.row_start[i]..self.row_start[i + 1] {
                m[(i, self.cols[k] as usize)] += self.rates[k];
            }
        }
        m
    }

    /// Largest row sum of the generator relative to its diagonal.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let s: f64 = self.rates[self.row_start[i]..self.row_start[i + 1]].iter().sum();
                (s - self.out_rate[i]).abs() / self.out_rate[i].max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// Largest relative violation of `π_i Q_ij = π_j Q_ji` over stored entries.
    pub fn reversibility_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            for k in self.row_start[i]..self.row_start[i + 1] {
                let j = self.cols[k] as usize;
                let back = self.entry(j, i);
                let (a, b) = (self.pi[i] * self.rates[k], self.pi[j] * back);
                worst = worst.max((a - b).abs() / a.max(b));
            }
        }
        worst
    }

    /// `Q_ij` (0 when absent).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (self.row_start[i]..self.row_start[i + 1])
            .find(|&k| self.cols[k] as usize == j)
            .map_or(0.0, |k| self.rates[k])
    }
}

/// How a gap was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenMethod {
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub gap: f64,
    pub residual: f64,
    pub method: EigenMethod,
}

/// Smallest nonzero eigenvalue of `−ℒ` on the sector.
pub fn spectral_gap(op: &SectorOperator) -> Result<GapEstimate> {
    if op.len() < 2 {
        return Err(Error::InvalidArgument("a single-state sector has no gap".into()));
    }
    if op.len() <= DENSE_EIGEN_MAX {
        let mut ev: Vec<f64> = op.dense_neg_sym().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        return Ok(GapEstimate {
            gap: ev[1],
            residual: 0.0,
            method: EigenMethod::Dense,
        });
    }
    let est = lanczos_lowest(
        |x, y| op.apply_neg_sym(x, y),
        op.len(),
        &[op.sqrt_pi()],
        1e-10,
        op.len().min(3000),
        0x5eed,
    )?;
    Ok(GapEstimate {
        gap: est.value,
        residual: est.residual,
        method: EigenMethod::Lanczos,
    })
}

/// `½ Σ_b π(c_b (∇_b f)²)`.
pub fn dirichlet_form(op: &SectorOperator, f: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..op.len() {
        let mut acc = 0.0;
        for k in op.row_start[i]..op.row_start[i + 1] {
            let d = f[op.cols[k] as usize] - f[i];
            acc += op.rates[k] * d * d;
        }
        total += op.pi[i] * acc;
    }
    0.5 * total
}

fn check_centred(op: &SectorOperator, g: &[f64]) -> Result<()> {
    let scale = op.pi.iter().zip(g).map(|(p, v)| p * v.abs()).sum::<f64>();
    let mean = op.mean(g);
    if mean.abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(format!(
            "function has canonical mean {mean:e}, resolvent undefined"
        )));
    }
    Ok(())
}

/// `h = (−ℒ)^{−1} g` on the π-mean-zero subspace.
pub fn solve_poisson(op: &SectorOperator, g: &[f64]) -> Result<Vec<f64>> {
    check_centred(op, g)?;
    let rhs: Vec<f64> = g.iter().zip(&op.sqrt_pi).map(|(v, s)| v * s).collect();
    let out = conjugate_gradient(
        |x: &[f64], y: &mut [f64]| op.apply_neg_sym(x, y),
        &rhs,
        &[op.sqrt_pi()],
        RESOLVENT_TOL,
        20 * op.len() + 100,
    )?;
    Ok(out.x.iter().zip(&op.sqrt_pi).map(|(u, s)| u / s).collect())
}

/// `⟨f, (−ℒ)^{−1} g⟩_π` for π-centred `f` and `g`.
pub fn resolvent_form(op: &SectorOperator, f: &[f64], g: &[f64]) -> Result<f64> {
    check_centred(op, f)?;
    let h = solve_poisson(op, g)?;
    Ok(op.inner(f, &h))
}

/// `⟨g, (−ℒ)^{−1} g⟩_π`.
pub fn h_minus_one(op: &SectorOperator, g: &[f64]) -> Result<f64> {
    resolvent_form(op, g, g)
}

/// Top eigenvalue of `ℒ + βV` and the perturbative upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedTop {
    pub lambda: f64,
    /// `β²/(1 − 2β‖V‖∞/gap) · π(V (−ℒ)^{−1} V)`, when `2β‖V‖∞ < gap`.
    pub bound: Option<f64>,
    pub variance: f64,
    pub gap: f64,
    pub sup_norm: f64,
    /// Scale of rounding errors in `lambda`.
    pub tolerance: f64,
}

pub fn perturbed_supspec(op: &SectorOperator, v: &[f64], beta: f64) -> Result<PerturbedTop> {
    check_centred(op, v)?;
    let sup_norm = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gap = spectral_gap(op)?.gap;
    let variance = if sup_norm == 0.0 { 0.0 } else { h_minus_one(op, v)? };
    let scale = op.out_rate.iter().fold(0.0f64, |m, &x| m.max(x)) * 2.0 + beta.abs() * sup_norm;
    let tolerance = 64.0 * f64::EPSILON * scale.max(1.0);
    let lambda = if op.len() <= DENSE_EIGEN_MAX {
        let mut m = op.dense_neg_sym();
        for i in 0..op.len() {
            m[(i, i)] -= beta * v[i];
        }
        -m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        let est = lanczos_lowest(
            |x: &[f64], y: &mut [f64]| {
                op.apply_neg_sym(x, y);
                for i in 0..x.len() {
                    y[i] -= beta * v[i] * x[i];
                }
            },
            op.len(),
            &[],
            1e-10,
            op.len().min(3000),
            0x5eed,
        )?;
        -est.value
    };
    let ratio = 2.0 * beta.abs() * sup_norm / gap;
    let bound = (ratio < 1.0).then(|| beta * beta / (1.0 - ratio) * variance);
    Ok(PerturbedTop {
        lambda,
        bound,
        variance,
        gap,
        sup_norm,
        tolerance,
    })
}

/// Largest relative mismatch between the sorted spectra of `Q` and of its
/// symmetrization (dense, small sectors only).
pub fn symmetrization_mismatch(op: &SectorOperator) -> Result<f64> {
    if op.len() > 500 {
        return Err(Error::CapExceeded {
            what: "dense non-symmetric eigensolve (states)",
            needed: op.len(),
            cap: 500,
        });
    }
    let mut a: Vec<f64> = op
        .dense_generator()
        .complex_eigenvalues()
        .iter()
        .map(|z| -z.re)
        .collect();
    let mut b: Vec<f64> = op.dense_neg_sym().symmetric_eigenvalues().iter().copied().collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let scale = b.last().copied().unwrap_or(1.0).max(1.0);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max))
}

/// Worst constant `C` in `ν((∇_{x,y} f)²) ≤ C |γ| Σ_{b∈γ} ν(c_b (∇_b f)²)`
/// over all `f` on the sector, for the straight path `γ` of bonds between
/// sites `x < y` of an open segment.
pub fn moving_particles_constant(op: &SectorOperator, family: &RateFamily<f64>, x: usize, y: usize) -> Result<f64> {
    if op.region.dim() != 1 || x >= y || y >= op.region.len() {
        return Err(Error::InvalidArgument("need x < y on an open segment".into()));
    }
    if op.len() > 2000 {
        return Err(Error::CapExceeded {
            what: "moving particles quadratic forms (states)",
            needed: op.len(),
            cap: 2000,
        });
    }
    let n = op.len();
    let swap_form = |b: &Bond, weighted: bool| -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mask = op.states[i];
            let (sx, sy) = ((mask >> b.x & 1) as u8, (mask >> b.y & 1) as u8);
            if sx == sy {
                continue;
            }
            let j = op.rank(mask ^ (1 << b.x) ^ (1 << b.y));
            let c = if weighted {
                family.rate(b.axis, op.alphas[b.x], sx, op.alphas[b.y], sy)
            } else {
                1.0
            };
            let w = op.pi[i] * c;
            m[(i, i)] += w;
            m[(j, j)] += w;
            m[(i, j)] -= w;
            m[(j, i)] -= w;
        }
        m
    };
    let a = swap_form(&Bond { x, y, axis: 0 }, false);
    let mut b = DMatrix::zeros(n, n);
    for z in x..y {
        b += swap_form(&Bond { x: z, y: z + 1, axis: 0 }, true);
    }
    let len = (y - x) as f64;
    let eig = SymmetricEigen::new(b);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-12 * top).collect();
    if keep.is_empty() {
        return Ok(0.0);
    }
    let w = DMatrix::from_fn(n, keep.len(), |r, c| {
        eig.eigenvectors[(r, keep[c])] / eig.eigenvalues[keep[c]].sqrt()
    });
    let m = w.transpose() * a * &w;
    let worst = m.symmetric_eigenvalues().iter().fold(0.0f64, |acc, &v| acc.max(v));
    Ok(worst / len)
}

/// Shape of the regions in a gap-scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionShape {
    /// Open segment of `ℓ` sites.
    Segment,
    /// Open `ℓ × ℓ` square.
    Square,
}

impl RegionShape {
    pub fn region(self, ell: usize) -> Result<Region> {
        match self {
            RegionShape::Segment => Region::open_box(&[ell]),
            RegionShape::Square => Region::open_box(&[ell, ell]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub ell: usize,
    pub sample: usize,
    pub particles: usize,
    pub gap: f64,
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScaling {
    pub rows: Vec<GapRow>,
    /// `(ℓ, min over samples and sectors of gap·ℓ²)`.
    pub minima: Vec<(usize, f64)>,
}

impl GapScaling {
    /// Largest over smallest of the per-`ℓ` minima.
    pub fn spread(&self) -> f64 {
        let lo = self.minima.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
        let hi = self.minima.iter().map(|m| m.1).fold(0.0, f64::max);
        hi / lo
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["ell", "disorder_sample", "particles", "gap", "gap_ell2"])?;
        for r in &self.rows {
            wr.write_record([
                r.ell.to_string(),
                r.sample.to_string(),
                r.particles.to_string(),
                format!("{:e}", r.gap),
                format!("{:e}", r.scaled),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Gaps on every nontrivial sector for `samples` disorder draws per side
/// length. Disorder at site `i` of sample `k` is keyed on `(seed, k, i)`.
pub fn gap_scaling(
    law: &DisorderLaw,
    family: &RateFamily<f64>,
    shape: RegionShape,
    ells: &[usize],
    samples: usize,
    seed: u64,
) -> Result<GapScaling> {
    law.validate()?;
    let mut rows = Vec::new();
    let mut minima = Vec::new();
    for &ell in ells {
        let region = shape.region(ell)?;
        let len = region.len();
        let jobs: Vec<(usize, usize)> = (0..samples)
            .flat_map(|k| (1..len).map(move |n| (k, n)))
            .collect();
        let found: Vec<Result<GapRow>> = jobs
            .par_iter()
            .map(|&(k, n)| {
                let alphas: Vec<f64> = (0..len)
                    .map(|i| law.sample_keyed(seed, ((k as u64) << 32) | i as u64))
                    .collect();
                let op = SectorOperator::build(&region, &alphas, family, n)?;
                let gap = spectral_gap(&op)?.gap;
                Ok(GapRow {
                    ell,
                    sample: k,
                    particles: n,
                    gap,
                    scaled: gap * (ell * ell) as f64,
                })
            })
            .collect();
        let found = found.into_iter().collect::<Result<Vec<_>>>()?;
        let min = found.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
        minima.push((ell, min));
        rows.extend(found);
    }
    Ok(GapScaling { rows, minima })
}

/// `Σ_N ν_N-weight · ⟨f, (−ℒ_N)^{−1} g⟩` under the product measure with
/// chemical potential `lambda`: the resolvent pairing summed over all
/// canonical sectors of `region`.
pub fn grand_resolvent_form<F, G>(
    region: &Region,
    alphas: &[f64],
    family: &RateFamily<f64>,
    lambda: f64,
    f: F,
    g: G,
) -> Result<f64>
where
    F: Fn(&[u8]) -> f64 + Sync,
    G: Fn(&[u8]) -> f64 + Sync,
{
    let len = region.len();
    let ln_z_n = ln_partition_all(alphas);
    let ln_w: Vec<f64> = ln_z_n.iter().enumerate().map(|(n, z)| z + lambda * n as f64).collect();
    let top = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = ln_w.iter().map(|v| (v - top).exp()).sum();
    let parts: Vec<Result<f64>> = (1..len)
        .into_par_iter()
        .map(|n| {
            let weight = (ln_w[n] - top).exp() / norm;
            let op = SectorOperator::build(region, alphas, family, n)?;
            let fv = op.evaluate(&f);
            let gv = op.evaluate(&g);
            Ok(weight * resolvent_form(&op, &fv, &gv)?)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Inputs of the finite-volume pairing between the current and the
/// fluctuation-corrected block gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VjConfig {
    pub d: usize,
    pub ell: usize,
    pub n: usize,
    pub m: f64,
    /// Axis of the block gradient.
    pub e: usize,
    /// Axis of the current.
    pub e_prime: usize,
    pub law: DisorderLaw,
    pub family: RateFamily<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Mirror the block pair along `e`.
    #[serde(default)]
    pub reflect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VjResult {
    /// Disorder average of `(2ℓ)^{−d} μ(Σ τ_x j, (−ℒ)^{−1} Σ τ_x ψ/n)`.
    pub value: f64,
    pub stderr: f64,
    /// The same pairing divided by the number of translates instead.
    pub per_translate: f64,
    /// Translates run over `|x|∞ ≤ ell1`.
    pub ell1: usize,
    pub chi: f64,
}

/// The pairing on the cube `{−ℓ..ℓ}^d` with translates `|x|∞ ≤ ℓ − n`, the
/// largest range keeping every translate of the block pair inside the cube.
pub fn vj_diagnostic(cfg: &VjConfig) -> Result<VjResult> {
    let d = cfg.d;
    if cfg.e >= d || cfg.e_prime >= d || cfg.ell < cfg.n {
        return Err(Error::InvalidArgument("need axes below d and ell >= n".into()));
    }
    let side = 2 * cfg.ell + 1;
    let region = Region::open_box(&vec![side; d])?;
    if region.len() > 30 {
        return Err(Error::CapExceeded {
            what: "resolvent pairing region (sites)",
            needed: region.len(),
            cap: 30,
        });
    }
    let mut window = PairedWindow::new(d, cfg.n, cfg.n, cfg.e)?;
    if cfg.reflect {
        window = window.reflected();
    }
    let ell1 = cfg.ell - cfg.n;
    let origin = vec![cfg.ell as i64; d];
    let translates: Vec<Vec<i64>> = crate::lattice::cube_offsets(d, ell1).collect();
    let locate = |c: Vec<i64>| region.find(&c).expect("translate inside region");
    // sites of each translated window and current bonds, in local indices
    let windows: Vec<Vec<usize>> = translates
        .iter()
        .map(|t| {
            window
                .offsets
                .iter()
                .map(|o| locate((0..d).map(|i| origin[i] + t[i] + o[i]).collect()))
                .collect()
        })
        .collect();
    let bonds: Vec<Bond> = translates
        .iter()
        .map(|t| {
            let x: Vec<i64> = (0..d).map(|i| origin[i] + t[i]).collect();
            let mut y = x.clone();
            y[cfg.e_prime] += 1;
            Bond {
                x: locate(x),
                y: locate(y),
                axis: cfg.e_prime,
            }
        })
        .collect();
    let lambda = annealed_lambda(&cfg.law, cfg.m)?;
    let chi = compressibility(&cfg.law, cfg.m)?;
    let norm = (2.0 * cfg.ell as f64).powi(d as i32);
    let mut values = Vec::with_capacity(cfg.samples);
    for k in 0..cfg.samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let alphas: Vec<f64> = (0..region.len()).map(|_| cfg.law.sample(&mut rng)).collect();
        let tables: Vec<Vec<f64>> = windows
            .iter()
            .map(|w| window.phi_table(&w.iter().map(|&s| alphas[s]).collect::<Vec<_>>()))
            .collect();
        let psi_sum = |eta: &[u8]| -> f64 {
            let mut total = 0.0;
            for (w, table) in windows.iter().zip(&tables) {
                let local: Vec<u8> = w.iter().map(|&s| eta[s]).collect();
                let count = local.iter().map(|&v| v as usize).sum::<usize>();
                total += window.difference(&local) - table[count];
            }
            total / cfg.n as f64
        };
        let current_sum = |eta: &[u8]| -> f64 {
            bonds
                .iter()
                .map(|b| crate::dynamics::current(eta, &alphas, &cfg.family, b))
                .sum()
        };
        let v = grand_resolvent_form(&region, &alphas, &cfg.family, lambda, current_sum, psi_sum)?;
        values.push(v / norm);
    }
    let ns = values.len() as f64;
    let value = values.iter().sum::<f64>() / ns;
    let stderr = if values.len() > 1 {
        (values.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (ns - 1.0) / ns).sqrt()
    } else {
        0.0
    };
    Ok(VjResult {
        value,
        stderr,
        per_translate: value * norm / translates.len() as f64,
        ell1,
        chi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn segment(n: usize) -> Region {
        Region::open_box(&[n]).unwrap()
    }

    #[test]
    fn sector_sizes_and_ranking() {
        let fam = RateFamily::Metropolis;
        let op = SectorOperator::build(&segment(2), &[0.0, 0.0], &fam, 1).unwrap();
        assert_eq!(op.len(), 2);
        let op = SectorOperator::build(&segment(4), &[0.1, 0.2, 0.3, 0.4], &fam, 2).unwrap();
        assert_eq!(op.len(), 6);
        for i in 0..op.len() {
            assert_eq!(op.rank(op.state(i)), i);
        }
        assert!(op.row_sum_defect() < 1e-15);
        assert!(op.reversibility_defect() < 1e-12);
        let err = SectorOperator::build_with_cap(&segment(20), &[0.0; 20], &fam, 10, 1000).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { .. }));
    }

    #[test]
    fn two_state_gap() {
        let op = SectorOperator::build(&segment(2), &[1.0, 0.0], &RateFamily::Metropolis, 1).unwrap();
        let gap = spectral_gap(&op).unwrap().gap;
        assert!((gap - ((-1f64).exp() + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn three_site_segment_gaps() {
        let fam = RateFamily::Metropolis;
        let a = [0.3; 3];
        let g1 = spectral_gap(&SectorOperator::build(&segment(3), &a, &fam, 1).unwrap()).unwrap().gap;
        let g2 = spectral_gap(&SectorOperator::build(&segment(3), &a, &fam, 2).unwrap()).unwrap().gap;
        assert!((g1 - 1.0).abs() < 1e-14);
        assert!((g2 - g1).abs() < 1e-14);
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = SectorOperator::build(&segment(12), &a, &RateFamily::RandomTrap, 6).unwrap();
        let dense = spectral_gap(&op).unwrap().gap;
        let est = lanczos_lowest(|x, y| op.apply_neg_sym(x, y), op.len(), &[op.sqrt_pi()], 1e-10, 924, 1).unwrap();
        assert!((dense - est.value).abs() < 1e-9 * dense);
    }

    #[test]
    fn dirichlet_form_matches_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = SectorOperator::build(&segment(6), &a, &RateFamily::LongJump, 3).unwrap();
        assert_eq!(dirichlet_form(&op, &vec![2.5; op.len()]), 0.0);
        let f: Vec<f64> = (0..op.len()).map(|_| rng.random::<f64>()).collect();
        let mut lf = vec![0.0; op.len()];
        op.apply_generator(&f, &mut lf);
        let minus_lf: Vec<f64> = lf.iter().map(|v| -v).collect();
        let q = op.inner(&f, &minus_lf);
        assert!((dirichlet_form(&op, &f) - q).abs() < 1e-10 * q);
    }

    #[test]
    fn dirichlet_form_two_states() {
        let op = SectorOperator::build(&segment(2), &[0.5, -0.5], &RateFamily::Metropolis, 1).unwrap();
        // states: particle at 0 (rank 0), particle at 1 (rank 1)
        let pi0 = op.pi()[0];
        let q01 = (-1.0f64).exp();
        assert!((dirichlet_form(&op, &[1.0, 0.0]) - pi0 * q01).abs() < 1e-15);
    }

    #[test]
    fn resolvent_against_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = SectorOperator::build(&segment(4), &a, &RateFamily::Metropolis, 2).unwrap();
        let mut g: Vec<f64> = (0..op.len()).map(|_| rng.random::<f64>()).collect();
        let mean = op.mean(&g);
        g.iter_mut().for_each(|v| *v -= mean);
        let v = h_minus_one(&op, &g).unwrap();
        // dense: −Q restricted, solved with the pseudo-inverse of the symmetrized form
        let s = op.dense_neg_sym();
        let pinv = s.pseudo_inverse(1e-12).unwrap();
        let rhs = nalgebra::DVector::from_iterator(op.len(), g.iter().zip(op.sqrt_pi()).map(|(x, p)| x * p));
        let exact = rhs.dot(&(pinv * &rhs));
        assert!((v - exact).abs() < 1e-9 * exact.abs());
        assert_eq!(h_minus_one(&op, &vec![0.0; op.len()]).unwrap(), 0.0);
    }

    #[test]
    fn variational_characterization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = SectorOperator::build(&segment(6), &a, &RateFamily::RandomTrap, 2).unwrap();
        let mut g: Vec<f64> = (0..op.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let mean = op.mean(&g);
        g.iter_mut().for_each(|v| *v -= mean);
        let v = h_minus_one(&op, &g).unwrap();
        let functional = |h: &[f64]| 2.0 * op.inner(&g, h) - dirichlet_form(&op, h);
        for _ in 0..200 {
            let h: Vec<f64> = (0..op.len()).map(|_| rng.random::<f64>() - 0.5).collect();
            assert!(functional(&h) <= v + 1e-12);
        }
        let best = solve_poisson(&op, &g).unwrap();
        assert!((functional(&best) - v).abs() < 1e-9 * v);
    }

    #[test]
    fn perturbation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = SectorOperator::build(&segment(6), &a, &RateFamily::Metropolis, 3).unwrap();
        let zero = perturbed_supspec(&op, &vec![0.0; op.len()], 0.3).unwrap();
        assert!(zero.lambda.abs() <= zero.tolerance);
        assert_eq!(zero.bound, Some(0.0));
        let mut v: Vec<f64> = (0..op.len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let mean = op.mean(&v);
        v.iter_mut().for_each(|x| *x -= mean);
        let small = perturbed_supspec(&op, &v, 1e-3).unwrap();
        assert!((small.lambda / 1e-6 / small.variance - 1.0).abs() < 0.01);
        let p = perturbed_supspec(&op, &v, 0.05).unwrap();
        assert!(p.lambda >= -p.tolerance && p.lambda <= p.bound.unwrap());
    }

    #[test]
    fn symmetrization_preserves_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let op = SectorOperator::build(&segment(8), &a, &RateFamily::RandomTrap, 3).unwrap();
        assert!(symmetrization_mismatch(&op).unwrap() < 1e-9);
    }

    #[test]
    fn moving_particles_constant_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for fam in [RateFamily::RandomTrap, RateFamily::Metropolis, RateFamily::LongJump] {
            let (lo, hi) = fam.bounds(1.0, 101);
            let a: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let op = SectorOperator::build(&segment(7), &a, &fam, 3).unwrap();
            for y in 1..7 {
                let c = moving_particles_constant(&op, &fam, 0, y).unwrap();
                assert!(c > 0.0 && c <= 4.0 * hi / lo, "{} {y}: {c}", fam.name());
            }
        }
    }

    #[test]
    fn gap_scaling_small() {
        let st = gap_scaling(&DisorderLaw::uniform(1.0), &RateFamily::Metropolis, RegionShape::Segment, &[2, 3, 4], 3, 1).unwrap();
        assert_eq!(st.rows.len(), 3 * (1 + 2 + 3));
        assert!(st.minima.iter().all(|m| m.1 > 0.0));
        let mut buf = Vec::new();
        st.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("ell,disorder_sample,particles,gap,gap_ell2\n"));
    }

    #[test]
    fn vj_reflection_antisymmetry() {
        let base = VjConfig {
            d: 1,
            ell: 3,
            n: 1,
            m: 0.4,
            e: 0,
            e_prime: 0,
            law: DisorderLaw::constant(0.0),
            family: RateFamily::Metropolis,
            samples: 1,
            seed: 1,
            reflect: false,
        };
        let v = vj_diagnostic(&base).unwrap();
        assert!(v.value < 0.0);
        let disordered = VjConfig { law: DisorderLaw::uniform(1.0), n: 3, ..base.clone() };
        let a = vj_diagnostic(&disordered).unwrap();
        let b = vj_diagnostic(&VjConfig { reflect: true, ..disordered }).unwrap();
        assert!((a.value + b.value).abs() < 1e-12 * a.value.abs());
        let d2 = VjConfig { d: 2, ell: 1, n: 1, e: 0, e_prime: 1, ..base.clone() };
        let diag = vj_diagnostic(&VjConfig { e_prime: 0, ..d2.clone() }).unwrap();
        let off = vj_diagnostic(&d2).unwrap();
        assert!(diag.value.is_finite() && off.value.is_finite());
    }
}
