//! Block densities, the split of a block-density gradient into a part with
//! zero canonical mean and a disorder-driven conditional expectation, and the
//! long-jump observables with their integration-by-parts identity.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderField, DisorderLaw};
use crate::error::{Error, Result};
use crate::gibbs::{annealed_lambda, occupation_prob, CanonicalSpec};
use crate::lattice::{cube_offsets, TorusGeometry};
use crate::numerics::ls_slope;
use crate::partition::{canonical_marginals, count_distribution};

/// Largest window handled by the exact conditional expectation.
pub const PHI_EXACT_CAP: usize = 4096;

/// Mean occupation over `sites`.
pub fn block_density(eta: &[u8], sites: &[usize]) -> f64 {
    if sites.is_empty() {
        return 0.0;
    }
    sites.iter().map(|&x| eta[x] as f64).sum::<f64>() / sites.len() as f64
}

/// Density in the cube of radius `radius` around `center`.
pub fn box_density(eta: &[u8], geom: &TorusGeometry, center: usize, radius: usize) -> Result<f64> {
    Ok(block_density(eta, &geom.box_sites(center, radius)?))
}

/// Offsets of the two adjacent cubes of odd side `n` on either side of the
/// hyperplane through the origin orthogonal to `axis`: the first cube is
/// centred at `-(r+1)e`, the second at `re`, with `r = (n-1)/2`.
pub fn paired_offsets(d: usize, n: usize, axis: usize) -> (Vec<Vec<i64>>, Vec<Vec<i64>>) {
    let r = (n - 1) / 2;
    let shift = |c: i64| -> Vec<Vec<i64>> {
        cube_offsets(d, r)
            .map(|mut o| {
                o[axis] += c;
                o
            })
            .collect()
    };
    (shift(-(r as i64 + 1)), shift(r as i64))
}

/// The window `Λ_s^e` (two cubes of side `s`) with the positions of the two
/// inner cubes of side `n` inside it. Offsets are relative to the centre.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedWindow {
    pub d: usize,
    pub n: usize,
    pub s: usize,
    pub axis: usize,
    pub offsets: Vec<Vec<i64>>,
    pub inner1: Vec<usize>,
    pub inner2: Vec<usize>,
}

impl PairedWindow {
    pub fn new(d: usize, n: usize, s: usize, axis: usize) -> Result<Self> {
        if n == 0 || n % 2 == 0 || s % 2 == 0 || n > s {
            return Err(Error::InvalidArgument(format!(
                "block scales must be odd with n <= s, got n={n}, s={s}"
            )));
        }
        if d == 0 || d > 3 || axis >= d {
            return Err(Error::InvalidArgument(format!("bad dimension {d} or axis {axis}")));
        }
        let (o1, o2) = paired_offsets(d, s, axis);
        let offsets: Vec<Vec<i64>> = o1.into_iter().chain(o2).collect();
        if offsets.len() > PHI_EXACT_CAP {
            return Err(Error::CapExceeded {
                what: "conditional expectation window (sites)",
                needed: offsets.len(),
                cap: PHI_EXACT_CAP,
            });
        }
        let (i1, i2) = paired_offsets(d, n, axis);
        let locate = |set: &[Vec<i64>]| -> Vec<usize> {
            set.iter()
                .map(|o| offsets.iter().position(|p| p == o).expect("inner cube inside window"))
                .collect()
        };
        Ok(Self {
            d,
            n,
            s,
            axis,
            inner1: locate(&i1),
            inner2: locate(&i2),
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// The mirror image through the hyperplane between the two cubes: the
    /// same sites with the roles of the inner cubes exchanged.
    pub fn reflected(&self) -> Self {
        let mut w = self.clone();
        std::mem::swap(&mut w.inner1, &mut w.inner2);
        w
    }

    /// Torus sites of the window centred at `center`.
    pub fn on_torus(&self, geom: &TorusGeometry, center: usize) -> Result<Vec<usize>> {
        if geom.dim() != self.d {
            return Err(Error::Geometry("window dimension differs from torus".into()));
        }
        for (i, &len) in geom.dims().iter().enumerate() {
            let need = if i == self.axis { 2 * self.s } else { self.s };
            if need > len {
                return Err(Error::Geometry(format!(
                    "window of scale {} does not fit axis {i} of length {len}",
                    self.s
                )));
            }
        }
        Ok(self.offsets.iter().map(|o| geom.shift(center, o)).collect())
    }

    /// `m_n^2 - m_n^1` for occupations listed in window order.
    pub fn difference(&self, eta: &[u8]) -> f64 {
        block_density(eta, &self.inner2) - block_density(eta, &self.inner1)
    }

    /// Conditional expectation of `m_n^2 - m_n^1` given `k` particles in the
    /// window, for `k = 0..=len`. It does not depend on the chemical
    /// potential.
    pub fn phi_table(&self, alphas: &[f64]) -> Vec<f64> {
        assert_eq!(alphas.len(), self.len());
        (0..=self.len())
            .map(|k| {
                let marg = canonical_marginals(alphas, k);
                block_density_weighted(&marg, &self.inner2) - block_density_weighted(&marg, &self.inner1)
            })
            .collect()
    }
}

fn block_density_weighted(p: &[f64], sites: &[usize]) -> f64 {
    sites.iter().map(|&x| p[x]).sum::<f64>() / sites.len() as f64
}

/// `ψ + φ = m_n^2 − m_n^1` with `φ` the conditional expectation given the
/// window count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiPhi {
    pub n: usize,
    pub s: usize,
    pub axis: usize,
    pub difference: f64,
    pub phi: f64,
    pub psi: f64,
}

/// Decomposition for occupations and disorder listed in window order.
pub fn psi_phi_local(window: &PairedWindow, alphas: &[f64], eta: &[u8]) -> PsiPhi {
    let k = eta.iter().map(|&v| v as usize).sum::<usize>();
    let difference = window.difference(eta);
    let marg = canonical_marginals(alphas, k);
    let phi = block_density_weighted(&marg, &window.inner2) - block_density_weighted(&marg, &window.inner1);
    PsiPhi {
        n: window.n,
        s: window.s,
        axis: window.axis,
        difference,
        phi,
        psi: difference - phi,
    }
}

/// Decomposition on a torus configuration with the window centred at `center`.
pub fn psi_phi(
    eta: &[u8],
    geom: &TorusGeometry,
    field: &DisorderField,
    center: usize,
    n: usize,
    s: usize,
    axis: usize,
) -> Result<PsiPhi> {
    let window = PairedWindow::new(geom.dim(), n, s, axis)?;
    let sites = window.on_torus(geom, center)?;
    let a = field.restrict(&sites);
    let e: Vec<u8> = sites.iter().map(|&x| eta[x]).collect();
    Ok(psi_phi_local(&window, &a, &e))
}

/// Disorder-averaged moments of `φ_{n,s}` at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiStatsRow {
    pub n: usize,
    pub s: usize,
    pub samples: usize,
    pub mean: f64,
    pub mean_stderr: f64,
    pub second_moment: f64,
    pub second_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiStatistics {
    pub rows: Vec<PhiStatsRow>,
    /// Least-squares slope of `ln E[φ²]` against `ln n`, when defined.
    pub slope: Option<f64>,
}

/// How the conditioning scale follows the block scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterScale {
    /// `s = n`.
    Equal,
    /// `s = max(n, value)`.
    AtLeast(usize),
}

/// Mean and second moment of `φ_{n,s}` under the annealed measure
/// `E[μ^{λ₀(m)}(·)]`. The occupation average is exact for every disorder
/// sample (through the law of the window count); the disorder average is
/// Monte Carlo over `samples` draws.
pub fn phi_statistics(
    law: &DisorderLaw,
    m: f64,
    d: usize,
    ns: &[usize],
    outer: OuterScale,
    samples: usize,
    seed: u64,
) -> Result<PhiStatistics> {
    law.validate()?;
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two disorder samples".into()));
    }
    let lambda = annealed_lambda(law, m)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let s = match outer {
            OuterScale::Equal => n,
            OuterScale::AtLeast(v) => n.max(v),
        };
        let window = PairedWindow::new(d, n, s, 0)?;
        let per_sample: Vec<(f64, f64)> = (0..samples)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((n as u64) << 32) | k as u64);
                let alphas: Vec<f64> = (0..window.len()).map(|_| law.sample(&mut rng)).collect();
                let table = window.phi_table(&alphas);
                let probs: Vec<f64> = alphas.iter().map(|&a| occupation_prob(a, lambda)).collect();
                let dist = count_distribution(&probs);
                let mean: f64 = dist.iter().zip(&table).map(|(p, f)| p * f).sum();
                let second: f64 = dist.iter().zip(&table).map(|(p, f)| p * f * f).sum();
                (mean, second)
            })
            .collect();
        let (m1, se1) = mean_stderr(per_sample.iter().map(|v| v.0));
        let (m2, se2) = mean_stderr(per_sample.iter().map(|v| v.1));
        rows.push(PhiStatsRow {
            n,
            s,
            samples,
            mean: m1,
            mean_stderr: se1,
            second_moment: m2,
            second_stderr: se2,
        });
    }
    let usable: Vec<&PhiStatsRow> = rows.iter().filter(|r| r.second_moment > 0.0).collect();
    let slope = (usable.len() >= 2 && usable.len() == rows.len()).then(|| {
        let xs: Vec<f64> = usable.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = usable.iter().map(|r| r.second_moment.ln()).collect();
        ls_slope(&xs, &ys)
    });
    Ok(PhiStatistics { rows, slope })
}

fn mean_stderr<I: Iterator<Item = f64> + Clone>(it: I) -> (f64, f64) {
    let n = it.clone().count() as f64;
    let mean = it.clone().sum::<f64>() / n;
    let var = it.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl PhiStatistics {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["n", "s", "samples", "mean_phi", "mean_stderr", "second_moment_phi", "second_stderr"])?;
        for r in &self.rows {
            wr.write_record([
                r.n.to_string(),
                r.s.to_string(),
                r.samples.to_string(),
                format!("{:e}", r.mean),
                format!("{:e}", r.mean_stderr),
                format!("{:e}", r.second_moment),
                format!("{:e}", r.second_stderr),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `w_{x,y} = (1 + e^{-(α_x−α_y)(η_x−η_y)})(η_y − η_x)`.
pub fn long_jump_w(eta: &[u8], alphas: &[f64], x: usize, y: usize) -> f64 {
    let ds = eta[x] as f64 - eta[y] as f64;
    (1.0 + (-(alphas[x] - alphas[y]) * ds).exp()) * -ds
}

/// Average of `w_{x,y}` over `x` in `first` and `y` in `second`.
pub fn long_jump_average(eta: &[u8], alphas: &[f64], first: &[usize], second: &[usize]) -> f64 {
    let mut total = 0.0;
    for &x in first {
        for &y in second {
            total += long_jump_w(eta, alphas, x, y);
        }
    }
    total / (first.len() * second.len()) as f64
}

/// `W_n^e` on a torus for the paired cubes of side `n` around `center`.
pub fn long_jump_big_w(
    eta: &[u8],
    geom: &TorusGeometry,
    field: &DisorderField,
    center: usize,
    n: usize,
    axis: usize,
) -> Result<f64> {
    let (b1, b2) = geom.paired_boxes(center, n, axis)?;
    Ok(long_jump_average(eta, &field.values, &b1.sites, &b2.sites))
}

/// `|ν(w_{x,y} g) − ν((η_x − η_y)∇_{x,y} g)|` under the canonical measure
/// with `n` particles on a region with disorder `alphas`, by enumeration.
pub fn ibp_check<G: Fn(&[u8]) -> f64>(alphas: &[f64], n: usize, x: usize, y: usize, g: G) -> Result<f64> {
    let spec = CanonicalSpec {
        alphas: alphas.to_vec(),
        n,
    };
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut swapped = Vec::with_capacity(alphas.len());
    for (eta, p) in spec.enumerate()? {
        let gv = g(&eta);
        lhs += p * long_jump_w(&eta, alphas, x, y) * gv;
        swapped.clear();
        swapped.extend_from_slice(&eta);
        swapped.swap(x, y);
        rhs += p * (eta[x] as f64 - eta[y] as f64) * (g(&swapped) - gv);
    }
    Ok((lhs - rhs).abs())
}
