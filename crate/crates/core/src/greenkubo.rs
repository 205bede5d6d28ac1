//! Truncated variational formula for the diffusion matrix:
//!
//! `(a, D a) = (1/2χ) inf_g Σ_e E μ^{λ₀}[c_{0,e}(a_e(η_e − η_0) + ∇_{0,e} Σ_x τ_x g)²]`
//!
//! with `g` restricted to tables over a finite support and a finite disorder
//! alphabet. For fixed support the objective is a quadratic
//! `c(a) + 2 b(a)·θ + θᵀAθ` in the table coefficients `θ`, where `A` does not
//! depend on `a` and `b`, `c` are linear and quadratic in `a`. The disorder
//! average is a Monte Carlo mean over i.i.d. windows; the occupation average
//! is exact (enumeration) or sampled.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderLaw;
use crate::dynamics::RateFamily;
use crate::error::{Error, Result};
use crate::gibbs::{annealed_lambda, compressibility, occupation_prob, DENSITY_CLAMP};
use crate::lattice::cube_offsets;
use crate::numerics::MonotoneCubic;

/// Largest window enumerated exactly.
pub const EXACT_WINDOW_CAP: usize = 22;
/// Largest number of table coefficients.
pub const COEFFICIENT_CAP: usize = 1024;
/// Relative eigenvalue cutoff of the pseudo-inverse.
pub const PINV_RTOL: f64 = 1e-11;
/// Most jackknife blocks.
pub const MAX_JACKKNIFE_BLOCKS: usize = 20;

/// Support `Δ_g` of the local functions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportSpec {
    /// `g = 0`.
    Empty,
    /// The cube `{|x|∞ ≤ radius}`.
    Cube { radius: usize },
    /// The origin and the positive unit vectors.
    Star,
    Offsets { offsets: Vec<Vec<i64>> },
}

impl SupportSpec {
    pub fn offsets(&self, d: usize) -> Vec<Vec<i64>> {
        match self {
            SupportSpec::Empty => Vec::new(),
            SupportSpec::Cube { radius } => cube_offsets(d, *radius).collect(),
            SupportSpec::Star => {
                let mut v = vec![vec![0; d]];
                for i in 0..d {
                    let mut e = vec![0; d];
                    e[i] = 1;
                    v.push(e);
                }
                v
            }
            SupportSpec::Offsets { offsets } => offsets.clone(),
        }
    }

    /// Label used in tables (`-1` for the empty support, the radius for cubes).
    pub fn label(&self) -> i64 {
        match self {
            SupportSpec::Empty => -1,
            SupportSpec::Cube { radius } => *radius as i64,
            SupportSpec::Star => 100,
            SupportSpec::Offsets { .. } => 200,
        }
    }
}

/// A function of the disorder symbols and occupations on `offsets`, stored as
/// a table indexed by `symbol_index · 2^|Δ| + occupation_bits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFunctionTable {
    pub offsets: Vec<Vec<i64>>,
    pub alphabet: usize,
    pub coefficients: Vec<f64>,
}

impl LocalFunctionTable {
    pub fn zeros(offsets: Vec<Vec<i64>>, alphabet: usize) -> Self {
        let size = table_size(offsets.len(), alphabet);
        Self {
            offsets,
            alphabet,
            coefficients: vec![0.0; size],
        }
    }

    #[inline]
    pub fn index(&self, symbols: impl Iterator<Item = usize>, occupations: impl Iterator<Item = u8>) -> usize {
        let mut s = 0;
        for (i, sym) in symbols.enumerate() {
            s += sym * self.alphabet.pow(i as u32);
        }
        let mut o = 0;
        for (i, v) in occupations.enumerate() {
            o |= (v as usize) << i;
        }
        (s << self.offsets.len()) | o
    }
}

fn table_size(support: usize, alphabet: usize) -> usize {
    if support == 0 {
        0
    } else {
        alphabet.pow(support as u32) << support
    }
}

/// How the occupation expectation is taken for each disorder window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EtaMode {
    Exact,
    /// `samples` product-measure draws per window; the `g = 0` term is
    /// always exact and serves as control variate.
    Sampled { samples: usize },
}

/// Source of disorder windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisorderSampling {
    /// Independent windows; site values keyed by `(seed, sample, offset)`.
    Iid,
    /// Windows read at distinct translates of one periodic field of the given
    /// side.
    Translates { side: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenKuboConfig {
    pub d: usize,
    pub law: DisorderLaw,
    pub family: RateFamily<f64>,
    pub support: SupportSpec,
    /// Cells used to bin continuous laws.
    #[serde(default = "default_bins")]
    pub bins: usize,
    pub n_dis: usize,
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: EtaMode,
    #[serde(default = "default_sampling")]
    pub sampling: DisorderSampling,
}

fn default_bins() -> usize {
    5
}

fn default_mode() -> EtaMode {
    EtaMode::Exact
}

fn default_sampling() -> DisorderSampling {
    DisorderSampling::Iid
}

/// Window geometry: the sites reached by every translate of the support that
/// meets a bond `{0, e}`.
#[derive(Debug, Clone)]
struct Layout {
    d: usize,
    sites: Vec<Vec<i64>>,
    /// Per axis: translates `x` as lists of window indices of `x + Δ`.
    translates: Vec<Vec<Vec<usize>>>,
    origin: usize,
    neighbours: Vec<usize>,
}

impl Layout {
    fn new(d: usize, support: &[Vec<i64>]) -> Self {
        let mut sites: Vec<Vec<i64>> = vec![vec![0; d]];
        let intern = |c: Vec<i64>, sites: &mut Vec<Vec<i64>>| -> usize {
            match sites.iter().position(|s| *s == c) {
                Some(i) => i,
                None => {
                    sites.push(c);
                    sites.len() - 1
                }
            }
        };
        let mut neighbours = Vec::new();
        for axis in 0..d {
            let mut e = vec![0; d];
            e[axis] = 1;
            neighbours.push(intern(e, &mut sites));
        }
        let mut translates = Vec::new();
        for axis in 0..d {
            let mut e = vec![0i64; d];
            e[axis] = 1;
            let mut shifts: Vec<Vec<i64>> = Vec::new();
            for delta in support {
                for target in [vec![0i64; d], e.clone()] {
                    let x: Vec<i64> = target.iter().zip(delta).map(|(t, s)| t - s).collect();
                    if !shifts.contains(&x) {
                        shifts.push(x);
                    }
                }
            }
            shifts.sort();
            let mut per_axis = Vec::new();
            for x in shifts {
                let idx: Vec<usize> = support
                    .iter()
                    .map(|delta| intern(x.iter().zip(delta).map(|(a, b)| a + b).collect(), &mut sites))
                    .collect();
                per_axis.push(idx);
            }
            translates.push(per_axis);
        }
        Self {
            d,
            sites,
            translates,
            origin: 0,
            neighbours,
        }
    }
}

/// Quadratic-form pieces accumulated over disorder windows.
#[derive(Debug, Clone)]
struct Moments {
    /// `A`, dense row-major.
    a: Vec<f64>,
    /// `b_e` per axis.
    b: Vec<Vec<f64>>,
    /// `c_e = E μ(c_{0,e}(η_e − η_0)²)` per axis.
    c: Vec<f64>,
    windows: usize,
}

impl Moments {
    fn zeros(m: usize, d: usize) -> Self {
        Self {
            a: vec![0.0; m * m],
            b: vec![vec![0.0; m]; d],
            c: vec![0.0; d],
            windows: 0,
        }
    }

    fn add(&mut self, o: &Moments) {
        self.a.iter_mut().zip(&o.a).for_each(|(x, y)| *x += y);
        for (bx, by) in self.b.iter_mut().zip(&o.b) {
            bx.iter_mut().zip(by).for_each(|(x, y)| *x += y);
        }
        self.c.iter_mut().zip(&o.c).for_each(|(x, y)| *x += y);
        self.windows += o.windows;
    }

    fn sub(&self, o: &Moments) -> Moments {
        let mut r = self.clone();
        r.a.iter_mut().zip(&o.a).for_each(|(x, y)| *x -= y);
        for (bx, by) in r.b.iter_mut().zip(&o.b) {
            bx.iter_mut().zip(by).for_each(|(x, y)| *x -= y);
        }
        r.c.iter_mut().zip(&o.c).for_each(|(x, y)| *x -= y);
        r.windows -= o.windows;
        r
    }
}

/// Minimizer and values of the truncated problem for one set of windows.
#[derive(Debug, Clone)]
struct Solution {
    /// `θ_e` solving `A θ_e = −b_e`.
    thetas: Vec<Vec<f64>>,
    /// `2χ(a, D a)` as a bilinear form: `M_ij = δ_ij c_i + b_iᵀθ_j`.
    form: Vec<Vec<f64>>,
    g0: Vec<f64>,
}

fn solve(mom: &Moments, d: usize) -> Result<Solution> {
    let n = mom.windows as f64;
    let m = mom.b[0].len();
    let c: Vec<f64> = mom.c.iter().map(|v| v / n).collect();
    let bs: Vec<Vec<f64>> = mom.b.iter().map(|b| b.iter().map(|v| v / n).collect()).collect();
    let mut thetas = Vec::with_capacity(d);
    if m > 0 {
        // b_e lies in the range of A, so the pseudo-inverse gives a minimizer
        let a = DMatrix::from_fn(m, m, |i, j| 0.5 * (mom.a[i * m + j] + mom.a[j * m + i]) / n);
        let eig = SymmetricEigen::new(a);
        let top = eig.eigenvalues.iter().fold(0.0f64, |x, &y| x.max(y.abs()));
        let cut = PINV_RTOL * top;
        for b in &bs {
            let bv = DVector::from_column_slice(b);
            let coords = eig.eigenvectors.tr_mul(&bv);
            let scaled = DVector::from_fn(m, |k, _| {
                let l = eig.eigenvalues[k];
                if l > cut {
                    -coords[k] / l
                } else {
                    0.0
                }
            });
            thetas.push((&eig.eigenvectors * scaled).as_slice().to_vec());
        }
    } else {
        thetas = vec![Vec::new(); d];
    }
    let form = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let cross: f64 = bs[i].iter().zip(&thetas[j]).map(|(p, q)| p * q).sum();
                    if i == j {
                        c[i] + cross
                    } else {
                        cross
                    }
                })
                .collect()
        })
        .collect();
    Ok(Solution { thetas, form, g0: c })
}

/// Disorder values and symbols on a window.
struct Window {
    alphas: Vec<f64>,
    symbols: Vec<usize>,
}

struct Problem<'a> {
    cfg: &'a GreenKuboConfig,
    layout: Layout,
    support_len: usize,
    alphabet: usize,
    table: usize,
    lambda: f64,
}

impl<'a> Problem<'a> {
    fn new(cfg: &'a GreenKuboConfig, m: f64) -> Result<Self> {
        cfg.law.validate()?;
        if cfg.d == 0 || cfg.d > 3 {
            return Err(Error::InvalidArgument(format!("dimension {} out of range", cfg.d)));
        }
        if cfg.n_dis < 2 {
            return Err(Error::InvalidArgument("need at least two disorder samples".into()));
        }
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::InvalidArgument(format!("density {m} outside (0,1)")));
        }
        let support = cfg.support.offsets(cfg.d);
        if support.iter().any(|o| o.len() != cfg.d) {
            return Err(Error::InvalidArgument("support offsets have wrong dimension".into()));
        }
        let alphabet = cfg.law.alphabet_size(cfg.bins);
        let table = table_size(support.len(), alphabet);
        if table > COEFFICIENT_CAP {
            return Err(Error::CapExceeded {
                what: "local function table (coefficients)",
                needed: table,
                cap: COEFFICIENT_CAP,
            });
        }
        let layout = Layout::new(cfg.d, &support);
        if cfg.mode == EtaMode::Exact && layout.sites.len() > EXACT_WINDOW_CAP {
            return Err(Error::CapExceeded {
                what: "exact occupation enumeration window (sites)",
                needed: layout.sites.len(),
                cap: EXACT_WINDOW_CAP,
            });
        }
        Ok(Self {
            cfg,
            support_len: support.len(),
            layout,
            alphabet,
            table,
            lambda: annealed_lambda(&cfg.law, m)?,
        })
    }

    fn window(&self, sample: usize) -> Window {
        let cfg = self.cfg;
        let alphas: Vec<f64> = match cfg.sampling {
            DisorderSampling::Iid => self
                .layout
                .sites
                .iter()
                .map(|c| cfg.law.sample_keyed(cfg.seed, site_key(sample as u64, c)))
                .collect(),
            DisorderSampling::Translates { side } => {
                let base = translate_base(sample, side, cfg.d);
                self.layout
                    .sites
                    .iter()
                    .map(|c| {
                        let wrapped: Vec<i64> = c
                            .iter()
                            .zip(&base)
                            .map(|(x, b)| (x + b).rem_euclid(side as i64))
                            .collect();
                        cfg.law.sample_keyed(cfg.seed, site_key(0, &wrapped))
                    })
                    .collect()
            }
        };
        let symbols = alphas.iter().map(|&a| cfg.law.symbol(a, cfg.bins)).collect();
        Window { alphas, symbols }
    }

    fn coefficient(&self, w: &Window, idx: &[usize], eta: &[u8]) -> usize {
        let mut s = 0;
        let mut o = 0;
        let mut pow = 1;
        for (i, &site) in idx.iter().enumerate() {
            s += w.symbols[site] * pow;
            pow *= self.alphabet;
            o |= (eta[site] as usize) << i;
        }
        (s << self.support_len) | o
    }

    /// `(gradient entries, current weight)` for axis `axis` at `eta`:
    /// `∇_{0,e} Σ τ_x g = Σ_k φ_k θ_k` as a sparse list of `(k, φ_k)`.
    fn gradient(&self, w: &Window, axis: usize, eta: &mut [u8], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (o, e) = (self.layout.origin, self.layout.neighbours[axis]);
        if eta[o] == eta[e] {
            return;
        }
        for idx in &self.layout.translates[axis] {
            let before = self.coefficient(w, idx, eta);
            eta.swap(o, e);
            let after = self.coefficient(w, idx, eta);
            eta.swap(o, e);
            if before != after {
                out.push((after, 1.0));
                out.push((before, -1.0));
            }
        }
    }

    fn accumulate(&self, w: &Window, weight: f64, eta: &mut [u8], mom: &mut Moments, scratch: &mut Vec<(usize, f64)>, with_c: bool) {
        let (o, a) = (self.layout.origin, &w.alphas);
        for axis in 0..self.layout.d {
            let e = self.layout.neighbours[axis];
            if eta[o] == eta[e] {
                continue;
            }
            let rate = self.cfg.family.rate(axis, a[o], eta[o], a[e], eta[e]);
            let u = eta[e] as f64 - eta[o] as f64;
            let cw = weight * rate;
            if with_c {
                mom.c[axis] += cw * u * u;
            }
            if self.table == 0 {
                continue;
            }
            self.gradient(w, axis, eta, scratch);
            for &(k, v) in scratch.iter() {
                mom.b[axis][k] += cw * u * v;
                for &(l, z) in scratch.iter() {
                    mom.a[k * self.table + l] += cw * v * z;
                }
            }
        }
    }

    fn window_moments(&self, sample: usize, mom: &mut Moments) {
        let w = self.window(sample);
        let probs: Vec<f64> = w.alphas.iter().map(|&a| occupation_prob(a, self.lambda)).collect();
        let len = probs.len();
        let mut eta = vec![0u8; len];
        let mut scratch = Vec::new();
        match self.cfg.mode {
            EtaMode::Exact => {
                for mask in 0u64..(1u64 << len) {
                    let mut weight = 1.0;
                    for (i, v) in eta.iter_mut().enumerate() {
                        *v = (mask >> i & 1) as u8;
                        weight *= if *v == 1 { probs[i] } else { 1.0 - probs[i] };
                    }
                    if weight > 0.0 {
                        self.accumulate(&w, weight, &mut eta, mom, &mut scratch, true);
                    }
                }
            }
            EtaMode::Sampled { samples } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
                rng.set_stream(sample as u64);
                let weight = 1.0 / samples as f64;
                for _ in 0..samples {
                    for (v, p) in eta.iter_mut().zip(&probs) {
                        *v = (rng.random::<f64>() < *p) as u8;
                    }
                    self.accumulate(&w, weight, &mut eta, mom, &mut scratch, false);
                }
                // exact g = 0 term over the bond sites only
                let o = self.layout.origin;
                for axis in 0..self.layout.d {
                    let e = self.layout.neighbours[axis];
                    for (so, se) in [(1u8, 0u8), (0, 1)] {
                        let p = (if so == 1 { probs[o] } else { 1.0 - probs[o] })
                            * (if se == 1 { probs[e] } else { 1.0 - probs[e] });
                        mom.c[axis] += p * self.cfg.family.rate(axis, w.alphas[o], so, w.alphas[e], se);
                    }
                }
            }
        }
        mom.windows += 1;
    }

    fn blocks(&self) -> Vec<Moments> {
        let n = self.cfg.n_dis;
        let nb = n.min(MAX_JACKKNIFE_BLOCKS);
        (0..nb)
            .into_par_iter()
            .map(|b| {
                let mut mom = Moments::zeros(self.table, self.layout.d);
                let (lo, hi) = (b * n / nb, (b + 1) * n / nb);
                for s in lo..hi {
                    self.window_moments(s, &mut mom);
                }
                mom
            })
            .collect()
    }
}

fn site_key(sample: u64, coords: &[i64]) -> u64 {
    let mut k = sample << 24;
    for (i, c) in coords.iter().enumerate() {
        k |= (((c + 128) as u64) & 0xff) << (8 * i);
    }
    k
}

fn translate_base(sample: usize, side: usize, d: usize) -> Vec<i64> {
    let mut k = sample;
    (0..d)
        .map(|_| {
            let v = (k % side) as i64;
            k /= side;
            v
        })
        .collect()
}

/// `D` at one density with its jackknife errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub m: f64,
    pub d: usize,
    pub matrix: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// `inf / (2χ)` per basis vector, i.e. the diagonal.
    pub infimum: Vec<f64>,
    /// `g = 0` value `/ (2χ)` per axis, an upper bound for the diagonal.
    pub upper_bound: Vec<f64>,
    pub chi: f64,
    pub support: i64,
    pub support_sites: usize,
    pub n_dis: usize,
    /// Set below three dimensions, where the variational formula is applied
    /// outside its proven range.
    pub formal: bool,
    pub mode: EtaMode,
}

fn to_matrix(sol: &Solution, chi: f64, d: usize) -> Vec<Vec<f64>> {
    // polarization: (e_i+e_j, M(e_i+e_j)) − (e_i,Me_i) − (e_j,Me_j) = 2 M_ij
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    if i == j {
                        sol.form[i][i] / (2.0 * chi)
                    } else {
                        let both = sol.form[i][i] + sol.form[j][j] + sol.form[i][j] + sol.form[j][i];
                        (both - sol.form[i][i] - sol.form[j][j]) / 2.0 / (2.0 * chi)
                    }
                })
                .collect()
        })
        .collect()
}

/// The minimizing table for axis-aligned `a = e_axis` and the infimum values.
pub fn minimize_g(cfg: &GreenKuboConfig, m: f64) -> Result<(Vec<LocalFunctionTable>, Vec<f64>)> {
    let p = Problem::new(cfg, m)?;
    let mut total = Moments::zeros(p.table, cfg.d);
    for b in p.blocks() {
        total.add(&b);
    }
    let sol = solve(&total, cfg.d)?;
    let offsets = cfg.support.offsets(cfg.d);
    let tables = sol
        .thetas
        .iter()
        .map(|t| LocalFunctionTable {
            offsets: offsets.clone(),
            alphabet: p.alphabet,
            coefficients: t.clone(),
        })
        .collect();
    Ok((tables, (0..cfg.d).map(|i| sol.form[i][i]).collect()))
}

/// Average over the configured windows of the objective at a given table and
/// vector `a` (no minimization).
pub fn quadratic_form(cfg: &GreenKuboConfig, m: f64, a: &[f64], g: &LocalFunctionTable) -> Result<f64> {
    let p = Problem::new(cfg, m)?;
    if g.coefficients.len() != p.table || a.len() != cfg.d {
        return Err(Error::InvalidArgument("table or vector does not match the configuration".into()));
    }
    let mut total = Moments::zeros(p.table, cfg.d);
    for b in p.blocks() {
        total.add(&b);
    }
    let n = total.windows as f64;
    let theta = &g.coefficients;
    let mut value = 0.0;
    for (axis, &ae) in a.iter().enumerate() {
        value += ae * ae * total.c[axis] / n;
        let bt: f64 = total.b[axis].iter().zip(theta).map(|(x, y)| x * y).sum();
        value += 2.0 * ae * bt / n;
    }
    let m_ = p.table;
    for i in 0..m_ {
        for j in 0..m_ {
            value += theta[i] * total.a[i * m_ + j] * theta[j] / n;
        }
    }
    Ok(value)
}

/// `D(m)` by minimization over tables, with leave-one-block-out jackknife
/// errors over disorder blocks.
pub fn estimate_d(cfg: &GreenKuboConfig, m: f64) -> Result<DiffusionEstimate> {
    let p = Problem::new(cfg, m)?;
    let chi = compressibility(&cfg.law, m)?;
    if chi <= 0.0 {
        return Err(Error::InvalidArgument("compressibility vanishes".into()));
    }
    let d = cfg.d;
    let blocks = p.blocks();
    let mut total = Moments::zeros(p.table, d);
    for b in &blocks {
        total.add(b);
    }
    let full = solve(&total, d)?;
    let matrix = to_matrix(&full, chi, d);
    let nb = blocks.len();
    let leave_out: Vec<Vec<Vec<f64>>> = blocks
        .iter()
        .map(|b| solve(&total.sub(b), d).map(|s| to_matrix(&s, chi, d)))
        .collect::<Result<_>>()?;
    let stderr = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let mean = leave_out.iter().map(|mm| mm[i][j]).sum::<f64>() / nb as f64;
                    let ss: f64 = leave_out.iter().map(|mm| (mm[i][j] - mean).powi(2)).sum();
                    ((nb as f64 - 1.0) / nb as f64 * ss).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(DiffusionEstimate {
        m,
        d,
        infimum: (0..d).map(|i| matrix[i][i]).collect(),
        upper_bound: full.g0.iter().map(|c| c / (2.0 * chi)).collect(),
        matrix,
        stderr,
        chi,
        support: cfg.support.label(),
        support_sites: p.support_len,
        n_dis: cfg.n_dis,
        formal: d < 3,
        mode: cfg.mode,
    })
}

/// `D` on a density grid with monotone cubic interpolation of each entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTable {
    pub estimates: Vec<DiffusionEstimate>,
}

impl DiffusionTable {
    pub fn compute(cfg: &GreenKuboConfig, grid: &[f64]) -> Result<Self> {
        let estimates = grid.iter().map(|&m| estimate_d(cfg, m)).collect::<Result<_>>()?;
        Ok(Self { estimates })
    }

    /// Table with `D = value · 𝕀` at the given nodes.
    pub fn constant(d: usize, grid: &[f64], value: f64) -> Self {
        let estimates = grid
            .iter()
            .map(|&m| DiffusionEstimate {
                m,
                d,
                matrix: (0..d).map(|i| (0..d).map(|j| if i == j { value } else { 0.0 }).collect()).collect(),
                stderr: vec![vec![0.0; d]; d],
                infimum: vec![value; d],
                upper_bound: vec![value; d],
                chi: m * (1.0 - m),
                support: -1,
                support_sites: 0,
                n_dis: 0,
                formal: d < 3,
                mode: EtaMode::Exact,
            })
            .collect();
        Self { estimates }
    }

    pub fn dim(&self) -> usize {
        self.estimates.first().map_or(0, |e| e.d)
    }

    /// Interpolant of entry `(i, j)`, flat outside the grid.
    pub fn interpolant(&self, i: usize, j: usize) -> Result<MonotoneCubic<f64>> {
        MonotoneCubic::new(
            self.estimates.iter().map(|e| e.m).collect(),
            self.estimates.iter().map(|e| e.matrix[i][j]).collect(),
        )
    }

    /// Largest jump between neighbouring grid values of any entry.
    pub fn continuity_modulus(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for w in self.estimates.windows(2) {
            for i in 0..d {
                for j in 0..d {
                    worst = worst.max((w[1].matrix[i][j] - w[0].matrix[i][j]).abs());
                }
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["m".to_string()];
        for i in 0..d {
            for j in 0..d {
                header.push(format!("D_{i}{j}"));
            }
        }
        for i in 0..d {
            for j in 0..d {
                header.push(format!("stderr_{i}{j}"));
            }
        }
        header.extend(["support".into(), "n_dis".into(), "formal".into()]);
        wr.write_record(&header)?;
        for e in &self.estimates {
            let mut row = vec![format!("{}", e.m)];
            row.extend(e.matrix.iter().flatten().map(|v| format!("{v:e}")));
            row.extend(e.stderr.iter().flatten().map(|v| format!("{v:e}")));
            row.extend([e.support.to_string(), e.n_dis.to_string(), e.formal.to_string()]);
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Diagonal diffusion coefficients as functions of density, with clamping
/// into the tabulated range.
#[derive(Debug, Clone)]
pub struct DiffusionCurve {
    entries: Vec<MonotoneCubic<f64>>,
    lo: f64,
    hi: f64,
}

impl DiffusionCurve {
    pub fn from_table(table: &DiffusionTable) -> Result<Self> {
        if table.estimates.is_empty() {
            return Err(Error::InvalidArgument("empty diffusion table".into()));
        }
        let d = table.dim();
        let entries = (0..d).map(|i| table.interpolant(i, i)).collect::<Result<_>>()?;
        let lo = table.estimates.first().unwrap().m.max(DENSITY_CLAMP);
        let hi = table.estimates.last().unwrap().m.min(1.0 - DENSITY_CLAMP);
        Ok(Self { entries, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// `D_{axis,axis}(m)`; the flag reports evaluation outside the grid.
    pub fn eval(&self, axis: usize, m: f64) -> (f64, bool) {
        let outside = m < self.lo || m > self.hi;
        (self.entries[axis].eval(m), outside)
    }

    pub fn max_value(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.nodes().1.iter().copied())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(law: DisorderLaw, support: SupportSpec) -> GreenKuboConfig {
        GreenKuboConfig {
            d: 1,
            law,
            family: RateFamily::Metropolis,
            support,
            bins: 5,
            n_dis: 4,
            seed: 7,
            mode: EtaMode::Exact,
            sampling: DisorderSampling::Iid,
        }
    }

    #[test]
    fn layout_of_cube_support() {
        let l = Layout::new(1, &[vec![-1], vec![0], vec![1]]);
        assert_eq!(l.sites.len(), 6);
        assert_eq!(l.translates[0].len(), 4);
        let empty = Layout::new(2, &[]);
        assert_eq!(empty.sites.len(), 3);
    }

    #[test]
    fn g_zero_values() {
        let c = cfg(DisorderLaw::constant(0.0), SupportSpec::Empty);
        let m = 0.3;
        let g = LocalFunctionTable::zeros(Vec::new(), 1);
        let v = quadratic_form(&c, m, &[1.0], &g).unwrap();
        assert!((v - 2.0 * m * (1.0 - m)).abs() < 1e-14);
        assert_eq!(quadratic_form(&c, m, &[0.0], &g).unwrap(), 0.0);
    }

    #[test]
    fn occupation_at_origin_hand_enumeration() {
        // g(η) = η_0 on support {0}: ∇_{0,1}(Σ_x η_x) = 0, so the form equals
        // the g = 0 value; a non-conserved table does change it.
        let c = cfg(DisorderLaw::constant(0.0), SupportSpec::Cube { radius: 0 });
        let g = LocalFunctionTable {
            offsets: vec![vec![0]],
            alphabet: 1,
            coefficients: vec![0.0, 1.0],
        };
        let v = quadratic_form(&c, 0.5, &[1.0], &g).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
        // g(η) = 1 − η_0 has the same gradient up to sign and also telescopes
        let h = LocalFunctionTable { coefficients: vec![1.0, 0.0], ..g.clone() };
        assert!((quadratic_form(&c, 0.5, &[1.0], &h).unwrap() - 0.5).abs() < 1e-14);
        // hand enumeration with a site-dependent table on support {0, 1}:
        // g(η_0, η_1) = η_0 η_1 gives ∇_{0,1} Σ τ_x g = η_{-1}(η_1 − η_0) + η_2(η_0 − η_1)
        // μ[(η_1 − η_0 + η_{-1}(η_1 − η_0) − η_2(η_1 − η_0))²] at m = 1/2
        let c2 = cfg(DisorderLaw::constant(0.0), SupportSpec::Star);
        let mut t = LocalFunctionTable::zeros(vec![vec![0], vec![1]], 1);
        t.coefficients[0b11] = 1.0;
        let v = quadratic_form(&c2, 0.5, &[1.0], &t).unwrap();
        let mut hand = 0.0;
        for mask in 0..16u32 {
            let e = |i: u32| (mask >> i & 1) as f64;
            let (em1, e0, e1, e2) = (e(0), e(1), e(2), e(3));
            let u = e1 - e0;
            hand += (u + em1 * u - e2 * u).powi(2) / 16.0;
        }
        assert!((v - hand).abs() < 1e-14, "{v} vs {hand}");
    }

    #[test]
    fn constant_disorder_gives_identity() {
        for support in [SupportSpec::Empty, SupportSpec::Cube { radius: 0 }, SupportSpec::Cube { radius: 1 }] {
            let c = cfg(DisorderLaw::constant(0.0), support);
            for m in [0.1, 0.5, 0.8] {
                let est = estimate_d(&c, m).unwrap();
                assert!((est.matrix[0][0] - 1.0).abs() < 1e-8, "{:?}", est.matrix);
            }
        }
    }

    #[test]
    fn nested_supports_decrease() {
        let law = DisorderLaw::two_point(0.8);
        let v: Vec<f64> = [SupportSpec::Empty, SupportSpec::Cube { radius: 0 }, SupportSpec::Cube { radius: 1 }]
            .into_iter()
            .map(|s| estimate_d(&GreenKuboConfig { n_dis: 400, ..cfg(law.clone(), s) }, 0.4).unwrap().matrix[0][0])
            .collect();
        assert!(v[1] <= v[0] + 1e-12 && v[2] <= v[1] + 1e-12, "{v:?}");
        assert!(v[2] > 0.0);
    }

    #[test]
    fn two_dimensional_symmetric_and_bounded() {
        let c = GreenKuboConfig {
            d: 2,
            support: SupportSpec::Star,
            ..cfg(DisorderLaw::uniform(1.0), SupportSpec::Empty)
        };
        let c = GreenKuboConfig { bins: 2, ..c };
        let est = estimate_d(&c, 0.35).unwrap();
        assert!((est.matrix[0][1] - est.matrix[1][0]).abs() < 1e-10);
        for i in 0..2 {
            assert!(est.matrix[i][i] > 0.0 && est.matrix[i][i] <= est.upper_bound[i] + 1e-12);
        }
        assert!(est.formal);
    }

    #[test]
    fn sampled_mode_is_close_to_exact() {
        let law = DisorderLaw::two_point(0.5);
        let exact = estimate_d(&cfg(law.clone(), SupportSpec::Cube { radius: 0 }), 0.5).unwrap();
        let sampled = estimate_d(
            &GreenKuboConfig {
                mode: EtaMode::Sampled { samples: 20000 },
                ..cfg(law, SupportSpec::Cube { radius: 0 })
            },
            0.5,
        )
        .unwrap();
        assert!((exact.matrix[0][0] - sampled.matrix[0][0]).abs() < 0.02);
    }

    #[test]
    fn table_interpolates_nodes() {
        let grid = [0.2, 0.4, 0.6];
        let t = DiffusionTable::compute(&cfg(DisorderLaw::constant(0.0), SupportSpec::Empty), &grid).unwrap();
        let f = t.interpolant(0, 0).unwrap();
        for e in &t.estimates {
            assert_eq!(f.eval(e.m), e.matrix[0][0]);
        }
        let curve = DiffusionCurve::from_table(&t).unwrap();
        assert!(curve.eval(0, 0.1).1);
    }
}
