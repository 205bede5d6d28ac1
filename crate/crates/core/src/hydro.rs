//! Finite-volume solver for `∂ₜm = Σ_e ∂_e(D_ee(m) ∂_e m)` on the unit torus
//! and the comparison of its solutions with diffusively rescaled particle
//! simulations.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderField, DisorderLaw};
use crate::dynamics::{DynState, RateFamily};
use crate::error::{Error, Result};
use crate::gibbs::Configuration;
use crate::greenkubo::{DiffusionCurve, DiffusionTable};
use crate::lattice::TorusGeometry;

/// Densities on a regular periodic grid of `n^d` cells; cell `i` sits at
/// `θ = i / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub d: usize,
    pub n: usize,
    pub time: f64,
    pub values: Vec<f64>,
}

impl DensityProfile {
    pub fn from_fn<F: Fn(&[f64]) -> f64>(d: usize, n: usize, time: f64, f: F) -> Self {
        let values = (0..n.pow(d as u32))
            .map(|i| f(&grid_point(i, d, n)))
            .collect();
        Self { d, n, time, values }
    }

    pub fn constant(d: usize, n: usize, value: f64) -> Self {
        Self::from_fn(d, n, 0.0, |_| value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Periodic multilinear interpolation at `θ`.
    pub fn at(&self, theta: &[f64]) -> f64 {
        let n = self.n as f64;
        let mut base = vec![0usize; self.d];
        let mut frac = vec![0.0; self.d];
        for k in 0..self.d {
            let x = theta[k].rem_euclid(1.0) * n;
            let i = x.floor();
            base[k] = i as usize % self.n;
            frac[k] = x - i;
        }
        let mut total = 0.0;
        for corner in 0..1usize << self.d {
            let mut w = 1.0;
            let mut idx = 0;
            let mut stride = 1;
            for k in 0..self.d {
                let up = corner >> k & 1;
                w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + up) % self.n * stride;
                stride *= self.n;
            }
            total += w * self.values[idx];
        }
        total
    }

    /// Same profile on an `m^d` grid.
    pub fn resample(&self, m: usize) -> Self {
        if m == self.n {
            return self.clone();
        }
        Self::from_fn(self.d, m, self.time, |t| self.at(t))
    }

    /// Average over the block of `size` cells per axis starting `⌊size/2⌋`
    /// cells before each cell.
    pub fn block_average(&self, size: usize) -> Self {
        Self {
            values: box_filter(&self.values, self.d, self.n, size),
            ..self.clone()
        }
    }
}

fn grid_point(i: usize, d: usize, n: usize) -> Vec<f64> {
    let mut k = i;
    (0..d)
        .map(|_| {
            let c = k % n;
            k /= n;
            c as f64 / n as f64
        })
        .collect()
}

/// Periodic moving average over `size` cells along every axis.
fn box_filter(values: &[f64], d: usize, n: usize, size: usize) -> Vec<f64> {
    let mut cur = values.to_vec();
    if size <= 1 {
        return cur;
    }
    let start = (size / 2) as i64;
    let mut stride = 1;
    let mut next = vec![0.0; cur.len()];
    let mut line = vec![0.0; n];
    for _ in 0..d {
        for base in 0..cur.len() {
            if (base / stride) % n != 0 {
                continue;
            }
            for (j, l) in line.iter_mut().enumerate() {
                *l = cur[base + j * stride];
            }
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..size as i64 {
                    s += line[(j as i64 - start + k).rem_euclid(n as i64) as usize];
                }
                next[base + j * stride] = s / size as f64;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        stride *= n;
    }
    cur
}

/// Block-averaged occupations on a cubic torus, blocks of `size` sites per
/// axis placed as in [`DensityProfile::block_average`].
pub fn block_profile(geom: &TorusGeometry, eta: &[u8], size: usize, time: f64) -> Result<DensityProfile> {
    let d = geom.dim();
    let n = geom.dims()[0];
    if geom.dims().iter().any(|&s| s != n) {
        return Err(Error::Geometry("block profiles need a cubic torus".into()));
    }
    if size == 0 || size > n {
        return Err(Error::InvalidArgument(format!("block size {size} outside 1..={n}")));
    }
    let raw: Vec<f64> = eta.iter().map(|&v| v as f64).collect();
    Ok(DensityProfile {
        d,
        n,
        time,
        values: box_filter(&raw, d, n, size),
    })
}

/// Block densities `m_{x,ℓ}` over the cube of radius `radius` around each
/// site.
pub fn empirical_profile(geom: &TorusGeometry, eta: &[u8], radius: usize, time: f64) -> Result<DensityProfile> {
    block_profile(geom, eta, 2 * radius + 1, time)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    Euler,
    Heun,
}

/// Output of [`solve_pde`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeTrajectory {
    /// Initial profile followed by one profile per checkpoint.
    pub profiles: Vec<DensityProfile>,
    pub steps: usize,
    pub max_dt: f64,
    /// Largest change of the mean over one step.
    pub max_mass_drift: f64,
    /// Evaluations of `D` outside the tabulated densities.
    pub clamped: u64,
}

/// `dt · Σ_e ∂_e(D ∂_e m)` by face fluxes with face-averaged `D`.
fn increment(m: &[f64], d: usize, n: usize, curve: &DiffusionCurve, dt: f64, out: &mut [f64], clamped: &mut u64) {
    let h2 = (n * n) as f64;
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut dv: Vec<Vec<f64>> = Vec::with_capacity(d);
    for axis in 0..d {
        dv.push(
            m.iter()
                .map(|&v| {
                    let (val, outside) = curve.eval(axis, v);
                    *clamped += outside as u64;
                    val
                })
                .collect(),
        );
    }
    let mut stride = 1;
    for dvals in &dv {
        for i in 0..m.len() {
            let c = (i / stride) % n;
            let j = if c + 1 == n { i + stride - n * stride } else { i + stride };
            let flux = dt * h2 * 0.5 * (dvals[i] + dvals[j]) * (m[j] - m[i]);
            out[i] += flux;
            out[j] -= flux;
        }
        stride *= n;
    }
}

/// Conservative explicit scheme up to each time in `checkpoints` (sorted,
/// positive). `dt` is an upper bound; every checkpoint interval is split into
/// equal steps.
pub fn solve_pde(
    m0: &DensityProfile,
    curve: &DiffusionCurve,
    checkpoints: &[f64],
    dt: f64,
    scheme: TimeScheme,
) -> Result<PdeTrajectory> {
    let (d, n) = (m0.d, m0.n);
    if curve.dim() != d {
        return Err(Error::InvalidArgument(format!("D table has dimension {}, profile {d}", curve.dim())));
    }
    let dmax = curve.max_value();
    if !(dmax > 0.0) {
        return Err(Error::InvalidArgument("D table must be positive".into()));
    }
    let limit = 1.0 / ((n * n) as f64 * 2.0 * d as f64 * dmax);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Cfl { dt, limit });
    }
    if m0.values.iter().any(|&v| curve.eval(0, v).1) {
        return Err(Error::InvalidArgument(format!(
            "D table does not cover the initial densities [{}, {}]",
            m0.min(),
            m0.max()
        )));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) || checkpoints.first().is_some_and(|&t| t <= m0.time) {
        return Err(Error::InvalidArgument("checkpoints must increase past the initial time".into()));
    }
    let mut m = m0.values.clone();
    let mut k1 = vec![0.0; m.len()];
    let mut k2 = vec![0.0; m.len()];
    let mut stage = vec![0.0; m.len()];
    let mut out = PdeTrajectory {
        profiles: vec![m0.clone()],
        steps: 0,
        max_dt: 0.0,
        max_mass_drift: 0.0,
        clamped: 0,
    };
    let mut t_prev = m0.time;
    let mut mass = m0.mass();
    for &t in checkpoints {
        let steps = ((t - t_prev) / dt).ceil().max(1.0) as usize;
        let h = (t - t_prev) / steps as f64;
        out.max_dt = out.max_dt.max(h);
        for _ in 0..steps {
            increment(&m, d, n, curve, h, &mut k1, &mut out.clamped);
            match scheme {
                TimeScheme::Euler => m.iter_mut().zip(&k1).for_each(|(v, k)| *v += k),
                TimeScheme::Heun => {
                    for ((s, v), k) in stage.iter_mut().zip(&m).zip(&k1) {
                        *s = v + k;
                    }
                    increment(&stage, d, n, curve, h, &mut k2, &mut out.clamped);
                    for ((v, a), b) in m.iter_mut().zip(&k1).zip(&k2) {
                        *v += 0.5 * (a + b);
                    }
                }
            }
            let new_mass = m.iter().sum::<f64>() / m.len() as f64;
            out.max_mass_drift = out.max_mass_drift.max((new_mass - mass).abs());
            mass = new_mass;
        }
        out.steps += steps;
        out.profiles.push(DensityProfile {
            d,
            n,
            time: t,
            values: m.clone(),
        });
        t_prev = t;
    }
    Ok(out)
}

/// Largest stable time step on an `n^d` grid.
pub fn cfl_limit(d: usize, n: usize, dmax: f64) -> f64 {
    1.0 / ((n * n) as f64 * 2.0 * d as f64 * dmax)
}

/// `A_e(m) = ∫_0^m D_ee` tabulated on a fine grid with cubic Hermite
/// interpolation (`A′ = D` at the nodes).
#[derive(Debug, Clone)]
pub struct Antiderivative {
    values: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    nodes: usize,
}

impl Antiderivative {
    pub fn new(curve: &DiffusionCurve) -> Self {
        const NODES: usize = 4096;
        const GL: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const GW: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let h = 1.0 / NODES as f64;
        let mut values = Vec::new();
        let mut slopes = Vec::new();
        for axis in 0..curve.dim() {
            let mut acc = vec![0.0; NODES + 1];
            for k in 0..NODES {
                let mid = (k as f64 + 0.5) * h;
                let piece: f64 = GL
                    .iter()
                    .zip(GW)
                    .map(|(x, w)| w * curve.eval(axis, mid + 0.5 * h * x).0)
                    .sum();
                acc[k + 1] = acc[k] + 0.5 * h * piece;
            }
            values.push(acc);
            slopes.push((0..=NODES).map(|k| curve.eval(axis, k as f64 * h).0).collect());
        }
        Self {
            values,
            slopes,
            nodes: NODES,
        }
    }

    pub fn eval(&self, axis: usize, m: f64) -> f64 {
        let h = 1.0 / self.nodes as f64;
        let x = m.clamp(0.0, 1.0) / h;
        let k = (x.floor() as usize).min(self.nodes - 1);
        let t = x - k as f64;
        let (a0, a1) = (self.values[axis][k], self.values[axis][k + 1]);
        let (d0, d1) = (self.slopes[axis][k] * h, self.slopes[axis][k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * a0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * a1 + (t3 - t2) * d1
    }
}

/// Smooth test function with its time derivative and pure second
/// derivatives.
pub trait TestFunction {
    fn value(&self, t: f64, theta: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, theta: &[f64]) -> f64;
    fn second_derivative(&self, t: f64, theta: &[f64], axis: usize) -> f64;
}

/// `H(t, θ) = g(t) cos(2π k·θ)`-type separable modes: `amplitude · e^{rate·t} ·
/// cos(2π Σ_e k_e θ_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMode {
    pub wavevector: Vec<f64>,
    pub amplitude: f64,
    pub rate: f64,
}

impl CosineMode {
    fn phase(&self, theta: &[f64]) -> f64 {
        2.0 * PI * self.wavevector.iter().zip(theta).map(|(k, x)| k * x).sum::<f64>()
    }
}

impl TestFunction for CosineMode {
    fn value(&self, t: f64, theta: &[f64]) -> f64 {
        self.amplitude * (self.rate * t).exp() * self.phase(theta).cos()
    }

    fn time_derivative(&self, t: f64, theta: &[f64]) -> f64 {
        self.rate * self.value(t, theta)
    }

    fn second_derivative(&self, t: f64, theta: &[f64], axis: usize) -> f64 {
        let k = 2.0 * PI * self.wavevector[axis];
        -k * k * self.value(t, theta)
    }
}

/// `Φ(m, H) = ∫m(T)H(T) − ∫m(0)H(0) − ∫_0^T∫ (m ∂ₜH + Σ_e A_e(m) ∂_e²H)` by
/// midpoint sums in space and the trapezoidal rule over the stored profiles.
pub fn weak_residual<H: TestFunction + ?Sized>(traj: &PdeTrajectory, a: &Antiderivative, h: &H) -> f64 {
    let p = &traj.profiles;
    let d = p[0].d;
    let n = p[0].n;
    let points: Vec<Vec<f64>> = (0..p[0].len()).map(|i| grid_point(i, d, n)).collect();
    let space = |prof: &DensityProfile, f: &dyn Fn(&[f64], f64) -> f64| -> f64 {
        prof.values.iter().zip(&points).map(|(&m, th)| f(th, m)).sum::<f64>() / prof.len() as f64
    };
    let integrand = |prof: &DensityProfile| -> f64 {
        let t = prof.time;
        space(prof, &|th, m| {
            let mut v = m * h.time_derivative(t, th);
            for axis in 0..d {
                v += a.eval(axis, m) * h.second_derivative(t, th, axis);
            }
            v
        })
    };
    let ends = |prof: &DensityProfile| space(prof, &|th, m| m * h.value(prof.time, th));
    let mut time_integral = 0.0;
    let mut prev = integrand(&p[0]);
    for w in p.windows(2) {
        let cur = integrand(&w[1]);
        time_integral += 0.5 * (w[1].time - w[0].time) * (prev + cur);
        prev = cur;
    }
    ends(p.last().unwrap()) - ends(&p[0]) - time_integral
}

/// Macroscopic initial density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialProfile {
    Constant { value: f64 },
    /// `mean + amplitude · cos(2πθ_0)`.
    Cosine { mean: f64, amplitude: f64 },
}

impl InitialProfile {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            InitialProfile::Constant { value } => *value,
            InitialProfile::Cosine { mean, amplitude } => mean + amplitude * (2.0 * PI * theta[0]).cos(),
        }
    }

    pub fn profile(&self, d: usize, n: usize) -> DensityProfile {
        DensityProfile::from_fn(d, n, 0.0, |t| self.eval(t))
    }
}

fn default_scheme() -> TimeScheme {
    TimeScheme::Euler
}

/// Full specification of a particle versus PDE comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroRun {
    pub d: usize,
    /// Side `1/ε` of the particle torus.
    pub side: usize,
    pub law: DisorderLaw,
    pub family: RateFamily<f64>,
    pub initial: InitialProfile,
    /// Comparison times; `0` is allowed and gives the sampling noise.
    pub checkpoints: Vec<f64>,
    /// Block side in lattice sites.
    pub block: usize,
    pub ensemble: usize,
    pub seed: u64,
    /// PDE step; defaults to half the stability limit.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: TimeScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroRow {
    pub time: f64,
    pub l1: f64,
    pub l2: f64,
    pub sup: f64,
    /// Mean over trajectories of the single-trajectory L¹ distance.
    pub single_l1: f64,
    /// `3/√(block^d · ensemble)`.
    pub noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroReport {
    pub rows: Vec<HydroRow>,
    pub pde_steps: usize,
    pub pde_mass_drift: f64,
    pub clamped: u64,
    pub particles: Vec<usize>,
    pub events: u64,
    /// Set unless the disorder is constant in one dimension.
    pub exploratory: bool,
    /// Ensemble-averaged block profiles paired with the block-averaged PDE
    /// solution, one per checkpoint.
    #[serde(skip)]
    pub profiles: Vec<(DensityProfile, DensityProfile)>,
}

impl HydroReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "l1", "l2", "sup", "single_l1", "noise_floor"])?;
        for r in &self.rows {
            wr.write_record([r.time, r.l1, r.l2, r.sup, r.single_l1, r.noise_floor].map(|v| format!("{v:e}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_profiles_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "cell", "empirical", "pde"])?;
        for (emp, pde) in &self.profiles {
            for (i, (a, b)) in emp.values.iter().zip(&pde.values).enumerate() {
                wr.write_record([format!("{}", emp.time), i.to_string(), format!("{a:e}"), format!("{b:e}")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn distances(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut sup = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let e = (x - y).abs();
        l1 += e;
        l2 += e * e;
        sup = sup.max(e);
    }
    (l1 / n, (l2 / n).sqrt(), sup)
}

/// Bernoulli product configuration with site densities `m₀(εx)`.
pub fn bernoulli_configuration<R: Rng + ?Sized>(geom: &TorusGeometry, initial: &InitialProfile, rng: &mut R) -> Configuration {
    let side = geom.dims()[0] as f64;
    let occ = (0..geom.n_sites())
        .map(|i| {
            let theta: Vec<f64> = geom.coords(i).iter().map(|&c| c as f64 / side).collect();
            (rng.random::<f64>() < initial.eval(&theta)) as u8
        })
        .collect();
    Configuration::from_occupations(occ)
}

/// Runs the particle ensemble and the PDE with `D` from `table` and reports
/// the distances between ensemble-averaged block profiles and the
/// block-averaged PDE solution on the particle grid. The disorder field is
/// shared by all trajectories.
pub fn compare_hydro(run: &HydroRun, table: &DiffusionTable) -> Result<HydroReport> {
    if run.ensemble == 0 || run.checkpoints.is_empty() {
        return Err(Error::InvalidArgument("need trajectories and checkpoints".into()));
    }
    if run.checkpoints.windows(2).any(|w| w[1] <= w[0]) || run.checkpoints[0] < 0.0 {
        return Err(Error::InvalidArgument("checkpoints must be increasing and nonnegative".into()));
    }
    let geom = TorusGeometry::cubic(run.side, run.d)?;
    let curve = DiffusionCurve::from_table(table)?;
    let m0 = run.initial.profile(run.d, run.side);
    let dt = run
        .dt
        .unwrap_or(0.5 * cfl_limit(run.d, run.side, curve.max_value()));
    let pde_times: Vec<f64> = run.checkpoints.iter().copied().filter(|&t| t > 0.0).collect();
    let pde = solve_pde(&m0, &curve, &pde_times, dt, run.scheme)?;
    let pde_at = |t: f64| -> &DensityProfile {
        pde.profiles.iter().find(|p| p.time == t).unwrap_or(&pde.profiles[0])
    };
    let field = DisorderField::sample(&run.law, &geom, run.seed)?;
    let eps = 1.0 / run.side as f64;
    let t_end = *run.checkpoints.last().unwrap();
    let trajectories: Vec<Result<(Vec<DensityProfile>, usize, u64)>> = (0..run.ensemble)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
            rng.set_stream(k as u64 + 1);
            let config = bernoulli_configuration(&geom, &run.initial, &mut rng);
            let particles = config.count();
            let mut state = DynState::new(geom.clone(), &field, run.family.clone(), config, eps)?;
            let mut profiles = Vec::new();
            let mut failure = None;
            let mut obs = |t: f64, s: &DynState| match block_profile(s.geometry(), s.configuration().occupations(), run.block, t) {
                Ok(p) => profiles.push(p),
                Err(e) => failure = Some(e),
            };
            let stats = state.run(t_end, &run.checkpoints, &mut obs, &mut rng);
            if let Some(e) = failure {
                return Err(e);
            }
            Ok((profiles, particles, stats.events))
        })
        .collect();
    let trajectories: Vec<(Vec<DensityProfile>, usize, u64)> = trajectories.into_iter().collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    let noise_floor = 3.0 / ((run.block.pow(run.d as u32) * run.ensemble) as f64).sqrt();
    for (c, &t) in run.checkpoints.iter().enumerate() {
        let target = pde_at(t).block_average(run.block);
        let mut mean = vec![0.0; target.len()];
        let mut single = 0.0;
        for (traj, _, _) in &trajectories {
            let p = &traj[c];
            single += distances(&p.values, &target.values).0;
            mean.iter_mut().zip(&p.values).for_each(|(a, b)| *a += b);
        }
        mean.iter_mut().for_each(|v| *v /= run.ensemble as f64);
        let (l1, l2, sup) = distances(&mean, &target.values);
        rows.push(HydroRow {
            time: t,
            l1,
            l2,
            sup,
            single_l1: single / run.ensemble as f64,
            noise_floor,
        });
        profiles.push((
            DensityProfile {
                d: run.d,
                n: run.side,
                time: t,
                values: mean,
            },
            target,
        ));
    }
    let exploratory = run.d != 1 || !matches!(run.law, DisorderLaw::Constant { .. });
    Ok(HydroReport {
        rows,
        pde_steps: pde.steps,
        pde_mass_drift: pde.max_mass_drift,
        clamped: pde.clamped,
        particles: trajectories.iter().map(|t| t.1).collect(),
        events: trajectories.iter().map(|t| t.2).sum(),
        exploratory,
        profiles,
    })
}

/// `∫ Av_x[(m_{x+b e, a} − m_{x, a}) / (b ε)]² dt` over snapshots `(t, η)`
/// by the trapezoidal rule, with `m_{x,a}` the density in the cube of radius
/// `a` sites and the shift `b` in sites.
pub fn energy_estimate(
    geom: &TorusGeometry,
    snapshots: &[(f64, Configuration)],
    a: usize,
    b: usize,
    axis: usize,
    epsilon: f64,
) -> Result<f64> {
    if b == 0 || axis >= geom.dim() || 2 * a + 1 > geom.min_side() {
        return Err(Error::InvalidArgument("energy estimate needs b ≥ 1 and blocks inside the torus".into()));
    }
    let shift = geom.unit(axis).iter().map(|&u| u * b as i64).collect::<Vec<_>>();
    let scale = (b as f64 * epsilon).powi(2);
    let values: Vec<(f64, f64)> = snapshots
        .iter()
        .map(|(t, eta)| {
            let p = empirical_profile(geom, eta.occupations(), a, *t)?;
            let s: f64 = (0..geom.n_sites())
                .map(|x| (p.values[geom.shift(x, &shift)] - p.values[x]).powi(2))
                .sum();
            Ok((*t, s / geom.n_sites() as f64 / scale))
        })
        .collect::<Result<_>>()?;
    Ok(values.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_curve(d: usize) -> DiffusionCurve {
        DiffusionCurve::from_table(&DiffusionTable::constant(d, &[0.0, 0.5, 1.0], 1.0)).unwrap()
    }

    fn cosine(n: usize) -> DensityProfile {
        DensityProfile::from_fn(1, n, 0.0, |t| 0.5 + 0.25 * (2.0 * PI * t[0]).cos())
    }

    #[test]
    fn heat_kernel_closed_form() {
        let n = 512;
        let curve = unit_curve(1);
        let dt = 0.9 * cfl_limit(1, n, 1.0);
        let traj = solve_pde(&cosine(n), &curve, &[0.05, 0.1], dt, TimeScheme::Euler).unwrap();
        for p in &traj.profiles[1..] {
            let exact = DensityProfile::from_fn(1, n, p.time, |t| {
                0.5 + 0.25 * (-4.0 * PI * PI * p.time).exp() * (2.0 * PI * t[0]).cos()
            });
            let err = p.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-3, "{err}");
        }
        assert!(traj.max_mass_drift <= 1e-12);
        assert_eq!(traj.clamped, 0);
    }

    #[test]
    fn constant_profile_is_fixed() {
        let p = DensityProfile::constant(2, 8, 0.3);
        let traj = solve_pde(&p, &unit_curve(2), &[0.01], 1e-4, TimeScheme::Heun).unwrap();
        for v in &traj.profiles[1].values {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn cfl_and_coverage_errors() {
        let curve = unit_curve(1);
        assert!(matches!(
            solve_pde(&cosine(32), &curve, &[0.1], 1.0, TimeScheme::Euler),
            Err(Error::Cfl { .. })
        ));
        let narrow = DiffusionCurve::from_table(&DiffusionTable::constant(1, &[0.4, 0.6], 1.0)).unwrap();
        assert!(solve_pde(&cosine(32), &narrow, &[0.1], 1e-5, TimeScheme::Euler).is_err());
    }

    #[test]
    fn comparison_and_maximum_principles() {
        let n = 64;
        let table = DiffusionTable::constant(1, &[0.0, 0.25, 0.5, 0.75, 1.0], 1.0);
        let mut t2 = table.clone();
        // nonlinear D to exercise the face averaging
        for e in &mut t2.estimates {
            e.matrix[0][0] = 0.5 + e.m;
        }
        let curve = DiffusionCurve::from_table(&t2).unwrap();
        let lo = DensityProfile::from_fn(1, n, 0.0, |t| 0.3 + 0.2 * (2.0 * PI * t[0]).sin().powi(2));
        let hi = DensityProfile::from_fn(1, n, 0.0, |t| 0.35 + 0.3 * (2.0 * PI * t[0]).sin().powi(2));
        let dt = cfl_limit(1, n, 1.5);
        let times: Vec<f64> = (1..=20).map(|k| k as f64 * 0.005).collect();
        let a = solve_pde(&lo, &curve, &times, dt, TimeScheme::Euler).unwrap();
        let b = solve_pde(&hi, &curve, &times, dt, TimeScheme::Euler).unwrap();
        for (p, q) in a.profiles.iter().zip(&b.profiles) {
            assert!(p.values.iter().zip(&q.values).all(|(x, y)| x <= y));
            assert!(p.min() >= lo.min() - 1e-15 && p.max() <= lo.max() + 1e-15);
        }
    }

    #[test]
    fn weak_residual_trivial_cases() {
        let curve = unit_curve(1);
        let a = Antiderivative::new(&curve);
        let ones = CosineMode {
            wavevector: vec![0.0],
            amplitude: 1.0,
            rate: 0.0,
        };
        let traj = solve_pde(&cosine(64), &curve, &[0.02, 0.04], 5e-5, TimeScheme::Euler).unwrap();
        assert!(weak_residual(&traj, &a, &ones).abs() < 1e-10);
        let flat = solve_pde(&DensityProfile::constant(1, 64, 0.4), &curve, &[0.02], 5e-5, TimeScheme::Euler).unwrap();
        let mode = CosineMode {
            wavevector: vec![1.0],
            amplitude: 1.0,
            rate: 0.0,
        };
        assert!(weak_residual(&flat, &a, &mode).abs() < 1e-12);
    }

    #[test]
    fn weak_residual_second_order() {
        let curve = unit_curve(1);
        let a = Antiderivative::new(&curve);
        let mode = CosineMode {
            wavevector: vec![1.0],
            amplitude: 1.0,
            rate: -2.0,
        };
        let residual = |n: usize| {
            let dt = 0.5 * cfl_limit(1, n, 1.0);
            let steps = (0.05 / dt).ceil() as usize;
            let times: Vec<f64> = (1..=steps).map(|k| 0.05 * k as f64 / steps as f64).collect();
            let traj = solve_pde(&cosine(n), &curve, &times, dt, TimeScheme::Euler).unwrap();
            weak_residual(&traj, &a, &mode).abs()
        };
        let (r1, r2) = (residual(32), residual(64));
        let ratio = r1 / r2;
        assert!((3.0..5.0).contains(&ratio), "{r1} {r2} {ratio}");
    }

    #[test]
    fn antiderivative_of_linear_d() {
        let mut t = DiffusionTable::constant(1, &[0.0, 0.5, 1.0], 1.0);
        for e in &mut t.estimates {
            e.matrix[0][0] = 1.0 + e.m;
        }
        let a = Antiderivative::new(&DiffusionCurve::from_table(&t).unwrap());
        for m in [0.1, 0.37, 0.9] {
            assert!((a.eval(0, m) - (m + 0.5 * m * m)).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_profiles() {
        let geom = TorusGeometry::cubic(10, 1).unwrap();
        let full = vec![1u8; 10];
        assert!(empirical_profile(&geom, &full, 2, 0.0).unwrap().values.iter().all(|&v| v == 1.0));
        let eta: Vec<u8> = (0..10).map(|i| (i % 3 == 0) as u8).collect();
        let raw = empirical_profile(&geom, &eta, 0, 0.0).unwrap();
        assert_eq!(raw.values, eta.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let g3 = TorusGeometry::cubic(20, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = bernoulli_configuration(&g3, &InitialProfile::Constant { value: 0.3 }, &mut rng);
        let p = empirical_profile(&g3, c.occupations(), 2, 0.0).unwrap();
        // block means average to the overall density
        let sigma = (0.3 * 0.7 / g3.n_sites() as f64).sqrt();
        assert!((p.mass() - 0.3).abs() < 3.0 * sigma);
        assert!((p.mass() - c.density()).abs() < 1e-12);
    }

    #[test]
    fn block_average_matches_direct_sum() {
        let p = DensityProfile::from_fn(2, 6, 0.0, |t| t[0] + 10.0 * t[1]);
        let q = p.block_average(4);
        // cell (0,0) averages cells -2..2 in each axis
        let mut s = 0.0;
        for i in -2i64..2 {
            for j in -2i64..2 {
                s += p.values[(i.rem_euclid(6) + 6 * j.rem_euclid(6)) as usize];
            }
        }
        assert!((q.values[0] - s / 16.0).abs() < 1e-14);
    }

    #[test]
    fn sampling_noise_at_time_zero() {
        let run = HydroRun {
            d: 1,
            side: 256,
            law: DisorderLaw::constant(0.0),
            family: RateFamily::Metropolis,
            initial: InitialProfile::Cosine { mean: 0.5, amplitude: 0.25 },
            checkpoints: vec![0.0, 0.001],
            block: 16,
            ensemble: 4,
            seed: 5,
            dt: None,
            scheme: TimeScheme::Euler,
        };
        let table = DiffusionTable::constant(1, &[0.0, 0.5, 1.0], 1.0);
        let rep = compare_hydro(&run, &table).unwrap();
        assert!(rep.rows[0].l1 <= rep.rows[0].noise_floor);
        assert!(!rep.exploratory);
        assert_eq!(rep.profiles.len(), 2);
    }

    #[test]
    fn energy_of_flat_and_smooth_profiles() {
        let geom = TorusGeometry::cubic(200, 1).unwrap();
        let flat = Configuration::from_occupations(vec![1; 200]);
        let snaps = vec![(0.0, flat.clone()), (1.0, flat)];
        assert!(energy_estimate(&geom, &snaps, 2, 3, 0, 0.005).unwrap().abs() < 1e-12);
        // deterministic smooth profile: η_x = 1 on a long window
        let step = Configuration::from_occupations((0..200).map(|i| (i < 100) as u8).collect());
        let snaps = vec![(0.0, step.clone()), (1.0, step)];
        let small = energy_estimate(&geom, &snaps, 5, 2, 0, 0.005).unwrap();
        let large = energy_estimate(&geom, &snaps, 5, 8, 0, 0.005).unwrap();
        assert!(large < small);
    }
}
