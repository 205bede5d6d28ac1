//! Rejection-free continuous-time simulation of the exchange process on a
//! torus, sped up by `ε⁻²`.

use std::io::{BufRead, Write};

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderField;
use crate::dynamics::generator::bond_rate;
use crate::dynamics::rates::RateFamily;
use crate::error::{Error, Result};
use crate::gibbs::Configuration;
use crate::lattice::{Bond, TorusGeometry};
use crate::numerics::CompensatedSum;

/// Complete binary tree of partial sums. Internal nodes are recomputed from
/// their children on every update, so the stored totals never drift.
#[derive(Debug, Clone)]
pub struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(values: &[f64]) -> Self {
        let size = values.len().max(1).next_power_of_two();
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + values.len()].copy_from_slice(values);
        for i in (1..size).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        Self { size, nodes }
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.size + i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let mut k = self.size + i;
        self.nodes[k] = v;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf `i` such that the prefix sum before `i` is `≤ u <` the prefix
    /// sum through `i`. Never returns a zero-weight leaf when the total is
    /// positive.
    pub fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let left = self.nodes[2 * k];
            let right = self.nodes[2 * k + 1];
            if (u >= left && right > 0.0) || left <= 0.0 {
                u -= left;
                k = 2 * k + 1;
            } else {
                k *= 2;
            }
        }
        k - self.size
    }
}

/// Label and cumulative displacement of every particle.
#[derive(Debug, Clone)]
pub struct Tags {
    /// Particle label at each site, `u32::MAX` when empty.
    pub label: Vec<u32>,
    /// Net lattice displacement of each labelled particle, per axis.
    pub displacement: Vec<[i64; 3]>,
}

/// Counters returned by [`DynState::run`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    pub final_time: f64,
}

/// Receives the state at requested macroscopic times.
pub trait Observer {
    fn observe(&mut self, time: f64, state: &DynState);
}

impl<F: FnMut(f64, &DynState)> Observer for F {
    fn observe(&mut self, time: f64, state: &DynState) {
        self(time, state)
    }
}

/// Dynamic state of one trajectory.
#[derive(Debug, Clone)]
pub struct DynState {
    geom: TorusGeometry,
    alphas: Vec<f64>,
    family: RateFamily<f64>,
    config: Configuration,
    bonds: Vec<Bond>,
    incident_start: Vec<usize>,
    incident: Vec<u32>,
    tree: SumTree,
    time: CompensatedSum,
    speed: f64,
    tags: Option<Tags>,
    events: u64,
}

impl DynState {
    /// `epsilon` sets the time scale: every rate is multiplied by `ε⁻²`.
    pub fn new(
        geom: TorusGeometry,
        field: &DisorderField,
        family: RateFamily<f64>,
        config: Configuration,
        epsilon: f64,
    ) -> Result<Self> {
        if field.len() != geom.n_sites() || config.len() != geom.n_sites() {
            return Err(Error::InvalidArgument(format!(
                "field has {} sites, configuration {}, torus {}",
                field.len(),
                config.len(),
                geom.n_sites()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        let bonds = geom.bonds();
        let n = geom.n_sites();
        let mut deg = vec![0usize; n + 1];
        for b in &bonds {
            deg[b.x + 1] += 1;
            deg[b.y + 1] += 1;
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let mut fill = deg.clone();
        let mut incident = vec![0u32; deg[n]];
        for (k, b) in bonds.iter().enumerate() {
            for s in [b.x, b.y] {
                incident[fill[s]] = k as u32;
                fill[s] += 1;
            }
        }
        let alphas = field.values.clone();
        let occ = config.occupations();
        let rates: Vec<f64> = bonds
            .iter()
            .map(|b| Self::effective_rate(&family, &alphas, occ, b))
            .collect();
        Ok(Self {
            geom,
            alphas,
            family,
            config,
            tree: SumTree::new(&rates),
            bonds,
            incident_start: deg,
            incident,
            time: CompensatedSum::new(0.0),
            speed: epsilon.powi(-2),
            tags: None,
            events: 0,
        })
    }

    #[inline]
    fn effective_rate(family: &RateFamily<f64>, alphas: &[f64], occ: &[u8], b: &Bond) -> f64 {
        if occ[b.x] == occ[b.y] {
            0.0
        } else {
            bond_rate(family, alphas, occ, b)
        }
    }

    /// Start tracking particle labels and displacements.
    pub fn enable_tags(&mut self) {
        let mut label = vec![u32::MAX; self.geom.n_sites()];
        let mut next = 0u32;
        for (x, &o) in self.config.occupations().iter().enumerate() {
            if o == 1 {
                label[x] = next;
                next += 1;
            }
        }
        self.tags = Some(Tags {
            label,
            displacement: vec![[0; 3]; next as usize],
        });
    }

    pub fn tags(&self) -> Option<&Tags> {
        self.tags.as_ref()
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geom
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn family(&self) -> &RateFamily<f64> {
        &self.family
    }

    pub fn configuration(&self) -> &Configuration {
        &self.config
    }

    /// Current macroscopic time.
    pub fn time(&self) -> f64 {
        self.time.value()
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    /// Total jump rate `ε⁻² Σ c_b` over bonds with unequal occupations.
    pub fn total_rate(&self) -> f64 {
        self.speed * self.tree.total()
    }

    /// Largest relative discrepancy between the maintained rates (leaves and
    /// total) and rates recomputed from scratch.
    pub fn rate_coherence(&self) -> f64 {
        let occ = self.config.occupations();
        let mut worst = 0.0f64;
        let mut sum = 0.0;
        for (k, b) in self.bonds.iter().enumerate() {
            let fresh = Self::effective_rate(&self.family, &self.alphas, occ, b);
            sum += fresh;
            let kept = self.tree.get(k);
            if fresh != kept {
                worst = worst.max((fresh - kept).abs() / fresh.abs().max(kept.abs()));
            }
        }
        let total = self.tree.total();
        if sum > 0.0 || total > 0.0 {
            worst = worst.max((sum - total).abs() / sum.abs().max(total.abs()));
        }
        worst
    }

    fn execute(&mut self, k: usize) {
        let b = self.bonds[k];
        debug_assert_ne!(self.config.get(b.x), self.config.get(b.y));
        if let Some(tags) = &mut self.tags {
            // the particle at x moves by +e, the one at y by -e
            let (from, step) = if self.config.get(b.x) == 1 { (b.x, 1) } else { (b.y, -1) };
            let id = tags.label[from] as usize;
            tags.displacement[id][b.axis] += step;
            tags.label.swap(b.x, b.y);
        }
        self.config.exchange(b.x, b.y);
        let occ = self.config.occupations();
        for s in [b.x, b.y] {
            for &j in &self.incident[self.incident_start[s]..self.incident_start[s + 1]] {
                let j = j as usize;
                let r = Self::effective_rate(&self.family, &self.alphas, occ, &self.bonds[j]);
                self.tree.set(j, r);
            }
        }
        self.events += 1;
    }

    /// Advance to macroscopic time `t_end`, calling `observer` at each time in
    /// `obs_times` (sorted, within `(now, t_end]`; others are skipped).
    pub fn run<R: Rng + ?Sized, O: Observer + ?Sized>(
        &mut self,
        t_end: f64,
        obs_times: &[f64],
        observer: &mut O,
        rng: &mut R,
    ) -> RunStats {
        let start_events = self.events;
        let count = self.config.count();
        let t0 = self.time();
        let mut obs = obs_times.iter().copied().filter(|&t| t >= t0 && t <= t_end).peekable();
        loop {
            let rate = self.total_rate();
            let now = self.time();
            let next = if rate > 0.0 {
                // 1 - U lies in (0, 1]
                let u: f64 = 1.0 - rng.random::<f64>();
                now - u.ln() / rate
            } else {
                f64::INFINITY
            };
            while let Some(&t) = obs.peek() {
                if t < next {
                    observer.observe(t, self);
                    obs.next();
                } else {
                    break;
                }
            }
            if next > t_end {
                self.time = CompensatedSum::new(t_end);
                break;
            }
            let u = rng.random::<f64>() * self.tree.total();
            let k = self.tree.find(u);
            self.time.add(next - now);
            self.execute(k);
            debug_assert_eq!(
                self.config.occupations().iter().map(|&v| v as usize).sum::<usize>(),
                count
            );
        }
        RunStats {
            events: self.events - start_events,
            final_time: self.time(),
        }
    }
}

/// Streams `(time, observable, value)` rows for named scalar observables.
pub struct TrajectoryCsv<W: Write> {
    writer: csv::Writer<W>,
    observables: Vec<(String, Box<dyn Fn(&DynState) -> f64 + Send + Sync>)>,
    error: Option<Error>,
}

impl<W: Write> TrajectoryCsv<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(["time", "observable", "value"])?;
        Ok(Self {
            writer,
            observables: Vec::new(),
            error: None,
        })
    }

    pub fn add<F: Fn(&DynState) -> f64 + Send + Sync + 'static>(&mut self, name: &str, f: F) {
        self.observables.push((name.to_string(), Box::new(f)));
    }

    /// Flush and surface the first write error, if any.
    pub fn finish(mut self) -> Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

impl<W: Write> Observer for TrajectoryCsv<W> {
    fn observe(&mut self, time: f64, state: &DynState) {
        if self.error.is_some() {
            return;
        }
        for (name, f) in &self.observables {
            let row = [format!("{time}"), name.clone(), format!("{}", f(state))];
            if let Err(e) = self.writer.write_record(&row) {
                self.error = Some(e.into());
                return;
            }
        }
    }
}

/// Header line of a snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dims: Vec<usize>,
    pub time: f64,
    pub particles: usize,
    /// Bit `i % 8` of byte `i / 8` holds site `i`.
    pub encoding: String,
}

const SNAPSHOT_ENCODING: &str = "base64-bitpacked-lsb";

/// Write a JSON header line followed by a base64 line of packed occupancies.
pub fn write_snapshot<W: Write>(mut w: W, geom: &TorusGeometry, config: &Configuration, time: f64) -> Result<()> {
    let header = SnapshotHeader {
        dims: geom.dims().to_vec(),
        time,
        particles: config.count(),
        encoding: SNAPSHOT_ENCODING.into(),
    };
    let occ = config.occupations();
    let mut bytes = vec![0u8; occ.len().div_ceil(8)];
    for (i, &o) in occ.iter().enumerate() {
        bytes[i / 8] |= o << (i % 8);
    }
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    writeln!(w, "{}", base64::engine::general_purpose::STANDARD.encode(bytes))?;
    Ok(())
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<(SnapshotHeader, Configuration)> {
    let mut lines = r.lines();
    let bad = |m: &str| Error::InvalidArgument(format!("malformed snapshot: {m}"));
    let header: SnapshotHeader = serde_json::from_str(&lines.next().ok_or_else(|| bad("no header"))??)?;
    if header.encoding != SNAPSHOT_ENCODING {
        return Err(bad("unknown encoding"));
    }
    let body = lines.next().ok_or_else(|| bad("no body"))??;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(body.trim())
        .map_err(|e| bad(&e.to_string()))?;
    let n: usize = header.dims.iter().product();
    if bytes.len() != n.div_ceil(8) {
        return Err(bad("length mismatch"));
    }
    let occ = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1).collect();
    let config = Configuration::from_occupations(occ);
    if config.count() != header.particles {
        return Err(bad("particle count mismatch"));
    }
    Ok((header, config))
}
