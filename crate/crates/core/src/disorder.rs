//! Quenched i.i.d. disorder: laws, reproducible fields and law expectations.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::numerics;

fn unit_bound() -> f64 {
    1.0
}

/// Single-site law of the disorder variables, supported in `[-bound, bound]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisorderLaw {
    Constant {
        value: f64,
        #[serde(default = "unit_bound")]
        bound: f64,
    },
    Uniform {
        #[serde(default = "unit_bound")]
        bound: f64,
    },
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
        #[serde(default = "unit_bound")]
        bound: f64,
    },
}

impl DisorderLaw {
    pub fn constant(value: f64) -> Self {
        DisorderLaw::Constant {
            value,
            bound: unit_bound().max(value.abs()),
        }
    }

    pub fn uniform(bound: f64) -> Self {
        DisorderLaw::Uniform { bound }
    }

    /// Symmetric two-point law on `{-a, +a}`.
    pub fn two_point(a: f64) -> Self {
        DisorderLaw::Discrete {
            values: vec![-a, a],
            probs: vec![0.5, 0.5],
            bound: unit_bound().max(a.abs()),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            DisorderLaw::Constant { bound, .. }
            | DisorderLaw::Uniform { bound }
            | DisorderLaw::Discrete { bound, .. } => *bound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bound();
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Law(format!("bound must be positive, got {b}")));
        }
        match self {
            DisorderLaw::Constant { value, .. } => {
                if value.abs() > b {
                    return Err(Error::Law(format!("constant {value} outside [-{b}, {b}]")));
                }
            }
            DisorderLaw::Uniform { .. } => {}
            DisorderLaw::Discrete { values, probs, .. } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::Law("values/probs length mismatch".into()));
                }
                if let Some(v) = values.iter().find(|v| v.abs() > b || !v.is_finite()) {
                    return Err(Error::Law(format!("support point {v} outside [-{b}, {b}]")));
                }
                if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                    return Err(Error::Law("negative probability".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Law(format!("probabilities sum to {total}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, DisorderLaw::Uniform { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DisorderLaw::Constant { value, .. } => *value,
            DisorderLaw::Uniform { bound } => (2.0 * rng.random::<f64>() - 1.0) * bound,
            DisorderLaw::Discrete { values, probs, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
        }
    }

    /// Value at a site as a pure function of `(seed, key)`.
    pub fn sample_keyed(&self, seed: u64, key: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key);
        self.sample(&mut rng)
    }

    /// `E[f(alpha)]`: exact for atomic laws, adaptive quadrature (absolute
    /// tolerance `1e-13`) for the uniform law.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        match self {
            DisorderLaw::Constant { value, .. } => Ok(f(*value)),
            DisorderLaw::Discrete { values, probs, .. } => {
                Ok(values.iter().zip(probs).map(|(v, p)| p * f(*v)).sum())
            }
            DisorderLaw::Uniform { bound } => {
                let b = *bound;
                let v = numerics::integrate(&f, -b, b, 1e-13 * 2.0 * b)?;
                Ok(v / (2.0 * b))
            }
        }
    }

    /// Discrete law with `k` quantile cells for the uniform law (cell
    /// conditional means, equal masses); atomic laws are returned unchanged.
    pub fn binned(&self, k: usize) -> DisorderLaw {
        match self {
            DisorderLaw::Uniform { bound } => {
                let b = *bound;
                let values = (0..k)
                    .map(|i| -b + (2.0 * i as f64 + 1.0) * b / k as f64)
                    .collect();
                DisorderLaw::Discrete {
                    values,
                    probs: vec![1.0 / k as f64; k],
                    bound: b,
                }
            }
            other => other.clone(),
        }
    }

    /// Number of symbols used when tabulating functions of a disorder value.
    pub fn alphabet_size(&self, bins: usize) -> usize {
        match self {
            DisorderLaw::Constant { .. } => 1,
            DisorderLaw::Uniform { .. } => bins,
            DisorderLaw::Discrete { values, .. } => values.len(),
        }
    }

    /// Symbol of a disorder value: its cell for the uniform law, the index of
    /// the nearest support point for atomic laws.
    pub fn symbol(&self, value: f64, bins: usize) -> usize {
        match self {
            DisorderLaw::Constant { .. } => 0,
            DisorderLaw::Uniform { bound } => {
                let t = (value + bound) / (2.0 * bound) * bins as f64;
                (t.floor().max(0.0) as usize).min(bins - 1)
            }
            DisorderLaw::Discrete { values, .. } => values
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - value).abs().total_cmp(&(b.1 - value).abs()))
                .map(|(i, _)| i)
                .unwrap(),
        }
    }
}

/// A realization of the disorder on a torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderField {
    pub values: Vec<f64>,
    pub law: DisorderLaw,
    pub seed: u64,
}

impl DisorderField {
    /// Draw a field; site `x` gets `law.sample_keyed(seed, x)`, so the result
    /// does not depend on iteration order or thread count.
    pub fn sample(law: &DisorderLaw, geom: &TorusGeometry, seed: u64) -> Result<Self> {
        law.validate()?;
        let values = (0..geom.n_sites() as u64)
            .into_par_iter()
            .map(|x| law.sample_keyed(seed, x))
            .collect();
        Ok(Self {
            values,
            law: law.clone(),
            seed,
        })
    }

    /// Field with prescribed values (law recorded for bookkeeping).
    pub fn from_values(values: Vec<f64>, law: DisorderLaw) -> Self {
        Self {
            values,
            law,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn restrict(&self, sites: &[usize]) -> Vec<f64> {
        sites.iter().map(|&s| self.values[s]).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["site", "alpha"])?;
        for (i, v) in self.values.iter().enumerate() {
            wr.write_record([i.to_string(), format!("{v:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, law: DisorderLaw) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut values = Vec::new();
        for (expect, rec) in rd.records().enumerate() {
            let rec = rec?;
            let site: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad site index {:?}", &rec[0])))?;
            if site != expect {
                return Err(Error::InvalidArgument(format!(
                    "site indices must be consecutive, got {site} at row {expect}"
                )));
            }
            values.push(
                rec[1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad alpha {:?}", &rec[1])))?,
            );
        }
        Ok(Self::from_values(values, law))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_law_gives_constant_field() {
        let g = TorusGeometry::new(&[6, 6]).unwrap();
        let f = DisorderField::sample(&DisorderLaw::constant(0.0), &g, 3).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let g = TorusGeometry::new(&[50]).unwrap();
        let law = DisorderLaw::two_point(1.0);
        let a = DisorderField::sample(&law, &g, 11).unwrap();
        let b = DisorderField::sample(&law, &g, 11).unwrap();
        let c = DisorderField::sample(&law, &g, 12).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn uniform_mean_and_bounds() {
        let g = TorusGeometry::new(&[100, 100]).unwrap();
        let f = DisorderField::sample(&DisorderLaw::uniform(1.0), &g, 5).unwrap();
        let mean = f.values.iter().sum::<f64>() / f.len() as f64;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!(f.values.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn expectations() {
        assert_eq!(DisorderLaw::constant(0.3).expectation(|a| a).unwrap(), 0.3);
        assert_eq!(DisorderLaw::two_point(1.0).expectation(|a| a).unwrap(), 0.0);
        let m2 = DisorderLaw::uniform(1.0).expectation(|a| a * a).unwrap();
        assert!((m2 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_laws_rejected() {
        let bad = DisorderLaw::Discrete {
            values: vec![-1.0, 2.0],
            probs: vec![0.5, 0.5],
            bound: 1.0,
        };
        assert!(bad.validate().is_err());
        let bad = DisorderLaw::Discrete {
            values: vec![-1.0, 1.0],
            probs: vec![0.5, 0.6],
            bound: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn binning_uniform() {
        let law = DisorderLaw::uniform(1.0);
        let b = law.binned(5);
        b.validate().unwrap();
        assert_eq!(law.symbol(-1.0, 5), 0);
        assert_eq!(law.symbol(1.0, 5), 4);
        assert_eq!(law.symbol(0.0, 5), 2);
        assert!((b.expectation(|a| a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn single_site_histograms_agree_across_sites() {
        // site 0 and site 7 over many seeds
        let law = DisorderLaw::Discrete {
            values: vec![-1.0, 0.0, 1.0],
            probs: vec![0.2, 0.5, 0.3],
            bound: 1.0,
        };
        let n = 20_000;
        let mut h0 = [0usize; 3];
        let mut h7 = [0usize; 3];
        for seed in 0..n {
            h0[law.symbol(law.sample_keyed(seed, 0), 1)] += 1;
            h7[law.symbol(law.sample_keyed(seed, 7), 1)] += 1;
        }
        for k in 0..3 {
            let p = [0.2, 0.5, 0.3][k];
            let sd = (2.0 * p * (1.0 - p) / n as f64).sqrt();
            let diff = (h0[k] as f64 - h7[k] as f64) / n as f64;
            assert!(diff.abs() < 4.0 * sd);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = TorusGeometry::new(&[7]).unwrap();
        let law = DisorderLaw::uniform(1.0);
        let f = DisorderField::sample(&law, &g, 1).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = DisorderField::read_csv(buf.as_slice(), law).unwrap();
        assert_eq!(back.values, f.values);
    }
}
