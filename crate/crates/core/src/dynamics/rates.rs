//! Bond rate families `f_e(a, s, a', s')` and their validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which constraint a rate function breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Symmetry,
    DetailedBalance,
    Bounds,
}

/// A failed check at a specific argument `(a, s, a', s')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub axis: usize,
    pub a: f64,
    pub s: u8,
    pub a2: f64,
    pub s2: u8,
    pub lhs: f64,
    pub rhs: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?} violated on axis {} at (a={}, s={}, a'={}, s'={}): {} vs {}",
            self.kind, self.axis, self.a, self.s, self.a2, self.s2, self.lhs, self.rhs
        )
    }
}

/// Tabulated rates over a finite disorder alphabet, optionally one table per
/// lattice direction. Entry layout: `((i*2 + s)*K + j)*2 + s'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomRates<T> {
    pub alphabet: Vec<T>,
    /// One table (isotropic) or one per axis.
    pub tables: Vec<Vec<T>>,
}

impl<T: Real> CustomRates<T> {
    /// Build and validate; any violated entry is reported by name.
    pub fn new(alphabet: Vec<T>, tables: Vec<Vec<T>>) -> Result<Self> {
        let k = alphabet.len();
        if k == 0 || tables.is_empty() || tables.len() > 3 {
            return Err(Error::Rates("empty alphabet or wrong number of tables".into()));
        }
        if let Some(t) = tables.iter().find(|t| t.len() != 4 * k * k) {
            return Err(Error::Rates(format!(
                "table has {} entries, expected {}",
                t.len(),
                4 * k * k
            )));
        }
        let rates = Self { alphabet, tables };
        let family = RateFamily::CustomTable(rates.clone());
        let violations = family.validate_on(&rates.alphabet);
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Rates(msg.join("; ")));
        }
        Ok(rates)
    }

    /// Tabulate an arbitrary function on the alphabet (no validation).
    pub fn tabulate<F: Fn(T, u8, T, u8) -> T>(alphabet: Vec<T>, f: F) -> Self {
        let k = alphabet.len();
        let mut t = vec![T::zero(); 4 * k * k];
        for i in 0..k {
            for s in 0..2u8 {
                for j in 0..k {
                    for s2 in 0..2u8 {
                        t[Self::slot(k, i, s, j, s2)] = f(alphabet[i], s, alphabet[j], s2);
                    }
                }
            }
        }
        Self {
            alphabet,
            tables: vec![t],
        }
    }

    #[inline]
    pub fn slot(k: usize, i: usize, s: u8, j: usize, s2: u8) -> usize {
        ((i * 2 + s as usize) * k + j) * 2 + s2 as usize
    }

    fn symbol(&self, a: T) -> usize {
        let mut best = 0;
        let mut dist = T::infinity();
        for (i, &v) in self.alphabet.iter().enumerate() {
            let d = (v - a).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }

    fn lookup(&self, axis: usize, a: T, s: u8, a2: T, s2: u8) -> T {
        let table = &self.tables[axis.min(self.tables.len() - 1)];
        let k = self.alphabet.len();
        table[Self::slot(k, self.symbol(a), s, self.symbol(a2), s2)]
    }
}

/// Exchange rate across a bond as a function of the disorder and occupation
/// at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFamily<T> {
    /// `e^{-a}` for a jump out of a site of depth `a`, 1 otherwise.
    RandomTrap,
    /// Miller-Abrahams type: `min(1, e^{-(a-a')})` for a jump from `a` to `a'`.
    Metropolis,
    /// `1 + e^{-(a-a')(s-s')}`.
    LongJump,
    CustomTable(CustomRates<T>),
}

impl<T: Real> RateFamily<T> {
    /// `f_e(a, s, a', s')` for a bond along `axis`.
    #[inline]
    pub fn rate(&self, axis: usize, a: T, s: u8, a2: T, s2: u8) -> T {
        let one = T::one();
        match self {
            RateFamily::RandomTrap => match (s, s2) {
                (1, 0) => (-a).exp(),
                (0, 1) => (-a2).exp(),
                _ => one,
            },
            RateFamily::Metropolis => match (s, s2) {
                (1, 0) => one.min((a2 - a).exp()),
                (0, 1) => one.min((a - a2).exp()),
                _ => one,
            },
            RateFamily::LongJump => {
                let ds = T::of(s as f64 - s2 as f64);
                one + (-(a - a2) * ds).exp()
            }
            RateFamily::CustomTable(c) => c.lookup(axis, a, s, a2, s2),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RateFamily::RandomTrap => "random_trap",
            RateFamily::Metropolis => "metropolis",
            RateFamily::LongJump => "long_jump",
            RateFamily::CustomTable(_) => "custom_table",
        }
    }

    /// Whether `f(a,s,a',s') = f(-a,1-s,-a',1-s')`, the symmetry that maps
    /// density `m` with law `α` onto `1-m` with law `-α`.
    pub fn is_particle_hole_covariant(&self) -> bool {
        matches!(self, RateFamily::Metropolis | RateFamily::LongJump)
    }

    fn axes(&self) -> usize {
        match self {
            RateFamily::CustomTable(c) => c.tables.len(),
            _ => 1,
        }
    }

    /// Check symmetry, detailed balance and positivity at every pair of
    /// disorder values in `points` and every occupation pair.
    pub fn validate_on(&self, points: &[T]) -> Vec<Violation> {
        let tol = T::of(1e-12).max(T::epsilon() * T::of(16.0));
        let close = |x: T, y: T| (x - y).abs() <= tol * T::one().max(x.abs()).max(y.abs());
        let mut out = Vec::new();
        for axis in 0..self.axes() {
            for &a in points {
                for &a2 in points {
                    for s in 0..2u8 {
                        for s2 in 0..2u8 {
                            let f = self.rate(axis, a, s, a2, s2);
                            let mut push = |kind, rhs: T| {
                                out.push(Violation {
                                    kind,
                                    axis,
                                    a: a.as_f64(),
                                    s,
                                    a2: a2.as_f64(),
                                    s2,
                                    lhs: f.as_f64(),
                                    rhs: rhs.as_f64(),
                                })
                            };
                            if !(f > T::zero() && f.is_finite()) {
                                push(ViolationKind::Bounds, T::zero());
                                continue;
                            }
                            let sym = self.rate(axis, a2, s2, a, s);
                            if !close(f, sym) {
                                push(ViolationKind::Symmetry, sym);
                            }
                            let ds = T::of(s2 as f64 - s as f64);
                            let db = self.rate(axis, a, s2, a2, s) * (-(ds * (a2 - a))).exp();
                            if !close(f, db) {
                                push(ViolationKind::DetailedBalance, db);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Validation on a uniform grid of `n` points in `[-bound, bound]`
    /// (the alphabet for tabulated families).
    pub fn validate(&self, bound: T, n: usize) -> Vec<Violation> {
        match self {
            RateFamily::CustomTable(c) => self.validate_on(&c.alphabet),
            _ => self.validate_on(&grid(bound, n)),
        }
    }

    /// `(min, max)` of the rates over a grid of disorder values.
    pub fn bounds(&self, bound: T, n: usize) -> (T, T) {
        let pts = match self {
            RateFamily::CustomTable(c) => c.alphabet.clone(),
            _ => grid(bound, n),
        };
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for axis in 0..self.axes() {
            for &a in &pts {
                for &a2 in &pts {
                    for s in 0..2u8 {
                        for s2 in 0..2u8 {
                            let f = self.rate(axis, a, s, a2, s2);
                            lo = lo.min(f);
                            hi = hi.max(f);
                        }
                    }
                }
            }
        }
        (lo, hi)
    }
}

fn grid<T: Real>(bound: T, n: usize) -> Vec<T> {
    let n = n.max(2);
    (0..n)
        .map(|i| -bound + T::of(2.0 * i as f64 / (n - 1) as f64) * bound)
        .collect()
}
