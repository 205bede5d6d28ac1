//! The exchange generator on a bond set, instantaneous currents and the
//! gradient-condition diagnostic.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::disorder::DisorderLaw;
use crate::dynamics::rates::RateFamily;
use crate::lattice::Bond;

/// Rate of bond `b` in configuration `eta`.
#[inline]
pub fn bond_rate(family: &RateFamily<f64>, alphas: &[f64], eta: &[u8], b: &Bond) -> f64 {
    family.rate(b.axis, alphas[b.x], eta[b.x], alphas[b.y], eta[b.y])
}

/// `Σ_b c_b(η) (f(η^b) − f(η))` over `bonds`.
pub fn apply_generator<F: Fn(&[u8]) -> f64>(
    f: F,
    eta: &[u8],
    bonds: &[Bond],
    alphas: &[f64],
    family: &RateFamily<f64>,
) -> f64 {
    let base = f(eta);
    let mut swapped = eta.to_vec();
    let mut total = 0.0;
    for b in bonds {
        if eta[b.x] == eta[b.y] {
            continue;
        }
        swapped.swap(b.x, b.y);
        total += bond_rate(family, alphas, eta, b) * (f(&swapped) - base);
        swapped.swap(b.x, b.y);
    }
    total
}

/// Instantaneous current through the oriented bond `x → y`:
/// `c_{x,y}(η)(η_x − η_y)`.
pub fn current(eta: &[u8], alphas: &[f64], family: &RateFamily<f64>, b: &Bond) -> f64 {
    bond_rate(family, alphas, eta, b) * (eta[b.x] as f64 - eta[b.y] as f64)
}

/// `|c_b(η)μ(η) − c_b(η^b)μ(η^b)|` relative to the larger side, for the
/// product weight `μ(η) ∝ exp(Σ α_x η_x)`.
pub fn reversibility_defect(family: &RateFamily<f64>, alphas: &[f64], eta: &[u8], b: &Bond) -> f64 {
    let mut swapped = eta.to_vec();
    swapped.swap(b.x, b.y);
    let ln_w = |e: &[u8]| -> f64 { e.iter().zip(alphas).map(|(&o, &a)| o as f64 * a).sum() };
    let lhs = bond_rate(family, alphas, eta, b) * ln_w(eta).exp();
    let rhs = bond_rate(family, alphas, &swapped, b) * ln_w(&swapped).exp();
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
}

/// Root-mean-square residual of the best least-squares fit of the current
/// `j_{0,1}` on a chain by a lattice gradient `h(τ_0·) − h(τ_1·)`, with `h` a
/// function of `(α_0, α_1, η_0, η_1)` drawn from a fixed feature basis.
///
/// For constant disorder the current is exactly such a gradient, so the
/// residual vanishes up to rounding; for genuinely disordered fields it does
/// not.
pub fn gradient_residual<R: Rng + ?Sized>(
    family: &RateFamily<f64>,
    law: &DisorderLaw,
    disorder_samples: usize,
    rng: &mut R,
) -> f64 {
    let features = |a0: f64, a1: f64| -> Vec<f64> {
        vec![
            1.0,
            a0,
            a1,
            (-a0).exp(),
            (-a1).exp(),
            a0.exp(),
            a1.exp(),
            (a1 - a0).exp().min(1.0),
            (a0 - a1).exp().min(1.0),
        ]
    };
    let nf = features(0.0, 0.0).len();
    // h = Σ_k θ_k φ_k(α0,α1) · monomial(η0,η1), monomials: η0, η1, η0η1
    let n_params = 3 * nf;
    let basis = |a0: f64, a1: f64, s0: u8, s1: u8| -> Vec<f64> {
        let ph = features(a0, a1);
        let mons = [s0 as f64, s1 as f64, (s0 * s1) as f64];
        let mut v = Vec::with_capacity(n_params);
        for m in mons {
            v.extend(ph.iter().map(|p| p * m));
        }
        v
    };
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for _ in 0..disorder_samples {
        let a: Vec<f64> = (0..3).map(|_| law.sample(rng)).collect();
        for mask in 0u8..8 {
            let eta: Vec<u8> = (0..3).map(|i| mask >> i & 1).collect();
            let bond = Bond { x: 0, y: 1, axis: 0 };
            let j = current(&eta, &a, family, &bond);
            let left = basis(a[0], a[1], eta[0], eta[1]);
            let right = basis(a[1], a[2], eta[1], eta[2]);
            rows.push(left.iter().zip(&right).map(|(l, r)| l - r).collect::<Vec<_>>());
            rhs.push(j);
        }
    }
    let m = DMatrix::from_fn(rows.len(), n_params, |i, k| rows[i][k]);
    let b = DVector::from_vec(rhs);
    let svd = m.clone().svd(true, true);
    let theta = svd.solve(&b, 1e-10).expect("svd solve");
    let resid = &m * theta - &b;
    (resid.norm_squared() / b.len() as f64).sqrt()
}
