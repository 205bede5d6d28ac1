use latgas::disorder::{DisorderField, DisorderLaw};
use latgas::dynamics::{bond_rate, reversibility_defect, DynState, RateFamily};
use latgas::gibbs::{annealed_lambda, empirical_lambda, CanonicalSpec, Configuration, MultiCanonical};
use latgas::greenkubo::{estimate_d, DisorderSampling, EtaMode, GreenKuboConfig, SupportSpec};
use latgas::hydro::{cfl_limit, solve_pde, DensityProfile, TimeScheme};
use latgas::greenkubo::{DiffusionCurve, DiffusionTable};
use latgas::lattice::{Region, TorusGeometry};
use latgas::observables::{ibp_check, psi_phi_local, PairedWindow};
use latgas::spectral::{dirichlet_form, moving_particles_constant, symmetrization_mismatch, SectorOperator};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family() -> impl Strategy<Value = RateFamily<f64>> {
    prop_oneof![
        Just(RateFamily::RandomTrap),
        Just(RateFamily::Metropolis),
        Just(RateFamily::LongJump)
    ]
}

fn law() -> impl Strategy<Value = DisorderLaw> {
    prop_oneof![
        (0.1f64..2.0).prop_map(DisorderLaw::uniform),
        (0.1f64..2.0).prop_map(DisorderLaw::two_point),
        (-1.0f64..1.0).prop_map(DisorderLaw::constant),
    ]
}

fn torus() -> impl Strategy<Value = TorusGeometry> {
    prop::collection::vec(3usize..7, 1..=3).prop_map(|dims| TorusGeometry::new(&dims).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn boxes_translate_with_their_centre(geom in torus(), x in 0usize..1000, z in 0usize..1000) {
        let x = x % geom.n_sites();
        let z = z % geom.n_sites();
        let r = (geom.min_side() - 1) / 2;
        let shift = geom.coords(z);
        let mut moved: Vec<usize> = geom.box_sites(x, r).unwrap().iter().map(|&s| geom.shift(s, &shift)).collect();
        let mut direct = geom.box_sites(geom.shift(x, &shift), r).unwrap();
        moved.sort();
        direct.sort();
        prop_assert_eq!(moved, direct);
    }

    #[test]
    fn paired_boxes_are_disjoint_cubes(d in 1usize..=3, half in 0usize..2, axis in 0usize..3, c in 0usize..1000) {
        let axis = axis % d;
        let n = 2 * half + 1;
        let geom = TorusGeometry::cubic(2 * n + 1, d).unwrap();
        let (a, b) = geom.paired_boxes(c % geom.n_sites(), n, axis).unwrap();
        prop_assert_eq!(a.len(), n.pow(d as u32));
        prop_assert_eq!(b.len(), n.pow(d as u32));
        prop_assert!(a.sites.iter().all(|s| !b.sites.contains(s)));
    }

    #[test]
    fn bonds_listed_once(geom in torus()) {
        let bonds = geom.bonds();
        prop_assert_eq!(geom.directed_pairs(), geom.dim() * geom.n_sites());
        let mut keys: Vec<(usize, usize)> = bonds.iter().map(|b| (b.x.min(b.y), b.x.max(b.y))).collect();
        let total = keys.len();
        keys.sort();
        keys.dedup();
        prop_assert_eq!(keys.len(), total);
        prop_assert_eq!(total, geom.dim() * geom.n_sites());
    }

    #[test]
    fn fields_bounded_and_deterministic(law in law(), geom in torus(), seed in any::<u64>()) {
        let a = DisorderField::sample(&law, &geom, seed).unwrap();
        let b = DisorderField::sample(&law, &geom, seed).unwrap();
        let bound = law.bound();
        prop_assert!(a.values.iter().all(|v| v.abs() <= bound));
        prop_assert_eq!(a.values, b.values);
    }

    #[test]
    fn chemical_potentials_increase(law in law(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alphas: Vec<f64> = (0..12).map(|_| law.sample(&mut rng)).collect();
        let grid: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        let ann: Vec<f64> = grid.iter().map(|&m| annealed_lambda(&law, m).unwrap()).collect();
        let emp: Vec<f64> = grid.iter().map(|&m| empirical_lambda(&alphas, m).unwrap()).collect();
        prop_assert!(ann.windows(2).all(|w| w[1] > w[0]));
        prop_assert!(emp.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn canonical_variance_is_comparable(seed in any::<u64>(), n in 3usize..=9, table in prop::collection::vec(-1.0f64..1.0, 8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let law = DisorderLaw::uniform(1.0);
        let alphas: Vec<f64> = (0..12).map(|_| law.sample(&mut rng)).collect();
        let ens = MultiCanonical { atoms: vec![alphas], counts: vec![n] };
        let support = [(0, 0), (0, 5), (0, 11)];
        let mom = ens.moments(&support, |e| table[(e[0] + 2 * e[1] + 4 * e[2]) as usize]).unwrap();
        prop_assert!(mom.canonical_variance() <= 10.0 * mom.grand_variance() + 1e-15);
    }

    #[test]
    fn rates_are_reversible(family in family(), alphas in prop::collection::vec(-2.0f64..2.0, 6), bits in 0u8..64, k in 0usize..6) {
        let geom = TorusGeometry::new(&[6]).unwrap();
        let eta: Vec<u8> = (0..6).map(|i| bits >> i & 1).collect();
        let b = geom.bonds()[k];
        prop_assert!(reversibility_defect(&family, &alphas, &eta, &b) <= 1e-12);
        prop_assert!(bond_rate(&family, &alphas, &eta, &b) > 0.0);
    }

    #[test]
    fn kmc_conserves_and_stays_coherent(family in family(), seed in any::<u64>()) {
        let geom = TorusGeometry::new(&[10, 6]).unwrap();
        let field = DisorderField::sample(&DisorderLaw::uniform(1.0), &geom, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = CanonicalSpec { alphas: field.values.clone(), n: 23 }.sample(&mut rng).unwrap();
        let mut state = DynState::new(geom, &field, family, config, 1.0).unwrap();
        state.run(20.0, &[], &mut |_: f64, _: &DynState| {}, &mut rng);
        prop_assert_eq!(state.configuration().count(), 23);
        prop_assert!(state.rate_coherence() <= 1e-9);
    }

    #[test]
    fn sector_operator_invariants(family in family(), alphas in prop::collection::vec(-1.5f64..1.5, 6), n in 1usize..6) {
        let region = Region::open_box(&[6]).unwrap();
        let op = SectorOperator::build(&region, &alphas, &family, n).unwrap();
        prop_assert!(op.row_sum_defect() <= 1e-12);
        prop_assert!(op.reversibility_defect() <= 1e-12);
        prop_assert!(symmetrization_mismatch(&op).unwrap() <= 1e-9);
        let f: Vec<f64> = (0..op.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut lf = vec![0.0; op.len()];
        op.apply_generator(&f, &mut lf);
        let neg: Vec<f64> = lf.iter().map(|v| -v).collect();
        let direct = op.inner(&f, &neg);
        prop_assert!((dirichlet_form(&op, &f) - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }

    #[test]
    fn moving_particles_bound(family in family(), alphas in prop::collection::vec(-1.0f64..1.0, 6), n in 1usize..6, x in 0usize..5, gap in 1usize..6) {
        let y = (x + gap).min(5);
        prop_assume!(y > x);
        let region = Region::open_box(&[6]).unwrap();
        let op = SectorOperator::build(&region, &alphas, &family, n).unwrap();
        let (lo, hi) = family.bounds(1.0, 41);
        let c = moving_particles_constant(&op, &family, x, y).unwrap();
        prop_assert!(c <= hi / lo * 4.0, "{} > {}", c, hi / lo * 4.0);
    }

    #[test]
    fn diffusion_matrix_symmetric_and_bounded(seed in 0u64..1000, m in 0.2f64..0.8) {
        let cfg = GreenKuboConfig {
            d: 2,
            law: DisorderLaw::two_point(0.8),
            family: RateFamily::Metropolis,
            support: SupportSpec::Star,
            bins: 5,
            n_dis: 30,
            seed,
            mode: EtaMode::Exact,
            sampling: DisorderSampling::Iid,
        };
        let est = estimate_d(&cfg, m).unwrap();
        prop_assert!((est.matrix[0][1] - est.matrix[1][0]).abs() <= 1e-10);
        let empty = estimate_d(&GreenKuboConfig { support: SupportSpec::Empty, ..cfg }, m).unwrap();
        for i in 0..2 {
            prop_assert!(est.infimum[i] <= empty.infimum[i] + 1e-12);
            prop_assert!(est.infimum[i] <= est.upper_bound[i] + 1e-12);
        }
    }

    #[test]
    fn pde_conserves_orders_and_bounds(amp in 0.01f64..0.2, shift in 0.0f64..0.1, phase in 0.0f64..1.0) {
        let mut t = DiffusionTable::constant(1, &[0.0, 0.25, 0.5, 0.75, 1.0], 1.0);
        for e in &mut t.estimates {
            e.matrix[0][0] = 0.3 + e.m * e.m;
        }
        let curve = DiffusionCurve::from_table(&t).unwrap();
        let n = 48;
        let tau = std::f64::consts::TAU;
        let lo = DensityProfile::from_fn(1, n, 0.0, |x| 0.4 + amp * (tau * (x[0] + phase)).cos());
        let hi = DensityProfile::from_fn(1, n, 0.0, |x| 0.4 + shift + amp * (tau * (x[0] + phase)).cos());
        let dt = cfl_limit(1, n, 1.3);
        let a = solve_pde(&lo, &curve, &[0.01, 0.02], dt, TimeScheme::Euler).unwrap();
        let b = solve_pde(&hi, &curve, &[0.01, 0.02], dt, TimeScheme::Euler).unwrap();
        prop_assert!(a.max_mass_drift <= 1e-12);
        for (p, q) in a.profiles.iter().zip(&b.profiles) {
            prop_assert!(p.values.iter().zip(&q.values).all(|(x, y)| x <= y));
            prop_assert!(p.min() >= lo.min() - 1e-15 && p.max() <= lo.max() + 1e-15);
        }
    }

    #[test]
    fn psi_has_zero_canonical_mean(seed in any::<u64>(), extra in 0usize..3, n_frac in 0.0f64..1.0) {
        let w = PairedWindow::new(1, 1, 3, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let law = DisorderLaw::uniform(1.5);
        let len = w.len() + extra;
        let alphas: Vec<f64> = (0..len).map(|_| law.sample(&mut rng)).collect();
        let n = (n_frac * len as f64) as usize;
        let window_alphas = &alphas[..w.len()];
        let spec = CanonicalSpec { alphas: alphas.clone(), n };
        let mean = spec.expectation(|eta| psi_phi_local(&w, window_alphas, &eta[..w.len()]).psi).unwrap();
        prop_assert!(mean.abs() <= 1e-12);
        let eta: Vec<u8> = (0..w.len()).map(|i| (seed >> i & 1) as u8).collect();
        let pp = psi_phi_local(&w, window_alphas, &eta);
        prop_assert!((pp.psi + pp.phi - pp.difference).abs() <= 2.0 * f64::EPSILON);
        let flat = vec![0.4; w.len()];
        prop_assert_eq!(psi_phi_local(&w, &flat, &eta).phi.abs() <= 1e-15, true);
    }

    #[test]
    fn long_jump_identity(alphas in prop::collection::vec(-2.0f64..2.0, 2..7), n in 0usize..7, x in 0usize..7, y in 0usize..7, table in prop::collection::vec(-1.0f64..1.0, 128)) {
        let l = alphas.len();
        let (n, x, y) = (n.min(l), x % l, y % l);
        let g = |eta: &[u8]| table[eta.iter().enumerate().map(|(i, &v)| (v as usize) << i).sum::<usize>()];
        prop_assert!(ibp_check(&alphas, n, x, y, g).unwrap() <= 1e-12);
    }
}

#[test]
fn rate_structure_coherent_after_a_million_events() {
    let geom = TorusGeometry::new(&[32, 32]).unwrap();
    let field = DisorderField::sample(&DisorderLaw::uniform(1.0), &geom, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = Configuration::from_occupations((0..geom.n_sites()).map(|i| (i % 3 == 0) as u8).collect());
    let mut state = DynState::new(geom, &field, RateFamily::LongJump, config, 1.0).unwrap();
    while state.events() < 1_000_000 {
        state.run(state.time() + 50.0, &[], &mut |_: f64, _: &DynState| {}, &mut rng);
    }
    assert!(state.rate_coherence() <= 1e-9);
}
