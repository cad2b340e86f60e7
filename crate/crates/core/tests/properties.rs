use mpemba_core::analysis::{distance, kl_population, Measure};
use mpemba_core::evolve::{propagate_density, propagate_population, Method, TimeGrid};
use mpemba_core::generator::{coherence_generator, population_generator, symmetrize};
use mpemba_core::model::{
    make_bath, thermal_population, two_point_population, CoherenceBand, DensityState, PopulationState,
    TruncationPolicy,
};
use mpemba_core::moments::{evolve_population_moments, population_moments, stationary_moments};
use num_complex::Complex64;
use proptest::prelude::*;

const N: usize = 96;

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..12).prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
}

fn population(w: Vec<f64>) -> PopulationState {
    let mut w = w;
    w.resize(N, 0.0);
    PopulationState::from_weights(w, 1e-12).unwrap()
}

fn pure_state() -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..7)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect::<Vec<_>>())
        .prop_filter("nonzero", |v: &Vec<Complex64>| v.iter().map(|c| c.norm_sqr()).sum::<f64>() > 1e-2)
}

/// `|psi><psi|` on an `N`-level truncation.
fn projector(psi: &[Complex64]) -> DensityState {
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let psi: Vec<Complex64> = psi.iter().map(|c| c / norm.sqrt()).collect();
    let mut probs: Vec<f64> = psi.iter().map(|c| c.norm_sqr()).collect();
    probs.resize(N, 0.0);
    let diag = PopulationState::from_weights(probs, 1e-12).unwrap();
    let mut rho = DensityState::diagonal(diag);
    for s in 1..psi.len() {
        let mut band = CoherenceBand::zeros(s, N);
        for n in 0..psi.len() - s {
            band.amps[n] = psi[n] * psi[n + s].conj();
        }
        rho = rho.with_band(band).unwrap();
    }
    rho
}

fn grid() -> TimeGrid {
    TimeGrid::uniform(3.0, 31, true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_conserves_probability(n_th in 0.05f64..4.0, size in 8usize..200) {
        let bath = make_bath(1.0, 0.0, n_th).unwrap();
        let gen = population_generator(&bath, size).unwrap();
        let scale = gen.norm_inf();
        for c in gen.column_sums() {
            prop_assert!(c.abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn symmetrization_reproduces_the_generator(n_th in 0.05f64..4.0, s in 0usize..5, size in 8usize..150) {
        let bath = make_bath(1.0, 1.0, n_th).unwrap();
        let gen = if s == 0 {
            population_generator(&bath, size).unwrap()
        } else {
            coherence_generator(&bath, s, size).unwrap()
        };
        let sym = symmetrize(&gen).unwrap();
        let d = &sym.log_scale;
        for k in 0..gen.len() - 1 {
            // D M D^{-1} is symmetric: upper and lower map onto the same entry
            let up = gen.upper[k] * (d[k] - d[k + 1]).exp();
            let lo = gen.lower[k] * (d[k + 1] - d[k]).exp();
            prop_assert!((up - sym.offdiag[k]).abs() <= 1e-13 * sym.offdiag[k].abs());
            prop_assert!((lo - sym.offdiag[k]).abs() <= 1e-13 * sym.offdiag[k].abs());
        }
    }

    #[test]
    fn populations_stay_normalized_positive_and_approach_equilibrium(
        w in weights(),
        n_th in 0.2f64..3.0,
        spectral in any::<bool>(),
    ) {
        let bath = make_bath(1.0, 0.0, n_th).unwrap();
        let size = TruncationPolicy::default().thermal_size(n_th).unwrap().max(N);
        let p0 = population(w).resized(size).unwrap();
        let gen = population_generator(&bath, size).unwrap();
        let method = if spectral { Method::Spectral } else { Method::Ode };
        let traj = propagate_population(&p0, &gen, &grid(), method, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for st in &traj.states {
            prop_assert!((st.mass() - 1.0).abs() <= 1e-11);
            prop_assert!(st.probs().iter().all(|&p| p >= -1e-10));
            let d = kl_population(st, n_th);
            prop_assert!(d >= 0.0);
            prop_assert!(d <= prev + 1e-10, "KL rose from {prev} to {d}");
            prev = d;
        }
    }

    #[test]
    fn propagation_is_linear(a in weights(), b in weights(), mix in 0.0f64..1.0) {
        let bath = make_bath(1.0, 0.0, 1.5).unwrap();
        let size = TruncationPolicy::default().thermal_size(1.5).unwrap().max(N);
        let (pa, pb) = (population(a).resized(size).unwrap(), population(b).resized(size).unwrap());
        let mixed: Vec<f64> = pa.probs().iter().zip(pb.probs()).map(|(x, y)| mix * x + (1.0 - mix) * y).collect();
        let pm = PopulationState::new(mixed, 1e-12).unwrap();
        let gen = population_generator(&bath, size).unwrap();
        let run = |p: &PopulationState| propagate_population(p, &gen, &grid(), Method::Spectral, 1.0).unwrap();
        let (ta, tb, tm) = (run(&pa), run(&pb), run(&pm));
        for ((x, y), z) in ta.states.iter().zip(&tb.states).zip(&tm.states) {
            for n in 0..size {
                let want = mix * x.probs()[n] + (1.0 - mix) * y.probs()[n];
                prop_assert!((z.probs()[n] - want).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn density_evolution_keeps_trace_positivity_and_band_structure(
        psi in pure_state(),
        n_th in 0.2f64..3.0,
        omega0 in 0.0f64..4.0,
    ) {
        let bath = make_bath(1.0, omega0, n_th).unwrap();
        let size = TruncationPolicy::default().thermal_size(n_th).unwrap().max(N);
        let rho0 = projector(&psi).resized(size).unwrap();
        let bands: Vec<usize> = rho0.bands.keys().copied().collect();
        let traj = propagate_density(&rho0, &bath, &TimeGrid::uniform(2.0, 5, true).unwrap()).unwrap();
        for st in &traj.states {
            prop_assert!((st.trace() - 1.0).abs() <= 1e-11);
            prop_assert!(st.min_eigenvalue() >= -1e-10);
            prop_assert_eq!(st.bands.keys().copied().collect::<Vec<_>>(), bands.clone());
            for m in Measure::ALL {
                prop_assert!(distance(st, n_th, m).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn moment_hierarchy_conserves_mass(w in weights(), n_th in 0.2f64..3.0) {
        let q0 = population_moments(&population(w), 6);
        let traj = evolve_population_moments(&q0, n_th, 1.0, &grid());
        for q in &traj {
            prop_assert!((q.values[0].re - 1.0).abs() <= 1e-14);
        }
        let end = traj.last().unwrap();
        let stat = stationary_moments(n_th, 6);
        prop_assert!((end.values[1].re - stat.values[1].re).abs() <= 1e-2 * (1.0 + stat.values[1].re));
    }

    #[test]
    fn two_point_mean_is_exact(n_th in 0.1f64..5.0, extra in 0usize..20) {
        let n1 = n_th.ceil() as usize + extra;
        let p = two_point_population(n_th, n1, &TruncationPolicy::default()).unwrap();
        prop_assert!((p.mean() - n_th).abs() <= 1e-14 * n_th.max(1.0));
    }
}

#[test]
fn thermal_state_is_a_fixed_point_with_zero_distance() {
    let policy = TruncationPolicy::default();
    for n_th in [0.5, 2.0, 2.5] {
        let bath = make_bath(1.0, 1.0, n_th).unwrap();
        let p = thermal_population(n_th, &policy).unwrap();
        let gen = population_generator(&bath, p.n_max()).unwrap();
        let traj = propagate_population(&p, &gen, &grid(), Method::Spectral, 1.0).unwrap();
        for st in &traj.states {
            for (a, b) in st.probs().iter().zip(p.probs()) {
                assert!((a - b).abs() < 1e-11);
            }
        }
        let rho = DensityState::diagonal(p);
        for m in Measure::ALL {
            assert!(distance(&rho, n_th, m).unwrap() <= 1e-12, "{m:?}");
        }
    }
}

#[test]
fn stationary_moments_are_a_fixed_point() {
    let q = stationary_moments(2.0, 6);
    for v in evolve_population_moments(&q, 2.0, 1.0, &grid()) {
        for (a, b) in v.values.iter().zip(&q.values) {
            assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }
}
