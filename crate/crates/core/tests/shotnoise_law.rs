//! Distributional checks of the truncated series against moments computed
//! by quadrature, plus structural properties of sampled skeletons.

use fbsde_core::levy::{retained_moment, Atom, LevyModel};
use fbsde_core::rng::{Purpose, RngStream};
use fbsde_core::shotnoise::{JumpSkeleton, Method, SeriesRepresentation, ShotNoiseSampler};
use fbsde_core::stats;
use proptest::prelude::*;

fn rep(model: &LevyModel, method: Method) -> SeriesRepresentation {
    SeriesRepresentation::new(model, method).unwrap()
}

fn all_representations() -> Vec<SeriesRepresentation> {
    let gamma = LevyModel::gamma(1.0, 1.0).unwrap();
    let ts = LevyModel::tempered_stable(0.5, 1.0, 1.0).unwrap();
    let mut out: Vec<_> = [
        Method::InverseLevy,
        Method::Rejection,
        Method::Thinning,
        Method::Bondesson,
    ]
    .into_iter()
    .map(|m| rep(&gamma, m))
    .collect();
    out.push(rep(&ts, Method::RosinskiTemperedStable));
    out
}

fn draw(rep: &SeriesRepresentation, level: f64, horizon: f64, paths: u64, seed: u64) -> Vec<JumpSkeleton> {
    let sampler = ShotNoiseSampler::new(rep, level, horizon).unwrap();
    (0..paths)
        .map(|m| sampler.sample(&mut RngStream::new(seed, m, Purpose::Jumps)).unwrap())
        .collect()
}

#[test]
fn epoch_count_is_poisson_with_mean_n_times_horizon() {
    // Poisson(5): variance 5, fourth central moment 5 (1 + 3 · 5) = 80.
    let m = 10_000.0f64;
    for rep in all_representations() {
        for (level, horizon) in [(5.0, 1.0), (2.5, 2.0)] {
            let counts: Vec<f64> = draw(&rep, level, horizon, 10_000, 3)
                .iter()
                .map(|s| s.count() as f64)
                .collect();
            let (mean, var) = (stats::mean(&counts), stats::variance(&counts));
            let se_mean = (5.0 / m).sqrt();
            let se_var = ((80.0 - 25.0) / m).sqrt();
            assert!(
                (mean - 5.0).abs() <= 3.0 * se_mean,
                "{:?}: mean count {mean}",
                rep.method()
            );
            assert!(
                (var - 5.0).abs() <= 3.0 * se_var,
                "{:?}: count variance {var}",
                rep.method()
            );
        }
    }
}

#[test]
fn mean_jump_sum_matches_retained_first_moment() {
    for rep in all_representations() {
        for level in [1.0, 4.0] {
            let sums: Vec<f64> = draw(&rep, level, 1.0, 20_000, 5)
                .iter()
                .map(|s| s.jump_sum(0.0, 1.0))
                .collect();
            let est = stats::mean_estimate(&sums);
            let target = retained_moment(&rep, level, 1.0).unwrap();
            assert!(
                (est.mean - target).abs() <= 4.0 * est.std_error,
                "{:?} at n = {level}: {} vs {target} (se {})",
                rep.method(),
                est.mean,
                est.std_error
            );
        }
    }
}

#[test]
fn bondesson_mean_matches_closed_form() {
    let gamma = LevyModel::gamma(1.0, 1.0).unwrap();
    let sums: Vec<f64> = draw(&rep(&gamma, Method::Bondesson), 3.0, 1.0, 20_000, 6)
        .iter()
        .map(|s| s.jump_sum(0.0, 1.0))
        .collect();
    let est = stats::mean_estimate(&sums);
    let target = 1.0 - (-3.0f64).exp();
    assert!(
        (est.mean - target).abs() <= 4.0 * est.std_error,
        "{} vs {target}",
        est.mean
    );
}

#[test]
fn compound_poisson_reproduces_atom_frequencies() {
    // Total mass 2 over unit time: each atom arrives at rate equal to its weight.
    let model = LevyModel::compound_poisson(vec![
        Atom { size: 2.0, weight: 0.5 },
        Atom {
            size: -1.0,
            weight: 1.5,
        },
    ])
    .unwrap();
    let sks = draw(&rep(&model, Method::InverseLevy), 3.0, 1.0, 20_000, 7);
    let big: Vec<f64> = sks
        .iter()
        .map(|s| s.jumps().iter().filter(|j| j.size == 2.0).count() as f64)
        .collect();
    let small: Vec<f64> = sks
        .iter()
        .map(|s| s.jumps().iter().filter(|j| j.size == -1.0).count() as f64)
        .collect();
    assert!(sks
        .iter()
        .all(|s| s.jumps().iter().all(|j| j.size == 2.0 || j.size == -1.0)));
    let (b, s) = (stats::mean_estimate(&big), stats::mean_estimate(&small));
    assert!((b.mean - 0.5).abs() <= 4.0 * b.std_error, "rate of size 2: {}", b.mean);
    assert!((s.mean - 1.5).abs() <= 4.0 * s.std_error, "rate of size -1: {}", s.mean);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn skeletons_are_sorted_and_inside_the_horizon(seed in 0u64..1_000, level in 0.1f64..20.0, horizon in 0.1f64..3.0, which in 0usize..5) {
        let rep = &all_representations()[which];
        let sk = &draw(rep, level, horizon, 1, seed)[0];
        for pair in sk.jumps().windows(2) {
            prop_assert!(pair[0].time < pair[1].time);
        }
        for j in sk.jumps() {
            prop_assert!(j.time > 0.0 && j.time <= horizon);
            prop_assert!(j.size > 0.0 && j.size.is_finite());
            prop_assert!(j.epoch <= level * horizon);
        }
    }

    #[test]
    fn lower_levels_see_a_prefix_of_the_epochs(seed in 0u64..1_000, low in 0.1f64..10.0, extra in 0.0f64..10.0, which in 0usize..5) {
        let rep = &all_representations()[which];
        let high = low + extra;
        let coarse = &draw(rep, low, 1.0, 1, seed)[0];
        let fine = &draw(rep, high, 1.0, 1, seed)[0];
        prop_assert!(coarse.count() <= fine.count());
        for j in coarse.jumps() {
            prop_assert!(fine.jumps().iter().any(|f| f == j));
        }
        let restricted = fine.restrict(low, coarse.zeta1()).unwrap();
        prop_assert_eq!(restricted.jumps(), coarse.jumps());
        prop_assert_eq!(restricted.count(), coarse.count());
    }
}
