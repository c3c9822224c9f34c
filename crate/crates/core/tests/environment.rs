use proptest::prelude::*;
use sdperl_core::classifier::Oracle;
use sdperl_core::environment::{seeded_count, steps_per_episode, Environment, FeatureSpace, Mode};
use sdperl_core::pheromone::PheromoneTable;
use sdperl_core::rng::seeded;
use sdperl_core::synthetic::{generate, SyntheticConfig};

fn data() -> (sdperl_core::dataset::FeatureMatrix, sdperl_core::dataset::FeatureMatrix) {
    let cfg = SyntheticConfig { rows: 120, features: 12, informative: 3, ..Default::default() };
    let d = generate(&cfg).unwrap();
    (d.train_version, d.test_version)
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[test]
fn episode_lengths() {
    assert_eq!(seeded_count(20), 6);
    assert_eq!(steps_per_episode(20, true), 14);
    assert_eq!(steps_per_episode(20, false), 20);
    assert_eq!(seeded_count(2), 0);
    assert_eq!(steps_per_episode(2, true), 2);
}

#[test]
fn unseeded_episode_scores_match_oracle_and_telescope() {
    let (train, eval) = data();
    let oracle = Oracle::default();
    let env = Environment::new(FeatureSpace::simple(12).unwrap(), train.clone(), eval.clone(), oracle, 3)
        .unwrap();
    let mut table = PheromoneTable::new(12).unwrap();
    let mut state = env.reset(&table, &mut seeded(0)).unwrap();
    assert_eq!((state.initial_score, state.filled()), (0.0, 0));
    let mut rewards = 0.0;
    for (step, f) in [4, 7, 1].into_iter().enumerate() {
        let out = env.step(&mut state, &one_hot(12, f), Some(&mut table)).unwrap();
        assert_eq!(out.feature, f);
        let want = oracle.assess(&train, &eval, &state.selected).unwrap().f1;
        assert_eq!(out.score, want);
        rewards += out.td_reward;
        assert_eq!(out.done, step == 2);
    }
    assert!((rewards - (state.score - state.initial_score)).abs() < 1e-12);
    assert_eq!(table.total_count(), 3);
    assert!((table.total_reward() - rewards).abs() < 1e-12);
    assert!(env.step(&mut state, &one_hot(12, 0), None).is_err());
}

#[test]
fn seeded_reset_scores_the_seed_subset_without_touching_the_table() {
    let (train, eval) = data();
    let oracle = Oracle::default();
    let env = Environment::new(FeatureSpace::simple(12).unwrap(), train.clone(), eval.clone(), oracle, 9)
        .unwrap()
        .with_seeding(true, 0.05);
    let mut table = PheromoneTable::new(12).unwrap();
    table.update(5, 0.4).unwrap();
    let before = table.clone();
    let state = env.reset(&table, &mut seeded(1)).unwrap();
    assert_eq!(table, before);
    assert_eq!(state.seeded_count, 3);
    assert_eq!(state.selected.len(), 3);
    assert_eq!(state.selected[0], 5);
    let want = oracle.assess(&train, &eval, &state.selected).unwrap().f1;
    assert_eq!(state.initial_score, want);
    assert_eq!(state.remaining(), 6);
    assert_eq!(env.steps_per_episode(), 6);
    // slots hold the one-hot vectors of the seeds, the rest stay zero
    for (row, &f) in state.selected.iter().enumerate() {
        assert_eq!(state.slots.row(row), one_hot(12, f));
    }
    assert!(state.slots.row(3).iter().all(|&x| x == 0.0));
}

#[test]
fn custom_space_resolves_own_vectors() {
    let vectors: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let space = FeatureSpace::from_vectors(vectors.clone()).unwrap();
    assert_eq!(space.mode(), Mode::Custom);
    assert_eq!(space.dim(), 2);
    for (i, v) in vectors.iter().enumerate() {
        assert_eq!(space.resolve(v, &[]).unwrap(), i);
    }
    assert!(space.resolve(&[1.0], &[]).is_err());
    assert!(space.resolve(&[f64::NAN, 0.0], &[]).is_err());
}

#[test]
fn environment_checks_shapes() {
    let (train, eval) = data();
    let o = Oracle::default();
    assert!(Environment::new(FeatureSpace::simple(11).unwrap(), train.clone(), eval.clone(), o, 3).is_err());
    assert!(Environment::new(FeatureSpace::simple(12).unwrap(), train.clone(), eval.clone(), o, 0).is_err());
    assert!(Environment::new(FeatureSpace::simple(12).unwrap(), train, eval, o, 13).is_err());
}

proptest! {
    #[test]
    fn nearest_unselected_by_brute_force(
        vectors in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..15),
        action in prop::collection::vec(-6.0f64..6.0, 3),
        taken in prop::collection::vec(any::<bool>(), 15),
    ) {
        let n = vectors.len();
        let selected: Vec<usize> = (0..n).filter(|&i| taken[i]).collect();
        prop_assume!(selected.len() < n);
        let space = FeatureSpace::from_vectors(vectors.clone()).unwrap();
        let got = space.resolve(&action, &selected).unwrap();
        prop_assert!(!selected.contains(&got));
        let d = |i: usize| vectors[i].iter().zip(&action).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        for i in (0..n).filter(|i| !selected.contains(i)) {
            prop_assert!(d(got) < d(i) || (d(got) == d(i) && got <= i));
        }
    }

    #[test]
    fn argmax_unselected_by_brute_force(
        action in prop::collection::vec(-3.0f64..3.0, 2..20),
        taken in prop::collection::vec(any::<bool>(), 20),
    ) {
        let n = action.len();
        let selected: Vec<usize> = (0..n).filter(|&i| taken[i]).collect();
        prop_assume!(selected.len() < n);
        let got = FeatureSpace::simple(n).unwrap().resolve(&action, &selected).unwrap();
        for i in (0..n).filter(|i| !selected.contains(i)) {
            prop_assert!(action[got] > action[i] || (action[got] == action[i] && got <= i));
        }
    }
}
