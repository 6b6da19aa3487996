use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use consensus_irl::maxent::{empirical_state_visitation, train_maxent_irl_logged};
use consensus_irl::synth::{generate_population, generate_world, PopulationConfig};
use consensus_irl::{IrlConfig, Optimizer, RewardInit, Step, Trajectory, TrajectorySet, TransitionModel};

#[test]
fn empirical_mass_matches_a_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let trajectories: Vec<Trajectory> = (0..500)
        .map(|i| {
            let len = rng.random_range(1..15);
            let mut s = rng.random_range(0..12);
            let steps = (0..len)
                .map(|_| {
                    let next = rng.random_range(0..12);
                    let step = Step::new(s, rng.random_range(0..3), next);
                    s = next;
                    step
                })
                .collect();
            Trajectory {
                id: format!("t{i}"),
                steps,
                demographics: Default::default(),
                died_in_hospital: false,
            }
        })
        .collect();

    let mut counts = [0usize; 12];
    let mut total_visits = 0usize;
    for t in &trajectories {
        counts[t.steps[0].state] += 1;
        for step in &t.steps {
            counts[step.next_state] += 1;
        }
        total_visits += t.steps.len() + 1;
    }
    let set = TrajectorySet { tags: vec![], trajectories };
    let mass = empirical_state_visitation(&set, 12).unwrap().mass;
    for (m, c) in mass.iter().zip(counts) {
        assert!((m - c as f64 / 500.0).abs() < 1e-12);
    }
    let sum: f64 = mass.iter().sum();
    assert!((sum - total_visits as f64 / 500.0).abs() < 1e-9);
}

#[test]
fn training_reduces_the_gradient_for_both_optimizers() {
    let world = generate_world(30, 3, 4, 10, 8).unwrap();
    let population = generate_population(
        &world,
        &PopulationConfig {
            n_trajectories: 300,
            horizon: 10,
            corrupted_fraction: 0.0,
            seed: 9,
            ..PopulationConfig::default()
        },
    )
    .unwrap();
    let kernel = TransitionModel::estimate(&population.trajectories, 30, 3).unwrap();
    for (optimizer, init) in [(Optimizer::Sga, RewardInit::Gaussian), (Optimizer::ExpSga, RewardInit::Ones)] {
        let config = IrlConfig {
            optimizer,
            init,
            epochs: 150,
            seed: 1,
            ..IrlConfig::default()
        };
        let (reward, log) = train_maxent_irl_logged(&population.trajectories, &kernel, &config, "stage1").unwrap();
        assert!(reward.rewards.iter().all(|r| (-1.0..=1.0).contains(r)));
        assert_eq!(log[0].learning_rate, 0.2);
        assert!(log.last().unwrap().max_abs_gradient < log[0].max_abs_gradient);
        assert_eq!(reward.metadata.epochs_run, log.len());
        assert_eq!(reward.metadata.optimizer, optimizer.name());
    }
}
