mod common;

use mnl_bandit::assortment::argmax_assortment;
use mnl_bandit::estimation::{
    mle_fit, mnl_gradient, online_newton_step, round_gradient, ConfidenceConfig, GramMatrix, MleOptions, SampleLog,
};
use mnl_bandit::model::{
    choice_probabilities, revenue_from_utilities, sample_choice, Assortment, Choice, ChoiceOutcome, ContextSlate,
    MnlParameter,
};
use mnl_bandit::nalgebra::DVector;
use mnl_bandit::policies::{
    policy_factory, Algorithm, DblMnl, EpisodeSchedule, Phase, Policy, PolicyConfig, SupCbMnl, UcbMnl, UcbMnlOns,
};
use mnl_bandit::rng::stream;
use mnl_bandit::simulator::{run_replication, Environment, EnvironmentConfig};
use mnl_bandit::MnlError;

fn environment(n: usize, k: usize, d: usize, horizon: usize, seed: u64) -> Environment {
    Environment::new(EnvironmentConfig::new(n, k, d, horizon, seed)).unwrap()
}

fn config(env: &Environment, algorithm: Algorithm) -> PolicyConfig {
    let c = env.config();
    let confidence = ConfidenceConfig::new(0.25, c.sigma0(), 0.05).unwrap();
    PolicyConfig::new(algorithm, c.horizon, c.capacity, confidence)
}

/// Plays one round; returns the slate, the offer and the outcome.
fn play<P: Policy + ?Sized>(
    env: &mut Environment,
    policy: &mut P,
    t: usize,
) -> (ContextSlate, Assortment, ChoiceOutcome) {
    let slate = env.next_slate(t).unwrap();
    let offer = policy.select(&slate).unwrap();
    let u = env.next_choice_draw();
    let outcome = sample_choice(&slate, &offer, env.theta_star(), u).unwrap();
    policy.update(&slate, &offer, &outcome).unwrap();
    (slate, offer, outcome)
}

fn offered_features(slate: &ContextSlate, offer: &Assortment) -> Vec<DVector<f64>> {
    offer.items().iter().map(|&i| slate.feature(i).clone()).collect()
}

#[test]
fn every_algorithm_runs_a_short_horizon() {
    for algorithm in Algorithm::ALL {
        let mut env = environment(10, 2, 3, 100, 5);
        let rng = stream(5, algorithm.tag(), 0);
        let mut policy = policy_factory(&config(&env, algorithm), 10, 3, rng).unwrap();
        for t in 1..=100 {
            let (_, offer, _) = play(&mut env, policy.as_mut(), t);
            assert!(!offer.is_empty() && offer.len() <= 2);
        }
        assert_eq!(policy.algorithm(), algorithm);
        assert!(policy.estimate().is_some(), "{algorithm} has no estimate after 100 rounds");
    }
}

#[test]
fn replays_are_identical() {
    for algorithm in Algorithm::ALL {
        let env_cfg = EnvironmentConfig::new(10, 2, 3, 150, 42);
        let confidence = ConfidenceConfig::new(0.25, env_cfg.sigma0(), 0.05).unwrap();
        let cfg = PolicyConfig::new(algorithm, 150, 2, confidence);
        let a = run_replication(&env_cfg, &cfg, 3, false).unwrap();
        let b = run_replication(&env_cfg, &cfg, 3, false).unwrap();
        assert_eq!(a.records, b.records, "{algorithm}");
        assert_eq!(a.parameter_updates, b.parameter_updates);
    }
}

#[test]
fn zero_initialization_is_rejected() {
    let env = environment(10, 2, 3, 100, 1);
    for algorithm in [Algorithm::UcbMnl, Algorithm::UcbMnlOns, Algorithm::SupCbMnl] {
        let mut cfg = config(&env, algorithm);
        cfg.t0 = Some(0);
        let err = policy_factory(&cfg, 10, 3, stream(0, "x", 0)).err().unwrap();
        assert!(matches!(err, MnlError::Config(_)), "{algorithm}: {err}");
    }
    assert!(matches!("NOPE".parse::<Algorithm>(), Err(MnlError::UnknownAlgorithm(_))));
}

#[test]
fn ucb_state_matches_its_log() {
    let (n, k, d, horizon) = (20, 4, 4, 300);
    let mut env = environment(n, k, d, horizon, 9);
    let mut cfg = config(&env, Algorithm::UcbMnl);
    cfg.t0 = Some(10);
    let mut ucb = UcbMnl::new(cfg, n, d, stream(9, "ucb", 0)).unwrap();
    assert_eq!(ucb.phase(), Phase::Init);
    let mut features = Vec::new();
    for t in 1..=horizon {
        let (slate, offer, _) = play(&mut env, &mut ucb, t);
        if t <= 10 {
            assert_eq!(offer.len(), k, "initialization offers have exactly K items");
        }
        features.extend(offered_features(&slate, &offer));
        assert_eq!(ucb.log().len(), t);
        let batch = GramMatrix::from_vectors(d, features.iter());
        assert!((ucb.gram().matrix() - batch.matrix()).amax() <= 1e-10);
        if t >= 10 && !ucb.round_info().flags.contains(&"mle_not_converged") {
            let g = mnl_gradient(ucb.log(), ucb.estimate().unwrap()).unwrap();
            assert!(g.norm() <= MleOptions::default().tol, "round {t}: gradient {}", g.norm());
        }
    }
    assert_eq!(ucb.phase(), Phase::Learn);
    let cold = mle_fit(ucb.log(), &MnlParameter::zeros(d), &MleOptions::default()).unwrap();
    assert!(cold.converged);
    assert!((cold.theta_hat.values() - ucb.estimate().unwrap().values()).norm() <= 1e-8);
}

#[test]
fn warm_and_cold_fits_agree_on_random_traces() {
    for seed in 0..20 {
        let mut rng = common::rng(seed);
        let theta = common::random_theta(&mut rng, 4, 1.0);
        let log = common::simulated_log(&mut rng, 200, 10, 3, &theta);
        let opts = MleOptions::default();
        let prefix = log.restrict(&(1..=100).collect::<Vec<_>>());
        let warm_start = mle_fit(&prefix, &MnlParameter::zeros(4), &opts).unwrap().theta_hat;
        let warm = mle_fit(&log, &warm_start, &opts).unwrap();
        let cold = mle_fit(&log, &MnlParameter::zeros(4), &opts).unwrap();
        assert!(warm.converged && cold.converged);
        assert!((warm.theta_hat.values() - cold.theta_hat.values()).norm() <= 1e-8);
    }
}

#[test]
fn zero_radius_is_greedy() {
    let (n, k, d) = (15, 3, 4);
    let mut env = environment(n, k, d, 200, 12);
    let mut cfg = config(&env, Algorithm::UcbMnl);
    cfg.radius_scale = 0.0;
    let mut ucb = UcbMnl::new(cfg, n, d, stream(12, "ucb", 0)).unwrap();
    let t0 = ucb.t0();
    for t in 1..=200 {
        let slate = env.next_slate(t).unwrap();
        let before = ucb.estimate().cloned();
        let offer = ucb.select(&slate).unwrap();
        if t > t0 {
            let theta = before.expect("estimate after initialization");
            let greedy = argmax_assortment(&slate.utilities(&theta).unwrap(), slate.revenues(), k).unwrap();
            assert_eq!(offer, greedy, "round {t}");
        }
        let u = env.next_choice_draw();
        let outcome = sample_choice(&slate, &offer, env.theta_star(), u).unwrap();
        ucb.update(&slate, &offer, &outcome).unwrap();
    }
}

#[test]
fn online_variant_keeps_no_history() {
    let (n, k, d) = (20, 4, 4);
    let mut env = environment(n, k, d, 400, 3);
    let mut cfg = config(&env, Algorithm::UcbMnlOns);
    cfg.t0 = Some(12);
    let mut ons = UcbMnlOns::new(cfg, n, d, stream(3, "ons", 0)).unwrap();
    for t in 1..=400 {
        play(&mut env, &mut ons, t);
        if t < 12 {
            assert_eq!(ons.retained_samples(), t);
        } else {
            assert_eq!(ons.retained_samples(), 0, "round {t}");
        }
    }
    assert_eq!(ons.parameter_updates(), 400 - 12 + 1);
}

#[test]
fn online_step_fixed_point_under_expected_responses() {
    let mut rng = common::rng(77);
    let d = 4;
    let theta = common::random_theta(&mut rng, d, 1.0);
    let slate = common::random_slate(&mut rng, 1, 6, d, false);
    let a = Assortment::new(vec![0, 2, 5], 3, 6).unwrap();
    let p = choice_probabilities(&slate, &a, &theta).unwrap();
    let mut expected = DVector::zeros(d);
    let choices = a.items().iter().map(|&i| Choice::Item(i)).chain([Choice::Outside]);
    for (choice, weight) in choices.zip(&p) {
        let outcome = ChoiceOutcome::new(&a, choice).unwrap();
        expected += round_gradient(&slate, &a, &outcome, &theta).unwrap() * *weight;
    }
    let gram = GramMatrix::from_vectors(d, offered_features(&slate, &a).iter());
    let mut gram = gram;
    gram.add(&GramMatrix::from_matrix(mnl_bandit::nalgebra::DMatrix::identity(d, d)).unwrap());
    let next = online_newton_step(&theta, &gram, &expected).unwrap();
    assert!((next.values() - theta.values()).norm() <= 1e-14);
}

#[test]
fn online_estimate_tracks_the_mle() {
    let (n, k, d, horizon) = (20, 5, 5, 2000);
    let mut total = 0.0;
    for seed in 0..20 {
        let mut env = environment(n, k, d, horizon, 500 + seed);
        let cfg = config(&env, Algorithm::UcbMnlOns);
        let mut ons = UcbMnlOns::new(cfg, n, d, stream(500 + seed, "ons", 0)).unwrap();
        let mut log = SampleLog::new(d);
        for t in 1..=horizon {
            let (slate, offer, outcome) = play(&mut env, &mut ons, t);
            log.push(&slate, &offer, &outcome).unwrap();
        }
        let mle = mle_fit(&log, &MnlParameter::zeros(d), &MleOptions::default()).unwrap();
        total += (ons.estimate().unwrap().values() - mle.theta_hat.values()).norm();
    }
    let mean = total / 20.0;
    assert!(mean <= 0.5, "mean distance between online and exact estimates {mean}");
}

#[test]
fn episode_boundaries_double() {
    let ends: Vec<usize> = (1..=5).map(|k| EpisodeSchedule::boundary(4, k)).collect();
    assert_eq!(ends, vec![4, 8, 16, 32, 64]);
    for k in 2..=5 {
        assert_eq!(ends[k - 1] - ends[k - 2], ends[k - 1] / 2);
    }
}

#[test]
fn dbl_freezes_previous_episode() {
    let (n, k, d, horizon) = (20, 4, 4, 1000);
    let mut env = environment(n, k, d, horizon, 17);
    let cfg = config(&env, Algorithm::DblMnl);
    let sigma0 = cfg.confidence.sigma0;
    let mut dbl = DblMnl::new(cfg, n, d, stream(17, "dbl", 0)).unwrap();
    let mut episode = 0;
    let mut current: Vec<DVector<f64>> = Vec::new();
    let mut explored = 0;
    for t in 1..=horizon {
        let slate = env.next_slate(t).unwrap();
        let offer = dbl.select(&slate).unwrap();
        let schedule = dbl.schedule();
        if schedule.episode() != episode {
            episode = schedule.episode();
            if episode > 1 {
                let batch = GramMatrix::from_vectors(d, current.iter());
                assert!((dbl.frozen_gram().matrix() - batch.matrix()).amax() <= 1e-10, "episode {episode}");
            }
            current.clear();
        }
        assert_eq!(EpisodeSchedule::episode_of(d, t), episode);
        let flags = dbl.round_info().flags;
        if t <= d {
            assert_eq!(flags, vec!["init"]);
            assert_eq!(offer.len(), k);
        }
        if episode > 1 && !dbl.in_fallback() {
            let budget = schedule.sampling_budget();
            let tail = (schedule.end() - t) as f64 <= budget;
            let thin = dbl.live_gram().min_eigenvalue() <= k as f64 * budget * sigma0 / 2.0;
            assert_eq!(flags.contains(&"explore"), tail && thin, "round {t}");
            explored += usize::from(tail && thin);
        }
        let u = env.next_choice_draw();
        let outcome = sample_choice(&slate, &offer, env.theta_star(), u).unwrap();
        dbl.update(&slate, &offer, &outcome).unwrap();
        current.extend(offered_features(&slate, &offer));
    }
    let limit = ((horizon as f64 / d as f64).log2().floor() as usize) + 2;
    assert!(dbl.parameter_updates() <= limit, "{} fits > {limit}", dbl.parameter_updates());
    assert!(dbl.parameter_updates() >= 1);
    assert!(explored < horizon);
}

#[test]
fn supcb_partition_and_chain() {
    let (n, k, d, horizon) = (10, 2, 3, 256);
    let mut env = environment(n, k, d, horizon, 23);
    let cfg = config(&env, Algorithm::SupCbMnl);
    let mut sup = SupCbMnl::new(cfg, n, d, stream(23, "sup", 0)).unwrap();
    assert_eq!(sup.levels(), 4);
    assert_eq!(sup.family().len(), 10 + 45);
    let t0 = sup.t0();
    for t in 1..=horizon {
        let slate = env.next_slate(t).unwrap();
        let offer = sup.select(&slate).unwrap();

        let chain = sup.last_chain();
        assert!(chain.len() <= sup.levels());
        if t > t0 {
            assert!(!chain.is_empty());
            assert_eq!(chain[0].len(), sup.family().len());
        }
        for level in 1..chain.len() {
            let (outer, inner) = (&chain[level - 1], &chain[level]);
            assert!(inner.iter().all(|c| outer.contains(c)), "round {t}: chain not nested at level {level}");
            let theta = sup.level_estimate(level).expect("level used for pruning has an estimate");
            let u = slate.utilities(theta).unwrap();
            let best = outer
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    let ra = revenue_from_utilities(&u, slate.revenues(), &sup.family()[a]);
                    let rb = revenue_from_utilities(&u, slate.revenues(), &sup.family()[b]);
                    ra.total_cmp(&rb).then(b.cmp(&a))
                })
                .unwrap();
            assert!(inner.contains(&best), "round {t}: level {level} dropped its revenue maximizer");
        }

        let u = env.next_choice_draw();
        let outcome = sample_choice(&slate, &offer, env.theta_star(), u).unwrap();
        sup.update(&slate, &offer, &outcome).unwrap();

        let psi = sup.psi_sets();
        let mut seen: Vec<usize> = psi.iter().flatten().copied().collect();
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), total, "round {t}: index sets overlap");
        assert_eq!(total, t.saturating_sub(t0));
        assert!(seen.iter().all(|&r| r > t0 && r <= t));
    }
}

#[test]
fn supcb_rejects_oversized_families() {
    let env = environment(100, 5, 3, 100, 1);
    let cfg = config(&env, Algorithm::SupCbMnl);
    let err = policy_factory(&cfg, 100, 3, stream(0, "x", 0)).err().unwrap();
    assert!(matches!(err, MnlError::TooLarge { .. }));
}

#[test]
fn protocol_is_enforced() {
    let mut env = environment(10, 2, 3, 50, 2);
    let cfg = config(&env, Algorithm::UcbMnl);
    let mut ucb = UcbMnl::new(cfg, 10, 3, stream(0, "x", 0)).unwrap();
    let slate = env.next_slate(1).unwrap();
    let offer = ucb.select(&slate).unwrap();
    assert!(matches!(ucb.select(&slate), Err(MnlError::Protocol(_))));
    let outcome = ChoiceOutcome::new(&offer, Choice::Outside).unwrap();
    ucb.update(&slate, &offer, &outcome).unwrap();
    assert!(matches!(ucb.update(&slate, &offer, &outcome), Err(MnlError::Protocol(_))));
}
