use mnl_bandit::estimation::ConfidenceConfig;
use mnl_bandit::policies::{Algorithm, OraclePolicy, PolicyConfig, UniformRandomPolicy};
use mnl_bandit::rng::stream;
use mnl_bandit::simulator::{
    mean_std, run_one, run_replication, run_replications, ContextDistribution, Environment, EnvironmentConfig,
    RevenueMode, RunSummary,
};

fn ucb_config(env: &EnvironmentConfig) -> PolicyConfig {
    let confidence = ConfidenceConfig::new(0.25, env.sigma0(), 0.05).unwrap();
    PolicyConfig::new(Algorithm::UcbMnl, env.horizon, env.capacity, confidence)
}

#[test]
fn context_norms() {
    let mut sphere = EnvironmentConfig::new(30, 3, 6, 10, 1);
    sphere.context_dist = ContextDistribution::Sphere;
    let mut env = Environment::new(sphere).unwrap();
    for t in 1..=10 {
        for x in env.next_slate(t).unwrap().features() {
            assert!((x.norm() - 1.0).abs() <= 1e-12);
        }
    }
    let mut env = Environment::new(EnvironmentConfig::new(30, 3, 2, 10, 1)).unwrap();
    for t in 1..=10 {
        assert!(env.next_slate(t).unwrap().features().iter().all(|x| x.norm() <= 1.0 + 1e-12));
    }
    let mut raw = EnvironmentConfig::new(30, 3, 6, 10, 1);
    raw.normalize_features = false;
    let mut env = Environment::new(raw).unwrap();
    let max =
        (1..=10).flat_map(|t| env.next_slate(t).unwrap().features().to_vec()).map(|x| x.norm()).fold(0.0, f64::max);
    assert!(max > 1.0, "unclipped Gaussian vectors should exceed the unit ball");
}

#[test]
fn same_seeds_same_environment() {
    let mut cfg = EnvironmentConfig::new(12, 3, 4, 10, 99);
    cfg.revenue_mode = RevenueMode::RandomPositive;
    let mut a = Environment::new(cfg.clone()).unwrap();
    let mut b = Environment::new(cfg).unwrap();
    assert_eq!(a.theta_star(), b.theta_star());
    assert!(a.theta_star().values().iter().all(|v| (0.0..1.0).contains(v)));
    for t in 1..=10 {
        let (sa, sb) = (a.next_slate(t).unwrap(), b.next_slate(t).unwrap());
        assert_eq!(sa, sb);
        assert!(sa.revenues().iter().all(|r| *r > 0.0 && *r <= 1.0));
        assert_eq!(a.next_choice_draw().to_bits(), b.next_choice_draw().to_bits());
    }
}

#[test]
fn oracle_has_no_regret() {
    let cfg = EnvironmentConfig::new(15, 4, 3, 300, 4);
    let mut env = Environment::new(cfg).unwrap();
    let mut oracle = OraclePolicy::new(env.theta_star().clone(), 4);
    let trace = run_one(&mut env, &mut oracle, false).unwrap();
    assert_eq!(trace.final_regret(), 0.0);
}

#[test]
fn random_offers_accumulate_regret() {
    for seed in 0..20 {
        let cfg = EnvironmentConfig::new(20, 3, 5, 500, 1000 + seed);
        let mut env = Environment::new(cfg).unwrap();
        let mut policy = UniformRandomPolicy::new(20, 3, stream(seed, "uniform", 0));
        let trace = run_one(&mut env, &mut policy, false).unwrap();
        assert!(trace.final_regret() > 0.0, "seed {seed}");
    }
}

#[test]
fn trace_bookkeeping() {
    let cfg = EnvironmentConfig::new(15, 3, 4, 400, 8);
    let trace = run_replication(&cfg, &ucb_config(&cfg), 0, true).unwrap();
    assert_eq!(trace.records.len(), 400);
    let mut running = 0.0;
    let mut last_wall = 0;
    for (i, r) in trace.records.iter().enumerate() {
        assert_eq!(r.t, i + 1);
        assert!(r.inst_regret >= -1e-12, "round {}: {}", r.t, r.inst_regret);
        running += r.inst_regret;
        assert!((r.cum_regret - running).abs() <= 1e-12);
        let wall = r.cum_wall_ns.expect("timing requested");
        assert!(wall >= last_wall);
        last_wall = wall;
    }
    assert_eq!(trace.runtime_ns, last_wall);
    let untimed = run_replication(&cfg, &ucb_config(&cfg), 0, false).unwrap();
    assert!(untimed.records.iter().all(|r| r.cum_wall_ns.is_none()));
}

#[test]
fn summaries_of_replications() {
    let cfg = EnvironmentConfig::new(10, 2, 3, 200, 15);
    let policy = ucb_config(&cfg);
    let (single, summary) = run_replications(&cfg, &policy, 1, None, false).unwrap();
    assert_eq!(summary.mean_final_regret, single[0].final_regret());
    assert_eq!(summary.std_final_regret, 0.0);

    let (traces, summary) = run_replications(&cfg, &policy, 6, None, false).unwrap();
    let mut reversed: Vec<_> = (0..6).rev().map(|r| run_replication(&cfg, &policy, r, false).unwrap()).collect();
    for (a, b) in traces.iter().zip(reversed.iter().rev()) {
        assert_eq!(a.records, b.records);
    }
    reversed.sort_by_key(|t| t.replication);
    let again = RunSummary::from_traces(&reversed).unwrap();
    assert_eq!(again.mean_final_regret, summary.mean_final_regret);
    assert_eq!(again.std_final_regret, summary.std_final_regret);

    let (threaded, _) = run_replications(&cfg, &policy, 6, Some(3), false).unwrap();
    for (a, b) in traces.iter().zip(&threaded) {
        assert_eq!((a.replication, &a.records), (b.replication, &b.records));
    }
}

#[test]
fn means_are_stable_across_base_seeds() {
    let mean_and_std = |seed: u64| {
        let cfg = EnvironmentConfig::new(20, 3, 4, 300, seed);
        let (traces, _) = run_replications(&cfg, &ucb_config(&cfg), 20, None, false).unwrap();
        mean_std(&traces.iter().map(|t| t.final_regret()).collect::<Vec<_>>())
    };
    let (m1, s1) = mean_and_std(31);
    let (m2, s2) = mean_and_std(32);
    let tolerance = 2.0 * s1.max(s2) / 20f64.sqrt();
    assert!((m1 - m2).abs() <= tolerance, "means {m1} and {m2} differ by more than {tolerance}");
}
