use abs_traj::allocator::SubgradientSchedule;
use abs_traj::channel::{FadingModel, GbsSpec, PropagationParams};
use abs_traj::environment::{AgentSpec, Environment, RewardWeights, ScenarioConfig, UserSpec};
use abs_traj::geometry::{self, Action, AreaSpec, DistanceMetric, GridState};
use abs_traj::qlearning::{self, LearningParams, LearningRate};

fn base(m: u32, agents: Vec<AgentSpec>, users: Vec<UserSpec>) -> ScenarioConfig {
    let side = 100.0 * m as f64;
    ScenarioConfig {
        area: AreaSpec::new((0.0, side), (0.0, side), m, 100.0).unwrap(),
        agents,
        users,
        num_subchannels: 2,
        p_max: 0.2,
        d_min: 5.0,
        weights: RewardWeights::default(),
        distance_metric: DistanceMetric::Squared,
        propagation: PropagationParams::default(),
        fading: FadingModel::Rayleigh,
        gbs: GbsSpec::default(),
        speed_mps: 10.0,
        allocator: SubgradientSchedule::default(),
    }
}

fn route(a: (u32, u32), b: (u32, u32)) -> AgentSpec {
    AgentSpec {
        initial: GridState::new(a.0, a.1),
        destination: GridState::new(b.0, b.1),
    }
}

fn user(x: f64, y: f64, j: usize) -> UserSpec {
    UserSpec {
        x,
        y,
        serving_abs: j,
    }
}

fn two_abs() -> Environment {
    Environment::new(base(
        6,
        vec![route((1, 1), (6, 3)), route((1, 6), (6, 4))],
        vec![
            user(50.0, 80.0, 0),
            user(420.0, 100.0, 0),
            user(100.0, 500.0, 1),
            user(550.0, 450.0, 1),
        ],
    ))
    .unwrap()
}

/// Deterministic single-agent fixture with small, all-negative rewards.
fn fixture_4x4() -> Environment {
    let mut cfg = base(
        4,
        vec![route((1, 1), (4, 4))],
        vec![user(50.0, 350.0, 0), user(350.0, 50.0, 0)],
    );
    cfg.weights = RewardWeights {
        beta1: 0.001,
        beta2: 0.001,
        beta3: 0.0,
    };
    cfg.distance_metric = DistanceMetric::Euclidean;
    cfg.fading = FadingModel::None;
    Environment::new(cfg).unwrap()
}

#[test]
fn trace_invariants_hold() {
    let env = two_abs();
    let mut tables = env.new_tables(0.0);
    let params = LearningParams {
        epsilon: 0.3,
        ..LearningParams::default()
    };
    let cap = env.max_steps(&params);
    for episode in 0..5 {
        let trace = env.run_episode(&mut tables, &params, episode, 42).unwrap();
        assert!(trace.steps.len() <= cap);
        for rec in &trace.steps {
            for s in &rec.agents {
                let w = env.config().weights;
                let r = s.reward;
                assert_eq!(
                    r.total,
                    w.beta1 * r.f1 - w.beta2 * r.f2 - w.beta3 * r.f3 as f64
                );
                assert!(r.f1 >= 0.0 && r.f2 >= 0.0 && r.f3 <= 1);
                let dest = env.config().agents[s.agent].destination;
                assert_eq!(r.f2 == 0.0, s.next_state == dest);
                assert_eq!(s.transition.terminal, s.next_state == dest);
                assert_eq!(
                    geometry::apply_action(&env.config().area, s.state, s.action),
                    s.next_state
                );
                assert!(s.allocation.total_power <= env.config().p_max * (1.0 + 1e-6));
            }
            // Proximity is symmetric whenever both agents act.
            if rec.agents.len() == 2 {
                assert_eq!(rec.agents[0].reward.f3, rec.agents[1].reward.f3);
            }
        }
    }
}

#[test]
fn replay_reproduces_trace() {
    let env = two_abs();
    let params = LearningParams {
        epsilon: 0.2,
        ..LearningParams::default()
    };
    let mut a = env.new_tables(0.0);
    let mut b = env.new_tables(0.0);
    let ta = env.run_episode(&mut a, &params, 3, 9).unwrap();
    let tb = env.run_episode(&mut b, &params, 3, 9).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a[0].values(), b[0].values());
    let mut c = env.new_tables(0.0);
    let tc = env.run_episode(&mut c, &params, 3, 10).unwrap();
    assert_ne!(ta, tc);
}

#[test]
fn coinciding_agents_flag_each_other() {
    let env = two_abs();
    let mut st = env.reset();
    st.states = vec![GridState::new(3, 3), GridState::new(5, 3)];
    let mut rng = abs_traj::rng::stream(0, 0, abs_traj::rng::Purpose::Channel);
    let out = env.step_all(
        &mut st,
        &[Some(Action::Right), Some(Action::Left)],
        &mut rng,
    );
    assert_eq!(st.states[0], st.states[1]);
    assert!(out.iter().all(|s| s.as_ref().unwrap().reward.f3 == 1));
}

#[test]
fn single_abs_never_flags() {
    let env = fixture_4x4().with_fading(FadingModel::Rayleigh);
    let mut tables = env.new_tables(0.0);
    let params = LearningParams {
        epsilon: 1.0,
        max_steps_per_episode: Some(50),
        ..LearningParams::default()
    };
    for e in 0..20 {
        let trace = env.run_episode(&mut tables, &params, e, 1).unwrap();
        assert!(trace
            .steps
            .iter()
            .flat_map(|r| &r.agents)
            .all(|s| s.reward.f3 == 0));
    }
}

#[test]
fn one_episode_gives_one_metric_row() {
    let env = two_abs();
    let params = LearningParams {
        max_episodes: 1,
        ..LearningParams::default()
    };
    let out = env.train(&params, 3).unwrap();
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.metrics[0].avg_sum_rate.len(), 2);
}

#[test]
fn trained_fixture_matches_oracle() {
    let env = fixture_4x4();
    let world = env.single_agent_world().unwrap();
    let oracle = qlearning::value_iteration_oracle(&world, 0.9, 1e-12).unwrap();
    let params = LearningParams {
        learning_rate: LearningRate::VisitCount,
        epsilon: 0.5,
        max_episodes: 5000,
        max_steps_per_episode: Some(64),
        ..LearningParams::default()
    };
    let out = env.train(&params, 17).unwrap();
    for s in 0..world.num_states {
        if let Some(a) = oracle.unique_argmax(s, 1e-9) {
            assert_eq!(
                qlearning::greedy_action(out.tables[0].row(s)),
                a,
                "state {s}"
            );
        }
    }

    // With ε = 0 an episode walks an oracle-optimal path (ties may go
    // either way) and ends at the terminal cell.
    let mut tables = out.tables.clone();
    let greedy = LearningParams {
        epsilon: 0.0,
        ..params
    };
    let trace = env.run_episode(&mut tables, &greedy, 0, 99).unwrap();
    let mut s = env.state_index(GridState::new(1, 1));
    for rec in &trace.steps {
        let step = &rec.agents[0];
        assert_eq!(step.transition.state, s);
        let best = oracle
            .row(s)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            oracle.row(s)[step.action.index()] >= best - 1e-9,
            "suboptimal move at {s}"
        );
        s = world.step(s, step.action).0;
    }
    assert!(world.terminal[s]);
    let start = env.state_index(GridState::new(1, 1));
    let mut t = start;
    let mut oracle_len = 0;
    while !world.terminal[t] {
        t = world.step(t, qlearning::greedy_action(oracle.row(t))).0;
        oracle_len += 1;
    }
    assert_eq!(trace.steps.len(), oracle_len);
}

#[test]
fn pure_distance_oracle_moves_toward_destination() {
    let mut cfg = base(5, vec![route((1, 2), (4, 5))], vec![user(200.0, 200.0, 0)]);
    cfg.weights = RewardWeights {
        beta1: 0.0,
        beta2: 0.25,
        beta3: 0.0,
    };
    cfg.distance_metric = DistanceMetric::Euclidean;
    let env = Environment::new(cfg).unwrap();
    let world = env.single_agent_world().unwrap();
    let oracle = qlearning::value_iteration_oracle(&world, 0.9, 1e-12).unwrap();
    let area = &env.config().area;
    let dest = env.config().agents[0].destination;
    for s in area.states() {
        if s == dest {
            continue;
        }
        let i = area.index_of(s);
        let a = qlearning::greedy_action(oracle.row(i));
        let next = geometry::apply_action(area, s, a);
        assert_eq!(next.manhattan(dest) + 1, s.manhattan(dest), "from {s:?}");
    }
}

#[test]
fn rollout_separation_is_reported() {
    // Both agents share a route, so the rollout keeps them together.
    let env = Environment::new(base(
        4,
        vec![route((1, 1), (4, 1)), route((1, 1), (4, 1))],
        vec![user(50.0, 50.0, 0), user(350.0, 50.0, 1)],
    ))
    .unwrap();
    let mut tables = env.new_tables(0.0);
    for t in tables.iter_mut() {
        for k1 in 1..4 {
            t.set(env.state_index(GridState::new(k1, 1)), Action::Right, 1.0);
        }
    }
    let r = env.extract_trajectory(&tables).unwrap();
    assert!(r.all_reached());
    assert_eq!(r.min_separation, 0.0);
    assert_eq!(r.violations.len(), 4);
}
