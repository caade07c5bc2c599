use tthf::control::{run_adaptive, solve_p, AdaptiveConfig, ClusterPlan, CostParams, PlanParams, Predictor};
use tthf::data::{gen_synthetic, partition, PartitionMode, PartitionPlan};
use tthf::losses::{LossKind, LossModel};
use tthf::topology::{build_topology, TopologyConfig};
use tthf::trainer::{MetricsTrace, Problem, TrainerConfig};

fn drifting_clusters() -> Vec<ClusterPlan> {
    let predictor = Predictor {
        a_idle: 1.05,
        b_idle: 0.02,
        a_mix: 0.3,
        b_mix: 0.0,
        idle_fallback: false,
        mix_fallback: false,
    };
    [(5, 0.6), (4, 0.45), (6, 0.7)]
        .into_iter()
        .map(|(size, lambda)| ClusterPlan { size, lambda, predictor })
        .collect()
}

#[test]
fn interval_length_is_monotone_on_weight_grid() {
    let plan = PlanParams {
        gamma: 2.0,
        alpha: 20.0,
        phi: 0.05,
        gamma_cap: 100,
    };
    let clusters = drifting_clusters();
    let c1s = [0.2, 1.0, 5.0];
    let c2s = [0.2, 1.0, 5.0];
    let c3s = [1.0, 10.0, 100.0];
    let mut tau = [[[0usize; 3]; 3]; 3];
    for (i, &c1) in c1s.iter().enumerate() {
        for (j, &c2) in c2s.iter().enumerate() {
            for (k, &c3) in c3s.iter().enumerate() {
                let cost = CostParams {
                    c1,
                    c2,
                    c3,
                    ..Default::default()
                };
                tau[i][j][k] = solve_p(40, &plan, &cost, &clusters, 30).unwrap();
            }
        }
    }
    let mut distinct: Vec<usize> = tau.iter().flatten().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    assert!(distinct.len() > 2, "grid should move the optimum: {tau:?}");
    for a in 0..3 {
        for b in 0..3 {
            for s in 0..2 {
                assert!(tau[s][a][b] <= tau[s + 1][a][b], "c1 axis {tau:?}");
                assert!(tau[a][s][b] <= tau[a][s + 1][b], "c2 axis {tau:?}");
                assert!(tau[a][b][s] >= tau[a][b][s + 1], "c3 axis {tau:?}");
            }
        }
    }
}

fn synth_problem(mode: PartitionMode, seed: u64) -> Problem {
    let ds = gen_synthetic(10, 10, 400, 3.0, seed).unwrap();
    let topo = build_topology(&TopologyConfig::default(), seed).unwrap();
    let devices = partition(&ds, topo.n_devices(), &PartitionPlan::new(mode, 10, seed)).unwrap();
    let model = LossModel::new(LossKind::LinearRegression, 0.1, 10).unwrap();
    Problem::from_devices(model, devices, topo).unwrap()
}

fn adaptive(problem: &Problem, batch_size: Option<usize>) -> MetricsTrace {
    let cfg = AdaptiveConfig {
        xi: 1e15,
        zeta_fraction: 0.01,
        ..Default::default()
    };
    let trainer = TrainerConfig {
        horizon: 150,
        seed: 3,
        batch_size,
        ..Default::default()
    };
    run_adaptive(problem, &cfg, &trainer).unwrap()
}

#[test]
fn iid_data_needs_almost_no_consensus() {
    let trace = adaptive(&synth_problem(PartitionMode::Iid, 21), None);
    let rounds: usize = trace.steps.iter().map(|s| s.row.gamma_total).sum();
    let slots = trace.steps.len() * trace.steps[0].gammas.len();
    assert!(
        (rounds as f64) < 0.01 * slots as f64,
        "{rounds} rounds over {slots} cluster-steps"
    );
}

#[test]
fn consensus_error_meets_target_at_most_steps() {
    let trace = adaptive(&synth_problem(PartitionMode::Extreme, 22), Some(16));
    let mut checked = 0;
    let mut met = 0;
    for s in &trace.steps {
        let row = trace
            .control
            .iter()
            .rev()
            .find(|c| c.t_start <= s.row.t)
            .expect("a control row covers every step");
        for (g, e) in s.gammas.iter().zip(&s.eps) {
            if *g > 0 {
                checked += 1;
                if *e <= s.eta * row.phi * (1.0 + 1e-9) {
                    met += 1;
                }
            }
        }
    }
    assert!(checked > 0, "no consensus happened");
    assert!(met as f64 >= 0.95 * checked as f64, "{met} of {checked} consensus steps met the target");
}
