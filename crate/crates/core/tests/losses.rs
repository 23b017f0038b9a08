mod support;

use kickstart::losses::{
    a3c_policy_loss, distill_loss, entropy_loss, kickstart_loss, softmax, value_loss, vtrace,
    KickstartParams, VTraceOutput, VTraceParams,
};
use kickstart::trajectory::TeacherLogits;
use kickstart::{NetSpec, PolicyValueNet, Trajectory};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn two_step(rewards: [f64; 2], behaviour: Vec<Vec<f64>>) -> Trajectory {
    Trajectory {
        task_id: "t".into(),
        task_index: 0,
        actor_id: 0,
        observations: vec![vec![1.0, 0.0]; 3],
        actions: vec![0, 0],
        rewards: rewards.to_vec(),
        behaviour_logits: behaviour,
        teacher: None,
        terminals: vec![false, false],
        actor_param_version: 0,
        completed_returns: vec![],
    }
}

#[test]
fn entropy_of_seventy_thirty() {
    let z = [0.7f64.ln(), 0.3f64.ln()];
    let (l, _) = entropy_loss(&z).unwrap();
    let oracle = 0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln();
    assert!(close(l, oracle, 1e-12));
    assert!(close(l, -0.610864, 1e-6));
}

#[test]
fn near_one_hot_entropy_approaches_zero_from_below() {
    let (l, _) = entropy_loss(&[30.0, 0.0, 0.0]).unwrap();
    assert!(l < 0.0 && l > -1e-10);
}

#[test]
fn vtrace_zero_rewards_and_values() {
    let traj = two_step([0.0, 0.0], vec![vec![0.3, -0.2]; 2]);
    let vt = vtrace(&traj, &[0.0; 3], &[vec![1.0, 0.0], vec![0.0, 2.0]], &VTraceParams::default())
        .unwrap();
    assert_eq!(vt.value_targets, vec![0.0, 0.0]);
    assert_eq!(vt.advantages, vec![0.0, 0.0]);
}

#[test]
fn vtrace_two_step_with_clipped_and_unclipped_ratios() {
    // action 0 every step, target policy uniform over 2 actions
    // behaviour prob 1/4 -> ratio 2 (clipped to 1); 1 -> ratio 1/2
    let traj = two_step([1.0, 0.0], vec![vec![0.0, 3f64.ln()], vec![0.0, f64::NEG_INFINITY]]);
    let params = VTraceParams {
        gamma: 0.9,
        clip_rho: 1.0,
        clip_c: 1.0,
    };
    let v = [0.5, 0.2, 0.0];
    let vt = vtrace(&traj, &v, &[vec![0.0, 0.0], vec![0.0, 0.0]], &params).unwrap();
    // hand-unrolled recursion
    let (rho0, rho1) = (1.0, 0.5);
    let v1 = v[1] + rho1 * (0.0 + 0.9 * v[2] - v[1]);
    let v0 = v[0] + rho0 * (1.0 + 0.9 * v[1] - v[0]) + 0.9 * rho0 * (v1 - v[1]);
    assert!(close(vt.value_targets[1], v1, 1e-12));
    assert!(close(vt.value_targets[0], v0, 1e-12));
    assert!(close(vt.advantages[0], rho0 * (1.0 + 0.9 * v1 - v[0]), 1e-12));
    assert!(close(vt.advantages[1], rho1 * (0.9 * v[2] - v[1]), 1e-12));
}

fn constant_advantages(adv: Vec<f64>) -> VTraceOutput {
    let n = adv.len();
    VTraceOutput {
        value_targets: vec![0.0; n],
        policy_weights: vec![1.0; n],
        trace_weights: vec![1.0; n],
        advantages: adv,
    }
}

#[test]
fn policy_loss_zero_advantage_and_unit_advantage() {
    let traj = two_step([0.0, 0.0], vec![vec![0.0, 0.0]; 2]);
    let logits = vec![vec![0.4, -0.1], vec![1.0, 2.0]];
    let (l, g) = a3c_policy_loss(&traj, &constant_advantages(vec![0.0, 0.0]), &logits).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().flatten().all(|&v| v == 0.0));

    let (_, g) = a3c_policy_loss(&traj, &constant_advantages(vec![1.0, 0.0]), &logits).unwrap();
    let p = softmax(&logits[0]);
    assert!(close(g[0][0], p[0] - 1.0, 1e-15));
    assert!(close(g[0][1], p[1], 1e-15));
}

#[test]
fn value_loss_examples() {
    assert_eq!(value_loss(&[0.3, -1.0], &[0.3, -1.0]).unwrap().0, 0.0);
    assert_eq!(value_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap().0, 2.0);
    let mut rng = support::rng(5);
    let v = support::logits(&mut rng, 7, 3.0);
    let t = support::logits(&mut rng, 7, 3.0);
    let mut oracle = 0.0;
    for i in 0..7 {
        oracle += (v[i] - t[i]) * (v[i] - t[i]);
    }
    assert!(close(value_loss(&v, &t).unwrap().0, oracle, 1e-12));
}

#[test]
fn lambda_one_total_is_sum_of_terms() {
    let net = PolicyValueNet::init(&NetSpec::new(2, &[4], 2), 3).unwrap();
    let mut traj = two_step([1.0, -0.5], vec![vec![0.1, 0.3], vec![-0.4, 0.2]]);
    traj.observations = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    traj.actions = vec![1, 0];
    let teacher = vec![vec![2.0, -1.0], vec![0.5, 0.5]];
    traj.teacher = Some(TeacherLogits {
        index: 0,
        logits: teacher.clone(),
    });
    let params = KickstartParams {
        lambdas: vec![1.0],
        entropy_cost: 0.05,
        value_weight: 0.5,
        vtrace: VTraceParams::default(),
        rl_enabled: true,
    };
    let (terms, _) = kickstart_loss(&traj, &net, &params).unwrap();

    let outs: Vec<_> = traj.observations.iter().map(|o| net.forward(o).unwrap()).collect();
    let values: Vec<f64> = outs.iter().map(|o| o.1).collect();
    let logits: Vec<Vec<f64>> = outs[..2].iter().map(|o| o.0.clone()).collect();
    let vt = vtrace(&traj, &values, &logits, &params.vtrace).unwrap();
    let pg = a3c_policy_loss(&traj, &vt, &logits).unwrap().0;
    let vl = value_loss(&values[..2], &vt.value_targets).unwrap().0;
    let ent: f64 = logits.iter().map(|z| entropy_loss(z).unwrap().0).sum();
    let dl: f64 = (0..2).map(|t| distill_loss(&teacher[t], &logits[t]).unwrap().0).sum();
    let oracle = pg + 0.5 * vl + 0.05 * ent + dl;
    assert!(close(terms.total, oracle, 1e-12), "{} vs {oracle}", terms.total);
    assert!(close(terms.distill_loss[0], dl, 1e-12));
}

#[test]
fn lambda_zero_total_is_rl_composite() {
    let mut rng = support::rng(6);
    let net = PolicyValueNet::init(&NetSpec::new(4, &[5], 5), 9).unwrap();
    let traj = support::random_trajectory(&mut rng, 4, 5, 6, true);
    let params = KickstartParams {
        lambdas: vec![0.0],
        entropy_cost: 0.02,
        value_weight: 0.5,
        vtrace: VTraceParams::default(),
        rl_enabled: true,
    };
    let (t, _) = kickstart_loss(&traj, &net, &params).unwrap();
    let composite = t.policy_gradient_loss + 0.5 * t.value_loss + 0.02 * t.entropy_loss;
    assert_eq!(t.total, composite);
}

#[test]
fn distill_only_fixed_point_has_vanishing_gradient() {
    let mut rng = support::rng(7);
    let net = PolicyValueNet::init(&NetSpec::new(4, &[5], 3), 1).unwrap();
    let mut traj = support::random_trajectory(&mut rng, 4, 3, 5, true);
    traj.teacher.as_mut().unwrap().logits = traj.observations[..5]
        .iter()
        .map(|o| net.forward(o).unwrap().0)
        .collect();
    let params = KickstartParams {
        lambdas: vec![1.0],
        entropy_cost: 0.0,
        value_weight: 0.5,
        vtrace: VTraceParams::default(),
        rl_enabled: false,
    };
    let (_, g) = kickstart_loss(&traj, &net, &params).unwrap();
    assert!(g.l2_norm() < 1e-10);
}
