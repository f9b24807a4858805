use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenefill::geometry::{DepthMap, Mask, ACTION_COUNT};
use scenefill::planner::{
    reward_acc, select_action, sync_target, td_target, train_step, AgentConfig, EpsilonSchedule, NetConfig, QNetwork,
    ReplayBuffer, StateEncoding, Transition,
};
use scenefill::Exec;

const RES: usize = 3;

fn net_cfg() -> NetConfig {
    NetConfig { input_dim: RES * RES, hidden1: 12, hidden2: 10, trunk: 8 }
}

fn state(rng: &mut ChaCha8Rng) -> StateEncoding {
    StateEncoding { res: RES, views: (0..ACTION_COUNT * RES * RES).map(|_| rng.random::<f32>()).collect() }
}

#[test]
fn q_values_ignore_view_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let net = QNetwork::new_random_heads(net_cfg(), &mut rng).unwrap();
    let s = state(&mut rng);
    let mut order: Vec<usize> = (0..ACTION_COUNT).collect();
    order.reverse();
    order.swap(3, 11);
    let permuted = StateEncoding { res: RES, views: order.iter().flat_map(|v| s.view(*v).to_vec()).collect() };
    assert_eq!(net.q_values(&s).unwrap(), net.q_values(&permuted).unwrap());
}

#[test]
fn shifting_every_advantage_leaves_q_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let net = QNetwork::new_random_heads(net_cfg(), &mut rng).unwrap();
    let s = state(&mut rng);
    let mut shifted = net.clone();
    let mut p = shifted.flat_params();
    // the advantage bias is the last block of parameters
    let n = p.len();
    for b in &mut p[n - ACTION_COUNT..] {
        *b += 0.7;
    }
    shifted.set_flat_params(&p);
    let (q1, q2) = (net.q_values(&s).unwrap(), shifted.q_values(&s).unwrap());
    assert_ne!(net.flat_params(), shifted.flat_params());
    for (a, b) in q1.iter().zip(&q2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn td_target_hand_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let net = QNetwork::new_random_heads(net_cfg(), &mut rng).unwrap();
    let target = QNetwork::new_random_heads(net_cfg(), &mut rng).unwrap();
    let s1 = Arc::new(state(&mut rng));
    let s2 = Arc::new(state(&mut rng));
    let t_term = Transition { state: s1.clone(), action: 2, reward: -0.4, next_state: None };
    let t_next = Transition { state: s1, action: 5, reward: -0.1, next_state: Some(s2.clone()) };
    let y = td_target(&[&t_term, &t_next], &net, &target, 0.9).unwrap();
    assert_eq!(y[0], -0.4);
    // online net picks the action, target net evaluates it
    let q_online = net.q_values(&s2).unwrap();
    let a_star = (0..ACTION_COUNT).fold(0, |b, a| if q_online[a] > q_online[b] { a } else { b });
    let expect = -0.1 + 0.9 * target.q_values(&s2).unwrap()[a_star];
    assert_eq!(y[1], expect);
}

#[test]
fn training_on_one_batch_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut net = QNetwork::new_random_heads(net_cfg(), &mut rng).unwrap();
    let target = net.clone();
    let mut buffer = ReplayBuffer::new(8).unwrap();
    for a in 0..8 {
        buffer.push(Transition { state: Arc::new(state(&mut rng)), action: a, reward: -(a as f64) / 8.0, next_state: None });
    }
    let cfg = AgentConfig { net: net_cfg(), batch_size: 8, lr: 0.05, ..AgentConfig::with_input(RES * RES) };
    let first = train_step(Exec::Sequential, &buffer, &mut net, &target, &cfg, &mut rng).unwrap();
    let mut last = first;
    for _ in 0..300 {
        last = train_step(Exec::Sequential, &buffer, &mut net, &target, &cfg, &mut rng).unwrap();
    }
    assert!(last < 0.05 * first, "loss {first} -> {last}");
}

#[test]
fn sync_copies_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let net = QNetwork::new_random_heads(net_cfg(), &mut rng).unwrap();
    let mut target = QNetwork::new(net_cfg(), &mut rng).unwrap();
    assert_ne!(net.flat_params(), target.flat_params());
    sync_target(&net, &mut target);
    assert_eq!(net.flat_params(), target.flat_params());
}

#[test]
fn zero_greedy_probability_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let mut q = [0.0; ACTION_COUNT];
    q[4] = 10.0;
    let n = 40_000;
    let mut counts = [0usize; ACTION_COUNT];
    for _ in 0..n {
        counts[select_action(&q, 0.0, &mut rng)] += 1;
    }
    let e = n as f64 / ACTION_COUNT as f64;
    let chi2: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
    // 99.9th percentile of chi-square with 19 degrees of freedom
    assert!(chi2 < 43.82, "chi2 {chi2}");
    for _ in 0..100 {
        assert_eq!(select_action(&q, 1.0, &mut rng), 4);
    }
}

#[test]
fn epsilon_schedule_is_linear_then_flat() {
    let e = EpsilonSchedule { start: 0.9, end: 0.2, decay_steps: 100 };
    assert_eq!(e.value(0), 0.9);
    assert!((e.value(50) - 0.55).abs() < 1e-12);
    assert_eq!(e.value(100), 0.2);
    assert_eq!(e.value(10_000), 0.2);
}

#[test]
fn replay_buffer_overwrites_oldest() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let s = Arc::new(state(&mut rng));
    let mut b = ReplayBuffer::new(3).unwrap();
    for a in 0..5 {
        b.push(Transition { state: s.clone(), action: a, reward: 0.0, next_state: None });
    }
    assert_eq!(b.len(), 3);
    let mut actions: Vec<usize> = b.iter().map(|t| t.action).collect();
    actions.sort();
    assert_eq!(actions, vec![2, 3, 4]);
    assert!(b.sample(4, &mut rng).is_err());
    let picked = b.sample(3, &mut rng).unwrap();
    let mut a: Vec<usize> = picked.iter().map(|t| t.action).collect();
    a.sort();
    assert_eq!(a, vec![2, 3, 4]);
}

#[test]
fn accuracy_reward_on_hand_maps() {
    let pred = DepthMap::from_data(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let gt = DepthMap::from_data(2, 2, vec![1.5, 2.0, 2.0, 9.0]).unwrap();
    let mask = Mask { width: 2, height: 2, bits: vec![true, true, true, false] };
    let r = reward_acc(&pred, &gt, &mask, 2.0).unwrap();
    assert!((r + (0.5 + 0.0 + 1.0) / 3.0 / 2.0).abs() < 1e-12);
    assert!(reward_acc(&pred, &gt, &Mask::empty(2, 2), 2.0).is_err());
}
