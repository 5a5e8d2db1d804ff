//! Centralized value-mixing learner for the two device agents.
//!
//! Each agent has a small utility network over its stacked observation.
//! A mixing network combines the two chosen utilities into a joint value,
//! with weights generated from the global state by hypernetworks and forced
//! nonnegative through absolute values, so the joint value is monotone in
//! every agent utility: the greedy joint action decomposes into per-agent
//! greedy choices. Gradients are hand-derived; the only nonlinearities are
//! ReLU (derivative 0 at the kink) and `|x|` (derivative 0 at 0).

use serde::{Deserialize, Serialize};

use crate::agent::{argmax, Experience, CA_ACTIONS, CA_INPUT_DIM, GLOBAL_STATE_DIM, RC_ACTIONS, RC_INPUT_DIM};
use crate::error::{Result, SimError};
use crate::rng::RngStream;

pub const QNET_HIDDEN: usize = 64;
pub const MIX_HIDDEN: usize = 32;
pub const N_AGENTS: usize = 2;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn relu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Dense layer with its accumulated gradients. Weights are stored row
/// major, `[out][in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    gw: Vec<f64>,
    gb: Vec<f64>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        let lim = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| (2.0 * rng.next_uniform() - 1.0) * lim)
            .collect();
        Linear {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
            gw: vec![0.0; in_dim * out_dim],
            gb: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.b.clone();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            out[o] += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
        out
    }

    /// Accumulates parameter gradients for `d loss / d out` at input `x`,
    /// adding the input gradient into `grad_in` when given.
    fn backward(&mut self, x: &[f64], grad_out: &[f64], grad_in: Option<&mut [f64]>) {
        for o in 0..self.out_dim {
            let g = grad_out[o];
            self.gb[o] += g;
            let row = &mut self.gw[o * self.in_dim..(o + 1) * self.in_dim];
            for (gw, xv) in row.iter_mut().zip(x) {
                *gw += g * xv;
            }
        }
        if let Some(gin) = grad_in {
            for o in 0..self.out_dim {
                let g = grad_out[o];
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (gi, wv) in gin.iter_mut().zip(row) {
                    *gi += g * wv;
                }
            }
        }
    }

    fn zero_grads(&mut self) {
        self.gw.iter_mut().for_each(|g| *g = 0.0);
        self.gb.iter_mut().for_each(|g| *g = 0.0);
    }

    fn grad_sq_sum(&self) -> f64 {
        self.gw.iter().map(|g| g * g).sum::<f64>() + self.gb.iter().map(|g| g * g).sum::<f64>()
    }

    fn scale_grads(&mut self, s: f64) {
        self.gw.iter_mut().for_each(|g| *g *= s);
        self.gb.iter_mut().for_each(|g| *g *= s);
    }

    fn sgd(&mut self, lr: f64) {
        for (w, g) in self.w.iter_mut().zip(&self.gw) {
            *w -= lr * g;
        }
        for (b, g) in self.b.iter_mut().zip(&self.gb) {
            *b -= lr * g;
        }
    }

    #[cfg(test)]
    fn zero_params(&mut self) {
        self.w.iter_mut().for_each(|w| *w = 0.0);
        self.b.iter_mut().for_each(|b| *b = 0.0);
    }
}

/// Agent utility network: one hidden ReLU layer, one Q value per action.
#[derive(Debug, Clone)]
pub struct QNet {
    pub l1: Linear,
    pub l2: Linear,
}

struct QNetCache {
    x: Vec<f64>,
    h_pre: Vec<f64>,
    h: Vec<f64>,
}

impl QNet {
    pub fn new(in_dim: usize, actions: usize, rng: &mut RngStream) -> Self {
        QNet { l1: Linear::new(in_dim, QNET_HIDDEN, rng), l2: Linear::new(QNET_HIDDEN, actions, rng) }
    }

    pub fn q_values(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.l1.forward(x).into_iter().map(relu).collect();
        self.l2.forward(&h)
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, QNetCache) {
        let h_pre = self.l1.forward(x);
        let h: Vec<f64> = h_pre.iter().map(|&v| relu(v)).collect();
        let q = self.l2.forward(&h);
        (q, QNetCache { x: x.to_vec(), h_pre, h })
    }

    fn backward(&mut self, cache: &QNetCache, grad_q: &[f64]) {
        let mut gh = vec![0.0; QNET_HIDDEN];
        self.l2.backward(&cache.h, grad_q, Some(&mut gh));
        for (g, pre) in gh.iter_mut().zip(&cache.h_pre) {
            *g *= relu_grad(*pre);
        }
        self.l1.backward(&cache.x, &gh, None);
    }
}

/// State-conditioned monotone mixing of the two agent utilities.
#[derive(Debug, Clone)]
pub struct Mixer {
    pub hyper_w1: Linear,
    pub hyper_b1: Linear,
    pub hyper_w2: Linear,
    pub hyper_b2a: Linear,
    pub hyper_b2b: Linear,
}

struct MixerCache {
    state: Vec<f64>,
    q: [f64; N_AGENTS],
    w1_raw: Vec<f64>,
    w2_raw: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    b2_h_pre: Vec<f64>,
    b2_h: Vec<f64>,
}

impl Mixer {
    pub fn new(state_dim: usize, rng: &mut RngStream) -> Self {
        Mixer {
            hyper_w1: Linear::new(state_dim, MIX_HIDDEN * N_AGENTS, rng),
            hyper_b1: Linear::new(state_dim, MIX_HIDDEN, rng),
            hyper_w2: Linear::new(state_dim, MIX_HIDDEN, rng),
            hyper_b2a: Linear::new(state_dim, MIX_HIDDEN, rng),
            hyper_b2b: Linear::new(MIX_HIDDEN, 1, rng),
        }
    }

    /// Joint value of the chosen per-agent utilities under `state`.
    pub fn q_tot(&self, q: [f64; N_AGENTS], state: &[f64]) -> f64 {
        self.forward(q, state).0
    }

    fn forward(&self, q: [f64; N_AGENTS], state: &[f64]) -> (f64, MixerCache) {
        let w1_raw = self.hyper_w1.forward(state);
        let b1 = self.hyper_b1.forward(state);
        let w2_raw = self.hyper_w2.forward(state);
        let b2_h_pre = self.hyper_b2a.forward(state);
        let b2_h: Vec<f64> = b2_h_pre.iter().map(|&v| relu(v)).collect();
        let b2 = self.hyper_b2b.forward(&b2_h)[0];

        let mut hidden_pre = b1;
        for j in 0..MIX_HIDDEN {
            for (i, qi) in q.iter().enumerate() {
                hidden_pre[j] += w1_raw[j * N_AGENTS + i].abs() * qi;
            }
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| relu(v)).collect();
        let q_tot = b2
            + w2_raw
                .iter()
                .zip(&hidden)
                .map(|(w, h)| w.abs() * h)
                .sum::<f64>();
        (
            q_tot,
            MixerCache { state: state.to_vec(), q, w1_raw, w2_raw, hidden_pre, hidden, b2_h_pre, b2_h },
        )
    }

    /// Backpropagates `d loss / d q_tot`, returning the gradient on the two
    /// agent utilities.
    fn backward(&mut self, cache: &MixerCache, g: f64) -> [f64; N_AGENTS] {
        // Bias path: b2 = hyper_b2b(relu(hyper_b2a(state))).
        let mut g_b2h = vec![0.0; MIX_HIDDEN];
        self.hyper_b2b.backward(&cache.b2_h, &[g], Some(&mut g_b2h));
        for (gv, pre) in g_b2h.iter_mut().zip(&cache.b2_h_pre) {
            *gv *= relu_grad(*pre);
        }
        self.hyper_b2a.backward(&cache.state, &g_b2h, None);

        // Output layer: q_tot = sum |w2| hidden + b2.
        let mut g_w2_raw = vec![0.0; MIX_HIDDEN];
        let mut g_hidden_pre = vec![0.0; MIX_HIDDEN];
        for j in 0..MIX_HIDDEN {
            g_w2_raw[j] = g * cache.hidden[j] * sign(cache.w2_raw[j]);
            g_hidden_pre[j] = g * cache.w2_raw[j].abs() * relu_grad(cache.hidden_pre[j]);
        }
        self.hyper_w2.backward(&cache.state, &g_w2_raw, None);
        self.hyper_b1.backward(&cache.state, &g_hidden_pre, None);

        // Input layer: hidden_pre = |w1| q + b1.
        let mut g_w1_raw = vec![0.0; MIX_HIDDEN * N_AGENTS];
        let mut gq = [0.0; N_AGENTS];
        for j in 0..MIX_HIDDEN {
            for i in 0..N_AGENTS {
                let k = j * N_AGENTS + i;
                g_w1_raw[k] = g_hidden_pre[j] * cache.q[i] * sign(cache.w1_raw[k]);
                gq[i] += g_hidden_pre[j] * cache.w1_raw[k].abs();
            }
        }
        self.hyper_w1.backward(&cache.state, &g_w1_raw, None);
        gq
    }
}

/// Training hyperparameters. The exploration schedule is linear in
/// environment steps; everything else counts optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_interval: u64,
    pub grad_clip_norm: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
    /// Optimizer steps begin once the replay holds this many transitions.
    pub learn_start: usize,
    /// Optimizer steps per newly collected transition.
    pub td_steps_per_experience: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            gamma: 0.95,
            batch_size: 64,
            replay_capacity: 50_000,
            target_sync_interval: 200,
            grad_clip_norm: 10.0,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 50_000,
            learn_start: 1000,
            td_steps_per_experience: 0.25,
        }
    }
}

/// Linear exploration schedule.
pub fn epsilon_at(cfg: &TrainConfig, env_steps: u64) -> f64 {
    let frac = (env_steps as f64 / cfg.eps_decay_steps as f64).min(1.0);
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Uniform replay ring: once full, new transitions overwrite the oldest.
#[derive(Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { capacity, data: Vec::new(), next: 0 }
    }

    pub fn push(&mut self, e: Experience) {
        if self.data.len() < self.capacity {
            self.data.push(e);
        } else {
            self.data[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> Vec<&Experience> {
        (0..batch)
            .map(|_| &self.data[rng.uniform_int(self.data.len() as u32 - 1) as usize])
            .collect()
    }
}

/// Frozen copies of the two utility networks, enough to act with.
#[derive(Debug, Clone)]
pub struct PolicyNets {
    pub ca: QNet,
    pub rc: QNet,
}

/// The full training state: online and target networks plus the counter
/// driving target refreshes.
#[derive(Debug, Clone)]
pub struct QmixLearner {
    pub cfg: TrainConfig,
    pub ca_net: QNet,
    pub rc_net: QNet,
    pub mixer: Mixer,
    pub target_ca: QNet,
    pub target_rc: QNet,
    pub target_mixer: Mixer,
    pub td_steps: u64,
}

impl QmixLearner {
    pub fn new(cfg: TrainConfig, rng: &mut RngStream) -> Self {
        let ca_net = QNet::new(CA_INPUT_DIM, CA_ACTIONS, rng);
        let rc_net = QNet::new(RC_INPUT_DIM, RC_ACTIONS, rng);
        let mixer = Mixer::new(GLOBAL_STATE_DIM, rng);
        QmixLearner {
            cfg,
            target_ca: ca_net.clone(),
            target_rc: rc_net.clone(),
            target_mixer: mixer.clone(),
            ca_net,
            rc_net,
            mixer,
            td_steps: 0,
        }
    }

    pub fn policy(&self) -> PolicyNets {
        PolicyNets { ca: self.ca_net.clone(), rc: self.rc_net.clone() }
    }

    pub fn sync_targets(&mut self) {
        self.target_ca = self.ca_net.clone();
        self.target_rc = self.rc_net.clone();
        self.target_mixer = self.mixer.clone();
    }

    fn each_linear(&mut self, mut f: impl FnMut(&mut Linear)) {
        f(&mut self.ca_net.l1);
        f(&mut self.ca_net.l2);
        f(&mut self.rc_net.l1);
        f(&mut self.rc_net.l2);
        f(&mut self.mixer.hyper_w1);
        f(&mut self.mixer.hyper_b1);
        f(&mut self.mixer.hyper_w2);
        f(&mut self.mixer.hyper_b2a);
        f(&mut self.mixer.hyper_b2b);
    }

    /// Named views of every online parameter tensor, for persistence.
    /// Shapes are `[out, in]` for weights and `[out]` for biases.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (prefix, l) in [
            ("ca.l1", &self.ca_net.l1),
            ("ca.l2", &self.ca_net.l2),
            ("rc.l1", &self.rc_net.l1),
            ("rc.l2", &self.rc_net.l2),
            ("mix.w1", &self.mixer.hyper_w1),
            ("mix.b1", &self.mixer.hyper_b1),
            ("mix.w2", &self.mixer.hyper_w2),
            ("mix.b2a", &self.mixer.hyper_b2a),
            ("mix.b2b", &self.mixer.hyper_b2b),
        ] {
            out.push((format!("{prefix}.w"), vec![l.out_dim, l.in_dim], l.w.as_slice()));
            out.push((format!("{prefix}.b"), vec![l.out_dim], l.b.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut Vec<f64>)> {
        let mut out = Vec::new();
        for (prefix, l) in [
            ("ca.l1", &mut self.ca_net.l1),
            ("ca.l2", &mut self.ca_net.l2),
            ("rc.l1", &mut self.rc_net.l1),
            ("rc.l2", &mut self.rc_net.l2),
            ("mix.w1", &mut self.mixer.hyper_w1),
            ("mix.b1", &mut self.mixer.hyper_b1),
            ("mix.w2", &mut self.mixer.hyper_w2),
            ("mix.b2a", &mut self.mixer.hyper_b2a),
            ("mix.b2b", &mut self.mixer.hyper_b2b),
        ] {
            out.push((format!("{prefix}.w"), vec![l.out_dim, l.in_dim], &mut l.w));
            out.push((format!("{prefix}.b"), vec![l.out_dim], &mut l.b));
        }
        out
    }

    /// TD target for one transition, from the frozen target networks.
    fn target_value(&self, e: &Experience) -> f64 {
        if e.done {
            return e.reward;
        }
        let qca = self.target_ca.q_values(&e.next_ca_obs);
        let qrc = self.target_rc.q_values(&e.next_rc_obs);
        let best = [qca[argmax(&qca)], qrc[argmax(&qrc)]];
        e.reward + self.cfg.gamma * self.target_mixer.q_tot(best, &e.next_state)
    }

    /// Mean squared TD error of `batch` under the current online
    /// parameters, without touching gradients.
    pub fn loss_only(&self, batch: &[&Experience]) -> f64 {
        let mut loss = 0.0;
        for e in batch {
            let q_ca = self.ca_net.q_values(&e.ca_obs)[e.a_ca];
            let q_rc = self.rc_net.q_values(&e.rc_obs)[e.a_rc];
            let q_tot = self.mixer.q_tot([q_ca, q_rc], &e.state);
            let err = q_tot - self.target_value(e);
            loss += err * err;
        }
        loss / batch.len() as f64
    }

    /// Forward and backward over one batch: returns the loss and leaves
    /// gradients accumulated (not yet applied).
    fn forward_backward(&mut self, batch: &[&Experience]) -> f64 {
        self.each_linear(Linear::zero_grads);
        let inv = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for e in batch {
            let (qca_all, ca_cache) = self.ca_net.forward(&e.ca_obs);
            let (qrc_all, rc_cache) = self.rc_net.forward(&e.rc_obs);
            let chosen = [qca_all[e.a_ca], qrc_all[e.a_rc]];
            let (q_tot, mix_cache) = self.mixer.forward(chosen, &e.state);
            let err = q_tot - self.target_value(e);
            loss += err * err * inv;

            let g = 2.0 * err * inv;
            let gq = self.mixer.backward(&mix_cache, g);
            let mut g_ca = vec![0.0; CA_ACTIONS];
            g_ca[e.a_ca] = gq[0];
            self.ca_net.backward(&ca_cache, &g_ca);
            let mut g_rc = vec![0.0; RC_ACTIONS];
            g_rc[e.a_rc] = gq[1];
            self.rc_net.backward(&rc_cache, &g_rc);
        }
        loss
    }

    /// One optimizer step on `batch`: backprop, global-norm clip, SGD,
    /// and a target refresh every `target_sync_interval` steps.
    pub fn td_step(&mut self, batch: &[&Experience]) -> Result<f64> {
        assert!(!batch.is_empty());
        let loss = self.forward_backward(batch);
        if !loss.is_finite() {
            return Err(SimError::NonFiniteLoss { step: self.td_steps, value: loss });
        }
        let mut sq = 0.0;
        self.each_linear(|l| sq += l.grad_sq_sum());
        let norm = sq.sqrt();
        if norm > self.cfg.grad_clip_norm {
            let s = self.cfg.grad_clip_norm / norm;
            self.each_linear(|l| l.scale_grads(s));
        }
        let lr = self.cfg.lr;
        self.each_linear(|l| l.sgd(lr));
        self.td_steps += 1;
        if self.td_steps % self.cfg.target_sync_interval == 0 {
            self.sync_targets();
        }
        Ok(loss)
    }

    #[cfg(test)]
    fn zero_all_params(&mut self) {
        self.each_linear(Linear::zero_params);
        self.sync_targets();
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStreams;

    fn rng(name: &str) -> RngStream {
        RngStreams::new(2024).stream(name)
    }

    fn zeroed_linear(in_dim: usize, out_dim: usize, bias: f64) -> Linear {
        let mut l = Linear::new(in_dim, out_dim, &mut rng("zl"));
        l.zero_params();
        l.b.iter_mut().for_each(|b| *b = bias);
        l
    }

    #[test]
    fn mixer_toy_forward_oracle() {
        // All hypernet weights zero, so only biases act: W1 is all ones,
        // b1 all -1, W2 all 1/32, b2 = 0.5. With q = (1, 2) each hidden
        // unit is relu(1 + 2 - 1) = 2, the output sum is 32 * (1/32) * 2
        // = 2, and the bias path adds 0.5: q_tot = 2.5.
        let mixer = Mixer {
            hyper_w1: zeroed_linear(GLOBAL_STATE_DIM, MIX_HIDDEN * N_AGENTS, 1.0),
            hyper_b1: zeroed_linear(GLOBAL_STATE_DIM, MIX_HIDDEN, -1.0),
            hyper_w2: zeroed_linear(GLOBAL_STATE_DIM, MIX_HIDDEN, 1.0 / 32.0),
            hyper_b2a: zeroed_linear(GLOBAL_STATE_DIM, MIX_HIDDEN, 0.0),
            hyper_b2b: zeroed_linear(MIX_HIDDEN, 1, 0.5),
        };
        let state = vec![0.3; GLOBAL_STATE_DIM];
        let q_tot = mixer.q_tot([1.0, 2.0], &state);
        assert!((q_tot - 2.5).abs() < 1e-12, "q_tot={q_tot}");
    }

    fn random_vec(n: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..n).map(|_| 2.0 * rng.next_uniform() - 1.0).collect()
    }

    fn random_experience(rng: &mut RngStream, done: bool) -> Experience {
        Experience {
            state: random_vec(GLOBAL_STATE_DIM, rng),
            ca_obs: random_vec(CA_INPUT_DIM, rng),
            rc_obs: random_vec(RC_INPUT_DIM, rng),
            a_ca: rng.uniform_int(1) as usize,
            a_rc: rng.uniform_int(11) as usize,
            reward: 2.0 * rng.next_uniform() - 1.0,
            terms: Default::default(),
            next_state: random_vec(GLOBAL_STATE_DIM, rng),
            next_ca_obs: random_vec(CA_INPUT_DIM, rng),
            next_rc_obs: random_vec(RC_INPUT_DIM, rng),
            done,
        }
    }

    #[test]
    fn all_zero_parameters_give_exactly_zero_loss_on_zero_rewards() {
        let mut learner = QmixLearner::new(TrainConfig::default(), &mut rng("zero"));
        learner.zero_all_params();
        let mut r = rng("zero-batch");
        let batch: Vec<Experience> = (0..8)
            .map(|_| {
                let mut e = random_experience(&mut r, false);
                e.reward = 0.0;
                e
            })
            .collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        assert_eq!(learner.loss_only(&refs), 0.0);
        let loss = learner.td_step(&refs).unwrap();
        assert_eq!(loss, 0.0);
        // Nothing can move: every gradient is zero at the origin.
        assert!(learner.ca_net.l1.w.iter().all(|&w| w == 0.0));
        assert!(learner.mixer.hyper_w1.b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn joint_value_is_monotone_in_each_agent_utility() {
        let mut r = rng("mono");
        for trial in 0..1000 {
            let mixer = Mixer::new(GLOBAL_STATE_DIM, &mut r);
            let state = random_vec(GLOBAL_STATE_DIM, &mut r);
            let q = [4.0 * r.next_uniform() - 2.0, 4.0 * r.next_uniform() - 2.0];
            let base = mixer.q_tot(q, &state);
            for i in 0..N_AGENTS {
                let mut up = q;
                up[i] += 0.25 + r.next_uniform();
                let bumped = mixer.q_tot(up, &state);
                assert!(
                    bumped >= base - 1e-9,
                    "trial {trial}: raising q[{i}] lowered q_tot: {base} -> {bumped}"
                );
            }
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut learner = QmixLearner::new(TrainConfig::default(), &mut rng("fd-init"));
        let mut r = rng("fd-batch");
        let batch: Vec<Experience> =
            (0..4).map(|i| random_experience(&mut r, i == 3)).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        learner.forward_backward(&refs);

        // Collect the analytic gradient of a spread of parameters, then
        // wiggle each parameter and compare against central differences.
        let mut checks: Vec<(usize, usize, f64)> = Vec::new();
        {
            let mut grads: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
            let mut k = 0;
            learner.each_linear(|l| {
                grads.push((k, l.gw.clone(), l.gb.clone()));
                k += 1;
            });
            let mut pick = rng("fd-pick");
            for (li, gw, gb) in grads {
                for _ in 0..4 {
                    let j = pick.uniform_int(gw.len() as u32 - 1) as usize;
                    checks.push((li * 2, j, gw[j]));
                }
                let j = pick.uniform_int(gb.len() as u32 - 1) as usize;
                checks.push((li * 2 + 1, j, gb[j]));
            }
        }
        let h = 1e-6;
        for (slot, j, analytic) in checks {
            let wiggle = |l: &mut QmixLearner, delta: f64| {
                let mut k = 0;
                l.each_linear(|lin| {
                    if k == slot / 2 {
                        if slot % 2 == 0 {
                            lin.w[j] += delta;
                        } else {
                            lin.b[j] += delta;
                        }
                    }
                    k += 1;
                });
            };
            wiggle(&mut learner, h);
            let up = learner.loss_only(&refs);
            wiggle(&mut learner, -2.0 * h);
            let down = learner.loss_only(&refs);
            wiggle(&mut learner, h);
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            assert!(
                rel <= 1e-4,
                "slot {slot} index {j}: analytic {analytic} vs numeric {numeric} (rel {rel})"
            );
        }
    }

    #[test]
    fn repeated_steps_on_one_batch_drive_the_loss_down() {
        let mut learner = QmixLearner::new(TrainConfig::default(), &mut rng("overfit"));
        let mut r = rng("overfit-batch");
        let batch: Vec<Experience> =
            (0..8).map(|i| random_experience(&mut r, i % 4 == 3)).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(learner.td_step(&refs).unwrap());
        }
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss rose: {} -> {}", w[0], w[1]);
        }
        assert!(
            losses[99] < 0.9 * losses[0],
            "no real progress: {} -> {}",
            losses[0],
            losses[99]
        );
    }

    #[test]
    fn exploration_schedule_frozen_points() {
        let cfg = TrainConfig::default();
        assert_eq!(epsilon_at(&cfg, 0), 1.0);
        assert!((epsilon_at(&cfg, 25_000) - 0.525).abs() < 1e-12);
        assert!((epsilon_at(&cfg, 50_000) - 0.05).abs() < 1e-12);
        assert!((epsilon_at(&cfg, 10_000_000) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn replay_ring_overwrites_the_oldest() {
        let mut buf = ReplayBuffer::new(4);
        let mut r = rng("replay");
        for i in 0..6 {
            let mut e = random_experience(&mut r, false);
            e.reward = i as f64;
            buf.push(e);
        }
        assert_eq!(buf.len(), 4);
        let kept: Vec<f64> = buf.data.iter().map(|e| e.reward).collect();
        let mut sorted = kept.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![2.0, 3.0, 4.0, 5.0]);
        let sample = buf.sample(16, &mut r);
        assert_eq!(sample.len(), 16);
        assert!(sample.iter().all(|e| e.reward >= 2.0));
    }

    #[test]
    fn targets_refresh_on_the_sync_interval() {
        let mut cfg = TrainConfig::default();
        cfg.target_sync_interval = 2;
        let mut learner = QmixLearner::new(cfg, &mut rng("sync"));
        let mut r = rng("sync-batch");
        let batch: Vec<Experience> = (0..4).map(|_| random_experience(&mut r, false)).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        learner.td_step(&refs).unwrap();
        assert_ne!(learner.ca_net.l1.w, learner.target_ca.l1.w, "online moved, target frozen");
        learner.td_step(&refs).unwrap();
        assert_eq!(learner.ca_net.l1.w, learner.target_ca.l1.w, "interval hit: copied");
    }

    #[test]
    fn terminal_transitions_do_not_bootstrap() {
        let learner = QmixLearner::new(TrainConfig::default(), &mut rng("done"));
        let mut r = rng("done-batch");
        let mut e = random_experience(&mut r, true);
        e.reward = 0.7;
        assert_eq!(learner.target_value(&e), 0.7);
        e.done = false;
        assert_ne!(learner.target_value(&e), 0.7);
    }

    #[test]
    fn tensor_catalog_covers_every_layer() {
        let learner = QmixLearner::new(TrainConfig::default(), &mut rng("tensors"));
        let tensors = learner.tensors();
        assert_eq!(tensors.len(), 18);
        let total: usize = tensors.iter().map(|(_, _, d)| d.len()).sum();
        let expect = (CA_INPUT_DIM * 64 + 64)
            + (64 * CA_ACTIONS + CA_ACTIONS)
            + (RC_INPUT_DIM * 64 + 64)
            + (64 * RC_ACTIONS + RC_ACTIONS)
            + (12 * 64 + 64)
            + (12 * 32 + 32) * 3
            + (32 + 1);
        assert_eq!(total, expect);
        for (name, shape, data) in tensors {
            assert!(!name.is_empty());
            assert_eq!(shape.iter().product::<usize>(), data.len());
        }
    }
}
