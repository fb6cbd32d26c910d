//! REINFORCE on the gridworld.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::backprop::{argmax, Gradient, Workspace};
use super::curve::{IterationRecord, TrainingCurve};
use super::gridworld::{Action, EpisodeState, GridWorld};
use super::TrainError;
use crate::model::Mlp;
use crate::rng::{derive_indexed, derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReinforceConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            episodes_per_iter: 16,
            learning_rate: 0.05,
            gamma: 0.99,
            seed: 0,
        }
    }
}

impl ReinforceConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.episodes_per_iter == 0 {
            return bad("episodes_per_iter must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One recorded rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub observations: Vec<[f64; 2]>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// `G_t = sum_k gamma^k r_{t+k}`.
    pub fn returns_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rewards.len()];
        let mut acc = 0.0;
        for t in (0..self.rewards.len()).rev() {
            acc = self.rewards[t] + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

/// Mean and population standard deviation of greedy episode returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_reward: f64,
    pub std_reward: f64,
    pub episodes: usize,
}

impl EvalReport {
    fn from_totals(totals: &[f64]) -> Self {
        let n = totals.len() as f64;
        let mean = totals.iter().sum::<f64>() / n;
        let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean_reward: mean,
            std_reward: var.sqrt(),
            episodes: totals.len(),
        }
    }
}

fn check_policy(policy: &Mlp) -> Result<(), TrainError> {
    if policy.input_dim() != GridWorld::OBSERVATION_DIM {
        return Err(TrainError::InputDimension {
            expected: GridWorld::OBSERVATION_DIM,
            found: policy.input_dim(),
        });
    }
    if policy.output_dim() != GridWorld::ACTIONS {
        return Err(TrainError::TooManyClasses {
            classes: GridWorld::ACTIONS,
            outputs: policy.output_dim(),
        });
    }
    Ok(())
}

fn sample(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Play one episode from `state`. Actions are sampled from the policy with
/// `action_rng`, or taken greedily when it is `None`.
pub fn rollout<R: Rng + ?Sized>(
    policy: &Mlp,
    env: &GridWorld,
    mut state: EpisodeState,
    mut action_rng: Option<&mut R>,
) -> Result<Episode, TrainError> {
    check_policy(policy)?;
    let mut ws = Workspace::new(policy);
    let mut ep = Episode {
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
    };
    let mut done = env.is_done(&state);
    while !done {
        let obs = env.observe(&state);
        let probs = ws.forward(policy, &obs);
        let a = match action_rng.as_deref_mut() {
            Some(rng) => sample(probs, rng.gen::<f64>()),
            None => argmax(probs),
        };
        let (next, r, d) = env.step(&state, Action::from_index(a))?;
        ep.observations.push(obs);
        ep.actions.push(a);
        ep.rewards.push(r);
        state = next;
        done = d;
    }
    Ok(ep)
}

/// Steps taken from the absorbing target state (zero offset) cannot change the
/// outcome, so their score terms have zero mean and are left out.
fn informative(obs: &[f64; 2]) -> bool {
    obs[0] != 0.0 || obs[1] != 0.0
}

fn accumulate_gradient(policy: &Mlp, episodes: &[Episode], gamma: f64, grad: &mut Gradient) {
    let returns: Vec<Vec<f64>> = episodes.iter().map(|e| e.returns_to_go(gamma)).collect();
    let (mut total, mut count) = (0.0, 0usize);
    for (ep, g) in episodes.iter().zip(&returns) {
        for (obs, &gt) in ep.observations.iter().zip(g) {
            if informative(obs) {
                total += gt;
                count += 1;
            }
        }
    }
    if count == 0 {
        return;
    }
    let baseline = total / count as f64;
    let per_episode = 1.0 / episodes.len() as f64;
    let mut ws = Workspace::new(policy);
    let mut delta = vec![0.0; GridWorld::ACTIONS];
    for (ep, g) in episodes.iter().zip(&returns) {
        for t in 0..ep.actions.len() {
            let x = &ep.observations[t];
            let advantage = g[t] - baseline;
            if advantage == 0.0 || !informative(x) {
                continue;
            }
            let probs = ws.forward(policy, x);
            // d log pi(a | s) / d logits = onehot(a) - p
            for (k, d) in delta.iter_mut().enumerate() {
                *d = -probs[k];
            }
            delta[ep.actions[t]] += 1.0;
            ws.backward(policy, x, &delta, advantage * per_episode, grad);
        }
    }
}

/// REINFORCE ascent direction, in the layout of [`Mlp::params`]:
/// `(1/E) sum_e sum_t (G_t - b) grad log pi(a_t | s_t)`, where `b` is the mean
/// return-to-go over the summed steps. Steps taken while already on the
/// target are skipped.
pub fn policy_gradient(
    policy: &Mlp,
    episodes: &[Episode],
    gamma: f64,
) -> Result<Vec<f64>, TrainError> {
    check_policy(policy)?;
    if episodes.is_empty() {
        return Err(TrainError::InvalidConfig(
            "policy gradient needs at least one episode".into(),
        ));
    }
    let mut grad = Gradient::zeros_like(policy);
    accumulate_gradient(policy, episodes, gamma, &mut grad);
    Ok(grad.flatten())
}

/// Plain gradient ascent with REINFORCE. Targets are drawn from a stream
/// derived from the seed independently of action sampling, so runs with the
/// same seed face the same targets whatever the initial policy.
pub fn train_reinforce(
    init: &Mlp,
    env: &GridWorld,
    config: &ReinforceConfig,
) -> Result<(Mlp, TrainingCurve), TrainError> {
    config.validate()?;
    check_policy(init)?;
    let mut target_rng = seeded(derive_seed(config.seed, &["targets"]));
    let mut action_rng = seeded(derive_seed(config.seed, &["actions"]));
    let mut policy = init.clone();
    let mut grad = Gradient::zeros_like(&policy);
    let mut records = Vec::with_capacity(config.iterations);

    for iteration in 1..=config.iterations {
        let mut episodes = Vec::with_capacity(config.episodes_per_iter);
        for _ in 0..config.episodes_per_iter {
            let start = env.reset_with(&mut target_rng);
            episodes.push(rollout(&policy, env, start, Some(&mut action_rng))?);
        }
        let mean = episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64;
        records.push(IterationRecord {
            iteration,
            mean_episode_reward: mean,
        });

        grad.clear();
        accumulate_gradient(&policy, &episodes, config.gamma, &mut grad);
        if !grad.is_finite() {
            return Err(TrainError::NonFiniteGradient { iteration });
        }
        let lr = config.learning_rate;
        for (layer, g) in policy.layers_mut().iter_mut().zip(&grad.layers) {
            for (p, gi) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(g.weights.as_slice())
            {
                *p += lr * gi;
            }
            for (p, gi) in layer.biases.iter_mut().zip(&g.biases) {
                *p += lr * gi;
            }
        }
    }
    Ok((policy, TrainingCurve::Reinforce(records)))
}

/// Greedy rollouts; episode `i` uses the target drawn from `derive_indexed(seed, i)`.
pub fn evaluate_policy(
    policy: &Mlp,
    env: &GridWorld,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    if episodes == 0 {
        return Err(TrainError::InvalidConfig(
            "evaluation needs at least one episode".into(),
        ));
    }
    let totals = (0..episodes)
        .map(|i| {
            let start = env.reset(derive_indexed(seed, i as u64));
            rollout::<rand_chacha::ChaCha8Rng>(policy, env, start, None).map(|e| e.total_reward())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_totals(&totals))
}

/// Greedy rollouts on the given targets, one episode each.
pub fn evaluate_policy_on_targets(
    policy: &Mlp,
    env: &GridWorld,
    targets: &[(i32, i32)],
) -> Result<EvalReport, TrainError> {
    if targets.is_empty() {
        return Err(TrainError::InvalidConfig(
            "evaluation needs at least one target".into(),
        ));
    }
    let totals = targets
        .iter()
        .map(|&t| {
            let start = env.start_at(t)?;
            rollout::<rand_chacha::ChaCha8Rng>(policy, env, start, None).map(|e| e.total_reward())
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(EvalReport::from_totals(&totals))
}

/// Monte-Carlo mean episode reward of the uniform random policy.
pub fn random_policy_reward(env: &GridWorld, episodes: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = env.reset_with(&mut rng);
        while !env.is_done(&state) {
            let a = Action::from_index(rng.gen_range(0..GridWorld::ACTIONS));
            let (next, r, _) = env.step(&state, a).expect("episode not done");
            total += r;
            state = next;
        }
    }
    total / episodes.max(1) as f64
}
