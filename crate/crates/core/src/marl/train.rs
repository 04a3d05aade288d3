use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{compute_returns, Phase, TeamPolicy, TrainConfig};
use crate::comm::StepContext;
use crate::constraints::ChannelConfig;
use crate::env::{EpisodeTrace, Posg, PredatorPrey, PredatorPreyConfig, StepRecord};
use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, ParamStore, Tape, Var};
use crate::seed::{derive_seed, rng_for, stream};

/// How one episode is played.
#[derive(Clone, Copy, Debug)]
pub struct Rollout {
    /// Episode identifier; also keys the channel's randomness.
    pub episode: u64,
    pub env_seed: u64,
    pub phase: Phase,
    /// Seed for sampling actions; `None` picks the most likely action.
    pub action_seed: Option<u64>,
}

fn step_context<'a>(
    episode: u64,
    record_t: usize,
    topology: &'a crate::comm::Topology,
    channel: &'a ChannelConfig,
    senders: &'a [bool],
) -> StepContext<'a> {
    StepContext {
        episode,
        timestep: record_t,
        topology,
        channel,
        senders: Some(senders),
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}


/// Plays one episode: observe, communicate, act, step, until done.
pub fn run_episode(
    policy: &TeamPolicy,
    store: &ParamStore,
    env: &mut PredatorPrey,
    channel: &ChannelConfig,
    rollout: Rollout,
) -> Result<EpisodeTrace> {
    let n = env.n_agents();
    if n != policy.n_agents() || env.observation_dim() != policy.observation_dim() || env.action_count() != policy.n_actions()
    {
        return Err(Error::config("environment and policy dimensions disagree"));
    }
    let mut rng = rollout.action_seed.map(|s| rng_for(&[s]));
    let mut obs = env.reset(rollout.env_seed)?;
    let mut trace = EpisodeTrace {
        episode: rollout.episode,
        env_seed: rollout.env_seed,
        steps: Vec::new(),
    };
    loop {
        let state = env.state().clone();
        let frozen: Vec<bool> = (0..n).map(|i| env.is_frozen(i)).collect();
        let senders: Vec<bool> = (0..n).map(|i| env.may_send(i)).collect();
        let topo = policy.topology(&state.predators, env.config().comm_range, channel)?;
        let ctx = step_context(rollout.episode, state.t, &topo, channel, &senders);
        let mut t = Tape::new();
        let out = policy.forward(&mut t, store, &obs, &ctx, rollout.phase, false)?;
        let actions: Vec<usize> = out
            .log_probs
            .iter()
            .map(|&lp| {
                let p: Vec<f64> = t.value(lp).as_slice().iter().map(|v| v.exp()).collect();
                Ok(match rng.as_mut() {
                    Some(r) => WeightedIndex::new(&p)
                        .map_err(|e| Error::NonFinite(format!("action distribution ({e})")))?
                        .sample(r),
                    None => argmax(&p),
                })
            })
            .collect::<Result<_>>()?;
        let tr = env.step(&actions)?;
        trace.steps.push(StepRecord {
            state,
            observations: obs,
            actions,
            rewards: tr.rewards,
            done: tr.done,
            frozen,
            comm: out.comm,
        });
        obs = tr.observations;
        if tr.done {
            return Ok(trace);
        }
    }
}

/// Components of a policy-gradient loss, averaged like the loss itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_return: f64,
}

/// Builds `scale * sum(per-step losses)` for one recorded episode on `t`.
#[allow(clippy::too_many_arguments)]
fn episode_loss(
    t: &mut Tape,
    policy: &TeamPolicy,
    store: &ParamStore,
    trace: &EpisodeTrace,
    cfg: &TrainConfig,
    env_cfg: &PredatorPreyConfig,
    channel: &ChannelConfig,
    scale: f64,
    frozen: Option<&[Vec<f64>]>,
    used: &mut Vec<Vec<f64>>,
    report: &mut LossReport,
) -> Result<Option<Var>> {
    let n = policy.n_agents();
    let a = policy.n_actions();
    let returns: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r: Vec<f64> = trace.steps.iter().map(|s| s.rewards[i]).collect();
            compute_returns(&r, cfg.gamma)
        })
        .collect();
    let mut terms = Vec::new();
    for (k, step) in trace.steps.iter().enumerate() {
        let senders: Vec<bool> = step.state.locked.iter().map(|&l| env_cfg.locked_send || !l).collect();
        let topo = policy.topology(&step.state.predators, env_cfg.comm_range, channel)?;
        let ctx = step_context(trace.episode, step.state.t, &topo, channel, &senders);
        let out = policy.forward(t, store, &step.observations, &ctx, Phase::Train, true)?;
        let values = out.values.expect("values requested");
        let mut step_baselines = Vec::with_capacity(n);
        for &v in &values {
            step_baselines.push(t.value(v).item()?);
        }
        if let Some(f) = frozen {
            let given = f.get(k).ok_or_else(|| Error::contract("frozen baselines do not cover the episode"))?;
            if given.len() != n {
                return Err(Error::contract("frozen baselines have the wrong number of agents"));
            }
            step_baselines.clone_from(given);
        }
        for i in (0..n).filter(|&i| !step.frozen[i]) {
            let ret = returns[i][k];
            let lp = out.log_probs[i];
            let v = values[i];
            let baseline = step_baselines[i];
            let advantage = ret - baseline;
            let mut onehot = DenseMatrix::zeros(a, 1);
            onehot.set(step.actions[i], 0, 1.0);
            let pick = t.constant(onehot);
            let lp_a = t.matmul(lp, pick)?;
            let pg = t.scale(lp_a, -advantage * scale)?;

            let target = t.constant(DenseMatrix::scalar(ret)?);
            let diff = t.sub(v, target)?;
            let sq = t.mul(diff, diff)?;
            let vl = t.scale(sq, 0.5 * cfg.value_coef * scale)?;

            let p = t.exp(lp)?;
            let plogp = t.mul(p, lp)?;
            let neg_h = t.sum(plogp)?;
            let ent = t.scale(neg_h, cfg.entropy_coef * scale)?;

            let lp_val = t.value(lp_a).item()?;
            report.policy_loss += -advantage * lp_val * scale;
            report.value_loss += 0.5 * (t.value(v).item()? - ret).powi(2) * scale;
            report.entropy += -t.value(neg_h).item()? * scale;
            terms.extend([pg, vl, ent]);
        }
        used.push(step_baselines);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let stacked = t.concat_rows(&terms)?;
    Ok(Some(t.sum(stacked)?))
}

fn loss_scale(traces: &[EpisodeTrace], n: usize) -> f64 {
    1.0 / (traces.len() * n) as f64
}

/// Baseline values per episode, step and agent. The advantage in the
/// policy term treats them as constants.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Baselines(pub Vec<Vec<Vec<f64>>>);

/// Batch loss on one tape, for inspection and gradient checking. The
/// scalar is the mean over episodes and agents of the per-step terms.
///
/// With `frozen = Some(b)` the advantages use `b` instead of the current
/// value head, which makes the scalar a function whose exact gradient is
/// the policy-gradient update direction.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    t: &mut Tape,
    policy: &TeamPolicy,
    store: &ParamStore,
    traces: &[EpisodeTrace],
    cfg: &TrainConfig,
    env_cfg: &PredatorPreyConfig,
    channel: &ChannelConfig,
    frozen: Option<&Baselines>,
) -> Result<(Var, LossReport, Baselines)> {
    if traces.is_empty() {
        return Err(Error::contract("a policy-gradient batch needs at least one episode"));
    }
    if frozen.is_some_and(|b| b.0.len() != traces.len()) {
        return Err(Error::contract("frozen baselines do not match the batch"));
    }
    let scale = loss_scale(traces, policy.n_agents());
    let mut report = LossReport::default();
    let mut parts = Vec::new();
    let mut used = Baselines::default();
    for (e, trace) in traces.iter().enumerate() {
        let mut ep = Vec::new();
        let f = frozen.map(|b| b.0[e].as_slice());
        if let Some(l) = episode_loss(t, policy, store, trace, cfg, env_cfg, channel, scale, f, &mut ep, &mut report)? {
            parts.push(l);
        }
        used.0.push(ep);
    }
    let total = if parts.is_empty() {
        t.constant(DenseMatrix::scalar(0.0)?)
    } else {
        let stacked = t.concat_rows(&parts)?;
        t.sum(stacked)?
    };
    report.loss = t.value(total).item()?;
    report.mean_return = traces.iter().map(EpisodeTrace::team_return).sum::<f64>() / traces.len() as f64;
    Ok((total, report, used))
}

/// One logged parameter update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub episodes: usize,
    #[serde(flatten)]
    pub loss: LossReport,
    pub mean_length: f64,
    pub grad_norm: f64,
    pub messages: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub updates: usize,
    pub episodes: usize,
    /// Mean team return over the last batch (0 without updates).
    pub final_mean_return: f64,
}

/// Gradient step on a batch of traces: per-episode tapes, summed
/// gradients, optional norm clipping, plain gradient descent.
fn update(
    policy: &TeamPolicy,
    store: &mut ParamStore,
    traces: &[EpisodeTrace],
    cfg: &TrainConfig,
    env_cfg: &PredatorPreyConfig,
    channel: &ChannelConfig,
) -> Result<(LossReport, f64)> {
    let scale = loss_scale(traces, policy.n_agents());
    let mut report = LossReport::default();
    store.zero_grads();
    for trace in traces {
        let mut t = Tape::new();
        let mut used = Vec::new();
        if let Some(loss) = episode_loss(&mut t, policy, store, trace, cfg, env_cfg, channel, scale, None, &mut used, &mut report)? {
            report.loss += t.value(loss).item()?;
            t.backward(loss)?;
            store.accumulate_grads(&t)?;
        }
    }
    if !report.loss.is_finite() {
        return Err(Error::NonFinite("policy-gradient loss".into()));
    }
    if let Some(name) = store.first_non_finite_grad() {
        return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
    }
    let norm = store.grad_norm();
    if let Some(c) = cfg.clip_grad_norm {
        if norm > c {
            store.scale_grads(c / norm);
        }
    }
    store.sgd_step(cfg.learning_rate)?;
    report.mean_return = traces.iter().map(EpisodeTrace::team_return).sum::<f64>() / traces.len() as f64;
    Ok((report, norm))
}

/// Environment seed and action seed of training episode `k`.
pub(crate) fn training_seeds(seed: u64, k: usize) -> (u64, u64) {
    (derive_seed(&[seed, stream::ENV, k as u64]), derive_seed(&[seed, stream::ACTIONS, k as u64]))
}

/// Trains for `cfg.episodes` episodes in batches, calling `on_update`
/// after every update.
pub fn train<F>(
    policy: &TeamPolicy,
    store: &mut ParamStore,
    env_cfg: &PredatorPreyConfig,
    channel: &ChannelConfig,
    cfg: &TrainConfig,
    mut on_update: F,
) -> Result<TrainSummary>
where
    F: FnMut(&UpdateRecord) -> Result<()>,
{
    cfg.validate()?;
    let mut env = PredatorPrey::new(env_cfg.clone())?;
    let mut summary = TrainSummary {
        updates: 0,
        episodes: 0,
        final_mean_return: 0.0,
    };
    while summary.episodes < cfg.episodes {
        let batch = cfg.batch_episodes.min(cfg.episodes - summary.episodes);
        let traces = (summary.episodes..summary.episodes + batch)
            .map(|k| {
                let (env_seed, action_seed) = training_seeds(cfg.seed, k);
                let rollout = Rollout {
                    episode: k as u64,
                    env_seed,
                    phase: Phase::Train,
                    action_seed: Some(action_seed),
                };
                run_episode(policy, store, &mut env, channel, rollout)
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad_norm) = update(policy, store, &traces, cfg, env_cfg, channel)?;
        summary.episodes += batch;
        summary.updates += 1;
        summary.final_mean_return = loss.mean_return;
        let record = UpdateRecord {
            update: summary.updates,
            episodes: summary.episodes,
            loss,
            mean_length: traces.iter().map(EpisodeTrace::len).sum::<usize>() as f64 / batch as f64,
            grad_norm,
            messages: traces.iter().map(|t| t.inter_agent_messages() + t.proxy_messages()).sum(),
        };
        on_update(&record)?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub per_agent_mean: Vec<f64>,
    pub per_agent_std: Vec<f64>,
    pub per_seed: Vec<SeedStats>,
    pub mean_length: f64,
    pub inter_agent_messages: usize,
    pub proxy_messages: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    (m, var.sqrt())
}

/// Evaluation episode ids live far away from training ids.
const EVAL_EPISODE_BASE: u64 = 1 << 48;

/// Plays `episodes` evaluation episodes per seed. `greedy` picks the most
/// likely action; otherwise actions are sampled with a seeded generator.
pub fn evaluate(
    policy: &TeamPolicy,
    store: &ParamStore,
    env_cfg: &PredatorPreyConfig,
    channel: &ChannelConfig,
    seeds: &[u64],
    episodes: usize,
    greedy: bool,
) -> Result<(EvalReport, Vec<EpisodeTrace>)> {
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::contract("evaluation needs at least one seed and one episode"));
    }
    let mut env = PredatorPrey::new(env_cfg.clone())?;
    let mut traces = Vec::with_capacity(seeds.len() * episodes);
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut returns = Vec::with_capacity(episodes);
        for k in 0..episodes {
            let rollout = Rollout {
                episode: EVAL_EPISODE_BASE + derive_seed(&[seed, k as u64]) % EVAL_EPISODE_BASE,
                env_seed: derive_seed(&[seed, stream::EVAL, k as u64]),
                phase: Phase::Eval,
                action_seed: (!greedy).then(|| derive_seed(&[seed, stream::EVAL, stream::ACTIONS, k as u64])),
            };
            let trace = run_episode(policy, store, &mut env, channel, rollout)?;
            returns.push(trace.team_return());
            traces.push(trace);
        }
        let (m, s) = mean_std(&returns);
        per_seed.push(SeedStats {
            seed,
            mean_return: m,
            std_return: s,
        });
    }
    let team: Vec<f64> = traces.iter().map(EpisodeTrace::team_return).collect();
    let (mean_return, std_return) = mean_std(&team);
    let n = policy.n_agents();
    let per_agent: Vec<Vec<f64>> = (0..n)
        .map(|i| traces.iter().map(|t| t.agent_returns()[i]).collect())
        .collect();
    let report = EvalReport {
        episodes: traces.len(),
        mean_return,
        std_return,
        per_agent_mean: per_agent.iter().map(|r| mean_std(r).0).collect(),
        per_agent_std: per_agent.iter().map(|r| mean_std(r).1).collect(),
        per_seed,
        mean_length: traces.iter().map(EpisodeTrace::len).sum::<usize>() as f64 / traces.len() as f64,
        inter_agent_messages: traces.iter().map(EpisodeTrace::inter_agent_messages).sum(),
        proxy_messages: traces.iter().map(EpisodeTrace::proxy_messages).sum(),
    };
    Ok((report, traces))
}
