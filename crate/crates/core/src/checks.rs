//! Oracle suites behind the `check` command. Every property reports the
//! deviation it measured next to the threshold it was held to.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::comm::{BuilderKind, CommConfig, CommMode, CommPipeline, Encoder, Message, Paths, Reachability, StepContext, Topology};
use crate::constraints::{apply_channel, channel_effect, ChannelConfig, ChannelEffect, MessageId};
use crate::env::{Posg, PredatorPrey, PredatorPreyConfig};
use crate::error::{Error, Result};
use crate::gnn::{GnnStack, GraphView, LayerSpec};
use crate::graph::CommGraph;
use crate::marl::{batch_loss, run_episode, Phase, Rollout, TrainConfig};
use crate::methods::{instantiate, MethodSpec, PRESETS};
use crate::numeric::{finite_diff_check, DenseMatrix, GradCheckReport, ParamStore, Tape, Var};
use crate::seed::{derive_seed, rng_for};

pub const SUITES: [&str; 5] = ["gradients", "equivariance", "receptive_field", "proxy_equivalence", "channel"];

#[derive(Clone, Debug, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
}

impl PropertyResult {
    /// Passes when `measured <= threshold`.
    fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: measured <= threshold,
            measured,
            threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    let properties = match name {
        "gradients" => gradients(seed)?,
        "equivariance" => equivariance(seed)?,
        "receptive_field" => receptive_field(seed)?,
        "proxy_equivalence" => proxy_equivalence(seed)?,
        "channel" => channel(seed)?,
        other => {
            return Err(Error::config(format!(
                "unknown check suite `{other}` (known: {})",
                SUITES.join(", ")
            )))
        }
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        seed,
        passed: properties.iter().all(|p| p.passed),
        properties,
    })
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("shape matches data")
}

fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Result<CommGraph> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.extend([(i, j), (j, i)]);
            }
        }
    }
    CommGraph::new(n, edges, false)
}

fn max_row_diff(t: &Tape, a: &[Var], b: &[Var]) -> Result<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| t.value(x).max_abs_diff(t.value(y)))
        .try_fold(0.0_f64, |m, d| Ok(m.max(d?)))
}

const LAYER_KINDS: [&str; 6] = ["gcn", "gat", "mpnn", "mpnn_mean", "mpnn_max", "mpnn_attention"];

fn gradients(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    let mut rng = rng_for(&[seed, 0x6ad]);
    let graph = CommGraph::new(5, [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 4), (4, 3), (0, 4)], true)?;
    let x = random_matrix(&mut rng, 5, 4);

    for kind in LAYER_KINDS {
        let mut store = ParamStore::new(derive_seed(&[seed, 1]));
        let specs: Vec<LayerSpec> = vec![format!("{kind}:6:tanh").parse()?, format!("{kind}:3:identity").parse()?];
        let stack = GnnStack::build(&mut store, "s", 4, &specs)?;
        let c = random_matrix(&mut rng, 5, 3);
        let report = finite_diff_check(
            &store,
            |t, s| {
                let xv = t.constant(x.clone());
                let h = stack.forward(t, s, GraphView::new(&graph), xv)?;
                let cv = t.constant(c.clone());
                let prod = t.mul(h[1], cv)?;
                t.sum(prod)
            },
            1e-5,
            1e-4,
            None,
        )?;
        out.push(gradient_property(format!("layer/{kind}"), &report, 1e-4));
    }

    for kind in [BuilderKind::CompleteWeighted, BuilderKind::TopK(2)] {
        let mut store = ParamStore::new(derive_seed(&[seed, 2]));
        let builder = crate::comm::GraphBuilder::new(&mut store, "b", kind, 4)?;
        let stack = GnnStack::build(&mut store, "s", 4, &["gcn:3:tanh".parse()?])?;
        let c = random_matrix(&mut rng, 5, 3);
        let nodes: Vec<usize> = (0..5).collect();
        let report = finite_diff_check(
            &store,
            |t, s| {
                let xv = t.constant(x.clone());
                let g = builder.build(t, s, &nodes, xv, &graph)?;
                let view = GraphView {
                    graph: &g.graph,
                    edge_weights: g.weights,
                };
                let h = stack.forward(t, s, view, xv)?;
                let cv = t.constant(c.clone());
                let prod = t.mul(h[0], cv)?;
                t.sum(prod)
            },
            1e-5,
            1e-4,
            None,
        )?;
        out.push(gradient_property(format!("builder/{kind}"), &report, 1e-4));
    }

    let mut scored = MethodSpec::preset("dgn_like")?;
    scored.name = "scored".into();
    scored.builder = "complete_weighted".into();
    scored.reachability = "all_agents".into();
    scored.range = None;
    scored.evolve_relation = true;
    for spec in PRESETS
        .iter()
        .map(|p| MethodSpec::preset(p))
        .chain(std::iter::once(Ok(scored)))
    {
        let spec = spec?;
        let report = full_loss_check(&spec, seed)?;
        out.push(gradient_property(format!("full_loss/{}", spec.name), &report, 1e-3));
    }
    Ok(out)
}

/// A check whose gradients all vanish compares nothing, so it fails.
fn gradient_property(name: String, report: &GradCheckReport, rtol: f64) -> PropertyResult {
    let live = report.params.iter().any(|p| p.max_abs_grad > 1e-8);
    let measured = if live { report.max_deviation() } else { f64::INFINITY };
    PropertyResult::at_most(name, measured, rtol)
}

/// Analytic gradient of the batch loss against central differences, on a
/// 2-agent batch of one 3-step episode. Baselines are frozen at their
/// current values so that the loss is the function being differentiated.
pub fn full_loss_check(spec: &MethodSpec, seed: u64) -> Result<GradCheckReport> {
    let env_cfg = PredatorPreyConfig {
        grid_size: 5,
        n_predators: 2,
        max_steps: 3,
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        hidden: 8,
        seed,
        ..Default::default()
    };
    let exp = instantiate(spec, &env_cfg, &train_cfg)?;
    let channel = ChannelConfig::default();
    let mut env = PredatorPrey::new(env_cfg.clone())?;
    let mut trace = None;
    for k in 0..1000 {
        let tr = run_episode(
            &exp.policy,
            &exp.store,
            &mut env,
            &channel,
            Rollout {
                episode: k,
                env_seed: derive_seed(&[seed, k]),
                phase: Phase::Train,
                action_seed: Some(derive_seed(&[seed, k, 1])),
            },
        )?;
        if tr.len() == 3 && tr.steps.iter().all(|s| s.frozen.iter().all(|f| !f)) {
            trace = Some(tr);
            break;
        }
    }
    let traces = vec![trace.ok_or_else(|| Error::contract("no 3-step episode without locked agents"))?];
    let (_, _, baselines) = batch_loss(
        &mut Tape::new(),
        &exp.policy,
        &exp.store,
        &traces,
        &train_cfg,
        &env_cfg,
        &channel,
        None,
    )?;
    finite_diff_check(
        &exp.store,
        |t, s| {
            batch_loss(t, &exp.policy, s, &traces, &train_cfg, &env_cfg, &channel, Some(&baselines)).map(|r| r.0)
        },
        1e-6,
        1e-3,
        None,
    )
}

fn equivariance(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    let env_cfg = PredatorPreyConfig {
        n_predators: 4,
        ..Default::default()
    };
    let channel = ChannelConfig::default();
    let n = env_cfg.n_predators;
    for name in PRESETS {
        let spec = MethodSpec::preset(name)?;
        let exp = instantiate(&spec, &env_cfg, &TrainConfig { seed, ..Default::default() })?;
        let mut worst: f64 = 0.0;
        for trial in 0..10 {
            let mut rng = rng_for(&[seed, 0xe9, trial]);
            let mut env = PredatorPrey::new(env_cfg.clone())?;
            env.reset(derive_seed(&[seed, trial]))?;
            let positions = env.state().predators.clone();
            let obs = env.observe_all();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut obs_p = vec![Vec::new(); n];
            let mut pos_p = vec![(0, 0); n];
            for k in 0..n {
                obs_p[perm[k]] = obs[k].clone();
                pos_p[perm[k]] = positions[k];
            }
            let mut t = Tape::new();
            let mut run = |obs: &[Vec<f64>], pos: &[(usize, usize)]| -> Result<(Vec<Var>, Vec<Var>)> {
                let topo = exp.policy.topology(pos, env_cfg.comm_range, &channel)?;
                let ctx = StepContext {
                    episode: 0,
                    timestep: 0,
                    topology: &topo,
                    channel: &channel,
                    senders: None,
                };
                let step = exp.policy.forward(&mut t, &exp.store, obs, &ctx, Phase::Train, true)?;
                let mut reprs = Vec::new();
                if let Some(pipe) = exp.policy.comm() {
                    let paths = exp.policy.paths(Phase::Train);
                    let o = obs
                        .iter()
                        .map(|r| Ok(t.constant(DenseMatrix::row_vector(r)?)))
                        .collect::<Result<Vec<_>>>()?;
                    let c = pipe.forward(&mut t, &exp.store, &o, &ctx, paths)?;
                    reprs.extend(c.distributed.unwrap_or_default());
                    reprs.extend(c.proxy.map(|p| p.rows).unwrap_or_default());
                }
                let mut heads = step.log_probs;
                heads.extend(step.values.unwrap_or_default());
                Ok((reprs, heads))
            };
            let (r, h) = run(&obs, &positions)?;
            let (rp, hp) = run(&obs_p, &pos_p)?;
            // Both lists are blocks of n per-agent rows; map block rows through perm.
            let relabel = |v: &[Var]| -> Vec<Var> {
                v.chunks(n)
                    .flat_map(|block| {
                        let mut b = vec![block[0]; n];
                        for k in 0..n {
                            b[perm[k]] = block[k];
                        }
                        b
                    })
                    .collect()
            };
            worst = worst.max(max_row_diff(&t, &relabel(&r), &rp)?);
            worst = worst.max(max_row_diff(&t, &relabel(&h), &hp)?);
        }
        out.push(PropertyResult::at_most(format!("preset/{name}"), worst, 1e-9));
    }
    Ok(out)
}

fn receptive_field_config(rng: &mut impl Rng, depth: usize) -> Result<CommConfig> {
    let kinds = ["gcn", "gat", "mpnn", "mpnn_mean", "mpnn_attention"];
    let layers = (0..depth)
        .map(|_| format!("{}:5:tanh", kinds[rng.random_range(0..kinds.len())]).parse())
        .collect::<Result<Vec<LayerSpec>>>()?;
    Ok(CommConfig {
        mode: CommMode::Distributed,
        encoder: Encoder::Perceptron(4),
        reachability: Reachability::NearAgents(None),
        builder: BuilderKind::RangeSparse,
        layers,
        multi_round: true,
        evolve_relation: false,
        concat_raw_obs: false,
        concat_layers: false,
        parameter_sharing: true,
    })
}

/// Count of (j, i) pairs whose sensitivity disagrees with the hop bound,
/// over 50 random graphs.
fn receptive_field(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut violations = 0usize;
    let d_obs = 3;
    let channel = ChannelConfig::default();
    for trial in 0..50u64 {
        let mut rng = rng_for(&[seed, 0x4f, trial]);
        let n = rng.random_range(2..=10);
        let depth = rng.random_range(1..=3);
        let p = rng.random_range(0.15..0.5);
        let graph = random_graph(&mut rng, n, p)?;
        let cfg = receptive_field_config(&mut rng, depth)?;
        let mut store = ParamStore::new(derive_seed(&[seed, trial]));
        let pipe = CommPipeline::new(&mut store, cfg, n, d_obs)?;
        let topo = Topology::from_links(graph.clone());
        let obs: Vec<DenseMatrix> = (0..n).map(|_| random_matrix(&mut rng, 1, d_obs)).collect();
        let run = |obs: &[DenseMatrix]| -> Result<Vec<DenseMatrix>> {
            let mut t = Tape::new();
            let o: Vec<Var> = obs.iter().map(|m| t.constant(m.clone())).collect();
            let ctx = StepContext {
                episode: 0,
                timestep: 0,
                topology: &topo,
                channel: &channel,
                senders: None,
            };
            let paths = Paths {
                distributed: true,
                proxy: false,
            };
            let out = pipe.forward(&mut t, &store, &o, &ctx, paths)?;
            Ok(out
                .distributed
                .unwrap_or_default()
                .into_iter()
                .map(|v| t.value(v).clone())
                .collect())
        };
        let base = run(&obs)?;
        for j in 0..n {
            let mut bumped = obs.clone();
            let delta = random_matrix(&mut rng, 1, d_obs);
            for c in 0..d_obs {
                let v = bumped[j].get(0, c) + delta.get(0, c);
                bumped[j].set(0, c, v);
            }
            let moved = run(&bumped)?;
            let hops = graph.hop_distances_from(j);
            for i in 0..n {
                let changed = base[i].max_abs_diff(&moved[i])? > 1e-9;
                let within = hops[i].is_some_and(|h| h <= depth);
                if changed != within {
                    violations += 1;
                }
            }
        }
    }
    Ok(vec![PropertyResult::at_most("violations", violations as f64, 0.0)])
}

fn proxy_equivalence(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut worst: f64 = 0.0;
    let channel = ChannelConfig::default();
    for trial in 0..100u64 {
        let mut rng = rng_for(&[seed, 0x9e, trial]);
        let n = rng.random_range(2..=8);
        let d_obs = rng.random_range(2..=6);
        let depth = rng.random_range(1..=3);
        let layers = (0..depth)
            .map(|_| format!("{}:4:tanh", LAYER_KINDS[rng.random_range(0..LAYER_KINDS.len())]).parse())
            .collect::<Result<Vec<LayerSpec>>>()?;
        let builder = match rng.random_range(0..3) {
            0 => BuilderKind::RangeSparse,
            1 => BuilderKind::CompleteWeighted,
            _ => BuilderKind::TopK(rng.random_range(1..n)),
        };
        let cfg = CommConfig {
            mode: CommMode::Both,
            encoder: if rng.random_bool(0.5) { Encoder::Identity } else { Encoder::Perceptron(4) },
            reachability: Reachability::AllAgents,
            builder,
            layers,
            multi_round: true,
            evolve_relation: rng.random_bool(0.5),
            concat_raw_obs: rng.random_bool(0.5),
            concat_layers: rng.random_bool(0.5),
            parameter_sharing: true,
        };
        let mut store = ParamStore::new(derive_seed(&[seed, trial]));
        let pipe = CommPipeline::new(&mut store, cfg, n, d_obs)?;
        let topo = Topology::complete(n);
        let mut t = Tape::new();
        let o: Vec<Var> = (0..n).map(|_| t.constant(random_matrix(&mut rng, 1, d_obs))).collect();
        let ctx = StepContext {
            episode: trial,
            timestep: 0,
            topology: &topo,
            channel: &channel,
            senders: None,
        };
        let both = Paths {
            distributed: true,
            proxy: true,
        };
        let out = pipe.forward(&mut t, &store, &o, &ctx, both)?;
        let d = out.distributed.unwrap_or_default();
        let p = out.proxy.map(|p| p.rows).unwrap_or_default();
        worst = worst.max(max_row_diff(&t, &d, &p)?);
    }
    Ok(vec![PropertyResult::at_most("max_abs_diff", worst, 1e-9)])
}

fn channel(seed: u64) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();
    for p in [0.1, 0.3, 0.5] {
        let cfg = ChannelConfig {
            loss_p: p,
            seed,
            ..Default::default()
        };
        let drops = (0..10_000u64)
            .filter(|&k| {
                let id = MessageId {
                    episode: k / 100,
                    timestep: (k % 100) as usize,
                    round: 1,
                    sender: 0,
                    receiver: 1,
                };
                matches!(channel_effect(&cfg, &id, 4), ChannelEffect::Dropped)
            })
            .count();
        let rate = drops as f64 / 10_000.0;
        out.push(PropertyResult::at_most(format!("drop_rate/p={p}"), (rate - p).abs(), 0.02));
    }

    let null = ChannelConfig {
        seed,
        ..Default::default()
    };
    let mut rng = rng_for(&[seed, 0xc4]);
    let mut mismatches = 0usize;
    for k in 0..1000u64 {
        let mut payload: Vec<f64> = (0..8).map(|_| rng.random_range(-1e3..1e3)).collect();
        payload.extend([-0.0, f64::MIN_POSITIVE / 4.0, f64::MAX]);
        let msg = Message {
            sender: 0,
            payload,
            round: 1,
            timestep: k as usize,
        };
        let same = apply_channel(&null, &msg, 1, k).is_some_and(|m| {
            m.payload.len() == msg.payload.len()
                && m.payload.iter().zip(&msg.payload).all(|(a, b)| a.to_bits() == b.to_bits())
        });
        if !same {
            mismatches += 1;
        }
    }
    out.push(PropertyResult::at_most("null_identity_mismatches", mismatches as f64, 0.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("nope", 0).is_err());
    }

    #[test]
    fn channel_suite_passes() {
        let r = run_suite("channel", 0).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.properties.len(), 4);
    }
}
