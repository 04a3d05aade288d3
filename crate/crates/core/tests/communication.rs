use gnn_comm::comm::{
    BuilderKind, CommConfig, CommMode, CommOutput, CommPipeline, Encoder, Paths, Reachability, StepContext, Topology,
};
use gnn_comm::constraints::ChannelConfig;
use gnn_comm::graph::CommGraph;
use gnn_comm::numeric::{DenseMatrix, ParamStore, Tape, Var};

const D_OBS: usize = 3;

fn config(layers: &[&str], multi_round: bool) -> CommConfig {
    CommConfig {
        mode: CommMode::Distributed,
        encoder: Encoder::Perceptron(4),
        reachability: Reachability::NearAgents(None),
        builder: BuilderKind::RangeSparse,
        layers: layers.iter().map(|s| s.parse().unwrap()).collect(),
        multi_round,
        evolve_relation: false,
        concat_raw_obs: false,
        concat_layers: false,
        parameter_sharing: true,
    }
}

fn observations(n: usize) -> Vec<DenseMatrix> {
    (0..n)
        .map(|k| DenseMatrix::from_vec(1, D_OBS, (0..D_OBS).map(|c| ((k * 7 + c * 3) as f64 * 0.37).sin()).collect()).unwrap())
        .collect()
}

fn chain() -> Topology {
    Topology::from_links(CommGraph::new(3, [(0, 1), (1, 0), (1, 2), (2, 1)], false).unwrap())
}

fn forward(
    pipe: &CommPipeline,
    store: &ParamStore,
    obs: &[DenseMatrix],
    topo: &Topology,
    channel: &ChannelConfig,
    paths: Paths,
) -> (Tape, CommOutput) {
    let mut t = Tape::new();
    let o: Vec<Var> = obs.iter().map(|m| t.constant(m.clone())).collect();
    let ctx = StepContext {
        episode: 7,
        timestep: 2,
        topology: topo,
        channel,
        senders: None,
    };
    let out = pipe.forward(&mut t, store, &o, &ctx, paths).unwrap();
    (t, out)
}

const DISTRIBUTED: Paths = Paths {
    distributed: true,
    proxy: false,
};

fn distributed_rows(
    pipe: &CommPipeline,
    store: &ParamStore,
    obs: &[DenseMatrix],
    topo: &Topology,
    channel: &ChannelConfig,
) -> Vec<DenseMatrix> {
    let (t, out) = forward(pipe, store, obs, topo, channel, DISTRIBUTED);
    out.distributed.unwrap().iter().map(|&v| t.value(v).clone()).collect()
}

/// Largest change in agent `i`'s representation when agent `j`'s observation moves.
fn sensitivity(cfg: CommConfig, topo: &Topology, j: usize, i: usize) -> f64 {
    let n = topo.links.n();
    let mut store = ParamStore::new(11);
    let pipe = CommPipeline::new(&mut store, cfg, n, D_OBS).unwrap();
    let channel = ChannelConfig::default();
    let obs = observations(n);
    let base = distributed_rows(&pipe, &store, &obs, topo, &channel);
    let mut bumped = obs.clone();
    let v = bumped[j].get(0, 0) + 0.5;
    bumped[j].set(0, 0, v);
    let moved = distributed_rows(&pipe, &store, &bumped, topo, &channel);
    base[i].max_abs_diff(&moved[i]).unwrap()
}

#[test]
fn two_rounds_carry_information_past_the_range() {
    let two = config(&["gcn:4:tanh", "gcn:4:tanh"], true);
    let one = config(&["gcn:4:tanh"], true);
    assert!(sensitivity(two, &chain(), 0, 2) > 1e-9);
    assert!(sensitivity(one, &chain(), 0, 2) <= 1e-9);
}

#[test]
fn without_rounds_depth_does_not_extend_the_range() {
    let cfg = config(&["gcn:4:tanh", "gcn:4:tanh", "gcn:4:tanh"], false);
    assert_eq!(sensitivity(cfg.clone(), &chain(), 0, 2), 0.0);
    assert!(sensitivity(cfg, &chain(), 1, 2) > 1e-9);
}

#[test]
fn proxy_and_distributed_agree_under_full_connectivity() {
    for builder in [BuilderKind::RangeSparse, BuilderKind::CompleteWeighted, BuilderKind::TopK(2)] {
        for evolve in [false, true] {
            let mut cfg = config(&["gat:4:tanh", "mpnn_attention:4:tanh"], true);
            cfg.mode = CommMode::Both;
            cfg.reachability = Reachability::AllAgents;
            cfg.builder = builder;
            cfg.evolve_relation = evolve;
            cfg.concat_raw_obs = true;
            let mut store = ParamStore::new(5);
            let pipe = CommPipeline::new(&mut store, cfg, 4, D_OBS).unwrap();
            let both = Paths {
                distributed: true,
                proxy: true,
            };
            let (t, out) = forward(&pipe, &store, &observations(4), &Topology::complete(4), &ChannelConfig::default(), both);
            let proxy = out.proxy.unwrap();
            for (k, &d) in out.distributed.unwrap().iter().enumerate() {
                let diff = t.value(d).max_abs_diff(t.value(proxy.rows[k])).unwrap();
                assert!(diff <= 1e-9, "{builder} evolve={evolve}: agent {k} differs by {diff}");
            }
            assert_eq!(out.trace.proxy_messages, 8);
        }
    }
}

#[test]
fn partial_connectivity_separates_proxy_from_distributed() {
    let mut cfg = config(&["gcn:4:tanh"], true);
    cfg.mode = CommMode::Both;
    cfg.reachability = Reachability::AllAgents;
    let mut store = ParamStore::new(5);
    let pipe = CommPipeline::new(&mut store, cfg, 3, D_OBS).unwrap();
    let both = Paths {
        distributed: true,
        proxy: true,
    };
    let (t, out) = forward(&pipe, &store, &observations(3), &chain(), &ChannelConfig::default(), both);
    let d = out.distributed.unwrap();
    let p = out.proxy.unwrap();
    // Agent 1 hears everyone. An end agent sees its neighbor with one
    // fewer link than the proxy does, which changes the GCN normalization.
    assert!(t.value(d[1]).max_abs_diff(t.value(p.rows[1])).unwrap() <= 1e-12);
    assert!(t.value(d[0]).max_abs_diff(t.value(p.rows[0])).unwrap() > 1e-6);
}

#[test]
fn views_record_what_each_agent_heard() {
    let mut store = ParamStore::new(3);
    let pipe = CommPipeline::new(&mut store, config(&["gcn:4:tanh", "gcn:4:tanh"], true), 3, D_OBS).unwrap();
    let (_, out) = forward(&pipe, &store, &observations(3), &chain(), &ChannelConfig::default(), DISTRIBUTED);
    assert_eq!(out.views[0].nodes, vec![0, 1]);
    assert_eq!(out.views[1].nodes, vec![0, 1, 2]);
    assert_eq!(out.trace.agents[2].received_from, vec![1]);
    assert_eq!(out.views[1].received.keys().copied().collect::<Vec<_>>(), vec![0, 2]);
    for a in &out.trace.agents {
        assert_eq!(a.payload_digest.as_ref().map(String::len), Some(16));
    }
    // Four directed links, used once per round.
    assert_eq!(out.trace.inter_agent_messages, 8);
    assert_eq!(out.trace.agents[1].messages_sent, 4);
    let own = out.views[1].own_row(1).unwrap();
    assert_eq!(own.len(), 4);
}

#[test]
fn total_loss_leaves_every_agent_alone() {
    let cfg = config(&["gcn:4:tanh", "gcn:4:tanh"], true);
    let mut store = ParamStore::new(3);
    let pipe = CommPipeline::new(&mut store, cfg.clone(), 3, D_OBS).unwrap();
    let lossy = ChannelConfig {
        loss_p: 1.0,
        ..Default::default()
    };
    let (_, out) = forward(&pipe, &store, &observations(3), &chain(), &lossy, DISTRIBUTED);
    for (k, v) in out.views.iter().enumerate() {
        assert_eq!(v.nodes, vec![k]);
        assert!(v.received.is_empty());
    }
    // Attempts are still counted.
    assert_eq!(out.trace.inter_agent_messages, 4);

    // With nothing delivered, the result equals running on an empty topology.
    let alone = Topology::from_links(CommGraph::empty(3, false));
    let a = distributed_rows(&pipe, &store, &observations(3), &chain(), &lossy);
    let b = distributed_rows(&pipe, &store, &observations(3), &alone, &ChannelConfig::default());
    assert_eq!(a, b);
}

#[test]
fn bandwidth_truncates_received_payloads() {
    let mut store = ParamStore::new(3);
    let pipe = CommPipeline::new(&mut store, config(&["gcn:4:tanh"], true), 3, D_OBS).unwrap();
    let narrow = ChannelConfig {
        bandwidth: Some(2),
        ..Default::default()
    };
    let (_, out) = forward(&pipe, &store, &observations(3), &chain(), &narrow, DISTRIBUTED);
    let msg = &out.views[1].received[&0];
    assert_eq!(msg.payload.len(), 4);
    assert!(msg.payload[..2].iter().all(|v| *v != 0.0));
    assert_eq!(&msg.payload[2..], &[0.0, 0.0]);
}

#[test]
fn downstream_loss_reaches_encoder_and_builder_scores() {
    let mut cfg = config(&["gcn:4:tanh", "gcn:4:tanh"], true);
    cfg.builder = BuilderKind::CompleteWeighted;
    cfg.reachability = Reachability::AllAgents;
    let mut store = ParamStore::new(9);
    let pipe = CommPipeline::new(&mut store, cfg, 3, D_OBS).unwrap();
    let (mut t, out) = forward(&pipe, &store, &observations(3), &chain(), &ChannelConfig::default(), DISTRIBUTED);
    let rows = out.distributed.unwrap();
    let stacked = t.concat_rows(&rows).unwrap();
    let sq = t.mul(stacked, stacked).unwrap();
    let loss = t.sum(sq).unwrap();
    t.backward(loss).unwrap();
    store.zero_grads();
    store.accumulate_grads(&t).unwrap();
    for name in ["comm/encoder/w", "comm/builder0/query/w", "comm/builder0/key/w"] {
        assert!(store.grad(name).unwrap().frobenius_norm() > 0.0, "{name} got no gradient");
    }
}

#[test]
fn proxy_refuses_a_missing_payload() {
    let mut cfg = config(&["gcn:4:tanh"], true);
    cfg.mode = CommMode::Proxy;
    cfg.reachability = Reachability::AllAgents;
    let mut store = ParamStore::new(1);
    let pipe = CommPipeline::new(&mut store, cfg, 3, D_OBS).unwrap();
    let mut t = Tape::new();
    let o: Vec<Var> = observations(3).into_iter().map(|m| t.constant(m)).collect();
    let topo = Topology::complete(3);
    let channel = ChannelConfig::default();
    let ctx = StepContext {
        episode: 0,
        timestep: 0,
        topology: &topo,
        channel: &channel,
        senders: Some(&[true, false, true]),
    };
    let proxy = Paths {
        distributed: false,
        proxy: true,
    };
    assert!(pipe.forward(&mut t, &store, &o, &ctx, proxy).is_err());
}

#[test]
fn unshared_agents_compute_with_their_own_parameters() {
    let mut cfg = config(&["gcn:4:tanh"], true);
    cfg.parameter_sharing = false;
    let mut store = ParamStore::new(4);
    let pipe = CommPipeline::new(&mut store, cfg, 2, D_OBS).unwrap();
    assert!(store.contains("agent0/comm/encoder/w") && store.contains("agent1/comm/encoder/w"));
    // Same observation, same neighbors, different weights.
    let same = vec![observations(1)[0].clone(); 2];
    let topo = Topology::complete(2);
    let rows = distributed_rows(&pipe, &store, &same, &topo, &ChannelConfig::default());
    assert!(rows[0].max_abs_diff(&rows[1]).unwrap() > 1e-6);
}
