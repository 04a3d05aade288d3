//! Declarative method descriptions and their wiring into runnable
//! experiments.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comm::{BuilderKind, CommConfig, CommMode, Encoder, Reachability};
use crate::constraints::{ChannelConfig, ConstraintAxis};
use crate::env::{EpisodeTrace, PredatorPreyConfig, ACTIONS};
use crate::error::{Error, Result};
use crate::gnn::LayerSpec;
use crate::marl::{self, EvalReport, Integration, TeamPolicy, TrainConfig, TrainSummary, UpdateRecord};
use crate::numeric::ParamStore;
use crate::seed::{derive_seed, stream};

const DEFAULT_ENCODER_DIM: usize = 16;

/// A method as a set of component choices. Parsed loosely so that
/// [`MethodSpec::validate`] can report every problem at once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    /// `identity` or `perceptron`.
    pub encoder: String,
    #[serde(default)]
    pub encoder_dim: Option<usize>,
    /// `all_agents` or `near_agents`.
    pub reachability: String,
    /// Range for `near_agents`; defaults to the environment's.
    #[serde(default)]
    pub range: Option<f64>,
    /// `complete_weighted`, `range_sparse` or `topk_attention`.
    pub builder: String,
    #[serde(default)]
    pub topk: Option<usize>,
    /// Layer descriptions such as `mpnn_attention:16:tanh`.
    #[serde(default)]
    pub gnn: Vec<String>,
    /// Number of aggregation layers `L`.
    pub layers: usize,
    /// `proxy`, `distributed`, `both`, or `none` for no communication.
    pub mode: String,
    #[serde(default)]
    pub multi_round: bool,
    #[serde(default)]
    pub evolve_relation: bool,
    /// `policy`, `value`, `policy_and_value` or `central_critic`.
    pub integration: String,
    #[serde(default)]
    pub concat_raw_obs: bool,
    #[serde(default)]
    pub concat_layers: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Names of the shipped presets.
pub const PRESETS: [&str; 3] = ["dgn_like", "gppo_like", "dicg_like"];

const DGN_LIKE: &str = include_str!("../../../methods/dgn_like.toml");
const GPPO_LIKE: &str = include_str!("../../../methods/gppo_like.toml");
const DICG_LIKE: &str = include_str!("../../../methods/dicg_like.toml");
const NO_COMM: &str = include_str!("../../../methods/no_comm.toml");

impl MethodSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            what: "method spec",
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// One of the shipped presets, or the `no_comm` ablation.
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "dgn_like" => DGN_LIKE,
            "gppo_like" => GPPO_LIKE,
            "dicg_like" => DICG_LIKE,
            "no_comm" => NO_COMM,
            other => return Err(Error::config(format!("unknown preset `{other}`"))),
        };
        Self::from_toml(text)
    }

    /// The same learner and heads without any communication.
    pub fn no_comm() -> Self {
        Self::preset("no_comm").expect("bundled preset parses")
    }

    pub fn communicates(&self) -> bool {
        self.mode != "none"
    }

    /// Every invariant violation, empty when the spec is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut bad = |field: &'static str, message: String| v.push(Violation { field, message });
        if self.name.trim().is_empty() {
            bad("name", "must not be empty".into());
        }
        let mode = match self.mode.as_str() {
            "none" => None,
            m => match m.parse::<CommMode>() {
                Ok(m) => Some(m),
                Err(_) => {
                    bad("mode", format!("unknown mode `{m}` (proxy, distributed, both or none)"));
                    None
                }
            },
        };
        let integration = self.integration.parse::<Integration>();
        if integration.is_err() {
            bad("integration", format!("unknown integration `{}`", self.integration));
        }
        match self.encoder.as_str() {
            "identity" => {}
            "perceptron" => {
                if self.encoder_dim == Some(0) {
                    bad("encoder_dim", "must be positive".into());
                }
            }
            e => bad("encoder", format!("unknown encoder `{e}` (identity or perceptron)")),
        }
        let all_agents = match self.reachability.as_str() {
            "all_agents" => true,
            "near_agents" => false,
            r => {
                bad("reachability", format!("unknown reachability `{r}` (all_agents or near_agents)"));
                false
            }
        };
        if let Some(r) = self.range {
            if !(r >= 0.0) {
                bad("range", format!("{r} must be >= 0"));
            }
        }
        match self.builder.as_str() {
            "complete_weighted" | "range_sparse" => {}
            "topk_attention" => match self.topk {
                Some(k) if k >= 1 => {}
                _ => bad("topk", "topk_attention needs topk >= 1".into()),
            },
            b => bad("builder", format!("unknown builder `{b}`")),
        }
        if self.layers != self.gnn.len() {
            bad(
                "layers",
                format!("L = {} but {} gnn entries are listed", self.layers, self.gnn.len()),
            );
        }
        for entry in &self.gnn {
            match entry.parse::<LayerSpec>() {
                Ok(spec) if spec.d_out == 0 => bad("gnn", format!("`{entry}` has zero width")),
                Ok(_) => {}
                Err(e) => bad("gnn", e.to_string()),
            }
        }
        match mode {
            Some(m) => {
                if self.layers == 0 {
                    bad("layers", "communicating methods need L >= 1".into());
                }
                if m.proxy() && !all_agents {
                    bad("reachability", "proxy requires all_agents".into());
                }
                if matches!(integration, Ok(Integration::CentralCritic)) && !m.proxy() {
                    bad("integration", "central_critic requires a proxy-produced joint matrix".into());
                }
            }
            None if self.mode == "none" => {
                if self.layers != 0 {
                    bad("layers", "mode none takes no aggregation layers".into());
                }
                if matches!(integration, Ok(Integration::CentralCritic)) {
                    bad("integration", "central_critic requires a proxy-produced joint matrix".into());
                }
            }
            None => {}
        }
        v
    }

    fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let list: Vec<String> = v.iter().map(ToString::to_string).collect();
            Err(Error::config(format!("method `{}` is invalid: {}", self.name, list.join("; "))))
        }
    }

    /// The communication configuration, or `None` for `mode = "none"`.
    pub fn comm_config(&self, parameter_sharing: bool) -> Result<Option<CommConfig>> {
        self.check()?;
        if !self.communicates() {
            return Ok(None);
        }
        let encoder = match self.encoder.as_str() {
            "identity" => Encoder::Identity,
            _ => Encoder::Perceptron(self.encoder_dim.unwrap_or(DEFAULT_ENCODER_DIM)),
        };
        let reachability = match self.reachability.as_str() {
            "all_agents" => Reachability::AllAgents,
            _ => Reachability::NearAgents(self.range),
        };
        let builder = match self.builder.as_str() {
            "complete_weighted" => BuilderKind::CompleteWeighted,
            "range_sparse" => BuilderKind::RangeSparse,
            _ => BuilderKind::TopK(self.topk.unwrap_or(1)),
        };
        Ok(Some(CommConfig {
            mode: self.mode.parse()?,
            encoder,
            reachability,
            builder,
            layers: self.gnn.iter().map(|s| s.parse()).collect::<Result<_>>()?,
            multi_round: self.multi_round,
            evolve_relation: self.evolve_relation,
            concat_raw_obs: self.concat_raw_obs,
            concat_layers: self.concat_layers,
            parameter_sharing,
        }))
    }

    pub fn integration(&self) -> Result<Integration> {
        self.integration.parse()
    }
}

/// A method bound to an environment and a learner, with its parameters.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: MethodSpec,
    pub env: PredatorPreyConfig,
    pub train: TrainConfig,
    pub policy: TeamPolicy,
    pub store: ParamStore,
}

/// Wires a validated spec into a runnable experiment with freshly
/// initialized parameters (seeded from `train.seed`).
pub fn instantiate(spec: &MethodSpec, env: &PredatorPreyConfig, train: &TrainConfig) -> Result<Experiment> {
    env.validate()?;
    train.validate()?;
    let comm = spec.comm_config(train.parameter_sharing)?;
    let mut store = ParamStore::new(derive_seed(&[train.seed, stream::PARAMS]));
    let policy = TeamPolicy::new(
        &mut store,
        comm,
        spec.integration()?,
        env.n_predators,
        env.observation_dim(),
        ACTIONS.len(),
        train.hidden,
        train.parameter_sharing,
    )?;
    Ok(Experiment {
        spec: spec.clone(),
        env: env.clone(),
        train: train.clone(),
        policy,
        store,
    })
}

impl Experiment {
    pub fn train<F>(&mut self, channel: &ChannelConfig, on_update: F) -> Result<TrainSummary>
    where
        F: FnMut(&UpdateRecord) -> Result<()>,
    {
        marl::train(&self.policy, &mut self.store, &self.env, channel, &self.train, on_update)
    }

    /// Greedy evaluation over `episodes` episodes per seed.
    pub fn evaluate(&self, channel: &ChannelConfig, seeds: &[u64], episodes: usize) -> Result<(EvalReport, Vec<EpisodeTrace>)> {
        marl::evaluate(&self.policy, &self.store, &self.env, channel, seeds, episodes, true)
    }

    /// Replaces the parameters with a checkpoint's; names and shapes must match.
    pub fn load_params(&mut self, checkpoint: &ParamStore) -> Result<()> {
        self.store.load_values_from(checkpoint)
    }

    /// Evaluates the checkpoint at `checkpoint` once per axis value, with
    /// `base` degraded along `axis`. One row per value and seed.
    pub fn constraint_sweep(
        &mut self,
        checkpoint: &Path,
        base: &ChannelConfig,
        axis: ConstraintAxis,
        values: &[f64],
        seeds: &[u64],
        episodes: usize,
    ) -> Result<Vec<SweepRow>> {
        let params = ParamStore::load(checkpoint)?;
        self.load_params(&params)?;
        let mut rows = Vec::with_capacity(values.len() * seeds.len());
        for &value in values {
            let channel = axis.apply(base, value)?;
            let (report, _) = self.evaluate(&channel, seeds, episodes)?;
            rows.extend(report.per_seed.into_iter().map(|s| SweepRow {
                axis,
                value,
                seed: s.seed,
                mean_return: s.mean_return,
                std_return: s.std_return,
            }));
        }
        Ok(rows)
    }
}

/// An experiment file: paths to the method, environment, training and
/// channel files (relative to the experiment file), the seed list and the
/// output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: PathBuf,
    pub env: PathBuf,
    pub train: PathBuf,
    /// Absent means a perfect channel.
    #[serde(default)]
    pub channel: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

/// An experiment file with every referenced file loaded and validated.
#[derive(Clone, Debug)]
pub struct ResolvedExperiment {
    pub spec: MethodSpec,
    pub env: PredatorPreyConfig,
    pub train: TrainConfig,
    pub channel: ChannelConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ResolvedExperiment> {
        let cfg: Self = toml::from_str(&read(path)?).map_err(|e| Error::Parse {
            what: "experiment config",
            detail: e.to_string(),
        })?;
        cfg.resolve(path.parent().unwrap_or(Path::new("")))
    }

    pub fn resolve(&self, dir: &Path) -> Result<ResolvedExperiment> {
        if self.seeds.is_empty() {
            return Err(Error::config("the seed list is empty"));
        }
        let spec = MethodSpec::load(&dir.join(&self.method))?;
        let env = PredatorPreyConfig::from_toml(&read(&dir.join(&self.env))?)?;
        let train = TrainConfig::from_toml(&read(&dir.join(&self.train))?)?;
        let channel = match &self.channel {
            Some(p) => ChannelConfig::from_toml(&read(&dir.join(p))?)?,
            None => ChannelConfig::default(),
        };
        Ok(ResolvedExperiment {
            spec,
            env,
            train,
            channel,
            seeds: self.seeds.clone(),
            out: dir.join(&self.out),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: ConstraintAxis,
    pub value: f64,
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "axis,value,seed,mean_return,std_return")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.axis, r.value, r.seed, r.mean_return, r.std_return)?;
    }
    Ok(())
}
