use std::path::{Path, PathBuf};

use gnn_comm::constraints::{ChannelConfig, ConstraintAxis};
use gnn_comm::env::PredatorPreyConfig;
use gnn_comm::marl::TrainConfig;
use gnn_comm::methods::{instantiate, write_sweep_csv, Experiment, ExperimentConfig, MethodSpec};
use gnn_comm::Error;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn trained(dir: &Path) -> (Experiment, PathBuf) {
    let env = PredatorPreyConfig {
        grid_size: 5,
        n_predators: 2,
        max_steps: 6,
        ..Default::default()
    };
    let train = TrainConfig {
        episodes: 20,
        hidden: 8,
        ..Default::default()
    };
    let mut exp = instantiate(&MethodSpec::preset("dgn_like").unwrap(), &env, &train).unwrap();
    exp.train(&ChannelConfig::default(), |_| Ok(())).unwrap();
    let path = dir.join("ckpt.bin");
    exp.store.save(&path).unwrap();
    let fresh = instantiate(&exp.spec, &exp.env, &TrainConfig { seed: 99, ..train }).unwrap();
    (fresh, path)
}

#[test]
fn shipped_configs_resolve() {
    for name in ["dgn_like", "gppo_like", "dicg_like", "no_comm"] {
        let exp = ExperimentConfig::load(&configs().join(format!("{name}.toml"))).unwrap();
        assert_eq!(exp.spec.name, name);
        assert_eq!(exp.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(exp.env, PredatorPreyConfig::default());
        assert!(exp.channel.is_null());
        instantiate(&exp.spec, &exp.env, &exp.train).unwrap();
    }
}

#[test]
fn broken_experiment_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        method: configs().join("../methods/missing.toml"),
        env: configs().join("env.toml"),
        train: configs().join("train.toml"),
        channel: None,
        seeds: vec![0],
        out: dir.path().to_path_buf(),
    };
    assert!(cfg.resolve(Path::new("")).is_err());
    let no_seeds = ExperimentConfig {
        method: configs().join("../methods/dgn_like.toml"),
        seeds: vec![],
        ..cfg
    };
    assert!(no_seeds.resolve(Path::new("")).is_err());
}

#[test]
fn neutral_sweep_values_reproduce_plain_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let (mut exp, ckpt) = trained(dir.path());
    let base = ChannelConfig::default();
    let cl = exp.constraint_sweep(&ckpt, &base, ConstraintAxis::CL, &[0.0], &[3], 6).unwrap();
    let (plain, _) = exp.evaluate(&base, &[3], 6).unwrap();
    assert_eq!(cl.len(), 1);
    assert_eq!(cl[0].mean_return, plain.mean_return);
    assert_eq!(cl[0].std_return, plain.std_return);

    let d = exp.policy.comm().unwrap().payload_dim();
    let lb = exp.constraint_sweep(&ckpt, &base, ConstraintAxis::LB, &[d as f64], &[3], 6).unwrap();
    assert_eq!(lb[0].mean_return, plain.mean_return);
}

#[test]
fn noise_sweep_records_one_row_per_value_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (mut exp, ckpt) = trained(dir.path());
    let rows = exp
        .constraint_sweep(&ckpt, &ChannelConfig::default(), ConstraintAxis::NM, &[0.0, 0.5, 2.0], &[1, 2], 3)
        .unwrap();
    assert_eq!(rows.len(), 6);
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("axis,value,seed,mean_return,std_return"));
    assert!(lines.next().unwrap().starts_with("NM,0,1,"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn sweep_without_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (mut exp, _) = trained(dir.path());
    let err = exp
        .constraint_sweep(&dir.path().join("absent.bin"), &ChannelConfig::default(), ConstraintAxis::CL, &[0.1], &[0], 2)
        .unwrap_err();
    assert!(matches!(err, Error::Io(_)), "{err}");
}

#[test]
fn checkpoint_from_another_method_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path());
    let env = PredatorPreyConfig {
        grid_size: 5,
        n_predators: 2,
        max_steps: 6,
        ..Default::default()
    };
    let mut other = instantiate(&MethodSpec::preset("gppo_like").unwrap(), &env, &TrainConfig { hidden: 8, ..Default::default() }).unwrap();
    let err = other
        .constraint_sweep(&ckpt, &ChannelConfig::default(), ConstraintAxis::CL, &[0.0], &[0], 1)
        .unwrap_err();
    assert!(err.to_string().contains('`'), "{err}");
}
