//! Experiment configuration: flat `key = value` files, model construction,
//! and the end-to-end run driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{generate_dataset, load_csv_dataset, DatasetKind, SplitData, SyntheticSpec};
use crate::dynamics::sweep::SweepGrid;
use crate::dynamics::logspace;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Model, Submodule, SubmoduleSlot};
use crate::pipeline::{
    catalyst_prune_full, train_plain, LrSchedule, Phase, RunLog, TrainConfig,
};
use crate::report::{build_summary, count_macs_params, emit_reports, Summary};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum DatasetConfig {
    Synthetic {
        kind: DatasetKind,
        classes: usize,
        dim: usize,
        train_samples: usize,
        test_samples: usize,
        noise: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Hidden layer widths of the MLP; input and output sizes come from the
    /// dataset.
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Which hidden layer is the prune target.
    pub target_layer: usize,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::Synthetic {
                kind: DatasetKind::GaussianBlobs,
                classes: 3,
                dim: 2,
                train_samples: 3000,
                test_samples: 600,
                noise: 0.5,
            },
            hidden_widths: vec![64, 64],
            activation: Activation::Relu,
            target_layer: 1,
            output_dir: PathBuf::from("runs/experiment"),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.hidden_widths.is_empty() {
            return Err(Error::Config("need at least one hidden layer".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.target_layer >= self.hidden_widths.len() {
            return Err(Error::Config(format!(
                "target_layer {} out of range for {} hidden layers",
                self.target_layer,
                self.hidden_widths.len()
            )));
        }
        Ok(())
    }
}

fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim().to_owned();
        if map.insert(key.clone(), value.trim().to_owned()).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

struct FlatConfig {
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl FlatConfig {
    fn new(text: &str) -> Result<Self> {
        Ok(Self {
            map: parse_flat(text)?,
            used: Default::default(),
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.map.get(key).map(String::as_str);
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_owned());
        }
        v
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key} = '{s}'"))),
        }
    }

    fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some("inf") | Some("infinity") => Ok(f64::INFINITY),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key} = '{s}'"))),
        }
    }

    fn get_list<T: std::str::FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) if s.is_empty() => Ok(Vec::new()),
            Some(s) => s
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("cannot parse {key} entry '{part}'")))
                })
                .collect(),
        }
    }

    /// Unknown keys are errors: they are almost always typos.
    fn finish(self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.map.keys().filter(|k| !used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

/// Parses an experiment config from flat `key = value` text. Missing keys
/// fall back to the desk-scale defaults; unknown keys are errors.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let flat = FlatConfig::new(text)?;
    let defaults = ExperimentConfig::default();
    let dt = TrainConfig::default();

    let dataset_name = flat.raw("dataset").unwrap_or("gaussian-blobs").to_owned();
    let dataset = if dataset_name == "csv" {
        let path = flat
            .raw("csv_path")
            .ok_or_else(|| Error::Config("dataset = csv requires csv_path".into()))?
            .to_owned();
        let label = flat
            .raw("label_column")
            .ok_or_else(|| Error::Config("dataset = csv requires label_column".into()))?
            .to_owned();
        DatasetConfig::Csv {
            path: PathBuf::from(path),
            label_column: label,
        }
    } else {
        DatasetConfig::Synthetic {
            kind: DatasetKind::parse(&dataset_name)?,
            classes: flat.get("classes", 3)?,
            dim: flat.get("dim", 2)?,
            train_samples: flat.get("train_samples", 3000)?,
            test_samples: flat.get("test_samples", 600)?,
            noise: flat.get_f64("noise", 0.5)?,
        }
    };

    let lr = |base_key: &str, decay_key: &str, base: f64, flat: &FlatConfig| -> Result<LrSchedule> {
        Ok(LrSchedule {
            base: flat.get_f64(base_key, base)?,
            decay_epochs: flat.get_list(decay_key, Vec::new())?,
            decay_ratio: flat.get_f64("lr_decay_ratio", 0.1)?,
        })
    };

    let cfg = ExperimentConfig {
        dataset,
        hidden_widths: flat.get_list("hidden_widths", defaults.hidden_widths.clone())?,
        activation: Activation::parse(flat.raw("activation").unwrap_or("relu"))?,
        target_layer: flat.get("target_layer", defaults.target_layer)?,
        output_dir: PathBuf::from(
            flat.raw("output_dir")
                .unwrap_or(defaults.output_dir.to_str().unwrap_or("runs/experiment")),
        ),
        train: TrainConfig {
            lr_opt1: lr("lr_opt1", "lr_decay_epochs_opt1", dt.lr_opt1.base, &flat)?,
            lr_opt2: lr("lr_opt2", "lr_decay_epochs_opt2", dt.lr_opt2.base, &flat)?,
            lr_finetune: lr(
                "lr_finetune",
                "lr_decay_epochs_finetune",
                dt.lr_finetune.base,
                &flat,
            )?,
            alpha_theta: flat.get_f64("alpha_theta", dt.alpha_theta)?,
            alpha_d: flat.get_f64("alpha_d", dt.alpha_d)?,
            gamma0: flat.get_f64("gamma0", dt.gamma0)?,
            gamma0_prime: flat.get_f64("gamma0_prime", dt.gamma0_prime)?,
            epsilon: flat.get_f64("epsilon", dt.epsilon)?,
            epsilon_prime: flat.get_f64("epsilon_prime", dt.epsilon_prime)?,
            kappa: flat.get_f64("kappa", dt.kappa)?,
            t_opt1: flat.get("t_opt1", dt.t_opt1)?,
            t_opt2: flat.get("t_opt2", dt.t_opt2)?,
            c_init: flat.get_f64("c_init", dt.c_init)?,
            seed: flat.get("seed", dt.seed)?,
            batch_size: flat.get("batch_size", dt.batch_size)?,
            pretrain_epochs: flat.get("pretrain_epochs", dt.pretrain_epochs)?,
            finetune_epochs: flat.get("finetune_epochs", dt.finetune_epochs)?,
            momentum: flat.get_f64("momentum", dt.momentum)?,
        },
    };
    flat.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiment_config(&text)
}

/// Parses a phase-sweep grid config. Keys: `c0_min/max/steps`,
/// `lambda_min/max/steps` (log-spaced), `alphas`, `dim`, `max_steps`,
/// `seed`, `output`.
pub fn parse_sweep_config(text: &str) -> Result<(SweepGrid, PathBuf)> {
    let flat = FlatConfig::new(text)?;
    let c0_min = flat.get_f64("c0_min", 0.1)?;
    let c0_max = flat.get_f64("c0_max", 10.0)?;
    let c0_steps: usize = flat.get("c0_steps", 21)?;
    let lambda_min = flat.get_f64("lambda_min", 1e-3)?;
    let lambda_max = flat.get_f64("lambda_max", 1e-2)?;
    let lambda_steps: usize = flat.get("lambda_steps", 5)?;
    let grid = SweepGrid {
        c0: logspace(c0_min, c0_max, c0_steps),
        lambda: logspace(lambda_min, lambda_max, lambda_steps),
        alpha: flat.get_list("alphas", vec![0.0, 1e-4])?,
        dim: flat.get("dim", 8)?,
        max_steps: flat.get("max_steps", 200_000)?,
        seed: flat.get("seed", 7)?,
    };
    let output = PathBuf::from(flat.raw("output").unwrap_or("sweep.csv"));
    flat.finish()?;
    if grid.c0.iter().any(|&v| v <= 0.0) || grid.lambda.iter().any(|&v| v <= 0.0) {
        return Err(Error::Config("c0 and lambda values must be positive".into()));
    }
    if grid.alpha.iter().any(|&a| !(0.0..1.0).contains(&a)) {
        return Err(Error::Config("alpha values must lie in [0, 1)".into()));
    }
    Ok((grid, output))
}

/// Builds the MLP described by the config around its target submodule.
/// He-uniform init for ReLU, Xavier-uniform otherwise.
pub fn build_model(
    cfg: &ExperimentConfig,
    n_features: usize,
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    cfg.validate()?;
    // Affine layer sizes: features → hidden... → classes.
    let mut dims = vec![n_features];
    dims.extend_from_slice(&cfg.hidden_widths);
    dims.push(n_classes);

    let act = cfg.activation;
    let init = |rng: &mut ChaCha8Rng, out: usize, inp: usize| -> Array2<f64> {
        let limit = match act {
            Activation::Relu => (6.0 / inp as f64).sqrt(),
            _ => (6.0 / (inp + out) as f64).sqrt(),
        };
        Array2::from_shape_fn((out, inp), |_| rng.gen_range(-limit..limit))
    };

    let t = cfg.target_layer;
    let n_affine = dims.len() - 1;
    // The target layer t and its consumer t+1 form the submodule.
    let mut pre = Vec::new();
    for l in 0..t {
        pre.push(DenseLayer::new(
            init(rng, dims[l + 1], dims[l]),
            Array1::zeros(dims[l + 1]),
            act,
        )?);
    }
    let sub = Submodule::new(
        init(rng, dims[t + 1], dims[t]),
        Array1::zeros(dims[t + 1]),
        init(rng, dims[t + 2], dims[t + 1]),
        Array1::zeros(dims[t + 2]),
        act,
    )?;
    // The layer after the submodule keeps its own activation unless it is
    // the network output.
    let junction = if t + 2 == n_affine {
        Activation::Identity
    } else {
        act
    };
    let mut post = Vec::new();
    for l in (t + 2)..n_affine {
        let layer_act = if l + 1 == n_affine { Activation::Identity } else { act };
        post.push(DenseLayer::new(
            init(rng, dims[l + 1], dims[l]),
            Array1::zeros(dims[l + 1]),
            layer_act,
        )?);
    }
    let model = Model {
        pre,
        slot: SubmoduleSlot::Plain(sub),
        junction,
        post,
    };
    model.validate()?;
    Ok(model)
}

/// Materializes the dataset named by the config.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<SplitData> {
    match &cfg.dataset {
        DatasetConfig::Synthetic {
            kind,
            classes,
            dim,
            train_samples,
            test_samples,
            noise,
        } => generate_dataset(&SyntheticSpec {
            kind: *kind,
            classes: *classes,
            dim: *dim,
            train_samples: *train_samples,
            test_samples: *test_samples,
            noise: *noise,
            seed: cfg.train.seed,
        }),
        DatasetConfig::Csv { path, label_column } => {
            load_csv_dataset(path, label_column, cfg.train.seed)
        }
    }
}

/// Everything a finished (or aborted) experiment leaves behind.
pub struct ExperimentOutput {
    pub summary: Summary,
    pub log: RunLog,
    pub files: Vec<PathBuf>,
}

/// Runs the full experiment: data → model → pretrain → prune pipeline →
/// artifact emission. On a numerical abort the partial log is still written
/// before the error propagates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Config("dataset splits must be nonempty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(1);
    let mut model = build_model(cfg, data.train.dim(), data.train.num_classes, &mut rng)?;
    let dense_counts = count_macs_params(&model);

    let mut log = RunLog::new();
    let result = (|| -> Result<Model> {
        train_plain(
            &mut model,
            &cfg.train,
            &data,
            &cfg.train.lr_opt1,
            cfg.train.pretrain_epochs,
            None,
            Phase::Pretrain,
            &mut log,
        )?;
        catalyst_prune_full(model.clone(), &cfg.train, &data, &mut log)
    })();

    match result {
        Ok(final_model) => {
            let final_counts = count_macs_params(&final_model);
            let summary = build_summary(&log, cfg, dense_counts, final_counts);
            let files = emit_reports(&log, &summary, &cfg.output_dir)?;
            Ok(ExperimentOutput {
                summary,
                log,
                files,
            })
        }
        Err(e) => {
            // Diagnostic flush: persist whatever was logged before failing.
            log.warnings.push(format!("aborted: {e}"));
            let summary = build_summary(&log, cfg, dense_counts, dense_counts);
            let _ = emit_reports(&log, &summary, &cfg.output_dir);
            Err(e)
        }
    }
}

/// Trains a dense copy of the experiment's model for a fixed number of
/// optimizer steps (the pruned run's budget), for accuracy comparisons.
pub fn train_dense_baseline(
    cfg: &ExperimentConfig,
    data: &SplitData,
    total_steps: u64,
) -> Result<(Model, RunLog)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(1);
    let mut model = build_model(cfg, data.train.dim(), data.train.num_classes, &mut rng)?;
    let mut log = RunLog::new();
    train_plain(
        &mut model,
        &cfg.train,
        data,
        &cfg.train.lr_opt1,
        u64::MAX,
        Some(total_steps),
        Phase::Pretrain,
        &mut log,
    )?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_parser() {
        let cfg = parse_experiment_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn full_config_parses() {
        let text = "\
# comment line
dataset = spiral
classes = 4
dim = 3
train_samples = 200
test_samples = 50
noise = 0.1
hidden_widths = 32,16
activation = tanh
target_layer = 0
output_dir = /tmp/run
lr_opt1 = 0.1
lr_decay_epochs_opt1 = 10,20
lr_decay_ratio = 0.5
alpha_theta = 1e-3
alpha_d = 1e-5
gamma0 = 0.01
gamma0_prime = 0.02
epsilon = 1e-5
epsilon_prime = 1e-7
kappa = inf
t_opt1 = 100
t_opt2 = 200
c_init = 1.5
seed = 9
batch_size = 16
pretrain_epochs = 2
finetune_epochs = 3
momentum = 0.9
";
        let cfg = parse_experiment_config(text).unwrap();
        assert_eq!(cfg.hidden_widths, vec![32, 16]);
        assert_eq!(cfg.activation, Activation::Tanh);
        assert_eq!(cfg.train.lr_opt1.decay_epochs, vec![10, 20]);
        assert_eq!(cfg.train.lr_opt1.decay_ratio, 0.5);
        assert!(cfg.train.kappa.is_infinite());
        assert_eq!(cfg.train.momentum, 0.9);
        match cfg.dataset {
            DatasetConfig::Synthetic { kind, classes, .. } => {
                assert_eq!(kind, DatasetKind::Spiral);
                assert_eq!(classes, 4);
            }
            _ => panic!("expected synthetic dataset"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_experiment_config("gamma_zero = 0.1\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("gamma_zero"), "{msg}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_dataset_requires_path() {
        assert!(parse_experiment_config("dataset = csv\n").is_err());
        let cfg =
            parse_experiment_config("dataset = csv\ncsv_path = data.csv\nlabel_column = y\n")
                .unwrap();
        match cfg.dataset {
            DatasetConfig::Csv { path, label_column } => {
                assert_eq!(path, PathBuf::from("data.csv"));
                assert_eq!(label_column, "y");
            }
            _ => panic!("expected csv dataset"),
        }
    }

    #[test]
    fn model_builder_chains_dimensions() {
        let mut cfg = ExperimentConfig::default();
        cfg.hidden_widths = vec![10, 8, 6];
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        for target in 0..3 {
            cfg.target_layer = target;
            let model = build_model(&cfg, 5, 4, &mut rng).unwrap();
            assert_eq!(model.input_dim(), 5);
            assert_eq!(model.output_dim(), 4);
            let sub = model.slot.submodule();
            assert_eq!(sub.hidden_dim(), cfg.hidden_widths[target]);
            assert_eq!(model.pre.len(), target);
        }
    }

    #[test]
    fn sweep_config_parses() {
        let (grid, out) = parse_sweep_config(
            "c0_min = 0.5\nc0_max = 2\nc0_steps = 3\nlambda_min = 1e-3\nlambda_max = 1e-3\nlambda_steps = 1\nalphas = 0\ndim = 4\nmax_steps = 1000\nseed = 1\noutput = phases.csv\n",
        )
        .unwrap();
        assert_eq!(grid.c0.len(), 3);
        assert_eq!(grid.lambda, vec![1e-3]);
        assert_eq!(out, PathBuf::from("phases.csv"));
    }

    #[test]
    fn config_echo_serializes() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
