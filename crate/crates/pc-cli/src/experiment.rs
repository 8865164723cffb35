//! Experiment drivers and deterministic CSV metric reporting.
//!
//! One experiment runs per process invocation; records are collected in
//! memory and written by a single CSV writer only after the run succeeds,
//! so a failed run leaves no partial file.

use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use pc_core::bp::{compare_pc_bp, MLPReference};
use pc_core::inference::{nfe_grad_phi, InferenceConfig};
use pc_core::kalman::{run_filter, BeliefState, FilterConfig, FilterMode, LinearGaussianSystem};
use pc_core::learning::{
    nfe_grad_sigma, nfe_grad_theta, one_hot, train, Task, TrainData,
};
use pc_core::model::{nfe, refresh_state, NetworkState, PCNetwork};
use pc_core::{checkpoint, Activation};

use crate::config::{DatasetKind, ExperimentConfig, TaskKind};
use crate::dataset::{synth_blobs, Dataset};
use crate::idx::load_idx;
use crate::{CliError, Result};

/// One metric row; mirrors the CSV schema minus the timestamp column.
#[derive(Debug, Clone)]
pub struct MetricRecord {
    pub run_id: String,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
    /// Wall-clock seconds; reported, never asserted.
    pub seconds: f64,
    pub op_count: u64,
}

/// Pinned CSV schema, version 1. The `seconds` and `timestamp` columns are
/// wall-clock values excluded from the determinism contract; all other
/// columns are byte-identical across runs of the same seed.
pub const CSV_HEADER: &str = "run_id,epoch,metric,value,seconds,op_count,timestamp";

/// Write all records through a single writer, appending the timestamp
/// column (seconds since the Unix epoch, one value per invocation).
pub fn write_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.run_id, r.epoch, r.metric, r.value, r.seconds, r.op_count, timestamp
        )?;
    }
    Ok(())
}

const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// True when the standard MNIST file quartet is present in `dir`.
pub fn mnist_present(dir: &Path) -> bool {
    MNIST_FILES.iter().all(|f| dir.join(f).is_file())
}

fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    for f in MNIST_FILES {
        let p = dir.join(f);
        if !p.is_file() {
            return Err(CliError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing dataset file {}", p.display()),
            )));
        }
    }
    let mut tr = load_idx(
        &dir.join(MNIST_FILES[0]),
        &dir.join(MNIST_FILES[1]),
    )?;
    let mut te = load_idx(
        &dir.join(MNIST_FILES[2]),
        &dir.join(MNIST_FILES[3]),
    )?;
    tr.split = "train".into();
    te.split = "eval".into();
    let classes = tr.classes.max(te.classes);
    tr.classes = classes;
    te.classes = classes;
    tr.validate()?;
    te.validate()?;
    Ok((tr, te))
}

/// Resolve the configured dataset into train and eval splits.
pub fn resolve_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let use_mnist = match cfg.dataset {
        DatasetKind::Mnist => true,
        DatasetKind::Blobs => false,
        DatasetKind::Auto => mnist_present(&cfg.data_dir),
    };
    if use_mnist {
        load_mnist(&cfg.data_dir)
    } else {
        let ds = synth_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.spread, cfg.seed)?;
        ds.validate()?;
        Ok(ds.split_eval(0.2))
    }
}

fn default_dims(task: TaskKind, classes: usize, features: usize) -> Vec<usize> {
    match task {
        // bottom = one-hot label layer, top = clamped stimulus
        TaskKind::Classify => vec![classes, 64, features],
        // bottom = clamped stimulus, top = latent code
        _ => vec![features, (features / 2).max(2), (features / 8).max(2)],
    }
}

fn run_id(cfg: &ExperimentConfig) -> String {
    format!("{}-seed{}", cfg.task.tag(), cfg.seed)
}

/// Train the BP reference with plain mini-batch SGD on the half-squared
/// error; returns per-epoch (loss, accuracy).
#[allow(clippy::too_many_arguments)]
pub fn train_bp(
    mlp: &mut MLPReference<f64>,
    inputs: &Array2<f64>,
    labels: &[usize],
    eval_inputs: &Array2<f64>,
    eval_labels: &[usize],
    classes: usize,
    eta: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let targets: Array2<f64> = one_hot(labels, classes);
    let n = inputs.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let mut acc: Vec<Array2<f64>> = (0..mlp.depth())
                .map(|l| Array2::zeros(mlp.weight(l).dim()))
                .collect();
            for &i in chunk {
                let x = inputs.row(i).to_owned();
                let t = targets.row(i).to_owned();
                let fwd = mlp.forward(&x)?;
                loss_sum += mlp.loss(&fwd, &t);
                for (a, g) in acc.iter_mut().zip(mlp.backward(&fwd, &t)?) {
                    *a += &g;
                }
            }
            let scale = eta / chunk.len() as f64;
            for (l, g) in acc.into_iter().enumerate() {
                *mlp.weight_mut(l) -= &(g * scale);
            }
        }
        let mut correct = 0usize;
        for (i, &label) in eval_labels.iter().enumerate() {
            let fwd = mlp.forward(&eval_inputs.row(i).to_owned())?;
            let out = fwd.activations.last().unwrap();
            let mut best = 0;
            for (j, v) in out.iter().enumerate() {
                if *v > out[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        history.push((loss_sum / n as f64, correct as f64 / eval_labels.len() as f64));
    }
    Ok(history)
}

fn run_training(cfg: &ExperimentConfig, task: Task) -> Result<Vec<MetricRecord>> {
    let (train_ds, eval_ds) = resolve_dataset(cfg)?;
    let features = train_ds.feature_dim();
    let classes = train_ds.classes;
    let dims = if cfg.dims.is_empty() {
        default_dims(cfg.task, classes, features)
    } else {
        cfg.dims.clone()
    };
    let net = PCNetwork::<f64>::random_init(dims, cfg.activation, cfg.seed)?;

    let inf_cfg = InferenceConfig {
        step: cfg.step,
        max_steps: cfg.effective_steps(),
        grad_tol: 0.0, // fixed-step schedule
        monotone_guard: false,
    };
    let lrn_cfg = pc_core::LearningConfig {
        eta: cfg.eta,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
        ..Default::default()
    };
    let data = TrainData {
        inputs: train_ds.inputs.clone(),
        labels: train_ds.labels.clone(),
        eval_inputs: Some(eval_ds.inputs.clone()),
        eval_labels: eval_ds.labels.clone(),
    };

    let id = run_id(cfg);
    let mut records = Vec::new();
    let (trained, report) = train(&net, &data, task, &inf_cfg, &lrn_cfg)?;
    let metric_name = match task {
        Task::Classify => "pc_accuracy",
        Task::Compress => "pc_mse",
    };
    for e in &report.epochs {
        records.push(MetricRecord {
            run_id: id.clone(),
            epoch: e.epoch,
            metric: metric_name.into(),
            value: e.metric,
            seconds: e.seconds,
            op_count: e.op_count,
        });
        records.push(MetricRecord {
            run_id: id.clone(),
            epoch: e.epoch,
            metric: "pc_nfe".into(),
            value: e.mean_nfe,
            seconds: e.seconds,
            op_count: e.op_count,
        });
    }

    // BP rows for the side-by-side table (classification only): identical
    // initial weights, checksum equality logged as a metric row.
    if task == Task::Classify {
        let mut mlp = MLPReference::from_pc(&net);
        let checksum_match =
            mlp.to_pc().map(|p| p.weight_checksum())? == net.weight_checksum();
        records.push(MetricRecord {
            run_id: id.clone(),
            epoch: 0,
            metric: "init_checksum_match".into(),
            value: if checksum_match { 1.0 } else { 0.0 },
            seconds: 0.0,
            op_count: 0,
        });
        let started = Instant::now();
        let history = train_bp(
            &mut mlp,
            &train_ds.inputs,
            train_ds.labels.as_deref().unwrap_or(&[]),
            &eval_ds.inputs,
            eval_ds.labels.as_deref().unwrap_or(&[]),
            classes,
            cfg.eta,
            cfg.batch_size,
            cfg.epochs,
            cfg.seed,
        )?;
        let seconds = started.elapsed().as_secs_f64() / cfg.epochs as f64;
        for (epoch, (loss, acc)) in history.into_iter().enumerate() {
            records.push(MetricRecord {
                run_id: id.clone(),
                epoch,
                metric: "bp_accuracy".into(),
                value: acc,
                seconds,
                op_count: 0,
            });
            records.push(MetricRecord {
                run_id: id.clone(),
                epoch,
                metric: "bp_loss".into(),
                value: loss,
                seconds,
                op_count: 0,
            });
        }
    }

    checkpoint::save(&trained, &cfg.out.with_extension("net.json"))?;
    Ok(records)
}

fn run_bp_compare(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    let dims = if cfg.dims.is_empty() {
        vec![3, 5, 5, 3]
    } else {
        cfg.dims.clone()
    };
    let net = PCNetwork::<f64>::random_init(dims.clone(), cfg.activation, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let input = Array1::from_shape_fn(dims[dims.len() - 1], |_| rng.gen_range(-1.0..1.0));
    let target = Array1::from_shape_fn(dims[0], |_| rng.gen_range(-1.0..1.0));
    let inf_cfg = InferenceConfig {
        step: cfg.step,
        max_steps: cfg.effective_steps().max(5_000),
        grad_tol: 1e-10,
        monotone_guard: false,
    };
    let started = Instant::now();
    let rows = compare_pc_bp(&net, &input, &target, &cfg.lambdas, &inf_cfg)?;
    let seconds = started.elapsed().as_secs_f64();
    let id = run_id(cfg);
    let mut records = Vec::new();
    for row in rows {
        records.push(MetricRecord {
            run_id: id.clone(),
            epoch: row.lambda as usize,
            metric: format!("cosine_layer{}", row.layer),
            value: row.cosine,
            seconds,
            op_count: row.inference_steps as u64,
        });
        records.push(MetricRecord {
            run_id: id.clone(),
            epoch: row.lambda as usize,
            metric: format!("rel_mag_err_layer{}", row.layer),
            value: row.rel_mag_err,
            seconds,
            op_count: row.inference_steps as u64,
        });
    }
    Ok(records)
}

/// Seeded random system with spectral radius bounded away from 1 (row-sum
/// norm scaled to 0.85).
pub fn random_stable_system(
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> pc_core::Result<LinearGaussianSystem<f64>> {
    let mut a = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
    let norm = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v: &f64| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if norm > 0.0 {
        a *= 0.85 / norm;
    }
    let c = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
    LinearGaussianSystem::new(
        a,
        c,
        Array2::eye(n) * 0.05,
        Array2::eye(m) * 0.1,
    )
}

/// Simulate a trajectory from the origin; returns (truth, observations),
/// one row per step.
pub fn simulate(
    sys: &LinearGaussianSystem<f64>,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Array2<f64>) {
    let n = sys.state_dim();
    let m = sys.obs_dim();
    let mut truth = Array2::zeros((steps, n));
    let mut obs = Array2::zeros((steps, m));
    let mut x = Array1::<f64>::zeros(n);
    for t in 0..steps {
        let w = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        x = sys.a.dot(&x) + &(w * 0.05f64.sqrt());
        let v = Array1::from_shape_fn(m, |_| rng.sample::<f64, _>(StandardNormal));
        let y = sys.c.dot(&x) + &(v * 0.1f64.sqrt());
        truth.row_mut(t).assign(&x);
        obs.row_mut(t).assign(&y);
    }
    (truth, obs)
}

fn run_kf_track(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    let n = if cfg.dims.is_empty() { 2 } else { cfg.dims[0] };
    let m = if cfg.dims.len() > 1 { cfg.dims[1] } else { n };
    let steps = cfg.effective_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sys = random_stable_system(n, m, &mut rng)?;
    let (truth, obs) = simulate(&sys, steps, &mut rng);
    let init = BeliefState {
        mean: Array1::zeros(n),
        cov: Array2::eye(n),
    };
    let fcfg = FilterConfig::default();
    let started = Instant::now();
    let kf = run_filter(&sys, &obs, FilterMode::Kf, &fcfg, &init, Some(&truth))?;
    let pc = run_filter(&sys, &obs, FilterMode::Pc, &fcfg, &init, Some(&truth))?;
    let seconds = started.elapsed().as_secs_f64();
    let discrepancy = kf
        .means
        .iter()
        .zip(pc.means.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let pc_steps: u64 = pc.pc_steps.iter().map(|&s| s as u64).sum();
    let id = run_id(cfg);
    let row = |metric: &str, value: f64, ops: u64| MetricRecord {
        run_id: id.clone(),
        epoch: 0,
        metric: metric.into(),
        value,
        seconds,
        op_count: ops,
    };
    Ok(vec![
        row("kf_rmse", kf.rmse.unwrap_or(f64::NAN), 0),
        row("pc_rmse", pc.rmse.unwrap_or(f64::NAN), pc_steps),
        row("max_mean_discrepancy", discrepancy, pc_steps),
    ])
}

/// Central finite difference of the batch-mean free energy under a scalar
/// perturbation applied by `poke`.
pub fn nfe_central_diff<P>(
    net: &PCNetwork<f64>,
    state: &NetworkState<f64>,
    h: f64,
    mut poke: P,
) -> Result<f64>
where
    P: FnMut(&mut PCNetwork<f64>, &mut NetworkState<f64>, f64),
{
    let mut eval = |delta: f64| -> Result<f64> {
        let mut n = net.clone();
        let mut s = state.clone();
        poke(&mut n, &mut s, delta);
        refresh_state(&n, &mut s)?;
        Ok(nfe(&n, &s, false)?)
    };
    Ok((eval(h)? - eval(-h)?) / (2.0 * h))
}

/// Worst relative error between an analytic gradient and its central-difference
/// oracle, normalized by the gradient's own scale.
pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd
        .iter()
        .chain(analytic.iter())
        .map(|v| v.abs())
        .fold(1e-8f64, f64::max);
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, f)| (a - f).abs() / scale)
        .fold(0.0, f64::max)
}

fn run_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst_phi = 0.0f64;
    let mut worst_theta = 0.0f64;
    let mut worst_sigma = 0.0f64;
    let started = Instant::now();
    for trial in 0..10 {
        let dims: Vec<usize> = (0..3).map(|_| 1 + rng.gen_range(0..5)).collect();
        let net = PCNetwork::<f64>::random_init(
            dims.clone(),
            Activation::Tanh,
            cfg.seed.wrapping_add(trial),
        )?;
        let mut state = NetworkState::zeros(&net, 1);
        for l in 0..dims.len() {
            state.phi[l] = Array2::from_shape_fn((1, dims[l]), |_| rng.gen_range(-0.9..0.9));
        }
        refresh_state(&net, &mut state)?;
        let h = 1e-5;

        for l in 0..dims.len() {
            let grad = nfe_grad_phi(&net, &state, l)?;
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for i in 0..dims[l] {
                analytic.push(grad[[0, i]]);
                numeric.push(nfe_central_diff(&net, &state, h, |_, s, d| {
                    s.phi[l][[0, i]] += d;
                })?);
            }
            worst_phi = worst_phi.max(max_rel_err(&analytic, &numeric));
        }
        for l in 1..dims.len() {
            let grad = nfe_grad_theta(&net, &state, l)?;
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for i in 0..dims[l - 1] {
                for j in 0..dims[l] {
                    analytic.push(grad[[i, j]]);
                    numeric.push(nfe_central_diff(&net, &state, h, |n, _, d| {
                        n.weight_mut(l)[[i, j]] += d;
                    })?);
                }
            }
            worst_theta = worst_theta.max(max_rel_err(&analytic, &numeric));
        }
        for l in 0..dims.len() {
            let grad = nfe_grad_sigma(&net, &state, l)?;
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for i in 0..dims[l] {
                analytic.push(grad[[i]]);
                numeric.push(nfe_central_diff(&net, &state, h, |n, _, d| {
                    let mut v = n.variance(l).clone();
                    v[i] += d;
                    n.set_variance(l, v).unwrap();
                })?);
            }
            worst_sigma = worst_sigma.max(max_rel_err(&analytic, &numeric));
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    if worst_phi > 1e-6 || worst_theta > 1e-6 || worst_sigma > 1e-5 {
        return Err(CliError::Compute(pc_core::PcError::Config(format!(
            "gradient check failed: phi {worst_phi:.2e}, theta {worst_theta:.2e}, sigma {worst_sigma:.2e}"
        ))));
    }
    let id = run_id(cfg);
    let row = |metric: &str, value: f64| MetricRecord {
        run_id: id.clone(),
        epoch: 0,
        metric: metric.into(),
        value,
        seconds,
        op_count: 0,
    };
    Ok(vec![
        row("max_rel_err_phi", worst_phi),
        row("max_rel_err_theta", worst_theta),
        row("max_rel_err_sigma", worst_sigma),
    ])
}

/// Dispatch to the task-specific driver; records are returned, not yet
/// written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    match cfg.task {
        TaskKind::Classify => run_training(cfg, Task::Classify),
        TaskKind::Compress => run_training(cfg, Task::Compress),
        TaskKind::BpCompare => run_bp_compare(cfg),
        TaskKind::KfTrack => run_kf_track(cfg),
        TaskKind::GradCheck => run_gradcheck(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_is_pinned() {
        assert_eq!(
            CSV_HEADER,
            "run_id,epoch,metric,value,seconds,op_count,timestamp"
        );
    }

    #[test]
    fn csv_write_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![MetricRecord {
            run_id: "t-seed0".into(),
            epoch: 3,
            metric: "pc_accuracy".into(),
            value: 0.5,
            seconds: 0.25,
            op_count: 42,
        }];
        write_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&row[..6], &["t-seed0", "3", "pc_accuracy", "0.5", "0.25", "42"]);
        assert!(row[6].parse::<u64>().is_ok());
        assert!(lines.next().is_none());
    }

    #[test]
    fn missing_dataset_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            dataset: DatasetKind::Mnist,
            data_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        match run_experiment(&cfg) {
            Err(e @ CliError::Io(_)) => assert_eq!(e.exit_code(), 3),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn gradcheck_driver_passes() {
        let cfg = ExperimentConfig {
            task: TaskKind::GradCheck,
            ..Default::default()
        };
        let records = run_experiment(&cfg).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records.iter().all(|r| r.value < 1e-5));
    }

    #[test]
    fn kf_track_modes_agree() {
        let cfg = ExperimentConfig {
            task: TaskKind::KfTrack,
            steps: Some(50),
            seed: 4,
            ..Default::default()
        };
        let records = run_experiment(&cfg).unwrap();
        let disc = records
            .iter()
            .find(|r| r.metric == "max_mean_discrepancy")
            .unwrap();
        assert!(disc.value < 1e-6, "discrepancy {}", disc.value);
    }

    #[test]
    fn classify_blobs_learns_and_logs_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            task: TaskKind::Classify,
            dataset: DatasetKind::Blobs,
            classes: 4,
            per_class: 100,
            dim: 16,
            epochs: 10,
            seed: 1,
            out: dir.path().join("m.csv"),
            ..Default::default()
        };
        let records = run_experiment(&cfg).unwrap();
        let check = records
            .iter()
            .find(|r| r.metric == "init_checksum_match")
            .unwrap();
        assert_eq!(check.value, 1.0);
        let last_acc = records
            .iter()
            .filter(|r| r.metric == "pc_accuracy")
            .last()
            .unwrap();
        assert!(last_acc.value > 0.9, "accuracy {}", last_acc.value);
        assert!(cfg.out.with_extension("net.json").is_file());
    }

    #[test]
    fn experiment_records_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            task: TaskKind::Classify,
            dataset: DatasetKind::Blobs,
            classes: 2,
            per_class: 20,
            dim: 4,
            epochs: 2,
            seed: 3,
            out: dir.path().join("m.csv"),
            ..Default::default()
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.metric, y.metric);
            assert_eq!(x.value.to_bits(), y.value.to_bits());
            assert_eq!(x.op_count, y.op_count);
        }
    }
}
