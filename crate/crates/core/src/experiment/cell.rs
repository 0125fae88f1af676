use std::fmt::Write as _;
use std::path::Path;

use super::checkpoint::Checkpoint;
use super::config::{DataSource, ExperimentConfig, Precision};
use super::{io_err, ExperimentError};
use crate::data::{
    load_mnist_split, mask_dataset, subsample_labeled, synthetic_blobs, BatchSampler, Dataset, MaskSpec, Split,
    UnlabeledPool,
};
use crate::distill::{AdamState, Distiller, DistillerState};
use crate::metrics::{accuracy, nll, row_entropies, MetricRecord, ModelFamily};
use crate::nn::{cnn, fcnn, mlp, NetworkSpec, ParamVector};
use crate::real::Real;
use crate::rng::{derive_seed, substream, Stream};
use crate::sgld::{predict_probs, Chain, Classifier, GaussianNoise, PredictiveAccumulator, TeacherConfig};
use crate::tensor::Tensor;

/// One point of the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub n_labeled: usize,
    pub mask_side: usize,
    pub capacity_factor: f64,
    pub replicate: usize,
}

impl Cell {
    pub fn key(&self, family: ModelFamily) -> String {
        format!("{family}_n{}_m{}_k{:?}_r{}", self.n_labeled, self.mask_side, self.capacity_factor, self.replicate)
    }

    /// Seed for data, masks and the teacher chain. Independent of the capacity
    /// factor, so a capacity sweep compares students against the same teacher.
    pub fn teacher_seed(&self, master: u64, family: ModelFamily) -> u64 {
        derive_seed(master, &[family as u64, self.n_labeled as u64, self.mask_side as u64, self.replicate as u64])
    }

    /// Seed of the whole cell; also the one reported in the results.
    pub fn seed(&self, master: u64, family: ModelFamily) -> u64 {
        derive_seed(self.teacher_seed(master, family), &[self.capacity_factor.to_bits()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub record: MetricRecord,
    /// Per-test-example entropy of the teacher's predictive distribution.
    pub entropies: Vec<f64>,
    pub teacher_accuracy: f64,
    pub student_accuracy: f64,
    pub retained_samples: u64,
}

impl CellOutcome {
    pub fn mean_entropy(&self) -> f64 {
        self.entropies.iter().sum::<f64>() / self.entropies.len().max(1) as f64
    }
}

/// Runs a cell in memory, without checkpoints.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<CellOutcome, ExperimentError> {
    run_cell_in(cfg, cell, None, None)
}

/// Runs a cell, checkpointing into `dir` when given and resuming from a checkpoint
/// found there. `halt_at` stops after that iteration, leaving a checkpoint behind.
pub fn run_cell_in(
    cfg: &ExperimentConfig,
    cell: &Cell,
    dir: Option<&Path>,
    halt_at: Option<u64>,
) -> Result<CellOutcome, ExperimentError> {
    let key = cell.key(cfg.model_family);
    let tag = |e: ExperimentError| match e {
        ExperimentError::Compute(m) => ExperimentError::Compute(format!("{key}: {m}")),
        ExperimentError::Data(m) => ExperimentError::Data(format!("{key}: {m}")),
        ExperimentError::Config(m) => ExperimentError::Config(format!("{key}: {m}")),
        other => other,
    };
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, cell, &key, dir, halt_at),
        Precision::F64 => run_typed::<f64>(cfg, cell, &key, dir, halt_at),
    }
    .map_err(tag)
}

fn compute<E: std::fmt::Display>(e: E) -> ExperimentError {
    ExperimentError::Compute(e.to_string())
}

struct CellData<T> {
    labeled: Dataset<T>,
    pool: UnlabeledPool<T>,
    test_inputs: Tensor<T>,
    test_labels: Vec<u8>,
}

fn take<T: Real>(data: Dataset<T>, n: usize, what: &str) -> Result<Dataset<T>, ExperimentError> {
    if n == 0 || n == data.len() {
        return Ok(data);
    }
    if n > data.len() {
        return Err(ExperimentError::Data(format!("{what} needs {n} examples, only {} available", data.len())));
    }
    Ok(data.take(n))
}

fn prepare<T: Real>(cfg: &ExperimentConfig, cell: &Cell, seed: u64) -> Result<CellData<T>, ExperimentError> {
    let (train, test) = match cfg.data_source {
        DataSource::Mnist => {
            let (x, y) = load_mnist_split::<T>(&cfg.data_dir, Split::Train)?;
            let train = Dataset::labeled(x, y, "mnist-train")?;
            let (x, y) = load_mnist_split::<T>(&cfg.data_dir, Split::Test)?;
            (train, Dataset::labeled(x, y, "mnist-test")?)
        }
        DataSource::Blobs => {
            let b = &cfg.blobs;
            let data_seed = derive_seed(cfg.seed, &[Stream::Synthetic as u64]);
            let train = synthetic_blobs(b.classes, b.dims, b.train_per_class, b.separation, data_seed)?;
            let test = synthetic_blobs(b.classes, b.dims, b.test_per_class, b.separation, data_seed.wrapping_add(1))?;
            (train, test)
        }
    };
    let train = take(train, cfg.pool_size, "unlabeled pool")?;
    let test = take(test, cfg.test_size, "test set")?;
    let train = mask_dataset(&train, MaskSpec::new(cell.mask_side, derive_seed(seed, &[Stream::TrainMasks as u64]))?)?;
    let test = mask_dataset(&test, MaskSpec::new(cell.mask_side, derive_seed(seed, &[Stream::TestMasks as u64]))?)?;
    let labeled = if cell.n_labeled == train.len() {
        train.clone()
    } else if cell.n_labeled < train.len() {
        subsample_labeled(&train, cell.n_labeled, derive_seed(seed, &[Stream::Subsample as u64]))?
    } else {
        return Err(ExperimentError::Data(format!(
            "{} labeled examples requested, {} available",
            cell.n_labeled,
            train.len()
        )));
    };
    let test_labels = test.labels().expect("test split is labeled").to_vec();
    Ok(CellData { pool: train.to_pool(), labeled, test_inputs: test.inputs().clone(), test_labels })
}

fn architectures(cfg: &ExperimentConfig, cell: &Cell) -> Result<(NetworkSpec, NetworkSpec), ExperimentError> {
    let p = cfg.student.dropout_rate;
    let dropout = (p > 0.0).then_some(p);
    let k = cell.capacity_factor;
    let built = match (cfg.data_source, cfg.model_family) {
        (DataSource::Mnist, ModelFamily::Fcnn) => {
            fcnn(cfg.base_width, 1.0, None).and_then(|t| Ok((t, fcnn(cfg.base_width, k, dropout)?)))
        }
        (DataSource::Mnist, ModelFamily::Cnn) => cnn(1.0, None).and_then(|t| Ok((t, cnn(k, dropout)?))),
        (DataSource::Blobs, ModelFamily::Fcnn) => {
            let b = &cfg.blobs;
            mlp(b.dims, cfg.base_width, 1.0, b.classes, None)
                .and_then(|t| Ok((t, mlp(b.dims, cfg.base_width, k, b.classes, dropout)?)))
        }
        (DataSource::Blobs, ModelFamily::Cnn) => {
            return Err(ExperimentError::Config("the cnn family needs image data".into()));
        }
    };
    built.map_err(|e| ExperimentError::Config(e.to_string()))
}

fn widen<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn narrow<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64_lossy(x)).collect()
}

fn run_typed<T: Real>(
    cfg: &ExperimentConfig,
    cell: &Cell,
    key: &str,
    dir: Option<&Path>,
    halt_at: Option<u64>,
) -> Result<CellOutcome, ExperimentError> {
    let tseed = cell.teacher_seed(cfg.seed, cfg.model_family);
    let sseed = cell.seed(cfg.seed, cfg.model_family);
    let data = prepare::<T>(cfg, cell, tseed)?;
    let (teacher_spec, student_spec) = architectures(cfg, cell)?;
    let m = cfg.teacher.batch_size;
    let teacher_cfg = TeacherConfig { n_total: data.labeled.len(), seed: tseed, ..cfg.teacher.clone() };
    let student_cfg = cfg.student_config(sseed);
    let iters_per_epoch = (data.pool.len() / m) as u64;
    let classes = teacher_spec.classes();
    let model = Classifier { spec: &teacher_spec };
    let hash = cfg.hash();
    let ck_path = dir.map(|d| d.join("checkpoint.bin"));

    let resumed = match &ck_path {
        Some(p) if p.exists() => Some(Checkpoint::load(p, &hash, key, cfg.precision.as_str())?),
        _ => None,
    };
    let (mut chain, mut teacher_batches, mut distiller, mut student_batches, mut acc) = match resumed {
        Some(ck) => {
            let theta = ParamVector::from_values(&teacher_spec, narrow(&ck.theta)).map_err(compute)?;
            let noise = GaussianNoise::restore(&ck.langevin);
            let chain = Chain::resume(&model, theta, ck.iteration, teacher_cfg, noise).map_err(compute)?;
            let tb = BatchSampler::restore(data.labeled.len(), m, &ck.teacher_sampler)?;
            let state = DistillerState {
                omega: narrow(&ck.omega),
                adam: AdamState {
                    first_moment: narrow(&ck.adam_first),
                    second_moment: narrow(&ck.adam_second),
                    step_count: ck.adam_steps,
                },
                iteration: ck.student_iteration,
                perturb_rng: ck.perturb,
                dropout_rng: ck.dropout,
            };
            let distiller =
                Distiller::restore(student_spec.clone(), student_cfg, iters_per_epoch, state).map_err(compute)?;
            let sb = BatchSampler::restore(data.pool.len(), m, &ck.student_sampler)?;
            let acc = PredictiveAccumulator::from_parts(ck.prob_sum, data.test_labels.len(), classes, ck.retained);
            (chain, tb, distiller, sb, acc)
        }
        None => {
            let theta = ParamVector::<T>::init(&teacher_spec, &mut substream(tseed, Stream::TeacherInit));
            let omega = ParamVector::<T>::init(&student_spec, &mut substream(sseed, Stream::StudentInit));
            let noise = GaussianNoise::new(substream(tseed, Stream::Langevin));
            let chain = Chain::new(&model, theta, teacher_cfg, noise).map_err(compute)?;
            let tb = BatchSampler::new(data.labeled.len(), m, substream(tseed, Stream::TeacherBatches))?;
            let distiller = Distiller::new(
                student_spec.clone(),
                omega,
                student_cfg,
                iters_per_epoch,
                substream(sseed, Stream::Perturb),
                substream(sseed, Stream::Dropout),
            )
            .map_err(compute)?;
            let sb = BatchSampler::new(data.pool.len(), m, substream(sseed, Stream::StudentBatches))?;
            (chain, tb, distiller, sb, PredictiveAccumulator::new(data.test_labels.len(), classes))
        }
    };

    let save = |chain: &Chain<'_, T, Classifier<'_>, GaussianNoise>,
                tb: &BatchSampler,
                d: &Distiller<T>,
                sb: &BatchSampler,
                acc: &PredictiveAccumulator,
                path: &Path| {
        let ds = d.state();
        Checkpoint {
            format: Checkpoint::format(),
            config_hash: hash,
            cell_key: key.to_string(),
            precision: cfg.precision.as_str().to_string(),
            iteration: chain.iteration(),
            theta: widen(chain.theta().values()),
            langevin: chain.noise().state(),
            teacher_sampler: tb.state(),
            omega: widen(&ds.omega),
            adam_first: widen(&ds.adam.first_moment),
            adam_second: widen(&ds.adam.second_moment),
            adam_steps: ds.adam.step_count,
            student_iteration: ds.iteration,
            perturb: ds.perturb_rng,
            dropout: ds.dropout_rng,
            student_sampler: sb.state(),
            prob_sum: acc.prob_sum().to_vec(),
            retained: acc.sample_count(),
        }
        .save(path)
    };

    while !chain.is_done() {
        let batch = data.labeled.batch(&teacher_batches.next_indices());
        let (t, retained) = chain.step(&batch).map_err(compute)?;
        if retained {
            acc.accumulate(&teacher_spec, chain.theta(), &data.test_inputs).map_err(compute)?;
        }
        let inputs = data.pool.batch(&student_batches.next_indices());
        distiller.step(&teacher_spec, chain.theta(), &inputs).map_err(compute)?;
        if let Some(path) = &ck_path {
            let periodic = cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 && !chain.is_done();
            if periodic || halt_at == Some(t) {
                save(&chain, &teacher_batches, &distiller, &student_batches, &acc, path)?;
            }
        }
        if halt_at == Some(t) {
            return Err(ExperimentError::Interrupted { cell: key.to_string(), iteration: t });
        }
    }

    let teacher_probs = acc
        .mean()
        .ok_or_else(|| ExperimentError::Compute("no retained teacher samples; check burn_in and total_iters".into()))?;
    let student_probs = predict_probs(&student_spec, distiller.params(), &data.test_inputs).map_err(compute)?;
    let labels = &data.test_labels;
    let nll_teacher = nll(&teacher_probs, labels).map_err(compute)?;
    let nll_student = nll(&student_probs, labels).map_err(compute)?;
    if !(nll_teacher.is_finite() && nll_student.is_finite()) {
        return Err(ExperimentError::Compute("non-finite test NLL".into()));
    }
    let outcome = CellOutcome {
        record: MetricRecord::new(
            cfg.model_family,
            cell.n_labeled,
            cell.mask_side,
            cell.capacity_factor,
            nll_teacher,
            nll_student,
            sseed,
        ),
        entropies: row_entropies(&teacher_probs),
        teacher_accuracy: accuracy(&teacher_probs, labels).map_err(compute)?,
        student_accuracy: accuracy(&student_probs, labels).map_err(compute)?,
        retained_samples: acc.sample_count(),
    };
    if let Some(d) = dir {
        write_outcome(d, &outcome)?;
        if let Some(p) = &ck_path {
            if p.exists() {
                std::fs::remove_file(p).map_err(|e| io_err(p, e))?;
            }
        }
    }
    Ok(outcome)
}

pub(crate) const RECORD_FILE: &str = "record.csv";
pub(crate) const ENTROPY_FILE: &str = "entropies.txt";

fn write_outcome(dir: &Path, o: &CellOutcome) -> Result<(), ExperimentError> {
    let mut ent = String::new();
    for h in &o.entropies {
        let _ = writeln!(ent, "{h:?}");
    }
    let path = dir.join(ENTROPY_FILE);
    std::fs::write(&path, ent).map_err(|e| io_err(&path, e))?;
    let diag = format!(
        "teacher_accuracy = {:?}\nstudent_accuracy = {:?}\nretained_samples = {}\n",
        o.teacher_accuracy, o.student_accuracy, o.retained_samples
    );
    let path = dir.join("diagnostics.txt");
    std::fs::write(&path, diag).map_err(|e| io_err(&path, e))?;
    // written last: its presence marks the cell complete
    let path = dir.join(RECORD_FILE);
    let mut text = Vec::new();
    crate::metrics::write_csv(std::slice::from_ref(&o.record), &mut text).map_err(|e| io_err(&path, e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
}

pub(crate) fn read_outcome_record(dir: &Path) -> Result<Option<MetricRecord>, ExperimentError> {
    let path = dir.join(RECORD_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let file = std::fs::File::open(&path).map_err(|e| io_err(&path, e))?;
    let mut records = crate::metrics::read_csv(file).map_err(|e| io_err(&path, e))?;
    match records.len() {
        1 => Ok(records.pop()),
        n => Err(io_err(&path, format!("expected one record, found {n}"))),
    }
}

pub(crate) fn read_entropies(dir: &Path) -> Result<Vec<f64>, ExperimentError> {
    let path = dir.join(ENTROPY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    text.lines().map(|l| l.trim().parse::<f64>().map_err(|e| io_err(&path, e))).collect()
}
