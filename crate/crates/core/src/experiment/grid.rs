use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::cell::{read_entropies, read_outcome_record, run_cell_in, Cell};
use super::config::{DataSource, ExperimentConfig};
use super::plot::{box_plot, line_plot, BoxStat, Series};
use super::{io_err, ExperimentError};
use crate::data::{load_mnist_split, masking_rate, Split};
use crate::metrics::{entropy_summary, read_csv, write_csv, MetricRecord};

pub const CONFIG_FILE: &str = "config.toml";
pub const RESULTS_FILE: &str = "results.csv";

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub jobs: usize,
    /// Stop every cell after this iteration, leaving checkpoints (used to test resume).
    pub halt_at: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, halt_at: None }
    }
}

#[derive(Debug)]
pub struct GridReport {
    /// Records of every completed cell, in grid order.
    pub records: Vec<MetricRecord>,
    /// Cells already complete before this run.
    pub skipped: usize,
    pub failures: Vec<(String, ExperimentError)>,
    pub results_csv: PathBuf,
}

/// Grid cells ordered by (n_labeled, mask_side, capacity_factor), then replicate.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut ns = cfg.n_labeled.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut ms = cfg.mask_sides.clone();
    ms.sort_unstable();
    ms.dedup();
    let mut ks = cfg.capacity_factors.clone();
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let mut out = Vec::new();
    for &n_labeled in &ns {
        for &mask_side in &ms {
            for &capacity_factor in &ks {
                for replicate in 0..cfg.replicates {
                    out.push(Cell { n_labeled, mask_side, capacity_factor, replicate });
                }
            }
        }
    }
    out
}

fn cell_dir(out: &Path, cfg: &ExperimentConfig, cell: &Cell) -> PathBuf {
    out.join("cells").join(cell.key(cfg.model_family))
}

/// Creates the output directory, checks it is writable and pins the config to it.
fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out.join("cells"))
        .map_err(|e| io_err(out, format!("cannot create output directory: {e}")))?;
    let probe = out.join(".write-probe");
    std::fs::write(&probe, b"").map_err(|e| io_err(out, format!("output directory is not writable: {e}")))?;
    let _ = std::fs::remove_file(&probe);
    let pinned = out.join(CONFIG_FILE);
    if pinned.exists() {
        let text = std::fs::read_to_string(&pinned).map_err(|e| io_err(&pinned, e))?;
        let existing = ExperimentConfig::parse(&text, None)?;
        if existing.hash() != cfg.hash() {
            return Err(ExperimentError::ConfigMismatch(format!(
                "{} holds results for a different config (hash {} vs {}); refusing to mix them",
                out.display(),
                existing.hash_hex(),
                cfg.hash_hex()
            )));
        }
    } else {
        std::fs::write(&pinned, cfg.to_text()).map_err(|e| io_err(&pinned, e))?;
    }
    Ok(())
}

/// Runs every incomplete cell, then writes the CSV and plots. Failed cells are
/// reported without stopping their siblings.
pub fn run_grid(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<GridReport, ExperimentError> {
    cfg.validate()?;
    prepare_out_dir(cfg)?;
    check_data(cfg)?;
    let all = cells(cfg);
    let mut pending = Vec::new();
    for cell in &all {
        if read_outcome_record(&cell_dir(&cfg.out_dir, cfg, cell))?.is_none() {
            pending.push(*cell);
        }
    }
    let skipped = all.len() - pending.len();
    if skipped > 0 {
        log::info!("{skipped} of {} cells already complete", all.len());
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<(), ExperimentError>>>> =
        Mutex::new((0..pending.len()).map(|_| None).collect());
    let workers = opts.jobs.max(1).min(pending.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = pending.get(i) else { break };
                let dir = cell_dir(&cfg.out_dir, cfg, cell);
                let key = cell.key(cfg.model_family);
                log::info!("cell {key}: start");
                let started = std::time::Instant::now();
                let r = std::fs::create_dir_all(&dir)
                    .map_err(|e| io_err(&dir, e))
                    .and_then(|_| run_cell_in(cfg, cell, Some(&dir), opts.halt_at))
                    .map(|o| {
                        log::info!(
                            "cell {key}: teacher nll {:.4}, student nll {:.4} ({:.0?})",
                            o.record.nll_teacher,
                            o.record.nll_student,
                            started.elapsed()
                        );
                    });
                if let Err(e) = &r {
                    log::warn!("cell {key}: {e}");
                }
                results.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    let failures = pending
        .iter()
        .zip(results.into_inner().expect("result slots"))
        .filter_map(|(cell, r)| match r {
            Some(Err(e)) => Some((cell.key(cfg.model_family), e)),
            _ => None,
        })
        .collect();
    let records = write_outputs(cfg)?;
    Ok(GridReport { records, skipped, failures, results_csv: cfg.out_dir.join(RESULTS_FILE) })
}

/// Fails fast when the configured data cannot be read or is too small for the grid.
fn check_data(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let (train, test) = match cfg.data_source {
        DataSource::Blobs => {
            (cfg.blobs.classes * cfg.blobs.train_per_class, cfg.blobs.classes * cfg.blobs.test_per_class)
        }
        DataSource::Mnist => {
            let (_, train) = load_mnist_split::<f32>(&cfg.data_dir, Split::Train)?;
            let (_, test) = load_mnist_split::<f32>(&cfg.data_dir, Split::Test)?;
            (train.len(), test.len())
        }
    };
    let pool = if cfg.pool_size == 0 { train } else { cfg.pool_size };
    if pool > train || cfg.test_size > test {
        return Err(ExperimentError::Data(format!(
            "pool_size {} / test_size {} exceed the {train} training and {test} test examples available",
            cfg.pool_size, cfg.test_size
        )));
    }
    if let Some(n) = cfg.n_labeled.iter().find(|&&n| n > pool) {
        return Err(ExperimentError::Data(format!("n_labeled {n} exceeds the {pool} training examples in use")));
    }
    if pool < cfg.teacher.batch_size {
        return Err(ExperimentError::Data(format!("pool of {pool} is smaller than the batch size")));
    }
    Ok(())
}

fn load_pinned(dir: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ExperimentError::Config(format!("{}: no run to resume here ({e})", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text, None)?;
    cfg.out_dir = dir.to_path_buf();
    Ok(cfg)
}

/// Continues the run stored in `dir`. With `expected`, refuses when that config
/// differs from the one the run was started with.
pub fn resume(
    dir: &Path,
    expected: Option<&ExperimentConfig>,
    opts: &RunOptions,
) -> Result<GridReport, ExperimentError> {
    let cfg = load_pinned(dir)?;
    if let Some(want) = expected {
        if want.hash() != cfg.hash() {
            return Err(ExperimentError::ConfigMismatch(format!(
                "{} was started with a different config (hash {} vs {}); refusing to resume",
                dir.display(),
                cfg.hash_hex(),
                want.hash_hex()
            )));
        }
    }
    run_grid(&cfg, opts)
}

/// Re-emits the CSV and plots from the cell records stored in `dir`.
pub fn report(dir: &Path) -> Result<Vec<MetricRecord>, ExperimentError> {
    write_outputs(&load_pinned(dir)?)
}

/// Teacher predictive entropies stored by a completed cell of `cfg`'s grid.
pub fn cell_entropies(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<f64>, ExperimentError> {
    read_entropies(&cell_dir(&cfg.out_dir, cfg, cell))
}

pub fn read_records(csv: &Path) -> Result<Vec<MetricRecord>, ExperimentError> {
    let file = std::fs::File::open(csv).map_err(|e| io_err(csv, e))?;
    read_csv(file).map_err(|e| io_err(csv, e))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    crate::metrics::quantile_sorted(&v, 0.5)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn write_plot(path: &Path, svg: Result<String, String>) -> Result<(), ExperimentError> {
    let svg = svg.map_err(|e| io_err(path, format!("plot: {e}")))?;
    std::fs::write(path, svg).map_err(|e| io_err(path, e))
}

fn write_outputs(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>, ExperimentError> {
    let out = &cfg.out_dir;
    let mut done: Vec<(Cell, MetricRecord)> = Vec::new();
    for cell in cells(cfg) {
        if let Some(r) = read_outcome_record(&cell_dir(out, cfg, &cell))? {
            done.push((cell, r));
        }
    }
    let records: Vec<MetricRecord> = done.iter().map(|(_, r)| r.clone()).collect();
    let mut csv = Vec::new();
    write_csv(&records, &mut csv).map_err(|e| io_err(out, e))?;
    let path = out.join(RESULTS_FILE);
    std::fs::write(&path, csv).map_err(|e| io_err(&path, e))?;

    let family = cfg.model_family;
    let factor = if family == crate::metrics::ModelFamily::Fcnn { "K" } else { "C" };
    let mut by_n_m: BTreeMap<(usize, usize), Vec<&MetricRecord>> = BTreeMap::new();
    for (_, r) in &done {
        by_n_m.entry((r.n_labeled, r.mask_side)).or_default().push(r);
    }
    let per_n = |value: fn(&MetricRecord) -> f64| -> Vec<Series> {
        let mut series: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for (&(n, m), rs) in &by_n_m {
            let vals: Vec<f64> = rs.iter().map(|r| value(r)).collect();
            series.entry(n).or_default().push((masking_rate(m), mean(&vals)));
        }
        series.into_iter().map(|(n, points)| Series { label: format!("N={n}"), points }).collect()
    };
    let plots = [
        (
            "teacher_nll_vs_rate.svg",
            line_plot(
                &format!("{family}: teacher test NLL"),
                "masking rate r",
                "NLL (nats)",
                &per_n(|r| r.nll_teacher),
            ),
        ),
        (
            "gap_vs_rate.svg",
            line_plot(&format!("{family}: student - teacher NLL"), "masking rate r", "gap (nats)", &per_n(|r| r.delta)),
        ),
    ];
    for (name, svg) in plots {
        write_plot(&out.join(name), svg)?;
    }

    let mut capacity: Vec<Series> = Vec::new();
    for (&(n, m), rs) in &by_n_m {
        let mut by_k: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
        for r in rs {
            by_k.entry(r.capacity_factor.to_bits()).or_insert((r.capacity_factor, Vec::new())).1.push(r.delta);
        }
        let points = by_k.into_values().map(|(k, ds)| (k, median(ds))).collect();
        capacity.push(Series { label: format!("N={n} r={:.3}", masking_rate(m)), points });
    }
    let svg = line_plot(
        &format!("{family}: median gap vs capacity"),
        &format!("capacity factor {factor}"),
        "gap (nats)",
        &capacity,
    );
    write_plot(&out.join("gap_vs_capacity.svg"), svg)?;

    // the teacher does not depend on the capacity factor, so one factor per (N, m) suffices
    let mut boxes = Vec::new();
    let mut first_k: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut pooled: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (cell, _) in &done {
        let key = (cell.n_labeled, cell.mask_side);
        let k = *first_k.entry(key).or_insert(cell.capacity_factor.to_bits());
        if k == cell.capacity_factor.to_bits() {
            pooled.entry(key).or_default().extend(read_entropies(&cell_dir(out, cfg, cell))?);
        }
    }
    for ((n, m), ent) in pooled {
        if let Ok(summary) = entropy_summary(&ent) {
            boxes.push(BoxStat { label: format!("N={n} r={:.3}", masking_rate(m)), summary });
        }
    }
    write_plot(
        &out.join("teacher_entropy.svg"),
        box_plot(&format!("{family}: teacher predictive entropy"), "entropy (nats)", &boxes),
    )?;

    Ok(done.into_iter().map(|(_, r)| r).collect())
}
