//! Experiment driver: grid tuning, training runs, CSV logging, model files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::objective::{error_rate, log_likelihood, Formulation, ModelState};
use crate::optimizers::{eval_epochs, run_epochs, ConfigError, Method, OptimizerConfig};

pub const CSV_HEADER: &str = "method,dataset,formulation,eta0,epoch,log_loss,error_rate,elapsed_sec,failed";

/// Default learning-rate grid `10^{-3..3}` (before division by N).
pub const DEFAULT_GRID: [f64; 7] = [1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("every learning rate failed for {method}: {}", causes.join("; "))]
    AllFailed { method: Method, causes: Vec<String> },
    #[error("model has K={model_k}, D={model_d} but the dataset has K={data_k}, D={data_d}")]
    DimensionMismatch { model_k: usize, model_d: usize, data_k: usize, data_d: usize },
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error("empty learning-rate grid")]
    EmptyGrid,
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub method: String,
    pub dataset: String,
    pub formulation: String,
    pub eta0: f64,
    pub epoch: usize,
    /// `-L(W)`, the negative regularized log-likelihood.
    pub log_loss: f64,
    pub error_rate: f64,
    pub elapsed_sec: f64,
    pub failed: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub records: Vec<EpochRecord>,
    pub state: ModelState,
    pub failure: Option<String>,
}

impl TrainOutput {
    pub fn final_log_loss(&self) -> f64 {
        match self.records.last() {
            Some(r) if !r.failed => r.log_loss,
            _ => f64::NAN,
        }
    }
}

/// Runs one configuration from the standard initial state and records
/// metrics at the evaluation epochs. With `deterministic` the timing column
/// is zeroed so repeated runs give byte-identical CSVs.
pub fn train(ds: &Dataset, config: &OptimizerConfig, deterministic: bool) -> Result<TrainOutput, HarnessError> {
    let mut records = Vec::new();
    let base = |epoch: usize| EpochRecord {
        method: config.method.as_str().to_string(),
        dataset: ds.name.clone(),
        formulation: config.formulation.as_str().to_string(),
        eta0: config.eta0,
        epoch,
        log_loss: f64::NAN,
        error_rate: f64::NAN,
        elapsed_sec: 0.0,
        failed: true,
    };
    let mut hook = |p: crate::optimizers::EpochPoint| {
        let (log_loss, failed) = match log_likelihood(ds, p.state, config.mu) {
            Ok(l) => (-l, false),
            Err(_) => (f64::NAN, true),
        };
        records.push(EpochRecord {
            log_loss,
            error_rate: error_rate(ds, p.state),
            elapsed_sec: if deterministic { 0.0 } else { p.elapsed_sec },
            failed,
            ..base(p.epoch)
        });
    };
    let out = run_epochs(ds, config, ModelState::initial(ds, config.formulation), &mut hook)?;
    let failure = out.failure.map(|f| f.to_string());
    if failure.is_some() {
        let done = records.len();
        for epoch in eval_epochs(config.epochs, config.eval_points).into_iter().skip(done) {
            records.push(base(epoch));
        }
    }
    Ok(TrainOutput { records, state: out.state, failure })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneEntry {
    pub eta0: f64,
    pub final_log_loss: f64,
    pub failed: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub method: Method,
    pub subsample_size: usize,
    pub entries: Vec<TuneEntry>,
    pub chosen_eta0: f64,
}

/// Uniform subsample without replacement of `round(frac·N)` examples
/// (at least one), in original order.
pub fn tuning_subsample(ds: &Dataset, frac: f64, seed: u64) -> Dataset {
    let size = ((ds.n() as f64 * frac).round() as usize).clamp(1, ds.n());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, ds.n(), size).into_vec();
    idx.sort_unstable();
    ds.subset(&idx)
}

/// Trains on a subsample at every grid rate and keeps the rate with the
/// lowest final log-loss among runs that did not fail (first on ties).
pub fn tune(
    ds: &Dataset,
    config: &OptimizerConfig,
    grid: &[f64],
    subsample_frac: f64,
) -> Result<TuneResult, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let sub = tuning_subsample(ds, subsample_frac, config.seed);
    let runs: Vec<Result<TrainOutput, HarnessError>> = grid
        .par_iter()
        .map(|&eta0| train(&sub, &OptimizerConfig { eta0, ..config.clone() }, true))
        .collect();
    let mut entries = Vec::with_capacity(grid.len());
    for (&eta0, run) in grid.iter().zip(runs) {
        let run = run?;
        let loss = run.final_log_loss();
        let failure = run.failure.or_else(|| (!loss.is_finite()).then(|| "non-finite log-loss".to_string()));
        entries.push(TuneEntry { eta0, final_log_loss: loss, failed: failure.is_some(), failure });
    }
    let mut best: Option<&TuneEntry> = None;
    for e in entries.iter().filter(|e| !e.failed) {
        if best.is_none_or(|b| e.final_log_loss < b.final_log_loss) {
            best = Some(e);
        }
    }
    match best {
        Some(b) => {
            let chosen_eta0 = b.eta0;
            Ok(TuneResult { method: config.method, subsample_size: sub.n(), entries, chosen_eta0 })
        }
        None => Err(HarnessError::AllFailed {
            method: config.method,
            causes: entries
                .iter()
                .map(|e| format!("eta0={}: {}", e.eta0, e.failure.as_deref().unwrap_or("failed")))
                .collect(),
        }),
    }
}

/// Runs each configuration (in parallel) and returns their rows in input
/// order.
pub fn bench(ds: &Dataset, configs: &[OptimizerConfig], deterministic: bool) -> Result<Vec<TrainOutput>, HarnessError> {
    configs.par_iter().map(|c| train(ds, c, deterministic)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationPair {
    pub eta0: f64,
    pub ours_final: f64,
    pub raman_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub method: Method,
    pub pairs: Vec<FormulationPair>,
    /// Mean of `raman_final / ours_final` over rates where both runs are
    /// stable; `None` when no rate is.
    pub average_ratio: Option<f64>,
    pub reference_ratio: f64,
}

/// U-max in both formulations at every grid rate with the same seed.
pub fn compare_formulations(
    ds: &Dataset,
    config: &OptimizerConfig,
    grid: &[f64],
    deterministic: bool,
) -> Result<(Vec<EpochRecord>, ComparisonSummary), HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let mut configs = Vec::with_capacity(2 * grid.len());
    for &eta0 in grid {
        for formulation in [Formulation::Ours, Formulation::Raman] {
            configs.push(OptimizerConfig { method: Method::Umax, eta0, formulation, ..config.clone() });
        }
    }
    let runs = bench(ds, &configs, deterministic)?;
    let mut pairs = Vec::with_capacity(grid.len());
    let mut ratios = Vec::new();
    for (j, &eta0) in grid.iter().enumerate() {
        let (ours, raman) = (runs[2 * j].final_log_loss(), runs[2 * j + 1].final_log_loss());
        if ours.is_finite() && raman.is_finite() && ours > 0.0 {
            ratios.push(raman / ours);
        }
        pairs.push(FormulationPair { eta0, ours_final: ours, raman_final: raman });
    }
    let average_ratio = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
    let records = runs.into_iter().flat_map(|r| r.records).collect();
    Ok((records, ComparisonSummary { method: Method::Umax, pairs, average_ratio, reference_ratio: 3.08 }))
}

pub fn write_records<W: Write>(out: W, records: &[EpochRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<EpochRecord>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<EpochRecord>, _>>()?;
    Ok(rows)
}

pub fn write_records_file(path: &Path, records: &[EpochRecord]) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_records(BufWriter::new(f), records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub log_loss: f64,
    pub error_rate: f64,
}

/// Exact `-L(W)` (no ridge) and training error of a saved model.
pub fn evaluate(ds: &Dataset, state: &ModelState) -> Result<Metrics, HarnessError> {
    if state.k() != ds.k() || state.d() != ds.d() {
        return Err(HarnessError::DimensionMismatch {
            model_k: state.k(),
            model_d: state.d(),
            data_k: ds.k(),
            data_d: ds.d(),
        });
    }
    let log_loss = match log_likelihood(ds, state, 0.0) {
        Ok(l) => -l,
        Err(_) => f64::NAN,
    };
    Ok(Metrics { log_loss, error_rate: error_rate(ds, state) })
}

const MAGIC: &[u8; 8] = b"USMXMODL";
const FORMAT_VERSION: u32 = 1;

/// Layout: magic, version (u32), formulation (u8: 0 ours, 1 raman), K, D
/// (u64), W row-major, N (u64), u. All little-endian, floats as f64.
pub fn write_model<W: Write>(mut out: W, state: &ModelState) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[match state.formulation {
        Formulation::Ours => 0u8,
        Formulation::Raman => 1u8,
    }])?;
    out.write_all(&(state.k() as u64).to_le_bytes())?;
    out.write_all(&(state.d() as u64).to_le_bytes())?;
    for w in &state.w {
        out.write_all(&w.to_le_bytes())?;
    }
    out.write_all(&(state.u.len() as u64).to_le_bytes())?;
    for u in &state.u {
        out.write_all(&u.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_model<R: Read>(mut input: R) -> Result<ModelState, HarnessError> {
    let bad = |what: &str| HarnessError::BadModel(what.to_string());
    let mut buf = Vec::new();
    input.read_to_end(&mut buf).map_err(|e| HarnessError::BadModel(e.to_string()))?;
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<&[u8], HarnessError> {
        let end = pos.checked_add(len).filter(|&e| e <= buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &buf[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(bad("magic mismatch"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(HarnessError::BadModel(format!("unsupported version {version}")));
    }
    let formulation = match take(1)?[0] {
        0 => Formulation::Ours,
        1 => Formulation::Raman,
        other => return Err(HarnessError::BadModel(format!("unknown formulation tag {other}"))),
    };
    let read_u64 = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap()) as usize;
    let k = read_u64(take(8)?);
    let d = read_u64(take(8)?);
    let len = k.checked_mul(d).ok_or_else(|| bad("K*D overflows"))?;
    let w = take(len.checked_mul(8).ok_or_else(|| bad("size overflows"))?)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n = read_u64(take(8)?);
    let u = take(n.checked_mul(8).ok_or_else(|| bad("size overflows"))?)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if pos != buf.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(ModelState::from_parts(k, d, w, u, formulation))
}

pub fn save_model(path: &Path, state: &ModelState) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_model(BufWriter::new(f), state).map_err(|e| HarnessError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelState, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_model(BufReader::new(f))
}
