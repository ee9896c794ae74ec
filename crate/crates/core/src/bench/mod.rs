//! Timing protocol over an Erdős-Rényi grid.
//!
//! For every `(n, p, seed)` the graph pipeline (ER sample → largest
//! component → random orientation → compile) runs once, untimed. All
//! methods then share the same edge weights and are fed `num_batches`
//! all-ones batches back to back, after `warmup_passes` discarded passes.

mod store;
mod summary;

use std::fmt;
use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{DeepstructNet, SequentialNet};
use crate::graphgen::{generate_dag, GraphError};
use crate::network::{compile, Activation, CompileOptions, CompiledNet, Matrix, NetError, Workspace};
use crate::scalar::Scalar;

pub use store::{read_records, CsvStore, MemoryStore, RecordSink};
pub use summary::{gain_rows_to_csv, render_report, summarize, CellStats, GainRow, GainSummary, GAIN_HEADER};

/// CSV header of the raw timing records.
pub const RECORD_HEADER: &str = "method,n,p,seed,batch_size,num_batches,elapsed_seconds,height,lcc_size";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Layered masked products.
    FW4,
    /// Node-at-a-time baseline.
    SQ,
    /// Layer-pair decomposition.
    DS,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FW4, Method::SQ, Method::DS];

    pub fn tag(self) -> &'static str {
        match self {
            Method::FW4 => "FW4",
            Method::SQ => "SQ",
            Method::DS => "DS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?} (FW4, SQ, DS)"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_num_batches() -> usize {
    100
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_warmup() -> usize {
    5
}

fn default_true() -> bool {
    true
}

fn default_activation() -> Activation {
    Activation::Relu
}

/// Grid definition. JSON keys `n`, `p` and `seeds` are accepted as short
/// forms of `n_values`, `p_values` and `seeds_per_cell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(alias = "n")]
    pub n_values: Vec<usize>,
    #[serde(alias = "p")]
    pub p_values: Vec<f64>,
    #[serde(alias = "seeds")]
    pub seeds_per_cell: usize,
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_num_batches")]
    pub num_batches: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_warmup")]
    pub warmup_passes: usize,
    #[serde(default)]
    pub precision: Precision,
    /// Biases are part of every timed product when true.
    #[serde(default = "default_true")]
    pub bias: bool,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Seeds of a cell are `base_seed .. base_seed + seeds_per_cell`.
    #[serde(default)]
    pub base_seed: u64,
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let config: Self = serde_json::from_str(text).map_err(|e| BenchError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |msg: &str| Err(BenchError::Config(msg.to_string()));
        if self.n_values.is_empty() || self.p_values.is_empty() || self.batch_sizes.is_empty() {
            return fail("n_values, p_values and batch_sizes must be non-empty");
        }
        if self.methods.is_empty() {
            return fail("methods must be non-empty");
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return fail("methods must not repeat");
        }
        if self.num_batches == 0 || self.seeds_per_cell == 0 {
            return fail("num_batches and seeds_per_cell must be at least 1");
        }
        if self.n_values.contains(&0) || self.batch_sizes.contains(&0) {
            return fail("node counts and batch sizes must be positive");
        }
        if let Some(p) = self.p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(BenchError::Config(format!("probability {p} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn compile_options(&self) -> CompileOptions {
        CompileOptions { activation: self.activation, use_bias: self.bias, ..CompileOptions::default() }
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds_per_cell as u64).map(move |s| self.base_seed + s)
    }

    /// Number of records a complete run produces.
    pub fn record_count(&self) -> usize {
        self.n_values.len() * self.p_values.len() * self.seeds_per_cell * self.batch_sizes.len() * self.methods.len()
    }
}

/// One timing measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub n: usize,
    pub p: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub num_batches: usize,
    pub elapsed_seconds: f64,
    pub height: usize,
    pub lcc_size: usize,
}

/// Identity of a record for resumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub method: Method,
    pub n: usize,
    pub p_bits: u64,
    pub seed: u64,
    pub batch_size: usize,
}

impl BenchRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            method: self.method,
            n: self.n,
            p_bits: self.p.to_bits(),
            seed: self.seed,
            batch_size: self.batch_size,
        }
    }

    /// `lcc_size / height`.
    pub fn attenuation(&self) -> f64 {
        self.lcc_size as f64 / self.height as f64
    }
}

/// A forward schedule that can be timed.
pub trait Schedule<T: Scalar> {
    fn run(&self, input: &Matrix<T>, ws: &mut Workspace<T>) -> Result<Matrix<T>, NetError>;
}

impl<T: Scalar> Schedule<T> for CompiledNet<T> {
    fn run(&self, input: &Matrix<T>, ws: &mut Workspace<T>) -> Result<Matrix<T>, NetError> {
        self.forward(input, ws)
    }
}

impl<T: Scalar> Schedule<T> for SequentialNet<T> {
    fn run(&self, input: &Matrix<T>, ws: &mut Workspace<T>) -> Result<Matrix<T>, NetError> {
        self.forward(input, ws)
    }
}

impl<T: Scalar> Schedule<T> for DeepstructNet<T> {
    fn run(&self, input: &Matrix<T>, ws: &mut Workspace<T>) -> Result<Matrix<T>, NetError> {
        self.forward(input, ws)
    }
}

/// Wall time of `passes` forward passes after `warmup` untimed ones.
pub fn time_schedule<T: Scalar, S: Schedule<T> + ?Sized>(
    schedule: &S,
    input: &Matrix<T>,
    warmup: usize,
    passes: usize,
) -> Result<Duration, NetError> {
    let mut ws = Workspace::new();
    for _ in 0..warmup {
        black_box(schedule.run(black_box(input), &mut ws)?);
    }
    let start = Instant::now();
    for _ in 0..passes {
        black_box(schedule.run(black_box(input), &mut ws)?);
    }
    Ok(start.elapsed())
}

/// The three schedules built over one compiled graph with shared weights.
pub struct CellNets<T> {
    pub fw4: CompiledNet<T>,
    pub sq: SequentialNet<T>,
    pub ds: DeepstructNet<T>,
    pub lcc_size: usize,
}

impl<T: Scalar> CellNets<T> {
    pub fn build(n: usize, p: f64, seed: u64, options: CompileOptions) -> Result<Self, BenchError> {
        let generated = generate_dag(n, p, seed)?;
        let fw4 = compile::<T>(&generated.dag, options, seed)?;
        let sq = SequentialNet::from_compiled(&fw4);
        let ds = DeepstructNet::from_compiled(&fw4);
        Ok(Self { fw4, sq, ds, lcc_size: generated.lcc_size })
    }

    pub fn schedule(&self, method: Method) -> &dyn Schedule<T> {
        match method {
            Method::FW4 => &self.fw4,
            Method::SQ => &self.sq,
            Method::DS => &self.ds,
        }
    }
}

/// One `(n, p, seed)` point of the grid, timed for each batch size and method.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub n: usize,
    pub p: f64,
    pub seed: u64,
    pub batch_sizes: Vec<usize>,
    /// Timed in this order.
    pub methods: Vec<Method>,
}

fn run_cell_typed<T: Scalar>(
    cell: &CellSpec,
    config: &BenchConfig,
    skip: &dyn Fn(&RecordKey) -> bool,
) -> Result<Vec<BenchRecord>, BenchError> {
    let nets = CellNets::<T>::build(cell.n, cell.p, cell.seed, config.compile_options())?;
    let height = nets.fw4.height();
    let mut records = Vec::new();
    for &batch_size in &cell.batch_sizes {
        let input = Matrix::ones(batch_size, nets.fw4.input_nodes().len());
        for &method in &cell.methods {
            let key = RecordKey { method, n: cell.n, p_bits: cell.p.to_bits(), seed: cell.seed, batch_size };
            if skip(&key) {
                continue;
            }
            let elapsed = time_schedule(nets.schedule(method), &input, config.warmup_passes, config.num_batches)?;
            records.push(BenchRecord {
                method,
                n: cell.n,
                p: cell.p,
                seed: cell.seed,
                batch_size,
                num_batches: config.num_batches,
                // a zero reading only happens below timer resolution
                elapsed_seconds: elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
                height,
                lcc_size: nets.lcc_size,
            });
        }
    }
    Ok(records)
}

/// Time one cell. Records whose key satisfies `skip` are not measured.
pub fn run_cell(
    cell: &CellSpec,
    config: &BenchConfig,
    skip: &dyn Fn(&RecordKey) -> bool,
) -> Result<Vec<BenchRecord>, BenchError> {
    match config.precision {
        Precision::F32 => run_cell_typed::<f32>(cell, config, skip),
        Precision::F64 => run_cell_typed::<f64>(cell, config, skip),
    }
}

/// Run every cell of the grid strictly one after another, streaming new
/// records into `sink`. Keys the sink already holds are skipped, so an
/// interrupted run resumes where it stopped. Cells whose graph cannot be
/// compiled are skipped with a warning.
pub fn run_grid(
    config: &BenchConfig,
    sink: &mut dyn RecordSink,
    mut progress: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>, BenchError> {
    config.validate()?;
    let mut produced = Vec::new();
    for &n in &config.n_values {
        for &p in &config.p_values {
            for seed in config.seeds() {
                let cell =
                    CellSpec { n, p, seed, batch_sizes: config.batch_sizes.clone(), methods: config.methods.clone() };
                let all_done = cell.batch_sizes.iter().all(|&batch_size| {
                    cell.methods
                        .iter()
                        .all(|&method| sink.contains(&RecordKey { method, n, p_bits: p.to_bits(), seed, batch_size }))
                });
                if all_done {
                    continue;
                }
                let records = {
                    let done = &*sink;
                    run_cell(&cell, config, &|k| done.contains(k))
                };
                match records {
                    Ok(records) => {
                        for record in records {
                            sink.push(&record)?;
                            progress(&record);
                            produced.push(record);
                        }
                    }
                    Err(BenchError::Net(e)) => log::warn!("skipping cell n={n} p={p} seed={seed}: {e}"),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(produced)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> BenchConfig {
        BenchConfig {
            n_values: vec![12, 16],
            p_values: vec![0.3, 1.0],
            seeds_per_cell: 2,
            batch_sizes: vec![2, 4],
            num_batches: 2,
            methods: Method::ALL.to_vec(),
            warmup_passes: 1,
            precision: Precision::F32,
            bias: true,
            activation: Activation::Relu,
            base_seed: 0,
        }
    }

    #[test]
    fn grid_produces_full_cross_product() {
        let config = tiny_config();
        let mut sink = MemoryStore::default();
        let records = run_grid(&config, &mut sink, |_| {}).unwrap();
        assert_eq!(records.len(), 48);
        assert_eq!(config.record_count(), 48);
        assert!(records.iter().all(|r| r.elapsed_seconds > 0.0));
    }

    #[test]
    fn grid_resumes_without_duplicates() {
        let config = tiny_config();
        let mut sink = MemoryStore::default();
        let first = run_grid(&config, &mut sink, |_| {}).unwrap();
        // drop half, rerun, and expect only the missing half back
        let kept: Vec<_> = first.iter().step_by(2).cloned().collect();
        let mut partial = MemoryStore::from_records(kept.clone());
        let second = run_grid(&config, &mut partial, |_| {}).unwrap();
        assert_eq!(second.len(), first.len() - kept.len());
        let mut keys: Vec<_> = partial.records().iter().map(BenchRecord::key).collect();
        keys.sort();
        let before = keys.len();
        keys.dedup();
        assert_eq!(before, keys.len());
        assert_eq!(keys.len(), 48);
        assert!(run_grid(&config, &mut partial, |_| {}).unwrap().is_empty());
    }

    #[test]
    fn config_json_short_keys_and_defaults() {
        let c = BenchConfig::from_json(
            r#"{"n":[64],"p":[0.2,1.0],"seeds":2,"batch_sizes":[32],"num_batches":100,"methods":["FW4","SQ"]}"#,
        )
        .unwrap();
        assert_eq!(c.n_values, vec![64]);
        assert_eq!(c.warmup_passes, 5);
        assert_eq!(c.record_count(), 8);
        assert!(c.bias);
    }

    #[test]
    fn config_errors_name_the_key() {
        let err = BenchConfig::from_json(r#"{"n":[64],"p":[0.2],"seeds":2,"batch_sizes":[32],"bogus":1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = BenchConfig::from_json(r#"{"n":[64],"p":[0.2],"seeds":"two","batch_sizes":[32]}"#).unwrap_err();
        assert!(err.to_string().contains("invalid type"), "{err}");
        let err = BenchConfig::from_json(r#"{"n":[64],"p":[1.2],"seeds":1,"batch_sizes":[32]}"#).unwrap_err();
        assert!(matches!(err, BenchError::Config(_)));
        let err = BenchConfig::from_json(r#"{"n":[64],"p":[0.2],"seeds":1,"batch_sizes":[]}"#).unwrap_err();
        assert!(matches!(err, BenchError::Config(_)));
    }

    #[test]
    fn complete_graph_counts_match() {
        let nets = CellNets::<f32>::build(16, 1.0, 3, CompileOptions::default()).unwrap();
        let x = Matrix::ones(4, 1);
        let mut ws = Workspace::new();
        nets.fw4.forward(&x, &mut ws).unwrap();
        let fw4 = ws.products();
        nets.sq.forward(&x, &mut ws).unwrap();
        assert_eq!(fw4, 15);
        assert_eq!(ws.products(), 15);
    }

    #[test]
    fn degenerate_cells_are_skipped() {
        let mut config = tiny_config();
        config.n_values = vec![5];
        config.p_values = vec![0.0];
        let records = run_grid(&config, &mut MemoryStore::default(), |_| {}).unwrap();
        assert!(records.is_empty());
    }
}
