//! Config-driven runs over the FNN/PINN architecture grid.
//!
//! One TOML file describes the circuit model, the data source (real cycling
//! files or the synthetic mission generator), the grid and the training
//! settings. Unknown keys are rejected everywhere. Relative paths resolve
//! against the config file's directory.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    self, ingest, quadratic_nonlinearity, synthesize, ColumnMap, CycleTrace, IngestOptions, MissionProfile,
    SplitSpec, SynthOptions,
};
use crate::ecm::{self, EcmParams, FitReport, SegmentOptions};
use crate::error::{Error, Result};
use crate::features::{build_rows, fit_normalizer, physics_trace, FeatureMode, FeatureRow, Scaling};
use crate::metrics::{self, evaluate, EvalReport};
use crate::nn::{train, Dataset, MlpModel, MlpSpec, Surrogate, TrainConfig, TrainReport};

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_file_pattern() -> String {
    IngestOptions::default().file_pattern
}

fn default_true() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    0.1
}

fn default_temp() -> f64 {
    25.0
}

fn default_cycle() -> u32 {
    1
}

fn default_missions() -> usize {
    1
}

/// One architecture of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub mode: FeatureMode,
    pub hidden_layers: usize,
    pub neurons: usize,
}

impl GridCell {
    pub fn tag(&self) -> String {
        format!("{}-L{}-N{}", self.mode, self.hidden_layers, self.neurons)
    }

    pub fn spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.mode.input_dim(), self.hidden_layers, self.neurons)
    }

    fn sort_key(&self) -> (u8, usize, usize) {
        let block = match self.mode {
            FeatureMode::Fnn => 0,
            FeatureMode::Pinn => 1,
        };
        (block, self.hidden_layers, self.neurons)
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// The eight architectures of the reference results table: L1-N32, L2-N64,
/// L2-N128 and L4-N128 for each mode.
pub fn default_grid() -> Vec<GridCell> {
    let arch = [(1, 32), (2, 64), (2, 128), (4, 128)];
    [FeatureMode::Fnn, FeatureMode::Pinn]
        .iter()
        .flat_map(|&mode| {
            arch.iter().map(move |&(hidden_layers, neurons)| GridCell {
                mode,
                hidden_layers,
                neurons,
            })
        })
        .collect()
}

/// The full {1, 2, 4} × {32, 64, 128} cross for both modes.
pub fn full_grid() -> Vec<GridCell> {
    let mut cells = Vec::new();
    for mode in [FeatureMode::Fnn, FeatureMode::Pinn] {
        for hidden_layers in [1, 2, 4] {
            for neurons in [32, 64, 128] {
                cells.push(GridCell {
                    mode,
                    hidden_layers,
                    neurons,
                });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub scaling: Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Timed passes over the test rows per cell; 0 leaves
    /// `mean_inference_us` empty and keeps results byte-reproducible.
    pub timing_repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of per-cell files, or one file with a cell column.
    pub path: PathBuf,
    #[serde(default = "default_file_pattern")]
    pub file_pattern: String,
    #[serde(default)]
    pub initial_dt: Option<f64>,
    #[serde(default = "one")]
    pub soc_init: f64,
    #[serde(default = "default_true")]
    pub nearest_cycle_fallback: bool,
    #[serde(default = "ColumnMap::evtol")]
    pub columns: ColumnMap,
    #[serde(default)]
    pub split: SplitSpec,
}

impl DataConfig {
    fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            file_pattern: self.file_pattern.clone(),
            initial_dt: self.initial_dt,
            soc_init: self.soc_init,
            nearest_cycle_fallback: self.nearest_cycle_fallback,
        }
    }
}

/// One generated trace: a cell id, its operating point and how many
/// missions to fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthVariant {
    pub cell: String,
    #[serde(default = "default_cycle")]
    pub cycle: u32,
    #[serde(default = "default_temp")]
    pub temp_c: f64,
    /// Overrides the profile's power reduction.
    #[serde(default)]
    pub power_reduction: Option<f64>,
    /// Overrides the cruise duration.
    #[serde(default)]
    pub cruise_s: Option<f64>,
    #[serde(default = "default_missions")]
    pub n_missions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Ground-truth circuit; defaults to `[ecm]`.
    #[serde(default)]
    pub truth: Option<EcmParams>,
    /// Coefficient of the `k·I·|I|` voltage term (V/A²).
    #[serde(default)]
    pub k: f64,
    #[serde(default)]
    pub noise_std_v: f64,
    #[serde(default = "default_jitter")]
    pub dt_jitter: f64,
    #[serde(default = "one")]
    pub soc0: f64,
    /// Overrides the top-level seed for data generation.
    #[serde(default)]
    pub seed: Option<u64>,
    pub profile: MissionProfile,
    pub train: Vec<SynthVariant>,
    pub test: SynthVariant,
}

/// Parsed experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub ecm: EcmParams,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "default_grid")]
    pub grid: Vec<GridCell>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Parse and validate; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        if let Some(d) = &mut cfg.data {
            if d.path.is_relative() {
                d.path = base_dir.join(&d.path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.ecm.validate().map_err(as_config)?;
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [data] or [synthetic], not both".into())),
            (None, None) => return Err(Error::Config("one of [data] or [synthetic] is required".into())),
            _ => {}
        }
        if let Some(d) = &self.data {
            d.columns.validate()?;
            d.split.validate()?;
        }
        if let Some(s) = &self.synthetic {
            if let Some(t) = &s.truth {
                t.validate().map_err(as_config)?;
            }
            s.profile.validate()?;
            if s.train.is_empty() {
                return Err(Error::Config("synthetic.train needs at least one variant".into()));
            }
            if s.train.iter().any(|v| v.cell == s.test.cell) {
                return Err(Error::Config(format!(
                    "synthetic cell {} appears in both train and test",
                    s.test.cell
                )));
            }
        }
        if self.grid.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        let mut tags: Vec<String> = self.grid.iter().map(GridCell::tag).collect();
        tags.sort();
        if let Some(w) = tags.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("grid lists {} twice", w[0])));
        }
        for cell in &self.grid {
            cell.spec().map_err(as_config)?;
        }
        self.train.validate().map_err(as_config)?;
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Process exit code for an error that stopped a command: 2 for data
/// problems, 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_data_error() {
        2
    } else {
        1
    }
}

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    /// Glob over model tags such as `PINN-L2-N64`.
    pub filter: Option<String>,
}

impl RunOptions {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(pattern) = &self.filter {
            let glob = glob::Pattern::new(pattern).map_err(|e| Error::Config(format!("--filter: {e}")))?;
            cfg.grid.retain(|c| glob.matches(&c.tag()));
            if cfg.grid.is_empty() {
                return Err(Error::Config(format!("--filter {pattern} matches no grid cell")));
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// First eight bytes (little-endian) of SHA-256 over length-prefixed parts.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Initialization seed of one grid cell.
pub fn cell_seed(global_seed: u64, cell: &GridCell) -> u64 {
    derive_seed(&[
        &global_seed.to_le_bytes(),
        cell.mode.as_str().as_bytes(),
        &(cell.hidden_layers as u64).to_le_bytes(),
        &(cell.neurons as u64).to_le_bytes(),
    ])
}

/// Train and test traces of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<CycleTrace>,
    pub test: Vec<CycleTrace>,
    /// Rows dropped during ingestion.
    pub dropped_rows: usize,
    /// `(cell, requested, used)` cycle substitutions.
    pub substitutions: Vec<(String, u32, u32)>,
}

fn synth_variant(
    s: &SyntheticConfig,
    truth: &EcmParams,
    seed: u64,
    index: usize,
    v: &SynthVariant,
) -> Result<CycleTrace> {
    let mut profile = s.profile.clone();
    if let Some(r) = v.power_reduction {
        profile.power_reduction = r;
    }
    if let Some(c) = v.cruise_s {
        profile.cruise.duration_s = c;
    }
    let opts = SynthOptions {
        noise_std_v: s.noise_std_v,
        n_missions: v.n_missions,
        seed: derive_seed(&[b"synthetic", &seed.to_le_bytes(), &(index as u64).to_le_bytes()]),
        temp_c: v.temp_c,
        cycle: v.cycle,
        soc0: s.soc0,
        dt_jitter: s.dt_jitter,
    };
    let trace = synthesize(&profile, truth, quadratic_nonlinearity(s.k), &opts)?;
    Ok(CycleTrace {
        cell: v.cell.clone(),
        cycle: v.cycle,
        samples: trace.samples,
    })
}

/// Generate the synthetic train and test traces.
pub fn synthetic_splits(s: &SyntheticConfig, ecm: &EcmParams, global_seed: u64) -> Result<Splits> {
    let truth = s.truth.as_ref().unwrap_or(ecm);
    let seed = s.seed.unwrap_or(global_seed);
    let train = s
        .train
        .iter()
        .enumerate()
        .map(|(i, v)| synth_variant(s, truth, seed, i, v))
        .collect::<Result<Vec<_>>>()?;
    let test = vec![synth_variant(s, truth, seed, s.train.len(), &s.test)?];
    Ok(Splits {
        train,
        test,
        dropped_rows: 0,
        substitutions: Vec::new(),
    })
}

/// Load or generate the experiment's train and test traces.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    if let Some(s) = &cfg.synthetic {
        return synthetic_splits(s, &cfg.ecm, cfg.seed);
    }
    let d = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no data source".into()))?;
    let report = ingest(
        &d.path,
        &d.columns,
        &d.split,
        &d.ingest_options(),
        Some(cfg.ecm.capacity_ah),
    )?;
    Ok(Splits {
        train: report.train,
        test: report.test,
        dropped_rows: report.dropped_rows,
        substitutions: report
            .substitutions
            .into_iter()
            .map(|s| (s.cell, s.requested, s.used))
            .collect(),
    })
}

/// Feature rows and targets of a set of traces.
struct Prepared {
    rows: Vec<FeatureRow>,
    /// Measured voltage per row.
    voltage: Vec<f64>,
    /// Circuit voltage per row, PINN only.
    v_phy: Option<Vec<f64>>,
}

impl Prepared {
    fn new(mode: FeatureMode, traces: &[CycleTrace], ecm: &EcmParams) -> Result<Self> {
        let mut rows = Vec::new();
        let mut voltage = Vec::new();
        let mut v_phy = (mode == FeatureMode::Pinn).then(Vec::new);
        for t in traces {
            let physics = match mode {
                FeatureMode::Pinn => Some(physics_trace(ecm, &t.samples)?),
                FeatureMode::Fnn => None,
            };
            rows.extend(build_rows(mode, &t.samples, physics.as_ref().map(|p| p.steps.as_slice()))?);
            voltage.extend(t.samples.iter().map(|s| s.voltage_v));
            if let (Some(out), Some(p)) = (v_phy.as_mut(), physics) {
                out.extend(p.steps.iter().map(|s| s.v_phy));
            }
        }
        Ok(Self { rows, voltage, v_phy })
    }

    /// FNN: measured voltage. PINN: residual over the circuit voltage.
    fn targets(&self) -> Vec<f64> {
        match &self.v_phy {
            Some(phy) => self.voltage.iter().zip(phy).map(|(v, p)| v - p).collect(),
            None => self.voltage.clone(),
        }
    }
}

/// Outcome of one grid cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: GridCell,
    pub seed: u64,
    pub report: EvalReport,
    pub train: TrainReport,
}

#[derive(Debug)]
pub struct CellFailure {
    pub cell: GridCell,
    pub error: Error,
}

#[derive(Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    /// Successful cells in results-table order.
    pub results: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub train_rows: usize,
    pub test_rows: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            3
        }
    }
}

struct ModeInputs {
    train: Prepared,
    test: Prepared,
}

fn run_cell(
    cfg: &ExperimentConfig,
    cell: GridCell,
    inputs: &ModeInputs,
    test_traces: &[CycleTrace],
) -> Result<CellResult> {
    let mode = cell.mode;
    let spec = cell.spec()?;
    let seed = cell_seed(cfg.seed, &cell);

    let targets = inputs.train.targets();
    let normalizer = fit_normalizer(&inputs.train.rows, &targets, cfg.features.scaling)?;
    let z_rows = inputs
        .train
        .rows
        .iter()
        .map(|r| normalizer.normalize_row(r))
        .collect::<Result<Vec<_>>>()?;
    let z_targets: Vec<f64> = targets.iter().map(|&t| normalizer.normalize_target(t)).collect();
    let dataset = Dataset::from_rows(&z_rows, &z_targets)?;

    let init = match mode {
        FeatureMode::Fnn => MlpModel::he_uniform(spec, seed),
        FeatureMode::Pinn => MlpModel::residual_init(spec, seed),
    };
    let train_cfg = TrainConfig {
        seed: seed.wrapping_add(cfg.train.seed),
        ..cfg.train.clone()
    };
    let (model, train_report) = train(init, &dataset, &train_cfg)?;
    let ecm = (mode == FeatureMode::Pinn).then(|| cfg.ecm.clone());
    let surrogate = Surrogate::new(mode, model, normalizer, ecm)?;

    let z_test = inputs
        .test
        .rows
        .iter()
        .map(|r| surrogate.normalizer.normalize_row(r))
        .collect::<Result<Vec<_>>>()?;
    let mut scratch = surrogate.model.scratch();
    let mut v_pred = Vec::with_capacity(z_test.len());
    for (i, z) in z_test.iter().enumerate() {
        let phy = inputs.test.v_phy.as_ref().map_or(0.0, |p| p[i]);
        v_pred.push(surrogate.predict_normalized(z, phy, &mut scratch)?);
    }
    let m = evaluate(&v_pred, &inputs.test.voltage)?;
    let mut report = EvalReport::new(&cell.tag(), cell.hidden_layers, cell.neurons, m, surrogate.model.param_count());
    if cfg.eval.timing_repetitions > 0 {
        let t = metrics::time_inference(&surrogate.model, &z_test, cfg.eval.timing_repetitions)?;
        report.mean_inference_us = Some(t.mean_us);
    }

    let dir = &cfg.output_dir;
    let tag = cell.tag();
    surrogate.save(&dir.join(format!("{tag}.weights.json")))?;
    write_trace_csv(
        &dir.join(format!("{tag}.trace.csv")),
        test_traces,
        &v_pred,
        inputs.test.v_phy.as_deref(),
    )?;
    write_loss_csv(&dir.join(format!("{tag}.loss.csv")), &train_report)?;
    Ok(CellResult {
        cell,
        seed,
        report,
        train: train_report,
    })
}

fn write_trace_csv(path: &Path, traces: &[CycleTrace], v_pred: &[f64], v_phy: Option<&[f64]>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    write!(w, "t_s,v_actual,v_pred,error_v")?;
    if v_phy.is_some() {
        write!(w, ",v_phy")?;
    }
    writeln!(w)?;
    let samples = traces.iter().flat_map(|t| &t.samples);
    for (i, (s, p)) in samples.zip(v_pred).enumerate() {
        write!(w, "{},{},{},{}", s.t_s, s.voltage_v, p, p - s.voltage_v)?;
        if let Some(phy) = v_phy {
            write!(w, ",{}", phy[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn write_loss_csv(path: &Path, r: &TrainReport) -> Result<()> {
    let mut text = String::from("epoch,train_loss,holdout_loss\n");
    text.push_str(&format!("0,{},\n", r.initial_loss));
    for (k, loss) in r.loss_history.iter().enumerate() {
        let hold = r.holdout_history.get(k).map(|h| h.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{loss},{hold}\n", k + 1));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Write `contents` to `path` through a temporary file and a rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Train and evaluate every grid cell and write the results table.
///
/// Output directory contents: `results.csv`, and per cell
/// `<tag>.weights.json`, `<tag>.trace.csv`, `<tag>.loss.csv`. Failed cells
/// are listed in `failures.csv` and do not stop the others.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    opts.apply(&mut cfg)?;
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;

    let splits = load_splits(&cfg)?;
    let modes: Vec<FeatureMode> = [FeatureMode::Fnn, FeatureMode::Pinn]
        .into_iter()
        .filter(|m| cfg.grid.iter().any(|c| c.mode == *m))
        .collect();
    let mut inputs = Vec::new();
    for &mode in &modes {
        inputs.push((
            mode,
            ModeInputs {
                train: Prepared::new(mode, &splits.train, &cfg.ecm)?,
                test: Prepared::new(mode, &splits.test, &cfg.ecm)?,
            },
        ));
    }
    let inputs_for = |mode: FeatureMode| &inputs.iter().find(|(m, _)| *m == mode).expect("prepared").1;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = opts.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let outcomes: Vec<(GridCell, Result<CellResult>)> = pool.install(|| {
        cfg.grid
            .par_iter()
            .map(|&cell| (cell, run_cell(&cfg, cell, inputs_for(cell.mode), &splits.test)))
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (cell, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(error) => failures.push(CellFailure { cell, error }),
        }
    }
    results.sort_by_key(|r| r.cell.sort_key());
    failures.sort_by_key(|f| f.cell.sort_key());

    let mut table = EvalReport::csv_header();
    table.push('\n');
    for r in &results {
        table.push_str(&r.report.csv_row());
        table.push('\n');
    }
    write_atomic(&cfg.output_dir.join("results.csv"), &table)?;
    let failures_path = cfg.output_dir.join("failures.csv");
    if failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path)?;
        }
    } else {
        let mut text = String::from("model,error\n");
        for f in &failures {
            text.push_str(&format!("{},\"{}\"\n", f.cell.tag(), f.error.to_string().replace('"', "'")));
        }
        write_atomic(&failures_path, &text)?;
    }

    Ok(RunSummary {
        output_dir: cfg.output_dir.clone(),
        train_rows: splits.train.iter().map(|t| t.samples.len()).sum(),
        test_rows: splits.test.iter().map(|t| t.samples.len()).sum(),
        results,
        failures,
    })
}

/// `[ecm]` table written by [`fit_ecm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedEcmFile {
    pub ecm: EcmParams,
}

/// Identify the circuit parameters from the training traces. Capacity and
/// OCV curve are taken from the config. Writes `fitted_ecm.toml`.
pub fn fit_ecm(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(FitReport, PathBuf)> {
    let mut cfg = cfg.clone();
    opts.apply(&mut cfg)?;
    let splits = load_splits(&cfg)?;
    let mut pulses = Vec::new();
    let mut rests = Vec::new();
    for t in &splits.train {
        let dt: Vec<f64> = t.samples.iter().map(|s| s.dt_s).collect();
        let i: Vec<f64> = t.samples.iter().map(|s| s.current_a).collect();
        let v: Vec<f64> = t.samples.iter().map(|s| s.voltage_v).collect();
        let (p, r) = ecm::segment_trace(&dt, &i, &v, SegmentOptions::default())?;
        pulses.extend(p);
        rests.extend(r);
    }
    let report = ecm::fit_params(&rests, &pulses, cfg.ecm.capacity_ah, cfg.ecm.ocv.clone())?;
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("fitted_ecm.toml");
    let text = toml::to_string(&FittedEcmFile {
        ecm: report.params.clone(),
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text)?;
    Ok((report, path))
}

/// Write the experiment's train and test traces as canonical CSV
/// (`train.csv`, `test.csv`). Returns the two paths.
pub fn synth(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(PathBuf, PathBuf, Splits)> {
    let mut cfg = cfg.clone();
    opts.apply(&mut cfg)?;
    let s = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("synth needs a [synthetic] section".into()))?;
    let splits = synthetic_splits(s, &cfg.ecm, cfg.seed)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let train = cfg.output_dir.join("train.csv");
    let test = cfg.output_dir.join("test.csv");
    data::write_canonical_csv(&train, &splits.train)?;
    data::write_canonical_csv(&test, &splits.test)?;
    Ok((train, test, splits))
}

/// Architecture tag of a loaded model, e.g. `PINN-L2-N64`.
pub fn surrogate_tag(s: &Surrogate) -> String {
    GridCell {
        mode: s.mode,
        hidden_layers: s.model.spec.hidden_layers,
        neurons: s.model.spec.neurons_per_layer,
    }
    .tag()
}

/// Evaluate saved weights on a canonical CSV. Each trace is predicted from
/// a rested start. With `out`, also writes the per-step trace CSV there.
pub fn eval_weights(weights: &Path, data_path: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let surrogate = Surrogate::load(weights)?;
    let traces = data::read_canonical_csv(data_path)?;
    if traces.is_empty() {
        return Err(Error::Dataset(format!("{} holds no samples", data_path.display())));
    }
    let mut v_pred = Vec::new();
    let mut v_phy = Vec::new();
    let mut actual = Vec::new();
    for t in &traces {
        let p = surrogate.predict_trace(&t.samples)?;
        v_pred.extend(p.v_pred);
        if let Some(phy) = p.v_phy {
            v_phy.extend(phy);
        }
        actual.extend(t.samples.iter().map(|s| s.voltage_v));
    }
    let m = evaluate(&v_pred, &actual)?;
    let tag = surrogate_tag(&surrogate);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let phy = (!v_phy.is_empty()).then_some(v_phy.as_slice());
        write_trace_csv(&dir.join(format!("{tag}.eval_trace.csv")), &traces, &v_pred, phy)?;
    }
    Ok(EvalReport::new(
        &tag,
        surrogate.model.spec.hidden_layers,
        surrogate.model.spec.neurons_per_layer,
        m,
        surrogate.model.param_count(),
    ))
}

/// Per-row latency of saved weights on `rows` seeded random input rows.
pub fn bench_weights(weights: &Path, rows: usize, repetitions: usize, seed: u64) -> Result<(String, metrics::Timing)> {
    use rand::{Rng, SeedableRng};
    let surrogate = Surrogate::load(weights)?;
    let dim = surrogate.model.spec.input_dim;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let timing = metrics::time_inference(&surrogate.model, &inputs, repetitions)?;
    Ok((surrogate_tag(&surrogate), timing))
}
