//! Cycling data ingestion and the synthetic mission generator.
//!
//! Raw files are adapted onto one canonical schema through a [`ColumnMap`]:
//! `time_s, dt_s (optional), current_a, voltage_v, temp_c, soc (optional),
//! cycle` plus an optional cell id. Nothing downstream sees source column
//! names or units.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecm::{self, EcmParams, EcmState};
use crate::error::{Error, Result};
use crate::features::Sample;

fn one() -> f64 {
    1.0
}

/// Source column for each sample field, with unit conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub time: String,
    #[serde(default = "one")]
    pub time_scale: f64,
    /// Step-time column; derived from timestamps when absent.
    #[serde(default)]
    pub dt: Option<String>,
    #[serde(default = "one")]
    pub dt_scale: f64,
    pub current: String,
    /// Multiplier to amperes, e.g. `0.001` for mA.
    #[serde(default = "one")]
    pub current_scale: f64,
    /// Set when the source logs discharge as negative current.
    #[serde(default)]
    pub invert_current: bool,
    pub voltage: String,
    #[serde(default = "one")]
    pub voltage_scale: f64,
    pub temp: String,
    /// SOC column; coulomb counting is used when absent.
    #[serde(default)]
    pub soc: Option<String>,
    /// Multiplier to a fraction, e.g. `0.01` for percent.
    #[serde(default = "one")]
    pub soc_scale: f64,
    pub cycle: String,
    /// Cell-id column, for files holding several cells.
    #[serde(default)]
    pub cell: Option<String>,
}

impl ColumnMap {
    /// The schema written by [`write_canonical_csv`].
    pub fn canonical() -> Self {
        Self {
            time: "time_s".into(),
            time_scale: 1.0,
            dt: Some("dt_s".into()),
            dt_scale: 1.0,
            current: "current_a".into(),
            current_scale: 1.0,
            invert_current: false,
            voltage: "voltage_v".into(),
            voltage_scale: 1.0,
            temp: "temp_c".into(),
            soc: Some("soc".into()),
            soc_scale: 1.0,
            cycle: "cycle".into(),
            cell: Some("cell".into()),
        }
    }

    /// Per-cell files of the public eVTOL cycling dataset (`VAHxx.csv`),
    /// which log discharge as negative `I_mA`.
    pub fn evtol() -> Self {
        Self {
            time: "time_s".into(),
            time_scale: 1.0,
            dt: None,
            dt_scale: 1.0,
            current: "I_mA".into(),
            current_scale: 1e-3,
            invert_current: true,
            voltage: "Ecell_V".into(),
            voltage_scale: 1.0,
            temp: "Temperature__C".into(),
            soc: None,
            soc_scale: 1.0,
            cycle: "cycleNumber".into(),
            cell: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let names = [
            Some(&self.time),
            self.dt.as_ref(),
            Some(&self.current),
            Some(&self.voltage),
            Some(&self.temp),
            self.soc.as_ref(),
            Some(&self.cycle),
            self.cell.as_ref(),
        ];
        for name in names.into_iter().flatten() {
            if name.is_empty() {
                return Err(Error::Config("data.columns: empty column name".into()));
            }
            if !seen.insert(name) {
                return Err(Error::Config(format!(
                    "data.columns: source column `{name}` is mapped to more than one field"
                )));
            }
        }
        for (key, v) in [
            ("time_scale", self.time_scale),
            ("dt_scale", self.dt_scale),
            ("current_scale", self.current_scale),
            ("voltage_scale", self.voltage_scale),
            ("soc_scale", self.soc_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("data.columns.{key} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Cycles to take from one cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellCycles {
    pub cell: String,
    pub cycles: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<CellCycles>,
    pub test: Vec<CellCycles>,
}

impl Default for SplitSpec {
    /// Four training cells at cycles 1, 50 and 1000; cell VAH11 at cycle 600
    /// held out for testing.
    fn default() -> Self {
        let train = ["VAH05", "VAH10", "VAH12", "VAH26"]
            .iter()
            .map(|c| CellCycles {
                cell: (*c).into(),
                cycles: vec![1, 50, 1000],
            })
            .collect();
        Self {
            train,
            test: vec![CellCycles {
                cell: "VAH11".into(),
                cycles: vec![600],
            }],
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Config("split needs at least one train and one test cell".into()));
        }
        let train: BTreeSet<&str> = self.train.iter().map(|c| c.cell.as_str()).collect();
        if let Some(shared) = self.test.iter().find(|c| train.contains(c.cell.as_str())) {
            return Err(Error::Config(format!(
                "cell {} appears in both train and test splits",
                shared.cell
            )));
        }
        if let Some(empty) = self.train.iter().chain(&self.test).find(|c| c.cycles.is_empty()) {
            return Err(Error::Config(format!("cell {} selects no cycles", empty.cell)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// File name per cell inside a data directory; `{cell}` is substituted.
    pub file_pattern: String,
    /// Δt of each cycle's first row; the cycle's median Δt when unset.
    pub initial_dt: Option<f64>,
    /// SOC at the start of each cycle when coulomb counting.
    pub soc_init: f64,
    /// Substitute the nearest available cycle when a requested one is missing.
    pub nearest_cycle_fallback: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            file_pattern: "{cell}.csv".into(),
            initial_dt: None,
            soc_init: 1.0,
            nearest_cycle_fallback: true,
        }
    }
}

/// Time-ordered samples of one cycle of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTrace {
    pub cell: String,
    pub cycle: u32,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleSubstitution {
    pub cell: String,
    pub requested: u32,
    pub used: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub train: Vec<CycleTrace>,
    pub test: Vec<CycleTrace>,
    /// Rows dropped for non-finite values or repeated timestamps.
    pub dropped_rows: usize,
    pub substitutions: Vec<CycleSubstitution>,
}

#[derive(Debug, Clone)]
struct RawRow {
    line: usize,
    time: f64,
    dt: Option<f64>,
    current: f64,
    voltage: f64,
    temp: f64,
    soc: Option<f64>,
    cycle: u32,
}

/// Rows of one file grouped by cell id, then cycle number.
type CellTable = BTreeMap<String, BTreeMap<u32, Vec<RawRow>>>;

struct ParsedFile {
    path: PathBuf,
    cells: CellTable,
    dropped: usize,
}

fn parse_file(path: &Path, map: &ColumnMap, default_cell: Option<&str>) -> Result<ParsedFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
            })
    };
    let time_i = find(&map.time)?;
    let dt_i = map.dt.as_deref().map(find).transpose()?;
    let current_i = find(&map.current)?;
    let voltage_i = find(&map.voltage)?;
    let temp_i = find(&map.temp)?;
    let soc_i = map.soc.as_deref().map(find).transpose()?;
    let cycle_i = find(&map.cycle)?;
    let cell_i = map.cell.as_deref().map(find).transpose()?;

    let mut cells = CellTable::new();
    let mut dropped = 0;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = k + 2;
        let num = |i: usize, name: &str| -> Result<f64> {
            let text = record.get(i).unwrap_or("");
            if text.is_empty() {
                return Ok(f64::NAN);
            }
            text.parse::<f64>().map_err(|_| Error::Data {
                path: path.to_path_buf(),
                row: line,
                message: format!("cannot parse `{text}` in column `{name}`"),
            })
        };
        let time = num(time_i, &map.time)? * map.time_scale;
        let dt = dt_i.map(|i| num(i, "dt")).transpose()?.map(|v| v * map.dt_scale);
        let sign = if map.invert_current { -1.0 } else { 1.0 };
        let current = sign * num(current_i, &map.current)? * map.current_scale;
        let voltage = num(voltage_i, &map.voltage)? * map.voltage_scale;
        let temp = num(temp_i, &map.temp)?;
        let soc = soc_i.map(|i| num(i, "soc")).transpose()?.map(|v| v * map.soc_scale);
        let cycle = num(cycle_i, &map.cycle)?;

        let finite = [time, current, voltage, temp, cycle]
            .iter()
            .chain(dt.iter())
            .chain(soc.iter())
            .all(|v| v.is_finite());
        if !finite {
            dropped += 1;
            continue;
        }
        if cycle < 1.0 || cycle.fract() != 0.0 || cycle > f64::from(u32::MAX) {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: line,
                message: format!("cycle number {cycle} is not a positive integer"),
            });
        }
        let cell = match (cell_i, default_cell) {
            (Some(i), _) => record.get(i).unwrap_or("").to_string(),
            (None, Some(c)) => c.to_string(),
            (None, None) => String::new(),
        };
        cells
            .entry(cell)
            .or_default()
            .entry(cycle as u32)
            .or_default()
            .push(RawRow {
                line,
                time,
                dt,
                current,
                voltage,
                temp,
                soc,
                cycle: cycle as u32,
            });
    }
    Ok(ParsedFile {
        path: path.to_path_buf(),
        cells,
        dropped,
    })
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Turn one cycle's rows into samples. Returns the samples and the number of
/// rows dropped as repeated timestamps.
fn build_cycle(
    path: &Path,
    rows: &[RawRow],
    opts: &IngestOptions,
    capacity_ah: Option<f64>,
) -> Result<(Vec<Sample>, usize)> {
    let mut kept: Vec<&RawRow> = Vec::with_capacity(rows.len());
    let mut dropped = 0;
    for row in rows {
        if let Some(prev) = kept.last() {
            if row.time < prev.time {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    row: row.line,
                    message: format!(
                        "time goes backwards within cycle {} ({} s after {} s)",
                        row.cycle, row.time, prev.time
                    ),
                });
            }
            if row.time == prev.time && row.dt.is_none() {
                dropped += 1;
                continue;
            }
        }
        kept.push(row);
    }

    let mut diffs: Vec<f64> = kept.windows(2).map(|w| w[1].time - w[0].time).collect();
    let first_dt = match opts.initial_dt {
        Some(dt) => Some(dt),
        None => median(&mut diffs),
    };

    let mut samples = Vec::with_capacity(kept.len());
    let mut soc = opts.soc_init;
    for (k, row) in kept.iter().enumerate() {
        let dt = match row.dt {
            Some(dt) => dt,
            None if k == 0 => first_dt.ok_or_else(|| Error::Data {
                path: path.to_path_buf(),
                row: row.line,
                message: format!("cycle {} has a single row, Δt cannot be derived", row.cycle),
            })?,
            None => row.time - kept[k - 1].time,
        };
        if !(dt > 0.0) {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: row.line,
                message: format!("non-positive step time {dt}"),
            });
        }
        soc = match row.soc {
            Some(s) => s,
            None => {
                let cap = capacity_ah.ok_or_else(|| {
                    Error::Config("no SOC column mapped and no capacity available for coulomb counting".into())
                })?;
                ecm::update_soc(soc, row.current, dt, cap).0
            }
        };
        samples.push(Sample {
            t_s: row.time,
            dt_s: dt,
            current_a: row.current,
            voltage_v: row.voltage,
            temp_c: row.temp,
            soc,
            cycle: row.cycle,
        });
    }
    Ok((samples, dropped))
}

fn select(
    parsed: &ParsedFile,
    wanted: &CellCycles,
    opts: &IngestOptions,
    capacity_ah: Option<f64>,
    subs: &mut Vec<CycleSubstitution>,
    dropped: &mut usize,
) -> Result<Vec<CycleTrace>> {
    let cycles = parsed.cells.get(&wanted.cell).or_else(|| {
        // a per-cell file without a cell column
        parsed.cells.get("")
    });
    let Some(cycles) = cycles else {
        return Err(Error::Dataset(format!(
            "cell {} not found in {}",
            wanted.cell,
            parsed.path.display()
        )));
    };
    let mut out = Vec::new();
    for &requested in &wanted.cycles {
        let used = if cycles.contains_key(&requested) {
            requested
        } else if opts.nearest_cycle_fallback {
            let nearest = cycles
                .keys()
                .copied()
                .min_by_key(|c| (c.abs_diff(requested), *c))
                .ok_or_else(|| Error::Dataset(format!("cell {} has no cycles", wanted.cell)))?;
            subs.push(CycleSubstitution {
                cell: wanted.cell.clone(),
                requested,
                used: nearest,
            });
            nearest
        } else {
            return Err(Error::Dataset(format!(
                "cell {} has no cycle {requested} in {}",
                wanted.cell,
                parsed.path.display()
            )));
        };
        let (samples, d) = build_cycle(&parsed.path, &cycles[&used], opts, capacity_ah)?;
        *dropped += d;
        if samples.is_empty() {
            return Err(Error::Dataset(format!("cell {} cycle {used} has no usable rows", wanted.cell)));
        }
        out.push(CycleTrace {
            cell: wanted.cell.clone(),
            cycle: used,
            samples,
        });
    }
    Ok(out)
}

/// Load the train and test cycles named by `split`.
///
/// `path` is either a directory holding one file per cell (named by
/// `opts.file_pattern`) or a single file with a mapped cell column.
/// `capacity_ah` is only needed when no SOC column is mapped.
pub fn ingest(
    path: &Path,
    map: &ColumnMap,
    split: &SplitSpec,
    opts: &IngestOptions,
    capacity_ah: Option<f64>,
) -> Result<IngestReport> {
    map.validate()?;
    split.validate()?;

    let cells: Vec<&CellCycles> = split.train.iter().chain(&split.test).collect();
    let parsed: Vec<ParsedFile> = if path.is_dir() {
        let mut names: Vec<&str> = cells.iter().map(|c| c.cell.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names
            .par_iter()
            .map(|cell| {
                let file = path.join(opts.file_pattern.replace("{cell}", cell));
                if !file.is_file() {
                    return Err(Error::Dataset(format!("missing data file {}", file.display())));
                }
                let mut p = parse_file(&file, map, Some(cell))?;
                // keep only this cell when the file also carries other ids
                if map.cell.is_some() {
                    p.cells.retain(|k, _| k == cell);
                }
                Ok(p)
            })
            .collect::<Result<_>>()?
    } else if path.is_file() {
        if map.cell.is_none() {
            return Err(Error::Config(
                "a single data file needs data.columns.cell to tell cells apart".into(),
            ));
        }
        vec![parse_file(path, map, None)?]
    } else {
        return Err(Error::Dataset(format!("data path {} does not exist", path.display())));
    };

    let file_for = |cell: &str| -> &ParsedFile {
        parsed
            .iter()
            .find(|p| p.cells.contains_key(cell))
            .unwrap_or(&parsed[0])
    };
    let mut dropped: usize = parsed.iter().map(|p| p.dropped).sum();
    let mut substitutions = Vec::new();
    let mut train = Vec::new();
    for c in &split.train {
        train.extend(select(file_for(&c.cell), c, opts, capacity_ah, &mut substitutions, &mut dropped)?);
    }
    let mut test = Vec::new();
    for c in &split.test {
        test.extend(select(file_for(&c.cell), c, opts, capacity_ah, &mut substitutions, &mut dropped)?);
    }
    Ok(IngestReport {
        train,
        test,
        dropped_rows: dropped,
        substitutions,
    })
}

pub const CANONICAL_HEADER: [&str; 8] = [
    "cell", "time_s", "dt_s", "current_a", "voltage_v", "temp_c", "soc", "cycle",
];

/// Write traces in the canonical schema. Values use shortest round-trip
/// formatting, so output is bit-exact for identical inputs.
pub fn write_canonical_csv(path: &Path, traces: &[CycleTrace]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", CANONICAL_HEADER.join(","))?;
    for t in traces {
        for s in &t.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                t.cell, s.t_s, s.dt_s, s.current_a, s.voltage_v, s.temp_c, s.soc, s.cycle
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read back a file written by [`write_canonical_csv`], every trace in file
/// order.
pub fn read_canonical_csv(path: &Path) -> Result<Vec<CycleTrace>> {
    let parsed = parse_file(path, &ColumnMap::canonical(), None)?;
    if parsed.dropped > 0 {
        return Err(Error::Data {
            path: path.to_path_buf(),
            row: 0,
            message: format!("{} rows with missing values", parsed.dropped),
        });
    }
    let opts = IngestOptions::default();
    let mut traces = Vec::new();
    for (cell, cycles) in &parsed.cells {
        for (&cycle, rows) in cycles {
            let (samples, _) = build_cycle(path, rows, &opts, None)?;
            traces.push(CycleTrace {
                cell: cell.clone(),
                cycle,
                samples,
            });
        }
    }
    // restore file order
    traces.sort_by_key(|t| {
        parsed.cells[&t.cell][&t.cycle]
            .first()
            .map(|r| r.line)
            .unwrap_or(0)
    });
    Ok(traces)
}

/// Constant-current phase of a mission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    /// Discharge current (A) before any power reduction.
    pub current_a: f64,
    pub duration_s: f64,
}

/// One eVTOL-style mission: high-current takeoff, cruise, high-current
/// landing, rest, and an optional charge-balancing recharge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionProfile {
    #[serde(default = "one")]
    pub dt_s: f64,
    pub takeoff: Phase,
    pub cruise: Phase,
    pub landing: Phase,
    pub rest_s: f64,
    /// Fractional reduction applied to all discharge currents.
    #[serde(default)]
    pub power_reduction: f64,
    /// Magnitude of a constant charge current that returns the mission's
    /// discharged charge, followed by another rest.
    #[serde(default)]
    pub recharge_current_a: Option<f64>,
}

impl MissionProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("mission {name} must be positive, got {v}")))
            }
        };
        positive("dt_s", self.dt_s)?;
        positive("takeoff duration", self.takeoff.duration_s)?;
        positive("cruise duration", self.cruise.duration_s)?;
        positive("landing duration", self.landing.duration_s)?;
        positive("rest", self.rest_s)?;
        if let Some(r) = self.recharge_current_a {
            positive("recharge current", r)?;
        }
        for (name, p) in [("takeoff", self.takeoff), ("cruise", self.cruise), ("landing", self.landing)] {
            if !p.current_a.is_finite() {
                return Err(Error::Config(format!("mission {name} current is not finite")));
            }
        }
        if !(0.0..1.0).contains(&self.power_reduction) {
            return Err(Error::Config(format!(
                "power_reduction must lie in [0, 1), got {}",
                self.power_reduction
            )));
        }
        Ok(())
    }

    /// `(dt_s, current_a)` steps of one mission. Each step's Δt is scaled by
    /// `1 + jitter·u`, `u ~ U(-1, 1)`.
    pub fn current_profile<R: Rng>(&self, rng: &mut R, jitter: f64) -> Vec<(f64, f64)> {
        let scale = 1.0 - self.power_reduction;
        let mut steps = Vec::new();
        let mut push_phase = |steps: &mut Vec<(f64, f64)>, current: f64, duration: f64| {
            let n = ((duration / self.dt_s).round() as usize).max(1);
            for _ in 0..n {
                let u: f64 = if jitter > 0.0 { rng.random_range(-1.0..=1.0) } else { 0.0 };
                steps.push((self.dt_s * (1.0 + jitter * u), current));
            }
        };
        push_phase(&mut steps, self.takeoff.current_a * scale, self.takeoff.duration_s);
        push_phase(&mut steps, self.cruise.current_a * scale, self.cruise.duration_s);
        push_phase(&mut steps, self.landing.current_a * scale, self.landing.duration_s);
        push_phase(&mut steps, 0.0, self.rest_s);
        if let Some(charge) = self.recharge_current_a {
            let discharged: f64 = steps.iter().map(|(dt, i)| dt * i).sum();
            if discharged > 0.0 {
                push_phase(&mut steps, -charge, discharged / charge);
                push_phase(&mut steps, 0.0, self.rest_s);
            }
        }
        steps
    }
}

/// `ν(I) = k·I·|I|`, an odd correction growing with C-rate.
pub fn quadratic_nonlinearity(k: f64) -> impl Fn(f64) -> f64 + Copy {
    move |i| k * i * i.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub noise_std_v: f64,
    pub n_missions: usize,
    pub seed: u64,
    pub temp_c: f64,
    pub cycle: u32,
    pub soc0: f64,
    /// Relative Δt jitter; keeps Δt a varying feature like in logged data.
    pub dt_jitter: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            noise_std_v: 0.0,
            n_missions: 1,
            seed: 0,
            temp_c: 25.0,
            cycle: 1,
            soc0: 1.0,
            dt_jitter: 0.0,
        }
    }
}

/// Generated samples with the ground-truth pieces that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub samples: Vec<Sample>,
    /// Exact second-order model voltage of the truth parameters.
    pub v_phy: Vec<f64>,
    /// The nonlinearity term added on top of `v_phy`.
    pub nonlinear_v: Vec<f64>,
    pub soc_clamps: usize,
}

/// Voltage = `simulate(truth)` + `nonlinearity(I)` + Gaussian noise, over
/// `n_missions` repetitions of `profile`, starting rested at `soc0`.
pub fn synthesize(
    profile: &MissionProfile,
    truth: &EcmParams,
    nonlinearity: impl Fn(f64) -> f64,
    opts: &SynthOptions,
) -> Result<SynthTrace> {
    profile.validate()?;
    truth.validate()?;
    if opts.n_missions == 0 {
        return Err(Error::Config("n_missions must be at least 1".into()));
    }
    if !(opts.noise_std_v >= 0.0 && opts.noise_std_v.is_finite()) {
        return Err(Error::Config(format!("noise_std_v must be non-negative, got {}", opts.noise_std_v)));
    }
    if !(0.0..1.0).contains(&opts.dt_jitter) {
        return Err(Error::Config(format!("dt_jitter must lie in [0, 1), got {}", opts.dt_jitter)));
    }
    if opts.cycle < 1 {
        return Err(Error::Config("synthetic cycle number must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut steps = Vec::new();
    for _ in 0..opts.n_missions {
        steps.extend(profile.current_profile(&mut rng, opts.dt_jitter));
    }
    let traj = ecm::simulate(truth, EcmState::rested(opts.soc0), &steps)?;
    let noise = if opts.noise_std_v > 0.0 {
        Some(Normal::new(0.0, opts.noise_std_v).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };

    let mut t = 0.0;
    let mut samples = Vec::with_capacity(steps.len());
    let mut nonlinear_v = Vec::with_capacity(steps.len());
    for (&(dt, current), step) in steps.iter().zip(&traj.steps) {
        t += dt;
        let nl = nonlinearity(current);
        let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
        nonlinear_v.push(nl);
        samples.push(Sample {
            t_s: t,
            dt_s: dt,
            current_a: current,
            voltage_v: step.v_phy + nl + eps,
            temp_c: opts.temp_c,
            soc: step.state.soc,
            cycle: opts.cycle,
        });
    }
    Ok(SynthTrace {
        samples,
        v_phy: traj.v_phy(),
        nonlinear_v,
        soc_clamps: traj.soc_clamps,
    })
}

#[cfg(test)]
mod tests {
    use std::fs;

    use super::*;
    use crate::ecm::{OcvCurve, RcBranch};

    fn truth() -> EcmParams {
        EcmParams::new(
            0.02,
            [RcBranch { r: 0.01, tau: 10.0 }, RcBranch { r: 0.02, tau: 100.0 }],
            3.0,
            OcvCurve::new(vec![(0.0, 3.0), (0.5, 3.7), (1.0, 4.2)]).unwrap(),
        )
        .unwrap()
    }

    fn mission() -> MissionProfile {
        MissionProfile {
            dt_s: 1.0,
            takeoff: Phase { current_a: 15.0, duration_s: 30.0 },
            cruise: Phase { current_a: 5.0, duration_s: 100.0 },
            landing: Phase { current_a: 15.0, duration_s: 30.0 },
            rest_s: 60.0,
            power_reduction: 0.0,
            recharge_current_a: Some(5.0),
        }
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn small_split() -> SplitSpec {
        SplitSpec {
            train: vec![CellCycles { cell: "A".into(), cycles: vec![1] }],
            test: vec![CellCycles { cell: "B".into(), cycles: vec![1] }],
        }
    }

    const HEADER: &str = "cell,time_s,current_a,voltage_v,temp_c,soc,cycle\n";

    fn map_without_dt() -> ColumnMap {
        ColumnMap { dt: None, ..ColumnMap::canonical() }
    }

    #[test]
    fn default_split_is_the_reference_partition() {
        let s = SplitSpec::default();
        let cells: Vec<&str> = s.train.iter().map(|c| c.cell.as_str()).collect();
        assert_eq!(cells, ["VAH05", "VAH10", "VAH12", "VAH26"]);
        assert!(s.train.iter().all(|c| c.cycles == [1, 50, 1000]));
        assert_eq!(s.test, vec![CellCycles { cell: "VAH11".into(), cycles: vec![600] }]);
        s.validate().unwrap();
    }

    #[test]
    fn overlapping_split_rejected() {
        let mut s = small_split();
        s.test[0].cell = "A".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn duplicate_column_mapping_rejected() {
        let m = ColumnMap { temp: "voltage_v".into(), ..ColumnMap::canonical() };
        assert!(m.validate().is_err());
        ColumnMap::evtol().validate().unwrap();
    }

    #[test]
    fn dt_derived_from_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            &format!("{HEADER}A,0.0,1,3.9,25,0.9,1\nA,1.0,1,3.9,25,0.9,1\nB,0,1,3.9,25,0.9,1\nB,2,1,3.9,25,0.9,1\n"),
        );
        let opts = IngestOptions { initial_dt: Some(0.5), ..IngestOptions::default() };
        let r = ingest(&p, &map_without_dt(), &small_split(), &opts, None).unwrap();
        let dts: Vec<f64> = r.train[0].samples.iter().map(|s| s.dt_s).collect();
        assert_eq!(dts, vec![0.5, 1.0]);

        let r = ingest(&p, &map_without_dt(), &small_split(), &IngestOptions::default(), None).unwrap();
        assert_eq!(r.test[0].samples[0].dt_s, 2.0);
    }

    #[test]
    fn nan_rows_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            &format!(
                "{HEADER}A,0,1,3.9,25,0.9,1\nA,1,1,NaN,25,0.9,1\nA,2,1,3.8,25,0.9,1\nA,3,1,,25,0.9,1\nB,0,1,3.9,25,0.9,1\nB,1,1,3.9,25,0.9,1\n"
            ),
        );
        let r = ingest(&p, &map_without_dt(), &small_split(), &IngestOptions::default(), None).unwrap();
        assert_eq!(r.train[0].samples.len(), 2);
        assert_eq!(r.dropped_rows, 2);
        assert_eq!(r.train[0].samples[1].t_s, 2.0);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.csv", "cell,time_s,current_a,voltage_v,soc,cycle\nA,0,1,3.9,0.9,1\n");
        match ingest(&p, &map_without_dt(), &small_split(), &IngestOptions::default(), None) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "temp_c"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn backwards_time_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            &format!("{HEADER}A,0,1,3.9,25,0.9,1\nA,5,1,3.9,25,0.9,1\nA,4,1,3.9,25,0.9,1\nB,0,1,3.9,25,0.9,1\n"),
        );
        match ingest(&p, &map_without_dt(), &small_split(), &IngestOptions::default(), None) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn directory_of_cell_files_with_unit_conversion_and_coulomb_counting() {
        let dir = tempfile::tempdir().unwrap();
        let header = "time_s,Ecell_V,I_mA,Temperature__C,cycleNumber\n";
        write(dir.path(), "A.csv", &format!("{header}0,4.1,-3000,25,1\n1,4.0,-3000,25,1\n2,4.0,-3000,25,1\n10,4.1,0,25,2\n11,4.1,0,25,2\n"));
        write(dir.path(), "B.csv", &format!("{header}0,4.1,-1500,25,5\n2,4.0,-1500,25,5\n"));
        let split = SplitSpec {
            train: vec![CellCycles { cell: "A".into(), cycles: vec![1] }],
            test: vec![CellCycles { cell: "B".into(), cycles: vec![4] }],
        };
        let r = ingest(dir.path(), &ColumnMap::evtol(), &split, &IngestOptions::default(), Some(3.0)).unwrap();
        let a = &r.train[0].samples;
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].current_a, 3.0);
        assert!((a[2].soc - (1.0 - 3.0 * 3.0 / (3600.0 * 3.0))).abs() < 1e-15);
        assert_eq!(r.substitutions, vec![CycleSubstitution { cell: "B".into(), requested: 4, used: 5 }]);
        assert_eq!(r.test[0].cycle, 5);

        let strict = IngestOptions { nearest_cycle_fallback: false, ..IngestOptions::default() };
        assert!(ingest(dir.path(), &ColumnMap::evtol(), &split, &strict, Some(3.0)).is_err());
        assert!(ingest(dir.path(), &ColumnMap::evtol(), &split, &IngestOptions::default(), None).is_err());
    }

    #[test]
    fn degenerate_generator_equals_simulation() {
        let opts = SynthOptions { n_missions: 2, seed: 3, dt_jitter: 0.2, ..SynthOptions::default() };
        let trace = synthesize(&mission(), &truth(), quadratic_nonlinearity(0.0), &opts).unwrap();
        let profile: Vec<(f64, f64)> = trace.samples.iter().map(|s| (s.dt_s, s.current_a)).collect();
        let sim = ecm::simulate(&truth(), EcmState::rested(1.0), &profile).unwrap();
        for (s, step) in trace.samples.iter().zip(&sim.steps) {
            assert_eq!(s.voltage_v, step.v_phy);
            assert_eq!(s.soc, step.state.soc);
        }
    }

    #[test]
    fn nonlinearity_adds_on_takeoff() {
        let nu = quadratic_nonlinearity(0.0002);
        assert!((nu(15.0) - 0.045).abs() < 1e-15);
        assert!((nu(-15.0) + 0.045).abs() < 1e-15);
        let opts = SynthOptions::default();
        let trace = synthesize(&mission(), &truth(), nu, &opts).unwrap();
        for k in 0..30 {
            assert_eq!(trace.samples[k].current_a, 15.0);
            assert!((trace.samples[k].voltage_v - trace.v_phy[k] - 0.045).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_is_seeded() {
        let opts = SynthOptions { noise_std_v: 0.005, n_missions: 2, seed: 11, dt_jitter: 0.1, ..SynthOptions::default() };
        let a = synthesize(&mission(), &truth(), quadratic_nonlinearity(2e-4), &opts).unwrap();
        let b = synthesize(&mission(), &truth(), quadratic_nonlinearity(2e-4), &opts).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&mission(), &truth(), quadratic_nonlinearity(2e-4), &SynthOptions { seed: 12, ..opts }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn recharge_balances_the_mission() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let steps = mission().current_profile(&mut rng, 0.0);
        let net: f64 = steps.iter().map(|(dt, i)| dt * i).sum();
        assert!(net.abs() < 1e-9, "net charge {net}");
        let reduced = MissionProfile { power_reduction: 0.2, ..mission() };
        let steps = reduced.current_profile(&mut rng, 0.0);
        assert_eq!(steps[0].1, 12.0);
        assert!(MissionProfile { power_reduction: 1.0, ..mission() }.validate().is_err());
    }

    #[test]
    fn canonical_csv_round_trip_is_exact() {
        let opts = SynthOptions { noise_std_v: 0.005, seed: 2, dt_jitter: 0.1, cycle: 7, ..SynthOptions::default() };
        let trace = synthesize(&mission(), &truth(), quadratic_nonlinearity(2e-4), &opts).unwrap();
        let traces = vec![CycleTrace { cell: "S1".into(), cycle: 7, samples: trace.samples }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_canonical_csv(&p, &traces).unwrap();
        let back = read_canonical_csv(&p).unwrap();
        assert_eq!(back, traces);
        let again = dir.path().join("c2.csv");
        write_canonical_csv(&again, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&again).unwrap());
    }
}
