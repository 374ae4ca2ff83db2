//! Dataset ingestion and preprocessing: long-format CSV, time binning,
//! missingness-based feature filtering and standardization.
//!
//! Long format is one row per observation with header
//! `sample_id,time,variable,value`; missing cells are absent rows.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TimeSeriesDataset;

/// One raw observation before gridding.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRecord {
    pub sample_id: String,
    pub time: f64,
    pub variable: String,
    pub value: f64,
}

/// All floating-point output is written with 17 significant digits so
/// every value round-trips bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn load_long_records(path: &Path) -> Result<Vec<LongRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let expected = ["sample_id", "time", "variable", "value"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Ingestion(format!(
            "expected header sample_id,time,variable,value, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row?;
        let parse = |field: usize, name: &str| -> Result<f64> {
            row[field].trim().parse::<f64>().map_err(|_| {
                Error::Ingestion(format!(
                    "non-numeric {name} '{}' at data row {}",
                    &row[field],
                    line + 1
                ))
            })
        };
        records.push(LongRecord {
            sample_id: row[0].to_string(),
            time: parse(1, "time")?,
            variable: row[2].to_string(),
            value: parse(3, "value")?,
        });
    }
    Ok(records)
}

/// Grids long records onto the union of observed time indices; absent
/// `(sample, variable, time)` combinations become missing-mask cells.
pub fn records_to_dataset(records: &[LongRecord]) -> Result<TimeSeriesDataset> {
    if records.is_empty() {
        return Err(Error::Ingestion("no data rows".into()));
    }
    let mut sample_ids: Vec<String> = records.iter().map(|r| r.sample_id.clone()).collect();
    sample_ids.sort();
    sample_ids.dedup();
    let mut variables: Vec<String> = records.iter().map(|r| r.variable.clone()).collect();
    variables.sort();
    variables.dedup();
    let mut times: Vec<f64> = records.iter().map(|r| r.time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    if times.len() < 2 {
        return Err(Error::Ingestion(
            "need at least two distinct time indices".into(),
        ));
    }

    let sample_idx: BTreeMap<&str, usize> = sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let var_idx: BTreeMap<&str, usize> = variables
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let time_idx: BTreeMap<u64, usize> = times
        .iter()
        .enumerate()
        .map(|(i, t)| (t.to_bits(), i))
        .collect();

    let mut d = TimeSeriesDataset::new(
        sample_ids.len(),
        variables.len(),
        times.len(),
        variables.clone(),
        sample_ids.clone(),
    )?;
    // Everything starts missing; observed rows flip cells back on.
    for n in 0..d.n_samples() {
        for i in 0..d.n_vars() {
            for t in 0..d.n_times() {
                d.set_observed(n, i, t, false);
            }
        }
    }
    let mut seen = BTreeSet::new();
    for r in records {
        let n = sample_idx[r.sample_id.as_str()];
        let i = var_idx[r.variable.as_str()];
        let t = time_idx[&r.time.to_bits()];
        if !seen.insert((n, i, t)) {
            return Err(Error::Ingestion(format!(
                "duplicate observation for sample '{}', variable '{}', time {}",
                r.sample_id, r.variable, r.time
            )));
        }
        d.set_value(n, i, t, r.value);
        d.set_observed(n, i, t, true);
    }
    Ok(d)
}

pub fn load_long_csv(path: &Path) -> Result<TimeSeriesDataset> {
    records_to_dataset(&load_long_records(path)?)
}

/// Serializes observed cells only (missing cells are absent rows).
pub fn save_long_csv(d: &TimeSeriesDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["sample_id", "time", "variable", "value"])?;
    for n in 0..d.n_samples() {
        for t in 0..d.n_times() {
            for i in 0..d.n_vars() {
                if d.is_observed(n, i, t) {
                    writer.write_record([
                        d.sample_ids[n].as_str(),
                        &t.to_string(),
                        d.variable_names[i].as_str(),
                        &fmt_f64(d.value(n, i, t)),
                    ])?;
                }
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Bins irregular timestamps into `[0, w), [w, 2w), ...` with one extra
/// bin owning the closing endpoint, so a span of exactly `8w` yields 9
/// bins. The binned value is the mean of raw observations in the bin;
/// empty bins stay missing.
pub fn bin_time(records: &[LongRecord], bin_width: f64) -> Result<TimeSeriesDataset> {
    if bin_width <= 0.0 {
        return Err(Error::Config("bin width must be positive".into()));
    }
    if records.is_empty() {
        return Err(Error::Ingestion("no data rows".into()));
    }
    let t_min = records.iter().map(|r| r.time).fold(f64::INFINITY, f64::min);
    let t_max = records
        .iter()
        .map(|r| r.time)
        .fold(f64::NEG_INFINITY, f64::max);
    let n_bins = (((t_max - t_min) / bin_width).floor() as usize) + 1;
    if n_bins < 2 {
        return Err(Error::Ingestion(
            "binning produced fewer than two time points".into(),
        ));
    }

    // (sample, variable, bin) -> (sum, count)
    let mut sums: BTreeMap<(String, String, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        let bin = (((r.time - t_min) / bin_width).floor() as usize).min(n_bins - 1);
        let entry = sums
            .entry((r.sample_id.clone(), r.variable.clone(), bin))
            .or_insert((0.0, 0));
        entry.0 += r.value;
        entry.1 += 1;
    }
    let binned: Vec<LongRecord> = sums
        .into_iter()
        .map(|((sample_id, variable, bin), (sum, count))| LongRecord {
            sample_id,
            variable,
            time: bin as f64,
            value: sum / count as f64,
        })
        .collect();

    // Pad the time axis so empty leading/trailing bins are preserved.
    let d = records_to_dataset_with_times(&binned, n_bins)?;
    d.validate()?;
    Ok(d)
}

fn records_to_dataset_with_times(records: &[LongRecord], n_times: usize) -> Result<TimeSeriesDataset> {
    let mut sample_ids: Vec<String> = records.iter().map(|r| r.sample_id.clone()).collect();
    sample_ids.sort();
    sample_ids.dedup();
    let mut variables: Vec<String> = records.iter().map(|r| r.variable.clone()).collect();
    variables.sort();
    variables.dedup();
    let sample_idx: BTreeMap<&str, usize> = sample_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let var_idx: BTreeMap<&str, usize> = variables
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut d = TimeSeriesDataset::new(
        sample_ids.len(),
        variables.len(),
        n_times,
        variables.clone(),
        sample_ids.clone(),
    )?;
    for n in 0..d.n_samples() {
        for i in 0..d.n_vars() {
            for t in 0..d.n_times() {
                d.set_observed(n, i, t, false);
            }
        }
    }
    for r in records {
        let n = sample_idx[r.sample_id.as_str()];
        let i = var_idx[r.variable.as_str()];
        let t = r.time as usize;
        d.set_value(n, i, t, r.value);
        d.set_observed(n, i, t, true);
    }
    Ok(d)
}

/// Per-variable missingness report from feature filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub dropped: Vec<DroppedVariable>,
    pub retained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedVariable {
    pub variable: String,
    pub worst_group: String,
    pub missing_rate: f64,
}

/// Drops variables whose missingness rate strictly exceeds `threshold`
/// in at least one group. With no partition all samples form one group.
pub fn filter_by_missingness(
    d: &TimeSeriesDataset,
    threshold: f64,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<(TimeSeriesDataset, FilterReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config("threshold must lie in [0, 1]".into()));
    }
    let group_of = |sample: usize| -> String {
        groups
            .and_then(|g| g.get(&d.sample_ids[sample]).cloned())
            .unwrap_or_else(|| "all".to_string())
    };
    let group_names: BTreeSet<String> = (0..d.n_samples()).map(group_of).collect();

    let mut dropped = Vec::new();
    let mut keep = Vec::new();
    for i in 0..d.n_vars() {
        let mut worst: Option<(String, f64)> = None;
        for g in &group_names {
            let mut missing = 0usize;
            let mut total = 0usize;
            for n in 0..d.n_samples() {
                if &group_of(n) != g {
                    continue;
                }
                for t in 0..d.n_times() {
                    total += 1;
                    if !d.is_observed(n, i, t) {
                        missing += 1;
                    }
                }
            }
            if total == 0 {
                continue;
            }
            let rate = missing as f64 / total as f64;
            if worst.as_ref().map(|(_, w)| rate > *w).unwrap_or(true) {
                worst = Some((g.clone(), rate));
            }
        }
        let (worst_group, rate) = worst.expect("at least one group");
        if rate > threshold {
            dropped.push(DroppedVariable {
                variable: d.variable_names[i].clone(),
                worst_group,
                missing_rate: rate,
            });
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::Config(
            "missingness filter dropped every variable".into(),
        ));
    }

    let mut out = TimeSeriesDataset::new(
        d.n_samples(),
        keep.len(),
        d.n_times(),
        keep.iter().map(|&i| d.variable_names[i].clone()).collect(),
        d.sample_ids.clone(),
    )?;
    for n in 0..d.n_samples() {
        for (new_i, &old_i) in keep.iter().enumerate() {
            for t in 0..d.n_times() {
                out.set_value(n, new_i, t, d.value(n, old_i, t));
                out.set_observed(n, new_i, t, d.is_observed(n, old_i, t));
            }
        }
    }
    let report = FilterReport {
        dropped,
        retained: out.variable_names.clone(),
    };
    Ok((out, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Standardization {
    None,
    Local,
    Global,
}

/// Mean/sd used for one (variable, group) unit, retained so imputations
/// can be mapped back to the original scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeUnit {
    pub variable: String,
    pub group: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeRecord {
    pub mode: Standardization,
    pub units: Vec<StandardizeUnit>,
}

impl StandardizeRecord {
    pub fn unit_for(&self, variable: &str, group: &str) -> Option<&StandardizeUnit> {
        self.units
            .iter()
            .find(|u| u.variable == variable && (u.group == group || self.mode != Standardization::Local))
    }
}

/// Standardizes observed cells to zero mean and unit sd using
/// observed-only statistics, per group (`Local`) or pooled (`Global`).
pub fn standardize(
    d: &TimeSeriesDataset,
    mode: Standardization,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<(TimeSeriesDataset, StandardizeRecord)> {
    let mut out = d.clone();
    if mode == Standardization::None {
        return Ok((
            out,
            StandardizeRecord {
                mode,
                units: vec![],
            },
        ));
    }
    let group_of = |sample: usize| -> String {
        match mode {
            Standardization::Local => groups
                .and_then(|g| g.get(&d.sample_ids[sample]).cloned())
                .unwrap_or_else(|| "all".to_string()),
            _ => "all".to_string(),
        }
    };
    let group_names: BTreeSet<String> = (0..d.n_samples()).map(group_of).collect();

    let mut units = Vec::new();
    for i in 0..d.n_vars() {
        for g in &group_names {
            let mut vals = Vec::new();
            for n in 0..d.n_samples() {
                if &group_of(n) != g {
                    continue;
                }
                for t in 0..d.n_times() {
                    if d.is_observed(n, i, t) {
                        vals.push(d.value(n, i, t));
                    }
                }
            }
            if vals.len() < 2 {
                return Err(Error::DegenerateVariable(format!(
                    "variable '{}' has fewer than 2 observed values in group '{g}'",
                    d.variable_names[i]
                )));
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (vals.len() - 1) as f64;
            if var <= 0.0 {
                return Err(Error::DegenerateVariable(format!(
                    "variable '{}' is constant in group '{g}'",
                    d.variable_names[i]
                )));
            }
            let sd = var.sqrt();
            for n in 0..d.n_samples() {
                if &group_of(n) != g {
                    continue;
                }
                for t in 0..d.n_times() {
                    if d.is_observed(n, i, t) {
                        out.set_value(n, i, t, (d.value(n, i, t) - mean) / sd);
                    }
                }
            }
            units.push(StandardizeUnit {
                variable: d.variable_names[i].clone(),
                group: g.clone(),
                mean,
                sd,
            });
        }
    }
    Ok((out, StandardizeRecord { mode, units }))
}

/// Loads an optional `sample_id,group` CSV for local standardization and
/// per-group filtering.
pub fn load_groups_csv(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut groups = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        groups.insert(row[0].to_string(), row[1].to_string());
    }
    Ok(groups)
}
