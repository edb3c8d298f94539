//! Grid sweeps over dotted config keys, e.g. `{"filter.tau_low": [0.0, 0.125]}`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};
use varsynth_core::telemetry::NullSink;
use varsynth_core::{parse_config, TrainConfig};

use crate::experiment::run_experiment;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub settings: Map<String, Value>,
    pub training_pass1: Option<f64>,
    pub heldout_pass1: Option<f64>,
    pub training_gain: f64,
    pub admitted_gates: usize,
    pub rejected_gates: usize,
    pub synthesis_calls: usize,
}

pub fn parse_grid(text: &str) -> Result<Vec<(String, Vec<Value>)>> {
    let grid: Map<String, Value> = serde_json::from_str(text).context("grid must be a JSON object")?;
    if grid.is_empty() {
        bail!("grid is empty");
    }
    grid.into_iter()
        .map(|(k, v)| match v {
            Value::Array(xs) if !xs.is_empty() => Ok((k, xs)),
            _ => bail!("grid key {k:?} must map to a nonempty array"),
        })
        .collect()
}

/// Sets `value` at a dotted path such as `schedule.episodes`.
pub fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            bail!("{path}: {} is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one part")
}

/// Every combination of grid values, keys in sorted order.
pub fn expand(base: &TrainConfig, grid: &[(String, Vec<Value>)]) -> Result<Vec<(Map<String, Value>, TrainConfig)>> {
    let mut combos: Vec<Map<String, Value>> = vec![Map::new()];
    for (key, values) in grid {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|settings| {
            let mut value = serde_json::to_value(base)?;
            for (k, v) in &settings {
                set_dotted(&mut value, k, v.clone())?;
            }
            let config = parse_config(&value.to_string()).with_context(|| format!("grid point {settings:?}"))?;
            Ok((settings, config))
        })
        .collect()
}

pub fn run_sweep(base: &TrainConfig, grid: &[(String, Vec<Value>)]) -> Result<Vec<SweepRow>> {
    expand(base, grid)?
        .into_iter()
        .map(|(settings, config)| {
            log::info!("sweep point {}", Value::Object(settings.clone()));
            let s = run_experiment(&config, &mut NullSink)?.summary;
            Ok(SweepRow {
                settings,
                training_pass1: s.trained.training,
                heldout_pass1: s.trained.heldout,
                training_gain: s.training_gain,
                admitted_gates: s.admitted_gates,
                rejected_gates: s.rejected_gates,
                synthesis_calls: s.synthesis_calls,
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let keys: Vec<String> = rows.first().map(|r| r.settings.keys().cloned().collect()).unwrap_or_default();
    let metrics = ["training_pass1", "heldout_pass1", "training_gain", "admitted_gates", "rejected_gates", "synthesis_calls"];
    w.write_record(keys.iter().map(String::as_str).chain(metrics))?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec: Vec<String> = keys.iter().map(|k| r.settings[k].to_string()).collect();
        rec.extend([
            opt(r.training_pass1),
            opt(r.heldout_pass1),
            r.training_gain.to_string(),
            r.admitted_gates.to_string(),
            r.rejected_gates.to_string(),
            r.synthesis_calls.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
