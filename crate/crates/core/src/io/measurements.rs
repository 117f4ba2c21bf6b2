//! Measurement CSV ingestion and emission.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact header of the measurements CSV.
pub const MEASUREMENT_HEADER: [&str; 9] = [
    "run_id",
    "time_s",
    "segment_id",
    "value_kg",
    "observable_kind",
    "temperature_K",
    "partial_pressure_Pa",
    "total_pressure_Pa",
    "cycle_index",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// Deposit mass accumulated since the start of the run.
    MassGain,
    /// Sample mass including the preform; the `t = 0` row is the baseline.
    TotalMass,
}

impl fmt::Display for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObservableKind::MassGain => "mass_gain",
            ObservableKind::TotalMass => "total_mass",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub run_id: String,
    pub time_s: f64,
    /// `-1` for the whole sample.
    pub segment_id: i64,
    pub value_kg: f64,
    pub observable_kind: ObservableKind,
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    #[serde(rename = "partial_pressure_Pa")]
    pub partial_pressure_pa: f64,
    #[serde(rename = "total_pressure_Pa")]
    pub total_pressure_pa: f64,
    pub cycle_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub id: String,
    pub kind: ObservableKind,
    /// Sorted by `(time_s, segment_id)`.
    pub records: Vec<MeasurementRecord>,
    /// Noise-free values aligned with `records`, when known.
    pub clean: Option<Vec<f64>>,
}

impl Run {
    /// Preform mass from the `t = 0` whole-sample row of a total-mass run.
    pub fn baseline(&self) -> Option<f64> {
        match self.kind {
            ObservableKind::MassGain => None,
            ObservableKind::TotalMass => self
                .records
                .iter()
                .find(|r| r.time_s == 0.0 && r.segment_id == -1)
                .map(|r| r.value_kg),
        }
    }

    pub fn cycle_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.cycle_index)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// `(T, P_total, P_r)` of a cycle.
    pub fn cycle_condition(&self, cycle: usize) -> Option<(f64, f64, f64)> {
        self.records
            .iter()
            .find(|r| r.cycle_index == cycle)
            .map(|r| (r.temperature_k, r.total_pressure_pa, r.partial_pressure_pa))
    }
}

/// Geometry the measurements refer to, when recorded alongside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryDescriptor {
    pub radius_m: f64,
    pub height_m: f64,
    pub segment_bounds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    /// Sorted by run id.
    pub runs: Vec<Run>,
    pub geometry: Option<GeometryDescriptor>,
}

impl Dataset {
    /// Builds and validates a dataset from loose records. `row` numbers in
    /// errors count data rows from 1 in input order.
    pub fn from_records(records: Vec<MeasurementRecord>) -> Result<Self> {
        let mut by_run: BTreeMap<String, Vec<(usize, MeasurementRecord)>> = BTreeMap::new();
        for (k, r) in records.into_iter().enumerate() {
            let row = k + 1;
            check_record(&r, row)?;
            by_run.entry(r.run_id.clone()).or_default().push((row, r));
        }
        let mut runs = Vec::with_capacity(by_run.len());
        for (id, mut rows) in by_run {
            let kind = rows[0].1.observable_kind;
            if let Some((row, r)) = rows.iter().find(|(_, r)| r.observable_kind != kind) {
                return Err(Error::Schema {
                    row: *row,
                    msg: format!("run {id} mixes {kind} with {}", r.observable_kind),
                });
            }
            rows.sort_by(|a, b| {
                a.1.time_s
                    .total_cmp(&b.1.time_s)
                    .then(a.1.segment_id.cmp(&b.1.segment_id))
            });
            check_run(&id, kind, &rows)?;
            runs.push(Run {
                id,
                kind,
                records: rows.into_iter().map(|r| r.1).collect(),
                clean: None,
            });
        }
        Ok(Self {
            runs,
            geometry: None,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = &MeasurementRecord> {
        self.runs.iter().flat_map(|r| r.records.iter())
    }

    pub fn run(&self, id: &str) -> Option<&Run> {
        self.runs.iter().find(|r| r.id == id)
    }

    /// Copies values of `clean` (same rows) into the clean shadow.
    pub fn attach_clean(&mut self, clean: &Dataset) -> Result<()> {
        if clean.runs.len() != self.runs.len() {
            return Err(Error::contract(
                "clean shadow has a different number of runs",
            ));
        }
        for (run, shadow) in self.runs.iter_mut().zip(&clean.runs) {
            let same = run.id == shadow.id
                && run.records.len() == shadow.records.len()
                && run.records.iter().zip(&shadow.records).all(|(a, b)| {
                    a.time_s == b.time_s
                        && a.segment_id == b.segment_id
                        && a.cycle_index == b.cycle_index
                });
            if !same {
                return Err(Error::contract(format!(
                    "clean shadow rows differ for run {}",
                    run.id
                )));
            }
            run.clean = Some(shadow.records.iter().map(|r| r.value_kg).collect());
        }
        Ok(())
    }

    /// The same rows carrying the clean values, when every run has a shadow.
    pub fn clean_shadow(&self) -> Option<Dataset> {
        let mut out = self.clone();
        for run in &mut out.runs {
            let clean = run.clean.take()?;
            for (r, v) in run.records.iter_mut().zip(clean) {
                r.value_kg = v;
            }
        }
        Some(out)
    }

    /// Every segment id must be `-1` or below `segment_count`.
    pub fn check_segments(&self, segment_count: usize) -> Result<()> {
        let mut row = 0;
        for r in self.records() {
            row += 1;
            if r.segment_id >= segment_count as i64 {
                return Err(Error::Schema {
                    row,
                    msg: format!(
                        "segment {} but only {segment_count} segments are declared",
                        r.segment_id
                    ),
                });
            }
        }
        Ok(())
    }
}

fn check_record(r: &MeasurementRecord, row: usize) -> Result<()> {
    let bad = |msg: String| Err(Error::Schema { row, msg });
    if r.run_id.is_empty() {
        return bad("empty run_id".into());
    }
    let finite = [
        r.time_s,
        r.value_kg,
        r.temperature_k,
        r.partial_pressure_pa,
        r.total_pressure_pa,
    ];
    if finite.iter().any(|v| !v.is_finite()) {
        return bad("non-finite number".into());
    }
    if r.time_s < 0.0 {
        return bad(format!("negative time_s {}", r.time_s));
    }
    if r.value_kg < 0.0 {
        return bad(format!("negative value_kg {}", r.value_kg));
    }
    if r.segment_id < -1 {
        return bad(format!("segment_id {} below -1", r.segment_id));
    }
    if !(r.temperature_k > 0.0) {
        return bad(format!(
            "temperature_K {} must be positive",
            r.temperature_k
        ));
    }
    if !(r.partial_pressure_pa >= 0.0 && r.partial_pressure_pa <= r.total_pressure_pa) {
        return bad("partial pressure must lie in [0, total pressure]".into());
    }
    Ok(())
}

fn check_run(id: &str, kind: ObservableKind, rows: &[(usize, MeasurementRecord)]) -> Result<()> {
    let mut conditions: BTreeMap<usize, (f64, f64, f64)> = BTreeMap::new();
    let mut last_cycle = 0;
    for (row, r) in rows {
        let row = *row;
        if r.cycle_index < last_cycle {
            return Err(Error::Schema {
                row,
                msg: format!("run {id}: cycle_index decreases in time"),
            });
        }
        last_cycle = r.cycle_index;
        let c = (r.temperature_k, r.total_pressure_pa, r.partial_pressure_pa);
        if *conditions.entry(r.cycle_index).or_insert(c) != c {
            return Err(Error::Schema {
                row,
                msg: format!(
                    "run {id}: operating condition changes within cycle {}",
                    r.cycle_index
                ),
            });
        }
    }
    if kind == ObservableKind::TotalMass {
        if let Some((row, _)) = rows.iter().find(|(_, r)| r.segment_id != -1) {
            return Err(Error::Schema {
                row: *row,
                msg: format!("run {id}: total_mass rows must use segment -1"),
            });
        }
        if rows[0].1.time_s != 0.0 {
            return Err(Error::Schema {
                row: rows[0].0,
                msg: format!("run {id}: total_mass run needs a baseline row at time 0"),
            });
        }
    }
    Ok(())
}

/// Reads and validates a measurements CSV.
pub fn read_measurements(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_measurements(file)
}

pub fn parse_measurements(reader: impl std::io::Read) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema {
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    let got: Vec<&str> = header.iter().collect();
    if got != MEASUREMENT_HEADER {
        let missing: Vec<&str> = MEASUREMENT_HEADER
            .iter()
            .filter(|h| !got.contains(h))
            .copied()
            .collect();
        let msg = if missing.is_empty() {
            format!("header must be exactly `{}`", MEASUREMENT_HEADER.join(","))
        } else {
            format!("missing column(s): {}", missing.join(", "))
        };
        return Err(Error::Schema { row: 0, msg });
    }
    let mut records = Vec::new();
    for (k, rec) in rdr.deserialize::<MeasurementRecord>().enumerate() {
        let r = rec.map_err(|e| Error::Schema {
            row: k + 1,
            msg: e.to_string(),
        })?;
        records.push(r);
    }
    Dataset::from_records(records)
}

/// Writes records in dataset order with full-precision floats.
pub fn write_measurements(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_measurements(dataset)).map_err(|e| Error::io(path, e))
}

pub fn format_measurements(dataset: &Dataset) -> String {
    let mut out = MEASUREMENT_HEADER.join(",");
    out.push('\n');
    for r in dataset.records() {
        out.push_str(&format!(
            "{},{:e},{},{:e},{},{:e},{:e},{:e},{}\n",
            r.run_id,
            r.time_s,
            r.segment_id,
            r.value_kg,
            r.observable_kind,
            r.temperature_k,
            r.partial_pressure_pa,
            r.total_pressure_pa,
            r.cycle_index
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "run_id,time_s,segment_id,value_kg,observable_kind,temperature_K,partial_pressure_Pa,total_pressure_Pa,cycle_index\n";

    fn parse(body: &str) -> Result<Dataset> {
        parse_measurements(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn groups_and_sorts_runs() {
        let ds = parse(
            "b,7200,0,2e-4,mass_gain,1250,1600,1600,0\n\
             a,3600,-1,1e-4,mass_gain,1250,1600,1600,0\n\
             b,3600,0,1e-4,mass_gain,1250,1600,1600,0\n",
        )
        .unwrap();
        assert_eq!(ds.runs.len(), 2);
        assert_eq!(ds.runs[0].id, "a");
        assert_eq!(ds.runs[1].records[0].time_s, 3600.0);
    }

    #[test]
    fn negative_mass_names_the_row() {
        let err = parse(
            "a,0,-1,0,mass_gain,1250,1600,1600,0\n\
             a,3600,-1,-1,mass_gain,1250,1600,1600,0\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema { row: 2, .. }), "{err}");
    }

    #[test]
    fn missing_column_is_reported() {
        let err = parse_measurements(&b"run_id,time_s\na,0\n"[..]).unwrap_err();
        assert!(
            matches!(err, Error::Schema { row: 0, ref msg } if msg.contains("value_kg")),
            "{err}"
        );
    }

    #[test]
    fn mixed_kinds_rejected() {
        let err = parse(
            "a,0,-1,1,total_mass,1250,1600,1600,0\n\
             a,3600,-1,1,mass_gain,1250,1600,1600,0\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema { row: 2, .. }));
    }

    #[test]
    fn total_mass_needs_baseline() {
        let err = parse("a,3600,-1,1,total_mass,1250,1600,1600,0\n").unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
        let ok = parse(
            "a,0,-1,1.5,total_mass,1250,1600,1600,0\na,10,-1,1.6,total_mass,1250,1600,1600,0\n",
        )
        .unwrap();
        assert_eq!(ok.runs[0].baseline(), Some(1.5));
    }

    #[test]
    fn condition_change_inside_cycle_rejected() {
        let err = parse(
            "a,0,-1,0,mass_gain,1250,1600,1600,0\n\
             a,3600,-1,1e-4,mass_gain,1300,1600,1600,0\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema { row: 2, .. }));
    }

    #[test]
    fn text_round_trip() {
        let ds = parse(
            "r0,0,-1,0,mass_gain,1250,1600,1600,0\n\
             r0,3600,-1,1.2345678901234567e-4,mass_gain,1250,1600,1600,0\n",
        )
        .unwrap();
        let again = parse_measurements(format_measurements(&ds).as_bytes()).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn segment_check() {
        let ds = parse("a,0,2,0,mass_gain,1250,1600,1600,0\n").unwrap();
        assert!(ds.check_segments(3).is_ok());
        assert!(matches!(
            ds.check_segments(2),
            Err(Error::Schema { row: 1, .. })
        ));
    }
}
