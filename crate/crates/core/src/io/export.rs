use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::canonical::to_canonical;
use crate::error::{Error, Result};
use crate::grid::AxiGrid;
use crate::physics::Snapshot;
use crate::training::{TrainRecord, UqField, UqPrediction};

pub const TRAJECTORY_HEADER: &str =
    "time_s,quantity,segment_or_location,mean,variance,ci_half_width";
pub const FIELD_HEADER: &str = "r_m,z_m,value";
const TRAIN_HEADER: &str =
    "member,seed,epoch,learning_rate,total,term1,term2,term3,term4,max_residual,max_sweeps,clamps";

/// `sha256:<hex>` of the bytes that configured a run.
pub fn config_digest(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut s = String::from("sha256:");
    for b in hash {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub file: String,
    pub quantity: String,
    pub time_s: Option<f64>,
    pub grid: Option<AxiGrid>,
}

/// Sidecar describing an export.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExportManifest {
    pub config_digest: String,
    pub members_used: usize,
    /// Free-form annotations such as the regime of a requested condition.
    pub labels: BTreeMap<String, String>,
    pub files: Vec<ManifestFile>,
}

impl ExportManifest {
    pub fn new(config_digest: impl Into<String>) -> Self {
        Self {
            config_digest: config_digest.into(),
            ..Default::default()
        }
    }

    pub fn label(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.labels.insert(key.into(), value.into());
        self
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Writes a standalone manifest in canonical form.
pub fn write_manifest(manifest: &ExportManifest, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &to_canonical(manifest)?)
}

pub fn trajectory_csv(pred: &UqPrediction) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for s in &pred.series {
        for k in 0..s.times.len() {
            writeln!(
                out,
                "{:e},{},{},{:e},{:e},{:e}",
                s.times[k],
                s.quantity.name(),
                s.location,
                s.mean[k],
                s.variance[k],
                s.half_width[k]
            )
            .unwrap();
        }
    }
    out
}

/// Writes the trajectory CSV and `<path>.manifest.json`; returns the manifest path.
pub fn export_trajectory(
    pred: &UqPrediction,
    path: impl AsRef<Path>,
    manifest: &ExportManifest,
) -> Result<PathBuf> {
    let path = path.as_ref();
    write_file(path, &trajectory_csv(pred))?;
    let mut m = manifest.clone();
    m.members_used = pred.members_used;
    let file = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut quantities: Vec<&str> = pred.series.iter().map(|s| s.quantity.name()).collect();
    quantities.dedup();
    m.files = vec![ManifestFile {
        file,
        quantity: quantities.join(";"),
        time_s: None,
        grid: None,
    }];
    let side = sidecar(path);
    write_file(&side, &to_canonical(&m)?)?;
    Ok(side)
}

/// One named field on one grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub quantity: String,
    pub time: f64,
    pub grid: AxiGrid,
    pub values: Vec<f64>,
}

impl FieldSnapshot {
    /// Porosity, molarity, `D_eff` and `K·S_v` of a rollout level.
    pub fn from_snapshot(snap: &Snapshot, grid: &AxiGrid) -> Vec<FieldSnapshot> {
        let t = snap.state.time;
        let mk = |q: &str, v: &[f64]| FieldSnapshot {
            quantity: q.into(),
            time: t,
            grid: grid.clone(),
            values: v.to_vec(),
        };
        vec![
            mk("porosity", snap.state.porosity.values()),
            mk("molarity", snap.state.molarity.values()),
            mk("deff", &snap.deff),
            mk("ks", &snap.ks),
        ]
    }

    /// Ensemble mean and CI half-width of a field.
    pub fn from_uq(field: &UqField) -> Vec<FieldSnapshot> {
        let q = field.quantity.name();
        vec![
            FieldSnapshot {
                quantity: format!("{q}_mean"),
                time: field.time,
                grid: field.grid.clone(),
                values: field.mean.clone(),
            },
            FieldSnapshot {
                quantity: format!("{q}_ci_half_width"),
                time: field.time,
                grid: field.grid.clone(),
                values: field.half_width.clone(),
            },
        ]
    }
}

pub fn field_csv(snap: &FieldSnapshot) -> Result<String> {
    let g = &snap.grid;
    if snap.values.len() != g.len() {
        return Err(Error::contract(format!(
            "field `{}` has {} values for a {}x{} grid",
            snap.quantity,
            snap.values.len(),
            g.nr(),
            g.nz()
        )));
    }
    let mut out = String::from(FIELD_HEADER);
    out.push('\n');
    for (i, r) in g.r_centers().iter().enumerate() {
        for j in 0..g.nz() {
            writeln!(
                out,
                "{:e},{:e},{:e}",
                r,
                g.z_center(j),
                snap.values[g.index(i, j)]
            )
            .unwrap();
        }
    }
    Ok(out)
}

/// Writes `<quantity>_<k>.csv` per snapshot (k counts per quantity) and
/// `fields.manifest.json` into `dir`. Returns the CSV paths in input order.
pub fn export_fields(
    snaps: &[FieldSnapshot],
    dir: impl AsRef<Path>,
    manifest: &ExportManifest,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut m = manifest.clone();
    m.files.clear();
    let mut paths = Vec::with_capacity(snaps.len());
    for s in snaps {
        let k = counts.entry(&s.quantity).or_insert(0);
        let name = format!("{}_{:03}.csv", s.quantity, k);
        *k += 1;
        let path = dir.join(&name);
        write_file(&path, &field_csv(s)?)?;
        m.files.push(ManifestFile {
            file: name,
            quantity: s.quantity.clone(),
            time_s: Some(s.time),
            grid: Some(s.grid.clone()),
        });
        paths.push(path);
    }
    write_file(&dir.join("fields.manifest.json"), &to_canonical(&m)?)?;
    Ok(paths)
}

/// Loss curves and solver diagnostics, one row per member per epoch.
pub fn train_records_csv(records: &[(u64, &TrainRecord)]) -> String {
    let mut out = String::from(TRAIN_HEADER);
    out.push('\n');
    for (m, (seed, rec)) in records.iter().enumerate() {
        for e in &rec.epochs {
            let l = &e.loss;
            writeln!(
                out,
                "{m},{seed},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                e.epoch,
                e.learning_rate,
                l.total,
                l.term1,
                l.term2,
                l.term3,
                l.term4,
                e.stats.max_residual,
                e.stats.max_sweeps,
                e.stats.clamps
            )
            .unwrap();
        }
    }
    out
}

pub fn export_train_records(records: &[(u64, &TrainRecord)], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &train_records_csv(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{Quantity, UqSeries};

    fn series(q: Quantity, loc: &str, n: usize) -> UqSeries {
        let v: Vec<f64> = (0..n).map(|k| 0.1 * k as f64 + 1.0 / 3.0).collect();
        UqSeries {
            quantity: q,
            location: loc.into(),
            times: (0..n).map(|k| k as f64 * 3600.0).collect(),
            mean: v.clone(),
            variance: v.iter().map(|x| x * 1e-4).collect(),
            half_width: v.iter().map(|x| 3.0 * (x * 1e-4).sqrt()).collect(),
        }
    }

    #[test]
    fn empty_prediction_is_header_only() {
        assert_eq!(
            trajectory_csv(&UqPrediction::default()),
            format!("{TRAJECTORY_HEADER}\n")
        );
    }

    #[test]
    fn row_cardinality_and_determinism() {
        let pred = UqPrediction {
            series: (0..3)
                .map(|s| series(Quantity::Mass, &format!("segment_{s}"), 10))
                .collect(),
            fields: vec![],
            members_used: 4,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let side = export_trajectory(&pred, &p, &ExportManifest::new(config_digest(b"x"))).unwrap();
        let a = std::fs::read(&p).unwrap();
        let text = String::from_utf8(a.clone()).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert!(!text.contains('\r'));
        export_trajectory(&pred, &p, &ExportManifest::new(config_digest(b"x"))).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), a);
        let side_text = std::fs::read_to_string(side).unwrap();
        assert!(side_text.contains(&config_digest(b"x")));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = export_trajectory(
            &UqPrediction::default(),
            "/nonexistent/dir/t.csv",
            &ExportManifest::default(),
        );
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn fields_rows_files_and_round_trip() {
        let grid = AxiGrid::new(0.01, 0.02, 16, 20).unwrap();
        let vals: Vec<f64> = (0..grid.len())
            .map(|k| (k as f64 + 0.1).sqrt() / 7.0)
            .collect();
        let mut snaps = vec![];
        for t in 0..3 {
            for q in ["porosity", "molarity"] {
                snaps.push(FieldSnapshot {
                    quantity: q.into(),
                    time: t as f64,
                    grid: grid.clone(),
                    values: vals.clone(),
                });
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let paths = export_fields(&snaps, dir.path(), &ExportManifest::default()).unwrap();
        assert_eq!(paths.len(), 6);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>().join(","),
            FIELD_HEADER
        );
        let parsed: Vec<f64> = rdr
            .records()
            .map(|r| r.unwrap()[2].parse().unwrap())
            .collect();
        assert_eq!(parsed.len(), 320);
        for (a, b) in parsed.iter().zip(&vals) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
        assert!(dir.path().join("fields.manifest.json").exists());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            config_digest(b""),
            "sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
