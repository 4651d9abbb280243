//! Line-delimited JSON dataset files.
//!
//! The first line is the manifest, every further line one snapshot:
//!
//! ```text
//! {"record":"manifest","d_e":512,"d_a":49,"d_u":34,"n_classes":2,"snapshots":1,"students_per_snapshot":2,"seed":0,"label_names":["disengaged","engaged"]}
//! {"record":"snapshot","snapshot_id":"s00000","students":[{"index":0,"emotional":[...],"attentional":[...],"upper_body":[...],"label":1}, ...]}
//! ```
//!
//! Floats are written in shortest round-trip form, so write → load is
//! bit-exact.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{FeatureDims, FeatureKind, RawStudentFeatures};
use crate::error::{Error, Result};
use crate::model::SnapshotInput;
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub d_e: usize,
    pub d_a: usize,
    pub d_u: usize,
    pub n_classes: usize,
    pub snapshots: usize,
    pub students_per_snapshot: usize,
    pub seed: u64,
    pub label_names: Vec<String>,
}

impl DatasetManifest {
    pub fn dims(&self) -> FeatureDims {
        FeatureDims { emotional: self.d_e, attentional: self.d_a, upper_body: self.d_u }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::dataset("manifest", field, msg));
        for (field, v) in [
            ("d_e", self.d_e),
            ("d_a", self.d_a),
            ("d_u", self.d_u),
            ("n_classes", self.n_classes),
            ("snapshots", self.snapshots),
            ("students_per_snapshot", self.students_per_snapshot),
        ] {
            if v == 0 {
                return fail(field, "must be at least 1".into());
            }
        }
        if self.n_classes < 2 {
            return fail("n_classes", format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.label_names.len() != self.n_classes {
            return fail("label_names", format!("{} names for {} classes", self.label_names.len(), self.n_classes));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    /// Ordinal position of the student within the classroom.
    pub index: usize,
    pub emotional: Vec<f64>,
    pub attentional: Vec<f64>,
    pub upper_body: Vec<f64>,
    pub label: usize,
}

impl StudentRecord {
    pub fn features(&self, kind: FeatureKind) -> &[f64] {
        match kind {
            FeatureKind::Emotional => &self.emotional,
            FeatureKind::Attentional => &self.attentional,
            FeatureKind::UpperBody => &self.upper_body,
        }
    }

    pub fn raw(&self) -> RawStudentFeatures {
        RawStudentFeatures {
            emotional: self.emotional.clone(),
            attentional: self.attentional.clone(),
            upper_body: self.upper_body.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSnapshot {
    pub snapshot_id: String,
    pub students: Vec<StudentRecord>,
}

impl FeatureSnapshot {
    pub fn labels(&self) -> Vec<usize> {
        self.students.iter().map(|s| s.label).collect()
    }

    /// Dense model input, students in stored order.
    pub fn to_input(&self) -> SnapshotInput {
        let stack = |kind: FeatureKind| {
            let rows: Vec<Vec<f64>> = self.students.iter().map(|s| s.features(kind).to_vec()).collect();
            Matrix::from_rows(&rows)
        };
        SnapshotInput {
            emotional: stack(FeatureKind::Emotional),
            attentional: stack(FeatureKind::Attentional),
            upper_body: stack(FeatureKind::UpperBody),
            students: self.students.iter().map(|s| s.index).collect(),
            labels: self.labels(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Manifest(DatasetManifest),
    Snapshot(FeatureSnapshot),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub snapshots: Vec<FeatureSnapshot>,
}

impl Dataset {
    /// Enforces every manifest and record invariant.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.validate()?;
        if self.snapshots.len() != m.snapshots {
            return Err(Error::dataset(
                "manifest",
                "snapshots",
                format!("declares {} snapshots, file holds {}", m.snapshots, self.snapshots.len()),
            ));
        }
        let mut ids = HashSet::new();
        for snap in &self.snapshots {
            let loc = format!("snapshot {}", snap.snapshot_id);
            if !ids.insert(snap.snapshot_id.as_str()) {
                return Err(Error::dataset(loc, "snapshot_id", "duplicate id"));
            }
            if snap.students.len() != m.students_per_snapshot {
                return Err(Error::dataset(
                    loc,
                    "students",
                    format!("expected {} students, found {}", m.students_per_snapshot, snap.students.len()),
                ));
            }
            let mut seen = vec![false; m.students_per_snapshot];
            for (pos, s) in snap.students.iter().enumerate() {
                let sloc = format!("snapshot {} student {pos}", snap.snapshot_id);
                if s.index >= m.students_per_snapshot || std::mem::replace(&mut seen[s.index], true) {
                    return Err(Error::dataset(
                        sloc,
                        "index",
                        format!("index {} is out of range or repeated", s.index),
                    ));
                }
                if s.label >= m.n_classes {
                    return Err(Error::dataset(
                        sloc,
                        "label",
                        format!("label {} not below n_classes {}", s.label, m.n_classes),
                    ));
                }
                for kind in FeatureKind::ALL {
                    let v = s.features(kind);
                    let want = m.dims().get(kind);
                    if v.len() != want {
                        return Err(Error::dataset(
                            sloc,
                            kind.name(),
                            format!("length {} but manifest declares {want}", v.len()),
                        ));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::dataset(sloc, kind.name(), "non-finite value"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> Vec<SnapshotInput> {
        self.snapshots.iter().map(FeatureSnapshot::to_input).collect()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.manifest.n_classes];
        for snap in &self.snapshots {
            for s in &snap.students {
                counts[s.label] += 1;
            }
        }
        counts
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = None;
    let mut snapshots = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| Error::dataset(format!("line {}", lineno + 1), "record", e.to_string()))?;
        match (record, manifest.is_some()) {
            (Record::Manifest(m), false) if snapshots.is_empty() => manifest = Some(m),
            (Record::Manifest(_), _) => {
                return Err(Error::dataset(
                    format!("line {}", lineno + 1),
                    "record",
                    "manifest must appear exactly once, on the first line",
                ))
            }
            (Record::Snapshot(_), false) => {
                return Err(Error::dataset(format!("line {}", lineno + 1), "record", "snapshot before manifest"))
            }
            (Record::Snapshot(s), true) => snapshots.push(s),
        }
    }
    let manifest = manifest.ok_or_else(|| Error::dataset(path.display().to_string(), "manifest", "missing"))?;
    let dataset = Dataset { manifest, snapshots };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    dataset.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &Record::Manifest(dataset.manifest.clone()))?;
    w.write_all(b"\n").map_err(io)?;
    for snap in &dataset.snapshots {
        // Serialize by reference; cloning every snapshot would double peak memory.
        #[derive(Serialize)]
        #[serde(tag = "record", rename = "snapshot")]
        struct SnapshotRef<'a> {
            snapshot_id: &'a str,
            students: &'a [StudentRecord],
        }
        serde_json::to_writer(&mut w, &SnapshotRef { snapshot_id: &snap.snapshot_id, students: &snap.students })?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Converts a CSV of pre-extracted per-student vectors into a [`Dataset`].
///
/// Expected header: `snapshot_id,student,label,e0..,a0..,u0..` where feature
/// columns are recognized by their `e`, `a`, `u` prefix followed by digits.
/// Rows of one snapshot may appear in any order.
pub fn convert_csv(
    path: impl AsRef<Path>,
    n_classes: usize,
    label_names: Option<Vec<String>>,
    seed: u64,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::dataset(path.display().to_string(), name, "missing column"))
    };
    let (id_col, student_col, label_col) = (col("snapshot_id")?, col("student")?, col("label")?);
    let feature_cols = |prefix: char| -> Vec<usize> {
        headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix) && h.len() > 1 && h[1..].chars().all(|c| c.is_ascii_digit()))
            .map(|(i, _)| i)
            .collect()
    };
    let (e_cols, a_cols, u_cols) = (feature_cols('e'), feature_cols('a'), feature_cols('u'));

    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<StudentRecord>> = BTreeMap::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let loc = format!("csv row {}", row + 2);
        let num = |i: usize, field: &str| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| Error::dataset(loc.clone(), field, e.to_string()))
        };
        let int = |i: usize, field: &str| -> Result<usize> {
            rec[i].trim().parse::<usize>().map_err(|e| Error::dataset(loc.clone(), field, e.to_string()))
        };
        let read = |cols: &[usize]| -> Result<Vec<f64>> { cols.iter().map(|&i| num(i, &headers[i])).collect() };
        let id = rec[id_col].to_string();
        let student = StudentRecord {
            index: int(student_col, "student")?,
            emotional: read(&e_cols)?,
            attentional: read(&a_cols)?,
            upper_body: read(&u_cols)?,
            label: int(label_col, "label")?,
        };
        if !grouped.contains_key(&id) {
            order.push(id.clone());
        }
        grouped.entry(id).or_default().push(student);
    }

    let snapshots: Vec<FeatureSnapshot> = order
        .into_iter()
        .map(|id| {
            let mut students = grouped.remove(&id).unwrap_or_default();
            students.sort_by_key(|s| s.index);
            FeatureSnapshot { snapshot_id: id, students }
        })
        .collect();
    let students_per_snapshot = snapshots.first().map_or(0, |s| s.students.len());
    let manifest = DatasetManifest {
        d_e: e_cols.len(),
        d_a: a_cols.len(),
        d_u: u_cols.len(),
        n_classes,
        snapshots: snapshots.len(),
        students_per_snapshot,
        seed,
        label_names: label_names.unwrap_or_else(|| default_label_names(n_classes)),
    };
    let dataset = Dataset { manifest, snapshots };
    dataset.validate()?;
    Ok(dataset)
}

pub fn default_label_names(n_classes: usize) -> Vec<String> {
    match n_classes {
        2 => vec!["disengaged".into(), "engaged".into()],
        3 => vec!["low".into(), "medium".into(), "high".into()],
        c => (0..c).map(|i| format!("class_{i}")).collect(),
    }
}
