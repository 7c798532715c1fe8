//! Cohort data model, on-disk manifest format and deterministic splitting.
//!
//! A cohort is stored as a JSON manifest plus two CSV coordinate files
//! (header `row,col`, one stored one per line). Paths inside the manifest are
//! resolved relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::sparse::BinaryMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EventCohort {
    pub events: BinaryMatrix,
    pub labels: BinaryMatrix,
    pub event_names: Vec<String>,
    pub drug_names: Vec<String>,
    pub group_ids: Option<Vec<String>>,
}

impl EventCohort {
    pub fn new(
        events: BinaryMatrix,
        labels: BinaryMatrix,
        event_names: Vec<String>,
        drug_names: Vec<String>,
        group_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let cohort = Self {
            events,
            labels,
            event_names,
            drug_names,
            group_ids,
        };
        cohort.validate()?;
        Ok(cohort)
    }

    /// Cohort with generated names `e0..`, `d0..`.
    pub fn unnamed(events: BinaryMatrix, labels: BinaryMatrix) -> Result<Self> {
        let event_names = (0..events.n_cols()).map(|j| format!("e{j}")).collect();
        let drug_names = (0..labels.n_cols()).map(|c| format!("d{c}")).collect();
        Self::new(events, labels, event_names, drug_names, None)
    }

    pub fn n_patients(&self) -> usize {
        self.events.n_rows()
    }

    pub fn n_events(&self) -> usize {
        self.events.n_cols()
    }

    pub fn n_drugs(&self) -> usize {
        self.labels.n_cols()
    }

    fn validate(&self) -> Result<()> {
        if self.labels.n_rows() != self.events.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "events have {} rows, labels have {}",
                self.events.n_rows(),
                self.labels.n_rows()
            )));
        }
        if self.event_names.len() != self.n_events() {
            return Err(Error::DimensionMismatch(format!(
                "{} event names for {} events",
                self.event_names.len(),
                self.n_events()
            )));
        }
        if self.drug_names.len() != self.n_drugs() {
            return Err(Error::DimensionMismatch(format!(
                "{} drug names for {} drugs",
                self.drug_names.len(),
                self.n_drugs()
            )));
        }
        if let Some(groups) = &self.group_ids {
            if groups.len() != self.n_patients() {
                return Err(Error::DimensionMismatch(format!(
                    "{} group ids for {} patients",
                    groups.len(),
                    self.n_patients()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum GroupIdRepr {
    Int(i64),
    Str(String),
}

impl GroupIdRepr {
    fn into_string(self) -> String {
        match self {
            GroupIdRepr::Int(i) => i.to_string(),
            GroupIdRepr::Str(s) => s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CohortManifest {
    n_patients: usize,
    n_events: usize,
    n_drugs: usize,
    event_names: Vec<String>,
    drug_names: Vec<String>,
    events_file: String,
    labels_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_ids: Option<Vec<GroupIdRepr>>,
}

pub fn load_cohort(manifest_path: &Path) -> Result<EventCohort> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: CohortManifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));

    let events = read_coordinates(
        &base.join(&manifest.events_file),
        manifest.n_patients,
        manifest.n_events,
    )?;
    let labels = read_coordinates(
        &base.join(&manifest.labels_file),
        manifest.n_patients,
        manifest.n_drugs,
    )?;
    let group_ids = manifest
        .group_ids
        .map(|g| g.into_iter().map(GroupIdRepr::into_string).collect());
    EventCohort::new(
        events,
        labels,
        manifest.event_names,
        manifest.drug_names,
        group_ids,
    )
}

/// Writes the manifest plus `<stem>_events.csv` and `<stem>_labels.csv` next to it.
pub fn save_cohort(cohort: &EventCohort, manifest_path: &Path) -> Result<()> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("cohort");
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let events_file = format!("{stem}_events.csv");
    let labels_file = format!("{stem}_labels.csv");
    write_atomic(&base.join(&events_file), &coordinates_csv(&cohort.events))?;
    write_atomic(&base.join(&labels_file), &coordinates_csv(&cohort.labels))?;

    let manifest = CohortManifest {
        n_patients: cohort.n_patients(),
        n_events: cohort.n_events(),
        n_drugs: cohort.n_drugs(),
        event_names: cohort.event_names.clone(),
        drug_names: cohort.drug_names.clone(),
        events_file,
        labels_file,
        group_ids: cohort
            .group_ids
            .as_ref()
            .map(|g| g.iter().cloned().map(GroupIdRepr::Str).collect()),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(manifest_path, &json)
}

fn coordinates_csv(matrix: &BinaryMatrix) -> Vec<u8> {
    let mut out = String::from("row,col\n");
    for (r, c) in matrix.coords() {
        out.push_str(&format!("{r},{c}\n"));
    }
    out.into_bytes()
}

/// Reads a `row,col[,value]` file. A value column, when present, must hold 0 or 1;
/// zeros are skipped.
fn read_coordinates(path: &Path, n_rows: usize, n_cols: usize) -> Result<BinaryMatrix> {
    let file: PathBuf = path.to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_path(path)
        .map_err(|e| Error::Parse {
            file: file.clone(),
            line: 0,
            message: e.to_string(),
        })?;

    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n_rows];
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            file: file.clone(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() < 2 || record.len() > 3 {
            return Err(Error::Parse {
                file,
                line,
                message: format!("expected 2 or 3 fields, found {}", record.len()),
            });
        }
        let parse = |s: &str| -> Result<i64> {
            s.parse::<i64>().map_err(|e| Error::Parse {
                file: file.clone(),
                line,
                message: format!("bad integer {s:?}: {e}"),
            })
        };
        let r = parse(&record[0])?;
        let c = parse(&record[1])?;
        if r < 0 || c < 0 || r as usize >= n_rows || c as usize >= n_cols {
            return Err(Error::CoordinateOutOfRange {
                file,
                line,
                row: r,
                col: c,
                rows: n_rows,
                cols: n_cols,
            });
        }
        let (r, c) = (r as usize, c as usize);
        if record.len() == 3 {
            match record[2].trim() {
                "1" => {}
                "0" => continue,
                other => {
                    return Err(Error::NonBinaryValue {
                        file,
                        line,
                        row: r,
                        col: c,
                        value: other.to_string(),
                    })
                }
            }
        }
        if !seen.insert((r, c)) {
            return Err(Error::DuplicateCoordinate {
                file,
                line,
                row: r,
                col: c,
            });
        }
        rows[r].push(c as u32);
    }
    BinaryMatrix::from_rows(n_cols, rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidSplit(format!(
                "ratios must be positive, got {all:?}"
            )));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Partition sizes for `n` rows: validation and test get `floor(ratio * n)`,
    /// training takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let val = floor(self.val).min(n);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

/// Deterministic shuffled split. With `group_ids` set, whole groups are
/// assigned to one partition.
pub fn split(cohort: &EventCohort, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let n = cohort.n_patients();
    let (n_train, n_val, n_test) = ratios.sizes(n);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidSplit(format!(
            "{n} rows cannot populate all three partitions (sizes {n_train}/{n_val}/{n_test})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (mut train_rows, mut val_rows, mut test_rows) = match &cohort.group_ids {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let val = order[..n_val].to_vec();
            let test = order[n_val..n_val + n_test].to_vec();
            let train = order[n_val + n_test..].to_vec();
            (train, val, test)
        }
        Some(groups) => {
            let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (row, g) in groups.iter().enumerate() {
                members.entry(g.as_str()).or_default().push(row);
            }
            let mut keys: Vec<&str> = members.keys().copied().collect();
            keys.shuffle(&mut rng);
            let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
            for key in keys {
                let rows = &members[key];
                if val.len() < n_val {
                    val.extend_from_slice(rows);
                } else if test.len() < n_test {
                    test.extend_from_slice(rows);
                } else {
                    train.extend_from_slice(rows);
                }
            }
            if train.is_empty() || val.is_empty() || test.is_empty() {
                return Err(Error::InvalidSplit(format!(
                    "{} groups cannot populate all three partitions",
                    members.len()
                )));
            }
            (train, val, test)
        }
    };
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(DatasetSplit {
        train_rows,
        val_rows,
        test_rows,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(n: usize) -> EventCohort {
        EventCohort::unnamed(BinaryMatrix::zeros(n, 2), BinaryMatrix::zeros(n, 1)).unwrap()
    }

    fn assert_partition(s: &DatasetSplit, n: usize) {
        let mut all: Vec<usize> = s
            .train_rows
            .iter()
            .chain(&s.val_rows)
            .chain(&s.test_rows)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn split_sizes_exact_division() {
        let s = split(&cohort(10), SplitRatios::default(), 0).unwrap();
        assert_eq!(
            (s.train_rows.len(), s.val_rows.len(), s.test_rows.len()),
            (6, 2, 2)
        );
        assert_partition(&s, 10);
    }

    #[test]
    fn split_sizes_with_remainder() {
        let s = split(&cohort(7), SplitRatios::default(), 3).unwrap();
        assert_eq!(
            (s.train_rows.len(), s.val_rows.len(), s.test_rows.len()),
            (5, 1, 1)
        );
        assert_partition(&s, 7);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split(&cohort(10), SplitRatios::default(), 0).unwrap();
        let b = split(&cohort(10), SplitRatios::default(), 0).unwrap();
        assert_eq!(a, b);
        let c = split(&cohort(50), SplitRatios::default(), 1).unwrap();
        let d = split(&cohort(50), SplitRatios::default(), 2).unwrap();
        assert_ne!(c.test_rows, d.test_rows);
    }

    #[test]
    fn split_rejects_tiny_cohorts_and_bad_ratios() {
        assert!(split(&cohort(3), SplitRatios::default(), 0).is_err());
        let bad = SplitRatios {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(split(&cohort(10), bad, 0).is_err());
    }

    #[test]
    fn grouped_split_keeps_groups_together() {
        let mut c = cohort(40);
        c.group_ids = Some((0..40).map(|i| format!("p{}", i / 3)).collect());
        let s = split(&c, SplitRatios::default(), 9).unwrap();
        assert_partition(&s, 40);
        let groups = c.group_ids.as_ref().unwrap();
        let part_of = |row: usize| {
            if s.train_rows.contains(&row) {
                0
            } else if s.val_rows.contains(&row) {
                1
            } else {
                2
            }
        };
        for a in 0..40 {
            for b in 0..40 {
                if groups[a] == groups[b] {
                    assert_eq!(part_of(a), part_of(b));
                }
            }
        }
    }
}
