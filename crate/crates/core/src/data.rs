//! Observational records, the dataset container, CSV I/O and splitting.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Seed;

/// Binary treatment assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Treatment {
    Control,
    Treated,
}

impl Treatment {
    pub const BOTH: [Treatment; 2] = [Treatment::Control, Treatment::Treated];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Treatment::Control),
            1 => Some(Treatment::Treated),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Treatment::Control => 0,
            Treatment::Treated => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }

    pub fn index(self) -> usize {
        self.as_u8() as usize
    }

    /// The alternative arm, `1 - t`.
    pub fn flip(self) -> Self {
        match self {
            Treatment::Control => Treatment::Treated,
            Treatment::Treated => Treatment::Control,
        }
    }
}

impl From<Treatment> for u8 {
    fn from(t: Treatment) -> u8 {
        t.as_u8()
    }
}

impl TryFrom<u8> for Treatment {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Treatment::from_u8(v).ok_or_else(|| format!("treatment not binary: {v}"))
    }
}

/// Noiseless potential-outcome means `(E[Y0|x], E[Y1|x])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialMeans {
    pub mu0: f64,
    pub mu1: f64,
}

impl PotentialMeans {
    pub fn get(&self, t: Treatment) -> f64 {
        match t {
            Treatment::Control => self.mu0,
            Treatment::Treated => self.mu1,
        }
    }

    /// True CATE at this point, `mu1 - mu0`.
    pub fn effect(&self) -> f64 {
        self.mu1 - self.mu0
    }
}

/// One observational record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualSample {
    pub x: Vec<f64>,
    pub t: Treatment,
    pub y: f64,
    pub truth: Option<PotentialMeans>,
}

impl FactualSample {
    pub fn new(x: Vec<f64>, t: Treatment, y: f64) -> Self {
        FactualSample {
            x,
            t,
            y,
            truth: None,
        }
    }

    pub fn with_truth(mut self, mu0: f64, mu1: f64) -> Self {
        self.truth = Some(PotentialMeans { mu0, mu1 });
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err("non-finite covariate".into());
        }
        if !self.y.is_finite() {
            return Err("non-finite outcome".into());
        }
        if let Some(m) = self.truth {
            if !m.mu0.is_finite() || !m.mu1.is_finite() {
                return Err("non-finite ground-truth mean".into());
            }
        }
        Ok(())
    }
}

/// An ordered collection of records sharing one covariate dimension.
///
/// Individuals are identified by their position; the order never changes
/// after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    d: usize,
    samples: Vec<FactualSample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, d: usize, samples: Vec<FactualSample>) -> Result<Self> {
        let mut with_truth = None;
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.x.len(),
                });
            }
            s.validate()
                .map_err(|message| Error::Parse { row: i + 1, message })?;
            match with_truth {
                None => with_truth = Some(s.truth.is_some()),
                Some(w) if w != s.truth.is_some() => {
                    return Err(Error::Parse {
                        row: i + 1,
                        message: "mu0/mu1 present on some rows but not others".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(Dataset {
            name: name.into(),
            d,
            samples,
        })
    }

    pub fn empty(name: impl Into<String>, d: usize) -> Self {
        Dataset {
            name: name.into(),
            d,
            samples: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[FactualSample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> &FactualSample {
        &self.samples[i]
    }

    pub fn into_samples(self) -> Vec<FactualSample> {
        self.samples
    }

    pub fn has_ground_truth(&self) -> bool {
        self.samples.first().is_some_and(|s| s.truth.is_some())
    }

    /// Number of records in `(control, treated)`.
    pub fn group_sizes(&self) -> (usize, usize) {
        let treated = self.samples.iter().filter(|s| s.t == Treatment::Treated).count();
        (self.len() - treated, treated)
    }

    /// Errors unless both treatment arms are populated.
    pub fn require_both_groups(&self) -> Result<()> {
        let (c, t) = self.group_sizes();
        if c == 0 {
            return Err(Error::EmptyGroup(0));
        }
        if t == 0 {
            return Err(Error::EmptyGroup(1));
        }
        Ok(())
    }

    pub fn indices_of(&self, t: Treatment) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.samples[i].t == t).collect()
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            d: self.d,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Train/test split configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Random disjoint partition of `0..n` into (train, test) index sets, each
/// sorted ascending.
///
/// The train part has `round(train_fraction * n)` members, clamped so that
/// neither side is empty.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::spec(format!("cannot split {n} samples")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::spec("train_fraction must lie in (0, 1)"));
    }
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut Seed(spec.seed).rng());
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Per-feature z-scoring fitted on one set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Features with zero spread keep unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, d: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for row in rows {
            n += 1;
            for k in 0..d {
                let delta = row[k] - mean[k];
                mean[k] += delta / n as f64;
                m2[k] += delta * (row[k] - mean[k]);
            }
        }
        let sd = m2
            .iter()
            .map(|&s| {
                let v = if n > 1 { s / (n - 1) as f64 } else { 0.0 };
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, sd }
    }

    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            sd: vec![1.0; d],
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Decimal text with 17 significant digits; parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("column {column}: cannot parse {field:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column {column}: non-finite value"),
        });
    }
    Ok(v)
}

struct Layout {
    d: usize,
    mu: Option<(usize, usize)>,
    augmented: Option<usize>,
    width: usize,
}

fn parse_header(header: &csv::StringRecord) -> Result<Layout> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let d = cols
        .iter()
        .take_while(|c| c.starts_with("x_"))
        .count();
    for (k, c) in cols[..d].iter().enumerate() {
        if *c != format!("x_{}", k + 1) {
            return Err(Error::Parse {
                row: 0,
                message: format!("expected column x_{} but found {c}", k + 1),
            });
        }
    }
    let rest = &cols[d..];
    let bad = || Error::Parse {
        row: 0,
        message: format!("header must be x_1..x_d,t,y[,mu0,mu1][,augmented], got {}", cols.join(",")),
    };
    if rest.len() < 2 || rest[0] != "t" || rest[1] != "y" {
        return Err(bad());
    }
    let mut pos = d + 2;
    let mut mu = None;
    if rest.len() >= 4 && rest[2] == "mu0" && rest[3] == "mu1" {
        mu = Some((pos, pos + 1));
        pos += 2;
    }
    let mut augmented = None;
    if cols.get(pos) == Some(&"augmented") {
        augmented = Some(pos);
        pos += 1;
    }
    if pos != cols.len() {
        return Err(bad());
    }
    Ok(Layout {
        d,
        mu,
        augmented,
        width: cols.len(),
    })
}

fn read_csv(path: &Path, has_ground_truth: bool) -> Result<(Dataset, Option<Vec<bool>>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let layout = parse_header(&header)?;
    if has_ground_truth && layout.mu.is_none() {
        return Err(Error::MissingGroundTruth);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut samples = Vec::new();
    let mut flags = layout.augmented.map(|_| Vec::new());
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != layout.width {
            return Err(Error::Parse {
                row,
                message: format!("expected {} columns, found {}", layout.width, record.len()),
            });
        }
        let x = (0..layout.d)
            .map(|k| parse_f64(&record[k], row, &format!("x_{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let t = match record[layout.d].trim() {
            "0" => Treatment::Control,
            "1" => Treatment::Treated,
            _ => {
                return Err(Error::Parse {
                    row,
                    message: "treatment not binary".into(),
                })
            }
        };
        let y = parse_f64(&record[layout.d + 1], row, "y")?;
        let mut sample = FactualSample::new(x, t, y);
        if let (true, Some((a, b))) = (has_ground_truth, layout.mu) {
            sample = sample.with_truth(
                parse_f64(&record[a], row, "mu0")?,
                parse_f64(&record[b], row, "mu1")?,
            );
        }
        if let (Some(col), Some(flags)) = (layout.augmented, flags.as_mut()) {
            flags.push(match record[col].trim() {
                "0" => false,
                "1" => true,
                _ => {
                    return Err(Error::Parse {
                        row,
                        message: "augmented flag not binary".into(),
                    })
                }
            });
        }
        samples.push(sample);
    }
    Ok((Dataset::new(name, layout.d, samples)?, flags))
}

/// Reads `x_1,...,x_d,t,y[,mu0,mu1]`. With `has_ground_truth` the mean
/// columns are required; otherwise they are ignored. A trailing
/// `augmented` provenance column is accepted and dropped.
pub fn load_csv(path: impl AsRef<Path>, has_ground_truth: bool) -> Result<Dataset> {
    read_csv(path.as_ref(), has_ground_truth).map(|(ds, _)| ds)
}

/// Like [`load_csv`] but also returns the `augmented` column, if any.
pub fn load_csv_with_provenance(
    path: impl AsRef<Path>,
    has_ground_truth: bool,
) -> Result<(Dataset, Option<Vec<bool>>)> {
    read_csv(path.as_ref(), has_ground_truth)
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(ds, None, path.as_ref())
}

pub(crate) fn write_csv(ds: &Dataset, flags: Option<&[bool]>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    let mut header: Vec<String> = (1..=ds.d()).map(|k| format!("x_{k}")).collect();
    header.push("t".into());
    header.push("y".into());
    let truth = ds.has_ground_truth();
    if truth {
        header.push("mu0".into());
        header.push("mu1".into());
    }
    if flags.is_some() {
        header.push("augmented".into());
    }
    writeln!(out, "{}", header.join(",")).expect("write to Vec");
    for (i, s) in ds.samples().iter().enumerate() {
        let mut fields: Vec<String> = s.x.iter().map(|&v| fmt_f64(v)).collect();
        fields.push(s.t.as_u8().to_string());
        fields.push(fmt_f64(s.y));
        if let Some(m) = s.truth.filter(|_| truth) {
            fields.push(fmt_f64(m.mu0));
            fields.push(fmt_f64(m.mu1));
        }
        if let Some(flags) = flags {
            fields.push(if flags[i] { "1" } else { "0" }.into());
        }
        writeln!(out, "{}", fields.join(",")).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let t = if i % 2 == 0 { Treatment::Control } else { Treatment::Treated };
                FactualSample::new(vec![i as f64, -(i as f64)], t, i as f64 * 0.5)
            })
            .collect();
        Dataset::new("toy", 2, samples).unwrap()
    }

    #[test]
    fn load_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x_1,x_2,t,y\n1,2,0,3.5\n4,5,1,6\n7,8,0,9\n").unwrap();
        let ds = load_csv(&p, false).unwrap();
        assert_eq!((ds.len(), ds.d()), (3, 2));
        assert_eq!(ds.get(1).t, Treatment::Treated);
        assert_eq!(ds.get(0).y, 3.5);
    }

    #[test]
    fn non_binary_treatment_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let mut body = String::from("x_1,t,y\n");
        for _ in 0..4 {
            body.push_str("0.1,0,1\n");
        }
        body.push_str("0.1,2,1\n");
        std::fs::write(&p, body).unwrap();
        let err = load_csv(&p, false).unwrap_err().to_string();
        assert_eq!(err, "row 5: treatment not binary");
    }

    #[test]
    fn malformed_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x_1,t,y\n0.1,0,1\n0.2,1\n").unwrap();
        assert!(matches!(load_csv(&p, false), Err(Error::Parse { row: 2, .. })));
        std::fs::write(&p, "x_1,t,y\n0.1,0,NaN\n").unwrap();
        assert!(matches!(load_csv(&p, false), Err(Error::Parse { row: 1, .. })));
        std::fs::write(&p, "x_1,t,y\nabc,0,1\n").unwrap();
        assert!(matches!(load_csv(&p, false), Err(Error::Parse { row: 1, .. })));
        std::fs::write(&p, "x_1,t,y\n0.1,0,1\n").unwrap();
        assert!(matches!(load_csv(&p, true), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn empty_dataset_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        save_csv(&Dataset::empty("e", 3), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x_1,x_2,x_3,t,y\n");
    }

    #[test]
    fn ground_truth_adds_two_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let s = FactualSample::new(vec![1.0, 2.0, 3.0, 4.0], Treatment::Treated, 1.0).with_truth(0.0, 2.0);
        save_csv(&Dataset::new("g", 4, vec![s]).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 4 + 4);
        assert!(header.ends_with("mu0,mu1"));
        assert!(load_csv(&p, true).unwrap().has_ground_truth());
    }

    #[test]
    fn mixed_ground_truth_rejected() {
        let a = FactualSample::new(vec![0.0], Treatment::Control, 0.0).with_truth(0.0, 0.0);
        let b = FactualSample::new(vec![0.0], Treatment::Control, 0.0);
        assert!(Dataset::new("m", 1, vec![a, b]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(10);
        let spec = SplitSpec { train_fraction: 0.7, seed: 1 };
        let (a, b) = split_indices(ds.len(), &spec).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(split_indices(ds.len(), &spec).unwrap(), (a, b));
        let (train, test) = split(&ds, &spec).unwrap();
        assert_eq!((train.len(), test.len()), (7, 3));
        assert!(split(&toy(1), &spec).is_err());
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..5, 0usize..12, any::<bool>()).prop_flat_map(|(d, n, truth)| {
            let row = (
                proptest::collection::vec(-1e300f64..1e300, d),
                any::<bool>(),
                proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO,
                -1e10f64..1e10,
                -1e-10f64..1e-10,
            );
            proptest::collection::vec(row, n).prop_map(move |rows| {
                let samples = rows
                    .into_iter()
                    .map(|(x, t, y, m0, m1)| {
                        let t = if t { Treatment::Treated } else { Treatment::Control };
                        let s = FactualSample::new(x, t, y);
                        if truth {
                            s.with_truth(m0, m1)
                        } else {
                            s
                        }
                    })
                    .collect();
                Dataset::new("p", d, samples).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(ds in arb_dataset()) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.csv");
            save_csv(&ds, &p).unwrap();
            let back = load_csv(&p, ds.has_ground_truth()).unwrap();
            prop_assert_eq!(back.d(), ds.d());
            prop_assert_eq!(back.samples(), ds.samples());
        }

        #[test]
        fn split_is_a_partition(n in 2usize..=100, f in 0.01f64..0.99, seed in any::<u64>()) {
            let spec = SplitSpec { train_fraction: f, seed };
            let (a, b) = split_indices(n, &spec).unwrap();
            prop_assert!(!a.is_empty() && !b.is_empty());
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(split_indices(n, &spec).unwrap(), (a, b));
        }
    }
}
