//! Embedding tables, dataset metadata and their on-disk formats.
//!
//! A feature file pair consists of `<prefix>.bin` and `<prefix>.meta`.
//!
//! Binary layout, all little-endian:
//!
//! | field   | type      |
//! |---------|-----------|
//! | magic   | `XCONFEAT` (8 bytes) |
//! | version | u32 = 1   |
//! | n       | u64       |
//! | d       | u32       |
//! | views   | u32 (≥ 1) |
//! | payload | n × views × d f32, image-major, view-minor |
//!
//! The metadata file holds one tab-separated line per image:
//! `id`, `label` (integer, or `-` when unknown), `L`/`U`. Lines starting
//! with `#` are comments.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, XconError};
use crate::scalar::Scalar;

pub const FEATURE_MAGIC: &[u8; 8] = b"XCONFEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 4 + 4;

/// Rows below this norm cannot be normalized.
pub const ZERO_NORM: f64 = 1e-12;
/// Allowed deviation from unit norm for rows of a normalized matrix.
pub const UNIT_NORM_TOL: f64 = 1e-5;

/// An `n × views × d` embedding table.
///
/// View 0 is the primary view used for clustering; additional views are
/// alternative augmentations of the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T: Scalar> {
    data: Array3<T>,
    normalized: bool,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Validates and wraps an `(n, views, d)` array.
    pub fn new(data: Array3<T>) -> Result<Self> {
        let (n, v, d) = data.dim();
        if n == 0 || v == 0 || d == 0 {
            return Err(XconError::Empty);
        }
        for ((row, view, col), x) in data.indexed_iter() {
            if !x.is_finite() {
                return Err(XconError::NonFinite { row, view, col });
            }
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            normalized: false,
        })
    }

    /// Single-view matrix from an `n × d` array.
    pub fn from_rows(rows: Array2<T>) -> Result<Self> {
        let (n, d) = rows.dim();
        let data = rows
            .into_shape_with_order((n, 1, d))
            .map_err(|e| XconError::Shape(e.to_string()))?;
        Self::new(data)
    }

    /// Builds a matrix from row slices (single view).
    pub fn from_row_vecs(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(XconError::Empty);
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(XconError::Shape("ragged rows".into()));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((n, d), flat).map_err(|e| XconError::Shape(e.to_string()))?;
        Self::from_rows(arr)
    }

    /// Marks the matrix as normalized after checking every row norm.
    pub fn into_normalized_checked(mut self) -> Result<Self> {
        for (i, row) in self.data.outer_iter().enumerate() {
            for view in row.outer_iter() {
                let norm = view.dot(&view).sqrt().as_f64();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(XconError::InvalidArgument(format!(
                        "row {i} has norm {norm}, not unit"
                    )));
                }
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.data.dim().0
    }

    pub fn views(&self) -> usize {
        self.data.dim().1
    }

    pub fn d(&self) -> usize {
        self.data.dim().2
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn raw(&self) -> &Array3<T> {
        &self.data
    }

    /// The `n × d` slice for one view (strided when `views > 1`).
    pub fn view(&self, v: usize) -> ArrayView2<'_, T> {
        self.data.slice(s![.., v, ..])
    }

    pub fn primary(&self) -> ArrayView2<'_, T> {
        self.view(0)
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.slice(s![i, 0, ..])
    }

    pub fn row_view(&self, i: usize, v: usize) -> ArrayView1<'_, T> {
        self.data.slice(s![i, v, ..])
    }

    /// Scales every row of every view to unit L2 norm.
    pub fn l2_normalize(mut self) -> Result<Self> {
        for (i, mut row) in self.data.outer_iter_mut().enumerate() {
            for mut view in row.outer_iter_mut() {
                let norm = view.dot(&view).sqrt();
                if norm.as_f64() < ZERO_NORM {
                    return Err(XconError::ZeroVector { row: i });
                }
                view.mapv_inplace(|x| x / norm);
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            data: self.data.mapv(|x| U::of(x.as_f64())),
            normalized: self.normalized,
        }
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), rows),
            normalized: self.normalized,
        }
    }

    /// Keeps only view `v`.
    pub fn single_view(&self, v: usize) -> Self {
        Self {
            data: self.data.slice(s![.., v..v + 1, ..]).to_owned(),
            normalized: self.normalized,
        }
    }

    /// Replaces the payload with a transformed `n × d` primary view.
    pub fn map_primary(&self, rows: Array2<T>) -> Result<Self> {
        Self::from_rows(rows)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, v, d) = self.data.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + n * v * d * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(v as u32).to_le_bytes());
        for x in self.data.iter() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != FEATURE_MAGIC {
            return Err(XconError::BadMagic { expected: "XCONFEAT" });
        }
        if bytes.len() < HEADER_LEN {
            return Err(XconError::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FEATURE_VERSION {
            return Err(XconError::VersionMismatch {
                found: version,
                expected: FEATURE_VERSION,
            });
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let v = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;
        if n == 0 || d == 0 || v == 0 {
            return Err(XconError::Empty);
        }
        let count = n
            .checked_mul(v)
            .and_then(|x| x.checked_mul(d))
            .ok_or_else(|| XconError::Shape("declared size overflows".into()))?;
        let expected = HEADER_LEN + count * 4;
        if bytes.len() < expected {
            return Err(XconError::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        let values: Vec<T> = bytes[HEADER_LEN..expected]
            .chunks_exact(4)
            .map(|c| T::of(f64::from(f32::from_le_bytes(c.try_into().unwrap()))))
            .collect();
        let data =
            Array3::from_shape_vec((n, v, d), values).map_err(|e| XconError::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn write_bin(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| XconError::io(path, e))
    }

    pub fn read_bin(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| XconError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Per-row identity, label and labeled flag for a feature table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetView {
    ids: Vec<String>,
    labels: Vec<Option<usize>>,
    labeled: Vec<bool>,
    seen_classes: BTreeSet<usize>,
}

impl DatasetView {
    /// Builds a view; the seen-class set is derived from the labeled rows.
    pub fn new(ids: Vec<String>, labels: Vec<Option<usize>>, labeled: Vec<bool>) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != labeled.len() {
            return Err(XconError::InvalidView("column lengths differ".into()));
        }
        let mut uniq = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !uniq.insert(id.as_str()) {
                return Err(XconError::InvalidView(format!("duplicate id {id:?}")));
            }
        }
        let mut seen_classes = BTreeSet::new();
        for (i, (&is_l, label)) in labeled.iter().zip(&labels).enumerate() {
            if is_l {
                match label {
                    Some(c) => {
                        seen_classes.insert(*c);
                    }
                    None => {
                        return Err(XconError::InvalidView(format!(
                            "labeled row {i} has no label"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            ids,
            labels,
            labeled,
            seen_classes,
        })
    }

    /// View with generated ids `"0"`, `"1"`, ...
    pub fn with_generated_ids(labels: Vec<Option<usize>>, labeled: Vec<bool>) -> Result<Self> {
        let ids = (0..labels.len()).map(|i| i.to_string()).collect();
        Self::new(ids, labels, labeled)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn labeled_mask(&self) -> &[bool] {
        &self.labeled
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    pub fn seen_classes(&self) -> &BTreeSet<usize> {
        &self.seen_classes
    }

    /// Every class that appears anywhere, labeled or as held-out truth.
    pub fn all_classes(&self) -> BTreeSet<usize> {
        self.labels.iter().flatten().copied().collect()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labeled[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labeled[i]).collect()
    }

    /// Training-time view: labels are kept only on labeled rows.
    pub fn without_truth(&self) -> Self {
        let labels = self
            .labels
            .iter()
            .zip(&self.labeled)
            .map(|(l, &is_l)| if is_l { *l } else { None })
            .collect();
        Self {
            ids: self.ids.clone(),
            labels,
            labeled: self.labeled.clone(),
            seen_classes: self.seen_classes.clone(),
        }
    }

    /// Copy of the view with some labeled rows turned into unlabeled ones.
    pub fn with_unlabeled(&self, rows: &[usize]) -> Result<Self> {
        let mut labeled = self.labeled.clone();
        for &r in rows {
            labeled[r] = false;
        }
        Self::new(self.ids.clone(), self.labels.clone(), labeled)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&i| self.ids[i].clone()).collect(),
            rows.iter().map(|&i| self.labels[i]).collect(),
            rows.iter().map(|&i| self.labeled[i]).collect(),
        )
    }

    pub fn to_meta_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let label = self.labels[i].map_or_else(|| "-".to_string(), |c| c.to_string());
            let flag = if self.labeled[i] { "L" } else { "U" };
            out.push_str(&format!("{}\t{}\t{}\n", self.ids[i], label, flag));
        }
        out
    }

    pub fn parse_meta(text: &str) -> Result<Self> {
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut labeled = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 {
                return Err(XconError::Metadata {
                    line: lineno + 1,
                    reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            ids.push(fields[0].to_string());
            labels.push(match fields[1] {
                "-" => None,
                s => Some(s.parse::<usize>().map_err(|_| XconError::Metadata {
                    line: lineno + 1,
                    reason: format!("bad label {s:?}"),
                })?),
            });
            labeled.push(match fields[2] {
                "L" => true,
                "U" => false,
                s => {
                    return Err(XconError::Metadata {
                        line: lineno + 1,
                        reason: format!("bad labeled flag {s:?}"),
                    })
                }
            });
        }
        Self::new(ids, labels, labeled)
    }

    pub fn write_meta(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_meta_string()).map_err(|e| XconError::io(path, e))
    }

    pub fn read_meta(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| XconError::io(path, e))?;
        Self::parse_meta(&text)
    }
}

/// `All` / `Old` / `New` evaluation subsets over the rows of a view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetMasks {
    pub all: Vec<bool>,
    pub old: Vec<bool>,
    pub new: Vec<bool>,
}

impl SubsetMasks {
    pub fn count_all(&self) -> usize {
        self.all.iter().filter(|&&b| b).count()
    }

    pub fn count_old(&self) -> usize {
        self.old.iter().filter(|&&b| b).count()
    }

    pub fn count_new(&self) -> usize {
        self.new.iter().filter(|&&b| b).count()
    }
}

/// Unlabeled rows split by whether their true class was seen.
pub fn build_subset_masks(view: &DatasetView) -> Result<SubsetMasks> {
    let n = view.len();
    let mut masks = SubsetMasks {
        all: vec![false; n],
        old: vec![false; n],
        new: vec![false; n],
    };
    for i in 0..n {
        if view.is_labeled(i) {
            continue;
        }
        let label = view.labels()[i].ok_or(XconError::MissingTruth { row: i })?;
        masks.all[i] = true;
        if view.seen_classes().contains(&label) {
            masks.old[i] = true;
        } else {
            masks.new[i] = true;
        }
    }
    Ok(masks)
}

pub fn bin_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix.as_ref(), "bin")
}

pub fn meta_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix.as_ref(), "meta")
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Loads `<prefix>.bin` and `<prefix>.meta`.
pub fn load_features(prefix: impl AsRef<Path>) -> Result<(FeatureMatrix<f32>, DatasetView)> {
    let prefix = prefix.as_ref();
    load_feature_pair(bin_path(prefix), meta_path(prefix))
}

pub fn load_feature_pair(
    bin: impl AsRef<Path>,
    meta: impl AsRef<Path>,
) -> Result<(FeatureMatrix<f32>, DatasetView)> {
    let m = FeatureMatrix::read_bin(bin)?;
    let view = DatasetView::read_meta(meta)?;
    if view.len() != m.n() {
        return Err(XconError::RowCountMismatch {
            meta: view.len(),
            features: m.n(),
        });
    }
    Ok((m, view))
}

pub fn save_features<T: Scalar>(
    prefix: impl AsRef<Path>,
    m: &FeatureMatrix<T>,
    view: &DatasetView,
) -> Result<()> {
    let prefix = prefix.as_ref();
    if view.len() != m.n() {
        return Err(XconError::RowCountMismatch {
            meta: view.len(),
            features: m.n(),
        });
    }
    m.write_bin(bin_path(prefix))?;
    view.write_meta(meta_path(prefix))
}

/// Writes `id<TAB>value` lines, used for partitions and predictions.
pub fn write_index_file(path: impl AsRef<Path>, ids: &[String], values: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| XconError::io(path, e))?;
    for (id, v) in ids.iter().zip(values) {
        writeln!(f, "{id}\t{v}").map_err(|e| XconError::io(path, e))?;
    }
    Ok(())
}

/// Reads an `id<TAB>value` file and orders the values by `ids`.
pub fn read_index_file(path: impl AsRef<Path>, ids: &[String]) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| XconError::io(path, e))?;
    let mut by_id = std::collections::HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, v) = line.split_once('\t').ok_or_else(|| XconError::Metadata {
            line: lineno + 1,
            reason: "expected id<TAB>index".into(),
        })?;
        let v: usize = v.trim().parse().map_err(|_| XconError::Metadata {
            line: lineno + 1,
            reason: format!("bad index {v:?}"),
        })?;
        by_id.insert(id.to_string(), v);
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| XconError::InvalidView(format!("id {id:?} missing from {}", path.display())))
        })
        .collect()
}
