//! On-disk patch index.
//!
//! UTF-8 comma-separated text with the header
//! `patch_id,slide_id,x,y,mpp,width,height,label,split,fold,path`.
//! `label` and `fold` are empty when absent. Paths are written relative to the
//! manifest's directory when possible and resolved on load. Class names, when
//! known, live in a `<manifest>.classes.json` sidecar.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::patch::{Patch, Split};
use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 11] =
    ["patch_id", "slide_id", "x", "y", "mpp", "width", "height", "label", "split", "fold", "path"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Unsupervised,
    Supervised,
}

/// Metadata row for one stored patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub mpp: f64,
    pub width: u32,
    pub height: u32,
    pub label: Option<usize>,
    pub split: Split,
    pub fold: Option<u32>,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub kind: DatasetKind,
    pub class_names: Option<Vec<String>>,
    pub records: Vec<PatchRecord>,
}

impl Manifest {
    /// Validates id uniqueness and label consistency.
    pub fn new(kind: DatasetKind, class_names: Option<Vec<String>>, records: Vec<PatchRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.patch_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate patch_id `{}`", r.patch_id)));
            }
            match (kind, r.label) {
                (DatasetKind::Unsupervised, Some(_)) => {
                    return Err(Error::Manifest(format!("unsupervised record `{}` has a label", r.patch_id)))
                }
                (DatasetKind::Supervised, None) => {
                    return Err(Error::Manifest(format!("supervised record `{}` has no label", r.patch_id)))
                }
                (DatasetKind::Supervised, Some(l)) => {
                    if let Some(names) = &class_names {
                        if l >= names.len() {
                            return Err(Error::Manifest(format!(
                                "record `{}` label {l} out of range for {} classes",
                                r.patch_id,
                                names.len()
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(Self { kind, class_names, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of classes: from class names if known, else `max label + 1`.
    pub fn n_classes(&self) -> usize {
        match &self.class_names {
            Some(n) => n.len(),
            None => self.records.iter().filter_map(|r| r.label).max().map_or(0, |m| m + 1),
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().filter_map(|r| r.label).collect()
    }

    pub fn filter(&self, pred: impl Fn(&PatchRecord) -> bool) -> Manifest {
        Manifest {
            kind: self.kind,
            class_names: self.class_names.clone(),
            records: self.records.iter().filter(|r| pred(r)).cloned().collect(),
        }
    }

    pub fn split(&self, split: Split) -> Manifest {
        self.filter(|r| r.split == split)
    }

    pub fn slide_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.slide_id.clone()).collect()
    }

    /// Record counts per `(split, label)`.
    pub fn class_counts(&self) -> BTreeMap<(Split, usize), usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            if let Some(l) = r.label {
                *m.entry((r.split, l)).or_insert(0) += 1;
            }
        }
        m
    }

    /// Loads every referenced image, in record order.
    pub fn load_images(&self) -> Result<Vec<RgbImage>> {
        self.records
            .iter()
            .map(|r| {
                if !r.path.exists() {
                    return Err(Error::MissingFile(r.path.clone()));
                }
                Ok(image::open(&r.path)?.to_rgb8())
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    patch_id: String,
    slide_id: String,
    x: u32,
    y: u32,
    mpp: f64,
    width: u32,
    height: u32,
    label: Option<usize>,
    split: Split,
    fold: Option<u32>,
    path: String,
}

fn classes_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".classes.json");
    path.with_file_name(name)
}

fn manifest_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let dir = manifest_dir(path);
    let abs_dir = std::fs::canonicalize(&dir).unwrap_or(dir.clone());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in &manifest.records {
        let rel = r
            .path
            .strip_prefix(&abs_dir)
            .or_else(|_| r.path.strip_prefix(&dir))
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| r.path.clone());
        w.serialize(Row {
            patch_id: r.patch_id.clone(),
            slide_id: r.slide_id.clone(),
            x: r.x,
            y: r.y,
            mpp: r.mpp,
            width: r.width,
            height: r.height,
            label: r.label,
            split: r.split,
            fold: r.fold,
            path: rel.to_string_lossy().into_owned(),
        })?;
    }
    w.flush()?;
    let sidecar = classes_sidecar(path);
    match &manifest.class_names {
        Some(names) => std::fs::write(sidecar, serde_json::to_string_pretty(names)?)?,
        None => {
            if sidecar.exists() {
                std::fs::remove_file(sidecar)?;
            }
        }
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let dir = std::fs::canonicalize(manifest_dir(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let missing: Vec<&str> =
        MANIFEST_HEADER.iter().copied().filter(|col| !headers.iter().any(|h| h == *col)).collect();
    if !missing.is_empty() {
        return Err(Error::Manifest(format!("missing columns: {}", missing.join(", "))));
    }
    let mut records = Vec::new();
    for (line, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Manifest(format!("line {}: {e}", line + 2)))?;
        let p = PathBuf::from(&row.path);
        let resolved = if p.is_absolute() { p } else { dir.join(p) };
        if !resolved.exists() {
            return Err(Error::Manifest(format!(
                "patch `{}` references missing file {}",
                row.patch_id,
                resolved.display()
            )));
        }
        records.push(PatchRecord {
            patch_id: row.patch_id,
            slide_id: row.slide_id,
            x: row.x,
            y: row.y,
            mpp: row.mpp,
            width: row.width,
            height: row.height,
            label: row.label,
            split: row.split,
            fold: row.fold,
            path: resolved,
        });
    }
    let labelled = records.iter().filter(|r| r.label.is_some()).count();
    let kind = if labelled == 0 && !records.is_empty() {
        DatasetKind::Unsupervised
    } else if labelled == records.len() && !records.is_empty() {
        DatasetKind::Supervised
    } else if records.is_empty() {
        DatasetKind::Unsupervised
    } else {
        return Err(Error::Manifest("manifest mixes labelled and unlabelled rows".into()));
    };
    let sidecar = classes_sidecar(path);
    let class_names = if sidecar.exists() {
        Some(serde_json::from_reader(std::fs::File::open(sidecar)?)?)
    } else {
        None
    };
    let kind = if class_names.is_some() && records.is_empty() { DatasetKind::Supervised } else { kind };
    Manifest::new(kind, class_names, records)
}

/// Patches held in memory together with dataset-level metadata.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub kind: DatasetKind,
    pub class_names: Option<Vec<String>>,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    /// Writes each patch as a PNG under `dir/patches/` and the manifest as
    /// `dir/<manifest_name>`.
    pub fn save(&self, dir: &Path, manifest_name: &str) -> Result<Manifest> {
        let patch_dir = dir.join("patches");
        std::fs::create_dir_all(&patch_dir)?;
        let abs = std::fs::canonicalize(&patch_dir)?;
        let mut records = Vec::with_capacity(self.patches.len());
        for p in &self.patches {
            let path = abs.join(format!("{}.png", p.patch_id));
            p.pixels.save(&path)?;
            records.push(PatchRecord {
                patch_id: p.patch_id.clone(),
                slide_id: p.slide_id.clone(),
                x: p.x,
                y: p.y,
                mpp: p.mpp,
                width: p.pixels.width(),
                height: p.pixels.height(),
                label: p.label,
                split: p.split,
                fold: p.fold,
                path,
            });
        }
        let manifest = Manifest::new(self.kind, self.class_names.clone(), records)?;
        write_manifest(&dir.join(manifest_name), &manifest)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dir: &Path, id: &str, label: Option<usize>) -> PatchRecord {
        let path = dir.join(format!("{id}.png"));
        RgbImage::new(2, 2).save(&path).unwrap();
        PatchRecord {
            patch_id: id.into(),
            slide_id: "s0".into(),
            x: 0,
            y: 0,
            mpp: 0.5,
            width: 2,
            height: 2,
            label,
            split: Split::Train,
            fold: None,
            path,
        }
    }

    #[test]
    fn round_trip_and_line_count() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = std::fs::canonicalize(tmp.path()).unwrap();
        let records: Vec<_> = (0..10).map(|i| record(&dir, &format!("p{i}"), Some(i % 2))).collect();
        let m = Manifest::new(DatasetKind::Supervised, Some(vec!["a".into(), "b".into()]), records).unwrap();
        let path = dir.join("manifest.csv");
        write_manifest(&path, &m).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert_eq!(text.lines().next().unwrap(), MANIFEST_HEADER.join(","));
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn duplicate_id_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = std::fs::canonicalize(tmp.path()).unwrap();
        let path = dir.join("m.csv");
        let r = record(&dir, "dup", None);
        let m = Manifest { kind: DatasetKind::Unsupervised, class_names: None, records: vec![r.clone(), r] };
        write_manifest(&path, &m).unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("dup"), "{err}");
    }

    #[test]
    fn dangling_path_and_missing_column_are_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = std::fs::canonicalize(tmp.path()).unwrap();
        let r = record(&dir, "p0", None);
        let m = Manifest::new(DatasetKind::Unsupervised, None, vec![r.clone()]).unwrap();
        let path = dir.join("m.csv");
        write_manifest(&path, &m).unwrap();
        std::fs::remove_file(&r.path).unwrap();
        assert!(load_manifest(&path).unwrap_err().to_string().contains("missing file"));

        std::fs::write(&path, "patch_id,slide_id\np0,s0\n").unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("missing columns") && err.contains("mpp"), "{err}");
    }

    #[test]
    fn label_out_of_range_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let r = record(tmp.path(), "p0", Some(3));
        assert!(Manifest::new(DatasetKind::Supervised, Some(vec!["a".into()]), vec![r]).is_err());
    }
}
