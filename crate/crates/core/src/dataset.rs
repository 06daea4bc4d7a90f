//! Labeled-image ingestion, exposure/resolution screening, class histograms
//! and the multi-rater golden set.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Serialize, Serializer};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::types::{ImageBuffer, SeverityLabel, SeverityScore};

/// Number of raters who labeled every golden image.
pub const PANEL_SIZE: usize = 11;

const MANIFEST_HEADER: [&str; 4] = ["image_id", "path", "rater_id", "label"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    pub image_id: String,
    pub path: PathBuf,
    pub rater_id: String,
    pub label: SeverityLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Grade 0, "not acne".
    ExcludedClass,
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    pub line: usize,
    pub image_id: String,
    pub label: i64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub accepted: Vec<LabeledImage>,
    pub rejected: Vec<RejectedRow>,
}

impl Manifest {
    pub fn total_rows(&self) -> usize {
        self.accepted.len() + self.rejected.len()
    }
}

/// Reads a training manifest (`image_id,path,rater_id,label`).
///
/// Relative paths are resolved against the manifest's directory. Rows whose
/// label is 0 or outside 1..=5 are returned in [`Manifest::rejected`].
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Manifest { line: 1, cause: e.to_string() })?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest {
            line: 1,
            cause: format!("expected header {}", MANIFEST_HEADER.join(",")),
        });
    }

    let mut manifest = Manifest::default();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Manifest {
            line: e.position().map_or(0, |p| p.line() as usize),
            cause: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or_default();
        let (image_id, rel, rater_id, label_text) = (field(0), field(1), field(2), field(3));
        if image_id.is_empty() || rel.is_empty() || rater_id.is_empty() {
            return Err(Error::Manifest {
                line,
                cause: "empty image_id, path or rater_id".into(),
            });
        }
        let label: i64 = label_text.parse().map_err(|_| Error::Manifest {
            line,
            cause: format!("label {label_text:?} is not an integer"),
        })?;
        if !seen.insert((image_id.to_owned(), rater_id.to_owned())) {
            return Err(Error::Manifest {
                line,
                cause: format!("duplicate label for image {image_id:?} by rater {rater_id:?}"),
            });
        }
        match SeverityLabel::new(label) {
            Ok(label) => manifest.accepted.push(LabeledImage {
                image_id: image_id.to_owned(),
                path: base_dir.join(rel),
                rater_id: rater_id.to_owned(),
                label,
            }),
            Err(_) => manifest.rejected.push(RejectedRow {
                line,
                image_id: image_id.to_owned(),
                label,
                reason: if label == 0 {
                    RejectReason::ExcludedClass
                } else {
                    RejectReason::OutOfRange
                },
            }),
        }
    }
    Ok(manifest)
}

/// A training image and the label shared by all of its patches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLabel {
    pub image_id: String,
    pub path: PathBuf,
    pub label: SeverityLabel,
}

/// Collapses accepted rows to one entry per image, in order of first
/// appearance. Several raters on one image are combined by discretizing the
/// mean of their labels.
pub fn image_labels(manifest: &Manifest) -> Result<Vec<ImageLabel>> {
    let mut order: Vec<(String, PathBuf, Vec<SeverityLabel>)> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for row in &manifest.accepted {
        match index.get(&row.image_id) {
            Some(&i) => {
                let entry: &mut (String, PathBuf, Vec<SeverityLabel>) = &mut order[i];
                if entry.1 != row.path {
                    return Err(Error::Manifest {
                        line: 0,
                        cause: format!("image {:?} listed with two different paths", row.image_id),
                    });
                }
                entry.2.push(row.label);
            }
            None => {
                index.insert(row.image_id.clone(), order.len());
                order.push((row.image_id.clone(), row.path.clone(), vec![row.label]));
            }
        }
    }
    order
        .into_iter()
        .map(|(image_id, path, labels)| {
            let mean = labels.iter().map(|l| l.as_f64()).sum::<f64>() / labels.len() as f64;
            Ok(ImageLabel {
                image_id,
                path,
                label: crate::model::discretize(crate::types::clamp_score(mean)?),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityConfig {
    /// Mean luma below this (0..=255 scale) is underexposed.
    pub luma_lo: f64,
    /// Mean luma above this is overexposed.
    pub luma_hi: f64,
    /// Shorter image side below this is too low resolution.
    pub min_side: u32,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            luma_lo: 30.0,
            luma_hi: 225.0,
            min_side: 256,
        }
    }
}

impl QualityConfig {
    pub const KEYS: [&'static str; 3] = ["luma_lo", "luma_hi", "min_side"];

    /// Overrides defaults with any of `luma_lo`, `luma_hi`, `min_side` present
    /// in `kv`. Other keys are ignored here; callers validate the full key set.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            luma_lo: kv.get("luma_lo")?.unwrap_or(d.luma_lo),
            luma_hi: kv.get("luma_hi")?.unwrap_or(d.luma_hi),
            min_side: kv.get("min_side")?.unwrap_or(d.min_side),
        };
        if !(cfg.luma_lo <= cfg.luma_hi) {
            return Err(Error::Config(format!(
                "luma_lo {} must not exceed luma_hi {}",
                cfg.luma_lo, cfg.luma_hi
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        kv.reject_unknown(&Self::KEYS)?;
        Self::from_kv(&kv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QualityReason {
    Ok,
    Underexposed,
    Overexposed,
    LowResolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QualityVerdict {
    pub keep: bool,
    pub reason: QualityReason,
}

impl QualityVerdict {
    fn of(reason: QualityReason) -> Self {
        Self {
            keep: reason == QualityReason::Ok,
            reason,
        }
    }
}

/// Screens out badly exposed or tiny images. Exposure is checked before
/// resolution.
pub fn quality_filter(img: &ImageBuffer, cfg: &QualityConfig) -> QualityVerdict {
    let luma = img.mean_luma();
    let reason = if luma < cfg.luma_lo {
        QualityReason::Underexposed
    } else if luma > cfg.luma_hi {
        QualityReason::Overexposed
    } else if img.width().min(img.height()) < cfg.min_side {
        QualityReason::LowResolution
    } else {
        QualityReason::Ok
    };
    QualityVerdict::of(reason)
}

/// Per-class counts over the five severity grades.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassHistogram {
    counts: [u64; 5],
}

impl ClassHistogram {
    pub fn from_counts(counts: [u64; 5]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, label: SeverityLabel) {
        self.counts[label.index()] += 1;
    }

    pub fn count(&self, label: SeverityLabel) -> u64 {
        self.counts[label.index()]
    }

    pub fn counts(&self) -> [u64; 5] {
        self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

impl Serialize for ClassHistogram {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(5))?;
        for l in SeverityLabel::ALL {
            map.serialize_entry(&l.value().to_string(), &self.count(l))?;
        }
        map.end()
    }
}

impl fmt::Display for ClassHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = SeverityLabel::ALL
            .iter()
            .map(|l| format!("{}:{}", l, self.count(*l)))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

impl FromIterator<SeverityLabel> for ClassHistogram {
    fn from_iter<I: IntoIterator<Item = SeverityLabel>>(iter: I) -> Self {
        let mut h = Self::default();
        iter.into_iter().for_each(|l| h.add(l));
        h
    }
}

pub fn class_distribution(items: &[SeverityLabel]) -> ClassHistogram {
    items.iter().copied().collect()
}

/// A held-out image graded by the whole panel.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenRecord {
    pub image_id: String,
    pub path: PathBuf,
    labels: Vec<(String, SeverityLabel)>,
    consensus: SeverityScore,
}

impl GoldenRecord {
    /// Builds a record from `(rater_id, label)` pairs. Requires
    /// [`PANEL_SIZE`] distinct raters.
    pub fn new(
        image_id: impl Into<String>,
        path: impl Into<PathBuf>,
        labels: Vec<(String, SeverityLabel)>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if labels.len() != PANEL_SIZE {
            return Err(Error::GoldenFormat {
                line: 0,
                cause: format!(
                    "image {image_id:?} has {} labels, expected {PANEL_SIZE}",
                    labels.len()
                ),
            });
        }
        let distinct: HashSet<&str> = labels.iter().map(|(r, _)| r.as_str()).collect();
        if distinct.len() != labels.len() {
            return Err(Error::GoldenFormat {
                line: 0,
                cause: format!("image {image_id:?} has duplicate rater ids"),
            });
        }
        let mean = labels.iter().map(|(_, l)| l.as_f64()).sum::<f64>() / labels.len() as f64;
        Ok(Self {
            image_id,
            path: path.into(),
            consensus: crate::types::clamp_score(mean)?,
            labels,
        })
    }

    pub fn labels(&self) -> &[(String, SeverityLabel)] {
        &self.labels
    }

    pub fn rater_ids(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|(r, _)| r.as_str())
    }

    pub fn label_by(&self, rater_id: &str) -> Option<SeverityLabel> {
        self.labels
            .iter()
            .find(|(r, _)| r == rater_id)
            .map(|(_, l)| *l)
    }

    /// Mean of the panel's labels, unrounded.
    pub fn consensus(&self) -> SeverityScore {
        self.consensus
    }
}

/// Reads a golden CSV: `image_id,path,label_1,...,label_11`.
///
/// Rater ids come from the label column headers with any `label_` prefix
/// removed, so `label_3` becomes rater `"3"`.
pub fn build_golden(path: impl AsRef<Path>) -> Result<Vec<GoldenRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_golden(&text, path.parent().unwrap_or(Path::new("")))
}

pub fn parse_golden(text: &str, base_dir: &Path) -> Result<Vec<GoldenRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::GoldenFormat { line: 1, cause: e.to_string() })?
        .clone();
    if header.get(0) != Some("image_id") || header.get(1) != Some("path") {
        return Err(Error::GoldenFormat {
            line: 1,
            cause: "header must start with image_id,path".into(),
        });
    }
    let raters: Vec<String> = header
        .iter()
        .skip(2)
        .map(|h| h.strip_prefix("label_").unwrap_or(h).to_owned())
        .collect();
    if raters.len() != PANEL_SIZE {
        return Err(Error::GoldenFormat {
            line: 1,
            cause: format!("header has {} label columns, expected {PANEL_SIZE}", raters.len()),
        });
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::GoldenFormat {
            line: e.position().map_or(0, |p| p.line() as usize),
            cause: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let n_labels = record.len().saturating_sub(2);
        if n_labels != PANEL_SIZE {
            return Err(Error::GoldenFormat {
                line,
                cause: format!("{n_labels} labels, expected {PANEL_SIZE}"),
            });
        }
        let labels = raters
            .iter()
            .zip(record.iter().skip(2))
            .map(|(rater, text)| {
                let v: i64 = text.parse().map_err(|_| Error::GoldenFormat {
                    line,
                    cause: format!("label {text:?} is not an integer"),
                })?;
                let label = SeverityLabel::new(v).map_err(|_| Error::GoldenFormat {
                    line,
                    cause: format!("label {v} outside 1..=5"),
                })?;
                Ok((rater.clone(), label))
            })
            .collect::<Result<Vec<_>>>()?;
        let image_id = &record[0];
        let rec = GoldenRecord::new(image_id, base_dir.join(&record[1]), labels).map_err(
            |e| match e {
                Error::GoldenFormat { cause, .. } => Error::GoldenFormat { line, cause },
                other => other,
            },
        )?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(vals: &[i64]) -> Vec<SeverityLabel> {
        vals.iter().map(|v| SeverityLabel::new(*v).unwrap()).collect()
    }

    #[test]
    fn manifest_accepts_valid_rows() {
        let m = parse_manifest(
            "image_id,path,rater_id,label\na,a.png,r1,3\nb,b.png,r2,1\nc,sub/c.jpg,r1,5\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(m.accepted.len(), 3);
        assert!(m.rejected.is_empty());
        assert_eq!(m.accepted[2].path, Path::new("/data/sub/c.jpg"));
        assert_eq!(m.accepted[0].label.value(), 3);
    }

    #[test]
    fn manifest_rejects_excluded_and_out_of_range() {
        let m = parse_manifest(
            "image_id,path,rater_id,label\na,a.png,r1,0\nb,b.png,r1,7\nc,c.png,r1,2\n",
            Path::new(""),
        )
        .unwrap();
        assert_eq!(m.accepted.len(), 1);
        assert_eq!(m.rejected[0].reason, RejectReason::ExcludedClass);
        assert_eq!(m.rejected[1].reason, RejectReason::OutOfRange);
        assert_eq!(m.rejected[1].line, 3);
        assert_eq!(m.total_rows(), 3);
    }

    #[test]
    fn image_labels_group_raters() {
        let m = parse_manifest(
            "image_id,path,rater_id,label\nb,b.png,r1,2\na,a.png,r1,3\nb,b.png,r2,3\na,a.png,r2,0\n",
            Path::new(""),
        )
        .unwrap();
        let v = image_labels(&m).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!((v[0].image_id.as_str(), v[0].label.value()), ("b", 3));
        assert_eq!((v[1].image_id.as_str(), v[1].label.value()), ("a", 3));
        let clash = parse_manifest(
            "image_id,path,rater_id,label\na,a.png,r1,3\na,other.png,r2,3\n",
            Path::new(""),
        )
        .unwrap();
        assert!(image_labels(&clash).is_err());
    }

    #[test]
    fn manifest_malformed_rows_report_line() {
        let err = parse_manifest(
            "image_id,path,rater_id,label\na,a.png,r1,2\nb,b.png,r1,x\n",
            Path::new(""),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 3, .. }), "{err:?}");
        assert!(parse_manifest("id,path\n", Path::new("")).is_err());
        let dup = parse_manifest(
            "image_id,path,rater_id,label\na,a.png,r1,2\na,a.png,r1,3\n",
            Path::new(""),
        );
        assert!(matches!(dup, Err(Error::Manifest { line: 3, .. })));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        assert!(matches!(
            load_manifest("/nonexistent/manifest.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn quality_examples() {
        let cfg = QualityConfig::default();
        let black = ImageBuffer::filled(512, 512, [0, 0, 0]);
        assert_eq!(
            quality_filter(&black, &cfg),
            QualityVerdict { keep: false, reason: QualityReason::Underexposed }
        );
        let gray = ImageBuffer::filled(1024, 1024, [128, 128, 128]);
        assert!(quality_filter(&gray, &cfg).keep);
        let small = ImageBuffer::filled(100, 100, [128, 128, 128]);
        assert_eq!(quality_filter(&small, &cfg).reason, QualityReason::LowResolution);
        let white = ImageBuffer::filled(300, 300, [250, 250, 250]);
        assert_eq!(quality_filter(&white, &cfg).reason, QualityReason::Overexposed);
    }

    #[test]
    fn quality_config_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.conf");
        std::fs::write(&p, "luma_lo=10\nmin_side=64\n").unwrap();
        let cfg = QualityConfig::load(&p).unwrap();
        assert_eq!(cfg.luma_lo, 10.0);
        assert_eq!(cfg.luma_hi, 225.0);
        assert_eq!(cfg.min_side, 64);
        std::fs::write(&p, "luma_low=10\n").unwrap();
        assert!(QualityConfig::load(&p).is_err());
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(class_distribution(&[]).counts(), [0; 5]);
        let h = class_distribution(&labels(&[3, 3, 2]));
        assert_eq!(h.counts(), [0, 1, 2, 0, 0]);
        assert_eq!(h.total(), 3);
    }

    #[test]
    fn golden_consensus_examples() {
        let header = "image_id,path,label_1,label_2,label_3,label_4,label_5,label_6,label_7,label_8,label_9,label_10,label_11\n";
        let text = format!(
            "{header}a,a.png,3,3,3,3,3,3,3,3,3,3,3\nb,b.png,3,3,3,3,3,3,4,4,4,4,4\n"
        );
        let g = parse_golden(&text, Path::new("")).unwrap();
        assert_eq!(g[0].consensus().value(), 3.0);
        assert!((g[1].consensus().value() - 38.0 / 11.0).abs() < 1e-12);
        assert_eq!(g[1].label_by("7").unwrap().value(), 4);

        let short = format!("{header}c,c.png,3,3,3,3,3,3,3,3,3,3\n");
        assert!(matches!(
            parse_golden(&short, Path::new("")),
            Err(Error::GoldenFormat { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn histogram_is_order_invariant(mut v in proptest::collection::vec(1i64..=5, 0..60), seed in any::<u64>()) {
            let before = class_distribution(&labels(&v));
            // deterministic shuffle by rotating and reversing
            let k = (seed as usize) % (v.len().max(1));
            v.rotate_left(k);
            v.reverse();
            let after = class_distribution(&labels(&v));
            prop_assert_eq!(before, after);
            prop_assert_eq!(after.total() as usize, v.len());
        }

        #[test]
        fn golden_consensus_is_mean(vals in proptest::collection::vec(1i64..=5, PANEL_SIZE)) {
            let ls: Vec<(String, SeverityLabel)> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| (i.to_string(), SeverityLabel::new(*v).unwrap()))
                .collect();
            let rec = GoldenRecord::new("x", "x.png", ls).unwrap();
            let mean = vals.iter().sum::<i64>() as f64 / PANEL_SIZE as f64;
            prop_assert!((rec.consensus().value() - mean).abs() <= 1e-12);
            prop_assert!((1.0..=5.0).contains(&rec.consensus().value()));
        }

        #[test]
        fn quality_filter_is_deterministic(w in 1u32..40, h in 1u32..40, v in any::<u8>()) {
            let img = ImageBuffer::filled(w, h, [v, v / 2, 255 - v]);
            let cfg = QualityConfig { min_side: 20, ..QualityConfig::default() };
            prop_assert_eq!(quality_filter(&img, &cfg), quality_filter(&img.clone(), &cfg));
        }
    }
}
