//! Boosted Haar-feature cascade, evaluated from OpenCV's XML cascade format
//! (`stageType BOOST`, `featureType HAAR`, upright features).
//!
//! Detection follows the usual scheme: an image pyramid with a fixed-size
//! window, per-window variance normalization, and neighbour grouping of the
//! raw hits. The group size is reported as the detection's confidence.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::GrayImage;
use roxmltree::{Document, Node};

use super::backends::EyeBackend;
use super::landmarks::EyeCandidate;
use crate::error::BackendError;
use crate::types::{ImageBuffer, Rect};

#[derive(Debug, Clone)]
struct WeakTree {
    // (left, right, feature, threshold); child indices <= 0 address leaves.
    nodes: Vec<(i32, i32, usize, f32)>,
    leaves: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Stage {
    threshold: f32,
    trees: Vec<WeakTree>,
}

#[derive(Debug, Clone)]
struct Feature {
    rects: Vec<(u32, u32, u32, u32, f32)>,
}

#[derive(Debug, Clone)]
pub struct HaarCascade {
    width: u32,
    height: u32,
    stages: Vec<Stage>,
    features: Vec<Feature>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    /// Smallest detection side in source pixels; defaults to the window size.
    pub min_side: Option<u32>,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            scale_factor: 1.1,
            min_neighbors: 3,
            min_side: None,
        }
    }
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>, String> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .ok_or_else(|| format!("missing <{name}>"))
}

fn numbers<T: std::str::FromStr>(node: Node<'_, '_>) -> Result<Vec<T>, String> {
    node.text()
        .unwrap_or_default()
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| format!("bad number {t:?}")))
        .collect()
}

fn scalar<T: std::str::FromStr>(node: Node<'_, '_>, name: &str) -> Result<T, String> {
    numbers::<T>(child(node, name)?)?
        .into_iter()
        .next()
        .ok_or_else(|| format!("<{name}> is empty"))
}

fn items<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|c| c.has_tag_name("_"))
}

impl HaarCascade {
    pub fn from_xml(text: &str) -> Result<Self, String> {
        let doc = Document::parse(text).map_err(|e| e.to_string())?;
        let cascade = doc
            .descendants()
            .find(|n| n.has_tag_name("cascade"))
            .ok_or("no <cascade> element")?;
        let stage_type = child(cascade, "stageType")?.text().unwrap_or_default().trim();
        let feature_type = child(cascade, "featureType")?.text().unwrap_or_default().trim();
        if stage_type != "BOOST" || feature_type != "HAAR" {
            return Err(format!("unsupported cascade {stage_type}/{feature_type}"));
        }
        let width: u32 = scalar(cascade, "width")?;
        let height: u32 = scalar(cascade, "height")?;
        if width < 3 || height < 3 {
            return Err(format!("window {width}x{height} too small"));
        }

        let mut features = Vec::new();
        for f in items(child(cascade, "features")?) {
            if let Ok(t) = child(f, "tilted") {
                if numbers::<u32>(t)?.first().copied().unwrap_or(0) != 0 {
                    return Err("tilted features are not supported".into());
                }
            }
            let mut rects = Vec::new();
            for r in items(child(f, "rects")?) {
                let v: Vec<f32> = numbers(r)?;
                let [x, y, w, h, weight] = v[..] else {
                    return Err(format!("feature rect needs 5 numbers, got {}", v.len()));
                };
                let (x, y, w, h) = (x as u32, y as u32, w as u32, h as u32);
                if x + w > width || y + h > height {
                    return Err("feature rect outside window".into());
                }
                rects.push((x, y, w, h, weight));
            }
            features.push(Feature { rects });
        }

        let mut stages = Vec::new();
        for s in items(child(cascade, "stages")?) {
            let threshold: f32 = scalar(s, "stageThreshold")?;
            let mut trees = Vec::new();
            for w in items(child(s, "weakClassifiers")?) {
                let raw: Vec<f64> = numbers(child(w, "internalNodes")?)?;
                let leaves: Vec<f32> = numbers(child(w, "leafValues")?)?;
                if raw.is_empty() || raw.len() % 4 != 0 {
                    return Err("internalNodes must be groups of 4".into());
                }
                let nodes = raw
                    .chunks_exact(4)
                    .map(|c| {
                        let feature = c[2] as usize;
                        if feature >= features.len() {
                            return Err(format!("feature index {feature} out of range"));
                        }
                        Ok((c[0] as i32, c[1] as i32, feature, c[3] as f32))
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                for &(l, r, _, _) in &nodes {
                    for child in [l, r] {
                        let ok = if child <= 0 {
                            ((-child) as usize) < leaves.len()
                        } else {
                            (child as usize) < nodes.len()
                        };
                        if !ok {
                            return Err("tree node points outside the tree".into());
                        }
                    }
                }
                trees.push(WeakTree { nodes, leaves });
            }
            stages.push(Stage { threshold, trees });
        }
        if stages.is_empty() {
            return Err("cascade has no stages".into());
        }
        Ok(Self {
            width,
            height,
            stages,
            features,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let artifact = |reason: String| BackendError::Artifact {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| artifact(e.to_string()))?;
        Self::from_xml(&text).map_err(artifact)
    }

    pub fn window(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Runs the cascade over an image pyramid and returns grouped detections,
    /// strongest first.
    pub fn detect(&self, img: &ImageBuffer, params: &DetectParams) -> Vec<EyeCandidate> {
        let gray = GrayImage::from_fn(img.width(), img.height(), |x, y| {
            let [r, g, b] = img.pixel(x, y);
            image::Luma([crate::types::luma(r, g, b).round() as u8])
        });
        let min_side = params.min_side.unwrap_or(0);
        let mut hits = Vec::new();
        let mut factor = 1.0f64;
        loop {
            let sw = (f64::from(img.width()) / factor).round() as u32;
            let sh = (f64::from(img.height()) / factor).round() as u32;
            if sw < self.width || sh < self.height {
                break;
            }
            let win_w = (f64::from(self.width) * factor).round() as u32;
            if win_w >= min_side {
                let scaled = if factor == 1.0 {
                    gray.clone()
                } else {
                    image::imageops::resize(&gray, sw, sh, FilterType::Triangle)
                };
                let integral = Integral::new(&scaled);
                let step = if factor > 2.0 { 1 } else { 2 };
                let mut y = 0;
                while y + self.height <= sh {
                    let mut x = 0;
                    while x + self.width <= sw {
                        if self.accepts(&integral, x, y) {
                            hits.push(Rect::new(
                                (f64::from(x) * factor).round() as u32,
                                (f64::from(y) * factor).round() as u32,
                                win_w,
                                (f64::from(self.height) * factor).round() as u32,
                            ));
                        }
                        x += step;
                    }
                    y += step;
                }
            }
            factor *= params.scale_factor.max(1.0001);
        }
        let mut grouped = group_rectangles(&hits, params.min_neighbors, 0.2);
        grouped.retain(|c| img.contains(&c.rect));
        grouped.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        grouped
    }

    fn accepts(&self, ii: &Integral, x: u32, y: u32) -> bool {
        let (nx, ny, nw, nh) = (x + 1, y + 1, self.width - 2, self.height - 2);
        let area = f64::from(nw * nh);
        let sum = ii.sum(nx, ny, nw, nh);
        let sq = ii.sq_sum(nx, ny, nw, nh);
        let nf = area * sq - sum * sum;
        let inv_norm = if nf > 0.0 { 1.0 / nf.sqrt() } else { 1.0 };

        for stage in &self.stages {
            let mut total = 0.0f32;
            for tree in &stage.trees {
                let mut idx = 0usize;
                let leaf = loop {
                    let (left, right, feature, threshold) = tree.nodes[idx];
                    let value: f64 = self.features[feature]
                        .rects
                        .iter()
                        .map(|&(fx, fy, fw, fh, w)| f64::from(w) * ii.sum(x + fx, y + fy, fw, fh))
                        .sum::<f64>()
                        * inv_norm;
                    let next = if value < f64::from(threshold) { left } else { right };
                    if next <= 0 {
                        break tree.leaves[(-next) as usize];
                    }
                    idx = next as usize;
                };
                total += leaf;
            }
            if total < stage.threshold {
                return false;
            }
        }
        true
    }
}

struct Integral {
    stride: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let (mut row, mut row_sq) = (0.0, 0.0);
            for x in 0..w {
                let v = f64::from(img.get_pixel(x as u32, y as u32).0[0]);
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        Self { stride, sum, sq }
    }

    fn rect(table: &[f64], stride: usize, x: u32, y: u32, w: u32, h: u32) -> f64 {
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        table[y1 * stride + x1] - table[y0 * stride + x1] - table[y1 * stride + x0]
            + table[y0 * stride + x0]
    }

    fn sum(&self, x: u32, y: u32, w: u32, h: u32) -> f64 {
        Self::rect(&self.sum, self.stride, x, y, w, h)
    }

    fn sq_sum(&self, x: u32, y: u32, w: u32, h: u32) -> f64 {
        Self::rect(&self.sq, self.stride, x, y, w, h)
    }
}

fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let delta = eps * f64::from(a.w.min(b.w) + a.h.min(b.h)) * 0.5;
    let d = |p: u32, q: u32| (f64::from(p) - f64::from(q)).abs() <= delta;
    d(a.x, b.x) && d(a.y, b.y) && d(a.right(), b.right()) && d(a.bottom(), b.bottom())
}

/// Clusters near-identical hits, keeps clusters with more than
/// `min_neighbors` members, and drops clusters nested in a stronger one.
fn group_rectangles(rects: &[Rect], min_neighbors: usize, eps: f64) -> Vec<EyeCandidate> {
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if similar(&rects[i], &rects[j], eps) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<(usize, [f64; 4], usize)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        let r = &rects[i];
        let vals = [r.x, r.y, r.w, r.h].map(f64::from);
        match clusters.iter_mut().find(|c| c.0 == root) {
            Some(c) => {
                (0..4).for_each(|k| c.1[k] += vals[k]);
                c.2 += 1;
            }
            None => clusters.push((root, vals, 1)),
        }
    }
    let averaged: Vec<(Rect, usize)> = clusters
        .iter()
        .map(|(_, s, count)| {
            let c = *count as f64;
            let [x, y, w, h] = s.map(|v| (v / c).round() as u32);
            (Rect::new(x, y, w, h), *count)
        })
        .collect();

    let mut out = Vec::new();
    for (i, (r1, n1)) in averaged.iter().enumerate() {
        if *n1 <= min_neighbors {
            continue;
        }
        let nested = averaged.iter().enumerate().any(|(j, (r2, n2))| {
            if i == j || *n2 <= min_neighbors {
                return false;
            }
            let dx = (f64::from(r2.w) * eps).round() as i64;
            let dy = (f64::from(r2.h) * eps).round() as i64;
            let (x1, y1, x2, y2) = (
                i64::from(r1.x),
                i64::from(r1.y),
                i64::from(r2.x),
                i64::from(r2.y),
            );
            x1 >= x2 - dx
                && y1 >= y2 - dy
                && x1 + i64::from(r1.w) <= x2 + i64::from(r2.w) + dx
                && y1 + i64::from(r1.h) <= y2 + i64::from(r2.h) + dy
                && (*n2 > (*n1).max(3) || *n1 < 3)
        });
        if !nested {
            out.push(EyeCandidate {
                rect: *r1,
                confidence: *n1 as f64,
            });
        }
    }
    out
}

/// Single-eye detector backed by a cascade file.
#[derive(Debug, Clone)]
pub struct HaarEyeBackend {
    cascade: HaarCascade,
    params: DetectParams,
    source: PathBuf,
}

impl HaarEyeBackend {
    pub fn load(path: impl AsRef<Path>, params: DetectParams) -> Result<Self, BackendError> {
        Ok(Self {
            cascade: HaarCascade::load(&path)?,
            params,
            source: path.as_ref().to_path_buf(),
        })
    }

    pub fn from_cascade(cascade: HaarCascade, params: DetectParams) -> Self {
        Self {
            cascade,
            params,
            source: PathBuf::new(),
        }
    }

    pub fn source(&self) -> &Path {
        &self.source
    }
}

impl EyeBackend for HaarEyeBackend {
    fn detect_eyes(&self, img: &ImageBuffer) -> Result<Vec<EyeCandidate>, BackendError> {
        Ok(self.cascade.detect(img, &self.params))
    }
}
