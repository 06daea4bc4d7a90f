//! Rolling augmentation: circular pixel shifts of skin patches along a
//! per-kind axis, with per-class roll counts chosen to even out the classes.
//!
//! A patch of extent `X` along its axis rolled `N` times yields the original
//! plus `N` copies shifted by `k * (X / (N + 1))` for `k = 1..=N` (integer
//! division), i.e. `N + 1` evenly spaced variants.

use std::fmt;

use serde::Serialize;

use crate::dataset::ClassHistogram;
use crate::error::{Error, Result};
use crate::face_patches::SkinPatch;
use crate::types::{ImageBuffer, PatchKind, SeverityLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Content moves right to left.
    Horizontal,
    /// Content moves bottom to top.
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollSpec {
    pub axis: Axis,
    pub roll_size: usize,
}

/// `floor(extent / (rolls + 1))`.
pub fn roll_size(extent: usize, rolls: usize) -> usize {
    extent / (rolls + 1)
}

pub fn roll_direction_for(kind: PatchKind) -> Axis {
    match kind {
        PatchKind::Forehead => Axis::Horizontal,
        PatchKind::LeftCheek | PatchKind::RightCheek | PatchKind::Chin => Axis::Vertical,
    }
}

fn extent(img: &ImageBuffer, axis: Axis) -> usize {
    match axis {
        Axis::Horizontal => img.width() as usize,
        Axis::Vertical => img.height() as usize,
    }
}

/// Circular shift: horizontally, output column `j` is input column
/// `(j + roll_size) mod width`; vertically the same on rows.
pub fn roll_patch(img: &ImageBuffer, spec: RollSpec) -> Result<ImageBuffer> {
    let ext = extent(img, spec.axis);
    if spec.roll_size >= ext {
        return Err(Error::RollSpec {
            roll_size: spec.roll_size,
            extent: ext,
        });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.pixels();
    let mut out = Vec::with_capacity(src.len());
    match spec.axis {
        Axis::Horizontal => {
            let split = spec.roll_size * 3;
            for row in src.chunks_exact(w * 3) {
                out.extend_from_slice(&row[split..]);
                out.extend_from_slice(&row[..split]);
            }
        }
        Axis::Vertical => {
            let split = spec.roll_size * w * 3;
            out.extend_from_slice(&src[split..]);
            out.extend_from_slice(&src[..split]);
        }
    }
    debug_assert_eq!(out.len(), w * h * 3);
    ImageBuffer::new(img.width(), img.height(), out)
}

/// Per-class roll counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AugmentationPlan {
    rolls: [usize; 5],
    pub cap: usize,
    /// Per-class count the plan aims for.
    pub target: u64,
}

impl AugmentationPlan {
    pub fn new(rolls: [usize; 5], cap: usize, target: u64) -> Result<Self> {
        if let Some(r) = rolls.iter().find(|r| **r > cap) {
            return Err(Error::InvalidPlan(format!("{r} rolls exceed cap {cap}")));
        }
        Ok(Self { rolls, cap, target })
    }

    pub fn rolls(&self, label: SeverityLabel) -> usize {
        self.rolls[label.index()]
    }

    pub fn all_rolls(&self) -> [usize; 5] {
        self.rolls
    }

    /// Patch counts per class after augmenting a set with histogram `hist`.
    pub fn achieved(&self, hist: &ClassHistogram) -> [u64; 5] {
        let mut out = [0; 5];
        for l in SeverityLabel::ALL {
            out[l.index()] = hist.count(l) * (self.rolls(l) as u64 + 1);
        }
        out
    }
}

impl fmt::Display for AugmentationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = SeverityLabel::ALL
            .iter()
            .map(|l| format!("{}:{}", l, self.rolls(*l)))
            .collect();
        write!(
            f,
            "rolls {{{}}} target {} cap {}",
            parts.join(", "),
            self.target,
            self.cap
        )
    }
}

/// Chooses per-class roll counts so classes end up near a common target.
///
/// The target is `(n_mild + 1)` times the count of the most populous class,
/// which is class 3 in the usual case (ties count as modal). Each populated
/// class `c` gets `min(n_max, ceil(T / count_c) - 1)` rolls, the modal class
/// gets exactly `n_mild`, and empty classes get none.
pub fn balance_plan(hist: &ClassHistogram, n_mild: usize, n_max: usize) -> Result<AugmentationPlan> {
    if hist.total() == 0 {
        return Err(Error::EmptyDataset);
    }
    if n_mild > n_max {
        return Err(Error::InvalidPlan(format!(
            "n_mild {n_mild} exceeds n_max {n_max}"
        )));
    }
    let modal = hist.max_count();
    let target = (n_mild as u64 + 1) * modal;
    let mild_is_modal = hist.count(SeverityLabel::MILD) == modal;
    let mut rolls = [0usize; 5];
    for l in SeverityLabel::ALL {
        let c = hist.count(l);
        if c == 0 {
            continue;
        }
        let is_anchor = if mild_is_modal {
            l == SeverityLabel::MILD
        } else {
            c == modal
        };
        rolls[l.index()] = if is_anchor {
            n_mild
        } else {
            let need = target.div_ceil(c).saturating_sub(1);
            need.min(n_max as u64) as usize
        };
    }
    AugmentationPlan::new(rolls, n_max, target)
}

/// Emits, for each input patch in order, the patch itself followed by its
/// rolled copies `k = 1..=N`, shifted by `k * roll_size(X, N)`.
pub fn augment_patch_set(patches: &[SkinPatch], plan: &AugmentationPlan) -> Result<Vec<SkinPatch>> {
    let mut out = Vec::new();
    for (index, patch) in patches.iter().enumerate() {
        let label = patch.label.ok_or(Error::MissingLabel { index })?;
        let n = plan.rolls(label);
        let axis = roll_direction_for(patch.kind);
        let step = roll_size(extent(&patch.pixels, axis), n);
        out.push(patch.clone());
        for k in 1..=n {
            let shift = k * step;
            let pixels = roll_patch(&patch.pixels, RollSpec { axis, roll_size: shift })?;
            out.push(SkinPatch {
                pixels,
                shift: shift as u32,
                ..patch.clone()
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Rect;
    use proptest::prelude::*;

    fn label(v: i64) -> SeverityLabel {
        SeverityLabel::new(v).unwrap()
    }

    fn row(values: &[u8]) -> ImageBuffer {
        ImageBuffer::from_fn(values.len() as u32, 1, |x, _| [values[x as usize]; 3])
    }

    #[test]
    fn roll_size_examples() {
        assert_eq!(roll_size(300, 2), 100);
        assert_eq!(roll_size(224, 3), 56);
        assert_eq!(roll_size(7, 2), 2);
    }

    #[test]
    fn directions() {
        assert_eq!(roll_direction_for(PatchKind::Forehead), Axis::Horizontal);
        assert_eq!(roll_direction_for(PatchKind::Chin), Axis::Vertical);
        assert_eq!(roll_direction_for(PatchKind::LeftCheek), Axis::Vertical);
        assert_eq!(roll_direction_for(PatchKind::RightCheek), Axis::Vertical);
    }

    #[test]
    fn horizontal_roll_moves_content_left() {
        let out = roll_patch(&row(&[1, 2, 3, 4]), RollSpec { axis: Axis::Horizontal, roll_size: 1 })
            .unwrap();
        assert_eq!(out, row(&[2, 3, 4, 1]));
    }

    #[test]
    fn vertical_roll_moves_content_up() {
        let col = ImageBuffer::from_fn(1, 3, |_, y| [y as u8; 3]);
        let out = roll_patch(&col, RollSpec { axis: Axis::Vertical, roll_size: 1 }).unwrap();
        assert_eq!(out.pixel(0, 0), [1; 3]);
        assert_eq!(out.pixel(0, 2), [0; 3]);
    }

    #[test]
    fn roll_rejects_full_extent() {
        let err = roll_patch(&row(&[1, 2, 3]), RollSpec { axis: Axis::Horizontal, roll_size: 3 });
        assert!(matches!(err, Err(Error::RollSpec { roll_size: 3, extent: 3 })));
    }

    #[test]
    fn balance_plan_skewed_example() {
        let h = ClassHistogram::from_counts([50, 100, 400, 80, 20]);
        let plan = balance_plan(&h, 2, 10).unwrap();
        assert_eq!(plan.target, 1200);
        assert_eq!(plan.all_rolls(), [10, 10, 2, 10, 10]);
        // uncapped values the cap replaced
        let uncapped = balance_plan(&h, 2, 1000).unwrap();
        assert_eq!(uncapped.all_rolls(), [23, 11, 2, 14, 59]);
    }

    #[test]
    fn balance_plan_balanced_and_single_class() {
        let h = ClassHistogram::from_counts([100; 5]);
        assert_eq!(balance_plan(&h, 2, 10).unwrap().all_rolls(), [2; 5]);
        let h = ClassHistogram::from_counts([0, 0, 400, 0, 0]);
        assert_eq!(balance_plan(&h, 2, 10).unwrap().all_rolls(), [0, 0, 2, 0, 0]);
    }

    #[test]
    fn balance_plan_non_mild_mode_anchors_modal_class() {
        let h = ClassHistogram::from_counts([10, 300, 100, 30, 0]);
        let plan = balance_plan(&h, 2, 10).unwrap();
        assert_eq!(plan.target, 900);
        assert_eq!(plan.all_rolls(), [10, 2, 8, 10, 0]);
    }

    #[test]
    fn balance_plan_errors() {
        assert!(matches!(
            balance_plan(&ClassHistogram::default(), 2, 10),
            Err(Error::EmptyDataset)
        ));
        let h = ClassHistogram::from_counts([1; 5]);
        assert!(matches!(balance_plan(&h, 3, 2), Err(Error::InvalidPlan(_))));
        assert_eq!(balance_plan(&h, 0, 0).unwrap().all_rolls(), [0; 5]);
    }

    fn forehead(width: u32, l: i64) -> SkinPatch {
        let img = ImageBuffer::from_fn(width, 2, |x, y| [(x % 251) as u8, y as u8, 7]);
        SkinPatch::new(PatchKind::Forehead, Rect::new(0, 0, width, 2), img).with_label(label(l))
    }

    #[test]
    fn augment_forehead_width_300_two_rolls() {
        let plan = AugmentationPlan::new([0, 0, 2, 0, 0], 10, 0).unwrap();
        let out = augment_patch_set(&[forehead(300, 3)], &plan).unwrap();
        let shifts: Vec<u32> = out.iter().map(|p| p.shift).collect();
        assert_eq!(shifts, vec![0, 100, 200]);
        assert_eq!(out[1].pixels.pixel(0, 0)[0], 100);
        assert_eq!(out[2].pixels.pixel(0, 0)[0], 200);
        assert!(out.iter().all(|p| p.kind == PatchKind::Forehead && p.label == Some(label(3))));
    }

    #[test]
    fn augment_passthrough_and_missing_label() {
        let plan = AugmentationPlan::new([0; 5], 10, 0).unwrap();
        let p = forehead(10, 2);
        assert_eq!(augment_patch_set(&[p.clone()], &plan).unwrap(), vec![p.clone()]);
        let unlabeled = SkinPatch { label: None, ..p };
        assert!(matches!(
            augment_patch_set(&[forehead(10, 1), unlabeled], &plan),
            Err(Error::MissingLabel { index: 1 })
        ));
    }

    #[test]
    fn augment_output_count_identity() {
        let plan = AugmentationPlan::new([1, 4, 2, 0, 3], 10, 0).unwrap();
        let patches: Vec<SkinPatch> = (1..=5).chain(2..=4).map(|l| forehead(40, l)).collect();
        let out = augment_patch_set(&patches, &plan).unwrap();
        let expected: usize = patches.iter().map(|p| 1 + plan.rolls(p.label.unwrap())).sum();
        assert_eq!(out.len(), expected);
    }

    fn sorted_pixels(img: &ImageBuffer) -> Vec<[u8; 3]> {
        let mut v: Vec<[u8; 3]> = img.pixels().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        v.sort_unstable();
        v
    }

    proptest! {
        #[test]
        fn roll_preserves_pixels_and_composes(
            w in 1u32..24, h in 1u32..24, seed in any::<u64>(), a in 0usize..64, b in 0usize..64,
            horizontal in any::<bool>(),
        ) {
            let img = ImageBuffer::from_fn(w, h, |x, y| {
                let v = seed.wrapping_mul(31).wrapping_add(u64::from(x * 7 + y * 13)) as u8;
                [v, v.wrapping_mul(3), x as u8]
            });
            let axis = if horizontal { Axis::Horizontal } else { Axis::Vertical };
            let ext = extent(&img, axis);
            let (a, b) = (a % ext, b % ext);
            let ra = roll_patch(&img, RollSpec { axis, roll_size: a }).unwrap();
            prop_assert_eq!(sorted_pixels(&ra), sorted_pixels(&img));
            let rab = roll_patch(&ra, RollSpec { axis, roll_size: b }).unwrap();
            let direct = roll_patch(&img, RollSpec { axis, roll_size: (a + b) % ext }).unwrap();
            prop_assert_eq!(rab, direct);
            let back = roll_patch(&ra, RollSpec { axis, roll_size: (ext - a) % ext }).unwrap();
            prop_assert_eq!(back, img);
        }

        #[test]
        fn uncapped_plan_is_nearly_balanced(counts in proptest::array::uniform5(0u64..300)) {
            let h = ClassHistogram::from_counts(counts);
            prop_assume!(h.total() > 0);
            let plan = balance_plan(&h, 2, usize::MAX).unwrap();
            let got = plan.achieved(&h);
            for l in SeverityLabel::ALL {
                let c = h.count(l);
                if c > 0 {
                    prop_assert!(got[l.index()] >= plan.target);
                    prop_assert!(got[l.index()] < plan.target + c);
                }
            }
        }
    }

    #[test]
    fn rolled_variants_are_distinct_for_aperiodic_patch() {
        let plan = AugmentationPlan::new([0, 0, 0, 0, 4], 10, 0).unwrap();
        let img = ImageBuffer::from_fn(3, 50, |_, y| [(y * y % 97) as u8, y as u8, 0]);
        let p = SkinPatch::new(PatchKind::Chin, Rect::new(0, 0, 3, 50), img).with_label(label(5));
        let out = augment_patch_set(&[p], &plan).unwrap();
        assert_eq!(out.len(), 5);
        for i in 0..out.len() {
            for j in (i + 1)..out.len() {
                assert_ne!(out[i].pixels, out[j].pixels);
            }
        }
    }
}
