//! Patch manifest CSV: `patch_path,image_id,kind,shift,label`.

use std::path::{Path, PathBuf};

use acne_core::face_patches::SkinPatch;
use acne_core::image_io::{self, write_atomic};
use acne_core::{Error, PatchKind, Result, SeverityLabel};
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRow {
    /// Relative to the manifest's directory.
    pub patch_path: String,
    pub image_id: String,
    pub kind: PatchKind,
    pub shift: u32,
    pub label: Option<SeverityLabel>,
}

pub fn file_name(image_id: &str, kind: PatchKind, k: usize) -> String {
    format!("{image_id}_{kind}_roll{k}.png")
}

/// Image ids become file name prefixes.
pub fn check_image_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.contains(['/', '\\'])
        && !id.chars().any(char::is_control);
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("image id {id:?} cannot be used in a file name")))
    }
}

pub fn write_manifest(path: &Path, rows: &[PatchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Config(format!("cannot encode manifest row: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("cannot encode manifest: {e}")))?;
    write_atomic(path, &bytes)
}

/// Reads a manifest; returns rows with paths resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PatchRow, PathBuf)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<PatchRow>()
        .enumerate()
        .map(|(i, r)| {
            let row = r.map_err(|e| Error::Manifest {
                line: i + 2,
                cause: e.to_string(),
            })?;
            let full = base.join(&row.patch_path);
            Ok((row, full))
        })
        .collect()
}

/// Loads a patch's pixels; the source rect is the whole patch.
pub fn load_patch(row: &PatchRow, full: &Path) -> Result<SkinPatch> {
    let pixels = image_io::load(full)?;
    Ok(SkinPatch {
        kind: row.kind,
        source_rect: pixels.bounds(),
        pixels,
        label: row.label,
        shift: row.shift,
    })
}
