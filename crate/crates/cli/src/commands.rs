use std::collections::HashSet;
use std::path::{Path, PathBuf};

use acne_core::augmentation::{augment_patch_set, balance_plan};
use acne_core::dataset::{build_golden, image_labels, load_manifest, quality_filter, ClassHistogram};
use acne_core::evaluation::evaluate_model;
use acne_core::face_patches::{extract_patches, overlay, Extraction, PatchGeometry};
use acne_core::image_io::{self, save_png, write_atomic};
use acne_core::model::{
    check_compatible, embed_patch, fingerprint, load_head, save_head, score_image, train_head,
    EmbeddingBackend, RegressionHead,
};
use acne_core::{Error, ImageBuffer, SeverityLabel};
use acne_service::{pipeline_version, ScoreResponse};

use crate::detectors::Detectors;
use crate::failure::Failure;
use crate::patches::{check_image_id, file_name, load_patch, read_manifest, write_manifest, PatchRow, MANIFEST_NAME};
use crate::settings::CliConfig;

type Outcome = Result<(), Failure>;

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))
}

fn format_counts(counts: [u64; 5]) -> String {
    SeverityLabel::ALL
        .iter()
        .map(|l| format!("{l}:{}", counts[l.index()]))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn extract_patches_cmd(cfg: &CliConfig, manifest: &Path, out: &Path, overlays: bool) -> Outcome {
    let m = load_manifest(manifest)?;
    for r in &m.rejected {
        eprintln!("line {}: image {} label {} rejected ({:?})", r.line, r.image_id, r.label, r.reason);
    }
    let images = image_labels(&m)?;
    if images.is_empty() {
        return Err(Failure::input(format!("{}: no usable rows", manifest.display())));
    }
    for item in &images {
        check_image_id(&item.image_id)?;
    }
    let quality = cfg.quality()?;
    let mut detectors = Detectors::new(&cfg.pipeline()?)?;
    let geometry = PatchGeometry::default();
    create_dir(out)?;

    let mut rows = Vec::new();
    let mut succeeded = 0usize;
    for item in &images {
        let result = image_io::load(&item.path).and_then(|img| {
            let verdict = quality_filter(&img, &quality);
            if !verdict.keep {
                return Ok(Err(format!("{:?}", verdict.reason)));
            }
            detectors.prepare(&img, &item.path)?;
            match extract_patches(detectors.landmarks(), detectors.eyes(), &img, &geometry) {
                Ok(x) => Ok(Ok((img, x.labeled(item.label)))),
                Err(e) if e.is_extraction_failure() => Ok(Err(e.to_string())),
                Err(e) => Err(e),
            }
        });
        let (img, extraction): (ImageBuffer, Extraction) = match result {
            Ok(Ok(v)) => v,
            Ok(Err(reason)) => {
                eprintln!("{}: skipped: {reason}", item.image_id);
                continue;
            }
            Err(e @ (Error::Decode(_) | Error::Io { .. })) => {
                eprintln!("{}: skipped: {e}", item.image_id);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for p in &extraction.patches {
            let name = file_name(&item.image_id, p.kind, 0);
            save_png(&p.pixels, out.join(&name))?;
            rows.push(PatchRow {
                patch_path: name,
                image_id: item.image_id.clone(),
                kind: p.kind,
                shift: 0,
                label: p.label,
            });
        }
        if overlays {
            save_png(&overlay(&img, &extraction), out.join(format!("{}_overlay.png", item.image_id)))?;
        }
        eprintln!(
            "{}: {} patches ({:?})",
            item.image_id,
            extraction.patches.len(),
            extraction.path
        );
        succeeded += 1;
    }
    write_manifest(&out.join(MANIFEST_NAME), &rows)?;
    println!(
        "extracted {} patches from {succeeded} of {} images",
        rows.len(),
        images.len()
    );
    if succeeded == 0 {
        return Err(Failure::input("no image yielded patches"));
    }
    Ok(())
}

fn labeled_rows(patches: &Path) -> Result<Vec<(PatchRow, PathBuf, SeverityLabel)>, Failure> {
    let rows = read_manifest(patches)?;
    if rows.is_empty() {
        return Err(Failure::input(format!("{}: no patches", patches.display())));
    }
    rows.into_iter()
        .map(|(row, full)| match row.label {
            Some(l) => Ok((row, full, l)),
            None => Err(Failure::input(format!("patch {} has no label", row.patch_path))),
        })
        .collect()
}

pub fn augment_cmd(cfg: &CliConfig, patches: &Path, out: &Path) -> Outcome {
    let rows = labeled_rows(patches)?;
    let hist: ClassHistogram = rows.iter().map(|r| r.2).collect();
    let plan = balance_plan(&hist, cfg.get("n_mild", 2)?, cfg.get("n_max", 10)?)?;
    println!("plan: {plan}");

    let inputs = rows
        .iter()
        .map(|(row, full, _)| load_patch(row, full))
        .collect::<acne_core::Result<Vec<_>>>()?;
    let augmented = augment_patch_set(&inputs, &plan)?;
    create_dir(out)?;

    let mut names = HashSet::new();
    let mut out_rows = Vec::with_capacity(augmented.len());
    let mut emitted = augmented.iter();
    for (row, _, label) in &rows {
        for k in 0..=plan.rolls(*label) {
            let p = emitted.next().expect("one group per input patch");
            let name = file_name(&row.image_id, row.kind, k);
            if !names.insert(name.clone()) {
                return Err(Failure::input(format!("two input patches map to {name}")));
            }
            save_png(&p.pixels, out.join(&name))?;
            out_rows.push(PatchRow {
                patch_path: name,
                image_id: row.image_id.clone(),
                kind: p.kind,
                shift: p.shift,
                label: p.label,
            });
        }
    }
    write_manifest(&out.join(MANIFEST_NAME), &out_rows)?;
    let achieved: ClassHistogram = augmented.iter().filter_map(|p| p.label).collect();
    println!("before: {}", format_counts(hist.counts()));
    println!("achieved: {}", format_counts(achieved.counts()));
    Ok(())
}

pub fn train_cmd(cfg: &CliConfig, patches: &Path, out: &Path) -> Outcome {
    let rows = labeled_rows(patches)?;
    let train_cfg = cfg.train()?;
    train_cfg.validate()?;
    let backend = cfg.pipeline()?.embedding_backend()?;
    let features = rows
        .iter()
        .map(|(_, full, label)| {
            let pixels = image_io::load(full)?;
            Ok((embed_patch(backend.as_ref(), &pixels)?, *label))
        })
        .collect::<acne_core::Result<Vec<_>>>()?;
    let (head, report) = train_head(&features, &train_cfg).map_err(Failure::training)?;
    save_head(&head, out)?;
    println!("train_mse {:.6}", report.train_loss);
    match report.validation_loss {
        Some(v) => println!("validation_mse {v:.6}"),
        None => println!("validation_mse n/a"),
    }
    println!(
        "wrote {} ({} train, {} validation, fingerprint {})",
        out.display(),
        report.train_size,
        report.validation_size,
        fingerprint(&head)
    );
    Ok(())
}

fn model(cfg: &CliConfig) -> Result<(Box<dyn EmbeddingBackend>, RegressionHead, Detectors), Failure> {
    let settings = cfg.pipeline()?;
    let backend = settings.embedding_backend()?;
    let head = match &settings.head_path {
        Some(p) => load_head(p)?,
        None => return Err(Failure::input("no head given")),
    };
    check_compatible(backend.as_ref(), &head)?;
    Ok((backend, head, Detectors::new(&settings)?))
}

pub fn evaluate_cmd(cfg: &CliConfig, golden: &Path, report: &Path) -> Outcome {
    let records = build_golden(golden)?;
    let (backend, head, mut detectors) = model(cfg)?;
    let geometry = PatchGeometry::default();
    let summary = evaluate_model(&records, |rec| {
        let img = image_io::load(&rec.path)?;
        detectors.prepare(&img, &rec.path)?;
        let s = score_image(
            &rec.image_id,
            &img,
            detectors.landmarks(),
            detectors.eyes(),
            backend.as_ref(),
            &head,
            &geometry,
        )?;
        Ok(s.final_score.value())
    })
    .map_err(Failure::scoring)?;
    for f in &summary.failed_images {
        eprintln!("{}: not evaluated: {}", f.image_id, f.reason);
    }
    write_atomic(report, summary.to_json().as_bytes())?;
    print!("{}", summary.table());
    Ok(())
}

pub fn score_cmd(cfg: &CliConfig, image: &Path) -> Outcome {
    let (backend, head, mut detectors) = model(cfg)?;
    let bytes = std::fs::read(image)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", image.display())))?;
    let img = image_io::decode(&bytes).map_err(Failure::scoring)?;
    detectors.prepare(&img, image)?;
    let id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let s = score_image(
        &id,
        &img,
        detectors.landmarks(),
        detectors.eyes(),
        backend.as_ref(),
        &head,
        &PatchGeometry::default(),
    )
    .map_err(Failure::scoring)?;
    let response = ScoreResponse::new(&s, &pipeline_version(&head));
    println!(
        "{}",
        serde_json::to_string_pretty(&response).expect("response serializes")
    );
    Ok(())
}

pub fn serve_cmd(cfg: &CliConfig) -> Outcome {
    let service = cfg.service()?;
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "info".into()),
        )
        .init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(acne_service::serve(&service, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}
