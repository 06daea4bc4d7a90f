use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use acne_core::augmentation::balance_plan;
use acne_core::dataset::{class_distribution, PANEL_SIZE};
use acne_core::image_io::{load, save_png};
use acne_core::model::{save_head, Activation, Dense, RegressionHead};
use acne_core::synth::{frontal_face, lesion_dataset, LesionRegion};
use acne_core::{ImageBuffer, SeverityLabel};
use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

fn acne(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acne"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Frontal faces with landmark annotation files beside them.
fn faces(dir: &Path, n: u64) -> Vec<PathBuf> {
    (0..n)
        .map(|i| {
            let (img, lm) = frontal_face(320, 320, 40 + i);
            let p = dir.join(format!("face{i}.png"));
            save_png(&img, &p).unwrap();
            std::fs::write(dir.join(format!("face{i}.landmarks")), lm.to_sidecar()).unwrap();
            p
        })
        .collect()
}

fn labels(v: &[i64]) -> Vec<SeverityLabel> {
    v.iter().map(|x| SeverityLabel::new(*x).unwrap()).collect()
}

/// A patch manifest of synthetic lesion patches.
fn patch_set(dir: &Path, label_values: &[i64]) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut csv = String::from("patch_path,image_id,kind,shift,label\n");
    let data = lesion_dataset(&labels(label_values), 48, LesionRegion::Anywhere, 5);
    for (i, (img, l)) in data.iter().enumerate() {
        let name = format!("p{i}.png");
        save_png(img, dir.join(&name)).unwrap();
        csv.push_str(&format!("{name},img{i},forehead,0,{}\n", l.value()));
    }
    let p = dir.join("manifest.csv");
    std::fs::write(&p, csv).unwrap();
    p
}

fn count_png(dir: &Path, needle: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().to_string_lossy().into_owned();
            name.ends_with(".png") && name.contains(needle)
        })
        .count()
}

#[test]
fn extract_patches_from_two_frontal_images() {
    let dir = tempfile::tempdir().unwrap();
    let paths = faces(dir.path(), 2);
    let blank = dir.path().join("blank.png");
    save_png(&ImageBuffer::filled(320, 320, [120, 110, 100]), &blank).unwrap();
    let manifest = dir.path().join("train.csv");
    std::fs::write(
        &manifest,
        format!(
            "image_id,path,rater_id,label\nf0,{},r1,2\nf1,{},r1,4\nb,blank.png,r1,3\nz,{},r1,0\n",
            paths[0].file_name().unwrap().to_str().unwrap(),
            paths[1].file_name().unwrap().to_str().unwrap(),
            paths[0].file_name().unwrap().to_str().unwrap(),
        ),
    )
    .unwrap();
    let out = dir.path().join("patches");
    let o = acne(&[
        "extract-patches",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--landmarks",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(count_png(&out, "_roll0"), 8);
    assert_eq!(count_png(&out, "overlay"), 0);
    let err = stderr(&o);
    assert!(err.contains("f0: 4 patches") && err.contains("b: skipped"), "{err}");
    let rows = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(rows.lines().count(), 9);
    assert!(rows.contains("f1_chin_roll0.png,f1,chin,0,4"), "{rows}");

    let out2 = dir.path().join("with_overlays");
    let o = acne(&[
        "extract-patches",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out2),
        "--landmarks",
        s(dir.path()),
        "--overlays",
    ]);
    assert!(o.status.success());
    assert_eq!(count_png(&out2, "_overlay"), 2);
    assert_eq!(count_png(&out2, "_roll0"), 8);
}

#[test]
fn empty_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(&m, "image_id,path,rater_id,label\n").unwrap();
    let o = acne(&["extract-patches", "--manifest", s(&m), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn augment_balanced_set_triples_every_class() {
    let dir = tempfile::tempdir().unwrap();
    let values = [1, 2, 3, 4, 5, 1, 2, 3, 4, 5];
    let m = patch_set(&dir.path().join("in"), &values);
    let out = dir.path().join("out");
    let o = acne(&["augment", "--patches", s(&m), "--out", s(&out), "--n-mild", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plan = balance_plan(&class_distribution(&labels(&values)), 2, 10).unwrap();
    let text = stdout(&o);
    assert!(text.contains(&format!("plan: {plan}\n")), "{text}");
    assert!(text.contains("achieved: 1:6 2:6 3:6 4:6 5:6"), "{text}");
    assert_eq!(count_png(&out, "_roll"), 30);
    let rows = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert!(rows.contains("img0_forehead_roll2.png,img0,forehead,32,1"), "{rows}");
}

#[test]
fn augment_without_rolls_copies_patches() {
    let dir = tempfile::tempdir().unwrap();
    let m = patch_set(&dir.path().join("in"), &[3, 3, 1]);
    let out = dir.path().join("out");
    let o = acne(&[
        "augment", "--patches", s(&m), "--out", s(&out), "--n-mild", "0", "--n-max", "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(count_png(&out, "_roll0"), 3);
    assert_eq!(count_png(&out, "_roll1"), 0);
    for i in 0..3 {
        assert_eq!(
            load(out.join(format!("img{i}_forehead_roll0.png"))).unwrap(),
            load(dir.path().join("in").join(format!("p{i}.png"))).unwrap()
        );
    }
}

#[test]
fn augment_rejects_unlabeled_patches() {
    let dir = tempfile::tempdir().unwrap();
    let m = patch_set(dir.path(), &[3]);
    let text = std::fs::read_to_string(&m).unwrap().replace(",0,3", ",0,");
    std::fs::write(&m, text).unwrap();
    let o = acne(&["augment", "--patches", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no label"));
}

fn train(m: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--patches",
        s(m),
        "--test-backend",
        "--out",
        s(out),
        "--hidden",
        "16,8,4",
        "--epochs",
        "5",
    ];
    args.extend_from_slice(extra);
    acne(&args)
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let m = patch_set(&dir.path().join("p"), &[1, 2, 3, 3, 4, 5, 3, 2, 4, 3, 1, 5]);
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    let oa = train(&m, &a, &["--seed", "7"]);
    let ob = train(&m, &b, &["--seed", "7"]);
    assert!(oa.status.success(), "{}", stderr(&oa));
    assert!(stdout(&oa).contains("train_mse ") && stdout(&oa).contains("validation_mse "));
    let hash = |p: &Path| Sha256::digest(std::fs::read(p).unwrap());
    assert_eq!(hash(&a), hash(&b));
    assert_eq!(stdout(&oa), stdout(&ob).replace("b.bin", "a.bin"));
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let m = patch_set(&dir.path().join("p"), &[1, 5, 1, 5, 3, 3]);
    let o = train(&m, &dir.path().join("h.bin"), &["--learning-rate", "1e30"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!dir.path().join("h.bin").exists());
}

/// A head that outputs `c` for every input.
fn constant_head(d: usize, c: f32) -> RegressionHead {
    let widths = [d, 4, 2, 1];
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Dense {
            weights: Array2::zeros((w[1], w[0])),
            bias: Array1::from_elem(w[1], if i == widths.len() - 2 { c } else { 0.0 }),
        })
        .collect();
    RegressionHead::from_layers(layers, Activation::Relu, 0).unwrap()
}

#[test]
fn evaluate_mean_predictor_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let paths = faces(dir.path(), 3);
    let rows: [[i64; PANEL_SIZE]; 3] = [
        [3, 3, 3, 3, 3, 3, 4, 4, 4, 4, 4],
        [2, 2, 3, 2, 2, 2, 3, 2, 2, 1, 2],
        [4, 5, 4, 4, 4, 3, 4, 4, 5, 4, 4],
    ];
    let mut csv = String::from("image_id,path");
    for r in 1..=PANEL_SIZE {
        csv.push_str(&format!(",label_{r}"));
    }
    csv.push('\n');
    let mut consensus = Vec::new();
    for (i, labels) in rows.iter().enumerate() {
        csv.push_str(&format!("g{i},{}", paths[i].file_name().unwrap().to_str().unwrap()));
        for l in labels {
            csv.push_str(&format!(",{l}"));
        }
        csv.push('\n');
        consensus.push(labels.iter().sum::<i64>() as f64 / PANEL_SIZE as f64);
    }
    let golden = dir.path().join("golden.csv");
    std::fs::write(&golden, csv).unwrap();
    let mean = consensus.iter().sum::<f64>() / consensus.len() as f64;
    let head = dir.path().join("mean.bin");
    save_head(&constant_head(256, mean as f32), &head).unwrap();
    let report = dir.path().join("report.json");
    let o = acne(&[
        "evaluate",
        "--golden",
        s(&golden),
        "--head",
        s(&head),
        "--test-backend",
        "--landmarks",
        s(dir.path()),
        "--report",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["evaluated"], 3);
    let (m, b) = (v["model_rmse"].as_f64().unwrap(), v["baseline_rmse"].as_f64().unwrap());
    assert!((m - b).abs() < 1e-6, "{m} vs {b}");
    assert!(stdout(&o).to_lowercase().contains("model"));
}

#[test]
fn score_prints_json_and_reports_no_face() {
    let dir = tempfile::tempdir().unwrap();
    let paths = faces(dir.path(), 1);
    let head = dir.path().join("h.bin");
    save_head(&RegressionHead::new(&[256, 8, 4, 2, 1], 1).unwrap(), &head).unwrap();
    let args = |img: &Path| {
        acne(&[
            "score",
            "--image",
            s(img),
            "--head",
            s(&head),
            "--test-backend",
            "--landmarks",
            s(dir.path()),
        ])
    };
    let o = args(&paths[0]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["patches"].as_array().unwrap().len(), 4);
    let score = v["score"].as_f64().unwrap();
    assert!((1.0..=5.0).contains(&score));
    assert_eq!(stdout(&o), stdout(&args(&paths[0])));

    let blank = dir.path().join("blank.png");
    save_png(&ImageBuffer::filled(320, 320, [90, 90, 90]), &blank).unwrap();
    let o = args(&blank);
    assert_eq!(o.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["code"], "no_face");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("acne.conf");
    std::fs::write(&conf, "n_mild=2\nhead_pth=x\n").unwrap();
    let o = acne(&["--config", s(&conf), "serve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("\"head_pth\""), "{}", stderr(&o));
}
