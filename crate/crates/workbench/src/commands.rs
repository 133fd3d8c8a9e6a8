//! The pipeline subcommands as library functions, shared by the binary, the
//! server and the tests.

use std::collections::BTreeMap;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use pathoscope_core::detector::{match_detections, render_overlay, Detection, DetectionRecord};
use pathoscope_core::eval::{
    baseline_scores, compare_methods, write_comparison, Comparison, ExtraTreesConfig, ScoredSet,
};
use pathoscope_core::model::{build_network, load_model, save_model, train as train_model, TrainConfig, TrainEvent, TrainedModel};
use pathoscope_core::patchset::{load_corpus, load_split, save_split, split_dataset, AnnotatedImage, BoundingBox, DatasetSplit, Manifest};
use pathoscope_core::synth::{generate, write_corpus, SynthConfig};

use crate::config::{BuildPatchesConfig, DetectCmdConfig};
use crate::detection::{detect_records, detector_config, parse_jsonl, to_jsonl};
use crate::run::RunManifest;

pub const PATCH_CACHE_FILE: &str = "patches.pspc";
pub const MODEL_FILE: &str = "model.pscn";
pub const LOSS_FILE: &str = "loss.csv";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const CORPUS_MANIFEST_FILE: &str = "manifest.json";

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

/// A directory argument resolves to the conventional file inside it.
fn resolve(path: &Path, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file)
    } else {
        path.to_path_buf()
    }
}

/// Digest over the corpus manifest and every image it lists.
fn corpus_digest(dir: &Path, manifest: &Manifest) -> Result<String> {
    let mut h = Sha256::new();
    let path = dir.join(CORPUS_MANIFEST_FILE);
    h.update(fs::read(&path).with_context(|| format!("reading {}", path.display()))?);
    for entry in &manifest.images {
        let path = dir.join(&entry.file);
        h.update(entry.file.as_bytes());
        h.update(Sha256::digest(fs::read(&path).with_context(|| format!("reading {}", path.display()))?));
    }
    Ok(hex::encode(h.finalize()))
}

fn open_corpus(dir: &Path) -> Result<(Manifest, Vec<AnnotatedImage>, String)> {
    let (manifest, images) = load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    let digest = corpus_digest(dir, &manifest)?;
    Ok((manifest, images, digest))
}

pub fn open_patch_cache(path: &Path) -> Result<(DatasetSplit, PathBuf)> {
    let file = resolve(path, PATCH_CACHE_FILE);
    if !file.is_file() {
        bail!("patch cache not found: {} (run `pathoscope build-patches` first)", file.display());
    }
    if fs::metadata(&file)?.len() == 0 {
        bail!("patch cache {} is empty (rerun `pathoscope build-patches`)", file.display());
    }
    let split = load_split(&file).with_context(|| format!("reading patch cache {}", file.display()))?;
    Ok((split, file))
}

pub fn open_model(path: &Path) -> Result<(TrainedModel, PathBuf)> {
    let file = resolve(path, MODEL_FILE);
    if !file.is_file() {
        bail!("model file not found: {} (run `pathoscope train` first)", file.display());
    }
    let model = load_model(&file).with_context(|| format!("reading model {}", file.display()))?;
    Ok((model, file))
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<RunManifest> {
    create_out(out)?;
    let corpus = generate(cfg)?;
    let written = write_corpus(&corpus, out)?;
    let mut run = RunManifest::new("synth", cfg);
    for path in &written {
        run.artifact(out, path)?;
    }
    run.summary = json!({
        "images": corpus.images.len(),
        "objects": corpus.images.iter().map(|s| s.ellipses.len()).sum::<usize>(),
        "confounders": corpus.images.iter().map(|s| s.confounders).sum::<usize>(),
    });
    run.write(out)?;
    Ok(run)
}

pub fn build_patches(corpus: &Path, cfg: &BuildPatchesConfig, out: &Path) -> Result<RunManifest> {
    let (_, images, digest) = open_corpus(corpus)?;
    let split = split_dataset(&images, &cfg.patch, cfg.seed, cfg.split)?;
    create_out(out)?;
    let path = out.join(PATCH_CACHE_FILE);
    save_split(&split, &path)?;
    let mut run = RunManifest::new("build-patches", cfg);
    run.inputs.insert("corpus".into(), digest);
    run.artifact(out, &path)?;
    run.summary = json!({
        "train_patches": split.train.len(),
        "test_patches": split.test.len(),
        "train_positive_fraction": DatasetSplit::positive_fraction(&split.train),
        "test_positive_fraction": DatasetSplit::positive_fraction(&split.test),
        "stats": split.stats,
    });
    run.write(out)?;
    Ok(run)
}

pub fn train(
    patches: &Path,
    cfg: &TrainConfig,
    out: &Path,
    progress: &mut dyn FnMut(&TrainEvent),
) -> Result<RunManifest> {
    let (split, cache) = open_patch_cache(patches)?;
    if split.train.is_empty() {
        bail!("patch cache {} holds no training patches", cache.display());
    }
    let init = build_network(split.spec.patch_size, cfg.seed)?;
    let model = train_model(&init, &split, cfg, &mut |e| {
        progress(e);
        ControlFlow::Continue(())
    })?;
    create_out(out)?;
    let model_path = out.join(MODEL_FILE);
    save_model(&model, &model_path)?;
    let loss_path = out.join(LOSS_FILE);
    let mut loss = String::from("epoch,loss\n");
    for (i, l) in model.history.iter().enumerate() {
        loss.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(&loss_path, loss).with_context(|| format!("writing {}", loss_path.display()))?;

    let mut run = RunManifest::new("train", cfg);
    run.input("patches", &cache)?;
    run.artifact(out, &model_path)?;
    run.artifact(out, &loss_path)?;
    run.summary = json!({
        "epochs": model.history.len(),
        "final_loss": model.history.last(),
        "parameters": model.network.parameter_count(),
        "dataset_hash": model.provenance.dataset_hash,
    });
    run.write(out)?;
    Ok(run)
}

pub fn evaluate(patches: &Path, model: &Path, cfg: &ExtraTreesConfig, out: &Path) -> Result<(RunManifest, Comparison)> {
    let (split, cache) = open_patch_cache(patches)?;
    let (trained, model_file) = open_model(model)?;
    if trained.patch_size() != split.spec.patch_size {
        bail!(
            "model {} expects {}px patches but cache {} holds {}px patches",
            model_file.display(),
            trained.patch_size(),
            cache.display(),
            split.spec.patch_size
        );
    }
    if split.test.is_empty() {
        bail!("patch cache {} holds no test patches", cache.display());
    }
    cfg.validate()?;
    let labels: Vec<bool> = split.test.iter().map(|p| p.label.is_positive()).collect();
    let cnn = ScoredSet::new(trained.predict_patches(&split.test)?, labels.clone())?;
    let baseline = ScoredSet::new(baseline_scores(&split.train, &split.test, cfg)?, labels)?;
    let comparison = compare_methods(&cnn, &baseline)?;

    create_out(out)?;
    let written = write_comparison(&comparison, out)?;
    let mut run = RunManifest::new("evaluate", cfg);
    run.input("patches", &cache)?;
    run.input("model", &model_file)?;
    for path in &written {
        run.artifact(out, path)?;
    }
    run.summary = json!({
        "cnn": { "auc": comparison.cnn.auc(), "ap": comparison.cnn.ap() },
        "baseline": { "auc": comparison.baseline.auc(), "ap": comparison.baseline.ap() },
        "n": comparison.cnn.n,
        "positive_fraction": comparison.cnn.positive_fraction,
    });
    run.write(out)?;
    Ok((run, comparison))
}

fn select<'a>(images: &'a [AnnotatedImage], ids: &[String]) -> Result<Vec<&'a AnnotatedImage>> {
    if ids.is_empty() {
        return Ok(images.iter().collect());
    }
    ids.iter()
        .map(|id| images.iter().find(|i| &i.id == id).with_context(|| format!("image {id:?} is not in the corpus")))
        .collect()
}

fn record_to_detection(r: &DetectionRecord, label: &str) -> Detection {
    let [a, b, c, d] = r.bbox;
    Detection { bbox: BoundingBox::new(a, b, c, d, label), probability: r.probability }
}

pub fn detect(corpus: &Path, model: &Path, cfg: &DetectCmdConfig, out: &Path) -> Result<RunManifest> {
    let (_, images, digest) = open_corpus(corpus)?;
    let (trained, model_file) = open_model(model)?;
    let det_cfg = detector_config(&trained, cfg);
    det_cfg.validate()?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut records = Vec::new();
    for image in select(&images, &cfg.images)? {
        let recs = detect_records(&trained, image, &det_cfg).with_context(|| format!("detecting in {}", image.id))?;
        let dets: Vec<Detection> = recs.iter().map(|r| record_to_detection(r, "")).collect();
        let m = match_detections(&dets, &image.boxes);
        tp += m.true_positives;
        fp += m.false_positives;
        fn_ += m.false_negatives;
        records.extend(recs);
    }
    create_out(out)?;
    let path = out.join(DETECTIONS_FILE);
    fs::write(&path, to_jsonl(&records)).with_context(|| format!("writing {}", path.display()))?;

    let mut run = RunManifest::new("detect", &json!({ "command": cfg, "detector": det_cfg }));
    run.inputs.insert("corpus".into(), digest);
    run.input("model", &model_file)?;
    run.artifact(out, &path)?;
    run.summary = json!({
        "detections": records.len(),
        "true_positives": tp,
        "false_positives": fp,
        "false_negatives": fn_,
    });
    run.write(out)?;
    Ok(run)
}

pub fn export_overlays(corpus: &Path, detections: &Path, out: &Path) -> Result<RunManifest> {
    let (_, images, digest) = open_corpus(corpus)?;
    let det_file = resolve(detections, DETECTIONS_FILE);
    let text = fs::read_to_string(&det_file).with_context(|| format!("reading detections {}", det_file.display()))?;
    let records = parse_jsonl(&text).with_context(|| format!("parsing {}", det_file.display()))?;
    let mut by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for r in &records {
        if !images.iter().any(|i| i.id == r.image_id) {
            bail!("{} refers to image {:?}, which is not in the corpus", det_file.display(), r.image_id);
        }
        by_image.entry(r.image_id.as_str()).or_default().push(record_to_detection(r, ""));
    }
    let dir = out.join("overlays");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut run = RunManifest::new("export-overlays", &json!({}));
    run.inputs.insert("corpus".into(), digest);
    run.input("detections", &det_file)?;
    for image in &images {
        let dets = by_image.get(image.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let path = dir.join(format!("{}.png", image.id));
        render_overlay(&image.raster, &image.boxes, dets).save(&path).with_context(|| format!("writing {}", path.display()))?;
        run.artifact(out, &path)?;
    }
    run.summary = json!({ "images": images.len(), "detections": records.len() });
    run.write(out)?;
    Ok(run)
}
