use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::index;
use serde::Serialize;

use super::labels::auto_labels;
use super::manifest::{sha256_hex, write_manifest};
use super::{seeds, PipelineConfig};
use crate::context::{apply_context, build_histogram, context_subset, soft_scores, BinaryMask, ClusterClassHistogram, ContextMap, Target};
use crate::dbn::{encode, load_dbn, save_dbn, train_dbn, DbnModel, TrainConfig};
use crate::evaluation::{evaluate_pair, EvalReport};
use crate::fusion::{binarize, fuse, restore_retrievals, RetrievalGrid, StreamMask};
use crate::iic::{assign_labels, build_tree, load_tree, save_tree, ClusterTree, HierarchicalLabelMap, NO_LABEL};
use crate::rng::{derive_seed, seeded};
use crate::scene::{
    compute_pooled_band_stats, extract_samples, load_raster, rasterize_polygons, save_raster, BandStats, GridGeometry,
    LabelPolygonSet, RasterScene,
};
use crate::synthetic::{generate_sequence, synthetic_retrieval, GroundTruth};
use crate::tracking::{track_sequence, tracks_to_csv};
use crate::{Error, Result};

/// Directory layout of one run.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
    pub scenes: PathBuf,
    pub models: PathBuf,
    pub masks: PathBuf,
    pub reports: PathBuf,
    pub tracks: PathBuf,
}

impl RunLayout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let root = cfg.run_dir();
        RunLayout {
            scenes: root.join("scenes"),
            models: root.join("models"),
            masks: root.join("masks"),
            reports: root.join("reports"),
            tracks: root.join("tracks"),
            root,
        }
    }

    pub fn create(&self) -> Result<()> {
        for d in [&self.scenes, &self.models, &self.masks, &self.reports, &self.tracks] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(())
    }

    pub fn scene_id(i: usize) -> String {
        format!("scene_{i:03}")
    }

    pub fn synthetic_scene(&self, i: usize) -> PathBuf {
        self.scenes.join(Self::scene_id(i))
    }

    pub fn truth(&self, i: usize, class: &str) -> PathBuf {
        self.scenes.join(format!("{}_truth_{class}", Self::scene_id(i)))
    }

    pub fn auto_labels(&self, i: usize) -> PathBuf {
        self.scenes.join(format!("{}_labels.geojson", Self::scene_id(i)))
    }

    pub fn band_stats(&self) -> PathBuf {
        self.models.join("band_stats.json")
    }

    pub fn encoder(&self) -> PathBuf {
        self.models.join("encoder")
    }

    pub fn tree(&self) -> PathBuf {
        self.models.join("tree")
    }

    pub fn context(&self) -> PathBuf {
        self.models.join("context.json")
    }

    pub fn leaves(&self, i: usize) -> PathBuf {
        self.masks.join(format!("{}_leaves", Self::scene_id(i)))
    }

    pub fn context_subset(&self, i: usize) -> PathBuf {
        self.masks.join(format!("{}_context", Self::scene_id(i)))
    }

    pub fn mask(&self, i: usize, target: Target) -> PathBuf {
        self.masks.join(format!("{}_{}", Self::scene_id(i), target.name()))
    }

    pub fn scores(&self, i: usize, target: Target) -> PathBuf {
        self.masks.join(format!("{}_{}_scores", Self::scene_id(i), target.name()))
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn require_raster(path: &Path) -> Result<RasterScene> {
    require(&path.with_extension("json"))?;
    load_raster(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn scene_paths(cfg: &PipelineConfig, layout: &RunLayout) -> Vec<PathBuf> {
    if cfg.data.synthetic.is_some() {
        (0..cfg.data.steps).map(|i| layout.synthetic_scene(i)).collect()
    } else {
        cfg.data.scenes.clone()
    }
}

/// Input scenes with the configured band subset applied.
fn load_scenes(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<RasterScene>> {
    scene_paths(cfg, layout)
        .iter()
        .map(|p| {
            let scene = require_raster(p)?;
            match &cfg.sampling.bands {
                Some(bands) => scene.select_bands(bands),
                None => Ok(scene),
            }
        })
        .collect()
}

fn context_scene_indices(cfg: &PipelineConfig, n_scenes: usize) -> Result<Vec<usize>> {
    let idx = cfg.context.scenes.clone().unwrap_or_else(|| (0..n_scenes).collect());
    if let Some(&bad) = idx.iter().find(|&&i| i >= n_scenes) {
        return Err(Error::Invalid(format!("context scene {bad} out of range ({n_scenes} scenes)")));
    }
    Ok(idx)
}

fn truth_raster(geometry: GridGeometry, values: &[bool], timestamp: i64) -> Result<RasterScene> {
    let plane: Vec<f32> = values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    Ok(RasterScene::from_plane(geometry, &plane, &vec![true; values.len()])?.with_metadata(timestamp, "truth"))
}

fn load_truth(layout: &RunLayout, i: usize) -> Result<GroundTruth> {
    let read = |class: &str| -> Result<(usize, usize, Vec<bool>)> {
        let r = require_raster(&layout.truth(i, class))?;
        Ok((r.width(), r.height(), r.band(0).iter().map(|&v| v > 0.5).collect()))
    };
    let (width, height, smoke) = read("smoke")?;
    Ok(GroundTruth {
        width,
        height,
        smoke,
        fire: read("fire")?.2,
        cloud: read("cloud")?.2,
    })
}

/// Generates the synthetic scene sequence, truth rasters and auto labels.
pub fn cmd_gen(cfg: &PipelineConfig) -> Result<()> {
    let Some(spec) = &cfg.data.synthetic else {
        return Err(Error::Invalid("gen needs data.synthetic".into()));
    };
    let layout = RunLayout::new(cfg);
    layout.create()?;
    let mut spec = spec.clone();
    spec.seed = derive_seed(cfg.seed, seeds::SCENES);
    let frames = generate_sequence(&spec, cfg.data.steps, cfg.data.advection)?;
    let label_seed = derive_seed(cfg.seed, seeds::LABELS);
    for (i, (scene, truth)) in frames.iter().enumerate() {
        save_raster(scene, &layout.synthetic_scene(i))?;
        let g = scene.geometry();
        for (class, values) in [("smoke", &truth.smoke), ("fire", &truth.fire), ("cloud", &truth.cloud)] {
            save_raster(&truth_raster(g, values, scene.timestamp)?, &layout.truth(i, class))?;
        }
        let labels = auto_labels(truth, &g.geotransform, &cfg.context.auto, derive_seed(label_seed, i as u64))?;
        write_text(&layout.auto_labels(i), &labels.to_geojson())?;
    }
    log::info!("generated {} scene(s) in {}", frames.len(), layout.scenes.display());
    write_manifest(&layout.root, cfg)?;
    Ok(())
}

/// Pooled samples of all scenes, uniformly subsampled to the training cap.
fn training_matrix(cfg: &PipelineConfig, scenes: &[RasterScene], stats: &BandStats) -> Result<Array2<f64>> {
    let mut blocks = Vec::with_capacity(scenes.len());
    for s in scenes {
        blocks.push(extract_samples(s, stats, cfg.sampling.radius)?.features);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let pooled = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let n = pooled.nrows();
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let cap = cfg.sampling.max_train_samples;
    if cap == 0 || n <= cap {
        return Ok(pooled);
    }
    let mut rng = seeded(derive_seed(cfg.seed, seeds::TRAIN_SUBSET));
    let mut rows = index::sample(&mut rng, n, cap).into_vec();
    rows.sort_unstable();
    Ok(pooled.select(Axis(0), &rows))
}

fn layer_configs(cfg: &PipelineConfig) -> Vec<TrainConfig> {
    let base = derive_seed(cfg.seed, seeds::ENCODER);
    (0..cfg.encoder.hidden.len())
        .map(|i| {
            let mut c = cfg.encoder.layers.get(i).unwrap_or(&cfg.encoder.train).clone();
            c.seed = derive_seed(base, i as u64);
            c
        })
        .collect()
}

/// Fits band statistics and trains the DBN encoder.
pub fn cmd_train_encoder(cfg: &PipelineConfig) -> Result<()> {
    let layout = RunLayout::new(cfg);
    let scenes = load_scenes(cfg, &layout)?;
    layout.create()?;
    let refs: Vec<&RasterScene> = scenes.iter().collect();
    let stats = compute_pooled_band_stats(&refs)?;
    write_json(&layout.band_stats(), &stats)?;
    let data = training_matrix(cfg, &scenes, &stats)?;
    let mut dims = vec![data.ncols()];
    dims.extend(&cfg.encoder.hidden);
    let cfgs = layer_configs(cfg);
    log::info!("training encoder {dims:?} on {} samples", data.nrows());
    let (model, traces) = train_dbn(data.view(), &dims, &cfgs)?;
    if !model.layers.iter().all(|l| l.is_finite()) {
        return Err(Error::Diverged("encoder parameters are not finite".into()));
    }
    save_dbn(&model, &cfgs, cfg.seed, &layout.encoder())?;
    let mut csv = String::from("layer,epoch,reconstruction_error\n");
    for (l, trace) in traces.iter().enumerate() {
        for (e, err) in trace.iter().enumerate() {
            csv.push_str(&format!("{l},{e},{err:.9e}\n"));
        }
    }
    write_text(&layout.reports.join("encoder_trace.csv"), &csv)?;
    write_manifest(&layout.root, cfg)?;
    Ok(())
}

fn load_models(layout: &RunLayout) -> Result<(BandStats, DbnModel)> {
    let stats: BandStats = read_json(&layout.band_stats())?;
    require(&layout.encoder().join("manifest.json"))?;
    let model = load_dbn(&layout.encoder())?;
    Ok((stats, model))
}

/// Trains the IIC tree on encoded training samples.
pub fn cmd_train_tree(cfg: &PipelineConfig) -> Result<()> {
    let layout = RunLayout::new(cfg);
    let (stats, model) = load_models(&layout)?;
    let scenes = load_scenes(cfg, &layout)?;
    let data = training_matrix(cfg, &scenes, &stats)?;
    let features = encode(&model, data.view())?;
    let mut tree_cfg = cfg.tree.clone();
    tree_cfg.head.seed = derive_seed(cfg.seed, seeds::TREE);
    log::info!("training tree k={} depth={} on {} samples", tree_cfg.k, tree_cfg.max_depth, features.nrows());
    let tree = build_tree(features.view(), &tree_cfg)?;
    save_tree(&tree, &layout.tree())?;
    write_manifest(&layout.root, cfg)?;
    Ok(())
}

fn label_map_for(scene: &RasterScene, stats: &BandStats, radius: usize, model: &DbnModel, tree: &ClusterTree) -> Result<HierarchicalLabelMap> {
    let samples = extract_samples(scene, stats, radius)?;
    let features = encode(model, samples.features.view())?;
    assign_labels(tree, features.view(), &samples.coords, scene.width(), scene.height())
}

fn code_raster(geometry: GridGeometry, codes: &[i64], timestamp: i64, id: &str) -> Result<RasterScene> {
    let plane: Vec<f32> = codes.iter().map(|&c| c as f32).collect();
    let valid: Vec<bool> = codes.iter().map(|&c| c != NO_LABEL).collect();
    Ok(RasterScene::from_plane(geometry, &plane, &valid)?.with_metadata(timestamp, id))
}

fn labels_for(cfg: &PipelineConfig, layout: &RunLayout, ctx_idx: &[usize]) -> Result<Vec<LabelPolygonSet>> {
    let paths: Vec<PathBuf> = if cfg.context.labels.is_empty() {
        if cfg.data.synthetic.is_none() {
            return Err(Error::Invalid("context.labels is required for non-synthetic data".into()));
        }
        ctx_idx.iter().map(|&i| layout.auto_labels(i)).collect()
    } else {
        if cfg.context.labels.len() != ctx_idx.len() {
            return Err(Error::Invalid("context.labels needs one file per context scene".into()));
        }
        cfg.context.labels.clone()
    };
    paths
        .iter()
        .map(|p| {
            require(p)?;
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            LabelPolygonSet::from_geojson(&text)
        })
        .collect()
}

/// Label maps for every scene, context assignment from the labeled subset,
/// then per-target masks and scores.
pub fn cmd_predict(cfg: &PipelineConfig) -> Result<()> {
    let layout = RunLayout::new(cfg);
    let (stats, model) = load_models(&layout)?;
    let tree_manifest = layout.tree().join("tree_manifest.json");
    require(&tree_manifest)?;
    let tree = load_tree(&layout.tree())?;
    let tree_bytes = fs::read(&tree_manifest).map_err(|e| Error::io(&tree_manifest, e))?;
    let tree_id = sha256_hex(&tree_bytes)[..12].to_string();
    let scenes = load_scenes(cfg, &layout)?;
    layout.create()?;

    let maps: Vec<HierarchicalLabelMap> = scenes
        .iter()
        .map(|s| label_map_for(s, &stats, cfg.sampling.radius, &model, &tree))
        .collect::<Result<_>>()?;

    let ctx_idx = context_scene_indices(cfg, scenes.len())?;
    let labels = labels_for(cfg, &layout, &ctx_idx)?;
    let mut hist = ClusterClassHistogram::default();
    for (&i, set) in ctx_idx.iter().zip(&labels) {
        let raster = rasterize_polygons(set, &scenes[i])?;
        hist.merge(&build_histogram(&maps[i], &raster)?);
    }
    let context = ContextMap::build(&hist, cfg.context.tau, cfg.context.min_support)?;
    write_json(&layout.context(), &context)?;
    write_json(&layout.reports.join("context_histogram.json"), &hist.leaves)?;

    for (i, (scene, map)) in scenes.iter().zip(&maps).enumerate() {
        let id = RunLayout::scene_id(i);
        let g = scene.geometry();
        save_raster(&code_raster(g, &map.leaf, scene.timestamp, &id)?, &layout.leaves(i))?;
        save_raster(&code_raster(g, &context_subset(map, &context), scene.timestamp, &id)?, &layout.context_subset(i))?;
        for target in Target::ALL {
            let positives = context.positives(target);
            let mut mask = apply_context(map, positives, target).with_timestamp(scene.timestamp);
            mask.provenance.scene_id = id.clone();
            mask.provenance.tree_id = tree_id.clone();
            save_raster(&mask.to_raster(g)?, &layout.mask(i, target))?;
            let scores: Vec<f32> = soft_scores(map, positives).iter().map(|&s| s as f32).collect();
            let r = RasterScene::from_plane(g, &scores, mask.valid())?.with_metadata(scene.timestamp, id.clone());
            save_raster(&r, &layout.scores(i, target))?;
        }
        log::info!("{id}: {} labeled pixels", map.labeled_count());
    }
    write_manifest(&layout.root, cfg)?;
    Ok(())
}

fn load_mask(path: &Path, target: Target) -> Result<BinaryMask> {
    let mut m = BinaryMask::from_raster(&require_raster(path)?)?;
    m.target = Some(target);
    Ok(m)
}

/// Scores predicted masks against generator truth and configured references.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let layout = RunLayout::new(cfg);
    let n_scenes = scene_paths(cfg, &layout).len();
    let mut jobs: Vec<(usize, Target, String, PathBuf)> = Vec::new();
    if cfg.data.synthetic.is_some() {
        for i in 0..n_scenes {
            for t in Target::ALL {
                jobs.push((i, t, "truth".into(), layout.truth(i, t.name())));
            }
        }
    }
    for (j, r) in cfg.evaluation.references.iter().enumerate() {
        if r.scene >= n_scenes {
            return Err(Error::Invalid(format!("reference scene {} out of range", r.scene)));
        }
        jobs.push((r.scene, r.target, format!("reference_{j}"), r.path.clone()));
    }
    if jobs.is_empty() {
        return Err(Error::Invalid("nothing to evaluate: no synthetic truth and no references".into()));
    }
    layout.create()?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for (i, target, reference, path) in jobs {
        let mask = load_mask(&layout.mask(i, target), target)?;
        let refm = load_mask(&path, target)?;
        let mut report = evaluate_pair(&mask, &refm, &cfg.evaluation.ssim)?;
        report.scene = RunLayout::scene_id(i);
        report.target = target.name().into();
        report.reference = reference.clone();
        let name = format!("eval_{}_{}_{}.json", report.scene, report.target, reference);
        write_json(&layout.reports.join(name), &report)?;
        log::info!(
            "{} {} vs {}: ssim {:.4} iou {:.4}",
            report.scene, report.target, reference, report.ssim, report.iou
        );
        reports.push(report);
    }
    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&layout.reports.join("eval.csv"), &csv)?;

    #[derive(Serialize)]
    struct Summary {
        target: String,
        reference: String,
        scenes: usize,
        mean_ssim: f64,
        mean_iou: f64,
    }
    let mut summary = Vec::new();
    let mut keys: Vec<(String, String)> = reports.iter().map(|r| (r.target.clone(), r.reference.clone())).collect();
    keys.sort();
    keys.dedup();
    for (target, reference) in keys {
        let group: Vec<&EvalReport> = reports.iter().filter(|r| r.target == target && r.reference == reference).collect();
        let n = group.len() as f64;
        summary.push(Summary {
            target,
            reference,
            scenes: group.len(),
            mean_ssim: group.iter().map(|r| r.ssim).sum::<f64>() / n,
            mean_iou: group.iter().map(|r| r.iou).sum::<f64>() / n,
        });
    }
    write_json(&layout.reports.join("eval_summary.json"), &summary)?;
    write_manifest(&layout.root, cfg)?;
    Ok(())
}

fn stream_from(mask_path: &Path, scores_path: Option<&Path>, weight: f64, target: Target, sensor: &str) -> Result<StreamMask> {
    let raster = require_raster(mask_path)?;
    let mask = load_mask(mask_path, target)?;
    let scores = match scores_path {
        Some(p) => Some(require_raster(p)?.band(0).iter().map(|&v| f64::from(v).clamp(0.0, 1.0)).collect()),
        None => None,
    };
    let mut s = StreamMask::new(raster.geometry(), mask, scores, weight)?;
    s.sensor_id = if sensor.is_empty() { raster.sensor_id.clone() } else { sensor.to_string() };
    Ok(s)
}

/// Fuses stream masks into a certainty mask and restores cloud-filtered
/// retrievals under the binarized result.
pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<()> {
    let layout = RunLayout::new(cfg);
    let f = &cfg.fusion;
    let target = f.target;
    let reference = require_raster(&layout.mask(f.reference_scene, target))?;
    let streams: Vec<StreamMask> = if f.streams.is_empty() {
        (0..scene_paths(cfg, &layout).len())
            .map(|i| {
                let scores = layout.scores(i, target);
                stream_from(&layout.mask(i, target), Some(scores.as_path()), 1.0, target, "")
            })
            .collect::<Result<_>>()?
    } else {
        f.streams
            .iter()
            .map(|e| {
                let scores = e.scores.as_ref().map(PathBuf::from);
                stream_from(Path::new(&e.mask), scores.as_deref(), e.weight, target, &e.sensor_id)
            })
            .collect::<Result<_>>()?
    };
    let cert = fuse(&streams, &reference.geometry(), reference.timestamp, f.time_window)?;
    let strict = binarize(&cert, f.theta)?;
    layout.create()?;
    save_raster(&cert.to_raster()?, &layout.masks.join(format!("fused_{}_certainty", target.name())))?;
    save_raster(&strict.to_raster(cert.geometry)?, &layout.masks.join(format!("fused_{}_mask", target.name())))?;

    #[derive(Serialize)]
    struct RestoreReport {
        input_valid: usize,
        cloud_filtered_valid: usize,
        restored_valid: usize,
    }
    #[derive(Serialize)]
    struct FusionReport {
        target: String,
        streams: usize,
        covered_pixels: usize,
        mask_pixels: usize,
        restoration: Option<RestoreReport>,
    }
    let retrieval = match (&f.retrieval, &cfg.data.synthetic) {
        (Some(p), _) => Some(RetrievalGrid::from_raster(&require_raster(p)?)?),
        (None, Some(_)) if target == Target::Smoke => {
            let truth = load_truth(&layout, f.reference_scene)?;
            let grid = synthetic_retrieval(&truth, reference.geometry(), derive_seed(cfg.seed, seeds::RETRIEVAL));
            save_raster(&grid.to_raster()?, &layout.scenes.join("retrieval"))?;
            Some(grid)
        }
        _ => None,
    };
    let restoration = match retrieval {
        Some(grid) if target == Target::Smoke => {
            let none = BinaryMask::new(strict.width, strict.height, vec![false; strict.values().len()], strict.valid().to_vec())?;
            let filtered = restore_retrievals(&grid, &none, f.cf_threshold)?;
            let restored = restore_retrievals(&grid, &strict, f.cf_threshold)?;
            save_raster(&restored.to_raster()?, &layout.masks.join("restored_retrieval"))?;
            Some(RestoreReport {
                input_valid: grid.valid_count(),
                cloud_filtered_valid: filtered.valid_count(),
                restored_valid: restored.valid_count(),
            })
        }
        _ => None,
    };
    let report = FusionReport {
        target: target.name().into(),
        streams: streams.len(),
        covered_pixels: cert.contributors.iter().filter(|&&c| c > 0).count(),
        mask_pixels: strict.count(),
        restoration,
    };
    write_json(&layout.reports.join(format!("fusion_{}.json", target.name())), &report)?;
    write_manifest(&layout.root, cfg)?;
    Ok(())
}

/// Tracks connected components of the predicted masks across scenes.
pub fn cmd_track(cfg: &PipelineConfig) -> Result<()> {
    let layout = RunLayout::new(cfg);
    let t = &cfg.tracking;
    let masks: Vec<BinaryMask> = (0..scene_paths(cfg, &layout).len())
        .map(|i| load_mask(&layout.mask(i, t.target), t.target))
        .collect::<Result<_>>()?;
    let tracks = track_sequence(&masks, t.connectivity()?, t.iou_min)?;
    layout.create()?;
    write_text(&layout.tracks.join(format!("tracks_{}.csv", t.target.name())), &tracks_to_csv(&tracks))?;
    write_json(&layout.tracks.join(format!("tracks_{}.json", t.target.name())), &tracks)?;
    write_manifest(&layout.root, cfg)?;
    Ok(())
}
