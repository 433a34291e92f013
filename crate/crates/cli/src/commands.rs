//! Implementations behind the CLI subcommands. Everything here is also a
//! plain library call so tests can compare CLI output against direct API
//! results.

use crate::config::PipelineConfig;
use anyhow::{bail, Context, Result};
use egohoi_core::augment;
use egohoi_core::calib::{self, CubeSpec};
use egohoi_core::camera::{self, CameraModel};
use egohoi_core::fusion::{self};
use egohoi_core::heatmap;
use egohoi_core::metrics;
use egohoi_core::pose3d::{self, AnnotationRecord, FrameDetections, Joints3D};
use egohoi_core::raster::{self, MaskRole};
use egohoi_core::rng::Stream;
use egohoi_core::synth::{self, NoiseModel, SceneParams};
use egohoi_core::timeline::{self, HoiTimeline, Segment, Status};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Run a closure inside a rayon pool of the requested size (0 = default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(f)
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub seed: u64,
    pub cams: usize,
    pub frames: usize,
    pub joints: usize,
    pub sigma: f64,
    pub dropout: f64,
    pub dropout_with: Option<f64>,
    pub cube_edge: f64,
    /// Fixed camera distance; default samples 0.5 to 0.8 m.
    pub radius: Option<f64>,
    pub fusion: usize,
    pub fusion_size: u32,
    pub out: PathBuf,
}

pub fn run_simulate(args: &SimulateArgs) -> Result<()> {
    create_out_dir(&args.out)?;
    let params = SceneParams {
        seed: args.seed,
        n_cams: args.cams,
        n_frames: args.frames,
        joint_count: args.joints,
        radius_range: args.radius.map_or((0.5, 0.8), |r| (r, r)),
        cube: CubeSpec {
            edge_m: args.cube_edge,
        },
        ..SceneParams::default()
    };
    let noise = NoiseModel {
        sigma_px: args.sigma,
        dropout_without: args.dropout,
        dropout_with: args.dropout_with.unwrap_or(args.dropout),
    };
    noise.validate();

    let scene = synth::generate_scene(&params);
    let detections = synth::render_detections(&scene, &noise);
    camera::save_cameras(&args.out.join("cameras.json"), &scene.cameras)?;
    pose3d::save_detections(&args.out.join("detections.json"), &detections)?;
    let gt = synth::ground_truth_frames(&scene);
    let mut buf = serde_json::to_vec_pretty(&gt)?;
    buf.push(b'\n');
    std::fs::write(args.out.join("gt.json"), buf)?;

    if args.fusion > 0 {
        let suite = synth::generate_fusion_suite(
            args.seed,
            args.fusion,
            (args.fusion_size, args.fusion_size),
        );
        fusion::write_quadruple_dir(
            &args.out.join("fusion"),
            suite
                .iter()
                .map(|s| (s.frame, &s.pose, &s.hand, &s.object, Some(s.interacting))),
        )?;
    }
    println!(
        "simulated {} paired frames over {} cameras into {}",
        args.frames,
        args.cams,
        args.out.display()
    );
    Ok(())
}

// --------------------------------------------------------------- calibrate

pub fn run_calibrate(config: &PipelineConfig, restarts: usize, out: &Path) -> Result<()> {
    let cameras_path = config.require("cameras", &config.paths.cameras)?;
    let cube_path = config.require("cube", &config.paths.cube)?;
    let detections_path = config.require("detections", &config.paths.detections)?;
    let cameras = camera::load_cameras(cameras_path)
        .with_context(|| format!("loading {}", cameras_path.display()))?;
    let cube = calib::load_cube(cube_path)
        .with_context(|| format!("loading {}", cube_path.display()))?;
    let detections = pose3d::load_detections(detections_path)
        .with_context(|| format!("loading {}", detections_path.display()))?;

    let mut calibrated = Vec::with_capacity(cameras.len());
    for cam in &cameras {
        // Online calibration from the first frame that saw the cube.
        let (frame_id, observations) = detections
            .iter()
            .find_map(|frame| {
                frame
                    .cube_corners
                    .iter()
                    .find(|view| view.camera == cam.id)
                    .map(|view| (frame.frame, view))
            })
            .with_context(|| format!("camera {}: no cube corner observations", cam.id))?;
        let corner_obs: Vec<calib::CornerObservation> = observations
            .corners
            .iter()
            .map(|&(corner, u, v, confidence)| calib::CornerObservation {
                corner,
                u,
                v,
                confidence,
            })
            .collect();
        let estimate = calib::estimate_camera_pose(&cam.intrinsics, &cube, &corner_obs, restarts)
            .with_context(|| format!("camera {}: pose estimation failed", cam.id))?;
        println!(
            "camera {}: rms {:.6} px over {} corners (frame {frame_id})",
            cam.id,
            estimate.rms_px,
            corner_obs.len()
        );
        calibrated.push(CameraModel::from_cube_pose(
            cam.id.clone(),
            cam.intrinsics,
            estimate.pose,
        )?);
    }
    camera::save_cameras(out, &calibrated)?;
    println!("wrote {}", out.display());
    Ok(())
}

// ------------------------------------------------------------ annotate-pair

/// Pair the even (object-removed) and odd (with-object) frames of one
/// detections file by id: the partner of frame `2i+1` is `2i`.
fn pair_frames(
    detections: &[FrameDetections],
) -> Result<Vec<(&FrameDetections, &FrameDetections)>> {
    let by_id: BTreeMap<u64, &FrameDetections> =
        detections.iter().map(|f| (f.frame, f)).collect();
    let mut pairs = Vec::new();
    for (&id, frame) in &by_id {
        if id % 2 == 1 {
            let partner = by_id.get(&(id - 1)).copied().with_context(|| {
                format!("frame {id}: missing object-removed partner frame {}", id - 1)
            })?;
            pairs.push((partner, *frame));
        } else if !by_id.contains_key(&(id + 1)) {
            bail!(
                "frame {}: missing with-object partner frame {}",
                frame.frame,
                id + 1
            );
        }
    }
    Ok(pairs)
}

pub fn annotate_pairs(
    cameras: &[CameraModel],
    detections: &[FrameDetections],
    joint_count: usize,
    gate_rms_px: f64,
) -> Result<Vec<AnnotationRecord>> {
    let pairs = pair_frames(detections)?;
    let records: Result<Vec<AnnotationRecord>> = pairs
        .par_iter()
        .map(|(without, with)| {
            let dets = without.to_detections();
            for det in &dets {
                if det.joints.len() != joint_count {
                    bail!(
                        "frame {}: camera {} has {} joints, expected {joint_count}",
                        without.frame,
                        det.camera,
                        det.joints.len()
                    );
                }
            }
            let (joints, report) = pose3d::triangulate(&dets, cameras, None)
                .with_context(|| format!("frame {}: triangulation failed", without.frame))?;
            let threshold = pose3d::gate_threshold(gate_rms_px, report.observation_count);
            let valid = pose3d::gate_annotation(report.loss, threshold);
            let labels = pose3d::transfer_labels(&joints, cameras);
            Ok(AnnotationRecord {
                frame: with.frame,
                valid,
                loss: report.loss,
                joints3d: joints.0.iter().map(|p| (p.x, p.y, p.z)).collect(),
                labels2d: labels
                    .into_iter()
                    .map(|view| (view.camera, view.labels))
                    .collect(),
            })
        })
        .collect();
    records
}

pub fn run_annotate_pair(config: &PipelineConfig, out: &Path) -> Result<()> {
    let cameras_path = config.require("cameras", &config.paths.cameras)?;
    let detections_path = config.require("detections", &config.paths.detections)?;
    let cameras = camera::load_cameras(cameras_path)
        .with_context(|| format!("loading {}", cameras_path.display()))?;
    let detections = pose3d::load_detections(detections_path)
        .with_context(|| format!("loading {}", detections_path.display()))?;
    let records = annotate_pairs(&cameras, &detections, config.joint_count, config.gate_rms_px)?;
    let valid = records.iter().filter(|r| r.valid).count();
    pose3d::save_annotations(out, &records)?;
    println!(
        "annotated {} pairs: {} valid, {} invalid",
        records.len(),
        valid,
        records.len() - valid
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ----------------------------------------------------------------- augment

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentFrame {
    pub frame: u64,
    pub image: String,
    pub joints: Vec<(f64, f64)>,
}

// Stream op indices for the per-frame augmentation draws.
const OP_BACKGROUND: u64 = 0;
const OP_OCCLUSIONS: u64 = 1;
const OP_PHOTOMETRIC: u64 = 2;

pub fn run_augment(config: &PipelineConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let manifest_path = config.require("augment_manifest", &config.paths.augment_manifest)?;
    let backgrounds_dir = config.require("backgrounds", &config.paths.backgrounds)?;
    create_out_dir(out_dir)?;

    let data = std::fs::read(manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let frames: Vec<AugmentFrame> = serde_json::from_slice(&data)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut backgrounds: Vec<PathBuf> = std::fs::read_dir(backgrounds_dir)
        .with_context(|| format!("listing {}", backgrounds_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "ppm"))
        .collect();
    backgrounds.sort();
    if backgrounds.is_empty() {
        bail!("no .ppm backgrounds in {}", backgrounds_dir.display());
    }

    let out_frames: Result<Vec<AugmentFrame>> = frames
        .par_iter()
        .map(|frame| {
            let image_path = base.join(&frame.image);
            let img = raster::load_ppm(&image_path)
                .with_context(|| format!("frame {}: loading {}", frame.frame, image_path.display()))?;

            let mut bg_stream = Stream::new(seed, frame.frame, OP_BACKGROUND);
            let bg_path = &backgrounds[bg_stream.below(backgrounds.len())];
            let background = raster::load_ppm(bg_path)
                .with_context(|| format!("frame {}: loading {}", frame.frame, bg_path.display()))?;
            let background = augment::resize_bilinear(&background, img.width, img.height);

            let key = augment::chroma_key_mask(&img, &config.augment);
            let composited = augment::composite_background(&img, &key, &background)
                .with_context(|| format!("frame {}: compositing failed", frame.frame))?;

            let mut occ_stream = Stream::new(seed, frame.frame, OP_OCCLUSIONS);
            let occluded =
                augment::draw_occlusions(&composited, &frame.joints, &config.augment, &mut occ_stream);

            let mut photo_stream = Stream::new(seed, frame.frame, OP_PHOTOMETRIC);
            let (warped, affine) =
                augment::photometric_warp(&occluded, &config.augment, &mut photo_stream);

            let name = format!("frame_{:06}.ppm", frame.frame);
            raster::save_ppm(&out_dir.join(&name), &warped)
                .with_context(|| format!("frame {}: writing {name}", frame.frame))?;
            Ok(AugmentFrame {
                frame: frame.frame,
                image: name,
                joints: frame
                    .joints
                    .iter()
                    .map(|&(u, v)| affine.apply(u, v))
                    .collect(),
            })
        })
        .collect();
    let out_frames = out_frames?;

    let mut buf = serde_json::to_vec_pretty(&out_frames)?;
    buf.push(b'\n');
    std::fs::write(out_dir.join("manifest.json"), buf)?;
    println!(
        "augmented {} frames into {}",
        out_frames.len(),
        out_dir.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ detect

/// Classification of one manifest frame.
fn detect_frame(
    dir: &Path,
    entry: &fusion::ManifestEntry,
    model: &fusion::FusionModel,
    threshold: f64,
) -> Result<(Option<f64>, Status)> {
    let pose = heatmap::load_hmap(&dir.join(&entry.pose))
        .with_context(|| format!("frame {}: loading {}", entry.frame, entry.pose))?;
    let hand = raster::load_pgm(&dir.join(&entry.hand), MaskRole::Hand)
        .with_context(|| format!("frame {}: loading {}", entry.frame, entry.hand))?;
    let object = raster::load_pgm(&dir.join(&entry.object), MaskRole::Object)
        .with_context(|| format!("frame {}: loading {}", entry.frame, entry.object))?;
    if hand.count_ones() == 0 {
        return Ok((None, Status::NoHand));
    }
    let features = fusion::extract_features(&pose, &hand, &object, model.ablate)?;
    let p = fusion::predict(model, &features)?;
    let status = if p >= threshold { Status::Hoi } else { Status::Idle };
    Ok((Some(p), status))
}

pub fn run_detect(config: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let model_path = config.require("model", &config.paths.model)?;
    let frames_dir = config.require("frames_dir", &config.paths.frames_dir)?;
    create_out_dir(out_dir)?;
    let model = fusion::load_model(model_path)
        .with_context(|| format!("loading {}", model_path.display()))?;
    let manifest = fusion::load_manifest(&frames_dir.join("manifest.json"))
        .with_context(|| format!("loading manifest in {}", frames_dir.display()))?;
    if manifest.is_empty() {
        bail!("manifest in {} lists no frames", frames_dir.display());
    }

    let by_id: BTreeMap<u64, &fusion::ManifestEntry> =
        manifest.iter().map(|e| (e.frame, e)).collect();
    let first = *by_id.keys().next().unwrap();
    let last = *by_id.keys().last().unwrap();

    let rows: Vec<(Option<f64>, Status)> = (first..=last)
        .into_par_iter()
        .map(|id| match by_id.get(&id) {
            None => {
                eprintln!("frame {id}: missing from manifest; marked no_hand");
                (None, Status::NoHand)
            }
            Some(entry) => {
                match detect_frame(frames_dir, entry, &model, config.decision_threshold) {
                    Ok(row) => row,
                    Err(err) => {
                        eprintln!("frame {id}: {err:#}; marked no_hand");
                        (None, Status::NoHand)
                    }
                }
            }
        })
        .collect();

    let raw_timeline = HoiTimeline::from_raw(config.fps, rows);
    let smoothed = timeline::smooth_timeline(&raw_timeline);
    eprintln!(
        "smoothing window: {} frames (fps {})",
        timeline::smoothing_window(config.fps),
        config.fps
    );

    let mut csv = Vec::new();
    timeline::write_timeline_csv(&mut csv, &smoothed, first)?;
    std::fs::write(out_dir.join("timeline.csv"), csv)?;

    let segments: Vec<Segment> = timeline::extract_segments(&smoothed)
        .into_iter()
        .map(|s| Segment::hoi(s.start + first, s.end + first))
        .collect();
    timeline::save_segments(&out_dir.join("segments.json"), &segments)?;
    println!(
        "detected {} interaction segments over {} frames",
        segments.len(),
        smoothed.frames.len()
    );
    Ok(())
}

// ----------------------------------------------------------------- segment

pub fn run_segment(fps: f64, timeline_path: &Path, out: &Path) -> Result<()> {
    let file = std::fs::File::open(timeline_path)
        .with_context(|| format!("opening {}", timeline_path.display()))?;
    let (raw, first) = timeline::read_timeline_csv(std::io::BufReader::new(file), fps)
        .with_context(|| format!("parsing {}", timeline_path.display()))?;
    let smoothed = timeline::smooth_timeline(&raw);
    let segments: Vec<Segment> = timeline::extract_segments(&smoothed)
        .into_iter()
        .map(|s| Segment::hoi(s.start + first, s.end + first))
        .collect();
    timeline::save_segments(out, &segments)?;
    println!("wrote {} segments to {}", segments.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- eval-pck

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame: u64,
    pub points: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeypointFile {
    pub frames: Vec<KeypointFrame>,
}

pub fn load_keypoints(path: &Path) -> Result<KeypointFile> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&data).with_context(|| format!("parsing {}", path.display()))
}

pub fn run_eval_pck(
    pred_path: &Path,
    gt_path: &Path,
    max_threshold: f64,
    steps: usize,
    out_curve: &Path,
) -> Result<f64> {
    if !max_threshold.is_finite() || max_threshold <= 0.0 {
        bail!("--max-threshold must be positive");
    }
    let pred = load_keypoints(pred_path)?;
    let gt = load_keypoints(gt_path)?;
    let gt_by_id: BTreeMap<u64, &KeypointFrame> =
        gt.frames.iter().map(|f| (f.frame, f)).collect();

    let mut pred_points = Vec::new();
    let mut gt_points = Vec::new();
    let mut visible = Vec::new();
    for frame in &pred.frames {
        let gt_frame = gt_by_id
            .get(&frame.frame)
            .with_context(|| format!("frame {}: missing from {}", frame.frame, gt_path.display()))?;
        if gt_frame.points.len() != frame.points.len() {
            bail!(
                "frame {}: {} predicted keypoints vs {} ground truth",
                frame.frame,
                frame.points.len(),
                gt_frame.points.len()
            );
        }
        for (i, (&p, &g)) in frame.points.iter().zip(&gt_frame.points).enumerate() {
            let vis = frame.visible.as_ref().is_none_or(|v| v[i])
                && gt_frame.visible.as_ref().is_none_or(|v| v[i]);
            pred_points.push(p);
            gt_points.push(g);
            visible.push(vis);
        }
    }

    let thresholds: Vec<f64> = (0..=steps)
        .map(|i| max_threshold * i as f64 / steps as f64)
        .collect();
    let curve = metrics::pck_curve(&pred_points, &gt_points, &visible, &thresholds)?;
    let auc = metrics::auc(&curve, (0.0, max_threshold))?;

    let mut csv = String::from("threshold,pck\n");
    for (t, p) in curve.thresholds.iter().zip(&curve.pck) {
        csv.push_str(&format!("{t},{p}\n"));
    }
    std::fs::write(out_curve, csv)?;
    println!("AUC: {auc}");
    println!("wrote {}", out_curve.display());
    Ok(auc)
}

// ---------------------------------------------------------------- eval-seg

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub frame_acc: f64,
}

/// Paint segment lists onto per-frame statuses over a shared horizon and
/// compare framewise; segment match quality comes from the greedy F1.
pub fn evaluate_segments(pred: &[Segment], gt: &[Segment], iou: f64) -> SegReport {
    let (precision, recall, f1) = metrics::f1_at_iou(pred, gt, iou);
    let horizon = pred
        .iter()
        .chain(gt)
        .map(|s| s.end + 1)
        .max()
        .unwrap_or(0);
    let frame_acc = if horizon == 0 {
        1.0
    } else {
        let paint = |segments: &[Segment]| -> Vec<Status> {
            let mut statuses = vec![Status::Idle; horizon as usize];
            for seg in segments {
                for i in seg.start..=seg.end {
                    statuses[i as usize] = Status::Hoi;
                }
            }
            statuses
        };
        metrics::frame_accuracy(&paint(pred), &paint(gt)).expect("equal painted lengths")
    };
    SegReport {
        precision,
        recall,
        f1,
        frame_acc,
    }
}

pub fn run_eval_seg(pred_path: &Path, gt_path: &Path, iou: f64, out: &Path) -> Result<SegReport> {
    let pred = timeline::load_segments(pred_path)
        .with_context(|| format!("loading {}", pred_path.display()))?;
    let gt = timeline::load_segments(gt_path)
        .with_context(|| format!("loading {}", gt_path.display()))?;
    let report = evaluate_segments(&pred, &gt, iou);
    let mut buf = serde_json::to_vec_pretty(&report)?;
    buf.push(b'\n');
    std::fs::write(out, buf)?;
    println!(
        "precision {} recall {} f1 {} frame_acc {}",
        report.precision, report.recall, report.f1, report.frame_acc
    );
    println!("wrote {}", out.display());
    Ok(report)
}

// ------------------------------------------------------------- train-fusion

pub fn run_train_fusion(config: &PipelineConfig, seed: u64, out: &Path) -> Result<()> {
    let frames_dir = config.require("frames_dir", &config.paths.frames_dir)?;
    let mut train_config = config.train.clone();
    train_config.seed = seed;
    let dataset = fusion::load_labeled_features(frames_dir, train_config.ablate)
        .with_context(|| format!("loading training set in {}", frames_dir.display()))?;
    let (model, trace) = fusion::train(&dataset, &train_config)?;
    let accuracy = fusion::accuracy(&model, &dataset, config.decision_threshold)?;
    fusion::save_model(out, &model)?;

    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in trace.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    let trace_path = out.with_file_name("loss_trace.csv");
    std::fs::write(&trace_path, csv)?;
    println!(
        "trained on {} samples: final loss {}, training accuracy {accuracy}",
        dataset.len(),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    println!("wrote {} and {}", out.display(), trace_path.display());
    Ok(())
}

// A few helpers shared by tests.

/// Joints3D from the serialized triple form.
pub fn joints_from_triples(triples: &[(f64, f64, f64)]) -> Joints3D {
    Joints3D(
        triples
            .iter()
            .map(|&(x, y, z)| egohoi_core::nalgebra::Vector3::new(x, y, z))
            .collect(),
    )
}
