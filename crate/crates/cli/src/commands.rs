use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use vesicle_core::blocks::{decompose, run_blockwise_to_dir, MaskPolicy, Pipeline, VsvProvider};
use vesicle_core::eval::{match_objects_with, precision_recall, sweep, write_csv, MatchOptions, SweepGrid};
use vesicle_core::features::{assemble_features, FeatureConfig};
use vesicle_core::forest::{load_model, predict, sample_training, save_model, train_with_oob, ForestParams};
use vesicle_core::fusion::{discard_border, fuse, ObjectSet};
use vesicle_core::synth::{generate_phantom, PhantomSpec};
use vesicle_core::vesicle::{find_vesicles, VesicleSet, VesicleTemplate};
use vesicle_core::volume::{bandpass_cutoffs, load_volume, load_volume_as, save_volume, MaskProvenance, Voxel};
use vesicle_core::{AnyVolume, Dims, Error, MembraneMask, Volume};

use crate::args::*;
use crate::png_stack::import_png_stack;
use crate::record::{record_path, write_record};
use crate::render::{render_overlay, save_png};

pub fn dispatch(cli: Cli) -> Result<()> {
    let workers = match cli.workers {
        Some(0) => return Err(UsageError("--workers must be at least 1".into()).into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(&a, workers),
        Command::Vesicles(a) => vesicles(&a, workers),
        Command::Train(a) => train(&a, workers),
        Command::Detect(a) => detect(&a, workers),
        Command::Fuse(a) => fuse_cmd(&a, workers),
        Command::Eval(a) => eval(&a, workers),
        Command::Sweep(a) => sweep_cmd(&a, workers),
        Command::BlocksRun(a) => blocks_run(&a, workers),
        Command::Render(a) => render(&a, workers),
        Command::ImportPngStack(a) => import(&a, workers),
    })
}

fn load_em(path: &Path) -> Result<Volume<u8>> {
    load_volume_as::<u8>(path).context("loading EM volume")
}

fn load_objects(path: &Path) -> Result<ObjectSet> {
    ObjectSet::load(path).context("loading objects")
}

fn incompatible(what: &str, path: &Path, found: String, expected: String) -> anyhow::Error {
    Error::Format(format!("{what} {}: {found} does not match the EM volume's {expected}", path.display())).into()
}

fn check_grid<T: Voxel>(what: &str, path: &Path, grid: &Volume<T>, em: &Volume<u8>) -> Result<()> {
    if grid.dims() != em.dims() {
        return Err(incompatible(what, path, grid.dims().to_string(), em.dims().to_string()));
    }
    if grid.resolution() != em.resolution() {
        return Err(incompatible(what, path, format!("{:?}", grid.resolution()), format!("{:?}", em.resolution())));
    }
    Ok(())
}

/// Synapse labels from an object manifest (`.json`) or a u32 label volume.
fn load_labels(path: &Path, em: &Volume<u8>) -> Result<Volume<u32>> {
    let labels = if path.extension().is_some_and(|e| e == "json") {
        load_objects(path)?.label_volume()
    } else {
        load_volume_as::<u32>(path).context("loading labels")?
    };
    check_grid("labels", path, &labels, em)?;
    Ok(labels)
}

/// Membrane mask from a file, absolute cutoffs, or (when `reference` is
/// given) a quantile band of the reference intensities. With none of these
/// every voxel is eligible.
fn build_mask(opts: &MaskOpts, em: &Volume<u8>, band_reference: Option<(&[u8], [f64; 2])>) -> Result<(MembraneMask, Value)> {
    if let Some(path) = &opts.membrane {
        let mask = match load_volume(path).context("loading membrane")? {
            AnyVolume::U8(g) => {
                check_grid("membrane", path, &g, em)?;
                MembraneMask::new(g, MaskProvenance::ExternalProbability)
            }
            AnyVolume::F32(p) => {
                check_grid("membrane", path, &p, em)?;
                MembraneMask::from_probability(&p, opts.membrane_threshold)
            }
            AnyVolume::U32(_) => {
                return Err(Error::Format(format!("membrane {}: expected u8 or f32 voxels", path.display())).into())
            }
        };
        let count = mask.count();
        return Ok((mask, json!({ "source": "file", "voxels": count })));
    }
    let (low, high, source) = match (opts.mask_cutoffs, band_reference) {
        (Some([low, high]), _) => (low, high, "cutoffs"),
        (None, Some((reference, [lo, hi]))) => {
            let (low, high) = bandpass_cutoffs(reference, lo as f32, hi as f32)?;
            (low, high, "label-band")
        }
        (None, None) => {
            let mask = MembraneMask::new(em.map(|_| 1u8), MaskProvenance::Synthetic);
            let count = mask.count();
            return Ok((mask, json!({ "source": "all", "voxels": count })));
        }
    };
    let mask = MembraneMask::new(
        em.map(|v| u8::from(low <= f64::from(v) && f64::from(v) <= high)),
        MaskProvenance::IntensityBandpass,
    );
    let count = mask.count();
    Ok((mask, json!({ "source": source, "cutoffs": [low, high], "voxels": count })))
}

fn check_vesicles(set: &VesicleSet, path: &Path, dims: Dims) -> Result<()> {
    if let Some(v) = set.iter().find(|v| (0..3).any(|a| v.position[a] >= dims.as_array()[a])) {
        return Err(Error::Format(format!("vesicles {}: {:?} lies outside {dims}", path.display(), v.position)).into());
    }
    Ok(())
}

fn vesicles_for(em: &Volume<u8>, path: Option<&Path>, opts: &VesicleOpts) -> Result<VesicleSet> {
    match path {
        Some(p) => {
            let set = VesicleSet::load(p)?;
            check_vesicles(&set, p, em.dims())?;
            Ok(set)
        }
        None => {
            let template = VesicleTemplate::build(&opts.template())?;
            Ok(find_vesicles(em, &template, &opts.detect_params())?)
        }
    }
}

fn pipeline(vesicles: &VesicleOpts, fusion: &FusionOpts) -> Result<Pipeline> {
    let mut p = Pipeline::new(fusion.params())?;
    p.template = VesicleTemplate::build(&vesicles.template())?;
    p.vesicles = vesicles.detect_params();
    p.vesicles.validate()?;
    p.fusion.validate()?;
    Ok(p)
}

fn synth(a: &SynthArgs, workers: usize) -> Result<()> {
    let spec = PhantomSpec {
        dims: Dims::from_array(a.dims),
        resolution: resolution(a.resolution),
        synapse_density: a.density,
        vesicle_cluster_rate: a.cluster_rate,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    let phantom = generate_phantom(&spec)?;
    phantom.save(&a.out)?;
    let summary = json!({
        "synapses": phantom.truth.len(),
        "synapse_voxels": phantom.truth.total_voxels(),
        "vesicles": phantom.vesicle_truth.len(),
        "membrane_voxels": phantom.membrane.count(),
        "stats": phantom.stats,
    });
    write_record(&record_path(&a.out, true), "synth", workers, a, summary)
}

fn vesicles(a: &VesiclesArgs, workers: usize) -> Result<()> {
    let em = load_em(&a.em)?;
    let params = a.vesicles.detect_params();
    let found = vesicles_for(&em, None, &a.vesicles)?;
    found.save_with_params(&a.out, &params)?;
    write_record(&record_path(&a.out, false), "vesicles", workers, a, json!({ "vesicles": found.len() }))
}

fn train(a: &TrainArgs, workers: usize) -> Result<()> {
    let em = load_em(&a.em)?;
    let labels = load_labels(&a.labels, &em)?;
    let under_labels: Vec<u8> =
        em.data().iter().zip(labels.data()).filter(|(_, &l)| l > 0).map(|(&v, _)| v).collect();
    if under_labels.is_empty() {
        return Err(Error::Format(format!("labels {}: no labelled voxels", a.labels.display())).into());
    }
    let (mask, mask_summary) = build_mask(&a.mask, &em, Some((&under_labels, a.band)))?;
    let params = ForestParams {
        n_trees: a.forest.trees,
        mtry: a.forest.mtry,
        min_leaf: a.forest.min_leaf,
        max_depth: a.forest.max_depth,
    };
    params.validate()?;
    let found = vesicles_for(&em, a.vesicles.as_deref(), &a.vesicle_opts)?;
    let features = assemble_features(&em, &found, &FeatureConfig::default())?;
    let ts = sample_training(&features, &labels, &mask, a.n_samples, a.seed)?;
    drop(features);
    let (model, oob) = train_with_oob(&ts, &params, a.seed)?;
    save_model(&model, &a.out)?;
    let summary = json!({
        "samples": ts.len(),
        "positives": ts.positives(),
        "vesicles": found.len(),
        "mask": mask_summary,
        "oob_accuracy": oob.accuracy,
        "oob_evaluated": oob.evaluated,
    });
    write_record(&record_path(&a.out, false), "train", workers, a, summary)
}

fn detect(a: &DetectArgs, workers: usize) -> Result<()> {
    let em = load_em(&a.em)?;
    let model = load_model(&a.model)?;
    let (mask, mask_summary) = build_mask(&a.mask, &em, None)?;
    let found = vesicles_for(&em, a.vesicles.as_deref(), &a.vesicle_opts)?;
    let features = assemble_features(&em, &found, &FeatureConfig::default())?;
    let prob = predict(&model, &features, &mask)?;
    drop(features);
    save_volume(&prob, &a.out)?;
    let max = prob.data().iter().copied().fold(0f32, f32::max);
    let summary = json!({ "vesicles": found.len(), "mask": mask_summary, "max_probability": max });
    write_record(&record_path(&a.out, false), "detect", workers, a, summary)
}

fn fuse_cmd(a: &FuseArgs, workers: usize) -> Result<()> {
    let params = a.fusion.params();
    params.validate()?;
    let prob = load_volume_as::<f32>(&a.prob).context("loading probabilities")?;
    let mut objects = fuse(&prob, &params)?;
    if let Some(pad) = a.discard_border {
        objects = discard_border(objects, pad)?;
    }
    objects.save(&a.out)?;
    let summary = json!({ "objects": objects.len(), "voxels": objects.total_voxels() });
    write_record(&record_path(&a.out, false), "fuse", workers, a, summary)
}

fn match_options(min_overlap: f64) -> Result<MatchOptions> {
    let options = MatchOptions { min_overlap_fraction: min_overlap };
    options.validate()?;
    Ok(options)
}

fn eval(a: &EvalArgs, workers: usize) -> Result<()> {
    let options = match_options(a.min_overlap)?;
    let detected = load_objects(&a.detected)?;
    let truth = load_objects(&a.truth)?;
    let m = match_objects_with(&detected, &truth, &options)?;
    let params = detected.params().copied().unwrap_or_default();
    let point = precision_recall(&m, params);
    write_csv(std::slice::from_ref(&point), &a.out)?;
    let summary = json!({
        "tp": point.tp,
        "fp": point.fp,
        "fn": point.fn_,
        "precision": point.precision,
        "recall": point.recall,
        "f1": point.f1(),
    });
    write_record(&record_path(&a.out, false), "eval", workers, a, summary)
}

fn sweep_cmd(a: &SweepArgs, workers: usize) -> Result<()> {
    let options = match_options(a.min_overlap)?;
    let mut grid = SweepGrid::default();
    if let Some(v) = &a.thresholds {
        grid.thresholds = v.clone();
    }
    if let Some(v) = &a.min2d {
        grid.min2d = v.clone();
    }
    if let Some(v) = &a.max2d {
        grid.max2d = v.clone();
    }
    if let Some(v) = &a.min3d {
        grid.min3d = v.clone();
    }
    if let Some(v) = &a.persistence {
        grid.persistence = v.clone();
    }
    grid.validate()?;
    let prob = load_volume_as::<f32>(&a.prob).context("loading probabilities")?;
    let truth = load_objects(&a.truth)?;
    let curve = sweep(&prob, &truth, &grid, &options)?;
    write_csv(&curve.grid, &a.out)?;
    let best = curve.best_f1();
    let summary = json!({ "cells": curve.grid.len(), "best": best, "best_f1": best.f1() });
    write_record(&record_path(&a.out, false), "sweep", workers, a, summary)
}

fn blocks_run(a: &BlocksRunArgs, workers: usize) -> Result<()> {
    let pipeline = pipeline(&a.vesicle_opts, &a.fusion)?;
    let source = VsvProvider::open(&a.em).context("opening EM volume")?;
    let membrane = match &a.membrane {
        Some(p) => Some(VsvProvider::open(p).context("opening membrane")?),
        None => None,
    };
    let policy = match (&membrane, a.mask_cutoffs) {
        (Some(m), _) => MaskPolicy::Provided(m),
        (None, Some([low, high])) => MaskPolicy::Bandpass { low, high },
        (None, None) => MaskPolicy::All,
    };
    let model = load_model(&a.model)?;
    let decomp = decompose(vesicle_core::blocks::VolumeProvider::dims(&source), a.block_size, a.pad)?;
    let (merged, reused) = run_blockwise_to_dir(&source, &model, &policy, &pipeline, &decomp, Some(workers), &a.out, a.resume)?;
    let summary = json!({
        "blocks": decomp.blocks.len(),
        "reused": reused,
        "objects": merged.len(),
        "voxels": merged.total_voxels(),
    });
    write_record(&record_path(&a.out, true), "blocks-run", workers, a, summary)
}

fn render(a: &RenderArgs, workers: usize) -> Result<()> {
    let em = load_em(&a.em)?;
    let detected = a.detected.as_deref().map(load_objects).transpose()?;
    let truth = a.truth.as_deref().map(load_objects).transpose()?;
    let img = render_overlay(&em, detected.as_ref(), truth.as_ref(), a.z)?;
    save_png(&img, &a.out)?;
    let summary = json!({ "width": img.width(), "height": img.height(), "z": a.z });
    write_record(&record_path(&a.out, false), "render", workers, a, summary)
}

fn import(a: &ImportPngStackArgs, workers: usize) -> Result<()> {
    let vol = import_png_stack(&a.dir, resolution(a.resolution))?;
    save_volume(&vol, &a.out)?;
    let d = vol.dims();
    let summary = json!({ "dims": [d.nx, d.ny, d.nz] });
    write_record(&record_path(&a.out, false), "import-png-stack", workers, a, summary)
}
