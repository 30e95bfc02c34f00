use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::warn;
use rayon::prelude::*;
use ssmtrack_core::blocks::Checkpoint;
use ssmtrack_core::config::RunConfig;
use ssmtrack_core::events::io::{read_boxes, GT_FILE};
use ssmtrack_core::events::{
    list_sequences, read_dataset, read_sequence, synth_generate, write_gray_ppm, write_sequence,
    SequenceData,
};
use ssmtrack_core::tracker::metrics::{fps, join_records, read_results, read_times, write_results, write_times};
use ssmtrack_core::tracker::{
    count_params, estimate_flops, eval_metrics, track_sequence, train_toy, ModelConfig, Report,
    TrackOptions, TrackRecord, TrackerModel,
};
use ssmtrack_core::{selftest, Real};

use crate::Precision;

/// Reference parameter figure printed by `bench` for comparison.
const REFERENCE_PARAMS_FIGURE: f64 = 7.0;
/// Range the full-size parameter count must fall in.
const FULL_SCALE_RANGE: (usize, usize) = (4_000_000, 14_000_000);

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn times_path(results: &Path) -> PathBuf {
    results.with_extension("times.txt")
}

pub fn synth(config: Option<&Path>, out: &Path) -> Result<bool> {
    let cfg = run_config(config)?;
    if cfg.synth.frames == 1 {
        warn!("frames = 1: sequences have no frames to track after the first");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..cfg.sequences {
        let name = format!("seq_{i:03}");
        let seq = synth_generate(&cfg.synth, cfg.sequence_seed(i))?;
        write_sequence(&out.join(&name), &seq).with_context(|| format!("writing {name}"))?;
        println!(
            "{name}: {} frames, {} events, {}x{}",
            seq.frames.len(),
            seq.stream.len(),
            cfg.synth.width,
            cfg.synth.height
        );
    }
    Ok(true)
}

fn train_as<T: Real>(cfg: &RunConfig, dataset: &[SequenceData], out: &Path, log: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(log).with_context(|| format!("creating {}", log.display()))?);
    let outcome = train_toy::<T>(cfg.model, &cfg.train, dataset, Some(&mut w))?;
    w.flush()?;
    outcome
        .model
        .to_checkpoint()
        .save(out)
        .with_context(|| format!("writing {}", out.display()))?;
    let l = &outcome.losses;
    let k = l.len().min(100);
    if k > 0 {
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        println!(
            "trained {} steps: mean loss {:.4} over the first {k}, {:.4} over the last {k}",
            l.len(),
            mean(&l[..k]),
            mean(&l[l.len() - k..])
        );
    }
    Ok(())
}

pub fn train(
    precision: Precision,
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<bool> {
    let cfg = run_config(config)?;
    let dataset = read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let log = log.map_or_else(|| out.with_extension("loss.txt"), Path::to_path_buf);
    match precision {
        Precision::F32 => train_as::<f32>(&cfg, &dataset, out, &log)?,
        Precision::F64 => train_as::<f64>(&cfg, &dataset, out, &log)?,
    }
    Ok(true)
}

fn track_one<T: Real>(
    model: &TrackerModel<T>,
    seq: &SequenceData,
    opts: TrackOptions,
    out: &Path,
    maps: Option<&Path>,
) -> Result<Vec<TrackRecord>> {
    let result = track_sequence(model, seq, &seq.gts[0], opts)?;
    write_results(out, &result.records)?;
    write_times(&times_path(out), &result.records)?;
    if let Some(dir) = maps {
        fs::create_dir_all(dir)?;
        let s = model.config.grid();
        for (rec, map) in result.records.iter().zip(&result.maps) {
            write_gray_ppm(&dir.join(format!("{:06}.ppm", rec.frame_index)), map, s, s)?;
        }
    }
    Ok(result.records)
}

fn track_as<T: Real>(
    ck: &Checkpoint,
    sequence: &Path,
    out: &Path,
    window: bool,
    maps: Option<&Path>,
) -> Result<()> {
    let model = TrackerModel::<T>::from_checkpoint(ck)?;
    let opts = TrackOptions {
        window,
        keep_maps: maps.is_some(),
    };
    if sequence.join(GT_FILE).is_file() {
        let seq = read_sequence(sequence)?;
        let records = track_one(&model, &seq, opts, out, maps)?;
        println!("{}: {} frames tracked", seq.name, records.len());
        return Ok(());
    }
    fs::create_dir_all(out)?;
    let dirs = list_sequences(sequence)?;
    let done = dirs
        .par_iter()
        .map(|dir| -> Result<(String, usize)> {
            let seq = read_sequence(dir)?;
            let maps = maps.map(|m| m.join(&seq.name));
            let records = track_one(&model, &seq, opts, &out.join(format!("{}.txt", seq.name)), maps.as_deref())?;
            Ok((seq.name, records.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    for (name, n) in done {
        println!("{name}: {n} frames tracked");
    }
    Ok(())
}

pub fn track(
    precision: Precision,
    checkpoint: &Path,
    sequence: &Path,
    out: &Path,
    config: Option<&Path>,
    maps: Option<&Path>,
) -> Result<bool> {
    let cfg = run_config(config)?;
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    match precision {
        Precision::F32 => track_as::<f32>(&ck, sequence, out, cfg.track.window, maps)?,
        Precision::F64 => track_as::<f64>(&ck, sequence, out, cfg.track.window, maps)?,
    }
    Ok(true)
}

fn load_records(results: &Path, gt: &Path) -> Result<Vec<TrackRecord>> {
    let gts = read_boxes(gt).with_context(|| format!("reading {}", gt.display()))?;
    let res = read_results(results).with_context(|| format!("reading {}", results.display()))?;
    let tp = times_path(results);
    let times = if tp.is_file() { read_times(&tp)? } else { Vec::new() };
    Ok(join_records(&res, &gts, &times)?)
}

pub fn eval(results: &Path, gt: &Path) -> Result<bool> {
    let records = if results.is_dir() {
        let mut all = Vec::new();
        for dir in list_sequences(gt)? {
            let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            all.extend(load_records(&results.join(format!("{name}.txt")), &dir.join(GT_FILE))?);
        }
        all
    } else if gt.is_dir() {
        load_records(results, &gt.join(GT_FILE))?
    } else {
        load_records(results, gt)?
    };
    let report = Report {
        metrics: Some(eval_metrics(&records)?),
        fps: fps(&records),
        params: None,
        flops: None,
    };
    print!("{report}");
    Ok(true)
}

pub fn bench(config: Option<&Path>, checkpoint: Option<&Path>, full_scale: bool) -> Result<bool> {
    let (label, cfg, params) = if let Some(p) = checkpoint {
        let ck = Checkpoint::load(p).with_context(|| format!("reading {}", p.display()))?;
        let cfg = ModelConfig::from_meta(&ck.meta)?;
        (p.display().to_string(), cfg, count_params(&ck))
    } else {
        let (label, cfg) = if full_scale {
            ("full-scale".to_string(), ModelConfig::full_scale())
        } else {
            let c = run_config(config)?.model;
            (config.map_or("toy".into(), |p| p.display().to_string()), c)
        };
        let model = TrackerModel::<f32>::init(cfg, 0)?;
        (label, cfg, count_params(&model.to_checkpoint()))
    };
    let flops = estimate_flops(&cfg);
    let report = Report {
        metrics: None,
        fps: None,
        params: Some(params),
        flops: Some(flops.total()),
    };
    println!("config = {label}");
    print!("{report}");
    println!("flops_embed = {}", flops.embed);
    println!("flops_backbone = {}", flops.backbone);
    println!("flops_fusion = {}", flops.fusion);
    println!("flops_head = {}", flops.head);
    let millions = params as f64 / 1e6;
    let megabytes = 4.0 * params as f64 / 1e6;
    println!("reference_figure = {REFERENCE_PARAMS_FIGURE}");
    println!(
        "as_million_params = {millions:.3} (ratio {:.3})",
        millions / REFERENCE_PARAMS_FIGURE
    );
    println!(
        "as_megabytes_f32 = {megabytes:.3} (ratio {:.3})",
        megabytes / REFERENCE_PARAMS_FIGURE
    );
    let in_range = (FULL_SCALE_RANGE.0..=FULL_SCALE_RANGE.1).contains(&params);
    println!(
        "params_in_range = {in_range} ([{}, {}])",
        FULL_SCALE_RANGE.0, FULL_SCALE_RANGE.1
    );
    Ok(true)
}

pub fn selftest() -> Result<bool> {
    let results = selftest::run_all();
    let failed = results.iter().filter(|c| !c.passed).count();
    for c in &results {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{} checks, {failed} failed", results.len());
    Ok(failed == 0)
}
