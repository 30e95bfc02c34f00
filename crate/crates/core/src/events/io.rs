//! On-disk sequence layout.
//!
//! A dataset is a directory holding one sub-directory per sequence:
//!
//! ```text
//! <seq>/events.txt    t x y p            (µs, pixels, ±1), sorted by t
//! <seq>/frames.idx    idx t_start t_end path
//! <seq>/gt.txt        frame_index cx cy w h
//! <seq>/frames/NNNNNN.ppm   binary P6 pixmaps
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::events::synth::SynthSequence;
use crate::events::types::{EventPoint, EventStream, ExposureWindow, GroundTruthBox};
use crate::numerics::DenseArray;

pub const EVENTS_FILE: &str = "events.txt";
pub const FRAMES_INDEX: &str = "frames.idx";
pub const GT_FILE: &str = "gt.txt";
pub const FRAMES_DIR: &str = "frames";

/// A sequence loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub name: String,
    pub frames: Vec<DenseArray<f32>>,
    pub windows: Vec<ExposureWindow>,
    pub stream: EventStream,
    pub gts: Vec<GroundTruthBox>,
}

impl SequenceData {
    pub fn width(&self) -> usize {
        self.frames[0].dim(1)
    }

    pub fn height(&self) -> usize {
        self.frames[0].dim(0)
    }
}

impl From<(String, SynthSequence)> for SequenceData {
    fn from((name, s): (String, SynthSequence)) -> Self {
        Self {
            name,
            frames: s.frames,
            windows: s.windows,
            stream: s.stream,
            gts: s.gts,
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}:{}: {msg}", path.display(), line + 1))
}

/// Non-empty, non-comment lines with their 0-based line numbers.
fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((i, t.to_string()));
        }
    }
    Ok(out)
}

fn fields<const N: usize>(path: &Path, i: usize, line: &str) -> Result<[String; N]> {
    let parts: Vec<String> = line.split_whitespace().map(str::to_string).collect();
    parts
        .try_into()
        .map_err(|p: Vec<String>| parse_err(path, i, format!("expected {N} fields, found {}", p.len())))
}

fn num<T: std::str::FromStr>(path: &Path, i: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(path, i, format!("cannot parse {s:?}")))
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in stream.events() {
        writeln!(w, "{} {} {} {}", e.t, e.x, e.y, e.p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events(path: &Path, width: u32, height: u32, duration: u64) -> Result<EventStream> {
    let mut events = Vec::new();
    for (i, line) in data_lines(path)? {
        let [t, x, y, p] = fields::<4>(path, i, &line)?;
        events.push(EventPoint {
            t: num(path, i, &t)?,
            x: num(path, i, &x)?,
            y: num(path, i, &y)?,
            p: num(path, i, &p)?,
        });
    }
    EventStream::new(events, width, height, duration)
}

/// Writes an `[H × W × 3]` frame with values in 0..255 as binary P6.
pub fn write_ppm(path: &Path, frame: &DenseArray<f32>) -> Result<()> {
    if frame.ndim() != 3 || frame.dim(2) != 3 {
        return Err(Error::dim("pixmap frames must be [H × W × 3]"));
    }
    let bytes: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    PnmEncoder::new(&mut w)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(
            &bytes,
            frame.dim(1) as u32,
            frame.dim(0) as u32,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<DenseArray<f32>> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f32::from).collect();
    DenseArray::new(&[h as usize, w as usize, 3], data)
}

/// Writes a single-channel map with values in `[0, 1]` as a grey pixmap.
pub fn write_gray_ppm(path: &Path, map: &[f64], width: usize, height: usize) -> Result<()> {
    let mut data = Vec::with_capacity(width * height * 3);
    for &v in map {
        let q = (v.clamp(0.0, 1.0) * 255.0) as f32;
        data.extend_from_slice(&[q, q, q]);
    }
    write_ppm(path, &DenseArray::new(&[height, width, 3], data)?)
}

pub fn write_frames_index(path: &Path, entries: &[(ExposureWindow, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, (win, rel)) in entries.iter().enumerate() {
        writeln!(w, "{i} {} {} {rel}", win.t_start, win.t_end)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames_index(path: &Path) -> Result<Vec<(ExposureWindow, String)>> {
    let mut out = Vec::new();
    for (i, line) in data_lines(path)? {
        let [idx, a, b, rel] = fields::<4>(path, i, &line)?;
        let idx: usize = num(path, i, &idx)?;
        if idx != out.len() {
            return Err(parse_err(path, i, format!("expected frame {}, found {idx}", out.len())));
        }
        let win = ExposureWindow::new(num(path, i, &a)?, num(path, i, &b)?)
            .map_err(|e| parse_err(path, i, e))?;
        out.push((win, rel));
    }
    Ok(out)
}

/// `frame_index cx cy w h` lines, used for both annotations and results.
pub fn write_boxes(path: &Path, boxes: &[GroundTruthBox]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for b in boxes {
        writeln!(w, "{} {} {} {} {}", b.frame_index, b.cx, b.cy, b.w, b.h)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_boxes(path: &Path) -> Result<Vec<GroundTruthBox>> {
    let mut out = Vec::new();
    for (i, line) in data_lines(path)? {
        let [k, cx, cy, w, h] = fields::<5>(path, i, &line)?;
        let b = GroundTruthBox::new(
            num(path, i, &k)?,
            num(path, i, &cx)?,
            num(path, i, &cy)?,
            num(path, i, &w)?,
            num(path, i, &h)?,
        )
        .map_err(|e| parse_err(path, i, e))?;
        out.push(b);
    }
    Ok(out)
}

pub fn write_sequence(dir: &Path, seq: &SynthSequence) -> Result<()> {
    fs::create_dir_all(dir.join(FRAMES_DIR))?;
    let mut entries = Vec::with_capacity(seq.frames.len());
    for (k, (frame, win)) in seq.frames.iter().zip(&seq.windows).enumerate() {
        let rel = format!("{FRAMES_DIR}/{k:06}.ppm");
        write_ppm(&dir.join(&rel), frame)?;
        entries.push((*win, rel));
    }
    write_frames_index(&dir.join(FRAMES_INDEX), &entries)?;
    write_events(&dir.join(EVENTS_FILE), &seq.stream)?;
    write_boxes(&dir.join(GT_FILE), &seq.gts)
}

pub fn read_sequence(dir: &Path) -> Result<SequenceData> {
    let index = read_frames_index(&dir.join(FRAMES_INDEX))?;
    if index.is_empty() {
        return Err(Error::Format(format!("{}: sequence has no frames", dir.display())));
    }
    let mut frames = Vec::with_capacity(index.len());
    let mut windows = Vec::with_capacity(index.len());
    for (win, rel) in &index {
        let frame = read_ppm(&dir.join(rel))?;
        if let Some(first) = frames.first() {
            let first: &DenseArray<f32> = first;
            if first.shape() != frame.shape() {
                return Err(Error::Format(format!("{rel}: frame size differs from frame 0")));
            }
        }
        frames.push(frame);
        windows.push(*win);
    }
    crate::events::types::validate_windows(&windows)?;
    let (h, w) = (frames[0].dim(0), frames[0].dim(1));
    let duration = windows.last().map(|w| w.t_end).unwrap_or(0);
    let stream = read_events(&dir.join(EVENTS_FILE), w as u32, h as u32, duration)?;
    let gts = read_boxes(&dir.join(GT_FILE))?;
    if gts.len() != frames.len() {
        return Err(Error::Format(format!(
            "{}: {} annotations for {} frames",
            dir.display(),
            gts.len(),
            frames.len()
        )));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SequenceData {
        name,
        frames,
        windows,
        stream,
        gts,
    })
}

/// Sequence directories under `root`, sorted by name.
pub fn list_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let p = entry?.path();
        if p.is_dir() && p.join(GT_FILE).is_file() && p.join(FRAMES_INDEX).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("{}: no sequences found", root.display())));
    }
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Vec<SequenceData>> {
    list_sequences(root)?.iter().map(|d| read_sequence(d)).collect()
}
