//! Synthetic frame/event sequences.
//!
//! A bright box moves over a static textured background. Frames integrate the
//! scene over their exposure window and are quantised to 8 bits; events come
//! from a per-pixel log-intensity threshold model evaluated at `substeps`
//! instants per frame.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::events::types::{EventPoint, EventStream, ExposureWindow, GroundTruthBox};
use crate::numerics::{DenseArray, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Motion {
    /// constant velocity, reflecting off the image border
    #[default]
    Linear,
    /// independent sinusoids in x and y
    Sinusoidal,
    /// piecewise-constant velocity with random headings, speed bursts and pauses
    Piecewise,
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Motion::Linear => "linear",
            Motion::Sinusoidal => "sinusoidal",
            Motion::Piecewise => "piecewise",
        })
    }
}

impl FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Motion::Linear),
            "sinusoidal" => Ok(Motion::Sinusoidal),
            "piecewise" => Ok(Motion::Piecewise),
            _ => Err(Error::config(format!(
                "unknown motion {s:?} (expected linear, sinusoidal or piecewise)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// frame period in microseconds; frame `k` is exposed over `[k·T, (k+1)·T)`
    pub frame_us: u64,
    pub object_w: f64,
    pub object_h: f64,
    pub motion: Motion,
    /// pixels per frame
    pub speed: f64,
    /// log-intensity contrast threshold
    pub theta: f64,
    /// event sampling instants per frame
    pub substeps: usize,
    /// every `hdr_every`-th frame is over-exposed and clipped; 0 disables
    pub hdr_every: usize,
    pub hdr_gain: f64,
    /// integrate frames over the exposure window instead of sampling its midpoint
    pub blur: bool,
    pub texture: bool,
    /// initial centre; random when absent
    pub start: Option<(f64, f64)>,
    /// heading in radians for linear motion; random when absent
    pub heading: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 200,
            frame_us: 10_000,
            object_w: 12.0,
            object_h: 12.0,
            motion: Motion::Linear,
            speed: 2.0,
            theta: 0.15,
            substeps: 8,
            hdr_every: 0,
            hdr_gain: 4.0,
            blur: false,
            texture: true,
            start: None,
            heading: None,
        }
    }
}

pub const BACKGROUND_RANGE: (f64, f64) = (0.25, 0.5);
pub const TARGET_INTENSITY: f64 = 0.9;
const PIECE_FRAMES: f64 = 10.0;
const BLUR_SAMPLES: usize = 4;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::config("frames must be at least 1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("resolution must be positive"));
        }
        if !(self.theta > 0.0) {
            return Err(Error::config(format!("theta must be positive, got {}", self.theta)));
        }
        if self.substeps < 8 {
            return Err(Error::config("events must be sampled at least 8 times per frame"));
        }
        if self.frame_us < self.substeps as u64 * 2 {
            return Err(Error::config("frame period too short for the event sampling rate"));
        }
        if !(self.object_w > 0.0 && self.object_h > 0.0)
            || self.object_w > self.width as f64
            || self.object_h > self.height as f64
        {
            return Err(Error::config("object must have positive size and fit in the image"));
        }
        if !(self.speed >= 0.0) || !(self.hdr_gain > 0.0) {
            return Err(Error::config("speed must be non-negative and hdr_gain positive"));
        }
        Ok(())
    }

    pub fn is_hdr(&self, frame: usize) -> bool {
        self.hdr_every > 0 && frame % self.hdr_every == self.hdr_every - 1
    }
}

/// One generated sequence. Frames are `[H × W × 3]` with integer values 0..255.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<DenseArray<f32>>,
    pub windows: Vec<ExposureWindow>,
    pub stream: EventStream,
    pub gts: Vec<GroundTruthBox>,
}

/// Folds `v` into `[lo, hi]` as if bouncing between the two walls.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (v - lo).rem_euclid(2.0 * span);
    if m <= span {
        lo + m
    } else {
        hi - (m - span)
    }
}

/// Continuous object trajectory; time is measured in frames.
#[derive(Clone, Debug)]
pub struct Trajectory {
    motion: Motion,
    start: (f64, f64),
    bounds: ((f64, f64), (f64, f64)),
    velocity: (f64, f64),
    /// sinusoid amplitudes, angular frequency and phases
    sine: ((f64, f64), f64, (f64, f64)),
    /// cumulative displacement at the start of each piece, and per-piece velocity
    pieces: Vec<((f64, f64), (f64, f64))>,
}

impl Trajectory {
    fn new(cfg: &SynthConfig, rng: &mut Rng) -> Self {
        let (hw, hh) = (cfg.object_w / 2.0, cfg.object_h / 2.0);
        let bx = (hw, cfg.width as f64 - hw);
        let by = (hh, cfg.height as f64 - hh);
        let start = cfg.start.unwrap_or_else(|| {
            (
                rng.uniform_in(bx.0, bx.1.max(bx.0 + 1e-9)),
                rng.uniform_in(by.0, by.1.max(by.0 + 1e-9)),
            )
        });
        let heading = cfg
            .heading
            .unwrap_or_else(|| rng.uniform_in(0.0, std::f64::consts::TAU));
        let velocity = (cfg.speed * heading.cos(), cfg.speed * heading.sin());

        let (ax, ay) = ((bx.1 - bx.0) / 2.0 * 0.8, (by.1 - by.0) / 2.0 * 0.8);
        let amp = ax.max(ay).max(1e-9);
        let omega = cfg.speed / amp;
        let sine = ((ax, ay), omega, (rng.uniform_in(0.0, 6.3), rng.uniform_in(0.0, 6.3)));

        let n_pieces = (cfg.frames as f64 / PIECE_FRAMES).ceil() as usize + 1;
        let mut pieces = Vec::with_capacity(n_pieces);
        let mut at = (0.0, 0.0);
        for _ in 0..n_pieces {
            let roll = rng.uniform();
            let speed = if roll < 0.15 {
                0.0
            } else if roll < 0.35 {
                cfg.speed * 3.0
            } else {
                cfg.speed
            };
            let a = rng.uniform_in(0.0, std::f64::consts::TAU);
            let v = (speed * a.cos(), speed * a.sin());
            pieces.push((at, v));
            at = (at.0 + v.0 * PIECE_FRAMES, at.1 + v.1 * PIECE_FRAMES);
        }
        Self {
            motion: cfg.motion,
            start,
            bounds: (bx, by),
            velocity,
            sine,
            pieces,
        }
    }

    /// Object centre at time `t` (in frames).
    pub fn centre(&self, t: f64) -> (f64, f64) {
        let ((x0, x1), (y0, y1)) = self.bounds;
        let (dx, dy) = match self.motion {
            Motion::Linear => (self.velocity.0 * t, self.velocity.1 * t),
            Motion::Sinusoidal => {
                let ((ax, ay), w, (px, py)) = self.sine;
                (
                    ax * ((w * t + px).sin() - px.sin()),
                    ay * ((w * t + py).sin() - py.sin()),
                )
            }
            Motion::Piecewise => {
                let i = ((t / PIECE_FRAMES).floor().max(0.0) as usize).min(self.pieces.len() - 1);
                let (base, v) = self.pieces[i];
                let dt = t - i as f64 * PIECE_FRAMES;
                (base.0 + v.0 * dt, base.1 + v.1 * dt)
            }
        };
        (
            reflect(self.start.0 + dx, x0, x1),
            reflect(self.start.1 + dy, y0, y1),
        )
    }
}

fn background(cfg: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    let (w, h) = (cfg.width, cfg.height);
    let (lo, hi) = BACKGROUND_RANGE;
    if !cfg.texture {
        return vec![(lo + hi) / 2.0; w * h];
    }
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.uniform_in(-0.4, 0.4),
                rng.uniform_in(-0.4, 0.4),
                rng.uniform_in(0.0, 6.3),
            )
        })
        .collect();
    let mut raw: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let s: f64 = waves.iter().map(|&(fx, fy, p)| (fx * x + fy * y + p).sin()).sum();
            s + 0.3 * rng.normal()
        })
        .collect();
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (max - min).max(1e-12);
    for v in &mut raw {
        *v = lo + (*v - min) / span * (hi - lo);
    }
    raw
}

/// Length of `[a, a+1) ∩ [lo, hi)`.
fn overlap(a: f64, lo: f64, hi: f64) -> f64 {
    ((a + 1.0).min(hi) - a.max(lo)).max(0.0)
}

fn render(cfg: &SynthConfig, bg: &[f64], centre: (f64, f64), out: &mut [f64]) {
    let (w, h) = (cfg.width, cfg.height);
    let (l, r) = (centre.0 - cfg.object_w / 2.0, centre.0 + cfg.object_w / 2.0);
    let (t, b) = (centre.1 - cfg.object_h / 2.0, centre.1 + cfg.object_h / 2.0);
    out.copy_from_slice(bg);
    let ys = (t.floor().max(0.0) as usize)..(b.ceil().min(h as f64).max(0.0) as usize);
    for y in ys {
        let cy = overlap(y as f64, t, b);
        let xs = (l.floor().max(0.0) as usize)..(r.ceil().min(w as f64).max(0.0) as usize);
        for x in xs {
            let cov = overlap(x as f64, l, r) * cy;
            let i = y * w + x;
            out[i] = bg[i] * (1.0 - cov) + TARGET_INTENSITY * cov;
        }
    }
}

fn quantise(v: f64) -> f32 {
    (v * 255.0).round().clamp(0.0, 255.0) as f32
}

pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SynthSequence> {
    cfg.validate()?;
    let root = Rng::new(seed);
    let bg = background(cfg, &mut root.fork(0));
    let traj = Trajectory::new(cfg, &mut root.fork(1));
    let (w, h) = (cfg.width, cfg.height);
    let npx = w * h;
    let period = cfg.frame_us as f64;

    let mut scratch = vec![0.0; npx];
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut windows = Vec::with_capacity(cfg.frames);
    let mut gts = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let window = ExposureWindow::for_frame(k, cfg.frame_us);
        let mid = window.midpoint() / period;
        let samples: Vec<f64> = if cfg.blur {
            (0..BLUR_SAMPLES)
                .map(|j| k as f64 + (j as f64 + 0.5) / BLUR_SAMPLES as f64)
                .collect()
        } else {
            vec![mid]
        };
        let mut acc = vec![0.0; npx];
        for &s in &samples {
            render(cfg, &bg, traj.centre(s), &mut scratch);
            for (a, v) in acc.iter_mut().zip(&scratch) {
                *a += v / samples.len() as f64;
            }
        }
        let gain = if cfg.is_hdr(k) { cfg.hdr_gain } else { 1.0 };
        let mut data = Vec::with_capacity(npx * 3);
        for v in acc {
            let q = quantise((v * gain).min(1.0));
            data.extend_from_slice(&[q, q, q]);
        }
        frames.push(DenseArray::new(&[h, w, 3], data)?);
        windows.push(window);
        let (cx, cy) = traj.centre(mid);
        gts.push(GroundTruthBox::new(k, cx, cy, cfg.object_w, cfg.object_h)?);
    }

    // events: threshold crossings of log intensity at sub-window midpoints
    render(cfg, &bg, traj.centre(0.0), &mut scratch);
    let mut reference: Vec<f64> = scratch.iter().map(|v| v.ln()).collect();
    let mut events = Vec::new();
    let total = cfg.frames * cfg.substeps;
    for s in 0..total {
        let t_us = ((2 * s + 1) as u64 * cfg.frame_us) / (2 * cfg.substeps as u64);
        render(cfg, &bg, traj.centre(t_us as f64 / period), &mut scratch);
        for (i, (&v, r)) in scratch.iter().zip(reference.iter_mut()).enumerate() {
            let l = v.ln();
            while (l - *r).abs() >= cfg.theta {
                let p: i8 = if l > *r { 1 } else { -1 };
                *r += p as f64 * cfg.theta;
                events.push(EventPoint {
                    t: t_us,
                    x: (i % w) as u32,
                    y: (i / w) as u32,
                    p,
                });
            }
        }
    }
    let duration = cfg.frames as u64 * cfg.frame_us;
    let stream = EventStream::new(events, w as u32, h as u32, duration)?;
    Ok(SynthSequence {
        frames,
        windows,
        stream,
        gts,
    })
}
