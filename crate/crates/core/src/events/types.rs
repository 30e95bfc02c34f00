use crate::error::{Error, Result};

/// One sensor event. `t` is in microseconds, `p` is `+1` or `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventPoint {
    pub t: u64,
    pub x: u32,
    pub y: u32,
    pub p: i8,
}

/// Time-sorted events from a `width × height` sensor covering `[0, duration)` µs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    events: Vec<EventPoint>,
    width: u32,
    height: u32,
    duration: u64,
}

impl EventStream {
    pub fn new(events: Vec<EventPoint>, width: u32, height: u32, duration: u64) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::domain(format!(
                    "event {i} at ({}, {}) lies outside the {width}×{height} sensor",
                    e.x, e.y
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::domain(format!("event {i} has polarity {}", e.p)));
            }
            if i > 0 && events[i - 1].t > e.t {
                return Err(Error::domain(format!("event {i} is out of time order")));
            }
            if e.t >= duration {
                return Err(Error::domain(format!(
                    "event {i} at t={} is past the stream duration {duration}",
                    e.t
                )));
            }
        }
        Ok(Self {
            events,
            width,
            height,
            duration,
        })
    }

    pub fn events(&self) -> &[EventPoint] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn duration(&self) -> u64 {
        self.duration
    }

    /// Events with `t_start <= t < t_end`.
    pub fn in_window(&self, window: ExposureWindow) -> &[EventPoint] {
        let lo = self.events.partition_point(|e| e.t < window.t_start);
        let hi = self.events.partition_point(|e| e.t < window.t_end);
        &self.events[lo..hi]
    }
}

/// Half-open exposure interval `[t_start, t_end)` in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExposureWindow {
    pub t_start: u64,
    pub t_end: u64,
}

impl ExposureWindow {
    pub fn new(t_start: u64, t_end: u64) -> Result<Self> {
        if t_start >= t_end {
            return Err(Error::domain(format!(
                "exposure window [{t_start}, {t_end}) is empty"
            )));
        }
        Ok(Self { t_start, t_end })
    }

    /// Window of frame `k` at a fixed frame period.
    pub fn for_frame(k: usize, period_us: u64) -> Self {
        Self {
            t_start: k as u64 * period_us,
            t_end: (k as u64 + 1) * period_us,
        }
    }

    pub fn midpoint(&self) -> f64 {
        (self.t_start + self.t_end) as f64 / 2.0
    }
}

/// Checks that windows are disjoint and in order.
pub fn validate_windows(windows: &[ExposureWindow]) -> Result<()> {
    for (i, w) in windows.windows(2).enumerate() {
        if w[1].t_start < w[0].t_end {
            return Err(Error::domain(format!(
                "exposure windows {i} and {} overlap or are out of order",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Target box in image pixels, centre format.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub frame_index: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl GroundTruthBox {
    pub fn new(frame_index: usize, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self {
            frame_index,
            cx,
            cy,
            w,
            h,
        };
        b.check_extent()?;
        Ok(b)
    }

    pub fn check_extent(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::domain(format!(
                "box {}: extents must be positive and finite (w={}, h={})",
                self.frame_index, self.w, self.h
            )));
        }
        Ok(())
    }

    /// Whether the box overlaps a `width × height` image.
    pub fn intersects(&self, width: f64, height: f64) -> bool {
        self.cx + self.w / 2.0 > 0.0
            && self.cx - self.w / 2.0 < width
            && self.cy + self.h / 2.0 > 0.0
            && self.cy - self.h / 2.0 < height
    }
}
