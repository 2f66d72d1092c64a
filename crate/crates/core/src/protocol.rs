//! Piecewise-constant control schedules and their bang-bang specialization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared total time must match the duration sum this tightly.
pub const DURATION_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub g: f64,
    pub dt: f64,
}

/// Ordered piecewise-constant schedule g(t) on [0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    total_time: f64,
    segments: Vec<Segment>,
}

/// Strictly alternating g ∈ {0, 1} pulse train. Zero-length pulses are legal
/// and read as merged neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct BangBangProtocol {
    start_value: u8,
    durations: Vec<f64>,
    total_time: f64,
}

/// Either on-disk protocol form, as loaded from JSON.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedProtocol {
    Segments(Protocol),
    BangBang(BangBangProtocol),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ProtocolFile {
    BangBang {
        #[serde(rename = "T")]
        t: f64,
        start: u8,
        durations: Vec<f64>,
    },
    Segments {
        #[serde(rename = "T")]
        t: f64,
        segments: Vec<Segment>,
    },
}

fn check_segment(g: f64, dt: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&g) || !g.is_finite() {
        return Err(Error::ControlOutOfRange(g));
    }
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::NegativeDuration(dt));
    }
    Ok(())
}

fn check_total(sum: f64, declared: f64) -> Result<()> {
    if (sum - declared).abs() > DURATION_SUM_TOL * declared.abs().max(1.0) {
        return Err(Error::DurationSumMismatch { sum, declared });
    }
    Ok(())
}

impl Protocol {
    /// Total time is the exact duration sum.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            check_segment(s.g, s.dt)?;
        }
        let total_time = segments.iter().map(|s| s.dt).sum();
        Ok(Self { total_time, segments })
    }

    /// As `new`, but validates the duration sum against a declared total.
    pub fn with_declared_total(segments: Vec<Segment>, total_time: f64) -> Result<Self> {
        let p = Self::new(segments)?;
        check_total(p.total_time, total_time)?;
        Ok(Self { total_time, ..p })
    }

    /// Uniform-slice schedule from per-slice control values.
    pub fn from_slices(total_time: f64, values: &[f64]) -> Result<Self> {
        if values.is_empty() || total_time <= 0.0 {
            return Err(Error::InvalidArgument(
                "slice protocol needs at least one slice and positive total time".into(),
            ));
        }
        let dt = total_time / values.len() as f64;
        let segments = values.iter().map(|&g| Segment { g, dt }).collect();
        let p = Self::new(segments)?;
        // Keep the declared total exact regardless of dt rounding.
        Ok(Self { total_time, ..p })
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Drops zero-length segments and fuses equal-g neighbors.
    pub fn merged(&self) -> Protocol {
        let mut out: Vec<Segment> = Vec::new();
        for s in &self.segments {
            if s.dt == 0.0 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.g == s.g => last.dt += s.dt,
                _ => out.push(*s),
            }
        }
        Protocol { total_time: self.total_time, segments: out }
    }

    /// Interior switch times between merged segments (excludes 0 and T).
    /// Cumulative segment boundaries: 0, then a running sum of durations.
    /// Length is segment count + 1; the last entry is the summed total.
    pub fn boundary_times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.segments.len() + 1);
        let mut t = 0.0;
        out.push(t);
        for s in &self.segments {
            t += s.dt;
            out.push(t);
        }
        out
    }

    pub fn switch_times(&self) -> Vec<f64> {
        let merged = self.merged();
        let mut t = 0.0;
        let mut times = Vec::new();
        for s in &merged.segments[..merged.segments.len().saturating_sub(1)] {
            t += s.dt;
            times.push(t);
        }
        times
    }

    pub fn to_json(&self) -> String {
        let file = ProtocolFile::Segments { t: self.total_time, segments: self.segments.clone() };
        serde_json::to_string_pretty(&file).expect("protocol serialization cannot fail")
    }
}

impl BangBangProtocol {
    pub fn new(start_value: u8, durations: Vec<f64>) -> Result<Self> {
        if start_value > 1 {
            return Err(Error::InvalidArgument(format!(
                "start value must be 0 or 1, got {start_value}"
            )));
        }
        for &d in &durations {
            if d < 0.0 || !d.is_finite() {
                return Err(Error::NegativeDuration(d));
            }
        }
        if durations.is_empty() {
            return Err(Error::InvalidArgument("protocol needs at least one pulse".into()));
        }
        let total_time = durations.iter().sum();
        Ok(Self { start_value, durations, total_time })
    }

    pub fn with_declared_total(start_value: u8, durations: Vec<f64>, total_time: f64) -> Result<Self> {
        let p = Self::new(start_value, durations)?;
        check_total(p.total_time, total_time)?;
        Ok(Self { total_time, ..p })
    }

    pub fn start_value(&self) -> u8 {
        self.start_value
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    /// Control value of pulse `i` under strict alternation.
    pub fn pulse_value(&self, i: usize) -> f64 {
        if i % 2 == 0 {
            self.start_value as f64
        } else {
            1.0 - self.start_value as f64
        }
    }

    pub fn to_protocol(&self) -> Protocol {
        let segments = self
            .durations
            .iter()
            .enumerate()
            .map(|(i, &dt)| Segment { g: self.pulse_value(i), dt })
            .collect();
        Protocol { total_time: self.total_time, segments }
    }

    /// Nonzero pulses after merging neighbors separated by zero-length pulses.
    pub fn merged_pulses(&self) -> Vec<(f64, f64)> {
        self.to_protocol().merged().segments().iter().map(|s| (s.g, s.dt)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("protocol serialization cannot fail")
    }
}

impl Serialize for BangBangProtocol {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Raw<'a> {
            #[serde(rename = "T")]
            t: f64,
            start: u8,
            durations: &'a [f64],
        }
        Raw { t: self.total_time, start: self.start_value, durations: &self.durations }
            .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for BangBangProtocol {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(rename = "T")]
            t: f64,
            start: u8,
            durations: Vec<f64>,
        }
        let raw = Raw::deserialize(de)?;
        BangBangProtocol::with_declared_total(raw.start, raw.durations, raw.t)
            .map_err(serde::de::Error::custom)
    }
}

impl LoadedProtocol {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProtocolFile = serde_json::from_str(text)?;
        match file {
            ProtocolFile::BangBang { t, start, durations } => Ok(LoadedProtocol::BangBang(
                BangBangProtocol::with_declared_total(start, durations, t)?,
            )),
            ProtocolFile::Segments { t, segments } => {
                Ok(LoadedProtocol::Segments(Protocol::with_declared_total(segments, t)?))
            }
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_protocol(&self) -> Protocol {
        match self {
            LoadedProtocol::Segments(p) => p.clone(),
            LoadedProtocol::BangBang(p) => p.to_protocol(),
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            LoadedProtocol::Segments(p) => p.to_json(),
            LoadedProtocol::BangBang(p) => p.to_json(),
        }
    }
}
