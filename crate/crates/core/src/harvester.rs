//! Harvested-power sources: constant, trace-driven and random.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("harvest trace ends at {end} s, queried at {at} s")]
    TraceExhausted { end: f64, at: f64 },
    #[error("harvest trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("harvest trace is empty")]
    EmptyTrace,
    #[error("cannot read harvest trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid harvester configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvestSample {
    /// Seconds from the start of the run.
    pub timestamp: f64,
    /// Watts.
    pub power: f64,
}

/// Distribution of independently drawn harvest values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RandomPower {
    Uniform { lo: f64, hi: f64 },
    Exponential { mean: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum HarvestSource {
    Constant(f64),
    Trace(Arc<[HarvestSample]>),
    Random {
        dist: RandomPower,
        seed: u64,
        update_period: SimDuration,
    },
}

impl HarvestSource {
    /// Harvested power at `t`, held constant between samples or draws.
    pub fn power_at(&self, t: SimTime) -> Result<f64, HarvestError> {
        match self {
            HarvestSource::Constant(p) => Ok(*p),
            HarvestSource::Trace(samples) => {
                let secs = t.as_secs_f64();
                let last = samples.last().ok_or(HarvestError::EmptyTrace)?;
                if secs > last.timestamp {
                    return Err(HarvestError::TraceExhausted {
                        end: last.timestamp,
                        at: secs,
                    });
                }
                let idx = samples.partition_point(|s| s.timestamp <= secs);
                // before the first sample the first value applies
                Ok(samples[idx.saturating_sub(1)].power)
            }
            HarvestSource::Random {
                dist,
                seed,
                update_period,
            } => {
                let period = update_period.as_nanos().max(1);
                Ok(random_draw(*dist, *seed, t.as_nanos() / period))
            }
        }
    }

    /// Next instant after `t` at which the power may change.
    pub fn next_change_after(&self, t: SimTime) -> Option<SimTime> {
        match self {
            HarvestSource::Constant(_) => None,
            HarvestSource::Trace(samples) => {
                let secs = t.as_secs_f64();
                let idx = samples.partition_point(|s| SimTime::from_secs_f64(s.timestamp) <= t);
                match samples.get(idx) {
                    Some(s) => Some(SimTime::from_secs_f64(s.timestamp)),
                    // one tick past the end so that running on reports exhaustion
                    None => {
                        let end = samples.last()?.timestamp;
                        (secs <= end).then(|| SimTime::from_secs_f64(end) + SimDuration::from_nanos(1))
                    }
                }
            }
            HarvestSource::Random { update_period, .. } => {
                let period = update_period.as_nanos().max(1);
                Some(SimTime::from_nanos((t.as_nanos() / period + 1) * period))
            }
        }
    }
}

fn random_draw(dist: RandomPower, seed: u64, period_index: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(period_index);
    match dist {
        RandomPower::Uniform { lo, hi } => {
            if hi > lo {
                Uniform::new(lo, hi).expect("validated bounds").sample(&mut rng)
            } else {
                lo
            }
        }
        RandomPower::Exponential { mean } => Exp::new(1.0 / mean).expect("validated mean").sample(&mut rng),
    }
}

/// Reads `time_s,power_W` rows. A single header line is skipped and the
/// delimiter may be a comma or a semicolon.
pub fn load_trace<R: Read>(mut input: R) -> Result<Vec<HarvestSample>, HarvestError> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|e| HarvestError::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let first_line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let delimiter = if first_line.contains(';') { b';' } else { b',' };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut out: Vec<HarvestSample> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| HarvestError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != 2 {
            return Err(HarvestError::Parse {
                line,
                msg: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
        let (t, p) = match parsed {
            (Ok(t), Ok(p)) => (t, p),
            _ if out.is_empty() && line == 1 => continue,
            _ => {
                return Err(HarvestError::Parse {
                    line,
                    msg: format!("cannot parse '{}{}{}'", &rec[0], delimiter as char, &rec[1]),
                })
            }
        };
        if !t.is_finite() || t < 0.0 {
            return Err(HarvestError::Parse {
                line,
                msg: format!("timestamp must be non-negative, got {t}"),
            });
        }
        if !p.is_finite() || p < 0.0 {
            return Err(HarvestError::Parse {
                line,
                msg: format!("power must be non-negative, got {p}"),
            });
        }
        if let Some(prev) = out.last() {
            if t <= prev.timestamp {
                return Err(HarvestError::Parse {
                    line,
                    msg: format!("timestamp {t} not after previous {}", prev.timestamp),
                });
            }
        }
        out.push(HarvestSample {
            timestamp: t,
            power: p,
        });
    }
    if out.is_empty() {
        return Err(HarvestError::EmptyTrace);
    }
    Ok(out)
}

pub fn load_trace_file(path: &Path) -> Result<Vec<HarvestSample>, HarvestError> {
    let file = std::fs::File::open(path).map_err(|source| HarvestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_trace(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarvestKind {
    Constant,
    Trace,
    Uniform,
    Exponential,
}

/// Configuration of the harvest source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarvestConfig {
    pub kind: HarvestKind,
    /// Watts, for `constant`.
    pub power: f64,
    /// For `trace`; relative paths resolve against the working directory.
    pub trace_file: String,
    /// Watts, for `uniform`.
    pub lo: f64,
    pub hi: f64,
    /// Watts, for `exponential`.
    pub mean: f64,
    /// Seconds between random draws.
    pub update_period: f64,
    pub seed: u64,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            kind: HarvestKind::Constant,
            power: 0.001,
            trace_file: String::new(),
            lo: 0.0,
            hi: 0.002,
            mean: 0.001,
            update_period: 60.0,
            seed: 1,
        }
    }
}

impl HarvestConfig {
    pub fn constant(power: f64) -> Self {
        HarvestConfig {
            kind: HarvestKind::Constant,
            power,
            ..HarvestConfig::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match self.kind {
            HarvestKind::Constant => {
                if !(self.power >= 0.0 && self.power.is_finite()) {
                    v.push(format!("harvester power must be non-negative, got {}", self.power));
                }
            }
            HarvestKind::Trace => {
                if self.trace_file.is_empty() {
                    v.push("harvester trace_file must be set for kind = \"trace\"".to_string());
                }
            }
            HarvestKind::Uniform => {
                if !(self.lo >= 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
                    v.push(format!(
                        "harvester bounds must satisfy 0 <= lo <= hi, got lo = {}, hi = {}",
                        self.lo, self.hi
                    ));
                }
            }
            HarvestKind::Exponential => {
                if !(self.mean > 0.0 && self.mean.is_finite()) {
                    v.push(format!("harvester mean must be positive, got {}", self.mean));
                }
            }
        }
        if matches!(self.kind, HarvestKind::Uniform | HarvestKind::Exponential)
            && !(self.update_period > 0.0 && self.update_period.is_finite())
        {
            v.push(format!(
                "harvester update_period must be positive, got {}",
                self.update_period
            ));
        }
        v
    }

    pub fn build(&self) -> Result<HarvestSource, HarvestError> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(HarvestError::InvalidConfig(v));
        }
        let update_period = SimDuration::from_secs_f64(self.update_period);
        Ok(match self.kind {
            HarvestKind::Constant => HarvestSource::Constant(self.power),
            HarvestKind::Trace => {
                HarvestSource::Trace(load_trace_file(Path::new(&self.trace_file))?.into())
            }
            HarvestKind::Uniform => HarvestSource::Random {
                dist: RandomPower::Uniform {
                    lo: self.lo,
                    hi: self.hi,
                },
                seed: self.seed,
                update_period,
            },
            HarvestKind::Exponential => HarvestSource::Random {
                dist: RandomPower::Exponential { mean: self.mean },
                seed: self.seed,
                update_period,
            },
        })
    }
}
