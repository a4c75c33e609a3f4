//! Drive-cycle loading, resampling, and summary statistics.
//!
//! A cycle is a speed trace sampled on a uniform time step, with an optional
//! road-grade channel. Input CSVs carry `time_s,speed_mps[,grade_rad]` rows
//! (header optional) on a strictly increasing, not necessarily uniform, time
//! axis; loading resamples to the requested step by linear interpolation.

use crate::error::{Error, Result};

pub const DEFAULT_DT_S: f64 = 1.0;

/// Uniformly sampled speed/grade trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingCycle {
    pub name: String,
    pub dt_s: f64,
    pub speed_mps: Vec<f64>,
    pub grade_rad: Vec<f64>,
}

/// Summary measures of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CycleStats {
    pub duration_s: f64,
    /// Trapezoidal integral of speed.
    pub distance_m: f64,
    pub max_speed_mps: f64,
    /// Largest forward-difference acceleration magnitude.
    pub max_abs_accel_mps2: f64,
}

impl DrivingCycle {
    /// Number of samples.
    pub fn len(&self) -> usize {
        self.speed_mps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed_mps.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.dt_s
    }

    /// Target acceleration at sample `k` by forward difference (zero at the
    /// final sample).
    pub fn accel_mps2(&self, k: usize) -> f64 {
        if k + 1 < self.len() {
            (self.speed_mps[k + 1] - self.speed_mps[k]) / self.dt_s
        } else {
            0.0
        }
    }
}

/// Parse a cycle from CSV text and resample it to `dt_s`.
pub fn parse_cycle(name: &str, text: &str, dt_s: f64) -> Result<DrivingCycle> {
    if !dt_s.is_finite() || dt_s <= 0.0 {
        return Err(Error::InvalidArgument("cycle dt must be positive".into()));
    }
    let mut t = Vec::new();
    let mut v = Vec::new();
    let mut g = Vec::new();
    let mut saw_grade = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(
                name,
                line_no,
                format!("expected 2 or 3 columns, found {}", fields.len()),
            ));
        }
        let parse_field = |field: &str, what: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| {
                Error::parse(name, line_no, format!("cannot parse {what} value {field:?}"))
            })
        };
        // a single non-numeric leading row is accepted as a header
        if t.is_empty() && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let ti = parse_field(fields[0], "time")?;
        let vi = parse_field(fields[1], "speed")?;
        if !ti.is_finite() || !vi.is_finite() {
            return Err(Error::parse(name, line_no, "non-finite value"));
        }
        if let Some(&prev) = t.last() {
            if ti <= prev {
                return Err(Error::parse(
                    name,
                    line_no,
                    format!("time must be strictly increasing ({ti} after {prev})"),
                ));
            }
        }
        if vi < 0.0 {
            return Err(Error::parse(name, line_no, format!("negative speed {vi}")));
        }
        let gi = if fields.len() == 3 {
            saw_grade = true;
            let gi = parse_field(fields[2], "grade")?;
            if !gi.is_finite() {
                return Err(Error::parse(name, line_no, "non-finite grade"));
            }
            gi
        } else {
            0.0
        };
        t.push(ti);
        v.push(vi);
        g.push(gi);
    }

    if t.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cycle {name:?} needs at least two samples, found {}",
            t.len()
        )));
    }
    let _ = saw_grade;
    Ok(resample(name, &t, &v, &g, dt_s))
}

/// Load a cycle from a CSV file, resampled to `dt_s`.
pub fn load_cycle(path: &std::path::Path, dt_s: f64) -> Result<DrivingCycle> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_cycle(&name, &text, dt_s)
}

/// Linear-interpolation resampling onto a uniform grid starting at t[0].
fn resample(name: &str, t: &[f64], v: &[f64], g: &[f64], dt_s: f64) -> DrivingCycle {
    let t0 = t[0];
    let t_end = t[t.len() - 1];
    let n = ((t_end - t0) / dt_s).floor() as usize + 1;
    let mut speed = Vec::with_capacity(n);
    let mut grade = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let tk = t0 + k as f64 * dt_s;
        while seg + 2 < t.len() && t[seg + 1] < tk {
            seg += 1;
        }
        let span = t[seg + 1] - t[seg];
        let w = ((tk - t[seg]) / span).clamp(0.0, 1.0);
        // two-sided blend lands exactly on knot values at w = 0 and w = 1
        speed.push(v[seg] * (1.0 - w) + v[seg + 1] * w);
        grade.push(g[seg] * (1.0 - w) + g[seg + 1] * w);
    }
    DrivingCycle {
        name: name.to_string(),
        dt_s,
        speed_mps: speed,
        grade_rad: grade,
    }
}

/// Concatenate `n` copies of a cycle.
pub fn repeat_cycle(cycle: &DrivingCycle, n: usize) -> Result<DrivingCycle> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cycle repetition count must be at least 1".into(),
        ));
    }
    let mut speed = Vec::with_capacity(cycle.speed_mps.len() * n);
    let mut grade = Vec::with_capacity(cycle.grade_rad.len() * n);
    for _ in 0..n {
        speed.extend_from_slice(&cycle.speed_mps);
        grade.extend_from_slice(&cycle.grade_rad);
    }
    Ok(DrivingCycle {
        name: format!("{}x{n}", cycle.name),
        dt_s: cycle.dt_s,
        speed_mps: speed,
        grade_rad: grade,
    })
}

/// Duration, distance, and extreme values of a cycle.
pub fn cycle_stats(cycle: &DrivingCycle) -> Result<CycleStats> {
    if cycle.is_empty() {
        return Err(Error::InvalidArgument("cycle is empty".into()));
    }
    let v = &cycle.speed_mps;
    let mut distance = 0.0;
    let mut max_accel: f64 = 0.0;
    for w in v.windows(2) {
        distance += 0.5 * (w[0] + w[1]) * cycle.dt_s;
        max_accel = max_accel.max(((w[1] - w[0]) / cycle.dt_s).abs());
    }
    Ok(CycleStats {
        duration_s: cycle.duration_s(),
        distance_m: distance,
        max_speed_mps: v.iter().cloned().fold(0.0, f64::max),
        max_abs_accel_mps2: max_accel,
    })
}

/// Bundled urban fixture: low speeds, frequent stops.
pub fn udds_like() -> DrivingCycle {
    parse_cycle(
        "udds_like",
        include_str!("../fixtures/udds_like.csv"),
        DEFAULT_DT_S,
    )
    .expect("bundled fixture parses")
}

/// Bundled mixed fixture: four phases up to highway speed.
pub fn wltp_like() -> DrivingCycle {
    parse_cycle(
        "wltp_like",
        include_str!("../fixtures/wltp_like.csv"),
        DEFAULT_DT_S,
    )
    .expect("bundled fixture parses")
}

/// Look up a bundled fixture by name.
pub fn fixture(name: &str) -> Option<DrivingCycle> {
    match name {
        "udds" | "udds_like" => Some(udds_like()),
        "wltp" | "wltp_like" => Some(wltp_like()),
        _ => None,
    }
}
