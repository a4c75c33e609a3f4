//! Severity-factor battery capacity-fade model.
//!
//! Capacity loss in percent follows a power law in charge throughput,
//! `Q_loss = sigma · Ah^z`, where the severity factor `sigma` collects the
//! operating conditions:
//!
//! ```text
//! sigma = (alpha·SOC + beta) · exp((-Ea + delta·Ic) / (Rg · T_K))
//! ```
//!
//! with SOC in percent, `Ic` the C-rate in 1/h, and `T_K` the absolute cell
//! temperature. Under time-varying conditions the loss is accumulated
//! through a severity-equivalent throughput so the running total is
//! continuous when `sigma` changes between steps.

use serde::{Deserialize, Serialize};

use crate::config::AgingParams;
use crate::error::{Error, Result};

/// C-rate of a current against nominal capacity, in 1/h.
pub fn c_rate(current_a: f64, q_nom_ah: f64) -> f64 {
    debug_assert!(q_nom_ah > 0.0);
    current_a.abs() / q_nom_ah
}

/// Severity factor at the given operating point. `soc_pct` is in percent.
pub fn severity_factor(soc_pct: f64, c_rate: f64, temp_c: f64, p: &AgingParams) -> Result<f64> {
    if temp_c <= -273.15 {
        return Err(Error::InvalidArgument(format!(
            "temperature {temp_c} C is at or below absolute zero"
        )));
    }
    if c_rate < 0.0 {
        return Err(Error::InvalidArgument("C-rate must be nonnegative".into()));
    }
    let t_k = 273.15 + temp_c;
    let stress = p.alpha * soc_pct + p.beta;
    let arrhenius = ((-p.activation_energy_j_per_mol + p.delta * c_rate)
        / (p.gas_constant_j_per_mol_k * t_k))
        .exp();
    Ok(stress * arrhenius)
}

/// Capacity loss in percent after `ah` amp-hours at constant severity.
pub fn capacity_loss_pct(sigma: f64, ah: f64, z: f64) -> f64 {
    debug_assert!(ah >= 0.0);
    sigma * ah.powf(z)
}

/// Advance an accumulated capacity loss by `delta_ah` at the current
/// severity.
///
/// The existing loss is first converted into the equivalent throughput the
/// *current* severity would have needed to produce it, so the power law
/// continues smoothly: `Ah_eq = (Q/sigma)^(1/z)`, then
/// `Q' = sigma·(Ah_eq + delta_ah)^z`.
pub fn accumulate_loss_pct(
    q_loss_pct: f64,
    sigma_now: f64,
    delta_ah: f64,
    z: f64,
) -> Result<f64> {
    if delta_ah < 0.0 {
        return Err(Error::InvalidArgument(
            "throughput increment must be nonnegative".into(),
        ));
    }
    if sigma_now <= 0.0 || !sigma_now.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "severity factor must be positive and finite, got {sigma_now}"
        )));
    }
    if delta_ah == 0.0 {
        return Ok(q_loss_pct);
    }
    let ah_eq = if q_loss_pct > 0.0 {
        (q_loss_pct / sigma_now).powf(1.0 / z)
    } else {
        0.0
    };
    Ok(sigma_now * (ah_eq + delta_ah).powf(z))
}

/// Coefficient of determination between observations and model predictions.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.len() < 2 {
        return Err(Error::InvalidArgument(
            "r_squared needs two equal-length series of at least two points".into(),
        ));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, f)| (y - f) * (y - f))
        .sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument(
            "observations have zero variance".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// One cycling-test dataset: fixed operating conditions plus sampled
/// (throughput, capacity loss) points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgingDataset {
    pub name: String,
    pub soc_pct: f64,
    pub c_rate: f64,
    pub temp_c: f64,
    /// (Ah throughput, capacity loss %) samples.
    pub samples: Vec<(f64, f64)>,
}

impl AgingDataset {
    /// Evaluate the dataset's severity under given model coefficients.
    pub fn severity_under(&self, p: &AgingParams) -> Result<f64> {
        severity_factor(self.soc_pct, self.c_rate, self.temp_c, p)
    }

    /// Generate a noise-free dataset from the model itself.
    pub fn synthesize(
        name: &str,
        soc_pct: f64,
        c_rate: f64,
        temp_c: f64,
        ah_points: &[f64],
        p: &AgingParams,
    ) -> Result<Self> {
        let sigma = severity_factor(soc_pct, c_rate, temp_c, p)?;
        let samples = ah_points
            .iter()
            .map(|&ah| (ah, capacity_loss_pct(sigma, ah, p.z)))
            .collect();
        Ok(AgingDataset {
            name: name.to_string(),
            soc_pct,
            c_rate,
            temp_c,
            samples,
        })
    }

    /// Parse from CSV text: a `# soc_pct=..,c_rate=..,temp_c=..` metadata
    /// line followed by `ah,q_loss_pct` rows.
    pub fn parse_csv(name: &str, text: &str) -> Result<Self> {
        let mut soc_pct = None;
        let mut c_rate = None;
        let mut temp_c = None;
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for part in meta.split(',') {
                    let mut kv = part.splitn(2, '=');
                    let key = kv.next().unwrap_or("").trim();
                    let value = kv.next().map(str::trim);
                    let Some(value) = value else { continue };
                    let parsed = value.parse::<f64>().map_err(|_| {
                        Error::parse(name, line_no, format!("bad metadata value {value:?}"))
                    })?;
                    match key {
                        "soc_pct" => soc_pct = Some(parsed),
                        "c_rate" => c_rate = Some(parsed),
                        "temp_c" => temp_c = Some(parsed),
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::parse(
                    name,
                    line_no,
                    format!("expected 2 columns, found {}", fields.len()),
                ));
            }
            if samples.is_empty() && fields[0].parse::<f64>().is_err() {
                continue; // header
            }
            let ah = fields[0]
                .parse::<f64>()
                .map_err(|_| Error::parse(name, line_no, "cannot parse throughput"))?;
            let q = fields[1]
                .parse::<f64>()
                .map_err(|_| Error::parse(name, line_no, "cannot parse capacity loss"))?;
            samples.push((ah, q));
        }
        let missing = |what: &str| {
            Error::InvalidArgument(format!("dataset {name:?} is missing {what} metadata"))
        };
        if samples.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "dataset {name:?} needs at least three samples"
            )));
        }
        Ok(AgingDataset {
            name: name.to_string(),
            soc_pct: soc_pct.ok_or_else(|| missing("soc_pct"))?,
            c_rate: c_rate.ok_or_else(|| missing("c_rate"))?,
            temp_c: temp_c.ok_or_else(|| missing("temp_c"))?,
            samples,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# soc_pct={}, c_rate={}, temp_c={}\nah,q_loss_pct\n",
            self.soc_pct, self.c_rate, self.temp_c
        );
        for (ah, q) in &self.samples {
            out.push_str(&format!("{ah},{q}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> AgingParams {
        AgingParams::default()
    }

    #[test]
    fn severity_matches_independent_evaluation() {
        // (alpha*50 + beta) * exp((-Ea + delta*2) / (Rg * 298.15))
        let p = params();
        let expected = (2.0161 * 50.0 + 4398.5)
            * ((-31500.0_f64 + 112.0 * 2.0) / (8.3145 * (273.15 + 25.0))).exp();
        let sigma = severity_factor(50.0, 2.0, 25.0, &p).unwrap();
        assert_relative_eq!(sigma, expected, max_relative = 1e-12);
        assert_relative_eq!(sigma, 1.49e-2, max_relative = 0.01);
    }

    #[test]
    fn severity_rises_with_soc_c_rate_and_temperature() {
        let p = params();
        let base = severity_factor(50.0, 2.0, 25.0, &p).unwrap();
        assert!(severity_factor(80.0, 2.0, 25.0, &p).unwrap() > base);
        assert!(severity_factor(50.0, 4.0, 25.0, &p).unwrap() > base);
        assert!(severity_factor(50.0, 2.0, 45.0, &p).unwrap() > base);
    }

    #[test]
    fn capacity_loss_at_kiloamp_hour() {
        let p = params();
        let sigma = severity_factor(50.0, 2.0, 25.0, &p).unwrap();
        let q = capacity_loss_pct(sigma, 1000.0, p.z);
        assert_relative_eq!(q, 0.77, max_relative = 0.01);
    }

    #[test]
    fn c_rate_is_magnitude_over_capacity() {
        assert_eq!(c_rate(288.0, 144.0), 2.0);
        assert_eq!(c_rate(-288.0, 144.0), 2.0);
        assert_eq!(c_rate(0.0, 144.0), 0.0);
    }

    #[test]
    fn accumulation_at_constant_severity_matches_closed_form() {
        let p = params();
        let sigma = severity_factor(50.0, 2.0, 25.0, &p).unwrap();
        let mut q = 0.0;
        let steps = 400;
        let total_ah = 1000.0;
        for _ in 0..steps {
            q = accumulate_loss_pct(q, sigma, total_ah / steps as f64, p.z).unwrap();
        }
        assert_relative_eq!(q, capacity_loss_pct(sigma, total_ah, p.z), max_relative = 1e-9);
    }

    #[test]
    fn accumulation_is_continuous_across_severity_changes() {
        // independent two-segment evaluation: 500 Ah at sigma1, then the
        // remaining 500 Ah at sigma2 through the equivalent-throughput map
        let p = params();
        let s1 = severity_factor(35.0, 1.0, 25.0, &p).unwrap();
        let s2 = severity_factor(80.0, 4.0, 40.0, &p).unwrap();
        let q1 = capacity_loss_pct(s1, 500.0, p.z);
        let ah_eq = (q1 / s2).powf(1.0 / p.z);
        let expected = capacity_loss_pct(s2, ah_eq + 500.0, p.z);

        let mut q = 0.0;
        q = accumulate_loss_pct(q, s1, 500.0, p.z).unwrap();
        q = accumulate_loss_pct(q, s2, 500.0, p.z).unwrap();
        assert_relative_eq!(q, expected, max_relative = 1e-12);

        // loss never decreases when throughput is added
        assert!(q > q1);
    }

    #[test]
    fn zero_increment_leaves_loss_unchanged() {
        let q = accumulate_loss_pct(0.5, 1e-2, 0.0, 0.57).unwrap();
        assert_eq!(q, 0.5);
    }

    #[test]
    fn r_squared_hand_value_and_errors() {
        assert_relative_eq!(
            r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(),
            0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert!(r_squared(&[1.0], &[1.0]).is_err());
        assert!(r_squared(&[2.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let p = params();
        let ds = AgingDataset::synthesize(
            "set_a",
            35.0,
            2.0,
            25.0,
            &[100.0, 400.0, 900.0, 1600.0],
            &p,
        )
        .unwrap();
        let text = ds.to_csv();
        let back = AgingDataset::parse_csv("set_a", &text).unwrap();
        assert_eq!(back.soc_pct, 35.0);
        assert_eq!(back.c_rate, 2.0);
        assert_eq!(back.temp_c, 25.0);
        assert_eq!(back.samples.len(), 4);
        for ((a0, q0), (a1, q1)) in ds.samples.iter().zip(&back.samples) {
            assert_relative_eq!(a0, a1, max_relative = 1e-15);
            assert_relative_eq!(q0, q1, max_relative = 1e-15);
        }
    }

    #[test]
    fn temperature_below_absolute_zero_is_rejected() {
        assert!(severity_factor(50.0, 1.0, -300.0, &params()).is_err());
    }
}
