//! Battery and ultracapacitor terminal models.
//!
//! Both devices are internal-resistance models: a power request at the
//! terminals is turned into a current by solving `P = I·(U_oc - I·R)`, and
//! state advances by Coulomb counting. Positive power and positive current
//! mean discharge throughout.

use serde::Serialize;

use crate::config::{BatteryPack, UltracapPack};
use crate::error::{Error, Result};

/// Current that delivers `power_w` at the terminals of a source with
/// open-circuit voltage `u_oc_v` and internal resistance `r_ohm`.
///
/// The smaller quadratic root is the physical branch (terminal voltage above
/// `U_oc/2`). Requests beyond `U_oc²/(4R)` have no real solution and are
/// rejected with the maximum deliverable power in the error; requests within
/// rounding distance of the peak deliver the peak current.
pub fn solve_current(power_w: f64, u_oc_v: f64, r_ohm: f64) -> Result<f64> {
    if !(u_oc_v >= 0.0) || !(r_ohm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "solve_current needs U_oc >= 0 and R > 0, got U_oc={u_oc_v}, R={r_ohm}"
        )));
    }
    if power_w == 0.0 {
        return Ok(0.0);
    }
    let disc = u_oc_v * u_oc_v - 4.0 * r_ohm * power_w;
    if disc < 0.0 {
        // only a discharge request can get here; the discriminant of the
        // peak power itself can round a hair negative, so requests at or
        // just past the peak resolve to the peak current
        let max_w = u_oc_v * u_oc_v / (4.0 * r_ohm);
        if power_w > max_w * (1.0 + 1e-9) {
            return Err(Error::PowerInfeasible {
                requested_w: power_w,
                max_deliverable_w: max_w,
            });
        }
        return Ok(u_oc_v / (2.0 * r_ohm));
    }
    // (U - sqrt(U^2-4RP)) / 2R, computed through the conjugate form so the
    // discharge branch keeps precision when 4RP << U^2
    if power_w > 0.0 {
        Ok(2.0 * power_w / (u_oc_v + disc.sqrt()))
    } else {
        Ok((u_oc_v - disc.sqrt()) / (2.0 * r_ohm))
    }
}

/// Discharge/charge power capability of a device at its present state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLimits {
    /// Maximum terminal power the device can source (>= 0).
    pub discharge_w: f64,
    /// Most negative terminal power the device can sink (<= 0).
    pub charge_w: f64,
}

/// Neumaier-compensated running sum; keeps long Coulomb integrals exact to
/// within a couple of ulps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mutable battery state advanced by [`battery_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryState {
    /// State of charge, fraction in [0, 1].
    pub soc: f64,
    /// Cumulative |Ah| moved through the pack.
    pub ah_throughput: f64,
    /// Capacity fade in percent, maintained by the aging accumulator.
    pub q_loss_pct: f64,
    /// Current of the most recent step in A (positive discharges).
    pub last_current_a: f64,
    /// Terminal voltage of the most recent step in V.
    pub last_voltage_v: f64,
    initial_soc: f64,
    charge_as: CompensatedSum,
    abs_charge_as: CompensatedSum,
}

impl BatteryState {
    pub fn new(initial_soc: f64, pack: &BatteryPack) -> Self {
        let soc = initial_soc.clamp(0.0, 1.0);
        BatteryState {
            soc,
            ah_throughput: 0.0,
            q_loss_pct: 0.0,
            last_current_a: 0.0,
            last_voltage_v: pack.u_oc_v(soc),
            initial_soc: soc,
            charge_as: CompensatedSum::default(),
            abs_charge_as: CompensatedSum::default(),
        }
    }

    /// Instantly restore SOC (recharge between fleet cycles). Throughput and
    /// capacity loss are intentionally untouched.
    pub fn recharge_to(&mut self, soc: f64) {
        self.initial_soc = soc.clamp(0.0, 1.0);
        self.soc = self.initial_soc;
        self.charge_as = CompensatedSum::default();
        self.last_current_a = 0.0;
    }

    /// Apply a current for `dt_s` seconds: Coulomb counting for SOC plus
    /// absolute-value throughput accounting.
    fn apply_current(&mut self, current_a: f64, dt_s: f64, q_nom_ah: f64) {
        self.charge_as.add(current_a * dt_s);
        self.abs_charge_as.add((current_a * dt_s).abs());
        self.soc = (self.initial_soc - self.charge_as.value() / (3600.0 * q_nom_ah))
            .clamp(0.0, 1.0);
        self.ah_throughput = self.abs_charge_as.value() / 3600.0;
    }
}

/// Flags raised by a battery step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatteryStepFlags {
    /// SOC crossed the configured floor during this step.
    pub depleted: bool,
    /// SOC crossed the configured ceiling during this step.
    pub saturated: bool,
}

/// Advance the battery by one step at the requested terminal power.
pub fn battery_step(
    state: &mut BatteryState,
    pack: &BatteryPack,
    power_w: f64,
    dt_s: f64,
) -> Result<BatteryStepFlags> {
    let u_oc = pack.u_oc_v(state.soc);
    let r = pack.r_ohm(state.soc);
    let i = solve_current(power_w, u_oc, r)?;
    state.apply_current(i, dt_s, pack.q_nom_ah());
    state.last_current_a = i;
    state.last_voltage_v = u_oc - i * r;
    Ok(BatteryStepFlags {
        depleted: state.soc <= pack.soc_floor,
        saturated: state.soc >= pack.soc_ceiling && i < 0.0,
    })
}

/// Discharge/charge capability at the present SOC.
///
/// Discharge is bounded by the peak of `I·(U_oc - I·R)`; charge by the
/// current that lifts the terminal voltage to the pack's top-of-charge
/// voltage. Outside the SOC window the corresponding direction is zero.
pub fn battery_power_limits(state: &BatteryState, pack: &BatteryPack) -> PowerLimits {
    let u_oc = pack.u_oc_v(state.soc);
    let r = pack.r_ohm(state.soc);
    let discharge_w = if state.soc <= pack.soc_floor {
        0.0
    } else {
        u_oc * u_oc / (4.0 * r)
    };
    let charge_w = if state.soc >= pack.soc_ceiling {
        0.0
    } else {
        let u_top = pack.u_oc_v(pack.soc_ceiling);
        let i = (u_oc - u_top) / r; // negative
        (u_top * i).min(0.0)
    };
    PowerLimits {
        discharge_w,
        charge_w,
    }
}

/// Mutable ultracapacitor state advanced by [`ultracap_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct UltracapState {
    /// State of voltage, fraction of rated voltage in [0, 1].
    pub sov: f64,
    pub last_current_a: f64,
    pub last_voltage_v: f64,
    initial_sov: f64,
    charge_as: CompensatedSum,
}

impl UltracapState {
    pub fn new(initial_sov: f64, pack: &UltracapPack) -> Self {
        let sov = initial_sov.clamp(0.0, 1.0);
        UltracapState {
            sov,
            last_current_a: 0.0,
            last_voltage_v: pack.u_oc_v(sov),
            initial_sov: sov,
            charge_as: CompensatedSum::default(),
        }
    }

    fn apply_current(&mut self, current_a: f64, dt_s: f64, pack: &UltracapPack) {
        self.charge_as.add(current_a * dt_s);
        self.sov = (self.initial_sov
            - self.charge_as.value() / (pack.capacitance_f() * pack.u_max_v()))
        .clamp(0.0, 1.0);
    }
}

/// Outcome of an ultracapacitor step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltracapStepOutcome {
    /// Terminal power actually applied after any clamping.
    pub applied_power_w: f64,
    /// True when the request was reduced to keep SOV inside [0, 1] or within
    /// the deliverable-power envelope.
    pub clamped: bool,
}

/// Advance the ultracapacitor by one step at the requested terminal power.
///
/// Requests that would drive SOV outside [0, 1] or exceed the deliverable
/// envelope are clamped to the boundary-reaching power and flagged.
pub fn ultracap_step(
    state: &mut UltracapState,
    pack: &UltracapPack,
    power_w: f64,
    dt_s: f64,
) -> Result<UltracapStepOutcome> {
    let env = limit_envelope(state, pack, dt_s);
    let target = power_w.clamp(env.charge_w, env.discharge_w);
    let clamped = target != power_w;
    let u_oc = pack.u_oc_v(state.sov);
    // when pegged at an envelope edge, reuse the edge current: re-solving the
    // quadratic at the peak power can fail on the last ulp
    let i = if target == env.discharge_w && target != 0.0 {
        env.i_discharge
    } else if target == env.charge_w && target != 0.0 {
        env.i_charge
    } else {
        solve_current(target, u_oc, pack.resistance_ohm)?
    };
    state.apply_current(i, dt_s, pack);
    state.last_current_a = i;
    state.last_voltage_v = u_oc - i * pack.resistance_ohm;
    Ok(UltracapStepOutcome {
        applied_power_w: target,
        clamped,
    })
}

struct LimitEnvelope {
    discharge_w: f64,
    charge_w: f64,
    i_discharge: f64,
    i_charge: f64,
}

fn limit_envelope(state: &UltracapState, pack: &UltracapPack, dt_s: f64) -> LimitEnvelope {
    let u_max = pack.u_max_v();
    let u_oc = pack.u_oc_v(state.sov);
    let r = pack.resistance_ohm;
    let c = pack.capacitance_f();

    // discharge: peak-power current, the current that reaches SOV = 0, or
    // the bank rating, whichever binds first
    let i_peak = u_oc / (2.0 * r);
    let i_empty = state.sov * c * u_max / dt_s;
    let i_dis = i_peak.min(i_empty).min(pack.max_current_a);
    let discharge_w = (i_dis * (u_oc - i_dis * r)).max(0.0);

    // charge: terminal voltage at rated, the current that reaches SOV = 1,
    // or the bank rating
    let i_ceiling = (u_oc - u_max) / r; // negative
    let i_fill = -((1.0 - state.sov) * c * u_max / dt_s);
    let i_chg = i_ceiling.max(i_fill).max(-pack.max_current_a);
    let charge_w = (i_chg * (u_oc - i_chg * r)).min(0.0);

    LimitEnvelope {
        discharge_w,
        charge_w,
        i_discharge: i_dis,
        i_charge: i_chg,
    }
}

/// Discharge/charge capability at the present SOV for a step of `dt_s`.
///
/// Discharge is bounded by the `U_oc²/(4R)` envelope and by the current that
/// empties the bank within the step; charge by the terminal voltage reaching
/// the rated voltage and by the current that fills the bank within the step.
pub fn ultracap_power_limits(state: &UltracapState, pack: &UltracapPack, dt_s: f64) -> PowerLimits {
    let env = limit_envelope(state, pack, dt_s);
    PowerLimits {
        discharge_w: env.discharge_w,
        charge_w: env.charge_w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pack() -> BatteryPack {
        BatteryPack::default()
    }

    fn cap() -> UltracapPack {
        UltracapPack::default()
    }

    #[test]
    fn solve_current_matches_quadratic_by_hand() {
        // 10 kW from a 320 V, 0.1 ohm source:
        // I = (320 - sqrt(320^2 - 4*0.1*1e4)) / (2*0.1)
        let by_hand = (320.0 - (320.0f64 * 320.0 - 4.0 * 0.1 * 1.0e4).sqrt()) / 0.2;
        let i = solve_current(1.0e4, 320.0, 0.1).unwrap();
        assert_relative_eq!(i, by_hand, max_relative = 1e-12);
        assert_relative_eq!(i, 31.561, max_relative = 1e-4);
        // the root actually delivers the requested power
        assert_relative_eq!(i * (320.0 - i * 0.1), 1.0e4, max_relative = 1e-12);
    }

    #[test]
    fn solve_current_zero_and_charge() {
        assert_eq!(solve_current(0.0, 320.0, 0.1).unwrap(), 0.0);
        let i = solve_current(-1.0e4, 320.0, 0.1).unwrap();
        assert!(i < 0.0);
        assert_relative_eq!(i * (320.0 - i * 0.1), -1.0e4, max_relative = 1e-12);
    }

    #[test]
    fn solve_current_reports_max_deliverable() {
        let err = solve_current(300e3, 320.0, 0.1).unwrap_err();
        match err {
            Error::PowerInfeasible {
                max_deliverable_w, ..
            } => assert_relative_eq!(max_deliverable_w, 256e3, max_relative = 1e-12),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn solve_current_delivers_the_exact_peak() {
        // sweep voltages where U^2/(4R) rounds such that its own
        // discriminant goes negative; the peak request must still resolve
        for k in 1..200 {
            let u = 0.0852 * k as f64 / 7.0;
            let r = 0.0005;
            let peak = u * u / (4.0 * r);
            let i = solve_current(peak, u, r).unwrap();
            assert_relative_eq!(i, u / (2.0 * r), max_relative = 1e-7);
        }
    }

    #[test]
    fn constant_current_discharge_matches_coulomb_counting() {
        // hold 144 A out of a 144 Ah pack for one hour: SOC drops exactly 1.0
        let p = pack();
        let mut s = BatteryState::new(1.0, &p);
        let q = p.q_nom_ah();
        for _ in 0..3600 {
            s.apply_current(144.0, 1.0, q);
        }
        assert_relative_eq!(s.soc, 0.0, epsilon = 1e-12);
        assert_relative_eq!(s.ah_throughput, 144.0, max_relative = 1e-12);
    }

    #[test]
    fn throughput_counts_magnitude_both_directions() {
        let p = pack();
        let mut s = BatteryState::new(0.5, &p);
        let q = p.q_nom_ah();
        for _ in 0..600 {
            s.apply_current(30.0, 1.0, q);
        }
        for _ in 0..600 {
            s.apply_current(-30.0, 1.0, q);
        }
        // SOC returns, throughput accumulates
        assert_relative_eq!(s.soc, 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.ah_throughput, 2.0 * 30.0 * 600.0 / 3600.0, max_relative = 1e-12);
    }

    #[test]
    fn battery_step_records_current_and_voltage() {
        let p = pack();
        let mut s = BatteryState::new(0.9, &p);
        battery_step(&mut s, &p, 10e3, 1.0).unwrap();
        assert!(s.last_current_a > 0.0);
        assert!(s.last_voltage_v < p.u_oc_v(0.9));
        assert!(s.soc < 0.9);
    }

    #[test]
    fn battery_step_flags_depletion() {
        let p = pack();
        let mut s = BatteryState::new(0.0012, &p);
        let mut depleted = false;
        for _ in 0..200 {
            depleted = battery_step(&mut s, &p, 5e3, 1.0).unwrap().depleted;
            if depleted {
                break;
            }
        }
        assert!(depleted);
        assert!(s.soc >= 0.0);
    }

    #[test]
    fn battery_limits_close_at_the_window_edges() {
        let p = pack();
        let full = BatteryState::new(1.0, &p);
        assert_eq!(battery_power_limits(&full, &p).charge_w, 0.0);
        assert!(battery_power_limits(&full, &p).discharge_w > 0.0);

        let empty = BatteryState::new(0.0005, &p);
        assert_eq!(battery_power_limits(&empty, &p).discharge_w, 0.0);
        assert!(battery_power_limits(&empty, &p).charge_w < 0.0);
    }

    #[test]
    fn ultracap_constant_current_sov_drop() {
        // 162 A for 100 s out of 60 kF at 2.7 V rated: SOV drops exactly 0.1
        let c = cap();
        let mut s = UltracapState::new(1.0, &c);
        for _ in 0..100 {
            s.apply_current(162.0, 1.0, &c);
        }
        assert_relative_eq!(s.sov, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn ultracap_step_clamps_at_empty() {
        let c = cap();
        let mut s = UltracapState::new(0.0, &c);
        let out = ultracap_step(&mut s, &c, 1000.0, 1.0).unwrap();
        assert!(out.clamped);
        assert_eq!(out.applied_power_w, 0.0);
        assert_eq!(s.sov, 0.0);
    }

    #[test]
    fn ultracap_step_accepts_charge_when_empty() {
        let c = cap();
        let mut s = UltracapState::new(0.0, &c);
        let out = ultracap_step(&mut s, &c, -500.0, 1.0).unwrap();
        assert_eq!(out.applied_power_w, -500.0);
        assert!(!out.clamped);
        assert!(s.sov > 0.0);
    }

    #[test]
    fn ultracap_limits_match_envelope() {
        let c = cap();
        let s = UltracapState::new(1.0, &c);
        let lim = ultracap_power_limits(&s, &c, 1.0);
        // at full charge the envelope peak is U^2/4R and charging is shut
        assert_relative_eq!(
            lim.discharge_w,
            2.7 * 2.7 / (4.0 * c.resistance_ohm),
            max_relative = 1e-12
        );
        assert_eq!(lim.charge_w, 0.0);

        let s = UltracapState::new(0.0, &c);
        let lim = ultracap_power_limits(&s, &c, 1.0);
        assert_eq!(lim.discharge_w, 0.0);
        assert!(lim.charge_w < -1000.0);
    }

    #[test]
    fn ultracap_round_trip_returns_sov() {
        let c = cap();
        let mut s = UltracapState::new(0.7, &c);
        for _ in 0..50 {
            ultracap_step(&mut s, &c, 800.0, 1.0).unwrap();
        }
        for _ in 0..50 {
            ultracap_step(&mut s, &c, -800.0, 1.0).unwrap();
        }
        // resistive losses cut both legs: the same terminal power moves
        // fewer amp-seconds in than it took out, so SOV lands below 0.7
        assert!(s.sov < 0.7 && s.sov > 0.64, "sov = {}", s.sov);
    }
}
