//! Longitudinal vehicle plant: speed-tracking driver, electric machine,
//! converter chain, and single-step vehicle dynamics.
//!
//! Sign conventions: vehicle speed and machine speed are nonnegative,
//! positive machine torque propels, and positive electrical power discharges
//! the storage bus.

use crate::config::{
    ConverterParams, DcdcEfficiency, DriverParams, EmEfficiency, EmParams, FeedforwardMode,
    VehicleParams,
};

// ---------------------------------------------------------------------------
// driver

/// Accelerator/brake pedal positions in percent; mutually exclusive.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PedalCommand {
    pub accel_pct: f64,
    pub brake_pct: f64,
}

/// Driver memory carried between steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DriverState {
    /// Integral of the speed error in m.
    pub integrator: f64,
}

/// Wheel-level feedforward torque and the pedal share it maps to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelFeedforward {
    /// Inertia plus road-load torque at the wheel, N·m.
    pub torque_nm: f64,
    /// Normalized pedal share; positive requests drive, negative brake.
    pub share: f64,
}

/// Wheel-level feedforward: driveline-inertia torque plus road-load torque,
/// normalized by the machine torque rating. Braking demands are weighted by
/// the rear-axle share with a load-transfer correction.
pub fn driver_feedforward(
    target_accel_mps2: f64,
    speed_mps: f64,
    grade_rad: f64,
    veh: &VehicleParams,
    em: &EmParams,
) -> WheelFeedforward {
    let r = veh.wheel_radius_m;
    let torque_nm = target_accel_mps2 * veh.inertia_kgm2 / r
        + r * (veh.road_load_n(speed_mps)
            + veh.mass_kg * veh.gravity_mps2 * grade_rad.sin());
    let share = if torque_nm >= 0.0 {
        torque_nm / em.torque_max_nm
    } else {
        let rear_share = (1.0 - veh.front_brake_fraction)
            - veh.cg_height_m
                / (veh.mass_kg * veh.gravity_mps2 * r * veh.wheelbase_m);
        rear_share * torque_nm / (-em.torque_min_nm)
    };
    WheelFeedforward { torque_nm, share }
}

/// Inverse-dynamics feedforward: the pedal share that reproduces the target
/// acceleration against full effective mass and road load, referred to the
/// machine side through the gear ratio.
pub fn inverse_feedforward(
    target_accel_mps2: f64,
    target_speed_mps: f64,
    grade_rad: f64,
    veh: &VehicleParams,
    em: &EmParams,
) -> f64 {
    if target_speed_mps <= 0.0 && target_accel_mps2 <= 0.0 {
        return 0.0; // no pedal held at a standstill target
    }
    let force_n = veh.effective_mass_kg() * target_accel_mps2
        + veh.road_load_n(target_speed_mps)
        + veh.mass_kg * veh.gravity_mps2 * grade_rad.sin();
    let torque_em = force_n * veh.wheel_radius_m / veh.gear_ratio;
    if torque_em >= 0.0 {
        let omega = target_speed_mps / veh.wheel_radius_m * veh.gear_ratio;
        torque_em / propulsion_torque_cap(omega, em)
    } else {
        torque_em / (-em.torque_min_nm)
    }
}

/// One driver update: feedforward plus PI feedback on the speed error,
/// mapped to mutually exclusive pedal positions in percent.
#[allow(clippy::too_many_arguments)]
pub fn driver_step(
    target_speed_mps: f64,
    target_accel_mps2: f64,
    actual_speed_mps: f64,
    grade_rad: f64,
    dt_s: f64,
    state: &mut DriverState,
    driver: &DriverParams,
    veh: &VehicleParams,
    em: &EmParams,
) -> PedalCommand {
    let error = target_speed_mps - actual_speed_mps;
    state.integrator += error * dt_s;
    let u_ff = match driver.feedforward {
        FeedforwardMode::InverseDynamics => {
            inverse_feedforward(target_accel_mps2, target_speed_mps, grade_rad, veh, em)
        }
        FeedforwardMode::WheelLevel => {
            driver_feedforward(target_accel_mps2, actual_speed_mps, grade_rad, veh, em).share
        }
    };
    let u = u_ff + driver.kp * error + driver.ki * state.integrator;
    pedals_from_share(u)
}

/// Map a signed pedal share to saturated, mutually exclusive pedals.
pub fn pedals_from_share(u: f64) -> PedalCommand {
    if u > 0.0 {
        PedalCommand {
            accel_pct: u.min(1.0) * 100.0,
            brake_pct: 0.0,
        }
    } else if u < 0.0 {
        PedalCommand {
            accel_pct: 0.0,
            brake_pct: (-u).min(1.0) * 100.0,
        }
    } else {
        PedalCommand::default()
    }
}

// ---------------------------------------------------------------------------
// electric machine

/// Efficiency at an operating point, looked up on magnitudes.
pub fn em_efficiency(omega_radps: f64, torque_nm: f64, em: &EmParams) -> f64 {
    match &em.efficiency {
        EmEfficiency::Analytic {
            eta_max,
            copper_coeff,
            iron_coeff,
            eta_floor,
        } => {
            let t = (torque_nm / em.torque_max_nm).abs();
            let w = (omega_radps / em.omega_max_radps).abs();
            (eta_max - copper_coeff * t * t - iron_coeff * w * w).max(*eta_floor)
        }
        EmEfficiency::Grid { table } => table.interp(omega_radps.abs(), torque_nm.abs()),
    }
}

/// Maximum propulsion torque at a machine speed: rating below base speed,
/// constant-power hyperbola above.
pub fn propulsion_torque_cap(omega_radps: f64, em: &EmParams) -> f64 {
    if omega_radps > 0.0 {
        em.torque_max_nm.min(em.power_max_w / omega_radps)
    } else {
        em.torque_max_nm
    }
}

/// Most negative (regenerative) torque available at a machine speed.
pub fn regen_torque_floor(omega_radps: f64, em: &EmParams) -> f64 {
    if omega_radps > 0.0 {
        em.torque_min_nm.max(-em.power_max_w / omega_radps)
    } else {
        em.torque_min_nm
    }
}

/// Electrical power at the machine terminals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmElectricalPower {
    /// Positive when the storage bus is discharged.
    pub power_w: f64,
    /// Torque actually applied after the envelope clamp.
    pub torque_nm: f64,
    pub saturated: bool,
}

/// Electrical power for a torque request at a machine speed: mechanical
/// power divided by efficiency when motoring, multiplied when generating.
/// Requests outside the torque/power envelope are clamped and flagged.
pub fn em_electrical_power(omega_radps: f64, torque_nm: f64, em: &EmParams) -> EmElectricalPower {
    let hi = propulsion_torque_cap(omega_radps, em);
    let lo = regen_torque_floor(omega_radps, em);
    let t = torque_nm.clamp(lo, hi);
    let mech = omega_radps * t;
    let eta = em_efficiency(omega_radps, t, em);
    let power_w = if mech >= 0.0 { mech / eta } else { mech * eta };
    EmElectricalPower {
        power_w,
        torque_nm: t,
        saturated: t != torque_nm,
    }
}

// ---------------------------------------------------------------------------
// converter chain

fn dcdc_efficiency(conv: &ConverterParams, power_w: f64, current_hint_a: f64) -> f64 {
    match &conv.dcdc {
        DcdcEfficiency::Constant { efficiency } => *efficiency,
        DcdcEfficiency::Grid { table } => table.interp(power_w.abs(), current_hint_a.abs()),
    }
}

/// Battery-path conversion from machine-side power to battery-terminal
/// power: AC/DC then DC/DC. Discharge inflates the demand by the losses,
/// charge shrinks what arrives.
pub fn battery_chain_to_terminal(
    p_em_side_w: f64,
    conv: &ConverterParams,
    current_hint_a: f64,
) -> f64 {
    let eta = conv.acdc_efficiency * dcdc_efficiency(conv, p_em_side_w, current_hint_a);
    if p_em_side_w >= 0.0 {
        p_em_side_w / eta
    } else {
        p_em_side_w * eta
    }
}

/// Inverse of [`battery_chain_to_terminal`].
pub fn battery_chain_to_em_side(
    p_terminal_w: f64,
    conv: &ConverterParams,
    current_hint_a: f64,
) -> f64 {
    let eta = conv.acdc_efficiency * dcdc_efficiency(conv, p_terminal_w, current_hint_a);
    if p_terminal_w >= 0.0 {
        p_terminal_w * eta
    } else {
        p_terminal_w / eta
    }
}

/// Ultracapacitor-path conversion: the bank hangs on the DC bus, so only the
/// AC/DC stage applies.
pub fn ultracap_chain_to_terminal(p_em_side_w: f64, conv: &ConverterParams) -> f64 {
    if p_em_side_w >= 0.0 {
        p_em_side_w / conv.acdc_efficiency
    } else {
        p_em_side_w * conv.acdc_efficiency
    }
}

/// Inverse of [`ultracap_chain_to_terminal`].
pub fn ultracap_chain_to_em_side(p_terminal_w: f64, conv: &ConverterParams) -> f64 {
    if p_terminal_w >= 0.0 {
        p_terminal_w * conv.acdc_efficiency
    } else {
        p_terminal_w / conv.acdc_efficiency
    }
}

// ---------------------------------------------------------------------------
// vehicle dynamics

/// Result of advancing the vehicle by one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleStepOutcome {
    pub speed_next_mps: f64,
    /// Acceleration actually applied, (v_next - v)/dt.
    pub accel_mps2: f64,
    /// Machine torque after envelope clamp and stop reconciliation.
    pub em_torque_nm: f64,
    /// Machine speed at the step midpoint; pairs with `em_torque_nm` for all
    /// energy accounting.
    pub em_omega_radps: f64,
    /// Machine mechanical power, `T·omega_mid`.
    pub em_mech_power_w: f64,
    /// Friction-brake torque at the machine side, <= 0.
    pub friction_torque_nm: f64,
    /// Effective resistance force after standstill reconciliation, N.
    pub resist_force_n: f64,
    /// Torque demand was cut by the machine envelope.
    pub torque_saturated: bool,
    /// Friction brakes absorbed torque beyond the machine envelope.
    pub friction_active: bool,
}

/// Advance the vehicle one explicit-Euler step.
///
/// Pedals map to torque demand `theta_acc·T_ref + theta_brake·T_min`; the
/// machine envelope clamps it and friction brakes absorb braking excess.
/// Speed is floored at zero: braking and resistance stop the vehicle, never
/// reverse it. Forces are reconciled at the floor so that per step, exactly,
///
/// ```text
/// (F_em + F_fric - F_resist) · v_mid · dt = Δ(½ m_eff v²)
/// ```
pub fn vehicle_step(
    speed_mps: f64,
    pedals: PedalCommand,
    grade_rad: f64,
    dt_s: f64,
    veh: &VehicleParams,
    em: &EmParams,
) -> VehicleStepOutcome {
    debug_assert!(speed_mps >= 0.0);
    debug_assert!(
        pedals.accel_pct == 0.0 || pedals.brake_pct == 0.0,
        "pedals must be mutually exclusive"
    );
    let r = veh.wheel_radius_m;
    let gear = veh.gear_ratio;
    let m_eff = veh.effective_mass_kg();
    let omega_entry = speed_mps / r * gear;

    let t_ref = propulsion_torque_cap(omega_entry, em);
    let t_floor = regen_torque_floor(omega_entry, em);
    let t_demand = pedals.accel_pct / 100.0 * t_ref + pedals.brake_pct / 100.0 * em.torque_min_nm;
    let mut t_em = t_demand.clamp(t_floor, t_ref);
    let torque_saturated = t_em != t_demand;
    // only braking excess is absorbed by friction brakes
    let mut t_fric = (t_demand - t_em).min(0.0);

    let force_per_torque = gear / r;
    let mut f_em = t_em * force_per_torque;
    let mut f_fric = t_fric * force_per_torque;
    let f_resist_raw = veh.road_load_n(speed_mps)
        + veh.mass_kg * veh.gravity_mps2 * grade_rad.sin();
    let mut f_resist = f_resist_raw;

    let mut accel = (f_em + f_fric - f_resist) / m_eff;
    let mut speed_next = speed_mps + accel * dt_s;

    if speed_next < 0.0 {
        // the vehicle reaches rest inside the step: release friction first,
        // then regenerative torque, and let the remaining imbalance be held
        // by the standstill constraint
        let accel_needed = -speed_mps / dt_s;
        let mut shortfall = m_eff * accel_needed - (f_em + f_fric - f_resist);
        debug_assert!(shortfall >= 0.0);
        let from_fric = shortfall.min(-f_fric).max(0.0);
        f_fric += from_fric;
        shortfall -= from_fric;
        if shortfall > 0.0 && f_em < 0.0 {
            f_em += shortfall.min(-f_em);
        }
        accel = accel_needed;
        speed_next = 0.0;
        // residual definition keeps the per-step energy identity exact
        f_resist = f_em + f_fric - m_eff * accel;
        t_em = f_em / force_per_torque;
        t_fric = f_fric / force_per_torque;
    }

    let v_mid = 0.5 * (speed_mps + speed_next);
    let omega_mid = v_mid / r * gear;
    VehicleStepOutcome {
        speed_next_mps: speed_next,
        accel_mps2: accel,
        em_torque_nm: t_em,
        em_omega_radps: omega_mid,
        em_mech_power_w: t_em * force_per_torque * v_mid,
        friction_torque_nm: t_fric,
        resist_force_n: f_resist,
        torque_saturated,
        friction_active: t_fric != 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LabConfig;
    use crate::table::Table2D;
    use approx::assert_relative_eq;

    fn cfg() -> LabConfig {
        LabConfig::default()
    }

    #[test]
    fn wheel_feedforward_matches_hand_value_at_cruise() {
        let c = cfg();
        // T1 = 0.3 * (105.95 + 0.01*10 + 0.434*100) = 44.835 N·m
        let ff = driver_feedforward(0.0, 10.0, 0.0, &c.vehicle, &c.em);
        assert_relative_eq!(ff.torque_nm, 44.835, max_relative = 1e-12);
        assert_relative_eq!(ff.share, 44.835 / 400.0, max_relative = 1e-12);
    }

    #[test]
    fn wheel_feedforward_braking_branch_is_weighted() {
        let c = cfg();
        let t1 = -2.0 * 150.0 / 0.3 + 0.3 * (105.95 + 0.01 * 10.0 + 0.434 * 100.0);
        let rear = (1.0 - 0.6) - 0.5 / (1722.0 * 9.81 * 0.3 * 2.55);
        let ff = driver_feedforward(-2.0, 10.0, 0.0, &c.vehicle, &c.em);
        assert_relative_eq!(ff.torque_nm, t1, max_relative = 1e-12);
        assert_relative_eq!(ff.share, rear * t1 / 400.0, max_relative = 1e-12);
        assert!(ff.share < 0.0);
    }

    #[test]
    fn feedforward_includes_grade_term() {
        let c = cfg();
        let flat = driver_feedforward(0.0, 10.0, 0.0, &c.vehicle, &c.em);
        let wall = driver_feedforward(0.0, 10.0, std::f64::consts::FRAC_PI_2, &c.vehicle, &c.em);
        let expected = flat.torque_nm + 0.3 * 1722.0 * 9.81;
        assert_relative_eq!(wall.torque_nm, expected, max_relative = 1e-12);
    }

    #[test]
    fn inverse_feedforward_reproduces_cruise_demand() {
        let c = cfg();
        // at steady cruise the share is road load referred through the gear
        let u = inverse_feedforward(0.0, 10.0, 0.0, &c.vehicle, &c.em);
        let expected = (105.95 + 0.01 * 10.0 + 0.434 * 100.0) * 0.3 / 9.59 / 400.0;
        assert_relative_eq!(u, expected, max_relative = 1e-12);
        // a standstill target holds no pedal
        assert_eq!(inverse_feedforward(0.0, 0.0, 0.0, &c.vehicle, &c.em), 0.0);
    }

    #[test]
    fn pedal_mapping_saturates_and_excludes() {
        assert_eq!(
            pedals_from_share(0.5),
            PedalCommand { accel_pct: 50.0, brake_pct: 0.0 }
        );
        assert_eq!(
            pedals_from_share(-0.3),
            PedalCommand { accel_pct: 0.0, brake_pct: 30.0 }
        );
        assert_eq!(pedals_from_share(1.7).accel_pct, 100.0);
        assert_eq!(pedals_from_share(-2.5).brake_pct, 100.0);
        assert_eq!(pedals_from_share(0.0), PedalCommand::default());
    }

    #[test]
    fn driver_step_zero_error_zero_ff_holds_pedals() {
        let c = cfg();
        let mut st = DriverState::default();
        // target standstill, at standstill: nothing to do
        let p = driver_step(0.0, 0.0, 0.0, 0.0, 1.0, &mut st, &c.driver, &c.vehicle, &c.em);
        assert_eq!(p, PedalCommand::default());
        assert_eq!(st.integrator, 0.0);
    }

    #[test]
    fn driver_step_integrator_advances_by_error() {
        let c = cfg();
        let mut st = DriverState::default();
        driver_step(10.0, 0.0, 8.0, 0.0, 1.0, &mut st, &c.driver, &c.vehicle, &c.em);
        assert_relative_eq!(st.integrator, 2.0, max_relative = 1e-15);
        driver_step(10.0, 0.0, 9.0, 0.0, 1.0, &mut st, &c.driver, &c.vehicle, &c.em);
        assert_relative_eq!(st.integrator, 3.0, max_relative = 1e-15);
    }

    #[test]
    fn em_power_with_uniform_grid_matches_hand_value() {
        let mut em = cfg().em;
        em.efficiency = EmEfficiency::Grid {
            table: Table2D::new(
                vec![0.0, 2000.0],
                vec![0.0, 500.0],
                vec![vec![0.9, 0.9], vec![0.9, 0.9]],
            )
            .unwrap(),
        };
        let out = em_electrical_power(300.0, 100.0, &em);
        assert_relative_eq!(out.power_w, 300.0 * 100.0 / 0.9, max_relative = 1e-12);
        assert!(!out.saturated);

        let regen = em_electrical_power(300.0, -100.0, &em);
        assert_relative_eq!(regen.power_w, -300.0 * 100.0 * 0.9, max_relative = 1e-12);
    }

    #[test]
    fn em_envelope_clamps_torque_and_flags() {
        let em = cfg().em;
        // above base speed the power cap binds: 143 kW / 500 rad/s = 286 N·m
        let out = em_electrical_power(500.0, 400.0, &em);
        assert!(out.saturated);
        assert_relative_eq!(out.torque_nm, 143e3 / 500.0, max_relative = 1e-12);
        // mechanical power is pinned at the rating
        assert_relative_eq!(out.torque_nm * 500.0, 143e3, max_relative = 1e-12);
    }

    #[test]
    fn em_zero_speed_consumes_nothing() {
        let em = cfg().em;
        let out = em_electrical_power(0.0, 250.0, &em);
        assert_eq!(out.power_w, 0.0);
    }

    #[test]
    fn converter_chain_hand_values() {
        let conv = cfg().converter;
        // discharge: storage must supply P / (0.92 * 0.95)
        assert_relative_eq!(
            battery_chain_to_terminal(1000.0, &conv, 0.0),
            1144.1647597254005,
            max_relative = 1e-12
        );
        // charge: storage receives P * 0.92 * 0.95
        assert_relative_eq!(
            battery_chain_to_terminal(-1000.0, &conv, 0.0),
            -874.0,
            max_relative = 1e-12
        );
        // the bank only pays the AC/DC stage
        assert_relative_eq!(
            ultracap_chain_to_terminal(1000.0, &conv),
            1000.0 / 0.92,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            ultracap_chain_to_terminal(-1000.0, &conv),
            -920.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn converter_chain_round_trips() {
        let conv = cfg().converter;
        for p in [-25e3, -1.0, 0.0, 1.0, 40e3] {
            let term = battery_chain_to_terminal(p, &conv, 10.0);
            assert_relative_eq!(
                battery_chain_to_em_side(term, &conv, 10.0),
                p,
                epsilon = 1e-9
            );
            let cterm = ultracap_chain_to_terminal(p, &conv);
            assert_relative_eq!(ultracap_chain_to_em_side(cterm, &conv), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn vehicle_step_launch_matches_hand_chain() {
        let c = cfg();
        let out = vehicle_step(
            0.0,
            PedalCommand { accel_pct: 50.0, brake_pct: 0.0 },
            0.0,
            1.0,
            &c.vehicle,
            &c.em,
        );
        // T = 200, F = 200*9.59/0.3, resist = 105.95, m_eff = 1722 + 150/0.09
        let f = 200.0 * 9.59 / 0.3;
        let m_eff = 1722.0 + 150.0 / 0.09;
        let a = (f - 105.95) / m_eff;
        assert_relative_eq!(out.accel_mps2, a, max_relative = 1e-12);
        assert_relative_eq!(out.speed_next_mps, a, max_relative = 1e-12);
        let omega_mid = 0.5 * a / 0.3 * 9.59;
        assert_relative_eq!(out.em_mech_power_w, 200.0 * omega_mid, max_relative = 1e-12);
        assert!(!out.torque_saturated && !out.friction_active);
    }

    #[test]
    fn vehicle_step_standstill_holds() {
        let c = cfg();
        let out = vehicle_step(0.0, PedalCommand::default(), 0.0, 1.0, &c.vehicle, &c.em);
        assert_eq!(out.speed_next_mps, 0.0);
        assert_eq!(out.em_mech_power_w, 0.0);
        assert_eq!(out.resist_force_n, 0.0);
    }

    #[test]
    fn vehicle_step_stops_exactly_instead_of_reversing() {
        let c = cfg();
        let out = vehicle_step(
            0.5,
            PedalCommand { accel_pct: 0.0, brake_pct: 100.0 },
            0.0,
            1.0,
            &c.vehicle,
            &c.em,
        );
        assert_eq!(out.speed_next_mps, 0.0);
        assert_relative_eq!(out.accel_mps2, -0.5, max_relative = 1e-12);
        // regen torque was released down to what the stop needs
        assert!(out.em_torque_nm < 0.0 && out.em_torque_nm > c.em.torque_min_nm);
    }

    #[test]
    fn vehicle_step_friction_absorbs_braking_beyond_envelope() {
        let c = cfg();
        // 30 m/s: regen floor is -143k/959 = -149.1 N·m, demand is -400
        let out = vehicle_step(
            30.0,
            PedalCommand { accel_pct: 0.0, brake_pct: 100.0 },
            0.0,
            1.0,
            &c.vehicle,
            &c.em,
        );
        assert!(out.friction_active);
        assert!(out.torque_saturated);
        let omega = 30.0 / 0.3 * 9.59;
        assert_relative_eq!(out.em_torque_nm, -143e3 / omega, max_relative = 1e-12);
        assert_relative_eq!(
            out.friction_torque_nm,
            -400.0 - out.em_torque_nm,
            max_relative = 1e-12
        );
    }

    #[test]
    fn vehicle_step_energy_identity_holds() {
        let c = cfg();
        let m_eff = c.vehicle.effective_mass_kg();
        for (v, acc, brake) in [
            (0.0, 80.0, 0.0),
            (5.0, 30.0, 0.0),
            (12.0, 0.0, 40.0),
            (0.3, 0.0, 100.0),
            (25.0, 0.0, 0.0),
        ] {
            let out = vehicle_step(
                v,
                PedalCommand { accel_pct: acc, brake_pct: brake },
                0.0,
                1.0,
                &c.vehicle,
                &c.em,
            );
            let v_mid = 0.5 * (v + out.speed_next_mps);
            let gear_force = c.vehicle.gear_ratio / c.vehicle.wheel_radius_m;
            let work = (out.em_torque_nm + out.friction_torque_nm) * gear_force * v_mid
                - out.resist_force_n * v_mid;
            let dke = 0.5 * m_eff * (out.speed_next_mps.powi(2) - v * v);
            assert_relative_eq!(work, dke, epsilon = 1e-9, max_relative = 1e-12);
        }
    }
}
