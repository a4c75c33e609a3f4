//! Whole-vehicle simulation: wires the driver, plant, converters, storage,
//! and a management strategy into stepped runs, and builds the experiments
//! (range, fleet aging, strategy comparison, training environment) on top.

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::aging::{accumulate_loss_pct, c_rate, severity_factor};
use crate::config::{HeuristicParams1, HeuristicParams2, LabConfig};
use crate::cycles::DrivingCycle;
use crate::ems::{
    heuristic1_power, heuristic2_power, reward, split_baseline, split_threshold, ActionGrid,
    CurvePoint, EpisodeEnv, EpisodeTrace, QTable, RewardSpec, SplitProposal, StateGrid, Transition,
};
use crate::error::{Error, Result};
use crate::plant::{
    battery_chain_to_em_side, battery_chain_to_terminal, driver_step, em_efficiency,
    ultracap_chain_to_em_side, ultracap_chain_to_terminal, vehicle_step, DriverState,
};
use crate::storage::{battery_step, ultracap_power_limits, ultracap_step, BatteryState, UltracapState};

pub const METERS_PER_MILE: f64 = 1609.344;

// ---------------------------------------------------------------------------
// strategies

/// A power-split policy the simulator can run.
#[derive(Debug, Clone)]
pub enum Strategy {
    /// The battery carries everything.
    BatteryOnly,
    /// Fixed dead-band thresholds.
    Threshold { discharge_w: f64, charge_w: f64 },
    /// Bilinear proportional rule.
    Bilinear(HeuristicParams1),
    /// Fixed-ratio rule past engagement thresholds.
    FixedRatio(HeuristicParams2),
    /// Learned table: greedy threshold choice per discretized state.
    Learned(QTable),
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::BatteryOnly => "battery_only",
            Strategy::Threshold { .. } => "threshold",
            Strategy::Bilinear(_) => "bilinear",
            Strategy::FixedRatio(_) => "fixed_ratio",
            Strategy::Learned(_) => "learned",
        }
    }

    /// Whether converter-rating excess may be rerouted into the bank. The
    /// battery-only reference keeps the bank untouched by definition.
    fn allows_reroute(&self) -> bool {
        !matches!(self, Strategy::BatteryOnly)
    }
}

// ---------------------------------------------------------------------------
// per-run records

/// One simulation step. Powers are watts; `p_em_w` is the machine-side
/// electrical demand, `p_bat_w`/`p_cap_w` its machine-side split, and the
/// terminal columns are what the storage devices actually saw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub time_s: f64,
    pub v_target_mps: f64,
    pub v_actual_mps: f64,
    pub accel_pedal_pct: f64,
    pub brake_pedal_pct: f64,
    pub p_em_w: f64,
    pub p_bat_w: f64,
    pub p_cap_w: f64,
    pub p_bat_terminal_w: f64,
    pub p_cap_terminal_w: f64,
    pub i_bat_a: f64,
    pub i_cap_a: f64,
    pub soc: f64,
    pub sov: f64,
    pub severity: f64,
    pub reward: f64,
}

/// Saturation and limit events observed during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub torque_saturated: usize,
    pub friction_braking: usize,
    pub ultracap_clamped: usize,
    pub dcdc_rerouted: usize,
    pub dcdc_overflow: usize,
    pub battery_depleted: usize,
    pub battery_saturated: usize,
}

/// Summary of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    #[serde(skip)]
    pub records: Vec<StepRecord>,
    pub steps: usize,
    pub distance_m: f64,
    /// Net stored energy drawn from the battery, J (discharge positive),
    /// metered at the open-circuit level so internal dissipation counts as
    /// consumption.
    pub battery_energy_j: f64,
    /// Net stored energy drawn from the bank, J, same metering.
    pub ultracap_energy_j: f64,
    /// Largest single-step combined storage draw, J (reward normalizer).
    pub max_step_energy_j: f64,
    /// Largest single-step severity factor (reward normalizer).
    pub max_step_severity: f64,
    pub battery_ah: f64,
    pub q_loss_pct: f64,
    pub severity_sum: f64,
    pub reward_total: f64,
    pub tracking_rms_mps: f64,
    pub tracking_max_mps: f64,
    pub final_soc: f64,
    pub final_sov: f64,
    pub events: EventCounts,
}

/// Trace CSV with one row per step.
pub fn trace_to_csv(records: &[StepRecord]) -> String {
    let mut out = String::from(
        "time_s,v_target_mps,v_actual_mps,accel_pedal_pct,brake_pedal_pct,p_em_w,p_bat_w,p_cap_w,p_bat_terminal_w,p_cap_terminal_w,i_bat_a,i_cap_a,soc,sov,severity,reward\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.time_s,
            r.v_target_mps,
            r.v_actual_mps,
            r.accel_pedal_pct,
            r.brake_pedal_pct,
            r.p_em_w,
            r.p_bat_w,
            r.p_cap_w,
            r.p_bat_terminal_w,
            r.p_cap_terminal_w,
            r.i_bat_a,
            r.i_cap_a,
            r.soc,
            r.sov,
            r.severity,
            r.reward
        );
    }
    out
}

// ---------------------------------------------------------------------------
// simulator

/// What to do when the battery reaches the stop threshold mid-run.
#[derive(Debug, Clone, Copy, PartialEq)]
enum DepletionPolicy {
    /// Keep stepping (single-cycle runs never get near the floor).
    RunThrough,
    /// End the pass at the threshold.
    Stop(f64),
    /// Instantly recharge to the initial SOC and keep going.
    Recharge(f64),
}

/// Mutable state carried across steps and cycle passes.
#[derive(Debug, Clone)]
struct RunStates {
    speed_mps: f64,
    driver: DriverState,
    battery: BatteryState,
    ultracap: UltracapState,
}

/// Accumulators shared by every experiment.
#[derive(Debug, Clone, Default)]
struct Tally {
    steps: usize,
    distance_m: f64,
    battery_energy_j: f64,
    ultracap_energy_j: f64,
    max_step_energy_j: f64,
    max_step_severity: f64,
    severity_sum: f64,
    reward_total: f64,
    track_sq_sum: f64,
    track_max: f64,
    events: EventCounts,
    recharges: usize,
    stopped: bool,
}

/// The split a strategy asked for, after every feasibility stage.
#[derive(Debug, Clone, Copy)]
struct EnforcedSplit {
    bat_em_w: f64,
    cap_em_w: f64,
    bat_terminal_w: f64,
    cap_terminal_w: f64,
    cap_clamped: bool,
    rerouted: bool,
    overflow: bool,
}

fn electrical_from_mech(mech_w: f64, eta: f64) -> f64 {
    if mech_w >= 0.0 {
        mech_w / eta
    } else {
        mech_w * eta
    }
}

/// A configured vehicle plus a drive cycle, ready to run strategies.
///
/// The cycle's sample period is the integration step, so the same cycle
/// resampled to a finer grid runs the same scenario at higher resolution.
pub struct Simulator<'a> {
    cfg: &'a LabConfig,
    cycle: &'a DrivingCycle,
    state_grid: StateGrid,
    action_grid: ActionGrid,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a LabConfig, cycle: &'a DrivingCycle) -> Result<Self> {
        cfg.validate()?;
        if cycle.speed_mps.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "cycle `{}` needs at least two samples",
                cycle.name
            )));
        }
        Ok(Self {
            cfg,
            cycle,
            state_grid: StateGrid::new(&cfg.ems.state_grid)?,
            action_grid: ActionGrid::new(&cfg.ems.action_grid)?,
        })
    }

    pub fn state_grid(&self) -> &StateGrid {
        &self.state_grid
    }

    pub fn action_grid(&self) -> &ActionGrid {
        &self.action_grid
    }

    fn fresh_states(&self) -> RunStates {
        RunStates {
            speed_mps: 0.0,
            driver: DriverState::default(),
            battery: BatteryState::new(self.cfg.sim.initial_soc, &self.cfg.battery),
            ultracap: UltracapState::new(self.cfg.sim.initial_sov, &self.cfg.ultracap),
        }
    }

    fn propose(&self, strategy: &Strategy, state_idx: usize, demand_w: f64, sov: f64) -> (SplitProposal, Option<usize>) {
        let uc = &self.cfg.ultracap;
        match strategy {
            Strategy::BatteryOnly => (split_baseline(demand_w), None),
            Strategy::Threshold { discharge_w, charge_w } => {
                (split_threshold(demand_w, *discharge_w, *charge_w), None)
            }
            Strategy::Bilinear(p) => {
                let cap = heuristic1_power(demand_w, sov, p, uc.sov_engage_min, uc.sov_engage_max);
                (SplitProposal::with_ultracap(demand_w, cap), None)
            }
            Strategy::FixedRatio(p) => {
                let cap = heuristic2_power(demand_w, sov, p, uc.sov_engage_min, uc.sov_engage_max);
                (SplitProposal::with_ultracap(demand_w, cap), None)
            }
            Strategy::Learned(q) => {
                let action = q.argmax_action(state_idx);
                let (d, c) = self.action_grid.thresholds(action);
                (split_threshold(demand_w, d, c), Some(action))
            }
        }
    }

    /// Clamp a proposed split to the bank's capability and the converter
    /// rating, keeping machine-side conservation exact: the battery share is
    /// always recomputed as `demand - bank`.
    fn enforce_split(
        &self,
        demand_w: f64,
        proposal: SplitProposal,
        states: &RunStates,
        allow_reroute: bool,
        dt_s: f64,
    ) -> EnforcedSplit {
        let conv = &self.cfg.converter;
        let cap_env = ultracap_power_limits(&states.ultracap, &self.cfg.ultracap, dt_s);
        let cap_em_hi = ultracap_chain_to_em_side(cap_env.discharge_w, conv);
        let cap_em_lo = ultracap_chain_to_em_side(cap_env.charge_w, conv);
        let mut cap_em = proposal.ultracap_w.clamp(cap_em_lo, cap_em_hi);
        let cap_clamped = cap_em != proposal.ultracap_w;

        let hint = states.battery.last_current_a;
        let bat_em_hi = battery_chain_to_em_side(conv.dcdc_rated_w, conv, hint);
        let bat_em_lo = battery_chain_to_em_side(-conv.dcdc_rated_w, conv, hint);

        let mut bat_em = demand_w - cap_em;
        let mut rerouted = false;
        let mut overflow = false;
        if bat_em > bat_em_hi {
            if allow_reroute {
                let moved = (bat_em - bat_em_hi).min(cap_em_hi - cap_em).max(0.0);
                if moved > 0.0 {
                    cap_em += moved;
                    bat_em = demand_w - cap_em;
                    rerouted = true;
                }
            }
            overflow = bat_em > bat_em_hi;
        } else if bat_em < bat_em_lo {
            if allow_reroute {
                let moved = (bat_em_lo - bat_em).min(cap_em - cap_em_lo).max(0.0);
                if moved > 0.0 {
                    cap_em -= moved;
                    bat_em = demand_w - cap_em;
                    rerouted = true;
                }
            }
            overflow = bat_em < bat_em_lo;
        }

        EnforcedSplit {
            bat_em_w: bat_em,
            cap_em_w: cap_em,
            bat_terminal_w: battery_chain_to_terminal(bat_em, conv, hint),
            cap_terminal_w: ultracap_chain_to_terminal(cap_em, conv),
            cap_clamped,
            rerouted,
            overflow,
        }
    }

    /// One traversal of the cycle. `rule` maps (state index, demand, SOV) to
    /// a split and, for learned policies, the action taken; `sar_out`
    /// collects (state, action, reward) triples when actions are reported.
    #[allow(clippy::too_many_arguments)]
    fn run_pass(
        &self,
        st: &mut RunStates,
        rule: &mut dyn FnMut(usize, f64, f64) -> (SplitProposal, Option<usize>),
        spec: Option<&RewardSpec>,
        allow_reroute: bool,
        depletion: DepletionPolicy,
        tally: &mut Tally,
        mut records: Option<&mut Vec<StepRecord>>,
        mut sar_out: Option<&mut Vec<(usize, usize, f64)>>,
    ) -> Result<()> {
        let dt = self.cycle.dt_s;
        let speeds = &self.cycle.speed_mps;
        let q_nom = self.cfg.battery.q_nom_ah();
        let aging = &self.cfg.aging;

        for k in 0..speeds.len() - 1 {
            match depletion {
                DepletionPolicy::Stop(th) if st.battery.soc <= th => {
                    tally.stopped = true;
                    return Ok(());
                }
                DepletionPolicy::Recharge(th) if st.battery.soc <= th => {
                    st.battery.recharge_to(self.cfg.sim.initial_soc);
                    tally.recharges += 1;
                }
                _ => {}
            }

            let v_ref = speeds[k];
            let v_ref_next = speeds[k + 1];
            let accel_ref = (v_ref_next - v_ref) / dt;
            let grade = self.cycle.grade_rad[k];

            let v_entry = st.speed_mps;
            let pedals = driver_step(
                v_ref,
                accel_ref,
                v_entry,
                grade,
                dt,
                &mut st.driver,
                &self.cfg.driver,
                &self.cfg.vehicle,
                &self.cfg.em,
            );
            let veh = vehicle_step(v_entry, pedals, grade, dt, &self.cfg.vehicle, &self.cfg.em);
            let eta = em_efficiency(veh.em_omega_radps, veh.em_torque_nm, &self.cfg.em);
            let p_em = electrical_from_mech(veh.em_mech_power_w, eta);

            let sov_entry = st.ultracap.sov;
            let state_idx = self.state_grid.state_index(p_em, sov_entry);
            let (proposal, action) = rule(state_idx, p_em, sov_entry);
            let split = self.enforce_split(p_em, proposal, st, allow_reroute, dt);

            let cap_out = ultracap_step(&mut st.ultracap, &self.cfg.ultracap, split.cap_terminal_w, dt)?;
            let soc_entry = st.battery.soc;
            let bat_flags = battery_step(&mut st.battery, &self.cfg.battery, split.bat_terminal_w, dt)?;

            let step_c_rate = c_rate(st.battery.last_current_a, q_nom);
            let sigma = severity_factor(soc_entry * 100.0, step_c_rate, aging.temperature_c, aging)?;
            let delta_ah = st.battery.last_current_a.abs() * dt / 3600.0;
            st.battery.q_loss_pct =
                accumulate_loss_pct(st.battery.q_loss_pct, sigma, delta_ah, aging.z)?;

            // consumption is metered as stored-energy drain (midpoint
            // open-circuit voltage times current), so a strategy cannot
            // score device dissipation as saved energy
            let u_bat_mid =
                0.5 * (self.cfg.battery.u_oc_v(soc_entry) + self.cfg.battery.u_oc_v(st.battery.soc));
            let e_bat_j = u_bat_mid * st.battery.last_current_a * dt;
            let u_cap_mid =
                0.5 * (self.cfg.ultracap.u_oc_v(sov_entry) + self.cfg.ultracap.u_oc_v(st.ultracap.sov));
            let e_cap_j = u_cap_mid * st.ultracap.last_current_a * dt;
            let step_reward = spec.map_or(0.0, |s| reward(e_bat_j, e_cap_j, sigma, s));

            st.speed_mps = veh.speed_next_mps;

            let track_err = v_ref_next - veh.speed_next_mps;
            tally.steps += 1;
            tally.distance_m += 0.5 * (v_entry + veh.speed_next_mps) * dt;
            tally.battery_energy_j += e_bat_j;
            tally.ultracap_energy_j += e_cap_j;
            tally.max_step_energy_j = tally.max_step_energy_j.max(e_bat_j + e_cap_j);
            tally.max_step_severity = tally.max_step_severity.max(sigma);
            tally.severity_sum += sigma;
            tally.reward_total += step_reward;
            tally.track_sq_sum += track_err * track_err;
            tally.track_max = tally.track_max.max(track_err.abs());
            tally.events.torque_saturated += veh.torque_saturated as usize;
            tally.events.friction_braking += veh.friction_active as usize;
            tally.events.ultracap_clamped += (split.cap_clamped || cap_out.clamped) as usize;
            tally.events.dcdc_rerouted += split.rerouted as usize;
            tally.events.dcdc_overflow += split.overflow as usize;
            tally.events.battery_depleted += bat_flags.depleted as usize;
            tally.events.battery_saturated += bat_flags.saturated as usize;

            if let Some(rec) = records.as_deref_mut() {
                rec.push(StepRecord {
                    time_s: (tally.steps as f64) * dt,
                    v_target_mps: v_ref_next,
                    v_actual_mps: veh.speed_next_mps,
                    accel_pedal_pct: pedals.accel_pct,
                    brake_pedal_pct: pedals.brake_pct,
                    p_em_w: p_em,
                    p_bat_w: split.bat_em_w,
                    p_cap_w: split.cap_em_w,
                    p_bat_terminal_w: split.bat_terminal_w,
                    p_cap_terminal_w: cap_out.applied_power_w,
                    i_bat_a: st.battery.last_current_a,
                    i_cap_a: st.ultracap.last_current_a,
                    soc: st.battery.soc,
                    sov: st.ultracap.sov,
                    severity: sigma,
                    reward: step_reward,
                });
            }
            if let Some(sar) = sar_out.as_deref_mut() {
                if let Some(a) = action {
                    sar.push((state_idx, a, step_reward));
                }
            }
        }
        Ok(())
    }

    fn result_from_tally(&self, tally: &Tally, st: &RunStates, records: Vec<StepRecord>) -> SimResult {
        let n = tally.steps.max(1) as f64;
        SimResult {
            records,
            steps: tally.steps,
            distance_m: tally.distance_m,
            battery_energy_j: tally.battery_energy_j,
            ultracap_energy_j: tally.ultracap_energy_j,
            max_step_energy_j: tally.max_step_energy_j,
            max_step_severity: tally.max_step_severity,
            battery_ah: st.battery.ah_throughput,
            q_loss_pct: st.battery.q_loss_pct,
            severity_sum: tally.severity_sum,
            reward_total: tally.reward_total,
            tracking_rms_mps: (tally.track_sq_sum / n).sqrt(),
            tracking_max_mps: tally.track_max,
            final_soc: st.battery.soc,
            final_sov: st.ultracap.sov,
            events: tally.events,
        }
    }

    /// Run one full cycle under a strategy.
    pub fn run(&self, strategy: &Strategy, spec: Option<&RewardSpec>) -> Result<SimResult> {
        let mut st = self.fresh_states();
        let mut tally = Tally::default();
        let mut records = Vec::with_capacity(self.cycle.speed_mps.len());
        let mut rule =
            |s: usize, d: f64, sov: f64| self.propose(strategy, s, d, sov);
        self.run_pass(
            &mut st,
            &mut rule,
            spec,
            strategy.allows_reroute(),
            DepletionPolicy::RunThrough,
            &mut tally,
            Some(&mut records),
            None,
        )?;
        Ok(self.result_from_tally(&tally, &st, records))
    }

    /// Calibrate reward normalizers from a battery-only pass: each is the
    /// largest per-step value that pass produces.
    pub fn calibrate_reward(&self) -> Result<RewardSpec> {
        let baseline = self.run(&Strategy::BatteryOnly, None)?;
        RewardSpec::new(
            &self.cfg.ems.reward,
            baseline.max_step_energy_j,
            baseline.max_step_severity,
        )
    }

    /// Drive repeated cycles until the battery reaches the stop threshold.
    pub fn range_test(&self, strategy: &Strategy) -> Result<RangeResult> {
        let mut st = self.fresh_states();
        let mut tally = Tally::default();
        let mut rule = |s: usize, d: f64, sov: f64| self.propose(strategy, s, d, sov);
        let mut cycles_completed = 0usize;
        for _ in 0..self.cfg.sim.max_cycle_repeats {
            self.run_pass(
                &mut st,
                &mut rule,
                None,
                strategy.allows_reroute(),
                DepletionPolicy::Stop(self.cfg.sim.soc_stop),
                &mut tally,
                None,
                None,
            )?;
            if tally.stopped {
                break;
            }
            cycles_completed += 1;
        }
        if !tally.stopped {
            return Err(Error::InvalidArgument(format!(
                "battery never reached the stop threshold within {} cycle repeats",
                self.cfg.sim.max_cycle_repeats
            )));
        }
        Ok(RangeResult {
            strategy: strategy.label().to_string(),
            cycle: self.cycle.name.clone(),
            distance_m: tally.distance_m,
            distance_km: tally.distance_m / 1000.0,
            distance_mi: tally.distance_m / METERS_PER_MILE,
            cycles_completed,
            steps: tally.steps,
            battery_ah: st.battery.ah_throughput,
            q_loss_pct: st.battery.q_loss_pct,
            final_soc: st.battery.soc,
            events: tally.events,
        })
    }

    /// Drive a fixed number of cycle repetitions with instant recharges at
    /// the stop threshold, accumulating throughput and capacity loss.
    pub fn aging_test(&self, strategy: &Strategy, repetitions: usize) -> Result<AgingResult> {
        if repetitions == 0 {
            return Err(Error::InvalidArgument("aging test needs at least one repetition".into()));
        }
        let mut st = self.fresh_states();
        let mut tally = Tally::default();
        let mut rule = |s: usize, d: f64, sov: f64| self.propose(strategy, s, d, sov);
        for _ in 0..repetitions {
            self.run_pass(
                &mut st,
                &mut rule,
                None,
                strategy.allows_reroute(),
                DepletionPolicy::Recharge(self.cfg.sim.soc_stop),
                &mut tally,
                None,
                None,
            )?;
        }
        Ok(AgingResult {
            strategy: strategy.label().to_string(),
            cycle: self.cycle.name.clone(),
            repetitions,
            recharges: tally.recharges,
            distance_m: tally.distance_m,
            battery_ah: st.battery.ah_throughput,
            q_loss_pct: st.battery.q_loss_pct,
            severity_sum: tally.severity_sum,
            events: tally.events,
        })
    }
}

// ---------------------------------------------------------------------------
// experiment results

/// Outcome of a run-until-empty range measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeResult {
    pub strategy: String,
    pub cycle: String,
    pub distance_m: f64,
    pub distance_km: f64,
    pub distance_mi: f64,
    pub cycles_completed: usize,
    pub steps: usize,
    pub battery_ah: f64,
    pub q_loss_pct: f64,
    pub final_soc: f64,
    pub events: EventCounts,
}

/// Outcome of a fixed-repetition fleet-aging measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgingResult {
    pub strategy: String,
    pub cycle: String,
    pub repetitions: usize,
    pub recharges: usize,
    pub distance_m: f64,
    pub battery_ah: f64,
    pub q_loss_pct: f64,
    pub severity_sum: f64,
    pub events: EventCounts,
}

/// One strategy's row in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub strategy: String,
    pub range_km: f64,
    pub range_mi: f64,
    /// Percent difference in range against the first (reference) row.
    pub range_delta_pct: f64,
    pub battery_ah: f64,
    pub battery_ah_delta_pct: f64,
    pub q_loss_pct: f64,
    pub q_loss_delta_pct: f64,
    pub recharges: usize,
}

/// Range and aging outcomes for a set of strategies on one cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareResult {
    pub cycle: String,
    pub aging_repetitions: usize,
    pub rows: Vec<CompareRow>,
}

fn pct_delta(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        0.0
    } else {
        (value - reference) / reference * 100.0
    }
}

/// Run range and aging for every entry; the first entry is the reference
/// for the percent columns.
pub fn compare(
    cfg: &LabConfig,
    cycle: &DrivingCycle,
    entries: &[(String, Strategy)],
    aging_repetitions: usize,
) -> Result<CompareResult> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("comparison needs at least one strategy".into()));
    }
    let sim = Simulator::new(cfg, cycle)?;
    let mut measured = Vec::with_capacity(entries.len());
    for (label, strategy) in entries {
        let range = sim.range_test(strategy)?;
        let aging = sim.aging_test(strategy, aging_repetitions)?;
        measured.push((label.clone(), range, aging));
    }
    let (ref_range, ref_ah, ref_loss) = (
        measured[0].1.distance_km,
        measured[0].2.battery_ah,
        measured[0].2.q_loss_pct,
    );
    let rows = measured
        .into_iter()
        .map(|(label, range, aging)| CompareRow {
            strategy: label,
            range_km: range.distance_km,
            range_mi: range.distance_mi,
            range_delta_pct: pct_delta(range.distance_km, ref_range),
            battery_ah: aging.battery_ah,
            battery_ah_delta_pct: pct_delta(aging.battery_ah, ref_ah),
            q_loss_pct: aging.q_loss_pct,
            q_loss_delta_pct: pct_delta(aging.q_loss_pct, ref_loss),
            recharges: aging.recharges,
        })
        .collect();
    Ok(CompareResult {
        cycle: cycle.name.clone(),
        aging_repetitions,
        rows,
    })
}

/// Comparison as CSV.
pub fn compare_to_csv(result: &CompareResult) -> String {
    let mut out = String::from(
        "strategy,range_km,range_mi,range_delta_pct,battery_ah,battery_ah_delta_pct,q_loss_pct,q_loss_delta_pct,recharges\n",
    );
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.strategy,
            r.range_km,
            r.range_mi,
            r.range_delta_pct,
            r.battery_ah,
            r.battery_ah_delta_pct,
            r.q_loss_pct,
            r.q_loss_delta_pct,
            r.recharges
        );
    }
    out
}

/// Comparison as an aligned text table.
pub fn compare_to_text(result: &CompareResult) -> String {
    let mut out = format!(
        "cycle: {}   aging repetitions: {}\n",
        result.cycle, result.aging_repetitions
    );
    let _ = writeln!(
        out,
        "{:<14} {:>10} {:>10} {:>8} {:>12} {:>8} {:>10} {:>8} {:>9}",
        "strategy", "range_km", "range_mi", "rng%", "battery_ah", "ah%", "loss_pct", "loss%", "recharges"
    );
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{:<14} {:>10.2} {:>10.2} {:>8.2} {:>12.2} {:>8.2} {:>10.4} {:>8.2} {:>9}",
            r.strategy,
            r.range_km,
            r.range_mi,
            r.range_delta_pct,
            r.battery_ah,
            r.battery_ah_delta_pct,
            r.q_loss_pct,
            r.q_loss_delta_pct,
            r.recharges
        );
    }
    out
}

// ---------------------------------------------------------------------------
// training environment

/// Episode environment over one cycle: every rollout starts from the
/// configured initial condition, demands are discretized on the state grid,
/// and actions pick threshold pairs from the action grid. The terminal
/// transition bootstraps from the zero-demand state at the final SOV.
pub struct CycleEnv<'a> {
    sim: &'a Simulator<'a>,
    spec: RewardSpec,
}

impl<'a> CycleEnv<'a> {
    pub fn new(sim: &'a Simulator<'a>, spec: RewardSpec) -> Self {
        Self { sim, spec }
    }

    pub fn n_states(&self) -> usize {
        self.sim.state_grid.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.sim.action_grid.n_actions()
    }
}

impl EpisodeEnv for CycleEnv<'_> {
    fn rollout(&mut self, policy: &mut dyn FnMut(usize) -> usize) -> Result<EpisodeTrace> {
        let sim = self.sim;
        let mut st = sim.fresh_states();
        let mut tally = Tally::default();
        let mut sar = Vec::with_capacity(sim.cycle.speed_mps.len());
        let mut rule = |s: usize, d: f64, _sov: f64| {
            let action = policy(s);
            let (dis, chg) = sim.action_grid.thresholds(action);
            (split_threshold(d, dis, chg), Some(action))
        };
        sim.run_pass(
            &mut st,
            &mut rule,
            Some(&self.spec),
            true,
            DepletionPolicy::RunThrough,
            &mut tally,
            None,
            Some(&mut sar),
        )?;

        let terminal = sim.state_grid.state_index(0.0, st.ultracap.sov);
        let transitions = sar
            .iter()
            .enumerate()
            .map(|(i, &(s, a, r))| Transition {
                state: s,
                action: a,
                reward: r,
                next_state: sar.get(i + 1).map_or(terminal, |&(s2, _, _)| s2),
            })
            .collect();
        Ok(EpisodeTrace {
            transitions,
            total_reward: tally.reward_total,
        })
    }
}

/// Calibrate, build the environment, and train a table on this cycle.
pub fn train_on_cycle<R: Rng + ?Sized>(
    cfg: &LabConfig,
    cycle: &DrivingCycle,
    rng: &mut R,
) -> Result<crate::ems::TrainOutcome> {
    let sim = Simulator::new(cfg, cycle)?;
    let spec = sim.calibrate_reward()?;
    let mut env = CycleEnv::new(&sim, spec);
    let (n_states, n_actions) = (env.n_states(), env.n_actions());
    crate::ems::train(&mut env, n_states, n_actions, &cfg.ems.qlearn, rng)
}

/// Learning curve CSV re-export for convenience alongside the trainer.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    crate::ems::curve_to_csv(curve)
}

// ---------------------------------------------------------------------------
// strategy tuning against the simulator

/// Tuning cost: weighted normalized storage energy plus battery severity,
/// summed over the cycle. Lower is better; infeasible parameter vectors
/// score infinity.
pub fn strategy_cost(result: &SimResult, spec: &RewardSpec) -> f64 {
    spec.energy_weight * (result.battery_energy_j + result.ultracap_energy_j) / spec.energy_norm_j
        + (1.0 - spec.energy_weight) * result.severity_sum / spec.severity_norm
}

/// Tune one of the proportional rules on this cycle with the swarm,
/// returning the tuned strategy and the search outcome.
pub fn tune_on_cycle<R: Rng + ?Sized>(
    cfg: &LabConfig,
    cycle: &DrivingCycle,
    kind: crate::optimize::HeuristicKind,
    rng: &mut R,
) -> Result<(Strategy, crate::optimize::PsoOutcome)> {
    use crate::optimize::{decode_bilinear, decode_fixed_ratio, tune_heuristic, HeuristicKind};

    let sim = Simulator::new(cfg, cycle)?;
    let spec = sim.calibrate_reward()?;
    let p_ref = cfg.heuristic1.p_ref_w;
    let cost = |x: &[f64]| -> f64 {
        let strategy = match kind {
            HeuristicKind::Bilinear => Strategy::Bilinear(decode_bilinear(x, p_ref)),
            HeuristicKind::FixedRatio => Strategy::FixedRatio(decode_fixed_ratio(x)),
        };
        match sim.run(&strategy, None) {
            Ok(result) => strategy_cost(&result, &spec),
            Err(_) => f64::INFINITY,
        }
    };
    let outcome = tune_heuristic(kind, cost, &cfg.pso, rng);
    let tuned = match kind {
        HeuristicKind::Bilinear => Strategy::Bilinear(decode_bilinear(&outcome.best_x, p_ref)),
        HeuristicKind::FixedRatio => Strategy::FixedRatio(decode_fixed_ratio(&outcome.best_x)),
    };
    Ok((tuned, outcome))
}
