//! Vehicle, powertrain, storage, and experiment configuration.
//!
//! Every struct deserializes with per-field defaults so a configuration file
//! only needs to name the values it overrides. `LabConfig::validate` is the
//! single entry point that checks cross-field consistency before a run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table1D;

fn is_finite_positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Chassis, road-load, and driveline parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Total vehicle mass in kg.
    pub mass_kg: f64,
    pub wheel_radius_m: f64,
    /// Single-speed reduction between the electric machine and the wheels.
    pub gear_ratio: f64,
    /// Lumped driveline rotational inertia in kg·m².
    pub inertia_kgm2: f64,
    /// Road-load polynomial in N: `c0 + c1·v + c2·v²` with v in m/s.
    pub c0_n: f64,
    pub c1_n_s_per_m: f64,
    pub c2_n_s2_per_m2: f64,
    /// Center-of-gravity height in m, used by the brake-share weighting.
    pub cg_height_m: f64,
    pub wheelbase_m: f64,
    /// Fraction of braking force assigned to the front (friction-only) axle.
    pub front_brake_fraction: f64,
    pub gravity_mps2: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass_kg: 1722.0,
            wheel_radius_m: 0.3,
            gear_ratio: 9.59,
            inertia_kgm2: 150.0,
            c0_n: 105.95,
            c1_n_s_per_m: 0.01,
            c2_n_s2_per_m2: 0.434,
            cg_height_m: 0.5,
            wheelbase_m: 2.55,
            front_brake_fraction: 0.6,
            gravity_mps2: 9.81,
        }
    }
}

impl VehicleParams {
    /// Rolling plus aerodynamic resistance at speed `v`, grade excluded.
    pub fn road_load_n(&self, v_mps: f64) -> f64 {
        self.c0_n + self.c1_n_s_per_m * v_mps + self.c2_n_s2_per_m2 * v_mps * v_mps
    }

    /// Translational-equivalent mass including driveline inertia.
    pub fn effective_mass_kg(&self) -> f64 {
        self.mass_kg + self.inertia_kgm2 / (self.wheel_radius_m * self.wheel_radius_m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mass_kg", self.mass_kg),
            ("wheel_radius_m", self.wheel_radius_m),
            ("gear_ratio", self.gear_ratio),
            ("wheelbase_m", self.wheelbase_m),
            ("gravity_mps2", self.gravity_mps2),
        ] {
            if !is_finite_positive(v) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.inertia_kgm2 < 0.0 || self.cg_height_m < 0.0 {
            return Err(Error::InvalidConfig(
                "inertia_kgm2 and cg_height_m must be nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.front_brake_fraction) {
            return Err(Error::InvalidConfig(
                "front_brake_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Electric machine efficiency as a smooth loss surface.
///
/// `eta = eta_max - copper_coeff·(T/T_max)² - iron_coeff·(ω/ω_max)²`, clamped
/// below at `eta_floor`. A measured grid can be supplied instead through
/// [`EmEfficiency::Grid`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum EmEfficiency {
    Analytic {
        eta_max: f64,
        copper_coeff: f64,
        iron_coeff: f64,
        eta_floor: f64,
    },
    /// Rows indexed by speed in rad/s, columns by torque magnitude in N·m.
    Grid { table: crate::table::Table2D },
}

impl Default for EmEfficiency {
    fn default() -> Self {
        EmEfficiency::Analytic {
            eta_max: 0.95,
            copper_coeff: 0.08,
            iron_coeff: 0.05,
            eta_floor: 0.60,
        }
    }
}

/// Electric machine ratings and efficiency model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmParams {
    pub torque_max_nm: f64,
    pub torque_min_nm: f64,
    pub power_max_w: f64,
    /// Speed where the analytic iron-loss term reaches full weight.
    pub omega_max_radps: f64,
    pub efficiency: EmEfficiency,
}

impl Default for EmParams {
    fn default() -> Self {
        EmParams {
            torque_max_nm: 400.0,
            torque_min_nm: -400.0,
            power_max_w: 143e3,
            omega_max_radps: 1600.0,
            efficiency: EmEfficiency::default(),
        }
    }
}

impl EmParams {
    pub fn validate(&self) -> Result<()> {
        if !is_finite_positive(self.torque_max_nm)
            || !is_finite_positive(self.power_max_w)
            || !is_finite_positive(self.omega_max_radps)
        {
            return Err(Error::InvalidConfig(
                "EM torque_max_nm, power_max_w, omega_max_radps must be positive".into(),
            ));
        }
        if self.torque_min_nm >= 0.0 {
            return Err(Error::InvalidConfig("torque_min_nm must be negative".into()));
        }
        if let EmEfficiency::Analytic {
            eta_max, eta_floor, ..
        } = self.efficiency
        {
            if !(0.0 < eta_floor && eta_floor <= eta_max && eta_max <= 1.0) {
                return Err(Error::InvalidConfig(
                    "EM efficiency must satisfy 0 < eta_floor <= eta_max <= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// DC/DC converter efficiency model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum DcdcEfficiency {
    Constant { efficiency: f64 },
    /// Rows indexed by |power| in W, columns by |current| in A.
    Grid { table: crate::table::Table2D },
}

impl Default for DcdcEfficiency {
    fn default() -> Self {
        DcdcEfficiency::Constant { efficiency: 0.95 }
    }
}

/// Power-electronics chain between the electric machine and the storage bus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConverterParams {
    pub acdc_efficiency: f64,
    pub dcdc: DcdcEfficiency,
    /// Throughput rating of the DC/DC stage on the battery path.
    pub dcdc_rated_w: f64,
}

impl Default for ConverterParams {
    fn default() -> Self {
        ConverterParams {
            acdc_efficiency: 0.92,
            dcdc: DcdcEfficiency::default(),
            dcdc_rated_w: 30e3,
        }
    }
}

impl ConverterParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.acdc_efficiency && self.acdc_efficiency <= 1.0) {
            return Err(Error::InvalidConfig(
                "acdc_efficiency must lie in (0, 1]".into(),
            ));
        }
        if let DcdcEfficiency::Constant { efficiency } = self.dcdc {
            if !(0.0 < efficiency && efficiency <= 1.0) {
                return Err(Error::InvalidConfig(
                    "dcdc efficiency must lie in (0, 1]".into(),
                ));
            }
        }
        if !is_finite_positive(self.dcdc_rated_w) {
            return Err(Error::InvalidConfig("dcdc_rated_w must be positive".into()));
        }
        Ok(())
    }
}

/// How the driver's feedforward pedal share is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardMode {
    /// Invert the longitudinal dynamics at the target trajectory: full
    /// effective mass and road load, referred to the machine side through
    /// the gear ratio. Tracks the cycle closely.
    InverseDynamics,
    /// Wheel-level inertia-plus-road-load torque normalized directly by the
    /// machine torque rating, without gear referral. Kept for comparison;
    /// saturates the pedal during ordinary accelerations.
    WheelLevel,
}

/// Speed-tracking driver: feedforward pedal share plus PI feedback.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    pub kp: f64,
    pub ki: f64,
    pub feedforward: FeedforwardMode,
}

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            kp: 0.25,
            ki: 0.03,
            feedforward: FeedforwardMode::InverseDynamics,
        }
    }
}

impl DriverParams {
    pub fn validate(&self) -> Result<()> {
        if !self.kp.is_finite() || !self.ki.is_finite() || self.kp < 0.0 || self.ki < 0.0 {
            return Err(Error::InvalidConfig(
                "driver gains must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Battery pack built from identical cells in a series/parallel arrangement.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryPack {
    pub series: u32,
    pub parallel: u32,
    pub cell_capacity_ah: f64,
    /// Open-circuit voltage per cell against SOC fraction.
    pub ocv_per_cell: Table1D,
    /// Internal resistance per cell in ohm against SOC fraction.
    pub resistance_per_cell: Table1D,
    /// SOC below which the pack counts as depleted (fraction).
    pub soc_floor: f64,
    pub soc_ceiling: f64,
}

impl Default for BatteryPack {
    fn default() -> Self {
        BatteryPack {
            series: 98,
            parallel: 60,
            cell_capacity_ah: 2.4,
            ocv_per_cell: default_ocv_table(),
            resistance_per_cell: Table1D::new(vec![0.0, 1.0], vec![1.0e-3, 1.0e-3])
                .expect("static table"),
            soc_floor: 0.001,
            soc_ceiling: 1.0,
        }
    }
}

/// Monotone lithium-iron-phosphate-like cell voltage curve with the
/// characteristic flat mid plateau.
fn default_ocv_table() -> Table1D {
    Table1D::new(
        vec![0.0, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80, 0.90, 1.0],
        vec![3.00, 3.15, 3.20, 3.25, 3.28, 3.30, 3.33, 3.36, 3.40],
    )
    .expect("static table")
}

impl BatteryPack {
    /// Pack capacity in Ah (parallel strings share current).
    pub fn q_nom_ah(&self) -> f64 {
        f64::from(self.parallel) * self.cell_capacity_ah
    }

    /// Pack open-circuit voltage at the given SOC fraction.
    pub fn u_oc_v(&self, soc: f64) -> f64 {
        f64::from(self.series) * self.ocv_per_cell.interp(soc)
    }

    /// Pack internal resistance at the given SOC fraction.
    pub fn r_ohm(&self, soc: f64) -> f64 {
        f64::from(self.series) * self.resistance_per_cell.interp(soc) / f64::from(self.parallel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.series == 0 || self.parallel == 0 {
            return Err(Error::InvalidConfig(
                "battery series and parallel counts must be positive".into(),
            ));
        }
        if !is_finite_positive(self.cell_capacity_ah) {
            return Err(Error::InvalidConfig(
                "cell_capacity_ah must be positive".into(),
            ));
        }
        if !self.ocv_per_cell.values_at_least(f64::MIN_POSITIVE) {
            return Err(Error::InvalidConfig(
                "cell OCV table must be strictly positive".into(),
            ));
        }
        if !self.ocv_per_cell.is_nondecreasing() {
            return Err(Error::InvalidConfig(
                "cell OCV table must be nondecreasing in SOC".into(),
            ));
        }
        if !self.resistance_per_cell.values_at_least(f64::MIN_POSITIVE) {
            return Err(Error::InvalidConfig(
                "cell resistance table must be strictly positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.soc_floor) || !(self.soc_floor < self.soc_ceiling)
            || self.soc_ceiling > 1.0
        {
            return Err(Error::InvalidConfig(
                "battery SOC window must satisfy 0 <= floor < ceiling <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Ultracapacitor bank described by unit capacitance and arrangement.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct UltracapPack {
    pub unit_capacitance_f: f64,
    pub parallel: u32,
    pub series: u32,
    /// Rated voltage of one series element.
    pub u_max_per_unit_v: f64,
    /// Effective terminal resistance of the whole bank in ohm.
    pub resistance_ohm: f64,
    /// Bank current rating in A, either direction. Keeps commanded currents
    /// far from the lossy peak-power point of the quadratic.
    pub max_current_a: f64,
    /// State-of-voltage window inside which management strategies may engage
    /// the bank. Hard physical limits remain [0, 1].
    pub sov_engage_min: f64,
    pub sov_engage_max: f64,
}

impl Default for UltracapPack {
    fn default() -> Self {
        UltracapPack {
            unit_capacitance_f: 1200.0,
            parallel: 50,
            series: 1,
            u_max_per_unit_v: 2.7,
            resistance_ohm: 0.5e-3,
            max_current_a: 7500.0,
            sov_engage_min: 0.5,
            sov_engage_max: 1.0,
        }
    }
}

impl UltracapPack {
    /// Bank capacitance: parallel units add, series units divide.
    pub fn capacitance_f(&self) -> f64 {
        self.unit_capacitance_f * f64::from(self.parallel) / f64::from(self.series)
    }

    /// Bank rated voltage.
    pub fn u_max_v(&self) -> f64 {
        self.u_max_per_unit_v * f64::from(self.series)
    }

    /// Open-circuit voltage at a state-of-voltage fraction.
    pub fn u_oc_v(&self, sov: f64) -> f64 {
        sov * self.u_max_v()
    }

    pub fn validate(&self) -> Result<()> {
        if self.series == 0 || self.parallel == 0 {
            return Err(Error::InvalidConfig(
                "ultracap series and parallel counts must be positive".into(),
            ));
        }
        if !is_finite_positive(self.unit_capacitance_f)
            || !is_finite_positive(self.u_max_per_unit_v)
            || !is_finite_positive(self.resistance_ohm)
            || !is_finite_positive(self.max_current_a)
        {
            return Err(Error::InvalidConfig(
                "ultracap capacitance, rated voltage, resistance, and current rating must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.sov_engage_min)
            || !(0.0..=1.0).contains(&self.sov_engage_max)
            || self.sov_engage_min >= self.sov_engage_max
        {
            return Err(Error::InvalidConfig(
                "ultracap engagement window must satisfy 0 <= min < max <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Severity-factor capacity-fade model coefficients.
///
/// `sigma = (alpha·SOC + beta)·exp((-Ea + delta·Ic) / (Rg·T_K))` with SOC in
/// percent, `Ic` the C-rate in 1/h, and `T_K` the absolute temperature.
/// Capacity loss in percent follows `Q_loss = sigma·Ah^z`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgingParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub z: f64,
    pub activation_energy_j_per_mol: f64,
    pub gas_constant_j_per_mol_k: f64,
    /// Cell temperature assumed constant over a run, in Celsius.
    pub temperature_c: f64,
}

impl Default for AgingParams {
    fn default() -> Self {
        AgingParams {
            alpha: 2.0161,
            beta: 4398.5,
            delta: 112.0,
            z: 0.5715,
            activation_energy_j_per_mol: 31500.0,
            gas_constant_j_per_mol_k: 8.3145,
            temperature_c: 25.0,
        }
    }
}

impl AgingParams {
    pub fn validate(&self) -> Result<()> {
        if !is_finite_positive(self.z) || self.z > 2.0 {
            return Err(Error::InvalidConfig(
                "aging exponent z must lie in (0, 2]".into(),
            ));
        }
        if !is_finite_positive(self.gas_constant_j_per_mol_k) {
            return Err(Error::InvalidConfig("gas constant must be positive".into()));
        }
        if self.temperature_c <= -273.15 {
            return Err(Error::InvalidConfig(
                "temperature must exceed absolute zero".into(),
            ));
        }
        Ok(())
    }
}

/// State discretization for the learned energy-management policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StateGridConfig {
    pub power_min_w: f64,
    pub power_max_w: f64,
    pub power_bins: usize,
    pub sov_bins: usize,
}

impl Default for StateGridConfig {
    fn default() -> Self {
        StateGridConfig {
            power_min_w: -30e3,
            power_max_w: 50e3,
            power_bins: 5,
            sov_bins: 5,
        }
    }
}

/// Action discretization: engagement thresholds for discharge and charge.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionGridConfig {
    pub discharge_min_w: f64,
    pub discharge_max_w: f64,
    pub discharge_steps: usize,
    pub charge_min_w: f64,
    pub charge_max_w: f64,
    pub charge_steps: usize,
}

impl Default for ActionGridConfig {
    fn default() -> Self {
        ActionGridConfig {
            discharge_min_w: 0.0,
            discharge_max_w: 40e3,
            discharge_steps: 100,
            charge_min_w: -20e3,
            charge_max_w: 0.0,
            charge_steps: 100,
        }
    }
}

/// Q-learning hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QLearnConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon: f64,
    pub episodes: usize,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        QLearnConfig {
            learning_rate: 0.1,
            discount: 0.95,
            epsilon: 0.1,
            episodes: 3000,
        }
    }
}

/// Reward shaping: energy-versus-aging weight and additive bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub energy_weight: f64,
    pub bias: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            energy_weight: 0.5,
            bias: 1.0,
        }
    }
}

/// Everything the learned energy-management strategy needs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmsConfig {
    pub state_grid: StateGridConfig,
    pub action_grid: ActionGridConfig,
    pub qlearn: QLearnConfig,
    pub reward: RewardConfig,
}

impl EmsConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.state_grid;
        if g.power_bins == 0 || g.sov_bins == 0 || g.power_min_w >= g.power_max_w {
            return Err(Error::InvalidConfig("state grid is degenerate".into()));
        }
        let a = &self.action_grid;
        if a.discharge_steps == 0 || a.charge_steps == 0 {
            return Err(Error::InvalidConfig("action grid is degenerate".into()));
        }
        if a.discharge_min_w < 0.0 || a.discharge_min_w > a.discharge_max_w {
            return Err(Error::InvalidConfig(
                "discharge threshold range must be nonnegative and ordered".into(),
            ));
        }
        if a.charge_max_w > 0.0 || a.charge_min_w > a.charge_max_w {
            return Err(Error::InvalidConfig(
                "charge threshold range must be nonpositive and ordered".into(),
            ));
        }
        let q = &self.qlearn;
        if !(0.0 < q.learning_rate && q.learning_rate <= 1.0)
            || !(0.0..1.0).contains(&q.discount)
            || !(0.0..=1.0).contains(&q.epsilon)
        {
            return Err(Error::InvalidConfig(
                "learning_rate in (0,1], discount in [0,1), epsilon in [0,1] required".into(),
            ));
        }
        let r = &self.reward;
        if !(0.0..=1.0).contains(&r.energy_weight) || !r.bias.is_finite() {
            return Err(Error::InvalidConfig(
                "reward energy_weight must lie in [0, 1] and bias be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Proportional split law on two bilinear branches.
///
/// For demand `P` and bank state-of-voltage `s`, the engaged branch computes
/// `P_cap = (a1·s + a2·p + a3·s·p + a4) · P` where `p = P / p_ref_w` is the
/// demand normalized by a reference power.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams1 {
    /// Discharge-branch coefficients (demand >= 0).
    pub discharge: [f64; 4],
    /// Charge-branch coefficients (demand < 0).
    pub charge: [f64; 4],
    pub p_ref_w: f64,
}

impl Default for HeuristicParams1 {
    fn default() -> Self {
        HeuristicParams1 {
            discharge: [-3.89, -4.99, 2.12, -0.63],
            charge: [0.29, -3.87, -4.01, -4.62],
            p_ref_w: 40e3,
        }
    }
}

/// Fixed-ratio split past engagement thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams2 {
    pub engage_discharge_w: f64,
    pub engage_charge_w: f64,
    pub discharge_ratio: f64,
    pub charge_ratio: f64,
}

impl Default for HeuristicParams2 {
    fn default() -> Self {
        HeuristicParams2 {
            engage_discharge_w: 34301.0,
            engage_charge_w: -10210.17,
            discharge_ratio: 0.83,
            charge_ratio: 0.70,
        }
    }
}

/// Particle-swarm optimizer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub particles: usize,
    pub generations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            particles: 20,
            generations: 20,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.generations == 0 {
            return Err(Error::InvalidConfig(
                "PSO needs at least one particle and one generation".into(),
            ));
        }
        if self.inertia < 0.0 || self.cognitive < 0.0 || self.social < 0.0 {
            return Err(Error::InvalidConfig(
                "PSO coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Genetic-algorithm settings for least-squares fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Initial mutation spread as a fraction of each bound span; annealed
    /// geometrically to `mutation_sigma_final` over the run.
    pub mutation_sigma_initial: f64,
    pub mutation_sigma_final: f64,
    pub elitism: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 200,
            generations: 500,
            tournament: 3,
            crossover_prob: 0.9,
            mutation_prob: 0.35,
            mutation_sigma_initial: 0.10,
            mutation_sigma_final: 1e-6,
            elitism: 1,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.generations == 0 || self.tournament == 0 {
            return Err(Error::InvalidConfig(
                "GA needs population >= 2, generations >= 1, tournament >= 1".into(),
            ));
        }
        if self.elitism >= self.population {
            return Err(Error::InvalidConfig(
                "GA elitism must be smaller than the population".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) || !(0.0..=1.0).contains(&self.mutation_prob)
        {
            return Err(Error::InvalidConfig(
                "GA probabilities must lie in [0, 1]".into(),
            ));
        }
        if !is_finite_positive(self.mutation_sigma_initial)
            || !is_finite_positive(self.mutation_sigma_final)
            || self.mutation_sigma_final > self.mutation_sigma_initial
        {
            return Err(Error::InvalidConfig(
                "GA mutation spread must anneal from a positive initial to a smaller positive final value".into(),
            ));
        }
        Ok(())
    }
}

/// Experiment-level settings shared by all runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Sample period cycle CSVs are resampled to when loaded from a file;
    /// bundled fixtures keep their native one-second period. The simulator
    /// steps at the sample period of the cycle it is given.
    pub dt_s: f64,
    pub initial_soc: f64,
    pub initial_sov: f64,
    /// Battery SOC at which range runs stop and fleet-aging runs recharge.
    pub soc_stop: f64,
    /// Safety limit on cycle repetitions for run-until-empty experiments.
    pub max_cycle_repeats: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_s: 1.0,
            initial_soc: 1.0,
            initial_sov: 0.95,
            soc_stop: 0.001,
            max_cycle_repeats: 10_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !is_finite_positive(self.dt_s) {
            return Err(Error::InvalidConfig("dt_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_soc) || !(0.0..=1.0).contains(&self.initial_sov) {
            return Err(Error::InvalidConfig(
                "initial SOC and SOV must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.soc_stop) {
            return Err(Error::InvalidConfig("soc_stop must lie in [0, 1)".into()));
        }
        if self.max_cycle_repeats == 0 {
            return Err(Error::InvalidConfig(
                "max_cycle_repeats must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Complete laboratory configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub vehicle: VehicleParams,
    pub em: EmParams,
    pub converter: ConverterParams,
    pub driver: DriverParams,
    pub battery: BatteryPack,
    pub ultracap: UltracapPack,
    pub aging: AgingParams,
    pub ems: EmsConfig,
    pub heuristic1: HeuristicParams1,
    pub heuristic2: HeuristicParams2,
    pub pso: PsoConfig,
    pub ga: GaConfig,
    pub sim: SimConfig,
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.em.validate()?;
        self.converter.validate()?;
        self.driver.validate()?;
        self.battery.validate()?;
        self.ultracap.validate()?;
        self.aging.validate()?;
        self.ems.validate()?;
        self.pso.validate()?;
        self.ga.validate()?;
        self.sim.validate()?;
        Ok(())
    }

    /// Parse a TOML configuration; missing keys fall back to defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: LabConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("configuration parse failed: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Desk-scale experiment profile: a 10x10 action grid keeps training
    /// coverage dense at short episode budgets, and the bank resistance is
    /// the parallel combination of realistic per-unit resistances instead
    /// of the conservative default, so high-power assists are not dominated
    /// by internal dissipation.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.ems.action_grid.discharge_steps = 10;
        cfg.ems.action_grid.charge_steps = 10;
        cfg.ultracap.resistance_ohm = 1.2e-5;
        cfg
    }
}
