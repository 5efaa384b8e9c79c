//! Building models, horizon stacking and synthetic fleets.
//!
//! A building is a discrete-time linear thermal system
//! `x(k+1) = A x(k) + B (u(k) + du(k)) + E v(k)` with hourly steps, box
//! constraints on states (comfort) and inputs (actuators), and a conversion
//! vector `eta` mapping inputs to electric power in kW.
//!
//! All per-hour vectors are stored time-major: entry `k * dim + i` is
//! component `i` at hour `k`. State bounds at index `k` apply to the state
//! reached at the end of hour `k`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::serde_util::{bounds, row_major};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingModel {
    pub id: usize,
    pub n: usize,
    pub m: usize,
    pub q: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "A", with = "row_major")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "row_major")]
    pub b: DMatrix<f64>,
    #[serde(rename = "E", with = "row_major")]
    pub e: DMatrix<f64>,
    pub x1: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(with = "bounds::lower")]
    pub x_lo: Vec<f64>,
    #[serde(with = "bounds")]
    pub x_hi: Vec<f64>,
    #[serde(with = "bounds::lower")]
    pub u_lo: Vec<f64>,
    #[serde(with = "bounds")]
    pub u_hi: Vec<f64>,
    pub eta: Vec<f64>,
    pub c: Vec<f64>,
}

/// One broken invariant found by [`validate_model`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

impl BuildingModel {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Disturbance at hour `k`.
    pub fn v_at(&self, k: usize) -> &[f64] {
        &self.v[k * self.q..(k + 1) * self.q]
    }

    /// Electricity cost per input unit at hour `k`.
    pub fn c_at(&self, k: usize) -> &[f64] {
        &self.c[k * self.m..(k + 1) * self.m]
    }

    /// Fails with a configuration error naming the first offending field.
    pub fn check_dimensions(&self) -> Result<()> {
        let (n, m, q, nh) = (self.n, self.m, self.q, self.horizon);
        let shape = |field: &str, mat: &DMatrix<f64>, r: usize, c: usize| {
            if mat.nrows() != r || mat.ncols() != c {
                Err(Error::config(
                    field,
                    format!("expected {r}x{c}, found {}x{}", mat.nrows(), mat.ncols()),
                ))
            } else {
                Ok(())
            }
        };
        let len = |field: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::config(
                    field,
                    format!("expected length {want}, found {got}"),
                ))
            } else {
                Ok(())
            }
        };
        if nh == 0 {
            return Err(Error::config("N", "horizon must be at least 1"));
        }
        if n == 0 || m == 0 {
            return Err(Error::config(
                "n/m",
                "state and input dimensions must be positive",
            ));
        }
        shape("A", &self.a, n, n)?;
        shape("B", &self.b, n, m)?;
        shape("E", &self.e, n, q)?;
        len("x1", self.x1.len(), n)?;
        len("v", self.v.len(), q * nh)?;
        len("x_lo", self.x_lo.len(), n * nh)?;
        len("x_hi", self.x_hi.len(), n * nh)?;
        len("u_lo", self.u_lo.len(), m * nh)?;
        len("u_hi", self.u_hi.len(), m * nh)?;
        len("eta", self.eta.len(), m)?;
        len("c", self.c.len(), m * nh)?;
        Ok(())
    }
}

/// Empty iff every model invariant holds.
pub fn validate_model(model: &BuildingModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &str, rule: String| {
        out.push(Violation {
            field: field.to_string(),
            rule,
        })
    };
    if let Err(Error::Config { field, reason }) = model.check_dimensions() {
        push(&field, reason);
        return out;
    }
    let (n, m) = (model.n, model.m);

    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    for (name, mat) in [("A", &model.a), ("B", &model.b), ("E", &model.e)] {
        if !finite(mat.as_slice()) {
            push(name, "contains non-finite entries".into());
        }
    }
    for (name, v) in [
        ("x1", &model.x1),
        ("v", &model.v),
        ("eta", &model.eta),
        ("c", &model.c),
    ] {
        if !finite(v) {
            push(name, "contains non-finite entries".into());
        }
    }
    for (name, v) in [
        ("x_lo", &model.x_lo),
        ("x_hi", &model.x_hi),
        ("u_lo", &model.u_lo),
        ("u_hi", &model.u_hi),
    ] {
        if v.iter().any(|x| x.is_nan()) {
            push(name, "contains NaN".into());
        }
    }

    if finite(model.a.as_slice()) {
        let radius = spectral_radius(&model.a);
        if radius >= 1.0 {
            push("A", format!("spectral radius {radius:.6} is not below 1"));
        }
    }

    for k in 0..model.horizon {
        for i in 0..n {
            let idx = k * n + i;
            if model.x_lo[idx] > model.x_hi[idx] {
                push(
                    "x_lo/x_hi",
                    format!(
                        "hour {k}, state {i}: lower bound {} exceeds upper bound {}",
                        model.x_lo[idx], model.x_hi[idx]
                    ),
                );
            }
        }
        for i in 0..m {
            let idx = k * m + i;
            if model.u_lo[idx] > model.u_hi[idx] {
                push(
                    "u_lo/u_hi",
                    format!(
                        "hour {k}, input {i}: lower bound {} exceeds upper bound {}",
                        model.u_lo[idx], model.u_hi[idx]
                    ),
                );
            }
        }
    }

    if model.eta.iter().all(|&e| e == 0.0) {
        push("eta", "no controllable power".into());
    }
    out
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Horizon-stacked form `x = A_bold x1 + B_bold (u + du) + E_bold v`, where
/// `x` stacks the states reached at the end of hours `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub a_bold: DMatrix<f64>,
    pub b_bold: DMatrix<f64>,
    pub e_bold: DMatrix<f64>,
    /// `A_bold x1 + E_bold v`.
    pub affine_offset: DVector<f64>,
}

impl StackedSystem {
    /// State trajectory for a stacked total input `u + du`.
    pub fn states(&self, total_input: &DVector<f64>) -> DVector<f64> {
        &self.affine_offset + &self.b_bold * total_input
    }
}

pub fn stack_dynamics(model: &BuildingModel) -> Result<StackedSystem> {
    model.check_dimensions()?;
    let (n, m, q, nh) = (model.n, model.m, model.q, model.horizon);

    // powers[d] = A^d
    let mut powers = Vec::with_capacity(nh + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for d in 1..=nh {
        let next = &model.a * &powers[d - 1];
        powers.push(next);
    }

    let mut a_bold = DMatrix::zeros(nh * n, n);
    let mut b_bold = DMatrix::zeros(nh * n, nh * m);
    let mut e_bold = DMatrix::zeros(nh * n, nh * q);
    for k in 0..nh {
        a_bold
            .view_mut((k * n, 0), (n, n))
            .copy_from(&powers[k + 1]);
        for j in 0..=k {
            let pb = &powers[k - j] * &model.b;
            b_bold.view_mut((k * n, j * m), (n, m)).copy_from(&pb);
            if q > 0 {
                let pe = &powers[k - j] * &model.e;
                e_bold.view_mut((k * n, j * q), (n, q)).copy_from(&pe);
            }
        }
    }
    let x1 = DVector::from_column_slice(&model.x1);
    let v = DVector::from_column_slice(&model.v);
    let affine_offset = &a_bold * x1 + &e_bold * v;
    Ok(StackedSystem {
        a_bold,
        b_bold,
        e_bold,
        affine_offset,
    })
}

/// A dynamic-free member whose only limit is `|du(k)| <= cap(k)`.
///
/// The state is a single decoupled dummy with free bounds, `eta = 1` and
/// zero cost, so the largest symmetric reserve it can offer at hour `k` is
/// exactly `cap[k]`.
pub fn capacity_only_building(id: usize, cap: &[f64]) -> Result<BuildingModel> {
    if cap.is_empty() {
        return Err(Error::Validation(
            "capacity vector must not be empty".into(),
        ));
    }
    if let Some((k, c)) = cap.iter().enumerate().find(|(_, c)| !(**c >= 0.0)) {
        return Err(Error::Validation(format!(
            "capacity at hour {k} must be nonnegative, got {c}"
        )));
    }
    let nh = cap.len();
    Ok(BuildingModel {
        id,
        n: 1,
        m: 1,
        q: 1,
        horizon: nh,
        a: DMatrix::zeros(1, 1),
        b: DMatrix::zeros(1, 1),
        e: DMatrix::zeros(1, 1),
        x1: vec![0.0],
        v: vec![0.0; nh],
        x_lo: vec![f64::NEG_INFINITY; nh],
        x_hi: vec![f64::INFINITY; nh],
        u_lo: cap.iter().map(|c| -c).collect(),
        u_hi: cap.to_vec(),
        eta: vec![1.0],
        c: vec![0.0; nh],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prototype {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    /// Occupied 22:00 to 08:00.
    Residential,
    /// Occupied 08:00 to 18:00.
    Commercial,
}

impl Occupancy {
    pub fn occupied(self, hour_of_day: usize) -> bool {
        let h = hour_of_day % 24;
        match self {
            Occupancy::Residential => !(8..22).contains(&h),
            Occupancy::Commercial => (8..18).contains(&h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub seed: u64,
    #[serde(default)]
    pub small: usize,
    #[serde(default)]
    pub medium: usize,
    #[serde(default)]
    pub large: usize,
    /// Fraction of each prototype class that is residential.
    #[serde(default = "default_mix")]
    pub residential_fraction: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    /// Reserve price per hour (currency per kW). Defaults to a flat
    /// placeholder when absent.
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    /// Electricity price per hour (currency per kWh).
    #[serde(default)]
    pub c_tilde: Option<Vec<f64>>,
}

fn default_mix() -> f64 {
    0.5
}

/// Placeholder reserve price, currency per kW and hour.
pub const DEFAULT_RESERVE_PRICE: f64 = 0.15;
/// Placeholder electricity price, currency per kWh.
pub const DEFAULT_ENERGY_PRICE: f64 = 0.2;

impl FleetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Validation("N must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.residential_fraction) {
            return Err(Error::Validation(
                "residential_fraction must lie in [0, 1]".into(),
            ));
        }
        for (name, v) in [("p", &self.p), ("c_tilde", &self.c_tilde)] {
            if let Some(v) = v {
                if v.len() != self.horizon {
                    return Err(Error::Validation(format!(
                        "{name} has length {}, expected N = {}",
                        v.len(),
                        self.horizon
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.small + self.medium + self.large
    }

    pub fn reserve_price(&self) -> Vec<f64> {
        self.p
            .clone()
            .unwrap_or_else(|| vec![DEFAULT_RESERVE_PRICE; self.horizon])
    }

    pub fn energy_price(&self) -> Vec<f64> {
        self.c_tilde
            .clone()
            .unwrap_or_else(|| vec![DEFAULT_ENERGY_PRICE; self.horizon])
    }

    /// Whether both price vectors are fabricated defaults.
    pub fn uses_default_prices(&self) -> bool {
        self.p.is_none() || self.c_tilde.is_none()
    }

    /// Prototype and occupancy class of each member, in fleet order.
    pub fn members(&self) -> Vec<(Prototype, Occupancy)> {
        let mut out = Vec::with_capacity(self.count());
        for (proto, count) in [
            (Prototype::Small, self.small),
            (Prototype::Medium, self.medium),
            (Prototype::Large, self.large),
        ] {
            let residential = (self.residential_fraction * count as f64).round() as usize;
            for i in 0..count {
                let occ = if i < residential {
                    Occupancy::Residential
                } else {
                    Occupancy::Commercial
                };
                out.push((proto, occ));
            }
        }
        out
    }
}

/// Generates a reproducible fleet. The same spec always yields bitwise
/// identical models.
pub fn generate_fleet(spec: &FleetSpec) -> Result<Vec<BuildingModel>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c_tilde = spec.energy_price();
    spec.members()
        .into_iter()
        .enumerate()
        .map(|(id, (proto, occ))| {
            let layout = PrototypeLayout::of(proto);
            Ok(synthesize(
                id,
                &layout,
                occ,
                spec.horizon,
                &c_tilde,
                &mut rng,
            ))
        })
        .collect()
}

/// Zoned RC network: each zone has air, envelope and slab temperatures;
/// extra "core" states soak up the remainder so the state count matches the
/// prototype.
struct PrototypeLayout {
    zones: usize,
    core_states: usize,
    comfort: (f64, f64),
    /// Heating circuits. Each heats a contiguous group of zones.
    heaters: usize,
    /// Small prototype only: cooled ceiling, floor heating, ventilation.
    hydronic_extras: bool,
    blinds: usize,
    occupancy_groups: usize,
    solar_orientations: usize,
    ground: bool,
}

impl PrototypeLayout {
    fn of(proto: Prototype) -> Self {
        match proto {
            // 3 states, 4 inputs, 3 disturbances
            Prototype::Small => PrototypeLayout {
                zones: 1,
                core_states: 0,
                comfort: (21.0, 25.0),
                heaters: 1,
                hydronic_extras: true,
                blinds: 0,
                occupancy_groups: 1,
                solar_orientations: 1,
                ground: false,
            },
            // 33 states, 5 inputs, 7 disturbances
            Prototype::Medium => PrototypeLayout {
                zones: 11,
                core_states: 0,
                comfort: (20.0, 28.0),
                heaters: 1,
                hydronic_extras: false,
                blinds: 4,
                occupancy_groups: 1,
                solar_orientations: 4,
                ground: true,
            },
            // 113 states, 9 inputs, 11 disturbances
            Prototype::Large => PrototypeLayout {
                zones: 37,
                core_states: 2,
                comfort: (20.0, 28.0),
                heaters: 5,
                hydronic_extras: false,
                blinds: 4,
                occupancy_groups: 5,
                solar_orientations: 4,
                ground: true,
            },
        }
    }

    fn n(&self) -> usize {
        3 * self.zones + self.core_states
    }

    fn m(&self) -> usize {
        self.heaters + self.blinds + if self.hydronic_extras { 3 } else { 0 }
    }

    fn q(&self) -> usize {
        1 + usize::from(self.ground) + self.solar_orientations + self.occupancy_groups
    }
}

fn perturb(rng: &mut ChaCha8Rng, x: f64) -> f64 {
    x * rng.gen_range(0.9..1.1)
}

fn synthesize(
    id: usize,
    layout: &PrototypeLayout,
    occ: Occupancy,
    nh: usize,
    c_tilde: &[f64],
    rng: &mut ChaCha8Rng,
) -> BuildingModel {
    let (n, m, q) = (layout.n(), layout.m(), layout.q());
    let z = layout.zones;
    let air = |zone: usize| 3 * zone;
    let wall = |zone: usize| 3 * zone + 1;
    let slab = |zone: usize| 3 * zone + 2;

    // Diffusion matrix: nonnegative, rows sum below one, remainder couples
    // to ambient (or ground) through E.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for zone in 0..z {
        a[(air(zone), air(zone))] = 0.70;
        a[(air(zone), wall(zone))] = 0.12;
        a[(air(zone), slab(zone))] = 0.10;
        a[(wall(zone), air(zone))] = 0.10;
        a[(wall(zone), wall(zone))] = 0.80;
        a[(slab(zone), air(zone))] = 0.08;
        a[(slab(zone), slab(zone))] = 0.90;
        if z > 1 {
            // neighbouring air volumes exchange heat along a corridor chain
            for nb in [zone.wrapping_sub(1), zone + 1] {
                if nb < z {
                    a[(air(zone), air(nb))] = 0.03;
                }
            }
            a[(air(zone), air(zone))] -= 0.03;
        }
    }
    for c in 0..layout.core_states {
        let idx = 3 * z + c;
        a[(idx, idx)] = 0.95;
        for zone in (c..z).step_by(layout.core_states.max(1)) {
            a[(slab(zone), idx)] = 0.01;
            a[(slab(zone), slab(zone))] -= 0.01;
        }
    }
    for v in a.iter_mut() {
        if *v != 0.0 {
            *v = perturb(rng, *v);
        }
    }
    for r in 0..n {
        let s: f64 = a.row(r).sum();
        if s > 0.99 {
            a.row_mut(r).scale_mut(0.99 / s);
        }
    }

    // Inputs, thermal kW; eta converts to electric kW.
    let mut b = DMatrix::<f64>::zeros(n, m);
    let mut eta = vec![0.0; m];
    let mut u_hi = vec![0.0; m];
    let mut col = 0;
    let heated_per_circuit = z.div_ceil(layout.heaters);
    for h in 0..layout.heaters {
        for zone in (h * heated_per_circuit)..((h + 1) * heated_per_circuit).min(z) {
            b[(air(zone), col)] = 0.5 / heated_per_circuit as f64;
            b[(wall(zone), col)] = 0.05 / heated_per_circuit as f64;
        }
        eta[col] = 0.3;
        u_hi[col] = 6.0 * heated_per_circuit as f64;
        col += 1;
    }
    if layout.hydronic_extras {
        // cooled ceiling
        b[(air(0), col)] = -0.4;
        eta[col] = 0.25;
        u_hi[col] = 4.0;
        col += 1;
        // floor heating
        b[(slab(0), col)] = 0.25;
        b[(air(0), col)] = 0.03;
        eta[col] = 0.3;
        u_hi[col] = 6.0;
        col += 1;
        // mechanical ventilation, fresh-air cooling
        b[(air(0), col)] = -0.3;
        eta[col] = 0.1;
        u_hi[col] = 3.0;
        col += 1;
    }
    for bl in 0..layout.blinds {
        // closing blinds on one facade removes part of its solar gain
        for zone in (bl..z).step_by(layout.blinds) {
            b[(air(zone), col)] = -0.3;
        }
        eta[col] = 0.0;
        u_hi[col] = 1.0;
        col += 1;
    }
    debug_assert_eq!(col, m);
    for v in b.iter_mut() {
        if *v != 0.0 {
            *v = perturb(rng, *v);
        }
    }
    for e in eta.iter_mut() {
        if *e != 0.0 {
            *e = perturb(rng, *e);
        }
    }
    for u in u_hi.iter_mut() {
        *u = perturb(rng, *u);
    }

    // Disturbances: ambient, ground, solar per orientation, occupancy gains.
    let mut e = DMatrix::<f64>::zeros(n, q);
    let ambient_col = 0;
    let ground_col = 1;
    let solar0 = 1 + usize::from(layout.ground);
    let occ0 = solar0 + layout.solar_orientations;
    for r in 0..n {
        let rest = 1.0 - a.row(r).sum();
        let is_slab = r < 3 * z && r % 3 == 2;
        if layout.ground && is_slab {
            e[(r, ground_col)] = rest;
        } else {
            e[(r, ambient_col)] = rest;
        }
    }
    for zone in 0..z {
        let o = zone % layout.solar_orientations;
        e[(air(zone), solar0 + o)] = perturb(rng, 0.8);
        e[(wall(zone), solar0 + o)] = perturb(rng, 0.3);
        e[(slab(zone), solar0 + o)] = perturb(rng, 0.2);
        let g = zone * layout.occupancy_groups / z;
        e[(air(zone), occ0 + g)] = perturb(rng, 0.5);
    }

    let t_mean = 6.0 + rng.gen_range(-1.0..1.0);
    let t_amp = 4.0 + rng.gen_range(-0.5..0.5);
    let ground_t = 10.0;
    let mut v = vec![0.0; q * nh];
    for k in 0..nh {
        let hour = k % 24;
        let h = hour as f64 + 0.5;
        let row = &mut v[k * q..(k + 1) * q];
        row[ambient_col] = t_mean + t_amp * (2.0 * std::f64::consts::PI * (h - 9.0) / 24.0).sin();
        if layout.ground {
            row[ground_col] = ground_t;
        }
        for o in 0..layout.solar_orientations {
            let shift = o as f64 * 1.5 - 2.0;
            let s = (std::f64::consts::PI * (h - 6.0 - shift) / 12.0).sin();
            row[solar0 + o] = 0.6 * s.max(0.0);
        }
        for g in 0..layout.occupancy_groups {
            row[occ0 + g] = if occ.occupied(hour) { 1.0 } else { 0.1 };
        }
    }

    let (lo, hi) = layout.comfort;
    let mut x_lo = vec![f64::NEG_INFINITY; n * nh];
    let mut x_hi = vec![f64::INFINITY; n * nh];
    for k in 0..nh {
        let (l, h) = if occ.occupied(k % 24) {
            (lo, hi)
        } else {
            (lo - 4.0, hi + 4.0)
        };
        for zone in 0..z {
            x_lo[k * n + air(zone)] = l;
            x_hi[k * n + air(zone)] = h;
        }
    }

    let x1: Vec<f64> = (0..n)
        .map(|_| 0.5 * (lo + hi) + rng.gen_range(-0.5..0.5))
        .collect();

    let u_lo_all = vec![0.0; m * nh];
    let u_hi_all: Vec<f64> = (0..nh).flat_map(|_| u_hi.iter().copied()).collect();
    let c: Vec<f64> = (0..nh)
        .flat_map(|k| eta.iter().map(move |e| c_tilde[k] * e).collect::<Vec<_>>())
        .collect();

    BuildingModel {
        id,
        n,
        m,
        q,
        horizon: nh,
        a,
        b,
        e,
        x1,
        v,
        x_lo,
        x_hi,
        u_lo: u_lo_all,
        u_hi: u_hi_all,
        eta,
        c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(small: usize, medium: usize, frac: f64) -> FleetSpec {
        FleetSpec {
            seed: 1,
            small,
            medium,
            large: 0,
            residential_fraction: frac,
            horizon: 24,
            p: None,
            c_tilde: None,
        }
    }

    #[test]
    fn memoryless_system_stacks_to_block_identity() {
        let mut m = capacity_only_building(0, &[1.0, 1.0]).unwrap();
        m.b = DMatrix::identity(1, 1);
        let s = stack_dynamics(&m).unwrap();
        assert_eq!(s.b_bold, DMatrix::identity(2, 2));
        assert_eq!(s.a_bold, DMatrix::zeros(2, 1));
    }

    #[test]
    fn scalar_decay_offset() {
        let mut m = capacity_only_building(0, &[1.0, 1.0]).unwrap();
        m.a = DMatrix::from_element(1, 1, 0.5);
        m.b = DMatrix::from_element(1, 1, 1.0);
        m.x1 = vec![1.0];
        let s = stack_dynamics(&m).unwrap();
        assert_abs_diff_eq!(s.affine_offset[0], 0.5);
        assert_abs_diff_eq!(s.affine_offset[1], 0.25);
    }

    #[test]
    fn stacking_reports_offending_field() {
        let mut m = capacity_only_building(0, &[1.0, 1.0]).unwrap();
        m.eta = vec![1.0, 2.0];
        match stack_dynamics(&m) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "eta"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fleet_is_pure_in_seed() {
        let a = generate_fleet(&spec(2, 1, 0.5)).unwrap();
        let b = generate_fleet(&spec(2, 1, 0.5)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(2, 1, 0.5);
        other.seed = 2;
        assert_ne!(a, generate_fleet(&other).unwrap());
    }

    #[test]
    fn small_residential_prototype() {
        let fleet = generate_fleet(&spec(1, 0, 1.0)).unwrap();
        let b = &fleet[0];
        assert_eq!((b.n, b.m, b.q), (3, 4, 3));
        assert!(validate_model(b).is_empty(), "{:?}", validate_model(b));
        // hour 2 is occupied for residential buildings, hour 12 is not
        assert_eq!((b.x_lo[2 * 3], b.x_hi[2 * 3]), (21.0, 25.0));
        assert_eq!((b.x_lo[23 * 3], b.x_hi[23 * 3]), (21.0, 25.0));
        assert!(b.x_lo[12 * 3] < 21.0 && b.x_hi[12 * 3] > 25.0);
        for r in 0..3 {
            assert!(b.a.row(r).iter().all(|&x| x >= 0.0));
            assert!(b.a.row(r).sum() <= 1.0);
        }
    }

    #[test]
    fn medium_commercial_prototype() {
        let fleet = generate_fleet(&spec(0, 1, 0.0)).unwrap();
        let b = &fleet[0];
        assert_eq!((b.n, b.m, b.q), (33, 5, 7));
        assert!(validate_model(b).is_empty());
        assert_eq!((b.x_lo[10 * 33], b.x_hi[10 * 33]), (20.0, 28.0));
        assert!(b.x_lo[2 * 33] < 20.0);
    }

    #[test]
    fn large_prototype_dimensions() {
        let mut s = spec(0, 0, 0.0);
        s.large = 1;
        let b = &generate_fleet(&s).unwrap()[0];
        assert_eq!((b.n, b.m, b.q), (113, 9, 11));
        assert!(validate_model(b).is_empty());
    }

    #[test]
    fn class_mix_split() {
        let members = spec(6, 0, 0.5).members();
        let res = members
            .iter()
            .filter(|(_, o)| *o == Occupancy::Residential)
            .count();
        assert_eq!(res, 3);
    }

    #[test]
    fn capacity_building_rejects_negative_cap() {
        assert!(capacity_only_building(0, &[1.0, -0.5]).is_err());
        let zero = capacity_only_building(0, &[0.0; 3]).unwrap();
        assert!(validate_model(&zero).is_empty());
    }

    #[test]
    fn validation_findings() {
        let fleet = generate_fleet(&spec(1, 0, 1.0)).unwrap();
        assert!(validate_model(&fleet[0]).is_empty());

        let mut bad = fleet[0].clone();
        bad.x_lo[5 * 3] = 30.0;
        let v = validate_model(&bad);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("hour 5"), "{}", v[0]);

        let mut dead = fleet[0].clone();
        dead.eta = vec![0.0; 4];
        let v = validate_model(&dead);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "no controllable power");

        let mut unstable = fleet[0].clone();
        unstable.a[(0, 0)] = 1.5;
        assert!(validate_model(&unstable).iter().any(|v| v.field == "A"));
    }

    #[test]
    fn json_round_trip_keeps_infinite_bounds() {
        let m = capacity_only_building(3, &[1.0, 2.0]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"x_hi\":[null,null]"));
        let back: BuildingModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
