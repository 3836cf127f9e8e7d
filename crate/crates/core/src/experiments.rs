//! Lambda scans: assembly of `g_lambda`, extraction of harmonic amplitudes,
//! order fits, Ricci and constraint cancellation scans, weak-limit decay and
//! the pointwise identity suite.
//!
//! Harmonic amplitudes at a point are measured by sampling the fast angles
//! `u_A/lambda + offset_A` on an `m^n` torus grid with the slow point fixed;
//! finite differences act on the full oscillatory fields with `h = lambda/eta`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::geometry::{
    lorentz_at, pp_wave_metric, random_smooth_metric, ricci_direct, ricci_gwc, ricci_rule, CoordinatePoint, Field,
    LorentzMetricField, ScalarField, SymTensor4Field,
};
use crate::hierarchy::{
    accumulate, f2pm, i0pm, order0_pieces, pair_differential, q0, r0_analytic, sample_admissible, tt_tensor,
    AnsatzStack, HarmonicMap, Include, ModeKey, PairSlot, PhaseSlots, Trig, Wave,
};
use crate::initialdata::{
    bump, canonical_pairs, constraint_leading, constraint_residual, ConformalData, ConformalFlags, CorrectorAudit,
    Seed, SeedPhase, SliceProblem,
};
use crate::phases::{null_frame_at, plane_phase, unit_direction, w_lattice, HarmonicWord, Phase};
use crate::polarization::{pbar1, pbar2, pol, pol_preimage, pv_apply, pv_solve, slice_normal};
use crate::tensor::{dot, max_abs, minkowski, scale, Lin, MetricAt, Real, Sym, Sym3, Sym4, Vec3, Vec4};
use crate::transport::{propagation_audit, solve_scalar_transport, solve_transport, TransportProblem};

pub const SCHEMA: u32 = 1;
/// Condition number above which a mode fit is rejected.
pub const ALIAS_CONDITION: Real = 1e8;
/// Floor applied to nonpositive values in order fits.
pub const ORDER_FLOOR: Real = 1e-16;

// ---------------------------------------------------------------- fits

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub order: Real,
    pub r2: Real,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clipped: bool,
}

/// Least-squares slope of `ln r` against `ln lambda`.
pub fn order_fit(points: &[(Real, Real)]) -> LabResult<OrderFit> {
    if points.len() < 3 {
        return Err(LabError::Config(format!("order fit needs 3 points, got {}", points.len())));
    }
    let mut clipped = false;
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(l, r) in points {
        if !(l > 0.0) || !l.is_finite() || r.is_nan() {
            return Err(LabError::Config(format!("bad fit point ({l}, {r})")));
        }
        let r = if r > ORDER_FLOOR {
            r
        } else {
            clipped = true;
            ORDER_FLOOR
        };
        xs.push(l.ln());
        ys.push(r.ln());
    }
    let n = xs.len() as Real;
    let mx = xs.iter().sum::<Real>() / n;
    let my = ys.iter().sum::<Real>() / n;
    let sxx: Real = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: Real = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(LabError::Config("order fit needs distinct lambdas".into()));
    }
    let order = sxy / sxx;
    let syy: Real = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ssr: Real = xs.iter().zip(&ys).map(|(x, y)| (y - my - order * (x - mx)).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ssr / syy } else { 1.0 };
    Ok(OrderFit { order, r2, clipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    pub constant: Real,
    pub cos: Vec<Real>,
    pub sin: Vec<Real>,
    /// Weighted RMS of the fit residual.
    pub residual: Real,
    pub condition: Real,
}

/// Fits `f ~ c + sum_w (a_w cos(angle_w) + b_w sin(angle_w))` by weighted least
/// squares; `angles[w][i]` is the fast angle of word `w` at sample `i`.
pub fn mode_fit(values: &[Real], angles: &[Vec<Real>], weights: Option<&[Real]>) -> LabResult<ModeFit> {
    let n = values.len();
    let cols = 1 + 2 * angles.len();
    if n < cols {
        return Err(LabError::Config(format!("{n} samples for {cols} unknowns")));
    }
    for a in angles {
        if a.len() != n {
            return Err(LabError::Config("angle table does not match samples".into()));
        }
        if a.windows(2).any(|w| (w[1] - w[0]).abs() > TAU / 20.0) {
            return Err(LabError::Config("fewer than 20 samples per oscillation".into()));
        }
    }
    if weights.is_some_and(|w| w.len() != n || w.iter().any(|v| !(*v >= 0.0))) {
        return Err(LabError::Config("bad weights".into()));
    }
    let sw: Vec<Real> = (0..n).map(|i| weights.map_or(1.0, |w| w[i].sqrt())).collect();
    let mut a = DMatrix::<Real>::zeros(n, cols);
    let mut b = DVector::<Real>::zeros(n);
    for i in 0..n {
        a[(i, 0)] = sw[i];
        for (w, ang) in angles.iter().enumerate() {
            a[(i, 1 + 2 * w)] = sw[i] * ang[i].cos();
            a[(i, 2 + 2 * w)] = sw[i] * ang[i].sin();
        }
        b[i] = sw[i] * values[i];
    }
    let norms: Vec<Real> = (0..cols).map(|j| a.column(j).norm()).collect();
    for (j, nj) in norms.iter().enumerate() {
        if !(*nj > 0.0) {
            return Err(LabError::AliasedWords { condition: Real::INFINITY });
        }
        a.column_mut(j).scale_mut(1.0 / nj);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { Real::INFINITY };
    if !(condition <= ALIAS_CONDITION) {
        return Err(LabError::AliasedWords { condition });
    }
    let x = svd.solve(&b, 0.0).map_err(|e| LabError::Config(e.to_string()))?;
    let r = &a * &x - &b;
    let wsum: Real = sw.iter().map(|s| s * s).sum();
    let coef: Vec<Real> = (0..cols).map(|j| x[j] / norms[j]).collect();
    Ok(ModeFit {
        constant: coef[0],
        cos: (0..angles.len()).map(|w| coef[1 + 2 * w]).collect(),
        sin: (0..angles.len()).map(|w| coef[2 + 2 * w]).collect(),
        residual: (r.norm_squared() / wsum.max(Real::MIN_POSITIVE)).sqrt(),
        condition,
    })
}

/// Words of the W lattice resolvable on an `m`-point torus (`2|k| < m`).
pub fn torus_words(labels: &[usize], m: usize) -> Vec<HarmonicWord> {
    w_lattice(labels).into_iter().filter(|w| w.coeffs.iter().all(|&(_, k)| 2 * k.unsigned_abs() < m as u32)).collect()
}

/// Harmonic coefficients of `f(offsets)` at a fixed slow point. `base[A]` is
/// `u_A/lambda` there; coefficients refer to the total angles `base + offset`.
pub fn torus_modes<T: Lin + Send>(
    labels: &[usize],
    base: &[Real],
    m: usize,
    f: impl Fn(&[Real]) -> LabResult<T> + Sync,
) -> LabResult<HarmonicMap<T>> {
    let n = labels.len();
    let total = m.pow(n as u32);
    let offsets = |idx: usize| -> Vec<Real> {
        (0..n).map(|a| TAU * ((idx / m.pow(a as u32)) % m) as Real / m as Real).collect()
    };
    let values: Vec<LabResult<T>> = (0..total).into_par_iter().map(|idx| f(&offsets(idx))).collect();
    let words = torus_words(labels, m);
    let w = 1.0 / total as Real;
    let mut out: HarmonicMap<T> = BTreeMap::new();
    for (idx, v) in values.into_iter().enumerate() {
        let v = v?;
        let off = offsets(idx);
        accumulate(&mut out, &[], Trig::One, w, &v);
        for word in &words {
            let mut ang = 0.0;
            for &(l, k) in &word.coeffs {
                let a = labels.iter().position(|x| *x == l).ok_or(LabError::UnknownPhase(l))?;
                ang += k as Real * (base[a] + off[a]);
            }
            accumulate(&mut out, &word.coeffs, Trig::Cos, 2.0 * w * ang.cos(), &v);
            accumulate(&mut out, &word.coeffs, Trig::Sin, 2.0 * w * ang.sin(), &v);
        }
    }
    Ok(out)
}

/// `g_lambda(p)` with a signature check.
pub fn assemble_metric(stack: &AnsatzStack, p: &Vec4) -> LabResult<Sym4> {
    let g = stack.metric_at(p)?;
    lorentz_at(g)?;
    Ok(g)
}

// ---------------------------------------------------------------- scenario

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    Minkowski,
    /// `-dt^2 + sum (1 + c_i t)^2 dx_i^2`; phase directions must be coordinate axes.
    Kasner { rates: [Real; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    /// Propagation direction as an integer triple, normalized internally.
    pub direction: [i64; 3],
    /// Polarization angle `a`: `theta+ = 2 cos a`, `theta x = 2 sin a`.
    #[serde(default)]
    pub polarization: Real,
    #[serde(default = "one")]
    pub amplitude: Real,
    #[serde(default)]
    pub center: [Real; 3],
}

fn one() -> Real {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub order: Real,
    pub ablation_rel: Real,
    pub burnett_rel: Real,
    pub leakage: Real,
    pub stationary_order: Real,
    pub identity: Real,
    pub slice_polarization: Real,
    pub correctors: Real,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            order: 0.9,
            ablation_rel: 0.1,
            burnett_rel: 0.1,
            leakage: 1e-3,
            stationary_order: 0.7,
            identity: 1e-12,
            slice_polarization: 1e-11,
            correctors: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSpec {
    pub origin: [Real; 3],
    pub direction: [Real; 3],
    pub half_length: Real,
    pub samples_per_period: usize,
    /// Standard deviation of the Gaussian fit window.
    pub window: Real,
}

impl Default for LineSpec {
    fn default() -> Self {
        LineSpec { origin: [0.15, -0.1, 0.05], direction: [4.0, 3.0, 0.0], half_length: 1.7, samples_per_period: 20, window: 0.5 }
    }
}

/// Lattice box for sup-norms, spaced `lambda / per_lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupBox {
    pub center: [Real; 3],
    pub half_widths: [Real; 3],
    pub per_lambda: Real,
}

impl Default for SupBox {
    fn default() -> Self {
        SupBox { center: [0.0; 3], half_widths: [0.6, 0.6, 0.0], per_lambda: 8.0 }
    }
}

impl SupBox {
    pub fn lattice(&self, lambda: Real) -> LabResult<Vec<Vec3>> {
        if !(self.per_lambda > 0.0) || self.half_widths.iter().any(|w| !(*w >= 0.0)) {
            return Err(LabError::Config("sup box".into()));
        }
        let step = lambda / self.per_lambda;
        let axis = |a: usize| -> Vec<Real> {
            let k = (self.half_widths[a] / step).ceil() as i64;
            (-k..=k).map(|i| self.center[a] + i as Real * step).filter(|v| (v - self.center[a]).abs() <= self.half_widths[a] + 1e-12).collect()
        };
        let (xs, ys, zs) = (axis(0), axis(1), axis(2));
        let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &x in &xs {
            for &y in &ys {
                for &z in &zs {
                    out.push([x, y, z]);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub schema: u32,
    pub background: Background,
    pub phases: Vec<PhaseSpec>,
    /// Support radius of the seed densities.
    pub radius: Real,
    pub lambdas: Vec<Real>,
    /// Grid rule `h = lambda / eta`.
    pub eta: Real,
    pub include: Include,
    pub conformal: ConformalFlags,
    /// Slice points where harmonic amplitudes are measured.
    pub points: Vec<[Real; 3]>,
    /// Torus samples per fast angle.
    pub torus: usize,
    /// Step for derivatives of slow quantities.
    pub slow_h: Real,
    pub line: LineSpec,
    pub sup_box: SupBox,
    pub rng_seed: u64,
    pub thresholds: Thresholds,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema: SCHEMA,
            background: Background::Minkowski,
            phases: vec![
                PhaseSpec { direction: [1, 0, 0], polarization: 0.4, amplitude: 1.0, center: [0.0; 3] },
                PhaseSpec { direction: [0, 1, 0], polarization: -1.1, amplitude: 0.8, center: [0.1, -0.1, 0.0] },
            ],
            radius: 2.0,
            lambdas: vec![0.1, 0.05, 0.025],
            eta: 20.0,
            include: Include::default(),
            conformal: ConformalFlags::default(),
            points: vec![[0.3, -0.2, 0.1], [-0.4, 0.25, -0.3], [0.1, 0.5, 0.2]],
            torus: 6,
            slow_h: 1e-3,
            line: LineSpec::default(),
            sup_box: SupBox::default(),
            rng_seed: 7,
            thresholds: Thresholds::default(),
        }
    }
}

impl Scenario {
    /// The default scenario restricted to its first phase.
    pub fn single_phase() -> Self {
        let mut s = Scenario::default();
        s.phases.truncate(1);
        s
    }

    pub fn validate(&self) -> LabResult<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.schema != SCHEMA {
            return bad(format!("schema {} (expected {SCHEMA})", self.schema));
        }
        if self.phases.is_empty() || self.phases.len() > 4 {
            return bad(format!("{} phases (1 to 4 supported)", self.phases.len()));
        }
        for (i, ph) in self.phases.iter().enumerate() {
            if ph.direction == [0, 0, 0] {
                return bad(format!("phase {i}: zero direction"));
            }
            if !ph.amplitude.is_finite() || !ph.polarization.is_finite() || ph.center.iter().any(|c| !c.is_finite()) {
                return bad(format!("phase {i}: non-finite parameter"));
            }
            if !(dot(&ph.center, &ph.center).sqrt() < 0.5 * self.radius) {
                return bad(format!("phase {i}: center must lie in B_(R/2)"));
            }
            if let Background::Kasner { .. } = self.background {
                if ph.direction.iter().filter(|&&d| d != 0).count() != 1 {
                    return bad(format!("phase {i}: Kasner background needs axis directions"));
                }
            }
        }
        if let Background::Kasner { rates } = self.background {
            if rates.iter().any(|c| !c.is_finite()) {
                return bad("non-finite Kasner rates".into());
            }
        }
        if !(self.radius > 0.0) {
            return bad(format!("radius {}", self.radius));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return bad(format!("lambdas {:?}", self.lambdas));
        }
        if self.lambdas.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("lambdas must decrease".into());
        }
        if !(self.eta >= 20.0) {
            return bad(format!("eta {} < 20 under-resolves the oscillations", self.eta));
        }
        if self.torus < 4 || !self.torus.is_multiple_of(2) {
            return bad(format!("torus {} (even, >= 4)", self.torus));
        }
        if !(self.slow_h > 0.0) {
            return bad(format!("slow_h {}", self.slow_h));
        }
        if self.points.is_empty() {
            return bad("no sample points".into());
        }
        for p in &self.points {
            if !(dot(p, p).sqrt() < self.radius) {
                return bad(format!("point {p:?} outside the support ball"));
            }
        }
        let l = &self.line;
        if !(l.half_length > 0.0) || !(l.window > 0.0) || l.samples_per_period < 20 || !(dot(&l.direction, &l.direction) > 0.0) {
            return bad("line spec".into());
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.phases.len()).collect()
    }

    pub fn direction(&self, i: usize) -> LabResult<Vec3> {
        unit_direction(self.phases[i].direction.map(|d| d as Real))
    }

    pub fn background_field(&self) -> LorentzMetricField {
        match self.background {
            Background::Minkowski => LorentzMetricField::minkowski(),
            Background::Kasner { rates } => LorentzMetricField::analytic(move |p: &Vec4| {
                let a: [Real; 3] = std::array::from_fn(|i| 1.0 + rates[i] * p[0]);
                Sym4::diag([-1.0, a[0] * a[0], a[1] * a[1], a[2] * a[2]])
            }),
        }
    }

    pub fn phase(&self, i: usize) -> LabResult<Phase> {
        let z = self.direction(i)?;
        match self.background {
            Background::Minkowski => plane_phase(i, z),
            Background::Kasner { rates } => {
                let axis = (0..3).find(|&a| z[a] != 0.0).expect("validated axis direction");
                let (c, s) = (rates[axis], z[axis]);
                let clock = move |t: Real| if c == 0.0 { t } else { (1.0 + c * t).ln() / c };
                let u = Field::analytic(move |p: &Vec4| clock(p[0]) - s * p[axis + 1]);
                let du = Field::analytic(move |p: &Vec4| {
                    let mut d = [1.0 / (1.0 + c * p[0]), 0.0, 0.0, 0.0];
                    d[axis + 1] = -s;
                    d
                });
                Ok(Phase::new(i, u, Some(du), Some(z)))
            }
        }
    }

    /// `amplitude * bump` of radius `R - |center|`, so the support stays in `B_R`.
    pub fn density(&self, i: usize) -> ScalarField<3> {
        let (amp, c) = (self.phases[i].amplitude, self.phases[i].center);
        let r = self.radius - dot(&c, &c).sqrt();
        Field::analytic(move |x: &Vec3| amp * bump(r, &[x[0] - c[0], x[1] - c[1], x[2] - c[2]]))
    }

    pub fn seed(&self) -> LabResult<Seed> {
        let mut out = Vec::with_capacity(self.phases.len());
        for i in 0..self.phases.len() {
            out.push(SeedPhase::angled(self.phase(i)?, self.phases[i].polarization, self.density(i))?);
        }
        Seed::new(out, Some(self.radius))
    }

    pub fn slice(&self) -> LabResult<SliceProblem> {
        Ok(SliceProblem::new(self.background_field(), self.seed()?, self.slow_h))
    }

    fn f1_field(&self, i: usize) -> LabResult<SymTensor4Field> {
        let rho = self.density(i);
        let a = self.phases[i].polarization;
        let (tp, tx) = (2.0 * a.cos(), 2.0 * a.sin());
        match self.background {
            Background::Minkowski => {
                let z = self.direction(i)?;
                let g = MetricAt::new(minkowski())?;
                let frame = null_frame_at(&self.phase(i)?.du(&[0.0; 4])?, &g)?;
                let t = tt_tensor(&frame, tp, tx, &g);
                // transported profile: constant along L = d_t + z.d_x
                Ok(Field::analytic(move |p: &Vec4| {
                    t * rho.at(&[p[1] - z[0] * p[0], p[2] - z[1] * p[0], p[3] - z[2] * p[0]])
                }))
            }
            Background::Kasner { .. } => {
                let g0 = self.background_field();
                let u = self.phase(i)?;
                Ok(Field::analytic(move |p: &Vec4| {
                    let frame = g0.at(p).and_then(|g| Ok((null_frame_at(&u.du(p)?, &g)?, g)));
                    match frame {
                        Ok((fr, g)) => tt_tensor(&fr, tp, tx, &g) * rho.at(&[p[1], p[2], p[3]]),
                        Err(_) => Sym::from_fn(|_, _| Real::NAN),
                    }
                }))
            }
        }
    }

    /// Ansatz stack with `F1` transported (exactly on Minkowski), `F21` solving
    /// `Pol(F21) = -Q0`, `F22 = (3/32)|F1|^2 g0` and `F2pm` on every mixed word.
    pub fn stack(&self, lambda: Real) -> LabResult<AnsatzStack> {
        let g0 = self.background_field();
        let mut st = AnsatzStack::new(g0.clone(), lambda)?;
        st.include = self.include;
        let h = self.slow_h;
        for i in 0..self.phases.len() {
            let phase = self.phase(i)?;
            let f1 = self.f1_field(i)?;
            let (f1c, g0c, uc) = (f1.clone(), g0.clone(), phase.clone());
            let f21 = Field::analytic(move |p: &Vec4| {
                let r = (|| {
                    let g = g0c.at(p)?;
                    let fr = null_frame_at(&uc.du(p)?, &g)?;
                    Ok::<_, LabError>(pol_preimage(&scale(-1.0, &q0(&f1c, &g0c, p, h)?), &fr, &g))
                })();
                r.unwrap_or_else(|_| Sym::from_fn(|_, _| Real::NAN))
            });
            let (f1c, g0c) = (f1.clone(), g0.clone());
            let f22 = Field::analytic(move |p: &Vec4| match (g0c.at(p), f1c.eval(p)) {
                (Ok(g), Ok(f)) => g.g * (3.0 / 32.0 * g.dot(&f, &f)),
                _ => Sym::from_fn(|_, _| Real::NAN),
            });
            st.phases.push(PhaseSlots { phase, f1, f21: Some(f21), f22: Some(f22), frak: None });
        }
        for (a, b, s) in canonical_pairs(self.phases.len()) {
            let (pa, pb) = (st.phases[a].clone(), st.phases[b].clone());
            let g0c = g0.clone();
            let f = Field::analytic(move |p: &Vec4| {
                let r = (|| {
                    let g = g0c.at(p)?;
                    let wa = Wave::new(pa.phase.du(p)?, pa.f1.eval(p)?, &g);
                    let wb = Wave::new(pb.phase.du(p)?, pb.f1.eval(p)?, &g);
                    f2pm(&wa, &wb, s, &g)
                })();
                r.unwrap_or_else(|_| Sym::from_fn(|_, _| Real::NAN))
            });
            st.pairs.push(PairSlot { a, b, sign: s, f2pm: f });
        }
        Ok(st)
    }

    /// Fast angles `u_A(p)/lambda`.
    fn base_angles(&self, phases: &[Phase], p: &Vec4, lambda: Real) -> LabResult<Vec<Real>> {
        phases.iter().map(|u| Ok(u.value(p)? / lambda)).collect()
    }

    fn grid_h(&self, lambda: Real) -> LabResult<Real> {
        let h = lambda / self.eta;
        if h > lambda / 20.0 {
            return Err(LabError::Config(format!("h = {h} exceeds lambda/20")));
        }
        Ok(h)
    }
}

// ---------------------------------------------------------------- reports

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub lambda: Real,
    pub value: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub kind: String,
    pub word: String,
    pub slot: String,
    pub points: Vec<SeriesPoint>,
    pub fit: Option<OrderFit>,
    /// `None` for informational series.
    pub pass: Option<bool>,
}

impl Series {
    pub fn new(kind: &str, word: &str, slot: &str, points: Vec<SeriesPoint>) -> Self {
        Series { kind: kind.into(), word: word.into(), slot: slot.into(), points, fit: None, pass: None }
    }

    fn pairs(&self) -> Vec<(Real, Real)> {
        self.points.iter().map(|p| (p.lambda, p.value)).collect()
    }

    /// Fits the order when at least three points exist; passes when `order >= min`.
    pub fn with_order_check(mut self, min: Option<Real>) -> Self {
        if self.points.len() >= 3 {
            if let Ok(f) = order_fit(&self.pairs()) {
                self.fit = Some(f);
                if let Some(m) = min {
                    self.pass = Some(f.order >= m);
                }
            }
        }
        self
    }

    /// Passes when every value is at most `tol`.
    pub fn with_bound(mut self, tol: Real) -> Self {
        self.pass = Some(self.points.iter().all(|p| p.value <= tol));
        self
    }

    /// Passes when the value at the smallest lambda is at most `tol`.
    pub fn with_final_bound(mut self, tol: Real) -> Self {
        let last = self.points.iter().min_by(|a, b| a.lambda.total_cmp(&b.lambda));
        self.pass = Some(last.is_some_and(|p| p.value <= tol));
        self
    }

    pub fn max_value(&self) -> Real {
        self.points.iter().map(|p| p.value).fold(0.0, Real::max)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub schema: u32,
    /// Version of the library that produced the report.
    #[serde(default)]
    pub version: String,
    pub config_hash: String,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub meta: ReportMeta,
    pub series: Vec<Series>,
}

impl ScanReport {
    pub fn new(rng_seed: u64) -> Self {
        let meta = ReportMeta {
            schema: SCHEMA,
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: String::new(),
            rng_seed,
            notes: Vec::new(),
        };
        ScanReport { meta, series: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.series.iter().all(|s| s.pass != Some(false))
    }

    pub fn failures(&self) -> Vec<&Series> {
        self.series.iter().filter(|s| s.pass == Some(false)).collect()
    }

    pub fn find(&self, kind: &str, word: &str, slot: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.kind == kind && s.word == word && s.slot == slot)
    }

    /// Appends the series and notes of `other`.
    pub fn merge(&mut self, other: ScanReport) {
        self.series.extend(other.series);
        self.meta.notes.extend(other.meta.notes);
    }
}

/// Per-key series values across the lambda ladder.
#[derive(Default)]
struct Ladder(BTreeMap<(String, String, String), Vec<SeriesPoint>>);

impl Ladder {
    fn push(&mut self, kind: &str, word: &str, slot: &str, lambda: Real, value: Real) {
        self.0.entry((kind.into(), word.into(), slot.into())).or_default().push(SeriesPoint { lambda, value });
    }

    fn series(&self, kind: &str, word: &str, slot: &str) -> Series {
        let pts = self.0.get(&(kind.to_string(), word.to_string(), slot.to_string())).cloned().unwrap_or_default();
        Series::new(kind, word, slot, pts)
    }

    fn keys(&self) -> Vec<(String, String, String)> {
        self.0.keys().cloned().collect()
    }
}

fn word_name(k: &ModeKey) -> String {
    k.label()
}

// ---------------------------------------------------------------- Ricci scan

fn sym_dist(a: Option<&Sym4>, b: Option<&Sym4>) -> Real {
    match (a, b) {
        (Some(x), Some(y)) => (*x - *y).max_abs(),
        (Some(x), None) | (None, Some(x)) => x.max_abs(),
        (None, None) => 0.0,
    }
}

/// Words whose O(1) Ricci amplitude is carried by an ablated slot.
fn ablated_words(scn: &Scenario) -> Vec<ModeKey> {
    let mut out = Vec::new();
    if !scn.include.f22 {
        out.extend((0..scn.phases.len()).map(|i| ModeKey::cos(HarmonicWord::single(i, 2))));
    }
    if !scn.include.f2pm {
        out.extend(canonical_pairs(scn.phases.len()).into_iter().map(|(a, b, s)| ModeKey::cos(HarmonicWord::pair(a, b, s).0)));
    }
    out
}

/// FD Ricci harmonics of `g_lambda` against the analytic order-0 prediction.
///
/// Series: `ricci/<word>/residual` (max over points of the amplitude error),
/// `ricci/all/residual` with an order check (informational under ablation), and for ablated slots
/// `ricci/<word>/{amplitude,prediction,ablation_rel}`.
pub fn ricci_scan(scn: &Scenario) -> LabResult<ScanReport> {
    scn.validate()?;
    let labels = scn.labels();
    let zeros = vec![0.0; labels.len()];
    let targets = ablated_words(scn);
    let mut lad = Ladder::default();
    for &lam in &scn.lambdas {
        let st = scn.stack(lam)?;
        let h = scn.grid_h(lam)?;
        let phases = st.phase_list();
        let per_point: Vec<LabResult<(HarmonicMap<Sym4>, HarmonicMap<Sym4>)>> = scn
            .points
            .par_iter()
            .map(|x| {
                let p = [0.0, x[0], x[1], x[2]];
                let base = scn.base_angles(&phases, &p, lam)?;
                let meas = torus_modes(&labels, &base, scn.torus, |off| {
                    ricci_rule(&|q: &Vec4| st.metric_with_offsets(q, off), &p, h)
                })?;
                let pred = r0_analytic(&st, &zeros, &p, scn.slow_h)?;
                Ok((meas, pred))
            })
            .collect();
        let mut worst: BTreeMap<ModeKey, Real> = BTreeMap::new();
        let mut abl: BTreeMap<ModeKey, (Real, Real, Real)> = BTreeMap::new();
        for r in per_point {
            let (meas, pred) = r?;
            for k in meas.keys().chain(pred.keys()) {
                let d = sym_dist(meas.get(k), pred.get(k));
                let e = worst.entry(k.clone()).or_insert(0.0);
                *e = e.max(d);
            }
            for k in &targets {
                let m = meas.get(k).map_or(0.0, |v| v.max_abs());
                let p = pred.get(k).map_or(0.0, |v| v.max_abs());
                let rel = sym_dist(meas.get(k), pred.get(k)) / p.max(Real::MIN_POSITIVE);
                let e = abl.entry(k.clone()).or_insert((0.0, 0.0, 0.0));
                *e = (e.0.max(m), e.1.max(p), e.2.max(rel));
            }
        }
        let all = worst.values().copied().fold(0.0, Real::max);
        lad.push("ricci", "all", "residual", lam, all);
        for (k, v) in &worst {
            lad.push("ricci", &word_name(k), "residual", lam, *v);
        }
        for (k, (m, p, rel)) in &abl {
            lad.push("ricci", &word_name(k), "amplitude", lam, *m);
            lad.push("ricci", &word_name(k), "prediction", lam, *p);
            lad.push("ricci", &word_name(k), "ablation_rel", lam, *rel);
        }
    }
    let th = &scn.thresholds;
    let mut rep = ScanReport::new(scn.rng_seed);
    for (kind, word, slot) in lad.keys() {
        let s = lad.series(&kind, &word, &slot);
        let s = match (word.as_str(), slot.as_str()) {
            ("all", "residual") => s.with_order_check((scn.include == Include::default()).then_some(th.order)),
            (_, "residual") => s.with_order_check(None),
            (_, "ablation_rel") => s.with_final_bound(th.ablation_rel),
            _ => s,
        };
        rep.series.push(s);
    }
    Ok(rep)
}

// ---------------------------------------------------------------- constraint scan

/// `[H, M_1, M_2, M_3]` of `(g, k)` at `x`.
fn hm_at(cd: &ConformalData, x: &Vec3, h: Real) -> LabResult<[Real; 4]> {
    let full = cd.flags.phi2 || cd.flags.x2;
    let r = if full {
        constraint_residual(&|y: &Vec3| cd.g(y), &|y: &Vec3| cd.k(y), x, h)?
    } else {
        constraint_residual(&|y: &Vec3| cd.gamma(y), &|y: &Vec3| cd.kappa(y), x, h)?
    };
    Ok([r.h, r.m[0], r.m[1], r.m[2]])
}

/// Constraint harmonics of the oscillatory data against the analytic leading blocks.
///
/// A block is expected to vanish when its conformal unknown is included
/// (`phi2` for `H`, `x2` for `M`) and to equal the analytic block otherwise;
/// the constant word always equals the analytic constant block. Series:
/// `constraint/<word>/{H,M}` residuals, `constraint/all/{H,M}` with order
/// checks and, for ablated unknowns, `constraint_ablation/all/{H,M}`.
pub fn constraint_scan(scn: &Scenario) -> LabResult<ScanReport> {
    scn.validate()?;
    let slice = scn.slice()?;
    let labels = scn.labels();
    let phases: Vec<Phase> = slice.seed.phases.iter().map(|s| s.phase.clone()).collect();
    let flags = scn.conformal;
    let mut lad = Ladder::default();
    let lead: Vec<_> = scn.points.par_iter().map(|x| constraint_leading(&slice, x)).collect::<LabResult<Vec<_>>>()?;
    for &lam in &scn.lambdas {
        let h = scn.grid_h(lam)?;
        let cd = ConformalData::new(slice.clone(), lam, flags)?;
        let meas: Vec<HarmonicMap<[Real; 4]>> = scn
            .points
            .par_iter()
            .map(|x| {
                let p = [0.0, x[0], x[1], x[2]];
                let base = scn.base_angles(&phases, &p, lam)?;
                torus_modes(&labels, &base, scn.torus, |off| {
                    // angles are pinned by the offsets relative to u/lambda
                    let c = cd.clone().with_offsets(off.to_vec());
                    hm_at(&c, x, h)
                })
            })
            .collect::<LabResult<Vec<_>>>()?;
        let mut worst: BTreeMap<(ModeKey, usize), Real> = BTreeMap::new();
        let mut abl = [0.0 as Real; 2];
        for (m, l) in meas.iter().zip(&lead) {
            let mut keys: Vec<&ModeKey> = m.keys().collect();
            keys.extend(l.h.keys());
            keys.extend(l.m.keys());
            keys.sort();
            keys.dedup();
            let hmax = l.h.iter().filter(|(k, _)| k.word.is_some()).map(|(_, v)| v.abs()).fold(0.0, Real::max);
            let mmax = l.m.iter().filter(|(k, _)| k.word.is_some()).map(|(_, v)| max_abs(v)).fold(0.0, Real::max);
            for k in keys {
                let v = m.get(k).copied().unwrap_or([0.0; 4]);
                let osc = k.word.is_some();
                let eh = if osc && flags.phi2 { 0.0 } else { l.h.get(k).copied().unwrap_or(0.0) };
                let em = if osc && flags.x2 { [0.0; 3] } else { l.m.get(k).copied().unwrap_or([0.0; 3]) };
                let dh = (v[0] - eh).abs();
                let dm = max_abs(&[v[1] - em[0], v[2] - em[1], v[3] - em[2]]);
                for (slot, d) in [(0, dh), (1, dm)] {
                    let e = worst.entry((k.clone(), slot)).or_insert(0.0);
                    *e = e.max(d);
                }
                // relative agreement with the analytic blocks on significant words
                if osc && !flags.phi2 && eh.abs() > 1e-3 * hmax {
                    abl[0] = abl[0].max(dh / eh.abs());
                }
                if osc && !flags.x2 && max_abs(&em) > 1e-3 * mmax {
                    abl[1] = abl[1].max(dm / max_abs(&em));
                }
            }
        }
        let names = ["H", "M"];
        let mut all = [0.0 as Real; 2];
        for ((k, slot), v) in &worst {
            all[*slot] = all[*slot].max(*v);
            lad.push("constraint", &word_name(k), names[*slot], lam, *v);
        }
        for s in 0..2 {
            lad.push("constraint", "all", names[s], lam, all[s]);
        }
        if !flags.phi2 {
            lad.push("constraint_ablation", "all", "H", lam, abl[0]);
        }
        if !flags.x2 {
            lad.push("constraint_ablation", "all", "M", lam, abl[1]);
        }
    }
    let th = &scn.thresholds;
    let mut rep = ScanReport::new(scn.rng_seed);
    for (kind, word, slot) in lad.keys() {
        let s = lad.series(&kind, &word, &slot);
        let s = match (kind.as_str(), word.as_str()) {
            ("constraint", "all") => s.with_order_check((flags.phi2 && flags.x2).then_some(th.order)),
            ("constraint", _) => s.with_order_check(None),
            ("constraint_ablation", _) => s.with_final_bound(th.ablation_rel),
            _ => s,
        };
        rep.series.push(s);
    }
    Ok(rep)
}

// ---------------------------------------------------------------- initial data audit

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct InitialDataAudit {
    pub v21: Real,
    pub v22: Real,
    pub correctors: CorrectorAudit,
    pub support_violation: Real,
    pub points: usize,
}

/// Slice polarization and corrector fixed-point residuals over the scenario points.
pub fn initial_data_audit(scn: &Scenario) -> LabResult<InitialDataAudit> {
    scn.validate()?;
    let sp = scn.slice()?;
    let per: Vec<LabResult<(Real, Real, CorrectorAudit)>> = scn
        .points
        .par_iter()
        .map(|x| {
            let (mut v21, mut v22) = (0.0 as Real, 0.0 as Real);
            for a in 0..sp.n_phases() {
                let v = sp.v_audit(a, x)?;
                v21 = v21.max(max_abs(&v.v21));
                v22 = v22.max(max_abs(&v.v22));
            }
            Ok((v21, v22, sp.corrector_audit(x)?))
        })
        .collect();
    let mut out = InitialDataAudit { points: scn.points.len(), ..Default::default() };
    for r in per {
        let (a, b, c) = r?;
        out.v21 = out.v21.max(a);
        out.v22 = out.v22.max(b);
        let m = &mut out.correctors;
        m.ga2pm = m.ga2pm.max(c.ga2pm);
        m.ka11 = m.ka11.max(c.ka11);
        m.ka12_fixed = m.ka12_fixed.max(c.ka12_fixed);
        m.ka12_literal = m.ka12_literal.max(c.ka12_literal);
        m.ka1pm = m.ka1pm.max(c.ka1pm);
    }
    let r = scn.radius;
    let probe: Vec<Vec3> = (0..64)
        .map(|i| {
            let a = i as Real * 0.7;
            let s = 1.0 + 0.5 * ((i % 4) as Real);
            [s * r * a.cos(), s * r * a.sin() * 0.6, s * r * 0.8 * (0.3 * a).sin()]
        })
        .collect();
    out.support_violation = sp.seed.support_violation(&probe);
    Ok(out)
}

impl InitialDataAudit {
    pub fn to_report(&self, th: &Thresholds, rng_seed: u64) -> ScanReport {
        let mut rep = ScanReport::new(rng_seed);
        let one = |slot: &str, v: Real| Series::new("initial_data", "all", slot, vec![SeriesPoint { lambda: 0.0, value: v }]);
        rep.series.push(one("v21", self.v21).with_bound(th.slice_polarization));
        rep.series.push(one("v22", self.v22).with_bound(th.slice_polarization));
        rep.series.push(one("ga2pm", self.correctors.ga2pm).with_bound(th.correctors));
        rep.series.push(one("ka11", self.correctors.ka11).with_bound(th.correctors));
        rep.series.push(one("ka12", self.correctors.ka12_fixed).with_bound(th.correctors));
        rep.series.push(one("ka12_literal", self.correctors.ka12_literal));
        rep.series.push(one("ka1pm", self.correctors.ka1pm).with_bound(th.correctors));
        rep.series.push(one("support", self.support_violation).with_bound(0.0));
        rep
    }
}

// ---------------------------------------------------------------- transport audit

/// Maximal propagation defects of one transported phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportAudit {
    pub phase: usize,
    pub footpoints: usize,
    pub t_end: Real,
    pub pol: Real,
    pub l_lbar: Real,
    pub energy: Real,
}

/// Transports every scenario profile from `t = 0` to `t_end` along its
/// characteristics from random footpoints in `B_{R/2}` and audits the
/// polarization, `F1(L, Lbar)` and energy laws.
pub fn transport_audit(scn: &Scenario, footpoints: usize, t_end: Real) -> LabResult<Vec<TransportAudit>> {
    scn.validate()?;
    if footpoints == 0 || !(t_end > 0.0) {
        return Err(LabError::Config(format!("{footpoints} footpoints to t = {t_end}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scn.rng_seed);
    let r = 0.5 * scn.radius;
    let mut feet = Vec::with_capacity(footpoints);
    while feet.len() < footpoints {
        let x: Vec3 = std::array::from_fn(|_| rng.gen_range(-r..r));
        if dot(&x, &x) < r * r {
            feet.push(x);
        }
    }
    let g0 = scn.background_field();
    let mut out = Vec::with_capacity(scn.phases.len());
    for i in 0..scn.phases.len() {
        let u = scn.phase(i)?;
        let f1 = scn.f1_field(i)?;
        let rho = scn.density(i);
        let prob = TransportProblem { phase: &u, g0: &g0, dt: 0.05_f64.min(t_end / 4.0), t_end, h: scn.slow_h, domain: None };
        let t0 = |x: &Vec3| f1.eval(&[0.0, x[0], x[1], x[2]]);
        let zero = |_: &Vec4| Ok(Sym4::zero());
        let carried = solve_transport(&prob, &feet, &t0, &zero)?;
        let dust = solve_scalar_transport(&prob, &feet, &|x: &Vec3| Ok(rho.at(x)), &|_: &Vec4| Ok(0.0))?;
        let a = propagation_audit(&carried, &dust, &u, &g0)?;
        out.push(TransportAudit { phase: i, footpoints, t_end, pol: a.max_pol(), l_lbar: a.max_l_lbar(), energy: a.max_energy() });
    }
    Ok(out)
}

// ---------------------------------------------------------------- weak limits

/// 8-point Gauss-Legendre nodes and weights on `[-1, 1]`.
const GL_X: [Real; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_W: [Real; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

fn gauss_nodes(lo: Real, hi: Real, panels: usize) -> Vec<(Real, Real)> {
    let mut out = Vec::with_capacity(8 * panels);
    let w = (hi - lo) / panels as Real;
    for p in 0..panels {
        let c = lo + (p as Real + 0.5) * w;
        for (x, wt) in GL_X.iter().zip(GL_W.iter()) {
            out.push((c - 0.5 * w * x, 0.5 * w * wt));
            out.push((c + 0.5 * w * x, 0.5 * w * wt));
        }
    }
    out
}

type ScalarRule = Arc<dyn Fn(&Vec3) -> Real + Send + Sync>;
type CovectorRule = Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync>;

/// Oscillatory integral `I(lambda) = int T((z - z(c))/lambda) psi dx` over the
/// half box `{s >= 0}` in the frame `(n, t1, t2)` at `c`, `n = grad z(c)/|grad z(c)|`
/// (`e_x` when `grad z(c) = 0`), `|s|, |t| <= half_width`.
#[derive(Clone)]
pub struct WeakLimitCase {
    pub name: String,
    pub word: ScalarRule,
    pub grad: CovectorRule,
    pub trig: Trig,
    pub psi: ScalarRule,
    pub center: Vec3,
    pub half_width: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakLimitResult {
    pub name: String,
    pub values: Vec<SeriesPoint>,
    pub fit: OrderFit,
    /// `grad z` vanishes (relative to its maximum) somewhere in the domain.
    pub stationary: bool,
    pub min_grad: Real,
}

fn gaussian(center: Vec3, sigma: Real) -> ScalarRule {
    Arc::new(move |x: &Vec3| {
        let r2: Real = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
        (-r2 / (sigma * sigma)).exp()
    })
}

impl WeakLimitCase {
    /// Slice word `z = sum k_A u_A(0, x)` of a scenario with a Gaussian test function.
    pub fn scenario_word(scn: &Scenario, word: &HarmonicWord, trig: Trig) -> LabResult<Self> {
        let phases: Vec<Phase> = (0..scn.phases.len()).map(|i| scn.phase(i)).collect::<LabResult<_>>()?;
        for &(l, _) in &word.coeffs {
            if l >= phases.len() {
                return Err(LabError::UnknownPhase(l));
            }
        }
        let (w1, p1) = (word.clone(), phases.clone());
        let (w2, p2) = (word.clone(), phases);
        let sigma = 0.5 * scn.radius;
        let mut case = WeakLimitCase {
            name: word.to_string(),
            word: Arc::new(move |x: &Vec3| w1.eval(&p1, &[0.0, x[0], x[1], x[2]]).unwrap_or(Real::NAN)),
            grad: Arc::new(move |x: &Vec3| {
                let d = w2.differential(&p2, &[0.0, x[0], x[1], x[2]]).unwrap_or([Real::NAN; 4]);
                [d[1], d[2], d[3]]
            }),
            trig,
            psi: gaussian([0.0; 3], 1.0),
            center: [0.0; 3],
            half_width: 5.0 * sigma,
        };
        // test function centred inside the half box so that neither the cos
        // nor the sin integral vanishes by symmetry
        case.psi = gaussian(scale(sigma, &case.frame()[0]), sigma);
        Ok(case)
    }

    /// `z = x1^2 / 2`, stationary on the plane `x1 = 0`.
    pub fn stationary_control(half_width: Real) -> Self {
        WeakLimitCase {
            name: "stationary".into(),
            word: Arc::new(|x: &Vec3| 0.5 * x[0] * x[0]),
            grad: Arc::new(|x: &Vec3| [x[0], 0.0, 0.0]),
            trig: Trig::Cos,
            psi: gaussian([0.0; 3], 0.25 * half_width),
            center: [0.0; 3],
            half_width,
        }
    }

    fn frame(&self) -> [Vec3; 3] {
        let g = (self.grad)(&self.center);
        let ng = dot(&g, &g).sqrt();
        let n = if ng > 1e-12 { scale(1.0 / ng, &g) } else { [1.0, 0.0, 0.0] };
        let pick = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let t1 = {
            let v = crate::tensor::axpy(&pick, -dot(&pick, &n), &n);
            scale(1.0 / dot(&v, &v).sqrt(), &v)
        };
        let t2 = [n[1] * t1[2] - n[2] * t1[1], n[2] * t1[0] - n[0] * t1[2], n[0] * t1[1] - n[1] * t1[0]];
        [n, t1, t2]
    }

    fn point(&self, fr: &[Vec3; 3], c: &Vec3) -> Vec3 {
        std::array::from_fn(|a| self.center[a] + c[0] * fr[0][a] + c[1] * fr[1][a] + c[2] * fr[2][a])
    }

    fn ranges(&self) -> [(Real, Real); 3] {
        let w = self.half_width;
        [(0.0, w), (-w, w), (-w, w)]
    }

    /// Minimal and maximal `|grad z|` on a coarse grid of the domain.
    fn grad_range(&self) -> (Real, Real, [Real; 3]) {
        let fr = self.frame();
        let rg = self.ranges();
        let n = 17;
        let (mut lo, mut hi) = (Real::INFINITY, 0.0 as Real);
        let mut along = [0.0 as Real; 3];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c: Vec3 = std::array::from_fn(|a| {
                        let t = [i, j, k][a] as Real / (n - 1) as Real;
                        rg[a].0 + t * (rg[a].1 - rg[a].0)
                    });
                    let g = (self.grad)(&self.point(&fr, &c));
                    let m = dot(&g, &g).sqrt();
                    lo = lo.min(m);
                    hi = hi.max(m);
                    for a in 0..3 {
                        along[a] = along[a].max(dot(&g, &fr[a]).abs());
                    }
                }
            }
        }
        (lo, hi, along)
    }

    pub fn integral(&self, lambda: Real) -> LabResult<Real> {
        if !(lambda > 0.0) {
            return Err(LabError::InvalidScale(lambda));
        }
        let fr = self.frame();
        let rg = self.ranges();
        let (_, _, along) = self.grad_range();
        let z0 = (self.word)(&self.center);
        let nodes: Vec<Vec<(Real, Real)>> = (0..3)
            .map(|a| {
                let len = rg[a].1 - rg[a].0;
                let panels = ((len * along[a] / lambda).ceil() as usize).max(4);
                gauss_nodes(rg[a].0, rg[a].1, panels)
            })
            .collect();
        let total: Real = nodes[0]
            .par_iter()
            .map(|&(s, ws)| {
                let mut acc = 0.0;
                for &(t1, w1) in &nodes[1] {
                    for &(t2, w2) in &nodes[2] {
                        let x = self.point(&fr, &[s, t1, t2]);
                        acc += w1 * w2 * self.trig.eval(((self.word)(&x) - z0) / lambda) * (self.psi)(&x);
                    }
                }
                ws * acc
            })
            .sum();
        if !total.is_finite() {
            return Err(LabError::Diverged { t: lambda, norm: total });
        }
        Ok(total)
    }
}

/// `|I(lambda)|` over the ladder with an order fit; stationary cases are flagged.
pub fn weak_limit_decay(case: &WeakLimitCase, lambdas: &[Real]) -> LabResult<WeakLimitResult> {
    let (lo, hi, _) = case.grad_range();
    let mut values = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        values.push(SeriesPoint { lambda: l, value: case.integral(l)?.abs() });
    }
    let fit = order_fit(&values.iter().map(|p| (p.lambda, p.value)).collect::<Vec<_>>())?;
    Ok(WeakLimitResult { name: case.name.clone(), values, fit, stationary: !(lo > 1e-6 * hi), min_grad: lo })
}

impl WeakLimitResult {
    /// Non-stationary words must decay with `order >= thr.order`; stationary
    /// controls must be flagged and decay no faster than `thr.stationary_order`.
    pub fn to_series(&self, th: &Thresholds) -> Series {
        let mut s = Series::new("weak_limit", &self.name, if self.stationary { "stationary" } else { "integral" }, self.values.clone());
        s.fit = Some(self.fit);
        s.pass = Some(if self.stationary { self.fit.order <= th.stationary_order } else { self.fit.order >= th.order });
        s
    }
}

// ---------------------------------------------------------------- Burnett surrogate

/// Sup-norm of `(g_lambda - g0)/lambda` on the scenario box lattice and
/// constant-word leakage of `d(g_lambda - g0)` under a Gaussian-windowed
/// mode fit along the scenario line.
pub fn burnett_scan(scn: &Scenario) -> LabResult<ScanReport> {
    scn.validate()?;
    let l = &scn.line;
    let dir = unit_direction(l.direction)?;
    let words = w_lattice(&scn.labels());
    let mut rep = ScanReport::new(scn.rng_seed);
    let mut sup = Vec::new();
    let mut leak = Vec::new();
    for &lam in &scn.lambdas {
        let st = scn.stack(lam)?;
        let h = scn.grid_h(lam)?;
        let phases = st.phase_list();
        let g0 = &st.g0;
        let diff = |q: &Vec4| -> LabResult<Sym4> { Ok(st.metric_at(q)? - g0.value.eval(q)?) };

        let lattice = scn.sup_box.lattice(lam)?;
        let probes: Vec<LabResult<(Real, bool)>> = lattice
            .par_iter()
            .map(|x| {
                let p = [0.0, x[0], x[1], x[2]];
                Ok((diff(&p)?.max_abs() / lam, assemble_metric(&st, &p).is_ok()))
            })
            .collect();
        let (mut m, mut bad) = (0.0 as Real, 0usize);
        for r in probes {
            let (v, ok) = r?;
            m = m.max(v);
            bad += usize::from(!ok);
        }
        if bad > 0 {
            rep.meta.notes.push(format!("lambda {lam}: signature lost at {bad} of {} box samples", lattice.len()));
        }
        sup.push(SeriesPoint { lambda: lam, value: m });

        let at = |s: Real| -> Vec4 { [0.0, l.origin[0] + s * dir[0], l.origin[1] + s * dir[1], l.origin[2] + s * dir[2]] };
        let mut rate: Real = 0.0;
        for w in &words {
            let d = w.differential(&phases, &at(0.0))?;
            rate = rate.max((d[1] * dir[0] + d[2] * dir[1] + d[3] * dir[2]).abs());
        }
        let ds = TAU * lam / (l.samples_per_period as Real * rate.max(1e-12)) * 0.999;
        let n = (2.0 * l.half_length / ds).ceil() as usize + 1;
        let ss: Vec<Real> = (0..n).map(|j| -l.half_length + 2.0 * l.half_length * j as Real / (n - 1) as Real).collect();
        let rows: Vec<[Sym4; 4]> =
            ss.par_iter().map(|&s| crate::geometry::grad(&diff, &at(s), h)).collect::<LabResult<_>>()?;
        let angles: Vec<Vec<Real>> = words
            .iter()
            .map(|w| ss.iter().map(|&s| w.eval(&phases, &at(s)).map(|v| v / lam)).collect::<LabResult<Vec<_>>>())
            .collect::<LabResult<_>>()?;
        let weights: Vec<Real> = ss.iter().map(|s| (-0.5 * (s / l.window).powi(2)).exp()).collect();
        let (mut lead, mut cst) = (0.0 as Real, 0.0 as Real);
        for mu in 0..4 {
            for a in 0..4 {
                for b in a..4 {
                    let vals: Vec<Real> = rows.iter().map(|r| r[mu].get(a, b)).collect();
                    let fit = mode_fit(&vals, &angles, Some(&weights))?;
                    for (c, s) in fit.cos.iter().zip(&fit.sin) {
                        lead = lead.max(c.hypot(*s));
                    }
                    cst = cst.max(fit.constant.abs());
                }
            }
        }
        leak.push(SeriesPoint { lambda: lam, value: cst / lead.max(Real::MIN_POSITIVE) });
    }
    let th = &scn.thresholds;
    let mut s = Series::new("burnett", "all", "sup_over_lambda", sup);
    let (mx, mn) = s.points.iter().fold((0.0 as Real, Real::INFINITY), |(a, b), p| (a.max(p.value), b.min(p.value)));
    s.pass = Some(mn > 0.0 && mx / mn - 1.0 <= th.burnett_rel);
    rep.series.push(s);
    rep.series.push(Series::new("burnett", "all", "constant_leakage", leak).with_bound(th.leakage));
    Ok(rep)
}

// ---------------------------------------------------------------- identity suite

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub samples: usize,
    pub max_residual: Real,
    pub tolerance: Real,
    pub pass: bool,
}

impl IdentityCheck {
    fn new(name: &str, samples: usize, max_residual: Real, tolerance: Real) -> Self {
        IdentityCheck { name: name.into(), samples, max_residual, tolerance, pass: max_residual <= tolerance }
    }
}

fn random_sym<const D: usize>(rng: &mut ChaCha8Rng) -> Sym<D> {
    Sym::from_fn(|_, _| rng.gen_range(-1.0..1.0))
}

fn random_spd3(rng: &mut ChaCha8Rng) -> MetricAt<3> {
    loop {
        let a: Sym3 = random_sym(rng);
        if let Ok(m) = crate::geometry::riemann_at(Sym3::identity() + a * 0.3) {
            return m;
        }
    }
}

/// Transparency of `I0pm` on random admissible two-phase samples.
pub fn check_transparency(samples: usize, seed: u64, tol: Real) -> IdentityCheck {
    let worst = (0..samples)
        .into_par_iter()
        .map(|i| {
            let smp = sample_admissible(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), 2);
            let (a, b) = (&smp.phases[0].wave, &smp.phases[1].wave);
            let s = if i % 2 == 0 { 1 } else { -1 };
            let im = i0pm(a, b, s, &smp.g);
            max_abs(&pol(&im, &pair_differential(a, b, s), &smp.g)) / (1.0 + im.max_abs())
        })
        .reduce(|| 0.0, Real::max);
    IdentityCheck::new("transparency", samples, worst, tol)
}

/// `P_v(P_v^{-1}(A)) = A` for `A = P_v(S)` with random `S` and non-null `v`.
pub fn check_pv_round_trip(samples: usize, seed: u64, tol: Real) -> IdentityCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let mut worst: Real = 0.0;
    let mut done = 0;
    while done < samples {
        let g = match MetricAt::new(minkowski() + random_sym::<4>(&mut rng) * 0.05) {
            Ok(g) => g,
            Err(_) => continue,
        };
        let dv: Vec4 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        if g.ip_inv(&dv, &dv).abs() < 0.05 {
            continue;
        }
        let a = pv_apply(&random_sym::<4>(&mut rng), &dv, &g);
        let back = pv_solve(&a, &dv, &g).map(|s| pv_apply(&s, &dv, &g));
        let r = match back {
            Ok(b) => (b - a).max_abs() / a.max_abs().max(Real::MIN_POSITIVE),
            Err(_) => Real::INFINITY,
        };
        worst = worst.max(r);
        done += 1;
    }
    IdentityCheck::new("pv_round_trip", samples, worst, tol)
}

/// Idempotence and range laws of `Pbar1`, `Pbar2`.
pub fn check_pbar(samples: usize, seed: u64, tol: Real) -> Vec<IdentityCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let (mut idem, mut range): (Real, Real) = (0.0, 0.0);
    let mut done = 0;
    while done < samples {
        let g = random_spd3(&mut rng);
        let dv: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        if dot(&dv, &dv) < 0.01 {
            continue;
        }
        let s: Sym3 = random_sym(&mut rng);
        let (Ok(p1), Ok(p2), Ok((nl, nu))) = (pbar1(&s, &dv, &g), pbar2(&s, &dv, &g), slice_normal(&dv, &g)) else {
            continue;
        };
        let (Ok(p11), Ok(p22)) = (pbar1(&p1, &dv, &g), pbar2(&p2, &dv, &g)) else { continue };
        idem = idem.max((p11 - p1).max_abs()).max((p22 - p2).max_abs());
        range = range.max((g.trace(&p1) - p1.contract2(&nu, &nu)).abs());
        let tr = g.trace(&p2);
        let pn = p2.contract1(&nu);
        for i in 0..3 {
            range = range.max((tr * nl[i] - pn[i]).abs());
        }
        done += 1;
    }
    vec![IdentityCheck::new("pbar_idempotence", samples, idem, tol), IdentityCheck::new("pbar_range", samples, range, tol)]
}

/// `|Fbar1|^2 = 8 F^2` for random seeds and null-frame laws on random samples.
pub fn check_seed_energy(samples: usize, seed: u64, tol: Real) -> Vec<IdentityCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0004);
    let (mut energy, mut frame): (Real, Real) = (0.0, 0.0);
    for i in 0..samples {
        let z: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let Ok(u) = unit_direction(z).and_then(|z| plane_phase(0, z)) else { continue };
        let f: Real = rng.gen_range(0.0..2.0);
        let a: Real = rng.gen_range(0.0..TAU);
        let x: Vec3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let sp = SeedPhase::angled(u, a, Field::constant(f)).and_then(|s| Seed::new(vec![s], None));
        let r = sp.and_then(|seed| SliceProblem::new(LorentzMetricField::minkowski(), seed, 1e-3).seed_tensor(0, &x));
        energy = energy.max(match r {
            Ok(fb) => (fb.frob().powi(2) - 8.0 * f * f).abs(),
            Err(_) => Real::INFINITY,
        });
        let smp = sample_admissible(seed.wrapping_add(i as u64), 1);
        frame = frame.max(smp.phases[0].frame.defect(&smp.g));
    }
    vec![IdentityCheck::new("seed_energy", samples, energy, tol), IdentityCheck::new("frame_laws", samples, frame, tol)]
}

/// Transported `F1` and dust on flat characteristics over `t in [0, 1]`:
/// polarization, `F1(L, Lbar)` and `|F1|^2 - 8 F^2`.
pub fn check_transport(footpoints: usize, seed: u64, tol: Real) -> LabResult<IdentityCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0005);
    let g0 = LorentzMetricField::minkowski();
    let z = unit_direction([1.0, 2.0, -0.5])?;
    let u = plane_phase(0, z)?;
    let g = MetricAt::new(minkowski())?;
    let frame = null_frame_at(&u.du(&[0.0; 4])?, &g)?;
    let a: Real = rng.gen_range(0.0..TAU);
    let base = tt_tensor(&frame, 2.0 * a.cos(), 2.0 * a.sin(), &g);
    let rho = |x: &Vec3| 0.7 + 0.2 * (x[0] - 0.5 * x[1] + x[2]).sin();
    let feet: Vec<Vec3> = (0..footpoints).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
    let prob = TransportProblem { phase: &u, g0: &g0, dt: 0.05, t_end: 1.0, h: 1e-3, domain: None };
    let t0 = move |x: &Vec3| Ok(base * rho(x));
    let zero = |_: &Vec4| Ok(Sym4::zero());
    let f1 = solve_transport(&prob, &feet, &t0, &zero)?;
    let dust = solve_scalar_transport(&prob, &feet, &|x: &Vec3| Ok(rho(x)), &|_: &Vec4| Ok(0.0))?;
    let audit = propagation_audit(&f1, &dust, &u, &g0)?;
    let worst = audit.max_energy().max(audit.max_pol()).max(audit.max_l_lbar());
    Ok(IdentityCheck::new("transport_energy", footpoints, worst, tol))
}

/// Literal order-0 pieces recombine into the analytic harmonic blocks.
pub fn check_order0_recombination(tol: Real) -> LabResult<IdentityCheck> {
    let scn = Scenario::default();
    let st = scn.stack(0.1)?;
    let mut worst: Real = 0.0;
    for x in &scn.points {
        let p = [0.0, x[0], x[1], x[2]];
        let r0 = r0_analytic(&st, &[0.0, 0.0], &p, 1e-2)?;
        let pc = order0_pieces(&st, &p, 1e-2)?;
        for (i, ph) in pc.phases.iter().enumerate() {
            let want = &r0[&ModeKey::sin(HarmonicWord::single(ph.label, 1))];
            worst = worst.max((pc.sin_block(i) - *want).max_abs() / (1.0 + want.max_abs()));
        }
        for (j, pr) in pc.pairs.iter().enumerate() {
            let want = &r0[&ModeKey::cos(pr.word.clone())];
            worst = worst.max((pc.mixed_block(j) - *want).max_abs() / (1.0 + want.max_abs()));
        }
    }
    Ok(IdentityCheck::new("order0_recombination", scn.points.len(), worst, tol))
}

/// Wave-gauge split against the direct FD Ricci tensor on random smooth
/// metrics, and the pp-wave value `R_uu = -2` for `H = y^2 + z^2`.
pub fn check_curvature(samples: usize, seed: u64) -> LabResult<Vec<IdentityCheck>> {
    let p = CoordinatePoint::new(0.3, [0.2, 0.4, -0.7]);
    let worst = (0..samples)
        .into_par_iter()
        .map(|i| {
            let g = random_smooth_metric(seed.wrapping_add(i as u64), 0.1);
            let d = ricci_direct(&g, &p, 1e-2)?;
            let b = ricci_gwc(&g, &p, 1e-2)?;
            Ok((d - b.total).max_abs())
        })
        .collect::<LabResult<Vec<Real>>>()?
        .into_iter()
        .fold(0.0, Real::max);
    let dust = pp_wave_metric(|y, z| y * y + z * z);
    let r = ricci_direct(&dust, &p, 1e-2)?;
    let ruu = 0.25 * (r.get(0, 0) - 2.0 * r.get(0, 1) + r.get(1, 1));
    Ok(vec![
        IdentityCheck::new("ricci_gwc_vs_direct", samples, worst, 1e-9),
        IdentityCheck::new("pp_wave_r_uu", 1, (ruu + 2.0).abs(), 1e-6),
    ])
}

/// All pointwise identity checks.
pub fn identity_suite(samples: usize, seed: u64) -> LabResult<Vec<IdentityCheck>> {
    let tol = Thresholds::default().identity;
    let mut out = vec![check_transparency(samples, seed, tol), check_pv_round_trip(samples, seed, tol)];
    out.extend(check_pbar(samples, seed, tol));
    out.extend(check_seed_energy(samples, seed, tol));
    out.push(check_transport(8, seed, 1e-11)?);
    out.push(check_order0_recombination(1e-10)?);
    out.extend(check_curvature(samples.min(100), seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn ladder(order: Real, c: Real) -> Vec<(Real, Real)> {
        [0.1, 0.05, 0.025, 0.0125].iter().map(|&l| (l, c * Real::powf(l, order))).collect()
    }

    #[test]
    fn order_fit_recovers_powers() {
        for order in [1.0, 2.0] {
            let f = order_fit(&ladder(order, 3.0)).unwrap();
            assert!((f.order - order).abs() < 1e-12, "{f:?}");
            assert!(f.r2 > 1.0 - 1e-12);
        }
    }

    #[test]
    fn order_fit_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> =
            ladder(1.0, 1.0).into_iter().map(|(l, r)| (l, r * (1.0 + 0.05 * rng.gen_range(-1.0..1.0)))).collect();
        let f = order_fit(&pts).unwrap();
        assert!((0.9..=1.1).contains(&f.order), "{f:?}");
    }

    #[test]
    fn order_fit_rejects_short_ladders_and_clips() {
        assert!(order_fit(&[(0.1, 1.0), (0.05, 0.5)]).is_err());
        let f = order_fit(&[(0.1, 1e-3), (0.05, 0.0), (0.025, 1e-5)]).unwrap();
        assert!(f.clipped);
    }

    fn line_angles(n: usize, rates: &[Real]) -> Vec<Vec<Real>> {
        rates.iter().map(|r| (0..n).map(|i| r * i as Real * 0.05).collect()).collect()
    }

    #[test]
    fn mode_fit_single_cosine() {
        let ang = line_angles(800, &[1.0]);
        let vals: Vec<Real> = ang[0].iter().map(|a| 0.5 + 3.0 * a.cos()).collect();
        let f = mode_fit(&vals, &ang, None).unwrap();
        assert!((f.constant - 0.5).abs() < 1e-10);
        assert!((f.cos[0] - 3.0).abs() < 1e-10 && f.sin[0].abs() < 1e-10);
    }

    #[test]
    fn mode_fit_product_splits_into_sum_and_difference() {
        // cos(ua) cos(ub) = (cos(ua + ub) + cos(ua - ub)) / 2
        let (ra, rb) = (1.0, 0.618_033_988_749_895);
        let n = 1200;
        let ang = line_angles(n, &[ra + rb, ra - rb]);
        let vals: Vec<Real> = (0..n).map(|i| (ra * i as Real * 0.05).cos() * (rb * i as Real * 0.05).cos()).collect();
        let f = mode_fit(&vals, &ang, None).unwrap();
        assert!((f.cos[0] - 0.5).abs() < 1e-10 && (f.cos[1] - 0.5).abs() < 1e-10, "{f:?}");
        assert!(f.constant.abs() < 1e-10);
    }

    #[test]
    fn mode_fit_with_noise_and_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ang = line_angles(2000, &[1.0, 1.7]);
        let vals: Vec<Real> = (0..2000)
            .map(|i| 1.0 - 2.0 * ang[0][i].sin() + 0.25 * ang[1][i].cos() + 1e-3 * rng.gen_range(-1.0..1.0))
            .collect();
        let w: Vec<Real> = (0..2000).map(|i| bump(1.0, &[i as Real / 1000.0 - 1.0, 0.0, 0.0])).collect();
        let f = mode_fit(&vals, &ang, Some(&w)).unwrap();
        assert!((f.constant - 1.0).abs() < 1e-3);
        assert!((f.sin[0] + 2.0).abs() < 1e-3 && (f.cos[1] - 0.25).abs() < 1e-3, "{f:?}");
    }

    #[test]
    fn mode_fit_detects_aliasing_and_undersampling() {
        let ang = line_angles(400, &[1.0, 1.0]);
        let vals = vec![0.0; 400];
        assert!(matches!(mode_fit(&vals, &ang, None), Err(LabError::AliasedWords { .. })));
        let coarse: Vec<Vec<Real>> = vec![(0..100).map(|i| i as Real * 0.5).collect()];
        assert!(mode_fit(&vec![0.0; 100], &coarse, None).is_err());
    }

    #[test]
    fn torus_modes_recover_trig_polynomial() {
        let base = [0.3, -1.2];
        let m = torus_modes(&[0, 1], &base, 6, |off| {
            let (a, b) = (base[0] + off[0], base[1] + off[1]);
            Ok(0.7 + 2.0 * a.cos() * b.cos() - 0.5 * (2.0 * a).sin())
        })
        .unwrap();
        let get = |k: ModeKey| m.get(&k).copied().unwrap_or(0.0);
        assert!((get(ModeKey::constant()) - 0.7).abs() < 1e-12);
        let (plus, _) = HarmonicWord::pair(0, 1, 1);
        let (minus, _) = HarmonicWord::pair(0, 1, -1);
        assert!((get(ModeKey::cos(plus)) - 1.0).abs() < 1e-12);
        assert!((get(ModeKey::cos(minus)) - 1.0).abs() < 1e-12);
        assert!((get(ModeKey::sin(HarmonicWord::single(0, 2))) + 0.5).abs() < 1e-12);
        assert!(get(ModeKey::cos(HarmonicWord::single(1, 1))).abs() < 1e-12);
    }

    #[test]
    fn scenario_validation() {
        assert!(Scenario::default().validate().is_ok());
        let s = Scenario { eta: 10.0, ..Default::default() };
        assert!(s.validate().is_err());
        let s = Scenario { lambdas: vec![0.05, 0.1], ..Default::default() };
        assert!(s.validate().is_err());
        let mut s = Scenario { background: Background::Kasner { rates: [0.1, 0.0, -0.1] }, ..Default::default() };
        s.phases[0].direction = [1, 1, 0];
        assert!(s.validate().is_err());
        let mut s = Scenario::default();
        s.points.push([3.0, 0.0, 0.0]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn scenario_json_round_trip_and_unknown_fields() {
        let s = Scenario::default();
        let txt = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Scenario>(r#"{"lambda": [0.1]}"#).is_err());
        let partial: Scenario = serde_json::from_str(r#"{"eta": 40}"#).unwrap();
        assert_eq!(partial.eta, 40.0);
        assert_eq!(partial.phases.len(), 2);
    }

    #[test]
    fn stack_is_background_without_seed_amplitude() {
        let mut s = Scenario::default();
        for p in &mut s.phases {
            p.amplitude = 0.0;
        }
        let st = s.stack(0.05).unwrap();
        let g = assemble_metric(&st, &[0.0, 0.2, -0.1, 0.3]).unwrap();
        assert!((g - minkowski()).max_abs() < 1e-15);
    }

    fn ricci_values(r: &ScanReport, word: &str, slot: &str) -> Vec<Real> {
        r.find("ricci", word, slot).unwrap().points.iter().map(|p| p.value).collect()
    }

    #[test]
    fn enabling_a_slot_never_raises_its_amplitude() {
        let full1 = ricci_scan(&Scenario::single_phase()).unwrap();
        let mut s = Scenario::single_phase();
        s.include.f22 = false;
        let abl = ricci_scan(&s).unwrap();
        let on = ricci_values(&full1, "cos(2u0)", "residual");
        let off = ricci_values(&abl, "cos(2u0)", "amplitude");
        assert!(on.iter().zip(&off).all(|(a, b)| a < b), "{on:?} {off:?}");

        let full2 = ricci_scan(&Scenario::default()).unwrap();
        let mut s = Scenario::default();
        s.include.f2pm = false;
        let abl = ricci_scan(&s).unwrap();
        for w in ["cos(u0+u1)", "cos(u0-u1)"] {
            let on = ricci_values(&full2, w, "residual");
            let off = ricci_values(&abl, w, "amplitude");
            assert!(on.iter().zip(&off).all(|(a, b)| a < b), "{w}: {on:?} {off:?}");
        }
    }

    #[test]
    fn ricci_amplitudes_are_resolution_independent() {
        let mut s = Scenario::single_phase();
        s.include.f22 = false;
        let coarse = ricci_scan(&s).unwrap();
        s.eta *= 2.0;
        let fine = ricci_scan(&s).unwrap();
        for (w, slot) in [("cos(2u0)", "amplitude"), ("all", "residual")] {
            let (a, b) = (ricci_values(&coarse, w, slot), ricci_values(&fine, w, slot));
            let (a, b) = (a.last().unwrap(), b.last().unwrap());
            assert!((a - b).abs() < 0.05 * b.abs(), "{w}/{slot}: {a} vs {b}");
        }
    }

    #[test]
    fn weak_limit_non_stationary_word() {
        let s = Scenario::single_phase();
        let case = WeakLimitCase::scenario_word(&s, &HarmonicWord::single(0, 1), Trig::Sin).unwrap();
        let r = weak_limit_decay(&case, &[0.1, 0.05, 0.025]).unwrap();
        assert!(!r.stationary);
        assert!(r.fit.order >= 0.9, "{r:?}");
        assert!(r.to_series(&Thresholds::default()).pass == Some(true));
    }

    #[test]
    fn weak_limit_stationary_control_is_flagged() {
        let case = WeakLimitCase::stationary_control(2.0);
        let r = weak_limit_decay(&case, &[0.1, 0.05, 0.025]).unwrap();
        assert!(r.stationary);
        assert!(r.fit.order <= 0.7, "{r:?}");
        assert!(r.to_series(&Thresholds::default()).pass == Some(true));
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let s: Real = gauss_nodes(-1.0, 2.0, 3).iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - (256.0 - 1.0) / 8.0).abs() < 1e-10);
    }

    #[test]
    fn report_pass_logic() {
        let mut r = ScanReport::new(1);
        r.series.push(Series::new("k", "w", "s", vec![SeriesPoint { lambda: 0.1, value: 2.0 }]).with_bound(1.0));
        r.series.push(Series::new("k", "w", "info", vec![]));
        assert!(!r.passed());
        assert_eq!(r.failures().len(), 1);
    }

    proptest! {
        #[test]
        fn order_fit_is_scale_invariant(order in 0.2f64..3.0, c in 1e-3f64..1e3) {
            let f = order_fit(&ladder(order, c)).unwrap();
            prop_assert!((f.order - order).abs() < 1e-9);
        }

        #[test]
        fn mode_fit_recovers_random_coefficients(c0 in -2.0f64..2.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let ang = line_angles(600, &[1.3]);
            let vals: Vec<Real> = ang[0].iter().map(|t| c0 + a * t.cos() + b * t.sin()).collect();
            let f = mode_fit(&vals, &ang, None).unwrap();
            prop_assert!((f.constant - c0).abs() < 1e-9);
            prop_assert!((f.cos[0] - a).abs() < 1e-9 && (f.sin[0] - b).abs() < 1e-9);
        }
    }
}
