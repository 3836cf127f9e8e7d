//! Oscillatory initial data on the slice `t = 0`: seeds, the slice values of
//! `F1`, `F21`, `F22`, the correctors `gamma2pm`, `kappa11`, `kappa12`,
//! `kappa1pm`, the conformal assembly of `(g_lambda, k_lambda)` and the
//! constraint operators used to audit it.
//!
//! Slice conventions: points of the slice are `x in R^3` with spacetime point
//! `(0, x)`. The background is assumed to have unit lapse and zero shift on
//! the slice, so `L = |grad u| (d_t - N)` there and the frame vectors `e1`, `e2`
//! are spatial. Mixed words are stored once per canonical word `u_A + s u_B`
//! with `A < B` and enter every ordered-pair sum with weight 2.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::geometry::{
    christoffels_rule, diff1, grad, hessian, ricci_rule, riemann_at, scalar_curvature_rule, LorentzMetricField,
    ScalarField, SymTensor4Field,
};
use crate::hierarchy::{f2pm, i0pm, tt_tensor, v_tensors, HarmonicMap, ModeKey, VTensors, Wave};
use crate::phases::{null_frame_at, HarmonicWord, Phase};
use crate::polarization::{ntilde_otimes, pbar1, pbar2, slice_normal, NEAR_NULL};
use crate::tensor::{axpy, scale, Chris, Lin, Mat, MetricAt, Real, Sym, Sym3, Sym4, Vec3, Vec4};
use crate::transport::{dt_from_transport, spatial_block};

/// Tolerance on `theta+^2 + theta x^2 = 4`.
pub const SEED_TOL: Real = 1e-13;

// ---------------------------------------------------------------- seeds

/// Smooth bump `exp(1 - 1/(1 - |x|^2/R^2))` supported in the ball of radius `R`.
pub fn bump(radius: Real, x: &Vec3) -> Real {
    let r2 = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Seed data of one phase: polarization angles and density.
#[derive(Clone)]
pub struct SeedPhase {
    pub phase: Phase,
    pub theta_plus: Real,
    pub theta_cross: Real,
    pub density: ScalarField<3>,
}

impl SeedPhase {
    pub fn new(phase: Phase, theta_plus: Real, theta_cross: Real, density: ScalarField<3>) -> LabResult<Self> {
        let r = theta_plus * theta_plus + theta_cross * theta_cross - 4.0;
        if !(r.abs() <= SEED_TOL) {
            return Err(LabError::InvalidSeed(format!(
                "theta+^2 + theta x^2 - 4 = {r:e} for phase {}",
                phase.label
            )));
        }
        Ok(SeedPhase { phase, theta_plus, theta_cross, density })
    }

    /// Polarization angles `(2 cos a, 2 sin a)`.
    pub fn angled(phase: Phase, a: Real, density: ScalarField<3>) -> LabResult<Self> {
        SeedPhase::new(phase, 2.0 * a.cos(), 2.0 * a.sin(), density)
    }
}

/// A family of seed phases with an optional support radius.
#[derive(Clone)]
pub struct Seed {
    pub phases: Vec<SeedPhase>,
    pub radius: Option<Real>,
}

impl Seed {
    pub fn new(phases: Vec<SeedPhase>, radius: Option<Real>) -> LabResult<Self> {
        if let Some(r) = radius {
            if !(r > 0.0) {
                return Err(LabError::InvalidSeed(format!("support radius {r}")));
            }
        }
        Ok(Seed { phases, radius })
    }

    /// Largest `|F_A(x)|` over the given points outside the support ball.
    pub fn support_violation(&self, points: &[Vec3]) -> Real {
        let Some(r) = self.radius else { return 0.0 };
        let mut worst: Real = 0.0;
        for x in points {
            if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > r * r {
                for sp in &self.phases {
                    worst = worst.max(sp.density.at(x).abs());
                }
            }
        }
        worst
    }
}

// ---------------------------------------------------------------- helpers

fn sgn(s: i32) -> Real {
    if s < 0 {
        -1.0
    } else {
        1.0
    }
}

fn point(x: &Vec3) -> Vec4 {
    [0.0, x[0], x[1], x[2]]
}

fn spatial(v: &Vec4) -> Vec3 {
    [v[1], v[2], v[3]]
}

/// Spacetime tensor with spatial block `s`, time components `S_00 = 0`, `S_0i = c_i`.
fn embed(s: &Sym3, c: &Vec3) -> Sym4 {
    Sym::from_fn(|a, b| match (a, b) {
        (0, 0) => 0.0,
        (0, j) | (j, 0) => c[j - 1],
        (i, j) => s.get(i - 1, j - 1),
    })
}

/// `S_ij T^ij` for a lowered `S` and a raised `T`.
fn full_contract(s: &Sym3, t_up: &Sym3) -> Real {
    let mut v = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            v += s.get(i, j) * t_up.get(i, j);
        }
    }
    v
}

fn time_row(s: &Sym4) -> Vec3 {
    [s.get(0, 1), s.get(0, 2), s.get(0, 3)]
}

fn nan4() -> Sym4 {
    Sym::from_fn(|_, _| Real::NAN)
}

/// Canonical mixed pairs `(a, b, s)` with `a < b`, `s = +1` then `-1`.
pub fn canonical_pairs(n: usize) -> Vec<(usize, usize, i32)> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            out.push((a, b, 1));
            out.push((a, b, -1));
        }
    }
    out
}

// ---------------------------------------------------------------- slice problem

/// Background, seed and finite-difference step for slice evaluations.
#[derive(Clone)]
pub struct SliceProblem {
    pub g0: LorentzMetricField,
    pub seed: Seed,
    pub h: Real,
}

/// Pointwise data of one phase on the slice.
#[derive(Clone, Copy, Debug)]
pub struct PhaseAt {
    pub du: Vec4,
    pub du3: Vec3,
    /// `grad u` with raised index.
    pub grad: Vec3,
    pub norm: Real,
    pub n_low: Vec3,
    pub n_up: Vec3,
    /// Spatial frame vectors `e1`, `e2` (raised).
    pub e: [Vec3; 2],
    pub density: Real,
    pub fbar: Sym3,
}

/// Slice values of `F1`, `F21`, `F22` for one phase.
#[derive(Clone, Copy, Debug)]
pub struct Initials {
    pub f1: Sym4,
    pub f21: Sym4,
    pub f22: Sym4,
}

/// Residuals of the corrector equations at one point.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct CorrectorAudit {
    pub ga2pm: Real,
    pub ka11: Real,
    pub ka12_fixed: Real,
    pub ka12_literal: Real,
    pub ka1pm: Real,
}

impl CorrectorAudit {
    fn merge(&mut self, o: &CorrectorAudit) {
        self.ga2pm = self.ga2pm.max(o.ga2pm);
        self.ka11 = self.ka11.max(o.ka11);
        self.ka12_fixed = self.ka12_fixed.max(o.ka12_fixed);
        self.ka12_literal = self.ka12_literal.max(o.ka12_literal);
        self.ka1pm = self.ka1pm.max(o.ka1pm);
    }

    /// Largest residual among the asserted equations.
    pub fn max_asserted(&self) -> Real {
        self.ga2pm.max(self.ka11).max(self.ka12_fixed).max(self.ka1pm)
    }
}

impl SliceProblem {
    pub fn new(g0: LorentzMetricField, seed: Seed, h: Real) -> Self {
        SliceProblem { g0, seed, h }
    }

    pub fn n_phases(&self) -> usize {
        self.seed.phases.len()
    }

    fn phase(&self, a: usize) -> &Phase {
        &self.seed.phases[a].phase
    }

    pub fn g4(&self, x: &Vec3) -> LabResult<MetricAt<4>> {
        MetricAt::new(self.g0.value.eval(&point(x))?)
    }

    pub fn g3(&self, x: &Vec3) -> LabResult<MetricAt<3>> {
        riemann_at(spatial_block(&self.g0.value.eval(&point(x))?))
    }

    /// `k0_ij = -d_t g_ij / 2`.
    pub fn k0(&self, x: &Vec3) -> LabResult<Sym3> {
        let d = diff1(&|q: &Vec4| self.g0.value.eval(q), &point(x), 0, self.h)?;
        Ok(spatial_block(&d) * -0.5)
    }

    /// `d_l g_ij` on the slice.
    pub fn dg3(&self, x: &Vec3) -> LabResult<[Sym3; 3]> {
        grad(&|y: &Vec3| Ok(spatial_block(&self.g0.value.eval(&point(y))?)), x, self.h)
    }

    /// `d_l g^ij` on the slice.
    pub fn dginv3(&self, x: &Vec3) -> LabResult<[Sym3; 3]> {
        grad(&|y: &Vec3| Ok(self.g3(y)?.ginv), x, self.h)
    }

    pub fn phase_at(&self, a: usize, x: &Vec3, g4: &MetricAt<4>, g3: &MetricAt<3>) -> LabResult<PhaseAt> {
        let sp = &self.seed.phases[a];
        let du = sp.phase.du(&point(x))?;
        let du3 = spatial(&du);
        let (n_low, n_up) = slice_normal(&du3, g3)?;
        let norm = g3.ip_inv(&du3, &du3).sqrt();
        let frame = null_frame_at(&du, g4)?;
        let density = sp.density.eval(x)?;
        let fbar = spatial_block(&tt_tensor(&frame, sp.theta_plus, sp.theta_cross, g4)) * density;
        Ok(PhaseAt {
            du,
            du3,
            grad: g3.raise(&du3),
            norm,
            n_low,
            n_up,
            e: [spatial(&frame.e1), spatial(&frame.e2)],
            density,
            fbar,
        })
    }

    fn phase_here(&self, a: usize, x: &Vec3) -> LabResult<(MetricAt<4>, MetricAt<3>, PhaseAt)> {
        let g4 = self.g4(x)?;
        let g3 = self.g3(x)?;
        let ph = self.phase_at(a, x, &g4, &g3)?;
        Ok((g4, g3, ph))
    }

    /// `Fbar1 = F (theta+ (e1 e1 - e2 e2) + theta x (e1 e2 + e2 e1))`.
    pub fn seed_tensor(&self, a: usize, x: &Vec3) -> LabResult<Sym3> {
        Ok(self.phase_here(a, x)?.2.fbar)
    }

    /// `F1` on the slice: spatial block `Fbar1`, vanishing time components.
    pub fn f1(&self, a: usize, x: &Vec3) -> LabResult<Sym4> {
        Ok(embed(&self.seed_tensor(a, x)?, &[0.0; 3]))
    }

    pub fn wave(&self, a: usize, x: &Vec3) -> LabResult<Wave> {
        let (g4, _, ph) = self.phase_here(a, x)?;
        Ok(Wave::new(ph.du, embed(&ph.fbar, &[0.0; 3]), &g4))
    }

    /// `Q0` on the slice as `(Q_0, Q_1, Q_2, Q_3)`.
    pub fn q0_slice(&self, a: usize, x: &Vec3) -> LabResult<Vec4> {
        let (_, g3, ph) = self.phase_here(a, x)?;
        let k0 = self.k0(x)?;
        let k0up = g3.raise_both(&k0);
        let dtg = diff1(&|q: &Vec4| self.g0.value.eval(q), &point(x), 0, self.h)?;
        let kn = k0.contract1(&ph.n_up);
        let w: Vec3 = std::array::from_fn(|i| dtg.get(0, i + 1) + kn[i]);
        let fw = ph.fbar.contract1(&g3.raise(&w));
        let dfbar = grad(&|y: &Vec3| self.seed_tensor(a, y), x, self.h)?;
        let dginv = self.dginv3(x)?;
        let mut q = [0.0; 4];
        q[0] = full_contract(&ph.fbar, &k0up);
        for l in 0..3 {
            let mut v = -fw[l];
            for i in 0..3 {
                for j in 0..3 {
                    v += g3.ginv.get(i, j) * dfbar[i].get(l, j) + 0.5 * ph.fbar.get(i, j) * dginv[l].get(i, j);
                }
            }
            q[l + 1] = v;
        }
        Ok(q)
    }

    /// Conformal coefficient `phi^(2,1)` before the hierarchy choice.
    pub fn phi21_check(&self, a: usize, x: &Vec3) -> LabResult<Real> {
        let (_, g3, ph) = self.phase_here(a, x)?;
        let k0up = g3.raise_both(&self.k0(x)?);
        let dginv = self.dginv3(x)?;
        let dd = grad(&|y: &Vec3| Ok(spatial(&self.phase(a).du(&point(y))?)), x, self.h)?;
        let hess = Sym::from_fn(|i, j| 0.5 * (dd[i][j] + dd[j][i]));
        let ddu_up = g3.raise_both(&hess);
        let mut bracket = k0up * ph.norm - ddu_up;
        for m in 0..3 {
            bracket += dginv[m] * (0.5 * ph.grad[m]);
        }
        Ok(full_contract(&ph.fbar, &bracket) / (8.0 * ph.norm * ph.norm))
    }

    /// Conformal covector `X^(2,1)` before the hierarchy choice.
    pub fn x21_check(&self, a: usize, x: &Vec3) -> LabResult<Vec3> {
        let (_, g3, ph) = self.phase_here(a, x)?;
        let k0up = g3.raise_both(&self.k0(x)?);
        let dginv = self.dginv3(x)?;
        let dg = self.dg3(x)?;
        let dnf = grad(
            &|y: &Vec3| {
                let (_, _, p) = self.phase_here(a, y)?;
                Ok(p.fbar * p.norm)
            },
            x,
            self.h,
        )?;
        let gi = &g3.ginv;
        let c: Vec3 = std::array::from_fn(|cc| {
            let mut v = 0.0;
            for aa in 0..3 {
                v += dginv[aa].get(cc, aa);
                for b in 0..3 {
                    for d in 0..3 {
                        v += 0.5 * gi.get(aa, b) * gi.get(cc, d) * dg[d].get(aa, b);
                    }
                }
            }
            v
        });
        let fk = full_contract(&ph.fbar, &k0up);
        let fc = ph.fbar.contract1(&c);
        Ok(std::array::from_fn(|i| {
            let mut v = 0.0;
            for aa in 0..3 {
                for b in 0..3 {
                    v += 0.5 * gi.get(b, aa) * dnf[aa].get(b, i);
                    v += 0.25 * ph.norm * ph.fbar.get(aa, b) * dginv[i].get(aa, b);
                }
            }
            v + 0.5 * ph.norm * fc[i] - 0.5 * ph.du3[i] * fk
        }))
    }

    fn pair_here(&self, a: usize, b: usize, x: &Vec3) -> LabResult<(MetricAt<4>, MetricAt<3>, PhaseAt, PhaseAt)> {
        let g4 = self.g4(x)?;
        let g3 = self.g3(x)?;
        let pa = self.phase_at(a, x, &g4, &g3)?;
        let pb = self.phase_at(b, x, &g4, &g3)?;
        Ok((g4, g3, pa, pb))
    }

    /// Conformal coefficient `phi^(2,pm)` of the word `u_A + s u_B` before the hierarchy choice.
    pub fn phi2pm_check(&self, a: usize, b: usize, s: i32, x: &Vec3) -> LabResult<Real> {
        let (_, g3, pa, pb) = self.pair_here(a, b, x)?;
        Ok(phi2pm_from(&g3, &pa, &pb, sgn(s)))
    }

    /// Conformal covector `X^(2,pm)` of the word `u_A + s u_B` before the hierarchy choice.
    pub fn x2pm_check(&self, a: usize, b: usize, s: i32, x: &Vec3) -> LabResult<Vec3> {
        let (_, g3, pa, pb) = self.pair_here(a, b, x)?;
        Ok(x2pm_from(&g3, &pa, &pb, sgn(s)))
    }

    /// Slice values of `F1`, `F21`, `F22`.
    pub fn initials(&self, a: usize, x: &Vec3) -> LabResult<Initials> {
        let (_, g3, ph) = self.phase_here(a, x)?;
        let phi = self.phi21_check(a, x)?;
        let q = self.q0_slice(a, x)?;
        let ql = [q[1], q[2], q[3]];
        let q_l = ph.norm * (q[0] - crate::tensor::dot(&ph.n_up, &ql));
        let f0n = 2.0 * phi - q_l / (2.0 * ph.norm * ph.norm);
        let mut f0 = scale(f0n, &ph.n_low);
        for e in &ph.e {
            let f0e = crate::tensor::dot(e, &ql) / ph.norm;
            f0 = axpy(&f0, f0e, &g3.lower(e));
        }
        let ff = ph.density * ph.density;
        Ok(Initials {
            f1: embed(&ph.fbar, &[0.0; 3]),
            f21: embed(&(g3.g * (4.0 * phi)), &f0),
            f22: embed(&(g3.g * (0.75 * ff)), &scale(0.375 * ff, &ph.n_low)),
        })
    }

    /// `d_t F1` on the slice from the transport equation with zero source.
    pub fn dt_f1(&self, a: usize, x: &Vec3) -> LabResult<Sym4> {
        dt_from_transport(&|y: &Vec3| self.f1(a, y), &Sym4::zero(), self.phase(a), &self.g0, x, self.h)
    }

    /// `F2pm` of the word `u_A + s u_B` on the slice.
    pub fn f2pm(&self, a: usize, b: usize, s: i32, x: &Vec3) -> LabResult<Sym4> {
        let (g4, _, pa, pb) = self.pair_here(a, b, x)?;
        let (wa, wb) = waves(&g4, &pa, &pb);
        f2pm(&wa, &wb, s, &g4)
    }

    /// `gamma2pm = F2pm_ij - 4 phi2pm g0`.
    pub fn gamma2pm(&self, a: usize, b: usize, s: i32, x: &Vec3) -> LabResult<Sym3> {
        let (g4, g3, pa, pb) = self.pair_here(a, b, x)?;
        gamma2pm_from(&g4, &g3, &pa, &pb, s)
    }

    /// `kappa11 = -N ~(x) X21 / |grad u| - d_t F1 / 2 - |grad u| (4 phi21 g - N_(i F21_0j)) / 2`.
    pub fn kappa11(&self, a: usize, x: &Vec3) -> LabResult<Sym3> {
        let (_, g3, ph) = self.phase_here(a, x)?;
        let xc = self.x21_check(a, x)?;
        let phi = self.phi21_check(a, x)?;
        let f21 = self.initials(a, x)?.f21;
        let dt = spatial_block(&self.dt_f1(a, x)?);
        let nx = ntilde_otimes(&ph.n_up, &g3.raise(&xc), &g3);
        let inner = g3.g * (4.0 * phi) - Sym::sym_prod(&ph.n_low, &time_row(&f21));
        Ok(nx * (-1.0 / ph.norm) - dt * 0.5 - inner * (0.5 * ph.norm))
    }

    /// `kappa12 = (3/2) |grad u| F^2 N N`.
    pub fn kappa12(&self, a: usize, x: &Vec3) -> LabResult<Sym3> {
        let (_, _, ph) = self.phase_here(a, x)?;
        Ok(kappa12_from(&ph))
    }

    /// `kappa1pm` of the word `u_A + s u_B`.
    pub fn kappa1pm(&self, a: usize, b: usize, s: i32, x: &Vec3) -> LabResult<Sym3> {
        let (g4, g3, pa, pb) = self.pair_here(a, b, x)?;
        kappa1pm_from(&g4, &g3, &pa, &pb, s)
    }

    /// Residuals of the corrector equations at `x`, over all phases and canonical pairs.
    pub fn corrector_audit(&self, x: &Vec3) -> LabResult<CorrectorAudit> {
        let mut out = CorrectorAudit::default();
        let g3 = self.g3(x)?;
        for a in 0..self.n_phases() {
            let (_, _, ph) = self.phase_here(a, x)?;
            let k11 = self.kappa11(a, x)?;
            let xc = self.x21_check(a, x)?;
            let phi = self.phi21_check(a, x)?;
            let ini = self.initials(a, x)?;
            let dt = spatial_block(&self.dt_f1(a, x)?);
            let lhs = pbar2(&k11, &ph.du3, &g3)? + ntilde_otimes(&ph.n_up, &g3.raise(&xc), &g3) * (1.0 / ph.norm);
            let rhs = (g3.g * (4.0 * ph.norm * phi) - Sym::sym_prod(&ph.du3, &time_row(&ini.f21)) + dt) * -0.5;
            let k12 = kappa12_from(&ph);
            let p12 = pbar2(&k12, &ph.du3, &g3)?;
            let ff = ph.density * ph.density;
            let lhs12 = p12 - ntilde_otimes(&ph.n_up, &ph.n_up, &g3) * (1.5 * ph.norm * ff);
            let rhs12 = g3.g * (0.75 * ph.norm * ff) - Sym::sym_prod(&ph.du3, &time_row(&ini.f22));
            out.merge(&CorrectorAudit {
                ka11: (lhs - rhs).max_abs(),
                ka12_fixed: (p12 - k12).max_abs(),
                ka12_literal: (lhs12 - rhs12).max_abs(),
                ..Default::default()
            });
        }
        for (a, b, s) in canonical_pairs(self.n_phases()) {
            let (g4, g3, pa, pb) = self.pair_here(a, b, x)?;
            let sg = sgn(s);
            let w3 = axpy(&pa.du3, sg, &pb.du3);
            let (_, nw) = slice_normal(&w3, &g3)?;
            let normw = g3.ip_inv(&w3, &w3).sqrt();
            let (wa, wb) = waves(&g4, &pa, &pb);
            let f2 = f2pm(&wa, &wb, s, &g4)?;
            let phi = phi2pm_from(&g3, &pa, &pb, sg);
            let ga = gamma2pm_from(&g4, &g3, &pa, &pb, s)?;
            let ga_res = spatial_block(&f2) - pbar1(&ga, &w3, &g3)? - g3.g * (4.0 * phi);
            let k = kappa1pm_from(&g4, &g3, &pa, &pb, s)?;
            let nx = ntilde_otimes(&nw, &g3.raise(&x2pm_from(&g3, &pa, &pb, sg)), &g3) * (1.0 / normw);
            let lhs = pbar2(&k, &w3, &g3)? - nx;
            let rhs = (spatial_block(&f2) * (pa.norm + sg * pb.norm) - Sym::sym_prod(&w3, &time_row(&f2))) * 0.5;
            out.merge(&CorrectorAudit { ga2pm: ga_res.max_abs(), ka1pm: (lhs - rhs).max_abs(), ..Default::default() });
        }
        Ok(out)
    }

    /// `V21`, `V22` at `x` for the slice data of phase `a`, with `F1` extended
    /// off the slice by `F1(0, x) + t d_t F1(x)`.
    pub fn v_audit(&self, a: usize, x: &Vec3) -> LabResult<VTensors> {
        let me = self.clone();
        let f1 = SymTensor4Field::analytic(move |p: &Vec4| {
            let y = spatial(p);
            match (me.f1(a, &y), me.dt_f1(a, &y)) {
                (Ok(f), Ok(d)) => f + d * p[0],
                _ => nan4(),
            }
        });
        let me = self.clone();
        let f21 = SymTensor4Field::analytic(move |p: &Vec4| me.initials(a, &spatial(p)).map(|i| i.f21).unwrap_or_else(|_| nan4()));
        let me = self.clone();
        let f22 = SymTensor4Field::analytic(move |p: &Vec4| me.initials(a, &spatial(p)).map(|i| i.f22).unwrap_or_else(|_| nan4()));
        let v = v_tensors(&f21, &f22, &f1, self.phase(a), &self.g0, &point(x), self.h)?;
        if !(v.v21.iter().chain(v.v22.iter()).all(|c| c.is_finite())) {
            return Err(LabError::InvalidSeed("slice data not finite".into()));
        }
        Ok(v)
    }
}

fn waves(g4: &MetricAt<4>, pa: &PhaseAt, pb: &PhaseAt) -> (Wave, Wave) {
    (Wave::new(pa.du, embed(&pa.fbar, &[0.0; 3]), g4), Wave::new(pb.du, embed(&pb.fbar, &[0.0; 3]), g4))
}

fn phi2pm_from(g3: &MetricAt<3>, pa: &PhaseAt, pb: &PhaseAt, s: Real) -> Real {
    let w3 = axpy(&pa.du3, s, &pb.du3);
    let nw2 = g3.ip_inv(&w3, &w3);
    let ff = g3.dot(&pa.fbar, &pb.fbar);
    let cab = pa.fbar.contract1(&pb.grad);
    let cba = pb.fbar.contract1(&pa.grad);
    let cross = g3.ip_inv(&cab, &cba);
    let gab = g3.ip_inv(&pa.du3, &pb.du3);
    let shape = 2.0 * pa.norm * pa.norm + 2.0 * pb.norm * pb.norm + s * 3.0 * gab - s * pa.norm * pb.norm;
    ff / (64.0 * nw2) * shape - s * cross / (32.0 * nw2)
}

fn x2pm_from(g3: &MetricAt<3>, pa: &PhaseAt, pb: &PhaseAt, s: Real) -> Vec3 {
    let ff = g3.dot(&pa.fbar, &pb.fbar);
    let cab = pa.fbar.contract1(&pb.grad);
    let cba = pb.fbar.contract1(&pa.grad);
    let t1 = pb.fbar.contract1(&g3.raise(&cab));
    let t2 = pa.fbar.contract1(&g3.raise(&cba));
    std::array::from_fn(|i| {
        let c = 0.125 * (pa.norm * pa.du3[i] + pb.norm * pb.du3[i])
            + s / 16.0 * (pb.norm * pa.du3[i] + pa.norm * pb.du3[i]);
        -0.125 * pb.norm * t1[i] - 0.125 * pa.norm * t2[i] + c * ff
    })
}

fn gamma2pm_from(g4: &MetricAt<4>, g3: &MetricAt<3>, pa: &PhaseAt, pb: &PhaseAt, s: i32) -> LabResult<Sym3> {
    let (wa, wb) = waves(g4, pa, pb);
    let f2 = f2pm(&wa, &wb, s, g4)?;
    Ok(spatial_block(&f2) - g3.g * (4.0 * phi2pm_from(g3, pa, pb, sgn(s))))
}

fn kappa12_from(ph: &PhaseAt) -> Sym3 {
    Sym3::outer(&ph.n_low) * (1.5 * ph.norm * ph.density * ph.density)
}

fn kappa1pm_from(g4: &MetricAt<4>, g3: &MetricAt<3>, pa: &PhaseAt, pb: &PhaseAt, s: i32) -> LabResult<Sym3> {
    let sg = sgn(s);
    let (wa, wb) = waves(g4, pa, pb);
    let i0 = i0pm(&wa, &wb, s, g4);
    let dw = axpy(&pa.du, sg, &pb.du);
    let q = g4.ip_inv(&dw, &dw);
    if q.abs() < NEAR_NULL {
        return Err(LabError::NullDirectionUnsolvable { divisor: q });
    }
    let w3 = spatial(&dw);
    let (_, nw) = slice_normal(&w3, g3)?;
    let normw = g3.ip_inv(&w3, &w3).sqrt();
    let base = (spatial_block(&i0) * -(pa.norm + sg * pb.norm) + Sym::sym_prod(&w3, &time_row(&i0))) * (0.5 / q);
    let xc = x2pm_from(g3, pa, pb, sg);
    Ok(base + ntilde_otimes(&nw, &g3.raise(&xc), g3) * (1.0 / normw))
}

// ---------------------------------------------------------------- pointwise terms

/// Slow per-phase coefficients at one slice point.
#[derive(Clone, Debug)]
pub struct PhaseTerms {
    pub at: PhaseAt,
    pub phi21: Real,
    pub kappa11: Option<Sym3>,
    pub kappa12: Sym3,
    /// `X^(2,1)` and `X^(2,2)` (covectors), present with the momentum terms.
    pub x21: Option<Vec3>,
    pub x22: Vec3,
}

/// Slow per-word coefficients at one slice point.
#[derive(Clone, Debug)]
pub struct PairTerms {
    pub a: usize,
    pub b: usize,
    pub s: i32,
    pub gamma2pm: Sym3,
    /// `phi^(2,pm)` after the hierarchy choice.
    pub phi2pm: Real,
    pub kappa1pm: Option<Sym3>,
    pub x2pm: Option<Vec3>,
}

#[derive(Clone, Debug)]
pub struct SliceTerms {
    pub g0: MetricAt<3>,
    pub k0: Option<Sym3>,
    pub phases: Vec<PhaseTerms>,
    pub pairs: Vec<PairTerms>,
}

impl SliceTerms {
    /// Metric-level terms, plus the `kappa` and `X` terms when `momentum` is set.
    pub fn compute(sp: &SliceProblem, x: &Vec3, momentum: bool) -> LabResult<Self> {
        let g4 = sp.g4(x)?;
        let g3 = sp.g3(x)?;
        let mut phases = Vec::with_capacity(sp.n_phases());
        for a in 0..sp.n_phases() {
            let at = sp.phase_at(a, x, &g4, &g3)?;
            let phi21 = sp.phi21_check(a, x)?;
            let kappa12 = kappa12_from(&at);
            let n2 = at.norm * at.norm;
            let k12n = kappa12.contract1(&at.grad);
            let tr12 = g3.trace(&kappa12);
            let ff = at.density * at.density;
            let x22 = std::array::from_fn(|i| {
                (2.0 * k12n[i] - 2.0 * at.du3[i] * tr12 + 3.0 * at.norm * at.du3[i] * ff) / (4.0 * n2)
            });
            let (kappa11, x21) = if momentum {
                let k = sp.kappa11(a, x)?;
                let xc = sp.x21_check(a, x)?;
                let kn = k.contract1(&at.grad);
                let tr = g3.trace(&k);
                let x21: Vec3 = std::array::from_fn(|i| (at.du3[i] * tr - kn[i] + xc[i]) / n2);
                (Some(k), Some(x21))
            } else {
                (None, None)
            };
            phases.push(PhaseTerms { at, phi21, kappa11, kappa12, x21, x22 });
        }
        let mut pairs = Vec::new();
        for (a, b, s) in canonical_pairs(sp.n_phases()) {
            let (pa, pb) = (&phases[a].at, &phases[b].at);
            let sg = sgn(s);
            let w3 = axpy(&pa.du3, sg, &pb.du3);
            let (_, nw) = slice_normal(&w3, &g3)?;
            let gamma2pm = gamma2pm_from(&g4, &g3, pa, pb, s)?;
            let phi2pm = -0.125 * (g3.trace(&gamma2pm) - gamma2pm.contract2(&nw, &nw)) + phi2pm_from(&g3, pa, pb, sg);
            let (kappa1pm, x2pm) = if momentum {
                let k = kappa1pm_from(&g4, &g3, pa, pb, s)?;
                let wup = g3.raise(&w3);
                let kn = k.contract1(&wup);
                let tr = g3.trace(&k);
                let xc = x2pm_from(&g3, pa, pb, sg);
                let nw2 = g3.ip_inv(&w3, &w3);
                let x: Vec3 = std::array::from_fn(|i| (kn[i] - w3[i] * tr + xc[i]) / nw2);
                (Some(k), Some(x))
            } else {
                (None, None)
            };
            pairs.push(PairTerms { a, b, s, gamma2pm, phi2pm, kappa1pm, x2pm });
        }
        let k0 = if momentum { Some(sp.k0(x)?) } else { None };
        Ok(SliceTerms { g0: g3, k0, phases, pairs })
    }
}

// ---------------------------------------------------------------- conformal assembly

/// Which conformal unknowns enter `(g_lambda, k_lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConformalFlags {
    pub phi2: bool,
    pub x2: bool,
}

impl Default for ConformalFlags {
    fn default() -> Self {
        ConformalFlags { phi2: true, x2: true }
    }
}

/// Oscillatory conformal data at scale `lambda`.
#[derive(Clone)]
pub struct ConformalData {
    pub slice: SliceProblem,
    pub lambda: Real,
    /// Shifts of the fast angles `u_A / lambda`, one per phase.
    pub offsets: Vec<Real>,
    pub flags: ConformalFlags,
}

struct Angles {
    th: Vec<Real>,
    pair: Vec<Real>,
}

impl ConformalData {
    pub fn new(slice: SliceProblem, lambda: Real, flags: ConformalFlags) -> LabResult<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LabError::InvalidScale(lambda));
        }
        let n = slice.n_phases();
        Ok(ConformalData { slice, lambda, offsets: vec![0.0; n], flags })
    }

    pub fn with_offsets(mut self, offsets: Vec<Real>) -> Self {
        self.offsets = offsets;
        self
    }

    fn angles(&self, x: &Vec3) -> LabResult<Angles> {
        let p = point(x);
        let mut th = Vec::with_capacity(self.slice.n_phases());
        for (i, sp) in self.slice.seed.phases.iter().enumerate() {
            th.push(sp.phase.value(&p)? / self.lambda + self.offsets.get(i).copied().unwrap_or(0.0));
        }
        let pair = canonical_pairs(th.len()).iter().map(|&(a, b, s)| th[a] + sgn(s) * th[b]).collect();
        Ok(Angles { th, pair })
    }

    fn gamma_from(&self, t: &SliceTerms, an: &Angles) -> Sym3 {
        let lam = self.lambda;
        let mut g = t.g0.g;
        for (pt, th) in t.phases.iter().zip(&an.th) {
            g += pt.at.fbar * (lam * th.cos());
        }
        for (pr, w) in t.pairs.iter().zip(&an.pair) {
            g += pr.gamma2pm * (2.0 * lam * lam * w.cos());
        }
        g
    }

    fn kappa_from(&self, t: &SliceTerms, an: &Angles) -> Sym3 {
        let lam = self.lambda;
        let mut k = t.k0.expect("momentum terms");
        for (pt, th) in t.phases.iter().zip(&an.th) {
            k += pt.at.fbar * (0.5 * pt.at.norm * th.sin());
            k += pt.kappa11.expect("momentum terms") * (lam * th.cos());
            k += pt.kappa12 * (lam * (2.0 * th).sin());
        }
        for (pr, w) in t.pairs.iter().zip(&an.pair) {
            k += pr.kappa1pm.expect("momentum terms") * (2.0 * lam * w.sin());
        }
        k
    }

    fn phi_from(&self, t: &SliceTerms, an: &Angles) -> Real {
        if !self.flags.phi2 {
            return 1.0;
        }
        let mut p2 = 0.0;
        for (pt, th) in t.phases.iter().zip(&an.th) {
            p2 += th.sin() * pt.phi21 + (2.0 * th).cos() * 3.0 / 16.0 * pt.at.density * pt.at.density;
        }
        for (pr, w) in t.pairs.iter().zip(&an.pair) {
            p2 += 2.0 * w.cos() * pr.phi2pm;
        }
        1.0 + self.lambda * self.lambda * p2
    }

    fn x_from(&self, t: &SliceTerms, an: &Angles) -> Vec3 {
        let mut x = [0.0; 3];
        if !self.flags.x2 {
            return x;
        }
        for (pt, th) in t.phases.iter().zip(&an.th) {
            x = axpy(&x, th.sin(), &pt.x21.expect("momentum terms"));
            x = axpy(&x, (2.0 * th).cos(), &pt.x22);
        }
        for (pr, w) in t.pairs.iter().zip(&an.pair) {
            x = axpy(&x, 2.0 * w.cos(), &pr.x2pm.expect("momentum terms"));
        }
        scale(self.lambda * self.lambda, &x)
    }

    pub fn gamma(&self, x: &Vec3) -> LabResult<Sym3> {
        let t = SliceTerms::compute(&self.slice, x, false)?;
        Ok(self.gamma_from(&t, &self.angles(x)?))
    }

    pub fn kappa(&self, x: &Vec3) -> LabResult<Sym3> {
        let t = SliceTerms::compute(&self.slice, x, true)?;
        Ok(self.kappa_from(&t, &self.angles(x)?))
    }

    pub fn phi(&self, x: &Vec3) -> LabResult<Real> {
        let t = SliceTerms::compute(&self.slice, x, false)?;
        Ok(self.phi_from(&t, &self.angles(x)?))
    }

    /// `X_lambda` as a covector.
    pub fn xvec(&self, x: &Vec3) -> LabResult<Vec3> {
        if !self.flags.x2 {
            return Ok([0.0; 3]);
        }
        let t = SliceTerms::compute(&self.slice, x, true)?;
        Ok(self.x_from(&t, &self.angles(x)?))
    }

    /// `g_lambda = phi^4 gamma`.
    pub fn g(&self, x: &Vec3) -> LabResult<Sym3> {
        let t = SliceTerms::compute(&self.slice, x, false)?;
        let an = self.angles(x)?;
        Ok(self.gamma_from(&t, &an) * self.phi_from(&t, &an).powi(4))
    }

    /// `L_gamma X = Lie_X gamma - (div X) gamma / 2` by finite differences.
    pub fn conformal_killing(&self, x: &Vec3) -> LabResult<Sym3> {
        if !self.flags.x2 {
            return Ok(Sym3::zero());
        }
        let h = self.slice.h.min(self.lambda / 20.0);
        let gam = riemann_at(self.gamma(x)?)?;
        let xl = self.xvec(x)?;
        let xup = gam.raise(&xl);
        let dg = grad(&|y: &Vec3| self.gamma(y), x, h)?;
        let dxup = grad(
            &|y: &Vec3| {
                let t = SliceTerms::compute(&self.slice, y, true)?;
                let an = self.angles(y)?;
                let m = riemann_at(self.gamma_from(&t, &an))?;
                Ok(m.raise(&self.x_from(&t, &an)))
            },
            x,
            h,
        )?;
        Ok(conformal_killing_from(&gam, &dg, &xup, &dxup))
    }

    /// `k_lambda = phi^2 (kappa + L_gamma X)`.
    pub fn k(&self, x: &Vec3) -> LabResult<Sym3> {
        let t = SliceTerms::compute(&self.slice, x, true)?;
        let an = self.angles(x)?;
        let phi = self.phi_from(&t, &an);
        Ok((self.kappa_from(&t, &an) + self.conformal_killing(x)?) * (phi * phi))
    }

    /// Closed form of `g_lambda` through order `lambda^2`.
    pub fn final_form_g(&self, x: &Vec3) -> LabResult<Sym3> {
        let t = SliceTerms::compute(&self.slice, x, false)?;
        let an = self.angles(x)?;
        let lam = self.lambda;
        let g0 = t.g0.g;
        let mut g = g0;
        for (pt, th) in t.phases.iter().zip(&an.th) {
            let ff = pt.at.density * pt.at.density;
            g += pt.at.fbar * (lam * th.cos());
            g += g0 * (lam * lam * (4.0 * pt.phi21 * th.sin() + 0.75 * ff * (2.0 * th).cos()));
        }
        for (pr, w) in t.pairs.iter().zip(&an.pair) {
            let (pa, pb) = (&t.phases[pr.a].at, &t.phases[pr.b].at);
            let w3 = axpy(&pa.du3, sgn(pr.s), &pb.du3);
            let chk = phi2pm_from(&t.g0, pa, pb, sgn(pr.s));
            let blk = pbar1(&pr.gamma2pm, &w3, &t.g0)? + g0 * (4.0 * chk);
            g += blk * (2.0 * lam * lam * w.cos());
        }
        Ok(g)
    }

    /// Closed form of `k_lambda` through order `lambda`.
    pub fn final_form_k(&self, x: &Vec3) -> LabResult<Sym3> {
        let t = SliceTerms::compute(&self.slice, x, true)?;
        let an = self.angles(x)?;
        let lam = self.lambda;
        let g3 = &t.g0;
        let mut k = t.k0.expect("momentum terms");
        for (i, (pt, th)) in t.phases.iter().zip(&an.th).enumerate() {
            let at = &pt.at;
            let ff = at.density * at.density;
            let xc = self.slice.x21_check(i, x)?;
            k += at.fbar * (0.5 * at.norm * th.sin());
            let c11 = pbar2(&pt.kappa11.expect("momentum terms"), &at.du3, g3)?
                + ntilde_otimes(&at.n_up, &g3.raise(&xc), g3) * (1.0 / at.norm);
            let c12 = pbar2(&pt.kappa12, &at.du3, g3)? - ntilde_otimes(&at.n_up, &at.n_up, g3) * (1.5 * at.norm * ff);
            k += c11 * (lam * th.cos()) + c12 * (lam * (2.0 * th).sin());
        }
        for (pr, w) in t.pairs.iter().zip(&an.pair) {
            let (pa, pb) = (&t.phases[pr.a].at, &t.phases[pr.b].at);
            let sg = sgn(pr.s);
            let w3 = axpy(&pa.du3, sg, &pb.du3);
            let (_, nw) = slice_normal(&w3, g3)?;
            let normw = g3.ip_inv(&w3, &w3).sqrt();
            let xc = x2pm_from(g3, pa, pb, sg);
            let blk = pbar2(&pr.kappa1pm.expect("momentum terms"), &w3, g3)?
                - ntilde_otimes(&nw, &g3.raise(&xc), g3) * (1.0 / normw);
            k += blk * (2.0 * lam * w.sin());
        }
        Ok(k)
    }
}

/// `(Lie_X g)_ij - (div X) g_ij / 2` from pointwise values and derivatives of `g` and `X^k`.
pub fn conformal_killing_from(g: &MetricAt<3>, dg: &[Sym3; 3], xup: &Vec3, dxup: &[Vec3; 3]) -> Sym3 {
    let mut div = 0.0;
    for k in 0..3 {
        div += dxup[k][k];
        for l in 0..3 {
            for m in 0..3 {
                div += 0.5 * g.ginv.get(k, m) * dg[l].get(k, m) * xup[l];
            }
        }
    }
    Sym::from_fn(|i, j| {
        let mut v = 0.0;
        for k in 0..3 {
            v += xup[k] * dg[k].get(i, j) + g.g.get(k, j) * dxup[i][k] + g.g.get(i, k) * dxup[j][k];
        }
        v - 0.5 * div * g.g.get(i, j)
    })
}

// ---------------------------------------------------------------- constraint operators

/// Hamiltonian and momentum residuals at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResidual {
    pub h: Real,
    pub m: Vec3,
}

/// `H = R(g) - |k|^2 + (tr k)^2`, `M_i = g^ab D_a k_bi - d_i tr k` by finite differences.
pub fn constraint_residual(
    g: &impl Fn(&Vec3) -> LabResult<Sym3>,
    k: &impl Fn(&Vec3) -> LabResult<Sym3>,
    x: &Vec3,
    h: Real,
) -> LabResult<ConstraintResidual> {
    let m = riemann_at(g(x)?)?;
    let kv = k(x)?;
    let r = scalar_curvature_rule(g, x, h)?;
    let tr = m.trace(&kv);
    let ham = r - m.dot(&kv, &kv) + tr * tr;
    let gam = christoffels_rule(g, x, h)?;
    let dk = grad(k, x, h)?;
    let dtr = grad(&|y: &Vec3| Ok(riemann_at(g(y)?)?.trace(&k(y)?)), x, h)?;
    Ok(ConstraintResidual { h: ham, m: divergence(&m, &gam, &kv, &dk, &dtr) })
}

fn divergence(m: &MetricAt<3>, gam: &Chris<3>, kv: &Sym3, dk: &[Sym3; 3], dtr: &Vec3) -> Vec3 {
    std::array::from_fn(|i| {
        let mut v = -dtr[i];
        for a in 0..3 {
            for b in 0..3 {
                let mut d = dk[a].get(b, i);
                for r in 0..3 {
                    d -= gam[r][a][b] * kv.get(r, i) + gam[r][a][i] * kv.get(b, r);
                }
                v += m.ginv.get(a, b) * d;
            }
        }
        v
    })
}

/// Leading harmonic blocks of `H(gamma, kappa)` and `M(gamma, kappa)` at `x`.
#[derive(Clone, Debug, Default)]
pub struct LeadingBlocks {
    pub h: HarmonicMap<Real>,
    pub m: HarmonicMap<Vec3>,
}

/// Analytic order-one blocks of the constraint operators on the conformal
/// parameters, keyed by canonical word; the constant word is
/// `(H(g0, k0) - 2 sum |grad u|^2 F^2, M(g0, k0) + sum |grad u| du F^2)`.
pub fn constraint_leading(sp: &SliceProblem, x: &Vec3) -> LabResult<LeadingBlocks> {
    let t = SliceTerms::compute(sp, x, true)?;
    let g3 = &t.g0;
    let k0 = t.k0.expect("momentum terms");
    let k0up = g3.raise_both(&k0);
    let dginv = sp.dginv3(x)?;
    let mut out = LeadingBlocks::default();
    let bg = constraint_residual(
        &|y: &Vec3| sp.g3(y).map(|m| m.g),
        &|y: &Vec3| sp.k0(y),
        x,
        sp.h,
    )?;
    let mut hc = bg.h;
    let mut mc = bg.m;
    for (i, pt) in t.phases.iter().enumerate() {
        let at = &pt.at;
        let label = sp.phase(i).label;
        let ff = at.density * at.density;
        let n2 = at.norm * at.norm;
        hc -= 2.0 * n2 * ff;
        mc = axpy(&mc, at.norm * ff, &at.du3);
        // sin: Fbar_ij (d^i d^j u - d^l u d_l g^ij / 2 - |grad u| k0^ij) = -8 |grad u|^2 phi21
        let dd = grad(&|y: &Vec3| Ok(spatial(&sp.phase(i).du(&point(y))?)), x, sp.h)?;
        let hess = Sym::from_fn(|a, b| 0.5 * (dd[a][b] + dd[b][a]));
        let mut br = g3.raise_both(&hess) - k0up * at.norm;
        for m in 0..3 {
            br += dginv[m] * (-0.5 * at.grad[m]);
        }
        let w1 = HarmonicWord::single(label, 1);
        out.h.insert(ModeKey::sin(w1.clone()), full_contract(&at.fbar, &br));
        out.h.insert(ModeKey::cos(HarmonicWord::single(label, 2)), -6.0 * n2 * ff);
        let k11 = pt.kappa11.expect("momentum terms");
        let xc = sp.x21_check(i, x)?;
        let kn = k11.contract1(&at.grad);
        let tr = g3.trace(&k11);
        out.m.insert(ModeKey::sin(w1), std::array::from_fn(|j| at.du3[j] * tr - kn[j] + xc[j]));
        let k12n = pt.kappa12.contract1(&at.grad);
        let tr12 = g3.trace(&pt.kappa12);
        out.m.insert(
            ModeKey::cos(HarmonicWord::single(label, 2)),
            std::array::from_fn(|j| 2.0 * k12n[j] - 2.0 * at.du3[j] * tr12 + 3.0 * at.norm * at.du3[j] * ff),
        );
    }
    for pr in &t.pairs {
        let (pa, pb) = (&t.phases[pr.a].at, &t.phases[pr.b].at);
        let sg = sgn(pr.s);
        let w3 = axpy(&pa.du3, sg, &pb.du3);
        let (_, nw) = slice_normal(&w3, g3)?;
        let nw2 = g3.ip_inv(&w3, &w3);
        let ff = g3.dot(&pa.fbar, &pb.fbar);
        let cross = g3.ip_inv(&pa.fbar.contract1(&pb.grad), &pb.fbar.contract1(&pa.grad));
        let gab = g3.ip_inv(&pa.du3, &pb.du3);
        let ga = &pr.gamma2pm;
        let hblk = nw2 * (g3.trace(ga) - ga.contract2(&nw, &nw))
            + 0.125
                * (sg * 2.0 * cross
                    + ff * (-2.0 * pa.norm * pa.norm - 2.0 * pb.norm * pb.norm - sg * 3.0 * gab
                        + sg * pa.norm * pb.norm));
        let k = pr.kappa1pm.expect("momentum terms");
        let kn = k.contract1(&g3.raise(&w3));
        let tr = g3.trace(&k);
        let xc = x2pm_from(g3, pa, pb, sg);
        let mblk: Vec3 = std::array::from_fn(|j| 2.0 * (kn[j] - w3[j] * tr) + 2.0 * xc[j]);
        let (word, _) = HarmonicWord::pair(sp.phase(pr.a).label, sp.phase(pr.b).label, pr.s);
        out.h.insert(ModeKey::cos(word.clone()), 2.0 * hblk);
        out.m.insert(ModeKey::cos(word), mblk);
    }
    out.h.insert(ModeKey::constant(), hc);
    out.m.insert(ModeKey::constant(), mc);
    Ok(out)
}

// ---------------------------------------------------------------- vector Laplacian

fn covariant_grad(
    xf: &impl Fn(&Vec3) -> LabResult<Vec3>,
    g: &impl Fn(&Vec3) -> LabResult<Sym3>,
    y: &Vec3,
    h: Real,
) -> LabResult<Mat<3>> {
    let gam = christoffels_rule(g, y, h)?;
    let xv = xf(y)?;
    let dx = grad(xf, y, h)?;
    Ok(std::array::from_fn(|l| {
        std::array::from_fn(|i| dx[l][i] - (0..3).map(|a| gam[a][l][i] * xv[a]).sum::<Real>())
    }))
}

/// `Delta_g X_i + R_ij X^j` for a covector field, by nested covariant differences.
pub fn vector_laplacian(
    xf: &impl Fn(&Vec3) -> LabResult<Vec3>,
    g: &impl Fn(&Vec3) -> LabResult<Sym3>,
    p: &Vec3,
    h: Real,
) -> LabResult<Vec3> {
    let m = riemann_at(g(p)?)?;
    let gam = christoffels_rule(g, p, h)?;
    let t = covariant_grad(xf, g, p, h)?;
    let dt = grad(&|y: &Vec3| covariant_grad(xf, g, y, h), p, h)?;
    let ric = ricci_rule(g, p, h)?;
    let xup = m.raise(&xf(p)?);
    let rx = ric.contract1(&xup);
    Ok(std::array::from_fn(|i| {
        let mut v = rx[i];
        for k in 0..3 {
            for l in 0..3 {
                let mut d = dt[k][l][i];
                for mm in 0..3 {
                    d -= gam[mm][k][l] * t[mm][i] + gam[mm][k][i] * t[l][mm];
                }
                v += m.ginv.get(k, l) * d;
            }
        }
        v
    }))
}

/// The same operator expanded in coordinates: second derivatives of `X`,
/// first derivatives of the Christoffel symbols and quadratic terms.
pub fn vector_laplacian_coordinates(
    xf: &impl Fn(&Vec3) -> LabResult<Vec3>,
    g: &impl Fn(&Vec3) -> LabResult<Sym3>,
    p: &Vec3,
    h: Real,
) -> LabResult<Vec3> {
    let m = riemann_at(g(p)?)?;
    let gi = &m.ginv;
    let gam = christoffels_rule(g, p, h)?;
    let dgam = grad(&|y: &Vec3| christoffels_rule(g, y, h), p, h)?;
    let xv = xf(p)?;
    let dx = grad(xf, p, h)?;
    let ddx = hessian(xf, p, h)?;
    let xup = m.raise(&xv);
    Ok(std::array::from_fn(|i| {
        let mut v = 0.0;
        for k in 0..3 {
            for l in 0..3 {
                let gkl = gi.get(k, l);
                v += gkl * ddx[k][l][i];
                for a in 0..3 {
                    v -= 2.0 * gkl * gam[a][l][i] * dx[k][a];
                    let mut q = dgam[k][a][l][i];
                    for b in 0..3 {
                        q -= gam[b][k][i] * gam[a][l][b];
                    }
                    v -= gkl * xv[a] * q;
                    // contraction g^kl Gamma^a_kl of the covariant derivative
                    let mut cd = dx[a][i];
                    for b in 0..3 {
                        cd -= gam[b][a][i] * xv[b];
                    }
                    v -= gkl * gam[a][k][l] * cd;
                }
            }
        }
        for j in 0..3 {
            for a in 0..3 {
                v += xup[j] * (dgam[a][a][i][j] - dgam[j][a][a][i]);
                for b in 0..3 {
                    v += xup[j] * (gam[a][a][b] * gam[b][i][j] - gam[a][i][b] * gam[b][a][j]);
                }
            }
        }
        v
    }))
}

// ---------------------------------------------------------------- periodic Poisson surrogate

/// Periodic box `[-side/2, side/2)^3` with `n` nodes per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicBox {
    pub side: Real,
    pub n: usize,
}

impl PeriodicBox {
    pub fn node(&self, idx: [usize; 3]) -> Vec3 {
        std::array::from_fn(|a| -0.5 * self.side + self.side * idx[a] as Real / self.n as Real)
    }

    /// Samples `f` in row-major order (last axis fastest).
    pub fn sample(&self, f: impl Fn(&Vec3) -> Real) -> Vec<Real> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(f(&self.node([i, j, k])));
                }
            }
        }
        out
    }

    fn wavenumber(&self, j: usize) -> Real {
        let n = self.n as i64;
        let j = j as i64;
        let m = if j <= n / 2 { j } else { j - n };
        2.0 * std::f64::consts::PI * m as Real / self.side
    }
}

/// Solution of the periodic Poisson problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonSolution {
    pub values: Vec<Real>,
    /// Set when the source had a nonzero mean that was projected out.
    pub projected: bool,
    pub mean: Real,
}

fn fft_axis(data: &mut [Complex<Real>], n: usize, axis: usize, inverse: bool, planner: &mut FftPlanner<Real>) {
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let stride = n.pow((2 - axis) as u32);
    let mut line = vec![Complex::new(0.0, 0.0); n];
    for base in 0..n * n * n {
        if !(base / stride).is_multiple_of(n) {
            continue;
        }
        for (t, l) in line.iter_mut().enumerate() {
            *l = data[base + t * stride];
        }
        fft.process(&mut line);
        for (t, l) in line.iter().enumerate() {
            data[base + t * stride] = *l;
        }
    }
}

/// Mean-zero solution of `Delta f = source` on the periodic box by FFT.
pub fn remainder_poisson(source: &[Real], bx: &PeriodicBox) -> LabResult<PoissonSolution> {
    let n = bx.n;
    if n < 2 || source.len() != n * n * n {
        return Err(LabError::Config(format!("source has {} samples for n = {n}", source.len())));
    }
    let mut data: Vec<Complex<Real>> = source.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        fft_axis(&mut data, n, axis, false, &mut planner);
    }
    let total = (n * n * n) as Real;
    let mean = data[0].re / total;
    let peak = source.iter().fold(0.0 as Real, |m, v| m.max(v.abs()));
    let projected = mean.abs() > 1e-12 * peak.max(Real::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = (i * n + j) * n + k;
                let kk = bx.wavenumber(i).powi(2) + bx.wavenumber(j).powi(2) + bx.wavenumber(k).powi(2);
                data[idx] = if kk == 0.0 { Complex::new(0.0, 0.0) } else { data[idx] * (-1.0 / kk) };
            }
        }
    }
    for axis in 0..3 {
        fft_axis(&mut data, n, axis, true, &mut planner);
    }
    Ok(PoissonSolution { values: data.iter().map(|c| c.re / total).collect(), projected, mean })
}

/// Applies [`remainder_poisson`] to each component of a covector source.
pub fn remainder_poisson_vector(source: &[Vec3], bx: &PeriodicBox) -> LabResult<(Vec<Vec3>, bool)> {
    let mut out = vec![[0.0; 3]; source.len()];
    let mut projected = false;
    for c in 0..3 {
        let comp: Vec<Real> = source.iter().map(|v| v[c]).collect();
        let sol = remainder_poisson(&comp, bx)?;
        projected |= sol.projected;
        for (o, v) in out.iter_mut().zip(sol.values) {
            o[c] = v;
        }
    }
    Ok((out, projected))
}

/// Max-norm of a harmonic map difference over the union of keys.
pub fn map_distance<T: Lin + Copy>(a: &HarmonicMap<T>, b: &HarmonicMap<T>, norm: impl Fn(&T) -> Real) -> Real {
    let mut keys: BTreeMap<&ModeKey, ()> = BTreeMap::new();
    for k in a.keys().chain(b.keys()) {
        keys.insert(k, ());
    }
    let mut worst: Real = 0.0;
    for k in keys.keys() {
        let d = match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) => {
                let mut z = *x;
                z.axpy(-1.0, y);
                norm(&z)
            }
            (Some(x), None) | (None, Some(x)) => norm(x),
            (None, None) => 0.0,
        };
        worst = worst.max(d);
    }
    worst
}
