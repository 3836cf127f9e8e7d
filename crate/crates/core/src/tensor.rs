//! Small fixed-size tensor algebra: symmetric rank-2 tensors, vectors and
//! pointwise metric inversion.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Scalar type used throughout the crate.
pub type Real = f64;

pub type Vec3 = [Real; 3];
pub type Vec4 = [Real; 4];
pub type Mat<const D: usize> = [[Real; D]; D];
/// Christoffel symbols `gamma[rho][mu][nu]`.
pub type Chris<const D: usize> = [[[Real; D]; D]; D];

/// Values that finite-difference stencils can combine linearly.
pub trait Lin: Clone {
    fn zero_like(&self) -> Self;
    fn axpy(&mut self, a: Real, x: &Self);
}

impl Lin for Real {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn axpy(&mut self, a: Real, x: &Self) {
        *self += a * x;
    }
}

impl<T: Lin, const N: usize> Lin for [T; N] {
    fn zero_like(&self) -> Self {
        std::array::from_fn(|i| self[i].zero_like())
    }
    fn axpy(&mut self, a: Real, x: &Self) {
        for (s, v) in self.iter_mut().zip(x.iter()) {
            s.axpy(a, v);
        }
    }
}

/// Symmetric rank-2 tensor. Only the upper triangle (`i <= j`) is stored;
/// every read goes through `get`, so symmetry is exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym<const D: usize> {
    #[serde(with = "serde_upper")]
    m: Mat<D>,
}

pub type Sym4 = Sym<4>;
pub type Sym3 = Sym<3>;

mod serde_upper {
    use super::{Mat, Real};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(m: &Mat<D>, s: S) -> Result<S::Ok, S::Error> {
        let mut out = Vec::with_capacity(D * (D + 1) / 2);
        for i in 0..D {
            for j in i..D {
                out.push(m[i][j]);
            }
        }
        out.serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(
        d: De,
    ) -> Result<Mat<D>, De::Error> {
        let v: Vec<Real> = Vec::deserialize(d)?;
        if v.len() != D * (D + 1) / 2 {
            return Err(serde::de::Error::custom("wrong number of upper-triangle entries"));
        }
        let mut m = [[0.0; D]; D];
        let mut k = 0;
        for i in 0..D {
            for j in i..D {
                m[i][j] = v[k];
                k += 1;
            }
        }
        Ok(m)
    }
}

impl<const D: usize> Default for Sym<D> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<const D: usize> Sym<D> {
    pub fn zero() -> Self {
        Sym { m: [[0.0; D]; D] }
    }

    pub fn identity() -> Self {
        Self::from_fn(|i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> Real) -> Self {
        let mut m = [[0.0; D]; D];
        for i in 0..D {
            for j in i..D {
                m[i][j] = f(i, j);
            }
        }
        Sym { m }
    }

    /// Symmetric part `(m + m^T) / 2` of a full matrix.
    pub fn from_mat_sym(a: &Mat<D>) -> Self {
        Self::from_fn(|i, j| 0.5 * (a[i][j] + a[j][i]))
    }

    /// Diagonal tensor.
    pub fn diag(d: [Real; D]) -> Self {
        Self::from_fn(|i, j| if i == j { d[i] } else { 0.0 })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Real {
        if i <= j {
            self.m[i][j]
        } else {
            self.m[j][i]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Real) {
        if i <= j {
            self.m[i][j] = v;
        } else {
            self.m[j][i] = v;
        }
    }

    pub fn to_mat(&self) -> Mat<D> {
        std::array::from_fn(|i| std::array::from_fn(|j| self.get(i, j)))
    }

    /// `a (x) b + b (x) a`, the un-normalized symmetrization of two covectors.
    pub fn sym_prod(a: &[Real; D], b: &[Real; D]) -> Self {
        Self::from_fn(|i, j| a[i] * b[j] + a[j] * b[i])
    }

    /// `a (x) a`.
    pub fn outer(a: &[Real; D]) -> Self {
        Self::from_fn(|i, j| a[i] * a[j])
    }

    /// `S(x, y) = S_ij x^i y^j`.
    pub fn contract2(&self, x: &[Real; D], y: &[Real; D]) -> Real {
        let mut s = 0.0;
        for i in 0..D {
            for j in 0..D {
                s += self.get(i, j) * x[i] * y[j];
            }
        }
        s
    }

    /// `S(x, .)` as a covector.
    pub fn contract1(&self, x: &[Real; D]) -> [Real; D] {
        std::array::from_fn(|j| (0..D).map(|i| self.get(i, j) * x[i]).sum())
    }

    pub fn max_abs(&self) -> Real {
        let mut m: Real = 0.0;
        for i in 0..D {
            for j in i..D {
                m = m.max(self.get(i, j).abs());
            }
        }
        m
    }

    /// Frobenius norm over all D*D components.
    pub fn frob(&self) -> Real {
        let mut s = 0.0;
        for i in 0..D {
            for j in 0..D {
                s += self.get(i, j).powi(2);
            }
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        (0..D).all(|i| (i..D).all(|j| self.get(i, j).is_finite()))
    }

    /// Upper-triangle entries in row-major order.
    pub fn upper(&self) -> Vec<Real> {
        let mut v = Vec::with_capacity(D * (D + 1) / 2);
        for i in 0..D {
            for j in i..D {
                v.push(self.get(i, j));
            }
        }
        v
    }
}

impl<const D: usize> Lin for Sym<D> {
    fn zero_like(&self) -> Self {
        Self::zero()
    }
    fn axpy(&mut self, a: Real, x: &Self) {
        for i in 0..D {
            for j in i..D {
                self.m[i][j] += a * x.m[i][j];
            }
        }
    }
}

impl<const D: usize> Add for Sym<D> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.axpy(1.0, &rhs);
        self
    }
}

impl<const D: usize> AddAssign for Sym<D> {
    fn add_assign(&mut self, rhs: Self) {
        self.axpy(1.0, &rhs);
    }
}

impl<const D: usize> Sub for Sym<D> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.axpy(-1.0, &rhs);
        self
    }
}

impl<const D: usize> Neg for Sym<D> {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const D: usize> Mul<Real> for Sym<D> {
    type Output = Self;
    fn mul(mut self, a: Real) -> Self {
        for i in 0..D {
            for j in i..D {
                self.m[i][j] *= a;
            }
        }
        self
    }
}

impl<const D: usize> Mul<Sym<D>> for Real {
    type Output = Sym<D>;
    fn mul(self, s: Sym<D>) -> Sym<D> {
        s * self
    }
}

pub fn dot<const D: usize>(a: &[Real; D], b: &[Real; D]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn scale<const D: usize>(a: Real, v: &[Real; D]) -> [Real; D] {
    std::array::from_fn(|i| a * v[i])
}

pub fn add<const D: usize>(a: &[Real; D], b: &[Real; D]) -> [Real; D] {
    std::array::from_fn(|i| a[i] + b[i])
}

pub fn sub<const D: usize>(a: &[Real; D], b: &[Real; D]) -> [Real; D] {
    std::array::from_fn(|i| a[i] - b[i])
}

/// `a + s * b`.
pub fn axpy<const D: usize>(a: &[Real; D], s: Real, b: &[Real; D]) -> [Real; D] {
    std::array::from_fn(|i| a[i] + s * b[i])
}

pub fn max_abs<const D: usize>(v: &[Real; D]) -> Real {
    v.iter().fold(0.0, |m: Real, x| m.max(x.abs()))
}

pub fn norm2<const D: usize>(v: &[Real; D]) -> Real {
    dot(v, v).sqrt()
}

/// Gauss-Jordan inverse with partial pivoting; also returns the determinant.
pub fn invert<const D: usize>(a: &Mat<D>) -> LabResult<(Mat<D>, Real)> {
    let mut m = *a;
    let mut inv: Mat<D> = std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 }));
    let mut det = 1.0;
    for col in 0..D {
        let piv = (col..D)
            .max_by(|&r, &s| m[r][col].abs().total_cmp(&m[s][col].abs()))
            .unwrap_or(col);
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return Err(LabError::SingularMetric { det: 0.0 });
        }
        if piv != col {
            m.swap(piv, col);
            inv.swap(piv, col);
            det = -det;
        }
        let p = m[col][col];
        det *= p;
        for j in 0..D {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..D {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for j in 0..D {
                        m[r][j] -= f * m[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok((inv, det))
}

/// Pointwise metric value with its inverse.
#[derive(Clone, Copy, Debug)]
pub struct MetricAt<const D: usize> {
    pub g: Sym<D>,
    pub ginv: Sym<D>,
    pub det: Real,
}

/// Determinant threshold below which a metric value is treated as singular.
pub const DET_MIN: Real = 1e-12;

impl<const D: usize> MetricAt<D> {
    pub fn new(g: Sym<D>) -> LabResult<Self> {
        if !g.is_finite() {
            return Err(LabError::SingularMetric { det: Real::NAN });
        }
        let (inv, det) = invert(&g.to_mat())?;
        if det.abs() < DET_MIN {
            return Err(LabError::SingularMetric { det });
        }
        let ginv = Sym::from_mat_sym(&inv);
        Ok(MetricAt { g, ginv, det })
    }

    /// `v_a = g_ab v^b`.
    pub fn lower(&self, v: &[Real; D]) -> [Real; D] {
        self.g.contract1(v)
    }

    /// `w^a = g^ab w_b`.
    pub fn raise(&self, w: &[Real; D]) -> [Real; D] {
        self.ginv.contract1(w)
    }

    /// `g(x, y)` on vectors.
    pub fn ip(&self, x: &[Real; D], y: &[Real; D]) -> Real {
        self.g.contract2(x, y)
    }

    /// `g^{-1}(a, b)` on covectors.
    pub fn ip_inv(&self, a: &[Real; D], b: &[Real; D]) -> Real {
        self.ginv.contract2(a, b)
    }

    /// `tr_g S = g^ab S_ab`.
    pub fn trace(&self, s: &Sym<D>) -> Real {
        let mut t = 0.0;
        for a in 0..D {
            for b in 0..D {
                t += self.ginv.get(a, b) * s.get(a, b);
            }
        }
        t
    }

    /// `S_a^b = S_ac g^cb` as a full matrix `[a][b]`.
    pub fn mixed(&self, s: &Sym<D>) -> Mat<D> {
        std::array::from_fn(|a| {
            std::array::from_fn(|b| (0..D).map(|c| s.get(a, c) * self.ginv.get(c, b)).sum())
        })
    }

    /// `g^ab g^mn T_am S_bn`.
    pub fn dot(&self, t: &Sym<D>, s: &Sym<D>) -> Real {
        let tm = self.mixed(t);
        let sm = self.mixed(s);
        // T_a^m S_m^a with both mixed once
        let mut r = 0.0;
        for a in 0..D {
            for m in 0..D {
                r += tm[a][m] * sm[m][a];
            }
        }
        r
    }

    /// `(T.S)_ab = T_a^m S_mb`, not symmetric in general.
    pub fn product(&self, t: &Sym<D>, s: &Sym<D>) -> Mat<D> {
        let tm = self.mixed(t);
        std::array::from_fn(|a| std::array::from_fn(|b| (0..D).map(|m| tm[a][m] * s.get(m, b)).sum()))
    }

    /// `S^ab = g^am g^bn S_mn`.
    pub fn raise_both(&self, s: &Sym<D>) -> Sym<D> {
        let gi = self.ginv.to_mat();
        Sym::from_fn(|a, b| {
            let mut r = 0.0;
            for m in 0..D {
                for n in 0..D {
                    r += gi[a][m] * gi[b][n] * s.get(m, n);
                }
            }
            r
        })
    }

    /// Lowers both indices of a contravariant symmetric tensor.
    pub fn lower_both(&self, s: &Sym<D>) -> Sym<D> {
        let g = self.g.to_mat();
        Sym::from_fn(|a, b| {
            let mut r = 0.0;
            for m in 0..D {
                for n in 0..D {
                    r += g[a][m] * g[b][n] * s.get(m, n);
                }
            }
            r
        })
    }

    /// `max |g g^{-1} - I|` componentwise.
    pub fn inverse_residual(&self) -> Real {
        let mut e: Real = 0.0;
        for i in 0..D {
            for j in 0..D {
                let v: Real = (0..D).map(|k| self.g.get(i, k) * self.ginv.get(k, j)).sum();
                e = e.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        e
    }
}

/// Norms of Section-style contractions: `dot = |T.S|`, `norm = |T|`, `trace = tr T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorNorms {
    pub dot: Real,
    /// `sqrt(|T|^2)` when the self-dot is nonnegative, otherwise `-sqrt(-|T|^2)`.
    pub norm: Real,
    pub norm_sq: Real,
    pub trace: Real,
}

pub fn tensor_norms<const D: usize>(s: &Sym<D>, t: &Sym<D>, g: &MetricAt<D>) -> TensorNorms {
    let nsq = g.dot(t, t);
    TensorNorms {
        dot: g.dot(t, s),
        norm: nsq.signum() * nsq.abs().sqrt(),
        norm_sq: nsq,
        trace: g.trace(t),
    }
}

/// Index position for `raise_lower`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Raise,
    Lower,
    Keep,
}

/// Raises or lowers the two slots of a (not necessarily symmetric) rank-2 array.
pub fn raise_lower<const D: usize>(s: &Mat<D>, g: &MetricAt<D>, slots: [Slot; 2]) -> Mat<D> {
    let pick = |slot: Slot| -> Option<Mat<D>> {
        match slot {
            Slot::Raise => Some(g.ginv.to_mat()),
            Slot::Lower => Some(g.g.to_mat()),
            Slot::Keep => None,
        }
    };
    let mut out = *s;
    if let Some(m) = pick(slots[0]) {
        out = std::array::from_fn(|a| std::array::from_fn(|b| (0..D).map(|c| m[a][c] * out[c][b]).sum()));
    }
    if let Some(m) = pick(slots[1]) {
        out = std::array::from_fn(|a| std::array::from_fn(|b| (0..D).map(|c| out[a][c] * m[c][b]).sum()));
    }
    out
}

/// Minkowski metric `diag(-1, 1, 1, 1)`.
pub fn minkowski() -> Sym4 {
    Sym::diag([-1.0, 1.0, 1.0, 1.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn storage_is_symmetric() {
        let mut s = Sym4::zero();
        s.set(3, 1, 2.5);
        assert_eq!(s.get(1, 3), 2.5);
        assert_eq!(s.get(3, 1), 2.5);
    }

    #[test]
    fn symmetrization_is_unnormalized() {
        let a = [1.0, 0.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0];
        let s = Sym4::sym_prod(&a, &b);
        assert_eq!(s.get(0, 1), 1.0);
        let d = Sym4::sym_prod(&a, &a);
        assert_eq!(d.get(0, 0), 2.0);
    }

    #[test]
    fn minkowski_lowering() {
        let g = MetricAt::new(minkowski()).unwrap();
        assert_eq!(g.lower(&[1.0, 0.0, 0.0, 0.0]), [-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn norms_of_minkowski_and_tt() {
        let g = MetricAt::new(minkowski()).unwrap();
        let n = tensor_norms(&minkowski(), &minkowski(), &g);
        assert_abs_diff_eq!(n.trace, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.norm_sq, 4.0, epsilon = 1e-15);
        let t = Sym4::diag([0.0, 0.0, 1.0, -1.0]);
        let n = tensor_norms(&t, &t, &g);
        assert_abs_diff_eq!(n.trace, 0.0, epsilon = 1e-15);
        // componentwise oracle: sum of squares of the two nonzero entries
        let oracle: Real = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| t.get(i, j).powi(2)).sum();
        assert_abs_diff_eq!(n.norm_sq, oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(n.norm_sq, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_metric_rejected() {
        let g = Sym4::diag([-1.0, 1.0, 1.0, 0.0]);
        assert!(matches!(MetricAt::new(g), Err(LabError::SingularMetric { .. })));
    }

    fn lorentz_strategy() -> impl Strategy<Value = Sym4> {
        proptest::array::uniform10(-0.2f64..0.2).prop_map(|e| {
            let mut k = 0;
            let mut g = minkowski();
            for i in 0..4 {
                for j in i..4 {
                    g.set(i, j, g.get(i, j) + e[k]);
                    k += 1;
                }
            }
            g
        })
    }

    proptest! {
        #[test]
        fn raise_then_lower_is_identity(g in lorentz_strategy(), w in proptest::array::uniform4(-2.0f64..2.0)) {
            let m = MetricAt::new(g).unwrap();
            let up = m.raise(&w);
            let back = m.lower(&up);
            for i in 0..4 {
                prop_assert!((back[i] - w[i]).abs() < 1e-13);
            }
        }

        #[test]
        fn inverse_is_accurate(g in lorentz_strategy()) {
            let m = MetricAt::new(g).unwrap();
            prop_assert!(m.inverse_residual() < 1e-13);
        }

        #[test]
        fn raised_form_solves_linear_system(g in lorentz_strategy(), w in proptest::array::uniform4(-2.0f64..2.0)) {
            // oracle: nalgebra LU solve of g x = w
            let m = MetricAt::new(g).unwrap();
            let gm = nalgebra::Matrix4::from_fn(|i, j| g.get(i, j));
            let x = gm.lu().solve(&nalgebra::Vector4::from_column_slice(&w)).unwrap();
            let up = m.raise(&w);
            for i in 0..4 {
                prop_assert!((up[i] - x[i]).abs() < 1e-13);
            }
        }

        #[test]
        fn raise_lower_slots_round_trip(g in lorentz_strategy(), e in proptest::array::uniform16(-1.0f64..1.0)) {
            let m = MetricAt::new(g).unwrap();
            let s: Mat<4> = std::array::from_fn(|i| std::array::from_fn(|j| e[4 * i + j]));
            let up = raise_lower(&s, &m, [Slot::Raise, Slot::Raise]);
            let back = raise_lower(&up, &m, [Slot::Lower, Slot::Lower]);
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((back[i][j] - s[i][j]).abs() < 1e-13);
                }
            }
        }
    }
}
