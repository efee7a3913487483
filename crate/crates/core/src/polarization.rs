//! Jones calculus for a single photon's polarization.
//!
//! All operators act in the `{|H⟩, |V⟩}` basis. Both parties use the coordinate
//! convention in which a reciprocal medium traversed backwards acts as
//! `Z Ωᵀ Z`, where `Ω` is its forward action.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::qmath::{herm_eig, pauli, CMatrix, I, ONE, ZERO};
use crate::{Error, Result, C64};

/// Tolerance for the passivity check on lossy media.
pub const PASSIVE_TOL: f64 = 1e-12;

/// A 2×2 operator on polarization.
#[derive(Clone, Debug, PartialEq)]
pub struct JonesOperator(CMatrix);

impl JonesOperator {
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.rows() != 2 || mat.cols() != 2 {
            return Err(Error::InvalidDims(format!(
                "Jones operator must be 2x2, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        Ok(JonesOperator(mat))
    }

    pub fn from_entries(hh: C64, hv: C64, vh: C64, vv: C64) -> Self {
        JonesOperator(CMatrix::from_rows(&[[hh, hv], [vh, vv]]))
    }

    pub fn identity() -> Self {
        JonesOperator(pauli::id())
    }

    pub fn x() -> Self {
        JonesOperator(pauli::x())
    }

    pub fn y() -> Self {
        JonesOperator(pauli::y())
    }

    pub fn z() -> Self {
        JonesOperator(pauli::z())
    }

    pub fn mat(&self) -> &CMatrix {
        &self.0
    }

    /// `⟨H|Ω|H⟩`
    pub fn hh(&self) -> C64 {
        self.0[(0, 0)]
    }

    /// `⟨H|Ω|V⟩`
    pub fn hv(&self) -> C64 {
        self.0[(0, 1)]
    }

    /// `⟨V|Ω|H⟩`
    pub fn vh(&self) -> C64 {
        self.0[(1, 0)]
    }

    /// `⟨V|Ω|V⟩`
    pub fn vv(&self) -> C64 {
        self.0[(1, 1)]
    }

    pub fn then(&self, next: &JonesOperator) -> JonesOperator {
        JonesOperator(next.mat() * self.mat())
    }

    pub fn scale(&self, s: C64) -> JonesOperator {
        JonesOperator(self.0.scale(s))
    }

    pub fn transpose(&self) -> JonesOperator {
        JonesOperator(self.0.transpose())
    }

    pub fn unitarity_error(&self) -> f64 {
        self.0.unitarity_error()
    }

    /// Largest singular value.
    pub fn max_singular_value(&self) -> f64 {
        let gram = &self.0.adjoint() * &self.0;
        herm_eig(&gram)
            .map(|(v, _)| v[0].max(0.0).sqrt())
            .unwrap_or(f64::INFINITY)
    }

    /// `0 ≤ Ω†Ω ≤ 1`, to [`PASSIVE_TOL`].
    pub fn check_passive(&self) -> Result<()> {
        let s = self.max_singular_value();
        if s > 1.0 + PASSIVE_TOL || !s.is_finite() {
            return Err(Error::NotPassive(s));
        }
        Ok(())
    }

    /// Residual `‖A − e^{iλ}B‖_max` with `λ = arg Tr(B†A)`.
    pub fn phase_residual(&self, other: &JonesOperator) -> f64 {
        let overlap = other.0.inner(&self.0);
        let phase = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            ONE
        };
        self.0.max_abs_diff(&other.0.scale(phase))
    }

    /// Equality up to a global phase, to `1e-10`.
    pub fn equals_up_to_phase(&self, other: &JonesOperator) -> bool {
        self.phase_residual(other) < 1e-10
    }

    pub fn apply(&self, ket: &[C64; 2]) -> [C64; 2] {
        [
            self.hh() * ket[0] + self.hv() * ket[1],
            self.vh() * ket[0] + self.vv() * ket[1],
        ]
    }
}

/// Half-wave plate: `H(θ) = cos 2θ Z − sin 2θ X`.
pub fn hwp(theta: f64) -> JonesOperator {
    let c = C64::new((2.0 * theta).cos(), 0.0);
    let s = C64::new((2.0 * theta).sin(), 0.0);
    JonesOperator::from_entries(c, -s, -s, -c)
}

/// Quarter-wave plate: `Q(φ) = (iI − cos 2φ Z + sin 2φ X)/√2`.
pub fn qwp(phi: f64) -> JonesOperator {
    let c = (2.0 * phi).cos();
    let s = (2.0 * phi).sin();
    let k = FRAC_1_SQRT_2;
    JonesOperator::from_entries(
        C64::new(-c, 1.0) * k,
        C64::new(s, 0.0) * k,
        C64::new(s, 0.0) * k,
        C64::new(c, 1.0) * k,
    )
}

fn canonical_angle(a: f64) -> f64 {
    // map to (−π, π]
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Angles (radians) of the QWP–HWP–QWP stack forming one noisy channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSetting {
    pub phi1: f64,
    pub theta: f64,
    pub phi2: f64,
}

impl WaveplateSetting {
    /// Angles are reduced to `(−π, π]`; non-finite angles are rejected.
    pub fn new(phi1: f64, theta: f64, phi2: f64) -> Result<Self> {
        for (name, v) in [("phi1", phi1), ("theta", theta), ("phi2", phi2)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "waveplate angle {name} is not finite"
                )));
            }
        }
        Ok(WaveplateSetting {
            phi1: canonical_angle(phi1),
            theta: canonical_angle(theta),
            phi2: canonical_angle(phi2),
        })
    }
}

/// Action `Q(φ₂) H(θ) Q(φ₁)` on a forward-propagating photon.
pub fn forward_op(s: &WaveplateSetting) -> JonesOperator {
    JonesOperator(&(qwp(s.phi2).mat() * hwp(s.theta).mat()) * qwp(s.phi1).mat())
}

/// Action `Q(−φ₁) H(−θ) Q(−φ₂)` on a backward-propagating photon.
pub fn backward_op(s: &WaveplateSetting) -> JonesOperator {
    JonesOperator(&(qwp(-s.phi1).mat() * hwp(-s.theta).mat()) * qwp(-s.phi2).mat())
}

/// Backward action of a reciprocal medium with forward action `omega`:
/// `⟨i|Ω_b|j⟩ = ⟨j|Z Ω_f Z|i⟩`, i.e. `Ω_b = Z Ω_fᵀ Z`.
pub fn reciprocal_conjugate(omega: &JonesOperator) -> JonesOperator {
    let z = pauli::z();
    JonesOperator(&(&z * &omega.0.transpose()) * &z)
}

/// One of the four channel actions realised by the waveplate stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PauliLabel {
    I,
    X,
    Y,
    Z,
}

impl PauliLabel {
    pub const ALL: [PauliLabel; 4] = [PauliLabel::I, PauliLabel::X, PauliLabel::Y, PauliLabel::Z];

    pub fn matrix(self) -> JonesOperator {
        match self {
            PauliLabel::I => JonesOperator::identity(),
            PauliLabel::X => JonesOperator::x(),
            PauliLabel::Y => JonesOperator::y(),
            PauliLabel::Z => JonesOperator::z(),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PauliLabel::I => "I",
            PauliLabel::X => "X",
            PauliLabel::Y => "Y",
            PauliLabel::Z => "Z",
        };
        f.write_str(s)
    }
}

impl FromStr for PauliLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" => Ok(PauliLabel::I),
            "X" | "x" => Ok(PauliLabel::X),
            "Y" | "y" => Ok(PauliLabel::Y),
            "Z" | "z" => Ok(PauliLabel::Z),
            other => Err(Error::InvalidParameter(format!(
                "unknown Pauli label `{other}` (expected I, X, Y or Z)"
            ))),
        }
    }
}

/// Waveplate angles `(φ₁, θ, φ₂)` realising each Pauli action up to phase.
pub fn pauli_setting(p: PauliLabel) -> WaveplateSetting {
    let (phi1, theta, phi2) = match p {
        PauliLabel::I => (0.0, 0.0, 0.0),
        PauliLabel::X => (0.0, -FRAC_PI_4, 0.0),
        PauliLabel::Y => (FRAC_PI_2, -FRAC_PI_4, 0.0),
        PauliLabel::Z => (FRAC_PI_4, 0.0, FRAC_PI_4),
    };
    WaveplateSetting { phi1, theta, phi2 }
}

/// `|D⟩ = (|H⟩ + |V⟩)/√2`.
pub fn ket_d() -> [C64; 2] {
    [C64::new(FRAC_1_SQRT_2, 0.0), C64::new(FRAC_1_SQRT_2, 0.0)]
}

pub fn ket_h() -> [C64; 2] {
    [ONE, ZERO]
}

pub fn ket_v() -> [C64; 2] {
    [ZERO, ONE]
}

/// `|R⟩ = (|H⟩ + i|V⟩)/√2`.
pub fn ket_r() -> [C64; 2] {
    [C64::new(FRAC_1_SQRT_2, 0.0), I * FRAC_1_SQRT_2]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: &JonesOperator, b: &CMatrix, tol: f64) -> bool {
        a.mat().max_abs_diff(b) < tol
    }

    #[test]
    fn hwp_values() {
        assert!(approx(&hwp(0.0), &pauli::z(), 1e-15));
        assert!(approx(&hwp(-FRAC_PI_4), &pauli::x(), 1e-15));
        let expected = (&pauli::z() - &pauli::x()).scale_re(FRAC_1_SQRT_2);
        assert!(approx(&hwp(PI / 8.0), &expected, 1e-15));
        let h = hwp(0.3);
        assert!(h.unitarity_error() < 1e-14);
        assert!(h.mat().is_hermitian(1e-15));
    }

    #[test]
    fn qwp_values() {
        let id = pauli::id().scale(I);
        let k = FRAC_1_SQRT_2;
        assert!(approx(&qwp(0.0), &(&id - &pauli::z()).scale_re(k), 1e-15));
        assert!(approx(&qwp(FRAC_PI_4), &(&id + &pauli::x()).scale_re(k), 1e-15));
        assert!(approx(&qwp(FRAC_PI_2), &(&id + &pauli::z()).scale_re(k), 1e-15));
        assert!(qwp(1.1).unitarity_error() < 1e-14);
    }

    #[test]
    fn forward_pauli_settings_with_signs() {
        let f_i = forward_op(&pauli_setting(PauliLabel::I));
        assert!(approx(&f_i, &pauli::id().scale(-I), 1e-15));
        let f_x = forward_op(&pauli_setting(PauliLabel::X));
        assert!(approx(&f_x, &pauli::x().scale_re(-1.0), 1e-15));
        let f_z = forward_op(&pauli_setting(PauliLabel::Z));
        assert!(f_z.equals_up_to_phase(&JonesOperator::z()));
    }

    #[test]
    fn backward_pauli_settings() {
        let b_i = backward_op(&pauli_setting(PauliLabel::I));
        assert!(approx(&b_i, &pauli::id().scale(-I), 1e-15));
        let b_x = backward_op(&pauli_setting(PauliLabel::X));
        assert!(approx(&b_x, &pauli::x(), 1e-15));
        for p in PauliLabel::ALL {
            let f = forward_op(&pauli_setting(p));
            let b = backward_op(&pauli_setting(p));
            assert!(f.equals_up_to_phase(&p.matrix()), "{p} forward");
            assert!(b.equals_up_to_phase(&p.matrix()), "{p} backward");
            assert!(f.unitarity_error() < 1e-12);
        }
    }

    #[test]
    fn reciprocal_conjugate_examples() {
        assert!(approx(&reciprocal_conjugate(&JonesOperator::identity()), &pauli::id(), 1e-15));
        assert!(approx(
            &reciprocal_conjugate(&JonesOperator::x()),
            &pauli::x().scale_re(-1.0),
            1e-15
        ));
        let (a, b, c, d) = (
            C64::new(0.1, 0.2),
            C64::new(-0.3, 0.05),
            C64::new(0.4, -0.6),
            C64::new(0.7, 0.0),
        );
        let omega = JonesOperator::from_entries(a, b, c, d);
        let r = reciprocal_conjugate(&omega);
        assert_eq!((r.hh(), r.vv()), (a, d));
        assert_eq!((r.hv(), r.vh()), (-c, -b));
    }

    #[test]
    fn pauli_setting_table() {
        assert_eq!(
            pauli_setting(PauliLabel::I),
            WaveplateSetting { phi1: 0.0, theta: 0.0, phi2: 0.0 }
        );
        assert_eq!(
            pauli_setting(PauliLabel::Y),
            WaveplateSetting { phi1: FRAC_PI_2, theta: -FRAC_PI_4, phi2: 0.0 }
        );
        assert_eq!(
            pauli_setting(PauliLabel::Z),
            WaveplateSetting { phi1: FRAC_PI_4, theta: 0.0, phi2: FRAC_PI_4 }
        );
    }

    #[test]
    fn average_hh_transmission_is_half() {
        let avg: f64 = PauliLabel::ALL
            .iter()
            .map(|&p| forward_op(&pauli_setting(p)).hh().norm_sqr())
            .sum::<f64>()
            / 4.0;
        assert!((avg - 0.5).abs() < 1e-15);
    }

    #[test]
    fn passivity_check() {
        assert!(JonesOperator::identity().scale(C64::new(0.5, 0.0)).check_passive().is_ok());
        assert!(matches!(
            JonesOperator::x().scale(C64::new(1.01, 0.0)).check_passive(),
            Err(Error::NotPassive(_))
        ));
    }

    #[test]
    fn non_finite_angle_rejected() {
        assert!(WaveplateSetting::new(f64::NAN, 0.0, 0.0).is_err());
        let s = WaveplateSetting::new(3.0 * PI, -PI, 0.5).unwrap();
        assert!((s.phi1 - PI).abs() < 1e-12 && (s.theta - PI).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn reciprocity_identity(p1 in -10.0..10.0f64, t in -10.0..10.0f64, p2 in -10.0..10.0f64) {
            let s = WaveplateSetting::new(p1, t, p2).unwrap();
            let f = forward_op(&s);
            let b = backward_op(&s);
            prop_assert!(b.mat().max_abs_diff(reciprocal_conjugate(&f).mat()) < 1e-12);
            prop_assert!((b.hh() - f.hh()).norm() < 1e-12);
            prop_assert!((b.vv() - f.vv()).norm() < 1e-12);
        }

        #[test]
        fn canonical_range_keeps_operator(p1 in -20.0..20.0f64, t in -20.0..20.0f64) {
            let raw = WaveplateSetting { phi1: p1, theta: t, phi2: 0.0 };
            let canon = WaveplateSetting::new(p1, t, 0.0).unwrap();
            prop_assert!(canon.phi1 > -PI && canon.phi1 <= PI);
            prop_assert!(forward_op(&raw).mat().max_abs_diff(forward_op(&canon).mat()) < 1e-12);
        }
    }
}
