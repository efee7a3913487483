//! Truncated multimode Fock space.
//!
//! States live on a [`ModeSet`]: an ordered list of mode labels sharing one
//! per-mode photon cutoff. Pure states are dense amplitude vectors; mixed states
//! ([`FockDensity`]) are kept as ensembles of unnormalised pure branches,
//! `ρ = Σₖ |ψₖ⟩⟨ψₖ|`, because an explicit density matrix over eight modes would
//! be far larger than the amplitude vectors it is built from.

mod detect;
mod tensor;

use std::collections::HashMap;

use log::warn;

use crate::qmath::{CMatrix, DensityMatrix, ONE, ZERO};
use crate::{Error, Result, C64};

pub use detect::{coincidence_table, threshold_click_prob, ClickOutcome, CoincidenceTable, Detector, PassMode};
pub(crate) use tensor::ModeTensor;

/// Default bound on `(cutoff+1)^modes`.
pub const DEFAULT_MAX_DIM: usize = 1 << 17;
/// Largest space for which [`FockDensity::density_matrix`] builds a dense matrix.
pub const MAX_DENSE_DIM: usize = 1 << 12;

/// Mode labels used by the protocol.
pub mod labels {
    pub const A_H: &str = "A_H";
    pub const A_V: &str = "A_V";
    pub const S_H: &str = "S_H";
    pub const S_V: &str = "S_V";
    pub const R_H: &str = "R_H";
    pub const R_V: &str = "R_V";
    /// Temporal modes of the reference orthogonal to the signal-photon mode.
    pub const R_H_MISMATCH: &str = "R'_H";
    pub const R_V_MISMATCH: &str = "R'_V";
}

/// Ordered, uniquely labelled bosonic modes with a shared photon cutoff.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModeSet {
    labels: Vec<String>,
    cutoff: usize,
    max_dim: usize,
}

impl ModeSet {
    pub fn new<S: AsRef<str>>(labels: &[S], cutoff: usize) -> Result<Self> {
        Self::with_limit(labels, cutoff, DEFAULT_MAX_DIM)
    }

    pub fn with_limit<S: AsRef<str>>(labels: &[S], cutoff: usize, max_dim: usize) -> Result<Self> {
        if cutoff < 1 {
            return Err(Error::CutoffTooSmall { min: 1, got: cutoff });
        }
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::ModeCollision(l.clone()));
            }
        }
        let set = ModeSet {
            labels,
            cutoff,
            max_dim,
        };
        set.check_dim()?;
        Ok(set)
    }

    fn check_dim(&self) -> Result<()> {
        let mut dim: usize = 1;
        for _ in &self.labels {
            dim = dim.saturating_mul(self.cutoff + 1);
        }
        if dim > self.max_dim {
            return Err(Error::SpaceTooLarge {
                dim,
                limit: self.max_dim,
            });
        }
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        (self.cutoff + 1).pow(self.labels.len() as u32)
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// Concatenation; labels must be disjoint and cutoffs equal.
    pub fn join(&self, other: &ModeSet) -> Result<ModeSet> {
        if self.cutoff != other.cutoff {
            return Err(Error::InvalidParameter(format!(
                "cannot join mode sets with cutoffs {} and {}",
                self.cutoff, other.cutoff
            )));
        }
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        ModeSet::with_limit(&labels, self.cutoff, self.max_dim.max(other.max_dim))
    }

    fn without(&self, axis: usize) -> ModeSet {
        let mut labels = self.labels.clone();
        labels.remove(axis);
        ModeSet {
            labels,
            cutoff: self.cutoff,
            max_dim: self.max_dim,
        }
    }
}

/// Pure (possibly unnormalised) state on a [`ModeSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    modes: ModeSet,
    amps: Vec<C64>,
}

impl FockState {
    pub fn vacuum(modes: &ModeSet) -> Self {
        let mut amps = vec![ZERO; modes.dim()];
        amps[0] = ONE;
        FockState {
            modes: modes.clone(),
            amps,
        }
    }

    pub fn from_amplitudes(modes: &ModeSet, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != modes.dim() {
            return Err(Error::InvalidDims(format!(
                "{} amplitudes for a space of dimension {}",
                amps.len(),
                modes.dim()
            )));
        }
        Ok(FockState {
            modes: modes.clone(),
            amps,
        })
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    fn flat_index(&self, occupations: &[usize]) -> usize {
        let d = self.modes.cutoff + 1;
        occupations.iter().fold(0, |acc, &n| acc * d + n)
    }

    /// Amplitude of the basis state with the given occupations (one per mode,
    /// in mode order).
    pub fn amplitude(&self, occupations: &[usize]) -> Result<C64> {
        if occupations.len() != self.modes.len() || occupations.iter().any(|&n| n > self.modes.cutoff) {
            return Err(Error::InvalidDims(format!(
                "occupation {occupations:?} outside the truncated space"
            )));
        }
        Ok(self.amps[self.flat_index(occupations)])
    }

    /// Amplitude by label; unlisted modes are taken empty.
    pub fn amplitude_of(&self, occupations: &[(&str, usize)]) -> Result<C64> {
        let mut occ = vec![0; self.modes.len()];
        for &(label, n) in occupations {
            occ[self.modes.index_of(label)?] = n;
        }
        self.amplitude(&occ)
    }

    /// Mean photon number of one mode (normalised expectation).
    pub fn mean_photons(&self, label: &str) -> Result<f64> {
        let axis = self.modes.index_of(label)?;
        let t = self.to_tensor();
        let stride = t.strides()[axis];
        let d = self.modes.cutoff + 1;
        let num: f64 = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, z)| ((i / stride) % d) as f64 * z.norm_sqr())
            .sum();
        Ok(num / self.norm_sqr())
    }

    pub fn normalized(&self) -> Result<FockState> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            return Err(Error::InvalidState("cannot normalise a zero state".into()));
        }
        let s = 1.0 / n.sqrt();
        Ok(FockState {
            modes: self.modes.clone(),
            amps: self.amps.iter().map(|z| z * s).collect(),
        })
    }

    pub fn tensor(&self, other: &FockState) -> Result<FockState> {
        let modes = self.modes.join(&other.modes)?;
        Ok(FockState {
            modes,
            amps: crate::qmath::tensor_vec(&self.amps, &other.amps),
        })
    }

    pub(crate) fn to_tensor(&self) -> ModeTensor {
        ModeTensor::new(
            self.modes.labels.clone(),
            vec![self.modes.cutoff + 1; self.modes.len()],
            self.amps.clone(),
        )
    }

    pub(crate) fn from_tensor(modes: ModeSet, t: ModeTensor) -> FockState {
        debug_assert!(t.dims.iter().all(|&d| d == modes.cutoff + 1));
        FockState { modes, amps: t.data }
    }
}

/// Mixed state as an ensemble of unnormalised pure branches. The trace is kept
/// unnormalised so that it carries the probability of the events that led to it.
#[derive(Clone, Debug)]
pub struct FockDensity {
    modes: ModeSet,
    branches: Vec<FockState>,
}

/// Branches below this squared norm are dropped.
const BRANCH_EPS: f64 = 1e-300;

impl FockDensity {
    pub fn from_pure(psi: FockState) -> Self {
        FockDensity {
            modes: psi.modes.clone(),
            branches: vec![psi],
        }
    }

    pub fn vacuum(modes: &ModeSet) -> Self {
        Self::from_pure(FockState::vacuum(modes))
    }

    pub fn from_branches(modes: &ModeSet, branches: Vec<FockState>) -> Result<Self> {
        if branches.iter().any(|b| b.modes != *modes) {
            return Err(Error::InvalidDims("branch mode sets differ".into()));
        }
        Ok(FockDensity {
            modes: modes.clone(),
            branches,
        })
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn branches(&self) -> &[FockState] {
        &self.branches
    }

    /// Unnormalised trace.
    pub fn norm(&self) -> f64 {
        self.branches.iter().map(FockState::norm_sqr).sum()
    }

    pub fn normalized(&self) -> Result<FockDensity> {
        let n = self.norm();
        if n <= 0.0 {
            return Err(Error::InvalidState("cannot normalise a zero state".into()));
        }
        Ok(self.scaled(1.0 / n))
    }

    /// Multiplies the trace by `factor`.
    pub fn scaled(&self, factor: f64) -> FockDensity {
        let s = factor.sqrt();
        FockDensity {
            modes: self.modes.clone(),
            branches: self
                .branches
                .iter()
                .map(|b| FockState {
                    modes: b.modes.clone(),
                    amps: b.amps.iter().map(|z| z * s).collect(),
                })
                .collect(),
        }
    }

    /// Incoherent sum of two ensembles on the same modes.
    pub fn mix(&self, other: &FockDensity) -> Result<FockDensity> {
        if self.modes != other.modes {
            return Err(Error::InvalidDims("cannot mix states on different modes".into()));
        }
        let mut branches = self.branches.clone();
        branches.extend(other.branches.iter().cloned());
        Ok(FockDensity {
            modes: self.modes.clone(),
            branches,
        })
    }

    pub fn tensor(&self, other: &FockDensity) -> Result<FockDensity> {
        let modes = self.modes.join(&other.modes)?;
        let mut branches = Vec::with_capacity(self.branches.len() * other.branches.len());
        for a in &self.branches {
            for b in &other.branches {
                branches.push(FockState {
                    modes: modes.clone(),
                    amps: crate::qmath::tensor_vec(&a.amps, &b.amps),
                });
            }
        }
        Ok(FockDensity { modes, branches })
    }

    /// Dense normalised density matrix; only for small spaces.
    pub fn density_matrix(&self) -> Result<DensityMatrix> {
        let dim = self.modes.dim();
        if dim > MAX_DENSE_DIM {
            return Err(Error::SpaceTooLarge {
                dim,
                limit: MAX_DENSE_DIM,
            });
        }
        let mut m = CMatrix::zeros(dim, dim);
        for b in &self.branches {
            m = &m + &CMatrix::outer(&b.amps, &b.amps);
        }
        DensityMatrix::from_unnormalized(m)
    }

    /// Expectation of the photon number of one mode, normalised by the trace.
    pub fn mean_photons(&self, label: &str) -> Result<f64> {
        let total = self.norm();
        let mut acc = 0.0;
        for b in &self.branches {
            acc += b.mean_photons(label)? * b.norm_sqr();
        }
        Ok(acc / total)
    }

    /// Probability distribution of the occupation of one mode (normalised).
    pub fn photon_distribution(&self, label: &str) -> Result<Vec<f64>> {
        let axis = self.modes.index_of(label)?;
        let d = self.modes.cutoff + 1;
        let stride = d.pow((self.modes.len() - axis - 1) as u32);
        let mut p = vec![0.0; d];
        for b in &self.branches {
            for (i, z) in b.amps.iter().enumerate() {
                p[(i / stride) % d] += z.norm_sqr();
            }
        }
        let total: f64 = p.iter().sum();
        Ok(p.into_iter().map(|x| x / total).collect())
    }

    fn map_branches(&self, modes: ModeSet, f: impl Fn(&FockState) -> Vec<ModeTensor>) -> FockDensity {
        let branches = self
            .branches
            .iter()
            .flat_map(f)
            .filter(|t| t.norm_sqr() > BRANCH_EPS)
            .map(|t| FockState::from_tensor(modes.clone(), t))
            .collect();
        FockDensity { modes, branches }
    }
}

/// Source parameters of one experimental run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceParams {
    /// Pair-generation probability per pulse.
    pub gamma: f64,
    /// Amplitude of `|HH⟩` in the pair state.
    pub alpha: C64,
    /// Amplitude of `|VV⟩` in the pair state.
    pub beta: C64,
    /// Mean photon number of the reference pulse on arrival at the sender.
    pub mu: f64,
    /// Mode-matching visibility between the signal photon and the reference.
    pub visibility: f64,
}

impl SourceParams {
    /// Maximally entangled pair source.
    pub fn new(gamma: f64, mu: f64, visibility: f64) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        SourceParams {
            gamma,
            alpha: C64::new(s, 0.0),
            beta: C64::new(s, 0.0),
            mu,
            visibility,
        }
    }

    /// Replaces the pair amplitudes by `√a |HH⟩ + e^{iφ}√(1−a) |VV⟩`.
    pub fn with_alpha_sq(mut self, alpha_sq: f64, phase: f64) -> Self {
        self.alpha = C64::new(alpha_sq.max(0.0).sqrt(), 0.0);
        self.beta = C64::from_polar((1.0 - alpha_sq).max(0.0).sqrt(), phase);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be >= 0, got {}", self.mu)));
        }
        let norm = self.alpha.norm_sqr() + self.beta.norm_sqr();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "|alpha|^2 + |beta|^2 must be 1, got {norm}"
            )));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::InvalidVisibility(self.visibility));
        }
        Ok(())
    }
}

/// Multi-pair output of the polarization-entangled pair source,
/// `∝ Σₙ γ^{n/2} (α a†_{A_H} a†_{S_H} + β a†_{A_V} a†_{S_V})ⁿ/n! |vac⟩` for
/// `n ≤ cutoff`, normalised. All other modes are left empty.
pub fn spdc_state(p: &SourceParams, modes: &ModeSet) -> Result<FockDensity> {
    p.validate()?;
    let cutoff = modes.cutoff();
    if cutoff < 1 {
        return Err(Error::CutoffTooSmall { min: 1, got: cutoff });
    }
    let [ah, av, sh, sv] = [labels::A_H, labels::A_V, labels::S_H, labels::S_V].map(|l| modes.index_of(l));
    let (ah, av, sh, sv) = (ah?, av?, sh?, sv?);
    let mut psi = FockState::vacuum(modes);
    psi.amps[0] = ZERO;
    let mut occ = vec![0usize; modes.len()];
    for n in 0..=cutoff {
        let weight = p.gamma.powf(n as f64 / 2.0);
        if weight == 0.0 && n > 0 {
            continue;
        }
        // n!/(k!(n−k)!) from the binomial cancels against k!(n−k)!/n! from the
        // creation operators, leaving γ^{n/2} αᵏ β^{n−k}.
        for k in 0..=n {
            occ[ah] = k;
            occ[sh] = k;
            occ[av] = n - k;
            occ[sv] = n - k;
            let idx = psi.flat_index(&occ);
            psi.amps[idx] += p.alpha.powu(k as u32) * p.beta.powu((n - k) as u32) * weight;
        }
    }
    Ok(FockDensity::from_pure(psi.normalized()?))
}

/// Exactly one pair `α|H⟩_A|H⟩_S + β|V⟩_A|V⟩_S`.
pub fn single_pair_state(p: &SourceParams, modes: &ModeSet) -> Result<FockDensity> {
    let mut psi = FockState::vacuum(modes);
    psi.amps[0] = ZERO;
    let hh = psi.amplitude_index(&[(labels::A_H, 1), (labels::S_H, 1)])?;
    let vv = psi.amplitude_index(&[(labels::A_V, 1), (labels::S_V, 1)])?;
    psi.amps[hh] = p.alpha;
    psi.amps[vv] = p.beta;
    Ok(FockDensity::from_pure(psi.normalized()?))
}

/// One photon in the superposition `Σ cᵢ a†ᵢ |vac⟩` over the listed modes.
pub fn single_photon_state(amplitudes: &[(&str, C64)], modes: &ModeSet) -> Result<FockDensity> {
    let mut psi = FockState::vacuum(modes);
    psi.amps[0] = ZERO;
    for &(label, c) in amplitudes {
        let idx = psi.amplitude_index(&[(label, 1)])?;
        psi.amps[idx] += c;
    }
    Ok(FockDensity::from_pure(psi.normalized()?))
}

impl FockState {
    fn amplitude_index(&self, occupations: &[(&str, usize)]) -> Result<usize> {
        let mut occ = vec![0; self.modes.len()];
        for &(label, n) in occupations {
            if n > self.modes.cutoff {
                return Err(Error::CutoffTooSmall {
                    min: n,
                    got: self.modes.cutoff,
                });
            }
            occ[self.modes.index_of(label)?] = n;
        }
        Ok(self.flat_index(&occ))
    }
}

/// Truncated coherent state `e^{−|α|²/2} Σₙ αⁿ/√n! |n⟩` (renormalised after
/// truncation) on a single mode of dimension `cutoff + 1`.
pub(crate) fn coherent_amplitudes(alpha: C64, cutoff: usize) -> Vec<C64> {
    let mut amps = Vec::with_capacity(cutoff + 1);
    let mut term = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..=cutoff {
        if n > 0 {
            term = term * alpha / (n as f64).sqrt();
        }
        amps.push(term);
    }
    let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    amps.into_iter().map(|z| z / norm).collect()
}

/// Product of coherent states with the given complex amplitudes; unlisted modes
/// are left in vacuum.
pub fn coherent_state(amplitudes: &[(&str, C64)], modes: &ModeSet) -> Result<FockDensity> {
    let cutoff = modes.cutoff();
    let mut per_mode: Vec<Vec<C64>> = vec![{
        let mut v = vec![ZERO; cutoff + 1];
        v[0] = ONE;
        v
    }; modes.len()];
    for &(label, alpha) in amplitudes {
        let idx = modes.index_of(label)?;
        if alpha.norm_sqr() > cutoff as f64 {
            warn!(
                "coherent amplitude |α|² = {} on {label} exceeds cutoff {cutoff}",
                alpha.norm_sqr()
            );
        }
        per_mode[idx] = coherent_amplitudes(alpha, cutoff);
    }
    let amps = per_mode
        .iter()
        .skip(1)
        .fold(per_mode[0].clone(), |acc, v| crate::qmath::tensor_vec(&acc, v));
    Ok(FockDensity::from_pure(FockState::from_amplitudes(modes, amps)?))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Pure-loss channel with complex amplitude transmissivity `t` on one mode.
/// Kraus operators `Kₖ|n⟩ = √C(n,k) t^{n−k} (1−|t|²)^{k/2} |n−k⟩`.
pub fn apply_amp_loss(state: &FockDensity, mode: &str, t: C64) -> Result<FockDensity> {
    let axis = state.modes.index_of(mode)?;
    if t.norm() > 1.0 + 1e-12 {
        return Err(Error::NotPassive(t.norm()));
    }
    if t == ONE {
        return Ok(state.clone());
    }
    let cutoff = state.modes.cutoff;
    let leak = (1.0 - t.norm_sqr()).max(0.0).sqrt();
    Ok(state.map_branches(state.modes.clone(), |b| {
        let tensor = b.to_tensor();
        (0..=cutoff)
            .map(|k| {
                tensor.lower_axis(axis, k, |n| {
                    t.powu((n - k) as u32) * (binomial(n, k).sqrt() * leak.powi(k as i32))
                })
            })
            .collect()
    }))
}

/// Where a routed mode ends up.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Route {
    To(String),
    Discard,
}

impl Route {
    pub fn to(label: &str) -> Route {
        Route::To(label.to_string())
    }
}

/// Relabels modes according to `routing` (modes not listed keep their label);
/// `Discard` targets are traced out. Polarizing beamsplitters and waveplates
/// that only swap `H` and `V` are pure relabelings in this picture.
pub fn pbs_route(state: &FockDensity, routing: &[(&str, Route)]) -> Result<FockDensity> {
    let mut map: HashMap<&str, &Route> = HashMap::new();
    for (from, to) in routing {
        state.modes.index_of(from)?;
        if map.insert(from, to).is_some() {
            return Err(Error::ModeCollision(from.to_string()));
        }
    }
    let mut discard = Vec::new();
    let mut new_labels = Vec::new();
    for (axis, label) in state.modes.labels.iter().enumerate() {
        match map.get(label.as_str()) {
            Some(Route::Discard) => discard.push(axis),
            Some(Route::To(target)) => new_labels.push(target.clone()),
            None => new_labels.push(label.clone()),
        }
    }
    for (i, l) in new_labels.iter().enumerate() {
        if new_labels[..i].contains(l) {
            return Err(Error::ModeCollision(l.clone()));
        }
    }
    let relabeled = ModeSet {
        labels: state
            .modes
            .labels
            .iter()
            .map(|l| match map.get(l.as_str()) {
                Some(Route::To(t)) => t.clone(),
                _ => l.clone(),
            })
            .collect(),
        cutoff: state.modes.cutoff,
        max_dim: state.modes.max_dim,
    };
    let mut out = FockDensity {
        modes: relabeled.clone(),
        branches: state
            .branches
            .iter()
            .map(|b| FockState {
                modes: relabeled.clone(),
                amps: b.amps.clone(),
            })
            .collect(),
    };
    // trace out from the highest axis so lower indices stay valid
    for &axis in discard.iter().rev() {
        out = trace_out_axis(&out, axis);
    }
    Ok(out)
}

fn trace_out_axis(state: &FockDensity, axis: usize) -> FockDensity {
    let modes = state.modes.without(axis);
    let d = state.modes.cutoff + 1;
    state.map_branches(modes, |b| {
        let t = b.to_tensor();
        (0..d).map(|n| t.slice_axis(axis, n)).collect()
    })
}

/// Splits `mode` into a part matched to the signal photon (amplitude `√v`,
/// relabeled `matched`) and an orthogonal temporal mode `orthogonal`
/// (amplitude `√(1−v)`), via a beamsplitter. Components pushed above the cutoff
/// are dropped.
pub fn split_mode_mismatch(
    state: &FockDensity,
    mode: &str,
    matched: &str,
    orthogonal: &str,
    v: f64,
) -> Result<FockDensity> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidVisibility(v));
    }
    let a = state.modes.index_of(mode)?;
    let b = state.modes.index_of(orthogonal)?;
    if a == b {
        return Err(Error::ModeCollision(orthogonal.to_string()));
    }
    let mut labels = state.modes.labels.clone();
    labels[a] = matched.to_string();
    let modes = ModeSet::with_limit(&labels, state.modes.cutoff, state.modes.max_dim)?;
    let (sv, sr) = (v.sqrt(), (1.0 - v).sqrt());
    // a† → √v a† + √(1−v) o†
    let u = [
        [C64::new(sv, 0.0), C64::new(-sr, 0.0)],
        [C64::new(sr, 0.0), C64::new(sv, 0.0)],
    ];
    let d = state.modes.cutoff + 1;
    Ok(state.map_branches(modes, |br| {
        let t = br
            .to_tensor()
            .rotate_pair(a, b, &u, (matched, orthogonal))
            .truncate_axis(a, d)
            .truncate_axis(b, d);
        vec![t]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn pair_modes(cutoff: usize) -> ModeSet {
        ModeSet::new(&[labels::A_H, labels::A_V, labels::S_H, labels::S_V], cutoff).unwrap()
    }

    #[test]
    fn mode_set_validation() {
        assert!(matches!(ModeSet::new(&["a", "a"], 2), Err(Error::ModeCollision(_))));
        assert!(matches!(ModeSet::new(&["a"], 0), Err(Error::CutoffTooSmall { .. })));
        let many: Vec<String> = (0..20).map(|i| format!("m{i}")).collect();
        assert!(matches!(ModeSet::new(&many, 2), Err(Error::SpaceTooLarge { .. })));
    }

    #[test]
    fn spdc_vacuum_when_gamma_zero() {
        let p = SourceParams::new(0.0, 0.0, 1.0);
        let s = spdc_state(&p, &pair_modes(2)).unwrap();
        let psi = &s.branches()[0];
        assert!((psi.amplitudes()[0] - ONE).norm() < 1e-15);
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spdc_single_pair_ratio() {
        let gamma = 2e-3;
        let p = SourceParams::new(gamma, 0.0, 1.0);
        let psi = &spdc_state(&p, &pair_modes(2)).unwrap().branches()[0].clone();
        let vac = psi.amplitude(&[0, 0, 0, 0]).unwrap();
        let hh = psi.amplitude(&[1, 0, 1, 0]).unwrap();
        let vv = psi.amplitude(&[0, 1, 0, 1]).unwrap();
        assert!(((hh / vac).re - gamma.sqrt() * FRAC_1_SQRT_2).abs() < 1e-15);
        // the one-pair sector is |φ⁺⟩: equal amplitudes, unit total weight √γ
        assert!((hh - vv).norm() < 1e-15);
        assert!(((hh.norm_sqr() + vv.norm_sqr()).sqrt() / vac.norm() - gamma.sqrt()).abs() < 1e-15);
    }

    /// Builds the multi-pair state by applying numerical creation operators
    /// term by term, independent of the closed-form amplitudes.
    fn brute_force_spdc(p: &SourceParams, modes: &ModeSet) -> Vec<C64> {
        let d = modes.cutoff() + 1;
        let dim = modes.dim();
        let n_modes = modes.len();
        let create = |v: &[C64], axis: usize| -> Vec<C64> {
            let stride = d.pow((n_modes - axis - 1) as u32);
            let mut out = vec![ZERO; dim];
            for (i, z) in v.iter().enumerate() {
                let n = (i / stride) % d;
                if n + 1 < d {
                    out[i + stride] += z * ((n + 1) as f64).sqrt();
                }
            }
            out
        };
        let idx = |l: &str| modes.index_of(l).unwrap();
        let pair_op = |v: &[C64]| -> Vec<C64> {
            let h = create(&create(v, idx(labels::A_H)), idx(labels::S_H));
            let w = create(&create(v, idx(labels::A_V)), idx(labels::S_V));
            h.iter().zip(&w).map(|(a, b)| a * p.alpha + b * p.beta).collect()
        };
        let mut term = vec![ZERO; dim];
        term[0] = ONE;
        let mut total = term.clone();
        let mut fact = 1.0;
        for n in 1..=modes.cutoff() {
            term = pair_op(&term);
            fact *= n as f64;
            let w = p.gamma.powf(n as f64 / 2.0) / fact;
            for (t, x) in total.iter_mut().zip(&term) {
                *t += x * w;
            }
        }
        let norm = total.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        total.into_iter().map(|z| z / norm).collect()
    }

    #[test]
    fn spdc_matches_operator_expansion() {
        for cutoff in [2, 3] {
            let p = SourceParams::new(0.05, 0.0, 1.0).with_alpha_sq(0.3, 0.7);
            let modes = pair_modes(cutoff);
            let closed = spdc_state(&p, &modes).unwrap();
            let oracle = brute_force_spdc(&p, &modes);
            for (a, b) in closed.branches()[0].amplitudes().iter().zip(&oracle) {
                assert!((a - b).norm() < 1e-14);
            }
        }
        // the two-pair |2,0,2,0⟩ amplitude carries γ α², i.e. the √2·√2/2! factors
        let p = SourceParams::new(0.05, 0.0, 1.0);
        let s = spdc_state(&p, &pair_modes(2)).unwrap();
        let psi = &s.branches()[0];
        let ratio = psi.amplitude(&[2, 0, 2, 0]).unwrap() / psi.amplitude(&[0, 0, 0, 0]).unwrap();
        assert!((ratio.re - 0.05 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn spdc_photon_parity() {
        let p = SourceParams::new(0.1, 0.0, 1.0).with_alpha_sq(0.4, 0.3);
        let modes = pair_modes(3);
        let psi = &spdc_state(&p, &modes).unwrap().branches()[0].clone();
        let d = 4;
        for (i, z) in psi.amplitudes().iter().enumerate() {
            let mut k = i;
            let mut total = 0;
            for _ in 0..4 {
                total += k % d;
                k /= d;
            }
            if total % 2 == 1 {
                assert!(z.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn coherent_state_cases() {
        let modes = ModeSet::new(&[labels::R_H, labels::R_V], 2).unwrap();
        let vac = coherent_state(&[(labels::R_H, ZERO)], &modes).unwrap();
        assert!((vac.branches()[0].amplitudes()[0] - ONE).norm() < 1e-15);

        let alpha = c(0.3);
        let raw = coherent_amplitudes(alpha, 2);
        assert!((raw[1].norm_sqr() / raw[0].norm_sqr() - 0.09).abs() < 1e-15);

        let one = ModeSet::new(&["a"], 2).unwrap();
        let st = coherent_state(&[("a", c(0.1f64.sqrt()))], &one).unwrap();
        assert!(((st.mean_photons("a").unwrap() - 0.1) / 0.1).abs() < 0.01);

        // diagonal pulse: one-photon sector is |D⟩
        let d = coherent_state(&[(labels::R_H, c(0.2)), (labels::R_V, c(0.2))], &modes).unwrap();
        let psi = &d.branches()[0];
        let h = psi.amplitude_of(&[(labels::R_H, 1)]).unwrap();
        let v = psi.amplitude_of(&[(labels::R_V, 1)]).unwrap();
        let n = (h.norm_sqr() + v.norm_sqr()).sqrt();
        assert!(((h / n).re - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(((v / n).re - FRAC_1_SQRT_2).abs() < 1e-15);

        assert!(matches!(
            coherent_state(&[("nope", ONE)], &modes),
            Err(Error::UnknownMode(_))
        ));
    }

    #[test]
    fn loss_edge_cases() {
        let modes = ModeSet::new(&["a"], 3).unwrap();
        let st = coherent_state(&[("a", c(0.5))], &modes).unwrap();
        let same = apply_amp_loss(&st, "a", ONE).unwrap();
        assert_eq!(same.branches(), st.branches());
        let gone = apply_amp_loss(&st, "a", ZERO).unwrap();
        let rho = gone.density_matrix().unwrap();
        assert!((rho.mat()[(0, 0)].re - 1.0).abs() < 1e-14);
        assert!(matches!(
            apply_amp_loss(&st, "a", c(1.1)),
            Err(Error::NotPassive(_))
        ));
    }

    #[test]
    fn loss_maps_coherent_to_coherent() {
        // at a cutoff well above the mean photon number the truncated states are
        // coherent to within the truncation tail
        let cutoff = 12;
        let modes = ModeSet::new(&["a"], cutoff).unwrap();
        let alpha = C64::new(0.4, 0.3);
        let t = C64::from_polar(0.7, 0.9);
        let lossy = apply_amp_loss(&coherent_state(&[("a", alpha)], &modes).unwrap(), "a", t).unwrap();
        let target = coherent_state(&[("a", t * alpha)], &modes).unwrap();
        let diff = lossy.density_matrix().unwrap().mat().max_abs_diff(target.density_matrix().unwrap().mat());
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn loss_composes() {
        let modes = pair_modes(2);
        let st = spdc_state(&SourceParams::new(0.2, 0.0, 1.0), &modes).unwrap();
        let (t1, t2) = (C64::from_polar(0.8, 0.3), C64::from_polar(0.6, -1.1));
        let two = apply_amp_loss(&apply_amp_loss(&st, labels::S_H, t1).unwrap(), labels::S_H, t2).unwrap();
        let one = apply_amp_loss(&st, labels::S_H, t1 * t2).unwrap();
        let diff = two.density_matrix().unwrap().mat().max_abs_diff(one.density_matrix().unwrap().mat());
        assert!(diff < 1e-10);
        assert!(two.norm() <= st.norm() + 1e-9);
    }

    #[test]
    fn routing_relabels_and_discards() {
        let modes = ModeSet::new(&["S_H", "S_V"], 2).unwrap();
        let st = single_photon_state(&[("S_V", ONE)], &modes).unwrap();
        let same = pbs_route(&st, &[]).unwrap();
        assert_eq!(same.branches(), st.branches());

        let gone = pbs_route(&st, &[("S_V", Route::Discard)]).unwrap();
        assert_eq!(gone.modes().labels(), &["S_H".to_string()]);
        let dist = gone.photon_distribution("S_H").unwrap();
        assert!((dist[0] - 1.0).abs() < 1e-15);

        let renamed = pbs_route(&st, &[("S_H", Route::to("B_H")), ("S_V", Route::to("B_V"))]).unwrap();
        assert_eq!(renamed.modes().labels(), &["B_H".to_string(), "B_V".to_string()]);
        assert!(matches!(
            pbs_route(&st, &[("S_H", Route::to("S_V"))]),
            Err(Error::ModeCollision(_))
        ));
    }

    #[test]
    fn mismatch_split_cases() {
        let modes = ModeSet::new(&["r", "r'"], 3).unwrap();
        let st = single_photon_state(&[("r", ONE)], &modes).unwrap();
        let all = split_mode_mismatch(&st, "r", "r", "r'", 1.0).unwrap();
        assert!((all.mean_photons("r").unwrap() - 1.0).abs() < 1e-15);
        let none = split_mode_mismatch(&st, "r", "r", "r'", 0.0).unwrap();
        assert!((none.mean_photons("r'").unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            split_mode_mismatch(&st, "r", "r", "r'", 1.5),
            Err(Error::InvalidVisibility(_))
        ));

        // coherent input factorises into two coherent states; the cutoff is high
        // enough that the joint truncation tail is negligible
        let alpha = c(0.3);
        let coh = coherent_state(&[("r", alpha)], &ModeSet::new(&["r", "r'"], 14).unwrap()).unwrap();
        let split = split_mode_mismatch(&coh, "r", "r", "r'", 0.8).unwrap();
        let expect = coherent_state(
            &[("r", alpha * 0.8f64.sqrt()), ("r'", alpha * 0.2f64.sqrt())],
            &ModeSet::new(&["r", "r'"], 14).unwrap(),
        )
        .unwrap();
        let diff = split
            .density_matrix()
            .unwrap()
            .mat()
            .max_abs_diff(expect.density_matrix().unwrap().mat());
        assert!(diff < 1e-9, "{diff}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn channels_never_increase_trace(t in 0.0..1.0f64, ph in -3.0..3.0f64, v in 0.0..1.0f64) {
                let modes = ModeSet::new(&[labels::A_H, labels::A_V, labels::S_H, labels::S_V, "x"], 2).unwrap();
                let st = spdc_state(&SourceParams::new(0.1, 0.0, 1.0), &modes).unwrap();
                let a = apply_amp_loss(&st, labels::S_H, C64::from_polar(t, ph)).unwrap();
                prop_assert!(a.norm() <= st.norm() + 1e-9);
                let b = split_mode_mismatch(&a, labels::A_H, labels::A_H, "x", v).unwrap();
                prop_assert!(b.norm() <= a.norm() + 1e-9);
                let c = pbs_route(&b, &[("x", Route::Discard)]).unwrap();
                prop_assert!((c.norm() - b.norm()).abs() < 1e-12);
            }

            #[test]
            fn routing_without_discard_is_invertible(swap in any::<bool>()) {
                let modes = pair_modes(2);
                let st = spdc_state(&SourceParams::new(0.3, 0.0, 1.0).with_alpha_sq(0.2, 0.4), &modes).unwrap();
                let fwd: Vec<(&str, Route)> = if swap {
                    vec![(labels::A_H, Route::to(labels::A_V)), (labels::A_V, Route::to(labels::A_H))]
                } else {
                    vec![(labels::S_H, Route::to("B_H"))]
                };
                let routed = pbs_route(&st, &fwd).unwrap();
                prop_assert!((routed.norm() - st.norm()).abs() < 1e-12);
                let back: Vec<(String, Route)> = fwd
                    .iter()
                    .map(|(from, to)| match to {
                        Route::To(t) => (t.clone(), Route::to(from)),
                        Route::Discard => unreachable!(),
                    })
                    .collect();
                let back_ref: Vec<(&str, Route)> = back.iter().map(|(a, b)| (a.as_str(), b.clone())).collect();
                let restored = pbs_route(&routed, &back_ref).unwrap();
                prop_assert_eq!(restored.modes(), st.modes());
                prop_assert_eq!(restored.branches()[0].amplitudes(), st.branches()[0].amplitudes());
            }
        }
    }
}
