//! The entanglement-distribution protocol.
//!
//! Alice keeps photon A of a polarization-entangled pair and sends S to Bob
//! through two noisy paths (upper and lower), split and recombined at
//! polarizing beamsplitters. Bob sends a diagonally polarized reference R back
//! through the same paths. Reciprocity makes the coefficients of the
//! `|H⟩_A|V⟩_R` and `|V⟩_A|H⟩_R` components equal, so a parity check on A and R
//! leaves Alice's output and Bob's photon maximally entangled whatever the
//! (collective) channel action was.
//!
//! Two tiers are provided:
//!
//! - [`run_ideal`]: single photons everywhere, an ideal parity-check projector.
//! - [`run_full`]: the linear-optics implementation in truncated Fock space,
//!   with multi-pair emission, a weak coherent reference, mode mismatch,
//!   a PBS with a diagonal projection as parity check, and threshold detectors.

use std::f64::consts::FRAC_1_SQRT_2;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fock::{
    apply_amp_loss, coherent_state, coincidence_table, labels, pbs_route, single_pair_state, single_photon_state,
    spdc_state, split_mode_mismatch, Detector, FockDensity, ModeSet, PassMode, Route, SourceParams, DEFAULT_MAX_DIM,
};
use crate::polarization::{
    backward_op, forward_op, pauli_setting, reciprocal_conjugate, JonesOperator, PauliLabel, WaveplateSetting,
};
use crate::qmath::{haar_unitary, tensor, CMatrix, DensityMatrix, ZERO};
use crate::tomography::{all_settings, chi_from_choi, linear_inversion, setting_probabilities, Basis6, ChiMatrix, TomoSetting};
use crate::{Error, Result, C64};

/// Mode-match visibility that reproduces a fidelity of 0.85 at unit
/// transmittance with `γ = 2×10⁻³` and `μ = 0.09` (see [`calibrate_visibility`]).
pub const DEFAULT_VISIBILITY: f64 = 0.79883;

/// Waveplate settings of the two paths and the common transmittance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub upper: WaveplateSetting,
    pub lower: WaveplateSetting,
    /// Intensity transmittance of each path.
    pub transmittance: f64,
}

impl ChannelConfig {
    pub fn new(upper: WaveplateSetting, lower: WaveplateSetting, transmittance: f64) -> Result<Self> {
        let cfg = ChannelConfig {
            upper,
            lower,
            transmittance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn pauli(upper: PauliLabel, lower: PauliLabel, transmittance: f64) -> Result<Self> {
        Self::new(pauli_setting(upper), pauli_setting(lower), transmittance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.transmittance) {
            return Err(Error::InvalidParameter(format!(
                "transmittance must lie in [0, 1], got {}",
                self.transmittance
            )));
        }
        Ok(())
    }
}

/// Jones operators seen by the photons: `M` on the upper path, `N` on the
/// lower path, forward (`f`) and backward (`b`).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelOps {
    pub mf: JonesOperator,
    pub nf: JonesOperator,
    pub mb: JonesOperator,
    pub nb: JonesOperator,
}

impl ChannelOps {
    /// Waveplate stacks with amplitude transmission `√T` on each path; forward
    /// and backward passes share the setting.
    pub fn from_config(cfg: &ChannelConfig) -> Result<Self> {
        cfg.validate()?;
        Self::from_settings(cfg, cfg)
    }

    /// Forward pass with `fwd`'s settings, backward with `bwd`'s; used to break
    /// the collective-noise assumption.
    pub fn from_settings(fwd: &ChannelConfig, bwd: &ChannelConfig) -> Result<Self> {
        fwd.validate()?;
        bwd.validate()?;
        let tf = C64::new(fwd.transmittance.sqrt(), 0.0);
        let tb = C64::new(bwd.transmittance.sqrt(), 0.0);
        Ok(ChannelOps {
            mf: forward_op(&fwd.upper).scale(tf),
            nf: forward_op(&fwd.lower).scale(tf),
            mb: backward_op(&bwd.upper).scale(tb),
            nb: backward_op(&bwd.lower).scale(tb),
        })
    }

    /// Arbitrary reciprocal media given by their forward actions.
    pub fn reciprocal(mf: JonesOperator, nf: JonesOperator) -> Result<Self> {
        mf.check_passive()?;
        nf.check_passive()?;
        Ok(ChannelOps {
            mb: reciprocal_conjugate(&mf),
            nb: reciprocal_conjugate(&nf),
            mf,
            nf,
        })
    }

    fn check_passive(&self) -> Result<()> {
        for op in [&self.mf, &self.nf, &self.mb, &self.nb] {
            op.check_passive()?;
        }
        Ok(())
    }

    /// The amplitudes that survive the polarizing beamsplitters:
    /// `(⟨H|M_f|H⟩, ⟨V|N_f|V⟩, ⟨H|M_b|H⟩, ⟨V|N_b|V⟩)`.
    pub fn diagonal(&self) -> (C64, C64, C64, C64) {
        (self.mf.hh(), self.nf.vv(), self.mb.hh(), self.nb.vv())
    }
}

/// Result of one protocol evaluation.
#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    /// Probability per pulse of the heralding event.
    pub success_prob: f64,
    /// Shared two-qubit state (Alice's output ⊗ Bob's photon); `None` when the
    /// heralding event has probability zero.
    pub rho_out: Option<DensityMatrix>,
    /// Probability of each polarization-analysis setting clicking, conditioned
    /// on success.
    pub click_table: Vec<(TomoSetting, f64)>,
}

impl ProtocolOutcome {
    /// Fidelity `⟨ψ|ρ|ψ⟩` of the shared state with `α|HH⟩ + β|VV⟩`.
    pub fn fidelity_to(&self, alpha: C64, beta: C64) -> Option<f64> {
        self.rho_out.as_ref().map(|r| r.expectation_pure(&target_state(alpha, beta)))
    }

    pub fn fidelity_phi_plus(&self) -> Option<f64> {
        let s = C64::new(FRAC_1_SQRT_2, 0.0);
        self.fidelity_to(s, s)
    }
}

/// Normalised `α|HH⟩ + β|VV⟩`.
pub fn target_state(alpha: C64, beta: C64) -> Vec<C64> {
    let n = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
    vec![alpha / n, ZERO, ZERO, beta / n]
}

fn check_pair_amplitudes(alpha: C64, beta: C64) -> Result<()> {
    let norm = alpha.norm_sqr() + beta.norm_sqr();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "|alpha|^2 + |beta|^2 must be 1, got {norm}"
        )));
    }
    Ok(())
}

/// Amplitudes of the post-selected four-term state before the parity check,
/// indexed `[polarization of A and S][polarization of R]` with `0 = H`, `1 = V`.
pub fn four_term_amplitudes(ops: &ChannelOps, alpha: C64, beta: C64) -> [[C64; 2]; 2] {
    let (fh, fv, bh, bv) = ops.diagonal();
    let d = FRAC_1_SQRT_2;
    [
        [alpha * fh * bh * d, alpha * fh * bv * d],
        [beta * fv * bh * d, beta * fv * bv * d],
    ]
}

/// Single-photon tier with backward actions fixed by reciprocity.
pub fn run_ideal(mf: &JonesOperator, nf: &JonesOperator, alpha: C64, beta: C64) -> Result<ProtocolOutcome> {
    run_ideal_ops(&ChannelOps::reciprocal(mf.clone(), nf.clone())?, alpha, beta)
}

/// Single-photon tier with explicit forward and backward actions.
pub fn run_ideal_ops(ops: &ChannelOps, alpha: C64, beta: C64) -> Result<ProtocolOutcome> {
    ops.check_passive()?;
    check_pair_amplitudes(alpha, beta)?;
    let amp = four_term_amplitudes(ops, alpha, beta);
    // parity check keeps |H⟩_A|V⟩_R → |H⟩ and |V⟩_A|H⟩_R → |V⟩
    let out = [amp[0][1], ZERO, ZERO, amp[1][0]];
    let success_prob: f64 = out.iter().map(|z| z.norm_sqr()).sum();
    ideal_outcome(success_prob, &out)
}

fn ideal_outcome(success_prob: f64, psi: &[C64]) -> Result<ProtocolOutcome> {
    if success_prob <= ZERO_SUCCESS {
        return Ok(ProtocolOutcome {
            success_prob: 0.0,
            rho_out: None,
            click_table: Vec::new(),
        });
    }
    let rho = DensityMatrix::from_pure(psi)?;
    Ok(ProtocolOutcome {
        success_prob,
        click_table: setting_probabilities(&rho),
        rho_out: Some(rho),
    })
}

/// How the forward and backward settings are drawn in an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correlation {
    /// Same setting in both directions (slow, collective noise).
    Collective,
    /// Independent forward and backward settings.
    Decorrelated,
}

/// Members of the uniform Pauli switching ensemble as (forward, backward) configs.
pub fn pauli_ensemble(transmittance: f64, correlation: Correlation) -> Result<Vec<(ChannelConfig, ChannelConfig)>> {
    let mut out = Vec::new();
    for u in PauliLabel::ALL {
        for l in PauliLabel::ALL {
            let fwd = ChannelConfig::pauli(u, l, transmittance)?;
            match correlation {
                Correlation::Collective => out.push((fwd, fwd)),
                Correlation::Decorrelated => {
                    for ub in PauliLabel::ALL {
                        for lb in PauliLabel::ALL {
                            out.push((fwd, ChannelConfig::pauli(ub, lb, transmittance)?));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mixes outcomes with equal weights; the state is the success-weighted mixture.
fn average_ideal(outcomes: &[ProtocolOutcome]) -> Result<ProtocolOutcome> {
    let n = outcomes.len() as f64;
    let success: f64 = outcomes.iter().map(|o| o.success_prob).sum::<f64>() / n;
    if success <= 0.0 {
        return Ok(ProtocolOutcome {
            success_prob: 0.0,
            rho_out: None,
            click_table: Vec::new(),
        });
    }
    let mut m = CMatrix::zeros(4, 4);
    for o in outcomes {
        if let Some(r) = &o.rho_out {
            m = &m + &r.mat().scale_re(o.success_prob / n);
        }
    }
    let rho = DensityMatrix::from_unnormalized(m)?;
    Ok(ProtocolOutcome {
        success_prob: success,
        click_table: setting_probabilities(&rho),
        rho_out: Some(rho),
    })
}

/// Uniform average of the single-photon tier over the 16 collective Pauli
/// setting pairs, for `α = β = 1/√2`.
pub fn depolarizing_average_ideal(transmittance: f64) -> Result<(f64, Option<DensityMatrix>)> {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let out = ensemble_ideal(transmittance, Correlation::Collective, s, s)?;
    Ok((out.success_prob, out.rho_out))
}

/// Single-photon tier averaged over the Pauli switching ensemble for the pair
/// `α|HH⟩ + β|VV⟩`.
pub fn ensemble_ideal(transmittance: f64, correlation: Correlation, alpha: C64, beta: C64) -> Result<ProtocolOutcome> {
    let outcomes = pauli_ensemble(transmittance, correlation)?
        .iter()
        .map(|(f, b)| run_ideal_ops(&ChannelOps::from_settings(f, b)?, alpha, beta))
        .collect::<Result<Vec<_>>>()?;
    average_ideal(&outcomes)
}

/// Photon source used by the Fock-space tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSource {
    /// Multi-pair parametric down-conversion with pair probability `γ`.
    Spdc,
    /// Exactly one pair per pulse.
    Ideal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Weak coherent pulse.
    Coherent,
    /// One photon in `|D⟩`.
    SinglePhoton,
}

/// Options of the Fock-space model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FockModel {
    pub cutoff: usize,
    pub max_dim: usize,
    pub pair: PairSource,
    pub reference: Reference,
    /// Bob emits `μ/T` so that `μ` reaches Alice.
    pub reference_scaling: bool,
}

impl Default for FockModel {
    fn default() -> Self {
        FockModel {
            cutoff: 2,
            max_dim: DEFAULT_MAX_DIM,
            pair: PairSource::Spdc,
            reference: Reference::Coherent,
            reference_scaling: true,
        }
    }
}

impl FockModel {
    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }
}

// Output modes of the parity-check PBS: port 1 carries Alice's output qubit,
// port 2 feeds the diagonal projection. Primed labels are the temporal mode
// orthogonal to the signal photon.
const O1_H: &str = "O1_H";
const O1_V: &str = "O1_V";
const O1_V_MISMATCH: &str = "O1_V'";
const O2_H: &str = "O2_H";
const O2_V: &str = "O2_V";
const O2_H_MISMATCH: &str = "O2_H'";
const B_H: &str = "B_H";
const B_V: &str = "B_V";

/// Heralding probabilities below this are treated as exact zeros (amplitudes
/// that vanish analytically leave rounding residue of order 1e-33).
const ZERO_SUCCESS: f64 = 1e-20;

/// Index of the analyser-free setting in a [`CoincidenceGrid`].
pub const OPEN: usize = 6;

/// Per-pulse three-fold coincidence probabilities, indexed by Alice's output
/// analyser and Bob's analyser (`0..6` in [`Basis6::ALL`] order, [`OPEN`]
/// without analyser).
#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceGrid {
    pub probs: [[f64; 7]; 7],
}

impl CoincidenceGrid {
    fn zero() -> Self {
        CoincidenceGrid { probs: [[0.0; 7]; 7] }
    }

    pub fn success(&self) -> f64 {
        self.probs[OPEN][OPEN]
    }

    pub fn get(&self, s: TomoSetting) -> f64 {
        self.probs[s.basis_a as usize][s.basis_b as usize]
    }

    fn add_scaled(&mut self, other: &CoincidenceGrid, w: f64) {
        for i in 0..7 {
            for j in 0..7 {
                self.probs[i][j] += w * other.probs[i][j];
            }
        }
    }

    /// Shared state by linear inversion of the exact tomography data.
    pub fn outcome(&self) -> Result<ProtocolOutcome> {
        let success_prob = self.success().clamp(0.0, 1.0);
        if success_prob <= ZERO_SUCCESS {
            return Ok(ProtocolOutcome {
                success_prob: 0.0,
                rho_out: None,
                click_table: Vec::new(),
            });
        }
        let raw: Vec<(TomoSetting, f64)> = all_settings().into_iter().map(|s| (s, self.get(s))).collect();
        let rho = linear_inversion(&raw)?;
        Ok(ProtocolOutcome {
            success_prob,
            rho_out: Some(rho),
            click_table: raw.into_iter().map(|(s, p)| (s, (p / success_prob).min(1.0))).collect(),
        })
    }
}

fn analyser_weights(b: Basis6) -> (C64, C64) {
    let k = b.ket();
    (k[0].conj(), k[1].conj())
}

fn detectors() -> Vec<Detector> {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let q = Detector::new(
        "parity",
        vec![vec![
            PassMode::new(&[(O2_H, s), (O2_V, s)]),
            PassMode::new(&[(O2_H_MISMATCH, s)]),
        ]],
    );
    let mut alice = Vec::with_capacity(7);
    let mut bob = Vec::with_capacity(7);
    for b in Basis6::ALL {
        let (h, v) = analyser_weights(b);
        alice.push(vec![
            PassMode::new(&[(O1_H, h), (O1_V, v)]),
            PassMode::new(&[(O1_V_MISMATCH, v)]),
        ]);
        bob.push(vec![PassMode::new(&[(B_H, h), (B_V, v)])]);
    }
    alice.push(vec![
        PassMode::single(O1_H),
        PassMode::single(O1_V),
        PassMode::single(O1_V_MISMATCH),
    ]);
    bob.push(vec![PassMode::single(B_H), PassMode::single(B_V)]);
    vec![q, Detector::new("alice", alice), Detector::new("bob", bob)]
}

fn pair_modes(model: &FockModel) -> Result<ModeSet> {
    ModeSet::with_limit(
        &[labels::A_H, labels::A_V, labels::S_H, labels::S_V],
        model.cutoff,
        model.max_dim,
    )
}

fn reference_modes(model: &FockModel) -> Result<ModeSet> {
    ModeSet::with_limit(
        &[labels::R_H, labels::R_V, labels::R_H_MISMATCH, labels::R_V_MISMATCH],
        model.cutoff,
        model.max_dim,
    )
}

/// Pair state after the forward pass of S.
fn signal_state(src: &SourceParams, ops: &ChannelOps, model: &FockModel) -> Result<FockDensity> {
    let modes = pair_modes(model)?;
    let pair = match model.pair {
        PairSource::Spdc => spdc_state(src, &modes)?,
        PairSource::Ideal => single_pair_state(src, &modes)?,
    };
    let (fh, fv, _, _) = ops.diagonal();
    let st = apply_amp_loss(&pair, labels::S_H, fh)?;
    apply_amp_loss(&st, labels::S_V, fv)
}

/// Reference pulse as it reaches Alice, split into matched and mismatched
/// temporal modes.
fn reference_state(
    src: &SourceParams,
    ops: &ChannelOps,
    model: &FockModel,
    bob_transmittance: f64,
) -> Result<FockDensity> {
    let modes = reference_modes(model)?;
    let (_, _, bh, bv) = ops.diagonal();
    let v = src.visibility;
    match model.reference {
        Reference::Coherent => {
            let mean = if model.reference_scaling {
                if bob_transmittance <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "reference scaling needs a positive transmittance".into(),
                    ));
                }
                src.mu / bob_transmittance
            } else {
                src.mu
            };
            // Loss and beamsplitters map coherent states to coherent states, so
            // the pulse is built directly at Alice; the bright pulse at Bob is
            // never truncated.
            let a = (mean / 2.0).sqrt();
            let (ah, av) = (bh * a, bv * a);
            coherent_state(
                &[
                    (labels::R_H, ah * v.sqrt()),
                    (labels::R_V, av * v.sqrt()),
                    (labels::R_H_MISMATCH, ah * (1.0 - v).sqrt()),
                    (labels::R_V_MISMATCH, av * (1.0 - v).sqrt()),
                ],
                &modes,
            )
        }
        Reference::SinglePhoton => {
            let s = C64::new(FRAC_1_SQRT_2, 0.0);
            let st = single_photon_state(&[(labels::R_H, s), (labels::R_V, s)], &modes)?;
            let st = apply_amp_loss(&st, labels::R_H, bh)?;
            let st = apply_amp_loss(&st, labels::R_V, bv)?;
            let st = split_mode_mismatch(&st, labels::R_H, labels::R_H, labels::R_H_MISMATCH, v)?;
            split_mode_mismatch(&st, labels::R_V, labels::R_V, labels::R_V_MISMATCH, v)
        }
    }
}

/// Three-fold coincidence grid for one channel realisation. `bob_transmittance`
/// sets the reference scaling `μ/T`.
pub fn full_grid(src: &SourceParams, ops: &ChannelOps, model: &FockModel, bob_transmittance: f64) -> Result<CoincidenceGrid> {
    src.validate()?;
    ops.check_passive()?;
    if model.cutoff < 2 {
        return Err(Error::CutoffTooSmall {
            min: 2,
            got: model.cutoff,
        });
    }
    // validate the joint space before building anything
    let all = pair_modes(model)?.join(&reference_modes(model)?)?;
    debug!("full model on {} modes, dimension {}", all.len(), all.dim());
    let joint = signal_state(src, ops, model)?.tensor(&reference_state(src, ops, model, bob_transmittance)?)?;
    // HWP on R swaps H and V; the PBS transmits H and reflects V, so A_H and
    // the flipped R_H leave through port 1 while A_V and the flipped R_V leave
    // through port 2.
    let routed = pbs_route(
        &joint,
        &[
            (labels::A_H, Route::to(O1_H)),
            (labels::R_H, Route::to(O1_V)),
            (labels::R_H_MISMATCH, Route::to(O1_V_MISMATCH)),
            (labels::A_V, Route::to(O2_V)),
            (labels::R_V, Route::to(O2_H)),
            (labels::R_V_MISMATCH, Route::to(O2_H_MISMATCH)),
            (labels::S_H, Route::to(B_H)),
            (labels::S_V, Route::to(B_V)),
        ],
    )?;
    let table = coincidence_table(&routed, &detectors())?;
    let mut grid = CoincidenceGrid::zero();
    for i in 0..7 {
        for j in 0..7 {
            grid.probs[i][j] = table.get(&[0, i, j]);
        }
    }
    Ok(grid)
}

/// Fock-space tier for one channel configuration.
pub fn run_full(src: &SourceParams, cfg: &ChannelConfig, model: &FockModel) -> Result<ProtocolOutcome> {
    full_grid(src, &ChannelOps::from_config(cfg)?, model, cfg.transmittance)?.outcome()
}

/// Equal-weight mixture of grids, summed in input order.
fn mix_grids(grids: &[CoincidenceGrid]) -> CoincidenceGrid {
    let mut out = CoincidenceGrid::zero();
    let w = 1.0 / grids.len() as f64;
    for g in grids {
        out.add_scaled(g, w);
    }
    out
}

/// Fock-space tier averaged over the Pauli switching ensemble.
pub fn ensemble_full_grid(
    src: &SourceParams,
    transmittance: f64,
    correlation: Correlation,
    model: &FockModel,
) -> Result<CoincidenceGrid> {
    let members = pauli_ensemble(transmittance, correlation)?;
    let grids = members
        .par_iter()
        .map(|(f, b)| full_grid(src, &ChannelOps::from_settings(f, b)?, model, transmittance))
        .collect::<Result<Vec<_>>>()?;
    Ok(mix_grids(&grids))
}

/// Collective Pauli switching ensemble in the Fock-space tier.
pub fn depolarizing_average_full(src: &SourceParams, transmittance: f64, model: &FockModel) -> Result<ProtocolOutcome> {
    ensemble_full_grid(src, transmittance, Correlation::Collective, model)?.outcome()
}

fn haar_ops(transmittance: f64, seed: u64, k: u64, correlation: Correlation) -> Result<ChannelOps> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k + 1);
    let t = C64::new(transmittance.sqrt(), 0.0);
    let mut draw = || JonesOperator::new(haar_unitary(2, &mut rng)).map(|u| u.scale(t));
    let (mf, nf) = (draw()?, draw()?);
    let ops = ChannelOps::reciprocal(mf, nf)?;
    Ok(match correlation {
        Correlation::Collective => ops,
        Correlation::Decorrelated => {
            let (mb, nb) = (draw()?, draw()?);
            ChannelOps {
                mb: reciprocal_conjugate(&mb),
                nb: reciprocal_conjugate(&nb),
                ..ops
            }
        }
    })
}

/// Monte Carlo over Haar-random path unitaries; sample `k` uses stream `k` of
/// the seeded generator, so results do not depend on scheduling.
pub fn haar_ensemble_full(
    src: &SourceParams,
    transmittance: f64,
    samples: usize,
    seed: u64,
    correlation: Correlation,
    model: &FockModel,
) -> Result<ProtocolOutcome> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one Monte Carlo sample".into()));
    }
    let grids = (0..samples as u64)
        .into_par_iter()
        .map(|k| full_grid(src, &haar_ops(transmittance, seed, k, correlation)?, model, transmittance))
        .collect::<Result<Vec<_>>>()?;
    mix_grids(&grids).outcome()
}

/// Haar Monte Carlo in the single-photon tier.
pub fn haar_ensemble_ideal(
    transmittance: f64,
    samples: usize,
    seed: u64,
    correlation: Correlation,
    alpha: C64,
    beta: C64,
) -> Result<ProtocolOutcome> {
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one Monte Carlo sample".into()));
    }
    let outcomes = (0..samples as u64)
        .into_par_iter()
        .map(|k| run_ideal_ops(&haar_ops(transmittance, seed, k, correlation)?, alpha, beta))
        .collect::<Result<Vec<_>>>()?;
    average_ideal(&outcomes)
}

/// State of the pair as measured directly at the source: two-fold threshold
/// coincidences between analysers on A and S, reconstructed by linear inversion.
pub fn source_state(src: &SourceParams, model: &FockModel) -> Result<DensityMatrix> {
    let modes = pair_modes(model)?;
    let pair = match model.pair {
        PairSource::Spdc => spdc_state(src, &modes)?,
        PairSource::Ideal => single_pair_state(src, &modes)?,
    };
    let mut a = Vec::new();
    let mut s = Vec::new();
    for b in Basis6::ALL {
        let (h, v) = analyser_weights(b);
        a.push(vec![PassMode::new(&[(labels::A_H, h), (labels::A_V, v)])]);
        s.push(vec![PassMode::new(&[(labels::S_H, h), (labels::S_V, v)])]);
    }
    let table = coincidence_table(&pair, &[Detector::new("a", a), Detector::new("s", s)])?;
    let raw: Vec<(TomoSetting, f64)> = all_settings()
        .into_iter()
        .map(|st| (st, table.get(&[st.basis_a as usize, st.basis_b as usize])))
        .collect();
    linear_inversion(&raw)
}

/// Finds the visibility for which the collective-ensemble fidelity at
/// `transmittance` equals `target`, by bisection on `[0, 1]`.
pub fn calibrate_visibility(src: &SourceParams, transmittance: f64, target: f64, model: &FockModel) -> Result<f64> {
    let fidelity = |v: f64| -> Result<f64> {
        let p = SourceParams { visibility: v, ..*src };
        depolarizing_average_full(&p, transmittance, model)?
            .fidelity_to(src.alpha, src.beta)
            .ok_or_else(|| Error::InvalidParameter("heralding probability vanishes".into()))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let (f_lo, f_hi) = (fidelity(lo)?, fidelity(hi)?);
    if !(f_lo <= target && target <= f_hi) {
        return Err(Error::InvalidParameter(format!(
            "target fidelity {target} outside the reachable range [{f_lo:.4}, {f_hi:.4}]"
        )));
    }
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        if fidelity(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Propagation direction for process tomography.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Choi state of a single-path channel: one half of `|φ⁺⟩` through `op`.
pub fn channel_choi(op: &JonesOperator) -> Result<DensityMatrix> {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let phi = [s, ZERO, ZERO, s];
    let psi = tensor(&CMatrix::identity(2), op.mat()).apply(&phi);
    let m = CMatrix::outer(&psi, &psi);
    DensityMatrix::from_unnormalized(m)
}

/// Choi state of a waveplate stack, or of the uniform mixture over several.
pub fn ensemble_choi(settings: &[WaveplateSetting], direction: Direction) -> Result<DensityMatrix> {
    if settings.is_empty() {
        return Err(Error::InvalidParameter("empty setting list".into()));
    }
    let mut m = CMatrix::zeros(4, 4);
    for s in settings {
        let op = match direction {
            Direction::Forward => forward_op(s),
            Direction::Backward => backward_op(s),
        };
        m = &m + channel_choi(&op)?.mat();
    }
    DensityMatrix::from_unnormalized(m)
}

/// Process matrix from exact tomography probabilities of the Choi state.
pub fn process_chi(settings: &[WaveplateSetting], direction: Direction) -> Result<ChiMatrix> {
    let choi = ensemble_choi(settings, direction)?;
    let rho = linear_inversion(&setting_probabilities(&choi))?;
    chi_from_choi(&rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmath::uhlmann_fidelity;

    fn s() -> C64 {
        C64::new(FRAC_1_SQRT_2, 0.0)
    }

    #[test]
    fn ideal_identity_channels() {
        let id = JonesOperator::identity();
        let out = run_ideal(&id, &id, s(), s()).unwrap();
        assert!((out.success_prob - 0.5).abs() < 1e-15);
        assert!((out.fidelity_phi_plus().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ideal_flip_kills_success() {
        let out = run_ideal(&JonesOperator::x(), &JonesOperator::identity(), s(), s()).unwrap();
        assert_eq!(out.success_prob, 0.0);
        assert!(out.rho_out.is_none());
    }

    #[test]
    fn ideal_rejects_gain() {
        let g = JonesOperator::identity().scale(C64::new(1.1, 0.0));
        assert!(matches!(
            run_ideal(&g, &JonesOperator::identity(), s(), s()),
            Err(Error::NotPassive(_))
        ));
    }

    #[test]
    fn ensemble_success_is_t_squared_over_eight() {
        for t in [1.0, 0.48, 0.17, 0.0] {
            let (p, rho) = depolarizing_average_ideal(t).unwrap();
            assert!((p - t * t / 8.0).abs() < 1e-12, "T={t}: {p}");
            if t > 0.0 {
                let phi = target_state(s(), s());
                assert!((rho.unwrap().expectation_pure(&phi) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn decorrelated_settings_break_protection() {
        let out = ensemble_ideal(1.0, Correlation::Decorrelated, s(), s()).unwrap();
        assert!(out.fidelity_phi_plus().unwrap() < 0.9);
    }

    #[test]
    fn four_term_coefficients() {
        let cfg = ChannelConfig::new(
            WaveplateSetting::new(0.3, -0.7, 1.1).unwrap(),
            WaveplateSetting::new(-0.2, 0.5, 0.4).unwrap(),
            0.6,
        )
        .unwrap();
        let ops = ChannelOps::from_config(&cfg).unwrap();
        let amp = four_term_amplitudes(&ops, s(), s());
        let mf = forward_op(&cfg.upper).scale(C64::new(0.6f64.sqrt(), 0.0));
        let nf = forward_op(&cfg.lower).scale(C64::new(0.6f64.sqrt(), 0.0));
        let mb = backward_op(&cfg.upper).scale(C64::new(0.6f64.sqrt(), 0.0));
        let nb = backward_op(&cfg.lower).scale(C64::new(0.6f64.sqrt(), 0.0));
        let expect = [
            [mf.hh() * mb.hh() / 2.0, mf.hh() * nb.vv() / 2.0],
            [nf.vv() * mb.hh() / 2.0, nf.vv() * nb.vv() / 2.0],
        ];
        for i in 0..2 {
            for j in 0..2 {
                assert!((amp[i][j] - expect[i][j]).norm() < 1e-12);
            }
        }
        assert!((amp[0][1] - amp[1][0]).norm() < 1e-12);
    }

    #[test]
    fn ideal_unbalanced_pair_is_transmitted() {
        let cfg = ChannelConfig::pauli(PauliLabel::Z, PauliLabel::Z, 0.5).unwrap();
        let a = C64::new(0.0, 0.0);
        let b = C64::new(1.0, 0.0);
        let out = run_ideal_ops(&ChannelOps::from_config(&cfg).unwrap(), a, b).unwrap();
        assert!((out.fidelity_to(a, b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_directions_keeps_state() {
        let cfg = ChannelConfig::new(
            WaveplateSetting::new(0.9, 0.2, -1.3).unwrap(),
            WaveplateSetting::new(0.1, -0.4, 2.0).unwrap(),
            0.8,
        )
        .unwrap();
        let ops = ChannelOps::from_config(&cfg).unwrap();
        let swapped = ChannelOps {
            mf: ops.mb.clone(),
            nf: ops.nb.clone(),
            mb: ops.mf.clone(),
            nb: ops.nf.clone(),
        };
        let a = run_ideal_ops(&ops, s(), s()).unwrap();
        let b = run_ideal_ops(&swapped, s(), s()).unwrap();
        assert!((a.success_prob - b.success_prob).abs() < 1e-12);
        let d = a.rho_out.unwrap().mat().max_abs_diff(b.rho_out.unwrap().mat());
        assert!(d < 1e-12);
    }

    fn ideal_model() -> FockModel {
        FockModel {
            pair: PairSource::Ideal,
            reference: Reference::SinglePhoton,
            ..FockModel::default()
        }
    }

    #[test]
    fn full_tier_single_photon_limit_matches_ideal() {
        let src = SourceParams::new(1e-6, 0.0, 1.0);
        for cfg in [
            ChannelConfig::pauli(PauliLabel::I, PauliLabel::I, 1.0).unwrap(),
            ChannelConfig::pauli(PauliLabel::Z, PauliLabel::I, 0.48).unwrap(),
            ChannelConfig::new(
                WaveplateSetting::new(0.4, 1.2, -0.3).unwrap(),
                WaveplateSetting::new(-0.8, 0.3, 0.6).unwrap(),
                0.7,
            )
            .unwrap(),
        ] {
            let full = run_full(&src, &cfg, &ideal_model()).unwrap();
            let ideal = run_ideal_ops(&ChannelOps::from_config(&cfg).unwrap(), s(), s()).unwrap();
            // the diagonal projection passes half of the parity-check events
            assert!((full.success_prob - ideal.success_prob / 2.0).abs() < 1e-6);
            let f = uhlmann_fidelity(full.rho_out.as_ref().unwrap(), ideal.rho_out.as_ref().unwrap()).unwrap();
            assert!((f - 1.0).abs() < 1e-6, "{f} {:?}", full.rho_out);
        }
    }

    #[test]
    fn no_reference_light() {
        let cfg = ChannelConfig::pauli(PauliLabel::I, PauliLabel::I, 1.0).unwrap();
        let single = FockModel {
            pair: PairSource::Ideal,
            ..FockModel::default()
        };
        let out = run_full(&SourceParams::new(2e-3, 0.0, 1.0), &cfg, &single).unwrap();
        assert!(out.success_prob.abs() < 1e-15);
        // with multi-pair emission two photons of A can fake the parity check
        let p = |g: f64| run_full(&SourceParams::new(g, 0.0, 1.0), &cfg, &FockModel::default()).unwrap().success_prob;
        let ratio = p(2e-3) / p(1e-3);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
        assert!(p(2e-3) < 1e-5);
    }

    #[test]
    fn full_tier_rejects_oversized_space() {
        let src = SourceParams::new(2e-3, 0.09, 1.0);
        let cfg = ChannelConfig::pauli(PauliLabel::I, PauliLabel::I, 1.0).unwrap();
        let model = FockModel::default().with_cutoff(4);
        assert!(matches!(run_full(&src, &cfg, &model), Err(Error::SpaceTooLarge { .. })));
    }

    #[test]
    fn full_tier_weak_reference_scaling() {
        // success ∝ γμ and infidelity ∝ μ for identity channels
        let cfg = ChannelConfig::pauli(PauliLabel::I, PauliLabel::I, 1.0).unwrap();
        let model = FockModel::default();
        let run = |gamma: f64, mu: f64| run_full(&SourceParams::new(gamma, mu, 1.0), &cfg, &model).unwrap();
        let base = run(2e-3, 0.09);
        let half_mu = run(2e-3, 0.045);
        let half_gamma = run(1e-3, 0.09);
        let r_mu = base.success_prob / half_mu.success_prob;
        let r_gamma = base.success_prob / half_gamma.success_prob;
        assert!((r_mu - 2.0).abs() < 0.1, "{r_mu}");
        assert!((r_gamma - 2.0).abs() < 0.1, "{r_gamma}");
        // with one pair per pulse the only errors are multi-photon reference events
        let single = FockModel {
            pair: PairSource::Ideal,
            ..FockModel::default()
        };
        let err = |mu: f64| {
            1.0 - run_full(&SourceParams::new(2e-3, mu, 1.0), &cfg, &single)
                .unwrap()
                .fidelity_phi_plus()
                .unwrap()
        };
        let (e_base, e_half) = (err(0.09), err(0.045));
        assert!(e_base > 0.0 && (e_base / e_half - 2.0).abs() < 0.1, "{e_base} {e_half}");
    }

    fn nominal_source() -> SourceParams {
        SourceParams::new(2e-3, 0.09, DEFAULT_VISIBILITY)
    }

    #[test]
    fn calibrated_visibility_regression() {
        let v = calibrate_visibility(&nominal_source(), 1.0, 0.85, &FockModel::default()).unwrap();
        assert!((v - DEFAULT_VISIBILITY).abs() < 1e-4, "{v}");
    }

    #[test]
    fn ensemble_full_ideal_source_is_exact() {
        let model = FockModel {
            pair: PairSource::Ideal,
            reference: Reference::SinglePhoton,
            ..FockModel::default()
        };
        let out = depolarizing_average_full(&SourceParams::new(0.0, 0.0, 1.0), 1.0, &model).unwrap();
        assert!((out.fidelity_phi_plus().unwrap() - 1.0).abs() < 1e-6);
        // T²/8 of the single-photon tier, halved by the diagonal projection
        assert!((out.success_prob - 1.0 / 16.0).abs() < 1e-9);
    }

    #[test]
    fn ensemble_full_linear_rate_and_flat_fidelity() {
        let model = FockModel::default();
        let hi = depolarizing_average_full(&nominal_source(), 1.0, &model).unwrap();
        let lo = depolarizing_average_full(&nominal_source(), 0.17, &model).unwrap();
        let ratio = hi.success_prob / lo.success_prob;
        assert!((ratio * 0.17 - 1.0).abs() < 0.02, "{ratio}");
        let df = hi.fidelity_phi_plus().unwrap() - lo.fidelity_phi_plus().unwrap();
        assert!(df.abs() < 0.01, "{df}");
    }

    #[test]
    fn haar_ensemble_is_reproducible_and_protected() {
        let a = haar_ensemble_ideal(0.5, 64, 9, Correlation::Collective, s(), s()).unwrap();
        let b = haar_ensemble_ideal(0.5, 64, 9, Correlation::Collective, s(), s()).unwrap();
        assert_eq!(a.success_prob, b.success_prob);
        assert!((a.fidelity_phi_plus().unwrap() - 1.0).abs() < 1e-10);
        let d = haar_ensemble_ideal(0.5, 64, 9, Correlation::Decorrelated, s(), s()).unwrap();
        assert!(d.fidelity_phi_plus().unwrap() < 0.9);
    }

    #[test]
    fn process_matrices() {
        for p in PauliLabel::ALL {
            for dir in [Direction::Forward, Direction::Backward] {
                let chi = process_chi(&[pauli_setting(p)], dir).unwrap();
                let (idx, val) = chi.dominant();
                assert_eq!(idx, p.index());
                assert!(val >= 0.999);
            }
        }
        let all: Vec<_> = PauliLabel::ALL.iter().map(|&p| pauli_setting(p)).collect();
        for dir in [Direction::Forward, Direction::Backward] {
            let chi = process_chi(&all, dir).unwrap();
            assert!(chi.mat.max_abs_diff(&CMatrix::identity(4).scale_re(0.25)) < 1e-9);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn angle() -> impl Strategy<Value = f64> {
            -std::f64::consts::PI..std::f64::consts::PI
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn dfs_exact_for_any_collective_setting(
                a in angle(), b in angle(), c in angle(),
                d in angle(), e in angle(), f in angle(),
                t in 0.05..1.0f64,
            ) {
                let cfg = ChannelConfig::new(
                    WaveplateSetting::new(a, b, c).unwrap(),
                    WaveplateSetting::new(d, e, f).unwrap(),
                    t,
                ).unwrap();
                let ops = ChannelOps::from_config(&cfg).unwrap();
                let out = run_ideal_ops(&ops, s(), s()).unwrap();
                let (fh, fv, _, _) = ops.diagonal();
                prop_assert!((out.success_prob - (fh * fv).norm_sqr() / 2.0).abs() < 1e-10);
                if out.success_prob > 1e-14 {
                    prop_assert!((out.fidelity_phi_plus().unwrap() - 1.0).abs() < 1e-10);
                }
            }

            #[test]
            fn full_success_monotone_in_t_and_mu(t in 0.1..0.9f64, mu in 0.01..0.08f64) {
                let model = FockModel { reference_scaling: false, ..FockModel::default() };
                let src = SourceParams::new(2e-3, mu, 0.9);
                let run = |t: f64, mu: f64| {
                    let cfg = ChannelConfig::pauli(PauliLabel::I, PauliLabel::I, t).unwrap();
                    run_full(&SourceParams { mu, ..src }, &cfg, &model).unwrap().success_prob
                };
                let p = run(t, mu);
                prop_assert!(run(t + 0.1, mu) >= p);
                prop_assert!(run(t, mu + 0.01) >= p);
            }
        }
    }
}
