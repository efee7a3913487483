use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use dfs_core::polarization::{backward_op, forward_op, pauli_setting, reciprocal_conjugate, JonesOperator, PauliLabel, WaveplateSetting};
use dfs_core::protocol::{
    calibrate_visibility, ensemble_choi, ensemble_full_grid, ensemble_ideal, full_grid, haar_ensemble_full,
    haar_ensemble_ideal, run_ideal_ops, source_state, target_state, ChannelOps, Correlation, Direction,
    ProtocolOutcome,
};
use dfs_core::qmath::{uhlmann_fidelity, CMatrix, DensityMatrix};
use dfs_core::tomography::{
    bootstrap, chi_from_choi, concurrence, eof, eof_from_concurrence, mle_state, purity, sample_counts,
    setting_probabilities, write_counts_csv, Basis6, ChiMatrix, CountRecord,
};
use dfs_core::C64;
use log::info;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ChannelMode, Scenario, Tier, Tomography};
use crate::error::{CliError, CliResult};
use crate::fit::{power_law_fit, PowerFit};
use crate::output::RunDir;

/// Independent seed number `stream` derived from the scenario seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBars {
    pub fidelity: f64,
    pub purity: f64,
    pub eof: f64,
    pub resamples: usize,
}

/// Figures of merit of one scenario evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub id: String,
    pub tier: Tier,
    pub mode: ChannelMode,
    pub correlation: Correlation,
    pub transmittance: f64,
    pub alpha_sq: f64,
    /// Photon-number cutoff; absent for the single-photon tier.
    pub cutoff: Option<usize>,
    pub success_prob: f64,
    pub rate_hz: Option<f64>,
    /// Fidelity with `α|HH⟩ + β|VV⟩`.
    pub fidelity: Option<f64>,
    pub purity: Option<f64>,
    pub concurrence: Option<f64>,
    pub eof: Option<f64>,
    pub reconstruction: Tomography,
    pub error_bars: Option<ErrorBars>,
}

impl ResultRecord {
    fn check_finite(&self) -> CliResult<()> {
        let vals = [Some(self.success_prob), self.rate_hz, self.fidelity, self.purity, self.concurrence, self.eof];
        if vals.iter().flatten().any(|v| !v.is_finite()) || !(0.0..=1.0).contains(&self.success_prob) {
            return Err(CliError::Numerical(dfs_core::Error::InvalidState(format!(
                "non-finite or out-of-range result for `{}` at T = {}",
                self.id, self.transmittance
            ))));
        }
        Ok(())
    }
}

/// A scenario evaluation with the data behind its record.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub record: ResultRecord,
    pub outcome: ProtocolOutcome,
    /// Reconstructed shared state (exact or maximum likelihood).
    pub rho: Option<DensityMatrix>,
    pub counts: Option<Vec<CountRecord>>,
}

/// Runs the protocol model selected by the scenario.
pub fn simulate(scn: &Scenario) -> CliResult<ProtocolOutcome> {
    let t = scn.channel.transmittance;
    let (a, b) = (scn.source.alpha, scn.source.beta);
    let out = match (scn.tier, scn.mode) {
        (Tier::Ideal, ChannelMode::Fixed) => run_ideal_ops(&ChannelOps::from_config(&scn.channel)?, a, b)?,
        (Tier::Ideal, ChannelMode::DepolarizingEnsemble) => ensemble_ideal(t, scn.correlation, a, b)?,
        (Tier::Ideal, ChannelMode::HaarMc) => haar_ensemble_ideal(t, scn.samples, scn.seed, scn.correlation, a, b)?,
        (Tier::Full, ChannelMode::Fixed) => {
            full_grid(&scn.source, &ChannelOps::from_config(&scn.channel)?, &scn.model, t)?.outcome()?
        }
        (Tier::Full, ChannelMode::DepolarizingEnsemble) => {
            ensemble_full_grid(&scn.source, t, scn.correlation, &scn.model)?.outcome()?
        }
        (Tier::Full, ChannelMode::HaarMc) => {
            haar_ensemble_full(&scn.source, t, scn.samples, scn.seed, scn.correlation, &scn.model)?
        }
    };
    Ok(out)
}

/// Simulation followed by the configured reconstruction. `stream` selects the
/// sampling seeds so that sweep points draw independent counts.
pub fn evaluate(scn: &Scenario, stream: u64) -> CliResult<Evaluation> {
    let outcome = simulate(scn)?;
    let target = DensityMatrix::from_pure(&target_state(scn.source.alpha, scn.source.beta))?;
    let mut counts = None;
    let mut error_bars = None;
    let rho = match (&outcome.rho_out, scn.tomography) {
        (None, _) => None,
        (Some(r), Tomography::Exact) => Some(r.clone()),
        (Some(_), Tomography::Shots(n)) => {
            let rec = sample_counts(&outcome.click_table, n, derive_seed(scn.seed, 2 * stream))?;
            let rho = mle_state(&rec)?;
            if scn.bootstrap >= 2 {
                let fid = |r: &DensityMatrix| uhlmann_fidelity(&target, r).unwrap_or(f64::NAN);
                let eof_of = |r: &DensityMatrix| eof(r).unwrap_or(f64::NAN);
                let sd = bootstrap(
                    &rec,
                    &rho,
                    scn.bootstrap,
                    derive_seed(scn.seed, 2 * stream + 1),
                    &[&fid, &purity, &eof_of],
                )?;
                error_bars = Some(ErrorBars {
                    fidelity: sd[0],
                    purity: sd[1],
                    eof: sd[2],
                    resamples: scn.bootstrap,
                });
            }
            counts = Some(rec);
            Some(rho)
        }
    };
    let (fidelity, pur, conc) = match &rho {
        Some(r) => (Some(uhlmann_fidelity(&target, r)?), Some(purity(r)), Some(concurrence(r)?)),
        None => (None, None, None),
    };
    let record = ResultRecord {
        id: scn.id.clone(),
        tier: scn.tier,
        mode: scn.mode,
        correlation: scn.correlation,
        transmittance: scn.channel.transmittance,
        alpha_sq: scn.alpha_sq,
        cutoff: (scn.tier == Tier::Full).then_some(scn.model.cutoff),
        success_prob: outcome.success_prob,
        rate_hz: scn.rep_rate_hz.map(|r| r * outcome.success_prob),
        fidelity,
        purity: pur,
        concurrence: conc,
        eof: conc.map(eof_from_concurrence),
        reconstruction: scn.tomography,
        error_bars,
    };
    record.check_finite()?;
    Ok(Evaluation {
        record,
        outcome,
        rho,
        counts,
    })
}

#[derive(Serialize)]
struct ClickRow {
    setting_a: Basis6,
    setting_b: Basis6,
    probability: f64,
}

fn write_common(dir: &RunDir, config_text: &str) -> CliResult<()> {
    dir.write("config.toml", config_text.as_bytes())?;
    Ok(())
}

/// `run`: one evaluation; writes `results.json`, `click_table.csv`, the state
/// as `rho_re.csv`/`rho_im.csv` and, for sampled tomography, `counts.csv`.
pub fn cmd_run(scn: &Scenario, config_text: &str, out: &Path) -> CliResult<(Evaluation, PathBuf)> {
    let ev = evaluate(scn, 0)?;
    let dir = RunDir::create(out, &scn.id)?;
    write_common(&dir, config_text)?;
    let rows: Vec<ClickRow> = ev
        .outcome
        .click_table
        .iter()
        .map(|(s, p)| ClickRow {
            setting_a: s.basis_a,
            setting_b: s.basis_b,
            probability: *p,
        })
        .collect();
    dir.write_csv("click_table.csv", &rows)?;
    if let Some(rec) = &ev.counts {
        let mut buf = Vec::new();
        write_counts_csv(rec, &mut buf)?;
        dir.write("counts.csv", &buf)?;
    }
    if let Some(r) = &ev.rho {
        dir.write_matrix("rho", r.mat())?;
    }
    let path = dir.write_json("results.json", &ev.record)?;
    info!("run `{}`: success {:e}", scn.id, ev.record.success_prob);
    Ok((ev, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub transmittance: f64,
    pub success_prob: f64,
    pub rate_hz: Option<f64>,
    pub fidelity: Option<f64>,
    pub purity: Option<f64>,
    pub eof: Option<f64>,
    /// `∝ T²` comparison through `μ⁻¹/2` times the fitted unit-transmittance
    /// rate (forward single-photon reference scheme).
    pub t2_reference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub id: String,
    pub fit: PowerFit,
    pub points: Vec<ResultRecord>,
    pub rows: Vec<SweepRow>,
}

/// Evaluates every transmittance concurrently and fits `rate ∝ T^k`.
pub fn sweep_t(scn: &Scenario, ts: &[f64]) -> CliResult<SweepReport> {
    if ts.len() < 2 {
        return Err(CliError::NeedTwoPoints(ts.len()));
    }
    let points = ts
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let s = scn.with_transmittance(*t)?;
            Ok(evaluate(&s, k as u64)?.record)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let ys: Vec<f64> = points.iter().map(|p| p.success_prob).collect();
    let fit = power_law_fit(ts, &ys)?;
    let mu = scn.source.mu;
    let rows = points
        .iter()
        .map(|p| SweepRow {
            transmittance: p.transmittance,
            success_prob: p.success_prob,
            rate_hz: p.rate_hz,
            fidelity: p.fidelity,
            purity: p.purity,
            eof: p.eof,
            t2_reference: (scn.tier == Tier::Full && mu > 0.0)
                .then(|| fit.prefactor / (2.0 * mu) * p.transmittance.powi(2)),
        })
        .collect();
    Ok(SweepReport {
        id: scn.id.clone(),
        fit,
        points,
        rows,
    })
}

pub fn cmd_sweep_t(scn: &Scenario, ts: &[f64], config_text: &str, out: &Path) -> CliResult<(SweepReport, PathBuf)> {
    let rep = sweep_t(scn, ts)?;
    let dir = RunDir::create(out, &scn.id)?;
    write_common(&dir, config_text)?;
    dir.write_csv("sweep_t.csv", &rep.rows)?;
    let path = dir.write_json("sweep_t.json", &rep)?;
    Ok((rep, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha_sq: f64,
    pub success_prob: f64,
    /// Fidelity between the state at the source and the shared state.
    pub fidelity: Option<f64>,
    pub initial_eof: f64,
    pub final_eof: Option<f64>,
    /// EoF of the ideal pair `√a|HH⟩ + √(1−a)|VV⟩`.
    pub ideal_eof: f64,
    /// Fidelity reached by the single-photon tier in the same channel.
    pub ideal_fidelity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepReport {
    pub id: String,
    pub min_fidelity: Option<f64>,
    pub points: Vec<AlphaPoint>,
}

pub fn alpha_sweep(scn: &Scenario, values: &[f64]) -> CliResult<AlphaSweepReport> {
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(CliError::Config(format!("alpha_sq value {v} outside [0, 1]")));
    }
    let points = values
        .par_iter()
        .enumerate()
        .map(|(k, a2)| {
            let s = scn.with_alpha_sq(*a2);
            let pure = DensityMatrix::from_pure(&target_state(s.source.alpha, s.source.beta))?;
            let initial = match s.tier {
                Tier::Full => source_state(&s.source, &s.model)?,
                Tier::Ideal => pure.clone(),
            };
            let ev = evaluate(&s, k as u64)?;
            let fidelity = ev.rho.as_ref().map(|r| uhlmann_fidelity(&initial, r)).transpose()?;
            let ideal = Scenario {
                tier: Tier::Ideal,
                tomography: Tomography::Exact,
                ..s.clone()
            };
            let ideal_fidelity = simulate(&ideal)?.fidelity_to(s.source.alpha, s.source.beta);
            Ok(AlphaPoint {
                alpha_sq: *a2,
                success_prob: ev.record.success_prob,
                fidelity,
                initial_eof: eof(&initial)?,
                final_eof: ev.record.eof,
                ideal_eof: eof(&pure)?,
                ideal_fidelity,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let min_fidelity = points.iter().filter_map(|p| p.fidelity).reduce(f64::min);
    Ok(AlphaSweepReport {
        id: scn.id.clone(),
        min_fidelity,
        points,
    })
}

pub fn cmd_alpha_sweep(
    scn: &Scenario,
    values: &[f64],
    config_text: &str,
    out: &Path,
) -> CliResult<(AlphaSweepReport, PathBuf)> {
    let rep = alpha_sweep(scn, values)?;
    let dir = RunDir::create(out, &scn.id)?;
    write_common(&dir, config_text)?;
    dir.write_csv("alpha_sweep.csv", &rep.points)?;
    let path = dir.write_json("alpha_sweep.json", &rep)?;
    Ok((rep, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSummary {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    /// Pauli label of the largest diagonal element.
    pub dominant: PauliLabel,
    pub dominant_value: f64,
    /// Largest elementwise distance from `diag(1/4, 1/4, 1/4, 1/4)`.
    pub depolarizing_distance: f64,
}

impl ChiSummary {
    pub fn new(chi: &ChiMatrix) -> Self {
        let m = &chi.mat;
        let (k, v) = chi.dominant();
        ChiSummary {
            re: (0..4).map(|i| (0..4).map(|j| m[(i, j)].re).collect()).collect(),
            im: (0..4).map(|i| (0..4).map(|j| m[(i, j)].im).collect()).collect(),
            dominant: PauliLabel::ALL[k],
            dominant_value: v,
            depolarizing_distance: m.max_abs_diff(&CMatrix::identity(4).scale_re(0.25)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingChi {
    pub setting: WaveplateSetting,
    pub forward: ChiSummary,
    pub backward: ChiSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub id: String,
    pub reconstruction: Tomography,
    pub forward: ChiSummary,
    pub backward: ChiSummary,
    pub per_setting: Vec<SettingChi>,
    #[serde(skip)]
    pub chi_forward: Option<ChiMatrix>,
    #[serde(skip)]
    pub chi_backward: Option<ChiMatrix>,
}

/// Waveplate settings realised by the scenario's upper path.
pub fn process_settings(scn: &Scenario) -> Vec<WaveplateSetting> {
    match scn.mode {
        ChannelMode::Fixed => vec![scn.channel.upper],
        ChannelMode::DepolarizingEnsemble => PauliLabel::ALL.iter().map(|p| pauli_setting(*p)).collect(),
        ChannelMode::HaarMc => random_settings(scn.samples, scn.seed),
    }
}

/// Settings with independent uniform angles in `(−π, π]`.
pub fn random_settings(n: usize, seed: u64) -> Vec<WaveplateSetting> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut a = || PI - rng.random::<f64>() * 2.0 * PI;
            WaveplateSetting::new(a(), a(), a()).expect("finite angles")
        })
        .collect()
}

fn reconstruct_chi(scn: &Scenario, settings: &[WaveplateSetting], dir: Direction, stream: u64) -> CliResult<ChiMatrix> {
    let choi = ensemble_choi(settings, dir)?;
    let probs = setting_probabilities(&choi);
    let rho = match scn.tomography {
        Tomography::Exact => dfs_core::tomography::linear_inversion(&probs)?,
        Tomography::Shots(n) => mle_state(&sample_counts(&probs, n, derive_seed(scn.seed, stream))?)?,
    };
    Ok(chi_from_choi(&rho)?)
}

/// Process tomography of the upper path in both directions, assuming a
/// perfect `|φ⁺⟩` probe.
pub fn process_tomo(scn: &Scenario) -> CliResult<ProcessReport> {
    let settings = process_settings(scn);
    let fwd = reconstruct_chi(scn, &settings, Direction::Forward, 0)?;
    let bwd = reconstruct_chi(scn, &settings, Direction::Backward, 1)?;
    let per_setting = if settings.len() > 1 {
        settings
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let one = std::slice::from_ref(s);
                Ok(SettingChi {
                    setting: *s,
                    forward: ChiSummary::new(&reconstruct_chi(scn, one, Direction::Forward, 2 * k as u64 + 2)?),
                    backward: ChiSummary::new(&reconstruct_chi(scn, one, Direction::Backward, 2 * k as u64 + 3)?),
                })
            })
            .collect::<CliResult<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(ProcessReport {
        id: scn.id.clone(),
        reconstruction: scn.tomography,
        forward: ChiSummary::new(&fwd),
        backward: ChiSummary::new(&bwd),
        per_setting,
        chi_forward: Some(fwd),
        chi_backward: Some(bwd),
    })
}

pub fn cmd_process_tomo(scn: &Scenario, config_text: &str, out: &Path) -> CliResult<(ProcessReport, PathBuf)> {
    let rep = process_tomo(scn)?;
    let dir = RunDir::create(out, &scn.id)?;
    write_common(&dir, config_text)?;
    if let (Some(f), Some(b)) = (&rep.chi_forward, &rep.chi_backward) {
        dir.write_matrix("chi_forward", &f.mat)?;
        dir.write_matrix("chi_backward", &b.mat)?;
    }
    let path = dir.write_json("process.json", &rep)?;
    Ok((rep, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReciprocityReport {
    pub samples: usize,
    pub seed: u64,
    /// Rotation of the injected non-reciprocal element, if any.
    pub faraday_rad: Option<f64>,
    pub max_residual: f64,
    pub pauli_max_residual: f64,
    pub reciprocal: bool,
}

pub const RECIPROCITY_TOL: f64 = 1e-12;

fn rotator(rho: f64) -> JonesOperator {
    let (s, c) = rho.sin_cos();
    JonesOperator::from_entries(C64::new(c, 0.0), C64::new(-s, 0.0), C64::new(s, 0.0), C64::new(c, 0.0))
}

fn residual(s: &WaveplateSetting, faraday: Option<f64>) -> f64 {
    let (fwd, bwd) = match faraday {
        None => (forward_op(s), backward_op(s)),
        // the rotation sense follows the field, not the propagation direction
        Some(r) => (rotator(r).then(&forward_op(s)), backward_op(s).then(&rotator(-r))),
    };
    bwd.mat().max_abs_diff(reciprocal_conjugate(&fwd).mat())
}

/// Compares each backward action with `Z·Ω_fᵀ·Z` over random settings.
pub fn reciprocity_check(samples: usize, seed: u64, faraday: Option<f64>) -> CliResult<ReciprocityReport> {
    if samples == 0 {
        return Err(CliError::Config("samples: must be at least 1".into()));
    }
    if let Some(r) = faraday {
        if !r.is_finite() {
            return Err(CliError::Config("faraday rotation is not finite".into()));
        }
    }
    let max_residual = random_settings(samples, seed)
        .iter()
        .map(|s| residual(s, faraday))
        .fold(0.0, f64::max);
    let pauli_max_residual = PauliLabel::ALL
        .iter()
        .map(|p| residual(&pauli_setting(*p), faraday))
        .fold(0.0, f64::max);
    Ok(ReciprocityReport {
        samples,
        seed,
        faraday_rad: faraday,
        max_residual,
        pauli_max_residual,
        reciprocal: max_residual.max(pauli_max_residual) < RECIPROCITY_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub id: String,
    pub transmittance: f64,
    pub target_fidelity: f64,
    pub visibility: f64,
    pub cutoff: usize,
}

/// Visibility that puts the collective-ensemble fidelity at `target`.
pub fn calibrate(scn: &Scenario, target: f64) -> CliResult<CalibrationReport> {
    if scn.tier != Tier::Full {
        return Err(CliError::Config("calibrate: needs `source.tier = \"full\"`".into()));
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(CliError::Config(format!("target fidelity {target} outside [0, 1]")));
    }
    let t = scn.channel.transmittance;
    let v = calibrate_visibility(&scn.source, t, target, &scn.model)?;
    Ok(CalibrationReport {
        id: scn.id.clone(),
        transmittance: t,
        target_fidelity: target,
        visibility: v,
        cutoff: scn.model.cutoff,
    })
}

pub fn cmd_calibrate(scn: &Scenario, target: f64, config_text: &str, out: &Path) -> CliResult<(CalibrationReport, PathBuf)> {
    let rep = calibrate(scn, target)?;
    let dir = RunDir::create(out, &scn.id)?;
    write_common(&dir, config_text)?;
    let path = dir.write_json("calibration.json", &rep)?;
    Ok((rep, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn scenario(text: &str) -> Scenario {
        Scenario::from_toml(text, &Overrides::default()).unwrap()
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(1, 5), derive_seed(1, 5));
    }

    #[test]
    fn ideal_ensemble_run() {
        let s = scenario("id = \"i\"\n[source]\ntier = \"ideal\"\n[channel]\nmode = \"depolarizing-ensemble\"\n");
        let ev = evaluate(&s, 0).unwrap();
        assert!((ev.record.success_prob - 0.125).abs() < 1e-12);
        assert!((ev.record.fidelity.unwrap() - 1.0).abs() < 1e-12);
        assert!((ev.record.eof.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(ev.record.cutoff, None);
    }

    #[test]
    fn blocked_channel_has_no_state() {
        let s = scenario("id = \"x\"\n[source]\ntier = \"ideal\"\n[channel]\nmode = \"fixed\"\nupper = \"X\"\n");
        let ev = evaluate(&s, 0).unwrap();
        assert_eq!(ev.record.success_prob, 0.0);
        assert!(ev.rho.is_none() && ev.record.fidelity.is_none());
    }

    #[test]
    fn sampled_tomography_has_error_bars() {
        let s = scenario(
            "id = \"s\"\nseed = 3\n[source]\ntier = \"ideal\"\n[channel]\nmode = \"fixed\"\n[tomography]\nshots = 2000\nbootstrap = 20\n",
        );
        let ev = evaluate(&s, 0).unwrap();
        let e = ev.record.error_bars.unwrap();
        assert!(ev.record.fidelity.unwrap() > 0.97);
        assert!(e.fidelity > 0.0 && e.fidelity < 0.05 && e.resamples == 20);
        assert_eq!(ev.counts.unwrap().len(), 36);
    }

    #[test]
    fn process_examples() {
        let ens = scenario("id = \"p\"\n[channel]\nmode = \"depolarizing-ensemble\"\n");
        let rep = process_tomo(&ens).unwrap();
        assert!(rep.forward.depolarizing_distance < 1e-9 && rep.backward.depolarizing_distance < 1e-9);
        assert_eq!(rep.per_setting.len(), 4);
        for (s, p) in rep.per_setting.iter().zip(PauliLabel::ALL) {
            assert_eq!((s.forward.dominant, s.backward.dominant), (p, p));
            assert!(s.forward.dominant_value > 0.999 && s.backward.dominant_value > 0.999);
        }
        let id = process_tomo(&scenario("id = \"p\"\n[channel]\nmode = \"fixed\"\n")).unwrap();
        assert_eq!(id.forward.dominant, PauliLabel::I);
        assert!((id.forward.dominant_value - 1.0).abs() < 1e-12);
        let z = process_tomo(&scenario("id = \"p\"\n[channel]\nmode = \"fixed\"\nupper = \"Z\"\n")).unwrap();
        assert_eq!((z.forward.dominant, z.backward.dominant), (PauliLabel::Z, PauliLabel::Z));
        assert!((z.backward.dominant_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reciprocity_controls() {
        let ok = reciprocity_check(1000, 4, None).unwrap();
        assert!(ok.reciprocal && ok.max_residual < 1e-12);
        assert!(ok.pauli_max_residual < 1e-15);
        let bad = reciprocity_check(100, 4, Some(PI / 8.0)).unwrap();
        assert!(!bad.reciprocal && bad.max_residual > 0.1);
    }

    #[test]
    fn ideal_alpha_points() {
        let s = scenario("id = \"a\"\n[source]\ntier = \"ideal\"\n[channel]\nmode = \"depolarizing-ensemble\"\n");
        let rep = alpha_sweep(&s, &[0.0, 0.5]).unwrap();
        let (p0, p5) = (&rep.points[0], &rep.points[1]);
        assert!(p0.initial_eof.abs() < 1e-9 && (p0.fidelity.unwrap() - 1.0).abs() < 1e-9);
        assert!((p5.initial_eof - 1.0).abs() < 1e-9 && (p5.fidelity.unwrap() - 1.0).abs() < 1e-9);
    }
}
