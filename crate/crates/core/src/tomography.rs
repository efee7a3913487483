//! Two-qubit state and process tomography.
//!
//! Measurements are product projections onto the six polarization eigenstates
//! `{H, V, D, A, R, L}` per qubit (36 settings). States are reconstructed by the
//! iterative `RρR` maximum-likelihood algorithm or by linear inversion; channels
//! are characterised by their Pauli-basis process matrix obtained from the Choi
//! state.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::qmath::{herm_eig, pauli, sqrt_psd, tensor, tensor_vec, CMatrix, DensityMatrix, I, ONE, ZERO};
use crate::{Error, Result, C64};

/// Eigenstates of the three Pauli operators, in polarization notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis6 {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Basis6 {
    pub const ALL: [Basis6; 6] = [Basis6::H, Basis6::V, Basis6::D, Basis6::A, Basis6::R, Basis6::L];

    pub fn ket(self) -> [C64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (a, b) = match self {
            Basis6::H => (ONE, ZERO),
            Basis6::V => (ZERO, ONE),
            Basis6::D => (ONE, ONE),
            Basis6::A => (ONE, -ONE),
            Basis6::R => (ONE, -I),
            Basis6::L => (ONE, I),
        };
        if matches!(self, Basis6::H | Basis6::V) {
            [a, b]
        } else {
            [a * s, b * s]
        }
    }

    /// Measurement axis: 0 for Z (H/V), 1 for X (D/A), 2 for Y (R/L).
    pub fn axis(self) -> usize {
        match self {
            Basis6::H | Basis6::V => 0,
            Basis6::D | Basis6::A => 1,
            Basis6::R | Basis6::L => 2,
        }
    }
}

impl fmt::Display for Basis6 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Basis6::H => "H",
            Basis6::V => "V",
            Basis6::D => "D",
            Basis6::A => "A",
            Basis6::R => "R",
            Basis6::L => "L",
        };
        f.write_str(s)
    }
}

impl FromStr for Basis6 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" | "h" => Ok(Basis6::H),
            "V" | "v" => Ok(Basis6::V),
            "D" | "d" => Ok(Basis6::D),
            "A" | "a" => Ok(Basis6::A),
            "R" | "r" => Ok(Basis6::R),
            "L" | "l" => Ok(Basis6::L),
            other => Err(Error::InvalidParameter(format!("unknown polarization basis `{other}`"))),
        }
    }
}

/// Product projection onto `basis_a ⊗ basis_b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TomoSetting {
    pub basis_a: Basis6,
    pub basis_b: Basis6,
}

impl TomoSetting {
    pub fn new(basis_a: Basis6, basis_b: Basis6) -> Self {
        TomoSetting { basis_a, basis_b }
    }

    pub fn ket(self) -> Vec<C64> {
        tensor_vec(&self.basis_a.ket(), &self.basis_b.ket())
    }

    /// Index among the nine pairs of measurement axes.
    pub fn group(self) -> usize {
        self.basis_a.axis() * 3 + self.basis_b.axis()
    }
}

impl fmt::Display for TomoSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.basis_a, self.basis_b)
    }
}

/// All 36 settings, `basis_a` major.
pub fn all_settings() -> Vec<TomoSetting> {
    Basis6::ALL
        .iter()
        .flat_map(|&a| Basis6::ALL.iter().map(move |&b| TomoSetting::new(a, b)))
        .collect()
}

pub fn projector(s: TomoSetting) -> CMatrix {
    let k = s.ket();
    CMatrix::outer(&k, &k)
}

fn expectation(rho: &CMatrix, ket: &[C64]) -> f64 {
    let v = rho.apply(ket);
    ket.iter().zip(&v).map(|(a, b)| a.conj() * b).sum::<C64>().re
}

/// Event probabilities `Tr(Π ρ)` for every setting.
pub fn setting_probabilities(rho: &DensityMatrix) -> Vec<(TomoSetting, f64)> {
    all_settings()
        .into_iter()
        .map(|s| (s, expectation(rho.mat(), &s.ket()).clamp(0.0, 1.0)))
        .collect()
}

/// Coincidence counts accumulated at one setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub setting: TomoSetting,
    pub counts: u64,
    pub total: u64,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    setting_a: Basis6,
    setting_b: Basis6,
    counts: u64,
    total: u64,
}

pub fn write_counts_csv<W: Write>(records: &[CountRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(CsvRow {
            setting_a: r.setting.basis_a,
            setting_b: r.setting.basis_b,
            counts: r.counts,
            total: r.total,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_counts_csv<R: Read>(r: R) -> Result<Vec<CountRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: CsvRow = row?;
        if row.counts > row.total {
            return Err(Error::InvalidParameter(format!(
                "counts {} exceed total {}",
                row.counts, row.total
            )));
        }
        out.push(CountRecord {
            setting: TomoSetting::new(row.setting_a, row.setting_b),
            counts: row.counts,
            total: row.total,
        });
    }
    Ok(out)
}

/// Binomial samples `counts ~ B(shots, p)` per setting, reproducible from `seed`.
pub fn sample_counts(probs: &[(TomoSetting, f64)], shots_per_setting: u64, seed: u64) -> Result<Vec<CountRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    probs
        .iter()
        .map(|&(setting, p)| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
            }
            let dist = Binomial::new(shots_per_setting, p)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok(CountRecord {
                setting,
                counts: dist.sample(&mut rng),
                total: shots_per_setting,
            })
        })
        .collect()
}

/// Rank of the span of the measured projectors in the 16-dimensional real space
/// of two-qubit Hermitian operators.
fn operator_rank(settings: &[TomoSetting]) -> usize {
    let ps: Vec<CMatrix> = settings.iter().map(|&s| projector(s)).collect();
    let n = ps.len();
    if n == 0 {
        return 0;
    }
    let mut gram = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = C64::new(ps[i].inner(&ps[j]).re, 0.0);
        }
    }
    let (vals, _) = herm_eig(&gram).expect("Gram matrix is Hermitian");
    vals.iter().filter(|&&v| v > 1e-9).count()
}

/// Frequencies normalised within each group of settings sharing measurement
/// axes, so that every complete group sums to one.
fn group_frequencies(data: &[(TomoSetting, f64)]) -> Result<Vec<(TomoSetting, f64)>> {
    let mut sums = [0.0; 9];
    for &(s, f) in data {
        if !(f >= 0.0 && f.is_finite()) {
            return Err(Error::InvalidParameter(format!("frequency {f} at {s}")));
        }
        sums[s.group()] += f;
    }
    Ok(data
        .iter()
        .filter(|(s, _)| sums[s.group()] > 0.0)
        .map(|&(s, f)| (s, f / sums[s.group()]))
        .collect())
}

fn check_complete(data: &[(TomoSetting, f64)]) -> Result<()> {
    let settings: Vec<TomoSetting> = data.iter().map(|(s, _)| *s).collect();
    let rank = operator_rank(&settings);
    if rank < 16 {
        return Err(Error::NotInformationallyComplete(rank));
    }
    Ok(())
}

/// Options for the `RρR` iteration.
#[derive(Clone, Copy, Debug)]
pub struct MleOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Lower bound on `p_j(ρ)` in `f_j / p_j`.
    pub p_floor: f64,
    /// Record the log-likelihood after every iteration.
    pub trace_likelihood: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iter: 10_000,
            tol: 1e-10,
            p_floor: 1e-12,
            trace_likelihood: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MleReport {
    pub rho: DensityMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// One entry per iteration when requested.
    pub likelihood_trace: Vec<f64>,
}

fn log_likelihood(rho: &CMatrix, data: &[(Vec<C64>, f64)], floor: f64) -> f64 {
    data.iter()
        .filter(|(_, f)| *f > 0.0)
        .map(|(k, f)| f * expectation(rho, k).max(floor).ln())
        .sum()
}

fn r_operator(rho: &CMatrix, data: &[(Vec<C64>, f64)], floor: f64) -> CMatrix {
    let mut r = CMatrix::zeros(4, 4);
    for (k, f) in data {
        if *f == 0.0 {
            continue;
        }
        let p = expectation(rho, k).max(floor);
        let w = f / p;
        for i in 0..4 {
            for j in 0..4 {
                r[(i, j)] += k[i] * k[j].conj() * w;
            }
        }
    }
    r
}

fn normalize_sandwich(a: &CMatrix, rho: &CMatrix) -> CMatrix {
    let m = &(a * rho) * &a.adjoint();
    let m = (&m + &m.adjoint()).scale_re(0.5);
    let tr = m.trace().re;
    m.scale_re(1.0 / tr)
}

/// Projection onto the probability simplex (Euclidean).
fn simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (k, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

/// Nearest density matrix in Frobenius norm.
fn density_projection(m: &CMatrix) -> Result<CMatrix> {
    let h = (m + &m.adjoint()).scale_re(0.5);
    let (vals, vecs) = herm_eig(&h)?;
    let w = simplex_projection(&vals);
    let mut out = CMatrix::zeros(4, 4);
    for (k, wk) in w.iter().enumerate() {
        if *wk > 0.0 {
            let v = vecs.column(k);
            out = &out + &CMatrix::outer(&v, &v).scale_re(*wk);
        }
    }
    Ok(out)
}

/// Monotone accelerated projected gradient ascent on the log-likelihood.
/// Picks up where `RρR` slows down, i.e. near states with small eigenvalues.
fn refine_projected_gradient(
    start: CMatrix,
    data: &[(Vec<C64>, f64)],
    opts: &MleOptions,
    budget: usize,
    trace: &mut Vec<f64>,
) -> Result<(CMatrix, f64, usize, bool)> {
    let ll_of = |m: &CMatrix| log_likelihood(m, data, opts.p_floor);
    let id = CMatrix::identity(4);
    let mut x = start;
    let mut ll_x = ll_of(&x);
    let mut y = x.clone();
    let mut theta: f64 = 1.0;
    let mut eta: f64 = 1e-2;
    let mut used = 0;
    while used < budget {
        used += 1;
        let ll_y = ll_of(&y);
        // ascent direction: R(ρ) − I is the likelihood gradient projected off the trace
        let g = &r_operator(&y, data, opts.p_floor) - &id;
        let mut z;
        let mut ll_z;
        loop {
            z = density_projection(&(&y + &g.scale_re(eta)))?;
            ll_z = ll_of(&z);
            let d = &z - &y;
            let lin = g.inner(&d).re;
            let quad = d.inner(&d).re / (2.0 * eta);
            if ll_z >= ll_y + lin - quad || eta < 1e-16 {
                break;
            }
            eta *= 0.5;
        }
        if ll_z < ll_x {
            if y == x {
                // no progress from the iterate itself
                return Ok((x, ll_x, used, true));
            }
            y = x.clone();
            theta = 1.0;
            continue;
        }
        let delta = z.max_abs_diff(&x);
        let next_theta = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        y = &z + &(&z - &x).scale_re((theta - 1.0) / next_theta);
        theta = next_theta;
        x = z;
        ll_x = ll_z;
        eta *= 1.5;
        if opts.trace_likelihood {
            trace.push(ll_x);
        }
        if delta < opts.tol {
            return Ok((x, ll_x, used, true));
        }
    }
    Ok((x, ll_x, used, false))
}

/// Iterative maximum-likelihood reconstruction from per-setting frequencies:
/// the `RρR` iteration from `I/4`, followed by a projected-gradient refinement
/// with its own iteration budget.
pub fn mle_from_frequencies(data: &[(TomoSetting, f64)], opts: &MleOptions) -> Result<MleReport> {
    check_complete(data)?;
    let freqs = group_frequencies(data)?;
    check_complete(&freqs)?;
    let data: Vec<(Vec<C64>, f64)> = freqs.iter().map(|&(s, f)| (s.ket(), f)).collect();
    let mut rho = CMatrix::identity(4).scale_re(0.25);
    let mut ll = log_likelihood(&rho, &data, opts.p_floor);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let id = CMatrix::identity(4);
    while iterations < opts.max_iter {
        iterations += 1;
        let r = r_operator(&rho, &data, opts.p_floor);
        let mut next = normalize_sandwich(&r, &rho);
        let mut next_ll = log_likelihood(&next, &data, opts.p_floor);
        // Diluted step (I + εR)ρ(I + εR) when the full step loses likelihood.
        let mut eps = 1.0;
        while next_ll < ll && eps > 1e-12 {
            let a = &id + &r.scale_re(eps);
            next = normalize_sandwich(&a, &rho);
            next_ll = log_likelihood(&next, &data, opts.p_floor);
            eps *= 0.5;
        }
        if next_ll < ll {
            // no ascent direction at machine precision
            iterations -= 1;
            break;
        }
        let delta = next.max_abs_diff(&rho);
        rho = next;
        ll = next_ll;
        if opts.trace_likelihood {
            trace.push(ll);
        }
        if delta < opts.tol {
            break;
        }
    }
    let (rho, ll, used, converged) = refine_projected_gradient(rho, &data, opts, opts.max_iter, &mut trace)?;
    Ok(MleReport {
        rho: DensityMatrix::project_psd(&rho)?,
        iterations: iterations + used,
        converged,
        log_likelihood: ll,
        likelihood_trace: trace,
    })
}

fn records_to_frequencies(records: &[CountRecord]) -> Vec<(TomoSetting, f64)> {
    records
        .iter()
        .map(|r| {
            let f = if r.total == 0 { 0.0 } else { r.counts as f64 / r.total as f64 };
            (r.setting, f)
        })
        .collect()
}

/// Maximum-likelihood state from count records.
pub fn mle_state(records: &[CountRecord]) -> Result<DensityMatrix> {
    Ok(mle_state_report(records, &MleOptions::default())?.rho)
}

pub fn mle_state_report(records: &[CountRecord], opts: &MleOptions) -> Result<MleReport> {
    for r in records {
        if r.counts > r.total {
            return Err(Error::InvalidParameter(format!(
                "counts {} exceed total {} at {}",
                r.counts, r.total, r.setting
            )));
        }
    }
    mle_from_frequencies(&records_to_frequencies(records), opts)
}

/// Linear inversion of the 36-setting frame followed by projection onto the
/// density matrices. Every setting must be present.
pub fn linear_inversion(data: &[(TomoSetting, f64)]) -> Result<DensityMatrix> {
    let freqs = group_frequencies(data)?;
    let mut seen = [false; 36];
    for (s, _) in &freqs {
        seen[s.basis_a as usize * 6 + s.basis_b as usize] = true;
    }
    let missing = seen.iter().filter(|x| !**x).count();
    if missing > 0 {
        return Err(Error::NotInformationallyComplete(36 - missing));
    }
    let mut m = CMatrix::zeros(4, 4);
    for &(s, f) in &freqs {
        m = &m + &projector(s).scale_re(f);
    }
    // m = S(ρ) for the frame operator S, which is diagonal on Pauli products
    // σ_a⊗σ_b with eigenvalue s_a·s_b, s_0 = 3, s_k = 1.
    let scale = [3.0, 1.0, 1.0, 1.0];
    let ps = pauli::all();
    let mut rho = CMatrix::zeros(4, 4);
    for a in 0..4 {
        for b in 0..4 {
            let op = tensor(&ps[a], &ps[b]);
            let c = m.inner(&op) / 4.0;
            rho = &rho + &op.scale(c / (scale[a] * scale[b]));
        }
    }
    DensityMatrix::project_psd(&rho)
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.mat().inner(rho.mat()).re
}

/// Wootters concurrence.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != 4 {
        return Err(Error::InvalidDims(format!("concurrence of a {}-dim state", rho.dim())));
    }
    let yy = tensor(&pauli::y(), &pauli::y());
    let tilde = &(&yy * &rho.mat().conj()) * &yy;
    let sr = sqrt_psd(rho.mat())?;
    let inner = &(&sr * &tilde) * &sr;
    let inner = (&inner + &inner.adjoint()).scale_re(0.5);
    let (vals, _) = herm_eig(&inner)?;
    let l: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok((l[0] - l[1] - l[2] - l[3]).clamp(0.0, 1.0))
}

/// `−x log₂ x − (1−x) log₂(1−x)`.
pub fn binary_entropy(x: f64) -> f64 {
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.log2() };
    term(x) + term(1.0 - x)
}

pub fn eof_from_concurrence(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    binary_entropy((1.0 + (1.0 - c * c).sqrt()) / 2.0)
}

/// Entanglement of formation (ebits).
pub fn eof(rho: &DensityMatrix) -> Result<f64> {
    Ok(eof_from_concurrence(concurrence(rho)?))
}

/// Pauli-basis process matrix, `E(ρ) = Σ χ_mn P_m ρ P_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiMatrix {
    pub mat: CMatrix,
}

fn choi_vectors() -> Vec<Vec<C64>> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let phi = [C64::new(s, 0.0), ZERO, ZERO, C64::new(s, 0.0)];
    pauli::all()
        .iter()
        .map(|p| tensor(&pauli::id(), p).apply(&phi))
        .collect()
}

/// Process matrix of the channel acting on the second qubit of a Choi state.
pub fn chi_from_choi(rho_choi: &DensityMatrix) -> Result<ChiMatrix> {
    if rho_choi.dim() != 4 {
        return Err(Error::InvalidState(format!(
            "Choi state must be two-qubit, got dimension {}",
            rho_choi.dim()
        )));
    }
    let v = choi_vectors();
    let mut chi = CMatrix::zeros(4, 4);
    for m in 0..4 {
        for n in 0..4 {
            let rn = rho_choi.mat().apply(&v[n]);
            chi[(m, n)] = v[m].iter().zip(&rn).map(|(a, b)| a.conj() * b).sum();
        }
    }
    Ok(ChiMatrix { mat: chi })
}

impl ChiMatrix {
    pub fn choi(&self) -> Result<DensityMatrix> {
        let v = choi_vectors();
        let mut m = CMatrix::zeros(4, 4);
        for a in 0..4 {
            for b in 0..4 {
                m = &m + &CMatrix::outer(&v[a], &v[b]).scale(self.mat[(a, b)]);
            }
        }
        DensityMatrix::new(m)
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let ps = pauli::all();
        let mut out = CMatrix::zeros(2, 2);
        for m in 0..4 {
            for n in 0..4 {
                let c = self.mat[(m, n)];
                if c == ZERO {
                    continue;
                }
                out = &out + &(&(&ps[m] * rho) * &ps[n]).scale(c);
            }
        }
        out
    }

    /// Largest diagonal entry (real part).
    pub fn dominant(&self) -> (usize, f64) {
        (0..4)
            .map(|i| (i, self.mat[(i, i)].re))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc })
    }
}

/// Parametric bootstrap: resamples counts from the probabilities predicted by
/// `rho_hat`, reconstructs each resample and returns the sample standard
/// deviation of every measure.
pub fn bootstrap(
    records: &[CountRecord],
    rho_hat: &DensityMatrix,
    resamples: usize,
    seed: u64,
    measures: &[&(dyn Fn(&DensityMatrix) -> f64 + Sync)],
) -> Result<Vec<f64>> {
    if resamples < 2 {
        return Err(Error::InvalidParameter("bootstrap needs at least two resamples".into()));
    }
    let values: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let resampled: Vec<CountRecord> = records
                .iter()
                .map(|r| {
                    let p = expectation(rho_hat.mat(), &r.setting.ket()).clamp(0.0, 1.0);
                    let counts = Binomial::new(r.total, p).expect("p in [0,1]").sample(&mut rng);
                    CountRecord { counts, ..*r }
                })
                .collect();
            let rho = mle_state(&resampled)?;
            Ok(measures.iter().map(|f| f(&rho)).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..measures.len())
        .map(|i| {
            let xs: Vec<f64> = values.iter().map(|v| v[i]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            var.sqrt()
        })
        .collect())
}
