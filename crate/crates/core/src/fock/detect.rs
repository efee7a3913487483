//! Threshold (on/off) detection with unit efficiency.
//!
//! A detector behind linear optics (waveplates, polarizer, partially
//! transmitting elements) sees one or more *pass modes* `c = Σ wᵢ xᵢ`. Its
//! no-click POVM is the normally ordered `:exp(−Σ c†c):`, i.e. `(1−‖w‖²)^{n̂_c}`
//! on the normalised pass mode. Click probabilities of several detectors follow
//! from inclusion–exclusion over no-click events.

use super::{FockDensity, FockState, ModeTensor};
use crate::{Error, Result, C64};

/// `Σ wᵢ xᵢ` over labelled modes, `Σ|wᵢ|² ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PassMode {
    pub terms: Vec<(String, C64)>,
}

impl PassMode {
    pub fn new(terms: &[(&str, C64)]) -> PassMode {
        PassMode {
            terms: terms.iter().map(|(l, w)| (l.to_string(), *w)).collect(),
        }
    }

    /// The full mode `label`.
    pub fn single(label: &str) -> PassMode {
        PassMode::new(&[(label, C64::new(1.0, 0.0))])
    }

    pub fn weight(&self) -> f64 {
        self.terms.iter().map(|(_, w)| w.norm_sqr()).sum()
    }
}

/// One physical detector with a list of alternative settings, each a set of
/// pass modes with disjoint supports (e.g. the two temporal modes behind one
/// polarizer).
#[derive(Clone, Debug)]
pub struct Detector {
    pub name: String,
    pub settings: Vec<Vec<PassMode>>,
}

impl Detector {
    pub fn new(name: &str, settings: Vec<Vec<PassMode>>) -> Detector {
        Detector {
            name: name.to_string(),
            settings,
        }
    }
}

/// `P(all detectors click)` for every combination of detector settings,
/// flattened row-major over `shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoincidenceTable {
    pub shape: Vec<usize>,
    pub probs: Vec<f64>,
}

impl CoincidenceTable {
    pub fn get(&self, choice: &[usize]) -> f64 {
        let idx = choice
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&c, &n)| {
                debug_assert!(c < n);
                acc * n + c
            });
        self.probs[idx]
    }
}

/// Result of [`threshold_click_prob`].
#[derive(Clone, Debug)]
pub struct ClickOutcome {
    pub probability: f64,
    /// Normalised post-click state; `None` when the event has probability 0.
    pub state: Option<FockDensity>,
}

/// Probability that every group of modes carries at least one photon, with POVM
/// element `I − |vac⟩⟨vac|` per group, and the normalised state after the event.
pub fn threshold_click_prob<S: AsRef<str>>(state: &FockDensity, groups: &[Vec<S>]) -> Result<ClickOutcome> {
    let modes = state.modes();
    let mut axes: Vec<Vec<usize>> = Vec::with_capacity(groups.len());
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidParameter("empty detector group".into()));
        }
        let mut ax = Vec::with_capacity(g.len());
        for l in g {
            let a = modes.index_of(l.as_ref())?;
            if axes.iter().flatten().chain(ax.iter()).any(|&b| b == a) {
                return Err(Error::ModeCollision(l.as_ref().to_string()));
            }
            ax.push(a);
        }
        axes.push(ax);
    }
    let d = modes.cutoff() + 1;
    let n = modes.len();
    let strides: Vec<usize> = (0..n).map(|i| d.pow((n - i - 1) as u32)).collect();
    let clicks = |idx: usize| {
        axes.iter()
            .all(|g| g.iter().any(|&a| !(idx / strides[a]).is_multiple_of(d)))
    };
    let total = state.norm();
    let mut branches = Vec::with_capacity(state.branches().len());
    let mut kept = 0.0;
    for b in state.branches() {
        let amps: Vec<C64> = b
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(i, z)| if clicks(i) { *z } else { C64::new(0.0, 0.0) })
            .collect();
        let psi = FockState::from_amplitudes(modes, amps)?;
        let w = psi.norm_sqr();
        if w > 0.0 {
            kept += w;
            branches.push(psi);
        }
    }
    let probability = if total > 0.0 { kept / total } else { 0.0 };
    let state = if kept > 0.0 {
        Some(FockDensity::from_branches(modes, branches)?.normalized()?)
    } else {
        None
    };
    Ok(ClickOutcome { probability, state })
}

/// Unitary whose first row is the normalised `(wx, wy)`.
fn pair_unitary(wx: C64, wy: C64) -> [[C64; 2]; 2] {
    let r = (wx.norm_sqr() + wy.norm_sqr()).sqrt();
    [[wx / r, wy / r], [-wy.conj() / r, wx.conj() / r]]
}

/// Applies `√E` of the no-click element of one pass mode.
fn apply_no_click(t: &ModeTensor, pass: &PassMode) -> Result<ModeTensor> {
    let mut terms: Vec<(usize, C64)> = Vec::with_capacity(pass.terms.len());
    for (label, w) in &pass.terms {
        let a = t.axis(label).ok_or_else(|| Error::UnknownMode(label.clone()))?;
        if w.norm_sqr() > 0.0 {
            terms.push((a, *w));
        }
    }
    let s2 = pass.weight();
    if s2 > 1.0 + 1e-12 {
        return Err(Error::NotPassive(s2.sqrt()));
    }
    if terms.is_empty() {
        return Ok(t.clone());
    }
    let full = s2 >= 1.0 - 1e-14;
    let mut cur = t.clone();
    // Concentrate the pass mode into one axis by successive two-mode rotations.
    let (mut axis, mut weight) = terms[0];
    let mut label = cur.labels[axis].clone();
    for (i, &(next_label_axis, w)) in terms.iter().enumerate().skip(1) {
        let next_label = t.labels[next_label_axis].clone();
        let a = cur.axis(&label).expect("pass mode axis");
        let b = cur.axis(&next_label).expect("pass mode axis");
        let u = pair_unitary(weight, w);
        let combined = C64::new((weight.norm_sqr() + w.norm_sqr()).sqrt(), 0.0);
        if full && i == terms.len() - 1 {
            // last combination of a fully transmitting pass mode: keep only
            // its vacuum component
            return Ok(cur.merge_vacuum(a, b, &u, &next_label));
        }
        cur = cur.rotate_pair(a, b, &u, (&label, &next_label));
        axis = a;
        weight = combined;
        label = cur.labels[axis].clone();
    }
    if full {
        return Ok(cur.slice_axis(axis, 0));
    }
    let keep = (1.0 - s2).max(0.0);
    let factors: Vec<C64> = (0..cur.dims[axis])
        .map(|n| C64::new(keep.powf(n as f64 / 2.0), 0.0))
        .collect();
    cur.scale_axis(axis, &factors);
    Ok(cur)
}

fn apply_setting(t: &ModeTensor, setting: &[PassMode]) -> Result<ModeTensor> {
    let mut cur = t.clone();
    for p in setting {
        cur = apply_no_click(&cur, p)?;
    }
    Ok(cur)
}

fn check_disjoint(detectors: &[Detector]) -> Result<()> {
    let mut owner: Vec<(&str, usize)> = Vec::new();
    for (d_idx, d) in detectors.iter().enumerate() {
        for setting in &d.settings {
            let mut seen: Vec<&str> = Vec::new();
            for p in setting {
                for (l, _) in &p.terms {
                    if seen.contains(&l.as_str()) {
                        return Err(Error::ModeCollision(l.clone()));
                    }
                    seen.push(l);
                }
            }
            for l in seen {
                if let Some(&(_, o)) = owner.iter().find(|(x, _)| *x == l) {
                    if o != d_idx {
                        return Err(Error::ModeCollision(l.to_string()));
                    }
                } else {
                    owner.push((l, d_idx));
                }
            }
        }
    }
    Ok(())
}

/// `‖ψ‖²` after applying no-click elements for each leaf of the subset tree.
/// `leaf[k] = 0` leaves detector `k` out; `leaf[k] = j > 0` applies setting `j−1`.
fn subset_norms(t: &ModeTensor, detectors: &[Detector], level: usize, out: &mut Vec<f64>) -> Result<()> {
    if level == detectors.len() {
        out.push(t.norm_sqr());
        return Ok(());
    }
    subset_norms(t, detectors, level + 1, out)?;
    for setting in &detectors[level].settings {
        let next = apply_setting(t, setting)?;
        subset_norms(&next, detectors, level + 1, out)?;
    }
    Ok(())
}

/// Coincidence probabilities (all detectors click) for every combination of
/// detector settings, normalised by the trace of `state`.
pub fn coincidence_table(state: &FockDensity, detectors: &[Detector]) -> Result<CoincidenceTable> {
    check_disjoint(detectors)?;
    for d in detectors {
        if d.settings.is_empty() {
            return Err(Error::InvalidParameter(format!("detector {} has no settings", d.name)));
        }
    }
    let radix: Vec<usize> = detectors.iter().map(|d| d.settings.len() + 1).collect();
    let leaves: usize = radix.iter().product();
    let mut norms = vec![0.0; leaves];
    for b in state.branches() {
        let mut out = Vec::with_capacity(leaves);
        subset_norms(&b.to_tensor(), detectors, 0, &mut out)?;
        for (acc, x) in norms.iter_mut().zip(&out) {
            *acc += x;
        }
    }
    let total = state.norm();
    let shape: Vec<usize> = detectors.iter().map(|d| d.settings.len()).collect();
    let n_out: usize = shape.iter().product();
    let mut probs = vec![0.0; n_out];
    let k = detectors.len();
    let mut choice = vec![0usize; k];
    for p in probs.iter_mut() {
        // inclusion–exclusion over subsets of detectors left dark
        let mut acc = 0.0;
        for mask in 0..(1usize << k) {
            let mut leaf = 0;
            for i in 0..k {
                let digit = if mask & (1 << i) != 0 { choice[i] + 1 } else { 0 };
                leaf = leaf * radix[i] + digit;
            }
            let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * norms[leaf];
        }
        *p = if total > 0.0 { (acc / total).clamp(0.0, 1.0) } else { 0.0 };
        for i in (0..k).rev() {
            choice[i] += 1;
            if choice[i] < shape[i] {
                break;
            }
            choice[i] = 0;
        }
    }
    Ok(CoincidenceTable { shape, probs })
}

#[cfg(test)]
mod tests {
    use super::super::{coherent_state, single_photon_state, ModeSet};
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn group_click_cases() {
        let modes = ModeSet::new(&["a", "b"], 2).unwrap();
        let vac = FockDensity::vacuum(&modes);
        let out = threshold_click_prob(&vac, &[vec!["a"]]).unwrap();
        assert_eq!(out.probability, 0.0);
        assert!(out.state.is_none());

        let one = single_photon_state(&[("a", c(1.0))], &modes).unwrap();
        assert!((threshold_click_prob(&one, &[vec!["a", "b"]]).unwrap().probability - 1.0).abs() < 1e-15);

        assert!(matches!(
            threshold_click_prob(&one, &[vec!["zz"]]),
            Err(Error::UnknownMode(_))
        ));
    }

    #[test]
    fn poisson_click_probability() {
        let mu: f64 = 0.09;
        let modes = ModeSet::new(&["a"], 4).unwrap();
        let st = coherent_state(&[("a", c(mu.sqrt()))], &modes).unwrap();
        let p = threshold_click_prob(&st, &[vec!["a"]]).unwrap().probability;
        // renormalisation after truncation changes the value only at O(μ⁵)
        assert!((p - (1.0 - (-mu).exp())).abs() < 1e-6, "{p}");
        let post = threshold_click_prob(&st, &[vec!["a"]]).unwrap().state.unwrap();
        assert!(post.photon_distribution("a").unwrap()[0] < 1e-15);
    }

    #[test]
    fn pass_mode_table_matches_group_clicks() {
        let modes = ModeSet::new(&["a", "b", "c"], 2).unwrap();
        let st = coherent_state(&[("a", c(0.4)), ("b", C64::new(0.1, 0.3)), ("c", c(0.5))], &modes).unwrap();
        let detectors = vec![
            Detector::new("ab", vec![vec![PassMode::single("a"), PassMode::single("b")]]),
            Detector::new("c", vec![vec![PassMode::single("c")]]),
        ];
        let table = coincidence_table(&st, &detectors).unwrap();
        let direct = threshold_click_prob(&st, &[vec!["a", "b"], vec!["c"]]).unwrap().probability;
        assert!((table.get(&[0, 0]) - direct).abs() < 1e-14);
    }

    #[test]
    fn polarizer_on_diagonal_photon() {
        // |D⟩ photon: an analyser at D always clicks, at A never, at H half the time
        let modes = ModeSet::new(&["h", "v"], 2).unwrap();
        let st = single_photon_state(&[("h", c(FRAC_1_SQRT_2)), ("v", c(FRAC_1_SQRT_2))], &modes).unwrap();
        let s = c(FRAC_1_SQRT_2);
        let det = Detector::new(
            "pol",
            vec![
                vec![PassMode::new(&[("h", s), ("v", s)])],
                vec![PassMode::new(&[("h", s), ("v", -s)])],
                vec![PassMode::single("h")],
                vec![PassMode::new(&[("h", s * s), ("v", s * s)])],
            ],
        );
        let t = coincidence_table(&st, &[det]).unwrap();
        assert!((t.get(&[0]) - 1.0).abs() < 1e-14);
        assert!(t.get(&[1]).abs() < 1e-14);
        assert!((t.get(&[2]) - 0.5).abs() < 1e-14);
        // partial transmission 1/2 of the D mode
        assert!((t.get(&[3]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn attenuated_pass_mode_is_poisson() {
        // a coherent state seen through transmission η clicks with 1 − e^{−η|α|²}
        let modes = ModeSet::new(&["x", "y", "z"], 6).unwrap();
        let amps = [("x", c(0.3)), ("y", C64::new(0.0, 0.2)), ("z", c(-0.1))];
        let st = coherent_state(&amps, &modes).unwrap();
        let w = [c(0.5), C64::new(0.1, 0.4), c(0.3)];
        let pass = PassMode::new(&[("x", w[0]), ("y", w[1]), ("z", w[2])]);
        let mean: C64 = amps.iter().zip(&w).map(|((_, a), w)| a * w).sum();
        let det = Detector::new("d", vec![vec![pass]]);
        let p = coincidence_table(&st, &[det]).unwrap().get(&[0]);
        assert!((p - (1.0 - (-mean.norm_sqr()).exp())).abs() < 1e-8, "{p}");
    }

    #[test]
    fn overlapping_detectors_rejected() {
        let modes = ModeSet::new(&["a"], 2).unwrap();
        let st = FockDensity::vacuum(&modes);
        let d1 = Detector::new("1", vec![vec![PassMode::single("a")]]);
        let d2 = Detector::new("2", vec![vec![PassMode::single("a")]]);
        assert!(matches!(coincidence_table(&st, &[d1, d2]), Err(Error::ModeCollision(_))));
    }
}
