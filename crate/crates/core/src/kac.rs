//! The global law ℙ* obtained by weighting the pre-T occupation of every
//! regenerated law 𝐏*_s by π_s.
//!
//! ℙ*(X_0..X_m = w) = Σ_s π_s Σ_{n≥0} 𝐏*_s(T > n, X_{n+l} = w_l for all l).
//!
//! The inner sums do not depend on the word, so they are accumulated once
//! into an occupation measure on lifted states. A cylinder is then a single
//! forward pass through the word starting from that measure.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::first_passage::{
    first_passage_summary, invariance_residual, normalization_residual, q_from_summary,
    ClassChainMatrix, WeightVector,
};
use crate::lifted::{Forward, LiftedChain, LiftedMeasure, MarkConstraint};
use crate::model::{ModelSpec, Symbol};
use crate::regeneration::{build_lifted, check_distribution, check_word, DEFAULT_WORD_BUDGET};
use crate::rng;

/// Target for the certified tail of the occupation series.
pub const SERIES_TOLERANCE: f64 = 1e-12;
/// Invariance residual above which the weights are not treated as stationary.
pub const STATIONARY_TOL: f64 = 1e-9;
/// Attempts allowed when conditioning a region on T > n.
pub const REJECTION_CAP: usize = 1_000_000;
const MAX_SERIES_TERMS: usize = 10_000_000;

#[derive(Debug, Clone)]
pub struct KacMeasure {
    chain: LiftedChain,
    q: ClassChainMatrix,
    expected: Vec<f64>,
    weights: WeightVector,
    occupation: LiftedMeasure,
    shifted: LiftedMeasure,
    series_terms: usize,
    tail_bound: f64,
}

impl KacMeasure {
    /// ℙ* with the solved weights π.
    pub fn new(model: &ModelSpec) -> Result<Self> {
        let summary = first_passage_summary(model)?;
        let q = q_from_summary(model, &summary);
        let expected = summary.expected_times();
        let weights = crate::first_passage::weights_from(model, &q, &expected)?;
        Ok(Self::from_parts(build_lifted(model), q, expected, weights))
    }

    /// ℙ* built from arbitrary strictly positive weights.
    pub fn with_weights(model: &ModelSpec, pi: &[f64]) -> Result<Self> {
        let summary = first_passage_summary(model)?;
        let q = q_from_summary(model, &summary);
        let expected = summary.expected_times();
        let weights = custom_weights(&q, &expected, pi)?;
        Ok(Self::from_parts(build_lifted(model), q, expected, weights))
    }

    pub(crate) fn from_parts(
        chain: LiftedChain,
        q: ClassChainMatrix,
        expected: Vec<f64>,
        weights: WeightVector,
    ) -> Self {
        let (occupation, series_terms, tail_bound) = occupation_measure(&chain, &weights.pi, &expected);
        let shifted = chain.advance(&occupation);
        Self {
            chain,
            q,
            expected,
            weights,
            occupation,
            shifted,
            series_terms,
            tail_bound,
        }
    }

    pub fn model(&self) -> &ModelSpec {
        self.chain.model()
    }

    pub fn chain(&self) -> &LiftedChain {
        &self.chain
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn q(&self) -> &ClassChainMatrix {
        &self.q
    }

    pub fn expected_times(&self) -> &[f64] {
        &self.expected
    }

    pub fn occupation(&self) -> &LiftedMeasure {
        &self.occupation
    }

    pub fn series_tolerance(&self) -> f64 {
        SERIES_TOLERANCE
    }

    /// Number of terms n = 0..series_terms summed.
    pub fn series_terms(&self) -> usize {
        self.series_terms
    }

    /// Certified bound on the neglected mass Σ_s π_s Σ_{n>N} 𝐏_s(T > n).
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn is_stationary(&self) -> bool {
        self.weights.invariance_residual <= STATIONARY_TOL
    }

    fn require_stationary(&self) -> Result<()> {
        if self.is_stationary() {
            Ok(())
        } else {
            Err(Error::NotStationary(self.weights.invariance_residual))
        }
    }
}

pub(crate) fn custom_weights(q: &ClassChainMatrix, expected: &[f64], pi: &[f64]) -> Result<WeightVector> {
    if pi.len() != q.len() {
        return Err(Error::InvalidDistribution(format!(
            "expected {} weights, got {}",
            q.len(),
            pi.len()
        )));
    }
    if let Some(p) = pi.iter().find(|p| !p.is_finite() || **p <= 0.0) {
        return Err(Error::NonPositiveWeights(format!("weight {p}")));
    }
    Ok(WeightVector {
        pi: pi.to_vec(),
        normalization_residual: normalization_residual(pi, expected),
        invariance_residual: invariance_residual(q, pi),
        unique: true,
    })
}

/// Σ_{n≥0} of the region-restricted lifted measure started from π, summed
/// until Σ_s π_s E_s(T) minus the accumulated mass drops below the
/// tolerance. Returns the measure, the number of terms and the tail bound.
fn occupation_measure(chain: &LiftedChain, pi: &[f64], expected: &[f64]) -> (LiftedMeasure, usize, f64) {
    let target: f64 = pi.iter().zip(expected).map(|(p, e)| p * e).sum();
    let mut cur = chain.initial_measure(pi);
    let mut occ = cur.clone();
    let mut acc: f64 = pi.iter().sum();
    let mut n = 0;
    while target - acc >= SERIES_TOLERANCE && n < MAX_SERIES_TERMS {
        cur = chain.advance_within_region(&cur);
        n += 1;
        let mass = cur.total();
        if mass == 0.0 {
            break;
        }
        for (o, c) in occ.settled.iter_mut().zip(&cur.settled) {
            *o += c;
        }
        acc += mass;
    }
    (occ, n, (target - acc).max(0.0))
}

fn check_marks(word: &[Symbol], marks: Option<&[MarkConstraint]>) -> Result<()> {
    if let Some(c) = marks {
        if c.len() != word.len() {
            return Err(Error::InvalidArgument(format!(
                "{} mark constraints for a word of length {}",
                c.len(),
                word.len()
            )));
        }
        if let Some(bad) = c.iter().find(|c| !c.is_valid()) {
            return Err(Error::InvalidArgument(format!("invalid mark constraint {bad:?}")));
        }
    }
    Ok(())
}

/// Exact ℙ*(X_0..X_m = word).
pub fn kac_cylinder(km: &KacMeasure, word: &[Symbol]) -> Result<f64> {
    marked_cylinder(km, word, None)
}

/// ℙ* of a word with per-position mark constraints.
pub fn marked_cylinder(km: &KacMeasure, word: &[Symbol], marks: Option<&[MarkConstraint]>) -> Result<f64> {
    check_word(km.model(), word)?;
    check_marks(word, marks)?;
    Ok(km.chain.cylinder(&km.occupation, word, marks))
}

/// Σ_i ℙ*(X_0 = i).
pub fn total_mass(km: &KacMeasure) -> f64 {
    (0..km.model().n_symbols())
        .map(|i| km.chain.cylinder(&km.occupation, &[i], None))
        .sum()
}

/// max over words w of length < `max_len` of |Σ_j ℙ*(w j) − ℙ*(w)|.
pub fn prefix_defect(km: &KacMeasure, max_len: usize) -> f64 {
    fn go(km: &KacMeasure, f: &Forward, depth: usize, max_len: usize) -> f64 {
        let n = km.model().n_symbols();
        let next: Vec<Forward> = (0..n)
            .map(|j| km.chain.step_forward(f, j, MarkConstraint::Any))
            .collect();
        let sum: f64 = next.iter().map(Forward::mass).sum();
        let mut worst = (sum - f.mass()).abs();
        if depth + 1 < max_len {
            for g in next.iter().filter(|g| g.mass() > 0.0) {
                worst = worst.max(go(km, g, depth + 1, max_len));
            }
        }
        worst
    }
    (0..km.model().n_symbols())
        .map(|i| km.chain.condition_first(&km.occupation, i, MarkConstraint::Any))
        .filter(|f| f.mass() > 0.0)
        .map(|f| go(km, &f, 1, max_len))
        .fold(0.0, f64::max)
}

/// π rescaled entrywise by 1.2, 0.8, 1.2, ... and renormalised so that
/// Σ π_s E_s(T) = 1. Not Q-invariant unless Q is trivial.
pub fn perturbed_weights(pi: &[f64], expected: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = pi
        .iter()
        .enumerate()
        .map(|(k, p)| p * if k % 2 == 0 { 1.2 } else { 0.8 })
        .collect();
    let c: f64 = raw.iter().zip(expected).map(|(p, e)| p * e).sum();
    raw.iter().map(|p| p / c).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub defect: f64,
    pub argmax_word: Vec<Symbol>,
    /// Mark constraints of the argmax word (marked sweeps only).
    pub argmax_marks: Option<Vec<MarkConstraint>>,
    pub offset0: f64,
    pub offset1: f64,
    pub words_checked: usize,
    pub partial: bool,
}

/// max over words of length ≤ `max_len` of |ℙ*(X_1.. = w) − ℙ*(X_0.. = w)|.
pub fn stationarity_defect(km: &KacMeasure, max_len: usize) -> Result<StationarityReport> {
    defect_sweep(km, max_len, DEFAULT_WORD_BUDGET, false)
}

pub fn stationarity_defect_with_budget(km: &KacMeasure, max_len: usize, budget: usize) -> Result<StationarityReport> {
    defect_sweep(km, max_len, budget, false)
}

struct Sweep<'a> {
    km: &'a KacMeasure,
    max_len: usize,
    budget: usize,
    marked: bool,
    word: Vec<Symbol>,
    marks: Vec<MarkConstraint>,
    report: StationarityReport,
}

pub(crate) fn defect_sweep(km: &KacMeasure, max_len: usize, budget: usize, marked: bool) -> Result<StationarityReport> {
    if max_len == 0 {
        return Err(Error::EmptyWordSet);
    }
    let mut sweep = Sweep {
        km,
        max_len,
        budget,
        marked,
        word: Vec::with_capacity(max_len),
        marks: Vec::with_capacity(max_len),
        report: StationarityReport {
            defect: 0.0,
            argmax_word: Vec::new(),
            argmax_marks: None,
            offset0: 0.0,
            offset1: 0.0,
            words_checked: 0,
            partial: false,
        },
    };
    sweep.root();
    Ok(sweep.report)
}

impl Sweep<'_> {
    fn constraints(&self, j: Symbol) -> &'static [MarkConstraint] {
        use MarkConstraint::*;
        if self.marked && self.km.chain.region_size(j) > 0.0 {
            &[Any, Accept, Reject]
        } else {
            &[Any]
        }
    }

    fn root(&mut self) {
        let chain = &self.km.chain;
        for j in 0..self.km.model().n_symbols() {
            for &c in self.constraints(j) {
                let f0 = chain.condition_first(&self.km.occupation, j, c);
                let f1 = chain.condition_first(&self.km.shifted, j, c);
                self.enter(j, c, f0, f1);
            }
        }
    }

    fn enter(&mut self, j: Symbol, c: MarkConstraint, f0: Forward, f1: Forward) {
        if self.report.words_checked >= self.budget {
            self.report.partial = true;
            return;
        }
        let (p0, p1) = (f0.mass(), f1.mass());
        if p0 == 0.0 && p1 == 0.0 {
            return;
        }
        self.word.push(j);
        self.marks.push(c);
        self.report.words_checked += 1;
        let d = (p1 - p0).abs();
        if d > self.report.defect || self.report.argmax_word.is_empty() {
            self.report.defect = d;
            self.report.argmax_word = self.word.clone();
            self.report.argmax_marks = self.marked.then(|| self.marks.clone());
            self.report.offset0 = p0;
            self.report.offset1 = p1;
        }
        if self.word.len() < self.max_len {
            let chain = &self.km.chain;
            for next in 0..self.km.model().n_symbols() {
                for &c in self.constraints(next) {
                    let g0 = chain.step_forward(&f0, next, c);
                    let g1 = chain.step_forward(&f1, next, c);
                    self.enter(next, c, g0, g1);
                }
            }
        }
        self.word.pop();
        self.marks.pop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AgeSample {
    pub governing: Symbol,
    /// Time since the last regeneration at or before 0.
    pub age: usize,
}

/// Exact probability π_g 𝐏_g(T > n) / Σ π_g E_g(T) of the age pair (g, n).
pub fn age_probability(km: &KacMeasure, governing: Symbol, age: usize) -> Result<f64> {
    let k = km.model().start_position(governing)?;
    let mut cur = km.chain.initial_measure(&km.weights.pi);
    for _ in 0..age {
        cur = km.chain.advance_within_region(&cur);
    }
    Ok(governing_masses(&km.chain, &cur)[k] / km.weights.pi.iter().zip(&km.expected).map(|(p, e)| p * e).sum::<f64>())
}

fn governing_masses(chain: &LiftedChain, m: &LiftedMeasure) -> Vec<f64> {
    let ns = chain.n_starts();
    let mut out = m.fresh.clone();
    for (idx, &w) in m.settled.iter().enumerate() {
        out[idx % ns] += w;
    }
    out
}

pub fn sample_age(km: &KacMeasure, seed: u64) -> Result<AgeSample> {
    let mut r = rng::stream(seed, rng::SYMBOL_STREAM);
    sample_age_with(km, &mut r)
}

/// Inverse transform over (n, g) in the order n = 0, 1, ... and start-set
/// order within each n.
pub fn sample_age_with<R: Rng + ?Sized>(km: &KacMeasure, rng: &mut R) -> Result<AgeSample> {
    km.require_stationary()?;
    let total: f64 = km.weights.pi.iter().zip(&km.expected).map(|(p, e)| p * e).sum();
    let target = rng.gen::<f64>() * total;
    let starts = km.model().start_set();
    let mut cur = km.chain.initial_measure(&km.weights.pi);
    let mut acc = 0.0;
    let mut last = None;
    for n in 0.. {
        let masses = governing_masses(&km.chain, &cur);
        for (k, &m) in masses.iter().enumerate() {
            if m > 0.0 {
                acc += m;
                last = Some(AgeSample {
                    governing: starts[k],
                    age: n,
                });
                if target < acc {
                    return Ok(last.unwrap());
                }
            }
        }
        if masses.iter().all(|&m| m == 0.0) || n >= MAX_SERIES_TERMS {
            break;
        }
        cur = km.chain.advance_within_region(&cur);
    }
    // target fell into the round-off gap at the very end of the series
    last.ok_or_else(|| Error::InvalidArgument("age law has no mass".into()))
}

/// Samples `length` consecutive symbols of the stationary law ℙ*.
pub fn sample_stationary(km: &KacMeasure, length: usize, seed: u64) -> Result<Vec<Symbol>> {
    let mut symbols = rng::stream(seed, rng::SYMBOL_STREAM);
    let mut marks = rng::stream(seed, rng::MARK_STREAM);
    sample_stationary_with(km, length, &mut symbols, &mut marks)
}

/// Draws the age (g, n), conditions a region of 𝐏_g on T > n by rejection,
/// and continues the lifted chain from position n. The mark stream is only
/// consumed when some acceptance probability is below 1.
pub fn sample_stationary_with<R: Rng + ?Sized, M: Rng + ?Sized>(
    km: &KacMeasure,
    length: usize,
    rng: &mut R,
    marks: &mut M,
) -> Result<Vec<Symbol>> {
    if length == 0 {
        return Err(Error::InvalidArgument("length must be >= 1".into()));
    }
    let age = sample_age_with(km, rng)?;
    let chain = &km.chain;
    let model = chain.model();
    let k = model.partition().position(age.governing).expect("start symbol");
    let marked = chain.acceptance().iter().any(|&e| e < 1.0);
    let mut marks = if marked { Some(marks) } else { None };
    let mut state = None;
    for _ in 0..REJECTION_CAP {
        let mut i = age.governing;
        let mut ok = true;
        for _ in 0..age.age {
            let step = chain.sample_step(i, k, rng, marks.as_deref_mut());
            if step.regen {
                ok = false;
                break;
            }
            i = step.symbol;
        }
        if ok {
            state = Some(i);
            break;
        }
    }
    let Some(mut i) = state else {
        return Err(Error::RejectionCap {
            start: model.name(age.governing).to_string(),
            age: age.age,
            attempts: REJECTION_CAP,
        });
    };
    let mut g = k;
    let mut out = Vec::with_capacity(length);
    out.push(i);
    for _ in 1..length {
        let step = chain.sample_step(i, g, rng, marks.as_deref_mut());
        i = step.symbol;
        g = step.governing;
        out.push(i);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalSeries {
    /// ℙ*(word), the limit.
    pub limit: f64,
    /// 𝐏*_γ(word at offset N) for N = 0..=N_max.
    pub offset_probs: Vec<f64>,
    /// d_N = |offset_probs[N] − limit|.
    pub d: Vec<f64>,
}

impl RenewalSeries {
    /// Smallest N with d_N < `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.d.iter().position(|&d| d < threshold)
    }

    /// Offset probabilities at the largest even and largest odd N.
    pub fn parity_tails(&self) -> Option<(f64, f64)> {
        let n = self.offset_probs.len();
        if n < 2 {
            return None;
        }
        let (even, odd) = if (n - 1).is_multiple_of(2) { (n - 1, n - 2) } else { (n - 2, n - 1) };
        Some((self.offset_probs[even], self.offset_probs[odd]))
    }

    /// Two-column CSV `N,d_N`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,d_N\n");
        for (n, d) in self.d.iter().enumerate() {
            out.push_str(&format!("{n},{d:e}\n"));
        }
        out
    }
}

/// d_N for N = 0..=n_max under 𝐏*_γ, by exact propagation of the lifted chain.
pub fn renewal_convergence(km: &KacMeasure, gamma: &[f64], word: &[Symbol], n_max: usize) -> Result<RenewalSeries> {
    renewal_marked(km, gamma, word, None, n_max)
}

pub(crate) fn renewal_marked(
    km: &KacMeasure,
    gamma: &[f64],
    word: &[Symbol],
    marks: Option<&[MarkConstraint]>,
    n_max: usize,
) -> Result<RenewalSeries> {
    check_distribution(gamma, km.model().n_starts())?;
    let limit = marked_cylinder(km, word, marks)?;
    let mut m = km.chain.initial_measure(gamma);
    let mut offset_probs = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        offset_probs.push(km.chain.cylinder(&m, word, marks));
        if n < n_max {
            m = km.chain.advance(&m);
        }
    }
    let d = offset_probs.iter().map(|p| (p - limit).abs()).collect();
    Ok(RenewalSeries { limit, offset_probs, d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::first_passage::{invariant_vector, solve_weights};
    use crate::model::fixtures::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn w(model: &ModelSpec, names: &[&str]) -> Vec<Symbol> {
        model.alphabet().parse_word(names).unwrap()
    }

    /// Occupation measure by a direct solve: settled mass ν = v₁(I − K)⁻¹
    /// where K is the region-restricted kernel on settled states and v₁ the
    /// first step out of the fresh states.
    fn occupation_oracle(chain: &LiftedChain, pi: &[f64]) -> Vec<f64> {
        let n = chain.n_states();
        let mut k = DMatrix::zeros(n, n);
        for idx in 0..n {
            let mut unit = LiftedMeasure {
                fresh: vec![0.0; chain.n_starts()],
                settled: vec![0.0; n],
            };
            unit.settled[idx] = 1.0;
            let next = chain.advance_within_region(&unit);
            for (j, &p) in next.settled.iter().enumerate() {
                k[(idx, j)] = p;
            }
        }
        let v1 = chain.advance_within_region(&chain.initial_measure(pi)).settled;
        let lhs = (DMatrix::identity(n, n) - k).transpose();
        let x = lhs.lu().solve(&DVector::from_vec(v1)).unwrap();
        x.iter().copied().collect()
    }

    #[test]
    fn occupation_matches_fundamental_matrix() {
        for m in [toy2(), toy3()] {
            let km = KacMeasure::new(&m).unwrap();
            let oracle = occupation_oracle(km.chain(), &km.weights().pi);
            for (a, b) in km.occupation().settled.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-11, "{a} vs {b}");
            }
            assert!(km.tail_bound() < SERIES_TOLERANCE);
        }
    }

    #[test]
    fn toy2_marginals() {
        let m = toy2();
        let km = KacMeasure::new(&m).unwrap();
        for (name, p) in [("s", 1.0 / 6.0), ("t", 1.0 / 6.0), ("a", 1.0 / 3.0), ("b", 1.0 / 3.0)] {
            let got = kac_cylinder(&km, &w(&m, &[name])).unwrap();
            assert!((got - p).abs() < 1e-11, "{name}: {got}");
        }
        assert!((total_mass(&km) - 1.0).abs() < 1e-10);
        assert_eq!(kac_cylinder(&km, &w(&m, &["s", "b"])).unwrap(), 0.0);
        assert_eq!(kac_cylinder(&km, &[]), Err(Error::EmptyWord));
    }

    #[test]
    fn visit_count_oracle() {
        // ℙ*(X_0 = i) = Σ_s π_s · E_s[visits to i before T]
        for m in [toy2(), toy3()] {
            let km = KacMeasure::new(&m).unwrap();
            let summary = first_passage_summary(&m).unwrap();
            for i in 0..m.n_symbols() {
                let oracle: f64 = summary
                    .entries
                    .iter()
                    .zip(&km.weights().pi)
                    .map(|(e, p)| p * e.expected_visits[i])
                    .sum();
                assert!((kac_cylinder(&km, &[i]).unwrap() - oracle).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn normalization_scales_with_pi() {
        let m = toy2();
        let pi = solve_weights(&m).unwrap().pi;
        let doubled: Vec<f64> = pi.iter().map(|p| 2.0 * p).collect();
        let km = KacMeasure::with_weights(&m, &doubled).unwrap();
        assert!((total_mass(&km) - 2.0).abs() < 2e-10);
        let km3 = KacMeasure::new(&toy3()).unwrap();
        assert!((total_mass(&km3) - 1.0).abs() < 1e-10);
        assert!(KacMeasure::with_weights(&m, &[0.1, 0.0]).is_err());
    }

    #[test]
    fn stationarity_iff_invariance() {
        for m in [toy2(), toy3()] {
            let km = KacMeasure::new(&m).unwrap();
            let r = stationarity_defect(&km, 4).unwrap();
            assert!(!r.partial);
            assert!(r.defect <= 1e-9, "{r:?}");
        }
        let m = toy2();
        let km = KacMeasure::with_weights(&m, &[0.2, 2.0 / 15.0]).unwrap();
        assert!(km.weights().normalization_residual < 1e-12);
        let r = stationarity_defect(&km, 3).unwrap();
        assert!(r.defect > 1e-4);
        // the defect on [s] is |π'_t − π'_s| = 1/15
        let s = w(&m, &["s"]);
        let p0 = kac_cylinder(&km, &s).unwrap();
        let p1: f64 = (0..4).map(|j| kac_cylinder(&km, &[j, s[0]]).unwrap()).sum();
        assert!(((p1 - p0).abs() - 1.0 / 15.0).abs() < 1e-12);
        assert!(r.defect >= 1.0 / 15.0 - 1e-12);
        assert_eq!(stationarity_defect(&km, 0), Err(Error::EmptyWordSet));
        assert!(stationarity_defect_with_budget(&km, 4, 5).unwrap().partial);
    }

    #[test]
    fn age_law() {
        let m = toy2();
        let km = KacMeasure::new(&m).unwrap();
        let s = m.symbol("s").unwrap();
        for (n, p) in [(0, 1.0 / 6.0), (1, 1.0 / 6.0), (2, 1.0 / 12.0)] {
            assert!((age_probability(&km, s, n).unwrap() - p).abs() < 1e-14);
        }
        let n = 40_000;
        let mut r = rng::stream(11, 0);
        let mut hits_s = 0;
        let mut zero_s = 0;
        for _ in 0..n {
            let a = sample_age_with(&km, &mut r).unwrap();
            if a.governing == s {
                hits_s += 1;
                if a.age == 0 {
                    zero_s += 1;
                }
            }
        }
        let check = |c: usize, p: f64| {
            let f = c as f64 / n as f64;
            assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        };
        check(hits_s, 0.5);
        check(zero_s, 1.0 / 6.0);
        let one = KacMeasure::new(&one_step()).unwrap();
        for seed in 0..20 {
            assert_eq!(sample_age(&one, seed).unwrap().age, 0);
        }
        let bad = KacMeasure::with_weights(&m, &[0.2, 2.0 / 15.0]).unwrap();
        assert!(matches!(sample_age(&bad, 1), Err(Error::NotStationary(_))));
    }

    #[test]
    fn stationary_sample_marginals_and_shift() {
        let m = toy2();
        let km = KacMeasure::new(&m).unwrap();
        let n_rep = 20_000;
        let mut counts0 = [0usize; 4];
        let mut pairs0 = std::collections::HashMap::<(usize, usize), usize>::new();
        let mut pairs1 = std::collections::HashMap::<(usize, usize), usize>::new();
        for rep in 0..n_rep {
            let x = sample_stationary(&km, 3, rep).unwrap();
            counts0[x[0]] += 1;
            *pairs0.entry((x[0], x[1])).or_default() += 1;
            *pairs1.entry((x[1], x[2])).or_default() += 1;
        }
        let nf = n_rep as f64;
        for (i, &c) in counts0.iter().enumerate() {
            let p = kac_cylinder(&km, &[i]).unwrap();
            let f = c as f64 / nf;
            assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / nf).sqrt(), "{i}");
        }
        for a in 0..4 {
            for b in 0..4 {
                let p = kac_cylinder(&km, &[a, b]).unwrap();
                let se = (2.0 * p * (1.0 - p) / nf).sqrt();
                let f0 = *pairs0.get(&(a, b)).unwrap_or(&0) as f64 / nf;
                let f1 = *pairs1.get(&(a, b)).unwrap_or(&0) as f64 / nf;
                assert!((f0 - f1).abs() <= 4.0 * se + 1e-12);
            }
        }
        assert_eq!(sample_stationary(&km, 50, 4).unwrap(), sample_stationary(&km, 50, 4).unwrap());
    }

    #[test]
    fn renewal_limits() {
        let m = toy2();
        let km = KacMeasure::new(&m).unwrap();
        let pi_hat = invariant_vector(km.q()).pi_hat;
        let r = renewal_convergence(&km, &pi_hat, &w(&m, &["a"]), 200).unwrap();
        assert!(r.first_below(1e-6).is_some());
        let m3 = toy3();
        let km3 = KacMeasure::new(&m3).unwrap();
        let r = renewal_convergence(&km3, &[1.0, 0.0, 0.0], &w(&m3, &["a"]), 500).unwrap();
        assert!(r.first_below(1e-6).is_some());
        // the lifted chain of TOY2 is aperiodic, so even a point start converges
        let r = renewal_convergence(&km, &[1.0, 0.0], &w(&m, &["s"]), 400).unwrap();
        let (even, odd) = r.parity_tails().unwrap();
        assert!((even - odd).abs() < 1e-9);
        assert!(r.d[400] < 1e-9);
        assert!(r.to_csv().starts_with("N,d_N\n0,"));
    }

    #[test]
    fn periodic_fixture_does_not_converge() {
        let m = period2();
        let km = KacMeasure::new(&m).unwrap();
        let r = renewal_convergence(&km, &[1.0, 0.0], &w(&m, &["s"]), 101).unwrap();
        let (even, odd) = r.parity_tails().unwrap();
        // s → a → t → b → s: X_N = s exactly when 4 | N
        assert!((even - 1.0).abs() < 1e-12 && odd.abs() < 1e-12);
        assert!((r.limit - 0.25).abs() < 1e-12);
    }

    #[test]
    fn perturbation_fixture() {
        let m = toy2();
        let km = KacMeasure::new(&m).unwrap();
        let p = perturbed_weights(&km.weights().pi, km.expected_times());
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 2.0 / 15.0).abs() < 1e-15);
        assert!(prefix_defect(&km, 4) < 1e-12);
    }

    proptest! {
        #[test]
        fn kac_prefix_consistency(word in prop::collection::vec(0usize..4, 1..5)) {
            let m = toy3();
            let km = KacMeasure::new(&m).unwrap();
            let p = kac_cylinder(&km, &word).unwrap();
            let mut sum = 0.0;
            for j in 0..4 {
                let mut ext = word.clone();
                ext.push(j);
                sum += kac_cylinder(&km, &ext).unwrap();
            }
            prop_assert!((sum - p).abs() <= 1e-10);
        }
    }
}
