//! First-passage analysis of the regions: E_s(T), the class chain Q, its
//! invariant vector, the normalised weights π and aperiodicity tests.
//!
//! All exact quantities come from the absorbing chain obtained by stopping a
//! region law at its first foreign-class hit. In the acceptance-split variant a
//! foreign hit on `j` only absorbs with probability `accept[j]`; the base model
//! is the special case `accept ≡ 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{sample_region, ModelSpec, Symbol, DEFAULT_REGION_CAP};
use crate::rng;

/// Spectral radius at or above `1 - NON_ABSORBING_MARGIN` means the region
/// may never end.
pub const NON_ABSORBING_MARGIN: f64 = 1e-12;
/// Support threshold separating true zeros of P(T = k) from round-off.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;
/// Tail mass left beyond the horizon used by the aperiodicity test.
pub const GCD_TAIL: f64 = 1e-9;
const MAX_GCD_HORIZON: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstPassageEntry {
    pub start: Symbol,
    pub expected_t: f64,
    /// q_{s·}, indexed by start-set position.
    pub absorption_row: Vec<f64>,
    pub transient_spectral_radius: f64,
    /// Expected number of visits to each symbol at times 0..T-1.
    pub expected_visits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstPassageSummary {
    pub entries: Vec<FirstPassageEntry>,
}

impl FirstPassageSummary {
    pub fn expected_times(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.expected_t).collect()
    }
}

/// Transition matrix of the embedded start-symbol chain, indexed by
/// start-set position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassChainMatrix {
    pub starts: Vec<Symbol>,
    pub rows: Vec<Vec<f64>>,
}

impl ClassChainMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.rows[from][to]
    }

    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantVector {
    pub pi_hat: Vec<f64>,
    pub unique: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub pi: Vec<f64>,
    pub normalization_residual: f64,
    pub invariance_residual: f64,
    pub unique: bool,
}

impl WeightVector {
    pub fn total(&self) -> f64 {
        self.pi.iter().sum()
    }

    /// π / Σπ.
    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total();
        self.pi.iter().map(|p| p / t).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TDistribution {
    /// P(T = k) for k = 1..=horizon.
    pub probs: Vec<f64>,
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AperiodicityT {
    pub gcd: usize,
    pub aperiodic: bool,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstPassageEstimate {
    pub samples: usize,
    pub expected_t: f64,
    pub expected_t_se: f64,
    pub absorption_row: Vec<f64>,
    pub absorption_se: Vec<f64>,
}

/// Absorbing-chain view of one region: transient block and absorption split.
pub(crate) struct RegionChain<'a> {
    model: &'a ModelSpec,
    start: Symbol,
    accept: &'a [f64],
}

impl<'a> RegionChain<'a> {
    pub(crate) fn new(model: &'a ModelSpec, start: Symbol, accept: &'a [f64]) -> Result<Self> {
        model.start_position(start)?;
        Ok(Self {
            model,
            start,
            accept,
        })
    }

    fn absorb_prob(&self, j: Symbol) -> f64 {
        if self.model.partition().is_foreign(self.start, j) {
            self.accept[j]
        } else {
            0.0
        }
    }

    /// Sub-stochastic transient kernel K'(i, j) = K(i, j)(1 − absorb(j)).
    pub(crate) fn transient_rows(&self) -> Vec<Vec<f64>> {
        let kernel = &self.model.law(self.start).expect("start validated").kernel;
        let n = self.model.n_symbols();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| kernel.get(i, j) * (1.0 - self.absorb_prob(j)))
                    .collect()
            })
            .collect()
    }

    /// Absorption mass from symbol `i` into each symbol.
    pub(crate) fn absorption_rows(&self) -> Vec<Vec<f64>> {
        let kernel = &self.model.law(self.start).expect("start validated").kernel;
        let n = self.model.n_symbols();
        (0..n)
            .map(|i| (0..n).map(|j| kernel.get(i, j) * self.absorb_prob(j)).collect())
            .collect()
    }

    pub(crate) fn solve(&self) -> Result<FirstPassageEntry> {
        let model = self.model;
        let n = model.n_symbols();
        let transient = self.transient_rows();
        let absorbing = self.absorption_rows();
        let adj = linalg::support_graph(&transient, 0.0);
        let reach = linalg::reachable_from(&adj, self.start);
        let states: Vec<Symbol> = (0..n).filter(|&i| reach[i]).collect();
        let m = states.len();
        let block = DMatrix::from_fn(m, m, |a, b| transient[states[a]][states[b]]);
        let rho = linalg::spectral_radius(&block);
        if rho >= 1.0 - NON_ABSORBING_MARGIN {
            return Err(Error::NonAbsorbing {
                start: model.name(self.start).to_string(),
                spectral_radius: rho,
            });
        }
        // Row of the fundamental matrix (I − K')⁻¹ at `start`:
        // solve (I − K')ᵀ x = e_start.
        let lhs = DMatrix::identity(m, m) - block.transpose();
        let mut rhs = DVector::zeros(m);
        let pos = states.iter().position(|&i| i == self.start).expect("start reachable");
        rhs[pos] = 1.0;
        let visits_local = linalg::solve(lhs, rhs)?;
        let mut expected_visits = vec![0.0; n];
        for (a, &i) in states.iter().enumerate() {
            expected_visits[i] = visits_local[a].max(0.0);
        }
        let expected_t: f64 = expected_visits.iter().sum();
        let mut landing = vec![0.0; n];
        for &i in &states {
            for (j, l) in landing.iter_mut().enumerate() {
                *l += expected_visits[i] * absorbing[i][j];
            }
        }
        let absorption_row = model.start_set().iter().map(|&s| landing[s]).collect();
        Ok(FirstPassageEntry {
            start: self.start,
            expected_t,
            absorption_row,
            transient_spectral_radius: rho,
            expected_visits,
        })
    }

    /// P(T = k), k = 1..=horizon, by forward propagation on the transient block.
    pub(crate) fn t_distribution(&self, horizon: usize) -> TDistribution {
        let n = self.model.n_symbols();
        let transient = self.transient_rows();
        let exit: Vec<f64> = self
            .absorption_rows()
            .iter()
            .map(|r| r.iter().sum())
            .collect();
        let mut v = vec![0.0; n];
        v[self.start] = 1.0;
        let mut probs = Vec::with_capacity(horizon);
        let mut next = vec![0.0; n];
        for _ in 0..horizon {
            probs.push(v.iter().zip(&exit).map(|(a, b)| a * b).sum());
            next.iter_mut().for_each(|x| *x = 0.0);
            for (i, &vi) in v.iter().enumerate() {
                if vi == 0.0 {
                    continue;
                }
                for (j, &p) in transient[i].iter().enumerate() {
                    next[j] += vi * p;
                }
            }
            std::mem::swap(&mut v, &mut next);
        }
        let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        TDistribution { probs, tail }
    }
}

pub(crate) fn unit_acceptance(model: &ModelSpec) -> Vec<f64> {
    vec![1.0; model.n_symbols()]
}

pub fn transient_analysis(model: &ModelSpec, s: Symbol) -> Result<FirstPassageEntry> {
    let accept = unit_acceptance(model);
    RegionChain::new(model, s, &accept)?.solve()
}

pub fn first_passage_summary(model: &ModelSpec) -> Result<FirstPassageSummary> {
    let accept = unit_acceptance(model);
    summary_with(model, &accept)
}

pub(crate) fn summary_with(model: &ModelSpec, accept: &[f64]) -> Result<FirstPassageSummary> {
    let entries = model
        .start_set()
        .iter()
        .map(|&s| RegionChain::new(model, s, accept)?.solve())
        .collect::<Result<Vec<_>>>()?;
    Ok(FirstPassageSummary { entries })
}

/// Monte-Carlo cross-check of [`transient_analysis`] from `n` region draws.
pub fn estimate_first_passage(
    model: &ModelSpec,
    s: Symbol,
    n: usize,
    seed: u64,
) -> Result<FirstPassageEstimate> {
    let mut rng = rng::stream(seed, rng::SYMBOL_STREAM);
    estimate_first_passage_with(model, s, n, &mut rng, DEFAULT_REGION_CAP)
}

pub fn estimate_first_passage_with<R: Rng + ?Sized>(
    model: &ModelSpec,
    s: Symbol,
    n: usize,
    rng: &mut R,
    cap: usize,
) -> Result<FirstPassageEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let k = model.n_starts();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut hits = vec![0usize; k];
    for _ in 0..n {
        let path = sample_region(model, s, rng, cap)?;
        let t = (path.len() - 1) as f64;
        sum += t;
        sum_sq += t * t;
        let last = *path.last().expect("non-empty path");
        hits[model.start_position(last)?] += 1;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 {
        ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    let absorption_row: Vec<f64> = hits.iter().map(|&h| h as f64 / nf).collect();
    let absorption_se = absorption_row
        .iter()
        .map(|p| (p * (1.0 - p) / nf).sqrt())
        .collect();
    Ok(FirstPassageEstimate {
        samples: n,
        expected_t: mean,
        expected_t_se: (var / nf).sqrt(),
        absorption_row,
        absorption_se,
    })
}

#[allow(non_snake_case)]
pub fn build_Q(model: &ModelSpec) -> Result<ClassChainMatrix> {
    Ok(q_from_summary(model, &first_passage_summary(model)?))
}

pub(crate) fn q_from_summary(model: &ModelSpec, summary: &FirstPassageSummary) -> ClassChainMatrix {
    ClassChainMatrix {
        starts: model.start_set().to_vec(),
        rows: summary
            .entries
            .iter()
            .map(|e| e.absorption_row.clone())
            .collect(),
    }
}

/// Probability vector π̂ with π̂ = π̂Q. For reducible Q the stationary vectors
/// of the closed classes are mixed with equal weights and the result is
/// flagged non-unique.
pub fn invariant_vector(q: &ClassChainMatrix) -> InvariantVector {
    let n = q.len();
    let adj = linalg::support_graph(&q.rows, 0.0);
    let closed: Vec<Vec<usize>> = linalg::communicating_classes(&adj)
        .into_iter()
        .filter(|(_, closed)| *closed)
        .map(|(members, _)| members)
        .collect();
    let mut pi_hat = vec![0.0; n];
    let weight = 1.0 / closed.len() as f64;
    for members in &closed {
        let local = stationary_of_class(q, members);
        for (a, &i) in members.iter().enumerate() {
            pi_hat[i] += weight * local[a];
        }
    }
    let residual = invariance_residual(q, &pi_hat);
    InvariantVector {
        pi_hat,
        unique: closed.len() == 1,
        residual,
    }
}

/// Direct solve of (Qᵀ − I)x = 0 with the last equation replaced by Σx = 1.
fn stationary_of_class(q: &ClassChainMatrix, members: &[usize]) -> Vec<f64> {
    let m = members.len();
    if m == 1 {
        return vec![1.0];
    }
    let mut a = DMatrix::from_fn(m, m, |r, c| {
        q.get(members[c], members[r]) - if r == c { 1.0 } else { 0.0 }
    });
    for c in 0..m {
        a[(m - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    match linalg::solve(a, b) {
        Ok(x) => {
            let x: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
            let s: f64 = x.iter().sum();
            x.iter().map(|v| v / s).collect()
        }
        // an irreducible stochastic block always has a unique solution
        Err(_) => vec![1.0 / m as f64; m],
    }
}

/// max_s |ρ_s − Σ_{s'} ρ_{s'} q_{s's}|.
pub fn invariance_residual(q: &ClassChainMatrix, rho: &[f64]) -> f64 {
    (0..q.len())
        .map(|s| {
            let inflow: f64 = (0..q.len()).map(|r| rho[r] * q.get(r, s)).sum();
            (rho[s] - inflow).abs()
        })
        .fold(0.0, f64::max)
}

/// |Σ_s π_s E_s(T) − 1|.
pub fn normalization_residual(pi: &[f64], expected: &[f64]) -> f64 {
    (pi.iter().zip(expected).map(|(p, e)| p * e).sum::<f64>() - 1.0).abs()
}

pub fn solve_weights(model: &ModelSpec) -> Result<WeightVector> {
    let summary = first_passage_summary(model)?;
    let q = q_from_summary(model, &summary);
    weights_from(model, &q, &summary.expected_times())
}

pub(crate) fn weights_from(
    model: &ModelSpec,
    q: &ClassChainMatrix,
    expected: &[f64],
) -> Result<WeightVector> {
    let inv = invariant_vector(q);
    if let Some(k) = inv.pi_hat.iter().position(|&p| p <= 0.0) {
        return Err(Error::NonPositiveWeights(format!(
            "invariant vector vanishes on transient start symbol `{}`",
            model.name(q.starts[k])
        )));
    }
    let c = 1.0 / inv.pi_hat.iter().zip(expected).map(|(p, e)| p * e).sum::<f64>();
    let pi: Vec<f64> = inv.pi_hat.iter().map(|p| c * p).collect();
    Ok(WeightVector {
        normalization_residual: normalization_residual(&pi, expected),
        invariance_residual: invariance_residual(q, &pi),
        unique: inv.unique,
        pi,
    })
}

pub fn t_distribution(model: &ModelSpec, s: Symbol, horizon: usize) -> Result<TDistribution> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let accept = unit_acceptance(model);
    Ok(RegionChain::new(model, s, &accept)?.t_distribution(horizon))
}

/// gcd of the support of P*_γ(T = ·) with γ = π̂.
#[allow(non_snake_case)]
pub fn is_aperiodic_T(model: &ModelSpec, pi_hat: &[f64]) -> Result<AperiodicityT> {
    let accept = unit_acceptance(model);
    aperiodic_t_with(model, pi_hat, &accept)
}

#[allow(non_snake_case)]
pub(crate) fn aperiodic_t_with(
    model: &ModelSpec,
    pi_hat: &[f64],
    accept: &[f64],
) -> Result<AperiodicityT> {
    if pi_hat.len() != model.n_starts() {
        return Err(Error::InvalidDistribution(format!(
            "expected {} weights, got {}",
            model.n_starts(),
            pi_hat.len()
        )));
    }
    let chains = model
        .start_set()
        .iter()
        .map(|&s| RegionChain::new(model, s, accept))
        .collect::<Result<Vec<_>>>()?;
    let mut horizon = 64;
    loop {
        let mut mixed = vec![0.0; horizon];
        let mut tail = 0.0;
        for (chain, &w) in chains.iter().zip(pi_hat) {
            let d = chain.t_distribution(horizon);
            for (m, p) in mixed.iter_mut().zip(&d.probs) {
                *m += w * p;
            }
            tail += w * d.tail;
        }
        if tail < GCD_TAIL || horizon >= MAX_GCD_HORIZON {
            let support = mixed
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > SUPPORT_THRESHOLD)
                .map(|(k, _)| k + 1);
            let g = linalg::gcd_all(support);
            if g == 0 {
                return Err(Error::Inconclusive("empty support below threshold".into()));
            }
            if tail >= GCD_TAIL {
                return Err(Error::Inconclusive(format!(
                    "tail mass {tail:e} left at horizon {horizon}"
                )));
            }
            return Ok(AperiodicityT {
                gcd: g,
                aperiodic: g == 1,
                horizon,
            });
        }
        horizon *= 2;
    }
}

/// Period of Q, or `None` when Q is reducible.
pub fn q_period(q: &ClassChainMatrix) -> Option<usize> {
    linalg::period(&linalg::support_graph(&q.rows, 0.0))
}

/// True iff Q is irreducible with period 1.
#[allow(non_snake_case)]
pub fn is_aperiodic_Q(q: &ClassChainMatrix) -> bool {
    q_period(q) == Some(1)
}
