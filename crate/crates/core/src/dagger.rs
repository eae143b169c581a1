//! Random acceptance of region starts.
//!
//! Every start symbol `s` carries an acceptance probability ε(s) ∈ (0, 1].
//! Each position carries a uniform mark Z ∈ [0, 1]; a foreign-class hit on
//! `s` starts a new region only if Z ∈ R_s = [0, ε(s)). The first accepted
//! hit is 𝒯. With ε ≡ 1 everything reduces to the base model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::first_passage::{
    aperiodic_t_with, q_from_summary, summary_with, weights_from, AperiodicityT, ClassChainMatrix,
    FirstPassageSummary, WeightVector,
};
use crate::kac::{custom_weights, defect_sweep, marked_cylinder, renewal_marked, KacMeasure, RenewalSeries, StationarityReport};
use crate::lifted::{LiftedChain, MarkConstraint};
use crate::model::{ModelSpec, Symbol};
use crate::regeneration::{check_distribution, draw_index, Walk, DEFAULT_WORD_BUDGET};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DaggerModel {
    base: ModelSpec,
    /// Per symbol; 1 for symbols outside 𝒮.
    accept: Vec<f64>,
}

/// `epsilon` is indexed by start-set position.
pub fn build_dagger(model: &ModelSpec, epsilon: &[f64]) -> Result<DaggerModel> {
    if epsilon.len() != model.n_starts() {
        return Err(Error::InvalidArgument(format!(
            "expected {} acceptance probabilities, got {}",
            model.n_starts(),
            epsilon.len()
        )));
    }
    let mut accept = vec![1.0; model.n_symbols()];
    for (&s, &e) in model.start_set().iter().zip(epsilon) {
        if !(e > 0.0 && e <= 1.0) {
            return Err(Error::InvalidEpsilon {
                symbol: model.name(s).to_string(),
                value: e,
            });
        }
        accept[s] = e;
    }
    Ok(DaggerModel {
        base: model.clone(),
        accept,
    })
}

/// Acceptance probabilities keyed by symbol name; every start symbol must
/// be present.
pub fn build_dagger_named(model: &ModelSpec, epsilon: &BTreeMap<String, f64>) -> Result<DaggerModel> {
    for name in epsilon.keys() {
        let s = model.symbol(name)?;
        if !model.partition().is_start(s) {
            return Err(Error::NotAStartSymbol(name.clone()));
        }
    }
    let values = model
        .start_set()
        .iter()
        .map(|&s| {
            epsilon
                .get(model.name(s))
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("missing acceptance probability for `{}`", model.name(s))))
        })
        .collect::<Result<Vec<_>>>()?;
    build_dagger(model, &values)
}

impl DaggerModel {
    pub fn base(&self) -> &ModelSpec {
        &self.base
    }

    pub fn epsilon(&self, s: Symbol) -> Result<f64> {
        self.base.start_position(s)?;
        Ok(self.accept[s])
    }

    /// ε by start-set position.
    pub fn epsilons(&self) -> Vec<f64> {
        self.base.start_set().iter().map(|&s| self.accept[s]).collect()
    }

    /// Canonical region R_s = [0, ε(s)).
    pub fn acceptance_region(&self, s: Symbol) -> Result<(f64, f64)> {
        Ok((0.0, self.epsilon(s)?))
    }

    pub fn is_unit(&self) -> bool {
        self.accept.iter().all(|&e| e == 1.0)
    }

    pub fn kac(&self) -> Result<KacMeasure> {
        let fp = dagger_first_passage(self)?;
        let weights = weights_from(&self.base, &fp.q, &fp.summary.expected_times())?;
        Ok(KacMeasure::from_parts(
            dagger_lifted(self),
            fp.q,
            fp.summary.expected_times(),
            weights,
        ))
    }

    pub fn kac_with_weights(&self, pi: &[f64]) -> Result<KacMeasure> {
        let fp = dagger_first_passage(self)?;
        let expected = fp.summary.expected_times();
        let weights = custom_weights(&fp.q, &expected, pi)?;
        Ok(KacMeasure::from_parts(dagger_lifted(self), fp.q, expected, weights))
    }
}

pub fn dagger_lifted(dm: &DaggerModel) -> LiftedChain {
    LiftedChain::new(&dm.base, dm.accept.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DaggerFirstPassage {
    /// E†_s(𝒯), q†_{s·} and visit counts per start symbol.
    pub summary: FirstPassageSummary,
    pub q: ClassChainMatrix,
}

pub fn dagger_first_passage(dm: &DaggerModel) -> Result<DaggerFirstPassage> {
    let summary = summary_with(&dm.base, &dm.accept)?;
    let q = q_from_summary(&dm.base, &summary);
    Ok(DaggerFirstPassage { summary, q })
}

pub fn solve_weights_dagger(dm: &DaggerModel) -> Result<WeightVector> {
    let fp = dagger_first_passage(dm)?;
    weights_from(&dm.base, &fp.q, &fp.summary.expected_times())
}

/// gcd of the support of the law of 𝒯 under the mixture `pi_hat`.
pub fn dagger_aperiodicity(dm: &DaggerModel, pi_hat: &[f64]) -> Result<AperiodicityT> {
    aperiodic_t_with(&dm.base, pi_hat, &dm.accept)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkedTrace {
    pub symbols: Vec<Symbol>,
    pub z_values: Vec<f64>,
    /// Z ∈ R_{symbol} (always false for symbols outside 𝒮).
    pub accept_flags: Vec<bool>,
    pub regen_times: Vec<usize>,
    pub governing: Vec<Symbol>,
}

impl MarkedTrace {
    /// One line per position: `index symbol z_value governing is_regen`.
    pub fn to_text(&self, model: &ModelSpec) -> String {
        let mut out = String::new();
        let mut next = self.regen_times.iter().peekable();
        for idx in 0..self.symbols.len() {
            let regen = next.next_if_eq(&&idx).is_some();
            let _ = writeln!(
                out,
                "{idx} {} {:.17} {} {}",
                model.name(self.symbols[idx]),
                self.z_values[idx],
                model.name(self.governing[idx]),
                u8::from(regen)
            );
        }
        out
    }

    pub fn check(&self, dm: &DaggerModel) -> std::result::Result<(), String> {
        let p = dm.base.partition();
        let Some(&x0) = self.symbols.first() else {
            return Ok(());
        };
        if self.governing[0] != x0 || !self.accept_flags[0] {
            return Err("position 0 must start a region with an accepted mark".into());
        }
        let mut regens = self.regen_times.iter().peekable();
        for k in 1..self.symbols.len() {
            let x = self.symbols[k];
            let expected = p.is_foreign(self.governing[k - 1], x) && self.accept_flags[k];
            let is_regen = regens.next_if_eq(&&k).is_some();
            if expected != is_regen {
                return Err(format!("regeneration mismatch at {k}"));
            }
            let gov = if is_regen { x } else { self.governing[k - 1] };
            if self.governing[k] != gov {
                return Err(format!("governing mismatch at {k}"));
            }
        }
        Ok(())
    }
}

pub fn sample_dagger(dm: &DaggerModel, gamma: &[f64], length: usize, seed: u64) -> Result<MarkedTrace> {
    let mut symbols = rng::stream(seed, rng::SYMBOL_STREAM);
    let mut marks = rng::stream(seed, rng::MARK_STREAM);
    sample_dagger_with(dm, gamma, length, &mut symbols, &mut marks)
}

/// Symbols come from `rng` exactly as in the base sampler; marks come from
/// `marks`, uniform on R_{X_0} at position 0 and on [0, 1] afterwards.
pub fn sample_dagger_with<R: Rng + ?Sized, M: Rng + ?Sized>(
    dm: &DaggerModel,
    gamma: &[f64],
    length: usize,
    rng: &mut R,
    marks: &mut M,
) -> Result<MarkedTrace> {
    check_distribution(gamma, dm.base.n_starts())?;
    if length == 0 {
        return Err(Error::InvalidArgument("length must be >= 1".into()));
    }
    let chain = dagger_lifted(dm);
    let k0 = draw_index(gamma, rng.gen::<f64>());
    let x0 = dm.base.start_set()[k0];
    let mut walk = Walk::with_capacity(length);
    walk.symbols.push(x0);
    walk.governing.push(k0);
    walk.marks.push(marks.gen::<f64>() * dm.accept[x0]);
    walk.regen.push(true);
    walk.foreign.push(false);
    walk.extend(&chain, length - 1, rng, Some(marks));
    let accept_flags = walk
        .symbols
        .iter()
        .zip(&walk.marks)
        .map(|(&x, &z)| z < chain.region_size(x))
        .collect();
    let z_values = walk.marks.clone();
    let trace = walk.into_trace(&dm.base);
    Ok(MarkedTrace {
        symbols: trace.symbols,
        z_values,
        accept_flags,
        regen_times: trace.regen_times,
        governing: trace.governing,
    })
}

/// Fraction of foreign-class hits in a trace that were accepted.
pub fn acceptance_counts(dm: &DaggerModel, trace: &MarkedTrace) -> (usize, usize) {
    let p = dm.base.partition();
    let mut hits = 0;
    let mut accepted = 0;
    for k in 1..trace.symbols.len() {
        if p.is_foreign(trace.governing[k - 1], trace.symbols[k]) {
            hits += 1;
            if trace.accept_flags[k] {
                accepted += 1;
            }
        }
    }
    (accepted, hits)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkedCylinder {
    pub word: Vec<Symbol>,
    pub constraints: Vec<MarkConstraint>,
}

impl MarkedCylinder {
    pub fn new(word: Vec<Symbol>, constraints: Vec<MarkConstraint>) -> Result<Self> {
        if word.len() != constraints.len() {
            return Err(Error::InvalidArgument("one mark constraint per position required".into()));
        }
        if let Some(c) = constraints.iter().find(|c| !c.is_valid()) {
            return Err(Error::InvalidArgument(format!("invalid interval {c:?}")));
        }
        Ok(Self { word, constraints })
    }

    pub fn unconstrained(word: Vec<Symbol>) -> Self {
        let constraints = vec![MarkConstraint::Any; word.len()];
        Self { word, constraints }
    }
}

/// Exact ℙ*† of a marked cylinder; `km` comes from [`DaggerModel::kac`].
pub fn dagger_cylinder(km: &KacMeasure, mc: &MarkedCylinder) -> Result<f64> {
    marked_cylinder(km, &mc.word, Some(&mc.constraints))
}

/// Shift defect over marked cylinders with constraints in
/// {Any, Accept, Reject} (Any only for symbols outside 𝒮).
pub fn dagger_stationarity_defect(km: &KacMeasure, max_len: usize) -> Result<StationarityReport> {
    defect_sweep(km, max_len, DEFAULT_WORD_BUDGET, true)
}

pub fn dagger_renewal_convergence(
    km: &KacMeasure,
    gamma: &[f64],
    mc: &MarkedCylinder,
    n_max: usize,
) -> Result<RenewalSeries> {
    renewal_marked(km, gamma, &mc.word, Some(&mc.constraints), n_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::first_passage::{first_passage_summary, invariant_vector, solve_weights};
    use crate::kac::{kac_cylinder, renewal_convergence, stationarity_defect, total_mass};
    use crate::model::fixtures::*;
    use crate::regeneration::{build_lifted, sample_regenerated};
    use MarkConstraint::*;

    fn half(m: &ModelSpec) -> DaggerModel {
        build_dagger(m, &vec![0.5; m.n_starts()]).unwrap()
    }

    fn unit(m: &ModelSpec) -> DaggerModel {
        build_dagger(m, &vec![1.0; m.n_starts()]).unwrap()
    }

    #[test]
    fn validation() {
        let m = toy2();
        assert!(build_dagger(&m, &[0.5, 0.5]).is_ok());
        assert!(matches!(build_dagger(&m, &[0.0, 0.5]), Err(Error::InvalidEpsilon { .. })));
        assert!(matches!(build_dagger(&m, &[0.5, 1.5]), Err(Error::InvalidEpsilon { .. })));
        assert!(build_dagger(&m, &[f64::NAN, 0.5]).is_err());
        let mut named = BTreeMap::new();
        named.insert("s".to_string(), 0.5);
        assert!(build_dagger_named(&m, &named).is_err());
        named.insert("t".to_string(), 0.25);
        let dm = build_dagger_named(&m, &named).unwrap();
        assert_eq!(dm.acceptance_region(m.symbol("t").unwrap()).unwrap(), (0.0, 0.25));
        named.insert("q".to_string(), 0.25);
        assert_eq!(build_dagger_named(&m, &named), Err(Error::UnknownSymbol("q".into())));
        named.remove("q");
        named.insert("a".to_string(), 0.25);
        assert_eq!(build_dagger_named(&m, &named), Err(Error::NotAStartSymbol("a".into())));
    }

    #[test]
    fn lifted_split() {
        let m = toy2();
        let chain = dagger_lifted(&half(&m));
        let (a, t) = (m.symbol("a").unwrap(), m.symbol("t").unwrap());
        let rows = chain.kernel_matrix();
        let from = chain.state_index(a, 0);
        assert_eq!(rows[from][chain.state_index(a, 0)], 0.5);
        assert_eq!(rows[from][chain.state_index(t, 1)], 0.25);
        assert_eq!(rows[from][chain.state_index(t, 0)], 0.25);
        // rejected t keeps s governing and moves to b
        let from = chain.state_index(t, 0);
        assert_eq!(rows[from][chain.state_index(m.symbol("b").unwrap(), 0)], 1.0);
        assert!(chain.max_row_defect() < 1e-12);
        assert_eq!(dagger_lifted(&unit(&m)).kernel_matrix(), build_lifted(&m).kernel_matrix());
    }

    /// E†(𝒯) on TOY2 by cycle decomposition: first t-hit after 3 steps on
    /// average, each rejection adds a t→b→…→s→a→…→t cycle of mean 6, and
    /// the number of rejections is geometric with mean 1/ε − 1.
    fn toy2_cycle_oracle(eps: f64) -> f64 {
        3.0 + 6.0 * (1.0 / eps - 1.0)
    }

    #[test]
    fn first_passage_values() {
        let m = toy2();
        for eps in [0.5, 0.25, 0.9, 1.0] {
            let fp = dagger_first_passage(&build_dagger(&m, &[eps, eps]).unwrap()).unwrap();
            for e in &fp.summary.entries {
                assert!((e.expected_t - toy2_cycle_oracle(eps)).abs() < 1e-12);
            }
            assert!((fp.q.get(0, 1) - 1.0).abs() < 1e-12);
        }
        let w = solve_weights_dagger(&half(&m)).unwrap();
        for p in &w.pi {
            assert!((p - 1.0 / 18.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_acceptance_reduces_to_base() {
        for m in [toy2(), toy3()] {
            let dm = unit(&m);
            let fp = dagger_first_passage(&dm).unwrap();
            let base = first_passage_summary(&m).unwrap();
            for (a, b) in fp.summary.entries.iter().zip(&base.entries) {
                assert!((a.expected_t - b.expected_t).abs() < 1e-12);
                for (x, y) in a.absorption_row.iter().zip(&b.absorption_row) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            let wd = solve_weights_dagger(&dm).unwrap();
            let wb = solve_weights(&m).unwrap();
            for (x, y) in wd.pi.iter().zip(&wb.pi) {
                assert!((x - y).abs() < 1e-12);
            }
            let kd = dm.kac().unwrap();
            let kb = KacMeasure::new(&m).unwrap();
            let dd = dagger_stationarity_defect(&kd, 3).unwrap().defect;
            let db = stationarity_defect(&kb, 3).unwrap().defect;
            assert!((dd - db).abs() < 1e-12);
            let word = vec![m.n_symbols() - 1];
            let pi_hat = invariant_vector(kb.q()).pi_hat;
            let rd = dagger_renewal_convergence(&kd, &pi_hat, &MarkedCylinder::unconstrained(word.clone()), 50).unwrap();
            let rb = renewal_convergence(&kb, &pi_hat, &word, 50).unwrap();
            for (x, y) in rd.d.iter().zip(&rb.d) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let w = solve_weights_dagger(&unit(&toy3())).unwrap();
        assert!(w.pi.iter().all(|p| (p - 1.0 / 9.0).abs() < 1e-12));
    }

    #[test]
    fn seed_coupled_sampling_at_unit_acceptance() {
        let m = toy3();
        let dm = unit(&m);
        let gamma = [0.2, 0.3, 0.5];
        for seed in 0..5 {
            let marked = sample_dagger(&dm, &gamma, 300, seed).unwrap();
            let plain = sample_regenerated(&m, &gamma, 300, seed).unwrap();
            assert_eq!(marked.symbols, plain.symbols);
            assert_eq!(marked.regen_times, plain.regen_times);
            assert_eq!(marked.governing, plain.governing);
        }
    }

    #[test]
    fn marked_trace_invariants_and_acceptance_rate() {
        let m = toy2();
        let dm = half(&m);
        let tr = sample_dagger(&dm, &[1.0, 0.0], 400_000, 21).unwrap();
        tr.check(&dm).unwrap();
        assert!(tr.z_values[0] < 0.5);
        for &k in &tr.regen_times {
            assert!(tr.accept_flags[k]);
            assert!(tr.z_values[k] < 0.5);
        }
        let (acc, hits) = acceptance_counts(&dm, &tr);
        assert!(hits > 50_000);
        let f = acc as f64 / hits as f64;
        assert!((f - 0.5).abs() <= 4.0 * (0.25 / hits as f64).sqrt());
        let text = tr.to_text(&m);
        assert_eq!(text.lines().count(), 400_000);
        assert!(text.starts_with("0 s 0."));
        assert_eq!(sample_dagger(&dm, &[0.5, 0.5], 100, 3).unwrap(), sample_dagger(&dm, &[0.5, 0.5], 100, 3).unwrap());
    }

    #[test]
    fn mark_marginalization() {
        let m = toy2();
        let km = half(&m).kac().unwrap();
        assert!((total_mass(&km) - 1.0).abs() < 1e-10);
        let t = m.symbol("t").unwrap();
        let b = m.symbol("b").unwrap();
        let any = dagger_cylinder(&km, &MarkedCylinder::unconstrained(vec![t, b])).unwrap();
        assert!((any - kac_cylinder(&km, &[t, b]).unwrap()).abs() < 1e-15);
        let acc = dagger_cylinder(&km, &MarkedCylinder::new(vec![t], vec![Accept]).unwrap()).unwrap();
        let rej = dagger_cylinder(&km, &MarkedCylinder::new(vec![t], vec![Reject]).unwrap()).unwrap();
        let all = dagger_cylinder(&km, &MarkedCylinder::unconstrained(vec![t])).unwrap();
        assert!((acc + rej - all).abs() < 1e-12);
        // Visit counts before 𝒯: the region of s shows t once on average
        // (always rejected); the region of t shows it at time 0 (accepted)
        // and once more on average (mark uniform, accepted half the time).
        // Hence ℙ*†(X_0 = t) = 3/18 and the accepted part is 1.5/18.
        assert!((all - 1.0 / 6.0).abs() < 1e-12);
        assert!((acc - 1.0 / 12.0).abs() < 1e-12);
        let lo = dagger_cylinder(&km, &MarkedCylinder::new(vec![t], vec![Interval(0.0, 0.3)]).unwrap()).unwrap();
        let hi = dagger_cylinder(&km, &MarkedCylinder::new(vec![t], vec![Interval(0.3, 1.0)]).unwrap()).unwrap();
        assert!((lo + hi - all).abs() < 1e-12);
        assert!(MarkedCylinder::new(vec![t], vec![Interval(0.4, 0.2)]).is_err());
        // decision coordinate inside a word
        let a = m.symbol("a").unwrap();
        let split = [Accept, Reject].map(|c| {
            dagger_cylinder(&km, &MarkedCylinder::new(vec![a, t, b], vec![Any, c, Any]).unwrap()).unwrap()
        });
        let whole = dagger_cylinder(&km, &MarkedCylinder::unconstrained(vec![a, t, b])).unwrap();
        assert!((split[0] + split[1] - whole).abs() < 1e-12);
    }

    #[test]
    fn dagger_stationarity() {
        let m = toy2();
        let dm = half(&m);
        let km = dm.kac().unwrap();
        let r = dagger_stationarity_defect(&km, 4).unwrap();
        assert!(!r.partial && r.defect <= 1e-9, "{r:?}");
        let bad = dm.kac_with_weights(&[1.2 / 18.0, 0.8 / 18.0]).unwrap();
        assert!(dagger_stationarity_defect(&bad, 3).unwrap().defect > 1e-4);
        let km3 = half(&toy3()).kac().unwrap();
        assert!(dagger_stationarity_defect(&km3, 3).unwrap().defect <= 1e-9);
    }

    #[test]
    fn dagger_renewal() {
        let m = toy2();
        let dm = half(&m);
        let km = dm.kac().unwrap();
        let pi_hat = invariant_vector(km.q()).pi_hat;
        let mc = MarkedCylinder::unconstrained(vec![m.symbol("a").unwrap()]);
        let r = dagger_renewal_convergence(&km, &pi_hat, &mc, 500).unwrap();
        assert!(r.first_below(1e-6).is_some());
        assert!(dagger_aperiodicity(&dm, &pi_hat).unwrap().aperiodic);
    }
}
