//! Regenerated laws 𝐏*_s and 𝐏*_γ: samplers, traces and exact cylinders.
//!
//! Everything here runs on the lifted chain of [`crate::lifted`]; the
//! recursive segment-by-segment definition only appears inside
//! [`verify_regeneration`], where it serves as an independent oracle.

use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifted::LiftedChain;
use crate::model::{ModelSpec, Symbol};
use crate::rng;

/// Tolerance on Σγ = 1 for mixing vectors.
pub const DISTRIBUTION_TOL: f64 = 1e-12;
/// Default word budget for exhaustive enumerations.
pub const DEFAULT_WORD_BUDGET: usize = 1_000_000;

pub fn build_lifted(model: &ModelSpec) -> LiftedChain {
    LiftedChain::new(model, vec![1.0; model.n_symbols()])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegenTrace {
    pub symbols: Vec<Symbol>,
    /// Positions ≥ 1 where a new region starts.
    pub regen_times: Vec<usize>,
    pub start_symbols: Vec<Symbol>,
    /// Governing start symbol at each position.
    pub governing: Vec<Symbol>,
}

impl RegenTrace {
    /// One line per position: `index symbol governing is_regen`.
    pub fn to_text(&self, model: &ModelSpec) -> String {
        let mut out = String::new();
        let mut next = self.regen_times.iter().peekable();
        for (idx, (&x, &g)) in self.symbols.iter().zip(&self.governing).enumerate() {
            let regen = next.next_if_eq(&&idx).is_some();
            let _ = writeln!(out, "{idx} {} {} {}", model.name(x), model.name(g), u8::from(regen));
        }
        out
    }

    /// Checks the trace invariants; returns a description of the first
    /// violation.
    pub fn check(&self, model: &ModelSpec) -> std::result::Result<(), String> {
        let p = model.partition();
        if self.symbols.len() != self.governing.len() {
            return Err("governing length differs from symbols".into());
        }
        if self.regen_times.len() != self.start_symbols.len() {
            return Err("regen_times and start_symbols differ in length".into());
        }
        if let Some(&x0) = self.symbols.first() {
            if self.governing[0] != x0 || !p.is_start(x0) {
                return Err("position 0 must be a start symbol governing itself".into());
            }
        }
        let mut regens = self.regen_times.iter().zip(&self.start_symbols).peekable();
        for k in 1..self.symbols.len() {
            let prev = self.governing[k - 1];
            let x = self.symbols[k];
            if let Some((&t, &s)) = regens.peek() {
                if t == k {
                    if s != x || !p.is_foreign(prev, x) || self.governing[k] != x {
                        return Err(format!("bad regeneration at {k}"));
                    }
                    regens.next();
                    continue;
                }
            }
            if p.is_foreign(prev, x) {
                return Err(format!("foreign start symbol without regeneration at {k}"));
            }
            if self.governing[k] != prev {
                return Err(format!("governing changed without regeneration at {k}"));
            }
        }
        if regens.next().is_some() {
            return Err("regeneration time out of range".into());
        }
        Ok(())
    }
}

pub(crate) fn check_distribution(gamma: &[f64], n: usize) -> Result<()> {
    if gamma.len() != n {
        return Err(Error::InvalidDistribution(format!(
            "expected {n} entries, got {}",
            gamma.len()
        )));
    }
    if let Some(g) = gamma.iter().find(|g| !g.is_finite() || **g < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {g} is not a probability")));
    }
    let sum: f64 = gamma.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Inverse-CDF draw from a finite weight vector (need not be normalised).
pub(crate) fn draw_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc && w > 0.0 {
            return k;
        }
    }
    (0..weights.len()).rev().find(|&k| weights[k] > 0.0).unwrap_or(0)
}

/// Raw lifted-chain walk shared by the plain and marked samplers.
pub(crate) struct Walk {
    pub symbols: Vec<Symbol>,
    pub governing: Vec<usize>,
    pub marks: Vec<f64>,
    pub regen: Vec<bool>,
    pub foreign: Vec<bool>,
}

impl Walk {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            symbols: Vec::with_capacity(n),
            governing: Vec::with_capacity(n),
            marks: Vec::new(),
            regen: Vec::with_capacity(n),
            foreign: Vec::with_capacity(n),
        }
    }

    /// Continues from the last state for `steps` more positions.
    pub(crate) fn extend<R: Rng + ?Sized, M: Rng + ?Sized>(
        &mut self,
        chain: &LiftedChain,
        steps: usize,
        rng: &mut R,
        mut marks: Option<&mut M>,
    ) {
        let (mut i, mut k) = (*self.symbols.last().unwrap(), *self.governing.last().unwrap());
        for _ in 0..steps {
            let step = chain.sample_step(i, k, rng, marks.as_deref_mut());
            self.symbols.push(step.symbol);
            self.governing.push(step.governing);
            if let Some(z) = step.mark {
                self.marks.push(z);
            }
            self.regen.push(step.regen);
            self.foreign.push(step.foreign);
            i = step.symbol;
            k = step.governing;
        }
    }

    pub(crate) fn into_trace(self, model: &ModelSpec) -> RegenTrace {
        let starts = model.start_set();
        let mut regen_times = Vec::new();
        let mut start_symbols = Vec::new();
        for (t, &r) in self.regen.iter().enumerate() {
            if r && t > 0 {
                regen_times.push(t);
                start_symbols.push(self.symbols[t]);
            }
        }
        RegenTrace {
            governing: self.governing.iter().map(|&k| starts[k]).collect(),
            symbols: self.symbols,
            regen_times,
            start_symbols,
        }
    }
}

/// Samples `length` symbols of 𝐏*_γ.
pub fn sample_regenerated(model: &ModelSpec, gamma: &[f64], length: usize, seed: u64) -> Result<RegenTrace> {
    let mut r = rng::stream(seed, rng::SYMBOL_STREAM);
    sample_regenerated_with(model, gamma, length, &mut r)
}

pub fn sample_regenerated_with<R: Rng + ?Sized>(
    model: &ModelSpec,
    gamma: &[f64],
    length: usize,
    rng: &mut R,
) -> Result<RegenTrace> {
    check_distribution(gamma, model.n_starts())?;
    if length == 0 {
        return Err(Error::InvalidArgument("length must be >= 1".into()));
    }
    let chain = build_lifted(model);
    let k0 = draw_index(gamma, rng.gen::<f64>());
    let mut walk = Walk::with_capacity(length);
    walk.symbols.push(model.start_set()[k0]);
    walk.governing.push(k0);
    walk.regen.push(true);
    walk.foreign.push(false);
    walk.extend::<R, R>(&chain, length - 1, rng, None);
    Ok(walk.into_trace(model))
}

/// Exact 𝐏*_s(X_0..X_m = word).
pub fn pstar_cylinder(model: &ModelSpec, s: Symbol, word: &[Symbol]) -> Result<f64> {
    let k = model.start_position(s)?;
    check_word(model, word)?;
    Ok(pstar_on(&build_lifted(model), k, word))
}

pub(crate) fn check_word(model: &ModelSpec, word: &[Symbol]) -> Result<()> {
    if word.is_empty() {
        return Err(Error::EmptyWord);
    }
    if let Some(&x) = word.iter().find(|&&x| x >= model.n_symbols()) {
        return Err(Error::SymbolOutOfRange(x));
    }
    Ok(())
}

fn pstar_on(chain: &LiftedChain, k: usize, word: &[Symbol]) -> f64 {
    let mut gamma = vec![0.0; chain.n_starts()];
    gamma[k] = 1.0;
    chain.cylinder(&chain.initial_measure(&gamma), word, None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegenerationCheck {
    /// max |𝐏*_s(w) − 𝐏_s(w[..=k])·𝐏*_{w[k]}(w[k..])| over words with a
    /// regeneration point at k.
    pub factorization_defect: f64,
    /// max |lifted 𝐏*_s(w) − recursive 𝐏*_s(w)|.
    pub oracle_defect: f64,
    pub words_checked: usize,
    pub factorized_words: usize,
    pub partial: bool,
}

impl RegenerationCheck {
    pub fn max_defect(&self) -> f64 {
        self.factorization_defect.max(self.oracle_defect)
    }
}

/// Product of region-law transitions along `word` under 𝐏_s.
fn region_path_prob(model: &ModelSpec, k: usize, word: &[Symbol]) -> f64 {
    let kernel = &model.laws()[k].kernel;
    word.windows(2).map(|w| kernel.get(w[0], w[1])).product()
}

/// First index ≥ 1 where `word` hits 𝒮 ∖ C(word[0]).
fn first_regen(model: &ModelSpec, word: &[Symbol]) -> Option<usize> {
    (1..word.len()).find(|&l| model.partition().is_foreign(word[0], word[l]))
}

/// Segment-by-segment definition of 𝐏*_s: product over the region of `s`
/// up to its first foreign hit, then recurse on the landing symbol.
fn recursive_pstar(model: &ModelSpec, word: &[Symbol]) -> f64 {
    let k = model.start_position(word[0]).expect("word starts on a start symbol");
    match first_regen(model, word) {
        None => region_path_prob(model, k, word),
        Some(t) => region_path_prob(model, k, &word[..=t]) * recursive_pstar(model, &word[t..]),
    }
}

/// Exhaustive check of the regeneration factorization for all words of
/// length ≤ `depth` starting at a start symbol.
pub fn verify_regeneration(model: &ModelSpec, depth: usize, budget: usize) -> Result<RegenerationCheck> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".into()));
    }
    let chain = build_lifted(model);
    let mut check = RegenerationCheck {
        factorization_defect: 0.0,
        oracle_defect: 0.0,
        words_checked: 0,
        factorized_words: 0,
        partial: false,
    };
    for k in 0..model.n_starts() {
        let mut word = vec![model.start_set()[k]];
        visit(model, &chain, k, &mut word, depth, budget, &mut check);
    }
    Ok(check)
}

fn visit(
    model: &ModelSpec,
    chain: &LiftedChain,
    k: usize,
    word: &mut Vec<Symbol>,
    depth: usize,
    budget: usize,
    check: &mut RegenerationCheck,
) {
    if check.words_checked >= budget {
        check.partial = true;
        return;
    }
    check.words_checked += 1;
    let lifted = pstar_on(chain, k, word);
    let oracle = recursive_pstar(model, word);
    check.oracle_defect = check.oracle_defect.max((lifted - oracle).abs());
    if let Some(t) = first_regen(model, word) {
        let k1 = model.partition().position(word[t]).expect("start symbol");
        let factor = region_path_prob(model, k, &word[..=t]) * pstar_on(chain, k1, &word[t..]);
        check.factorization_defect = check.factorization_defect.max((lifted - factor).abs());
        check.factorized_words += 1;
    }
    if word.len() == depth || (lifted == 0.0 && oracle == 0.0) {
        return;
    }
    for j in 0..model.n_symbols() {
        word.push(j);
        visit(model, chain, k, word, depth, budget, check);
        word.pop();
    }
}

/// Empirical transition counts between consecutive start symbols,
/// indexed by start-set position.
pub fn start_symbol_transitions(model: &ModelSpec, trace: &RegenTrace) -> Vec<Vec<usize>> {
    let n = model.n_starts();
    let mut counts = vec![vec![0usize; n]; n];
    let pos = |s: Symbol| model.partition().position(s).expect("start symbol");
    let mut prev = trace.symbols.first().map(|&s| pos(s));
    for &s in &trace.start_symbols {
        let cur = pos(s);
        if let Some(p) = prev {
            counts[p][cur] += 1;
        }
        prev = Some(cur);
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::testing::ScriptedRng;
    use proptest::prelude::*;

    fn w(model: &ModelSpec, names: &[&str]) -> Vec<Symbol> {
        model.alphabet().parse_word(names).unwrap()
    }

    #[test]
    fn lifted_toy2_shape_and_switch() {
        let m = toy2();
        let chain = build_lifted(&m);
        assert_eq!(chain.n_states(), 8);
        assert!(chain.max_row_defect() < 1e-12);
        let (a, t) = (m.symbol("a").unwrap(), m.symbol("t").unwrap());
        let from = chain.transitions(a, 0);
        let to_t: Vec<_> = from.iter().filter(|x| x.symbol == t).collect();
        assert_eq!(to_t.len(), 1);
        assert_eq!(to_t[0].governing, 1);
        // a non-foreign step keeps the governing symbol
        let to_a: Vec<_> = from.iter().filter(|x| x.symbol == a).collect();
        assert_eq!(to_a[0].governing, 0);
    }

    #[test]
    fn deterministic_model_gives_deterministic_chain() {
        let chain = build_lifted(&period2());
        for row in chain.kernel_matrix() {
            assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 1);
        }
    }

    #[test]
    fn forced_trace() {
        let m = toy2();
        // u = 0.1 picks the first symbol of every branching row: a→t, b→s.
        let mut rng = ScriptedRng::new(&[0.1]);
        let tr = sample_regenerated_with(&m, &[1.0, 0.0], 6, &mut rng).unwrap();
        assert_eq!(tr.symbols, w(&m, &["s", "a", "t", "b", "s", "a"]));
        assert_eq!(tr.regen_times, vec![2, 4]);
        assert_eq!(tr.start_symbols, w(&m, &["t", "s"]));
        tr.check(&m).unwrap();
        let text = tr.to_text(&m);
        assert_eq!(text.lines().nth(2).unwrap(), "2 t t 1");
        assert_eq!(text.lines().nth(1).unwrap(), "1 a s 0");
    }

    #[test]
    fn length_one_trace() {
        let m = toy2();
        let tr = sample_regenerated(&m, &[0.0, 1.0], 1, 3).unwrap();
        assert_eq!(tr.symbols, vec![m.symbol("t").unwrap()]);
        assert!(tr.regen_times.is_empty());
        assert!(sample_regenerated(&m, &[0.5, 0.4], 3, 3).is_err());
        assert!(sample_regenerated(&m, &[0.5, 0.5], 0, 3).is_err());
    }

    #[test]
    fn toy2_start_symbols_alternate() {
        let m = toy2();
        let tr = sample_regenerated(&m, &[1.0, 0.0], 10_000, 17).unwrap();
        tr.check(&m).unwrap();
        let (s, t) = (m.symbol("s").unwrap(), m.symbol("t").unwrap());
        for (n, &x) in tr.start_symbols.iter().enumerate() {
            assert_eq!(x, if n % 2 == 0 { t } else { s });
        }
        assert_eq!(
            sample_regenerated(&m, &[0.5, 0.5], 500, 99).unwrap(),
            sample_regenerated(&m, &[0.5, 0.5], 500, 99).unwrap()
        );
    }

    #[test]
    fn pstar_examples() {
        let m = toy2();
        let s = m.symbol("s").unwrap();
        assert!((pstar_cylinder(&m, s, &w(&m, &["s", "a", "t"])).unwrap() - 0.5).abs() < 1e-15);
        assert!((pstar_cylinder(&m, s, &w(&m, &["s", "a", "t", "b"])).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pstar_cylinder(&m, s, &w(&m, &["t", "b"])).unwrap(), 0.0);
        assert!(pstar_cylinder(&m, m.symbol("a").unwrap(), &[s]).is_err());
        assert_eq!(pstar_cylinder(&m, s, &[]), Err(Error::EmptyWord));
    }

    #[test]
    fn regeneration_factorizes() {
        for (m, depth) in [(toy2(), 5), (toy3(), 4), (toy3(), 5), (period2(), 6)] {
            let c = verify_regeneration(&m, depth, DEFAULT_WORD_BUDGET).unwrap();
            assert!(!c.partial);
            assert!(c.factorized_words > 0);
            assert!(c.max_defect() <= 1e-12, "{c:?}");
        }
        let c = verify_regeneration(&toy2(), 1, DEFAULT_WORD_BUDGET).unwrap();
        assert_eq!(c.factorized_words, 0);
        assert_eq!(c.max_defect(), 0.0);
        let c = verify_regeneration(&toy3(), 6, 10).unwrap();
        assert!(c.partial);
    }

    #[test]
    fn marginals_match_samples() {
        // 10⁵ words of length 4 from 𝐏*_s on TOY3, compared within 4 SE.
        let m = toy3();
        let s = m.symbol("s").unwrap();
        let n = 100_000;
        let mut rng = rng::stream(5, rng::SYMBOL_STREAM);
        let mut counts = std::collections::HashMap::<Vec<Symbol>, usize>::new();
        for _ in 0..n {
            let tr = sample_regenerated_with(&m, &[1.0, 0.0, 0.0], 4, &mut rng).unwrap();
            *counts.entry(tr.symbols).or_default() += 1;
        }
        let mut total = 0.0;
        for (word, c) in counts {
            let p = pstar_cylinder(&m, s, &word).unwrap();
            assert!(p > 0.0);
            total += p;
            let f = c as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() <= 4.0 * se + 1e-12, "{word:?}: {f} vs {p}");
        }
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedded_chain_frequencies_match_q() {
        let m = toy3();
        let q = crate::first_passage::build_Q(&m).unwrap();
        let tr = sample_regenerated(&m, &[1.0, 0.0, 0.0], 300_000, 8).unwrap();
        let counts = start_symbol_transitions(&m, &tr);
        for (a, row) in counts.iter().enumerate() {
            let n: usize = row.iter().sum();
            for (b, &c) in row.iter().enumerate() {
                let p = q.get(a, b);
                let f = c as f64 / n as f64;
                let se = (p * (1.0 - p) / n as f64).sqrt();
                assert!((f - p).abs() <= 4.0 * se + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn prefix_consistency(word in prop::collection::vec(0usize..4, 1..6), start in 0usize..3) {
            let m = toy3();
            let s = m.start_set()[start];
            let mut word = word;
            word[0] = s;
            let p = pstar_cylinder(&m, s, &word).unwrap();
            let mut sum = 0.0;
            for j in 0..m.n_symbols() {
                let mut ext = word.clone();
                ext.push(j);
                sum += pstar_cylinder(&m, s, &ext).unwrap();
            }
            prop_assert!((sum - p).abs() <= 1e-12);
        }

        #[test]
        fn traces_alternate_classes(seed in any::<u64>(), k in 0usize..3) {
            let m = toy3();
            let mut gamma = vec![0.0; 3];
            gamma[k] = 1.0;
            let tr = sample_regenerated(&m, &gamma, 200, seed).unwrap();
            prop_assert!(tr.check(&m).is_ok());
            let p = m.partition();
            let mut prev = tr.symbols[0];
            for &x in &tr.start_symbols {
                prop_assert_ne!(p.class_of(prev), p.class_of(x));
                prev = x;
            }
        }
    }
}
