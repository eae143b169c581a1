//! Finite Markov chain on (current symbol, governing start symbol) pairs.
//!
//! From `(i, g)` the next symbol `j` is drawn from the kernel of `g`, row `i`.
//! If `j ∈ 𝒮 ∖ C(g)` the chain switches to governing `j` with probability
//! `accept[j]` (always 1 in the base model) and otherwise keeps `g`. The
//! symbol marginal started from `(s, s)` is the regenerated law 𝐏*_s.
//!
//! Cylinder probabilities are evaluated by a forward pass over the governing
//! coordinate. Mark constraints on the uniform coordinate attached to each
//! position are integrated analytically with canonical acceptance regions
//! `R_s = [0, ε(s))` (and `R_i = ∅` for non-start symbols).

use rand::Rng;
use serde::Serialize;

use crate::model::{ModelSpec, Symbol};

/// Constraint on the mark `Z_k ∈ [0, 1]` at one position of a cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MarkConstraint {
    Any,
    /// `Z_k ∈ R_{X_k}`.
    Accept,
    /// `Z_k ∉ R_{X_k}`.
    Reject,
    /// `Z_k ∈ [a, b)`.
    Interval(f64, f64),
}

impl MarkConstraint {
    /// Lebesgue measure of the constraint set inside and outside `[0, eps)`.
    pub fn split(&self, eps: f64) -> (f64, f64) {
        match *self {
            MarkConstraint::Any => (eps, 1.0 - eps),
            MarkConstraint::Accept => (eps, 0.0),
            MarkConstraint::Reject => (0.0, 1.0 - eps),
            MarkConstraint::Interval(a, b) => {
                let inside = (b.min(eps) - a).max(0.0);
                (inside, (b - a) - inside)
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            MarkConstraint::Interval(a, b) => 0.0 <= a && a < b && b <= 1.0,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// `j` does not end the region.
    Continue,
    /// Foreign hit that starts a new region.
    Accepted,
    /// Foreign hit whose start was rejected.
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub symbol: Symbol,
    /// Governing start-set position after the step.
    pub governing: usize,
    pub prob: f64,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedChain {
    model: ModelSpec,
    accept: Vec<f64>,
}

/// Governing distribution for a fixed current symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub symbol: Symbol,
    pub weights: Vec<f64>,
}

impl Forward {
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Measure on lifted states, split by how the current position was reached.
/// `fresh[k]` is mass at `(s_k, s_k)` that starts a region at this time
/// (its mark is uniform on `R_{s_k}`); `settled[i * n_starts + k]` is mass
/// at `(i, s_k)` inside a running region (mark uniform on `[0, 1]`, rejected
/// if `i` is foreign to `s_k`).
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMeasure {
    pub fresh: Vec<f64>,
    pub settled: Vec<f64>,
}

impl LiftedMeasure {
    pub fn total(&self) -> f64 {
        self.fresh.iter().sum::<f64>() + self.settled.iter().sum::<f64>()
    }

    /// Symbol marginal.
    pub fn symbol_marginal(&self, chain: &LiftedChain) -> Vec<f64> {
        let ns = chain.n_starts();
        let mut out = vec![0.0; chain.n_symbols()];
        for (k, &f) in self.fresh.iter().enumerate() {
            out[chain.model.start_set()[k]] += f;
        }
        for (idx, &w) in self.settled.iter().enumerate() {
            out[idx / ns] += w;
        }
        out
    }
}

impl LiftedChain {
    /// Acceptance `accept[j]` applies to foreign hits on start symbol `j`.
    pub fn new(model: &ModelSpec, accept: Vec<f64>) -> Self {
        assert_eq!(accept.len(), model.n_symbols());
        Self {
            model: model.clone(),
            accept,
        }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn acceptance(&self) -> &[f64] {
        &self.accept
    }

    pub fn n_symbols(&self) -> usize {
        self.model.n_symbols()
    }

    pub fn n_starts(&self) -> usize {
        self.model.n_starts()
    }

    pub fn n_states(&self) -> usize {
        self.n_symbols() * self.n_starts()
    }

    pub fn state_index(&self, symbol: Symbol, governing: usize) -> usize {
        symbol * self.n_starts() + governing
    }

    pub fn state_of(&self, index: usize) -> (Symbol, usize) {
        (index / self.n_starts(), index % self.n_starts())
    }

    /// Acceptance-region size of `j`: ε(j) for start symbols, 0 otherwise.
    pub fn region_size(&self, j: Symbol) -> f64 {
        if self.model.partition().is_start(j) {
            self.accept[j]
        } else {
            0.0
        }
    }

    pub fn transitions(&self, i: Symbol, k: usize) -> Vec<Transition> {
        let g = self.model.start_set()[k];
        let kernel = &self.model.laws()[k].kernel;
        let mut out = Vec::new();
        for (j, &p) in kernel.row(i).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            if self.model.partition().is_foreign(g, j) {
                let eps = self.accept[j];
                let kj = self.model.partition().position(j).expect("foreign symbol is a start");
                if eps > 0.0 {
                    out.push(Transition {
                        symbol: j,
                        governing: kj,
                        prob: p * eps,
                        kind: StepKind::Accepted,
                    });
                }
                if eps < 1.0 {
                    out.push(Transition {
                        symbol: j,
                        governing: k,
                        prob: p * (1.0 - eps),
                        kind: StepKind::Rejected,
                    });
                }
            } else {
                out.push(Transition {
                    symbol: j,
                    governing: k,
                    prob: p,
                    kind: StepKind::Continue,
                });
            }
        }
        out
    }

    /// Dense kernel on lifted states, row-major.
    pub fn kernel_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..self.n_symbols() {
            for k in 0..self.n_starts() {
                let from = self.state_index(i, k);
                for t in self.transitions(i, k) {
                    rows[from][self.state_index(t.symbol, t.governing)] += t.prob;
                }
            }
        }
        rows
    }

    pub fn max_row_defect(&self) -> f64 {
        self.kernel_matrix()
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Point mass on `(s_k, s_k)` for each start position, weighted by `gamma`.
    pub fn initial_measure(&self, gamma: &[f64]) -> LiftedMeasure {
        LiftedMeasure {
            fresh: gamma.to_vec(),
            settled: vec![0.0; self.n_states()],
        }
    }

    /// One unconstrained step of the full chain.
    pub fn advance(&self, m: &LiftedMeasure) -> LiftedMeasure {
        let ns = self.n_starts();
        let mut out = LiftedMeasure {
            fresh: vec![0.0; ns],
            settled: vec![0.0; self.n_states()],
        };
        let mut push = |i: Symbol, k: usize, w: f64| {
            if w == 0.0 {
                return;
            }
            for t in self.transitions(i, k) {
                match t.kind {
                    StepKind::Accepted => out.fresh[t.governing] += w * t.prob,
                    _ => out.settled[self.state_index(t.symbol, t.governing)] += w * t.prob,
                }
            }
        };
        for (k, &w) in m.fresh.iter().enumerate() {
            push(self.model.start_set()[k], k, w);
        }
        for (idx, &w) in m.settled.iter().enumerate() {
            push(idx / ns, idx % ns, w);
        }
        out
    }

    /// One step that drops every path whose region ends (governing kept).
    pub fn advance_within_region(&self, m: &LiftedMeasure) -> LiftedMeasure {
        let ns = self.n_starts();
        let mut out = LiftedMeasure {
            fresh: vec![0.0; ns],
            settled: vec![0.0; self.n_states()],
        };
        let mut push = |i: Symbol, k: usize, w: f64| {
            if w == 0.0 {
                return;
            }
            for t in self.transitions(i, k) {
                if t.kind != StepKind::Accepted {
                    out.settled[self.state_index(t.symbol, t.governing)] += w * t.prob;
                }
            }
        };
        for (k, &w) in m.fresh.iter().enumerate() {
            push(self.model.start_set()[k], k, w);
        }
        for (idx, &w) in m.settled.iter().enumerate() {
            push(idx / ns, idx % ns, w);
        }
        out
    }

    /// Restricts `m` to positions showing `symbol` with mark constraint `c`.
    pub fn condition_first(&self, m: &LiftedMeasure, symbol: Symbol, c: MarkConstraint) -> Forward {
        let ns = self.n_starts();
        let mut weights = vec![0.0; ns];
        if let Some(k) = self.model.partition().position(symbol) {
            let fresh = m.fresh[k];
            if fresh != 0.0 {
                let eps = self.accept[symbol];
                let (inside, _) = c.split(eps);
                weights[k] += fresh * inside / eps;
            }
        }
        let eps = self.region_size(symbol);
        let (inside, outside) = c.split(eps);
        for (k, w) in weights.iter_mut().enumerate() {
            let mass = m.settled[self.state_index(symbol, k)];
            if mass == 0.0 {
                continue;
            }
            let g = self.model.start_set()[k];
            let factor = if self.model.partition().is_foreign(g, symbol) {
                // only rejected arrivals stay under g
                outside / (1.0 - eps)
            } else {
                inside + outside
            };
            *w += mass * factor;
        }
        Forward { symbol, weights }
    }

    /// Extends a forward pass by one position.
    pub fn step_forward(&self, f: &Forward, symbol: Symbol, c: MarkConstraint) -> Forward {
        let mut weights = vec![0.0; self.n_starts()];
        let eps = self.region_size(symbol);
        let (inside, outside) = c.split(eps);
        for (k, &w) in f.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let g = self.model.start_set()[k];
            let p = self.model.laws()[k].kernel.get(f.symbol, symbol);
            if p == 0.0 {
                continue;
            }
            if self.model.partition().is_foreign(g, symbol) {
                let kj = self.model.partition().position(symbol).expect("start symbol");
                weights[kj] += w * p * inside;
                weights[k] += w * p * outside;
            } else {
                weights[k] += w * p * (inside + outside);
            }
        }
        Forward { symbol, weights }
    }

    /// Probability of `word` (with marks) under `m`.
    pub fn cylinder(&self, m: &LiftedMeasure, word: &[Symbol], marks: Option<&[MarkConstraint]>) -> f64 {
        let mark = |l: usize| marks.map_or(MarkConstraint::Any, |c| c[l]);
        let Some((&first, rest)) = word.split_first() else {
            return m.total();
        };
        let mut f = self.condition_first(m, first, mark(0));
        for (l, &j) in rest.iter().enumerate() {
            if f.mass() == 0.0 {
                return 0.0;
            }
            f = self.step_forward(&f, j, mark(l + 1));
        }
        f.mass()
    }

    /// One sampled step from `(i, k)`. Without a mark stream every foreign
    /// hit is accepted (base model); with one, a uniform mark is drawn at
    /// every step and a foreign hit on `j` is accepted iff `mark < ε(j)`.
    pub fn sample_step<R: Rng + ?Sized, M: Rng + ?Sized>(
        &self,
        i: Symbol,
        k: usize,
        rng: &mut R,
        marks: Option<&mut M>,
    ) -> SampledStep {
        let g = self.model.start_set()[k];
        let j = self.model.laws()[k].kernel.sample_next(i, rng);
        let z = marks.map(|m| m.gen::<f64>());
        let foreign = self.model.partition().is_foreign(g, j);
        let accepted = foreign
            && match z {
                Some(z) => z < self.accept[j],
                None => true,
            };
        let governing = if accepted {
            self.model.partition().position(j).expect("start symbol")
        } else {
            k
        };
        SampledStep {
            symbol: j,
            governing,
            mark: z,
            foreign,
            regen: accepted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledStep {
    pub symbol: Symbol,
    pub governing: usize,
    pub mark: Option<f64>,
    pub foreign: bool,
    pub regen: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constraint_splits() {
        assert_eq!(MarkConstraint::Any.split(0.25), (0.25, 0.75));
        assert_eq!(MarkConstraint::Accept.split(0.25), (0.25, 0.0));
        assert_eq!(MarkConstraint::Reject.split(0.25), (0.0, 0.75));
        let (i, o) = MarkConstraint::Interval(0.1, 0.5).split(0.25);
        assert!((i - 0.15).abs() < 1e-15 && (o - 0.25).abs() < 1e-15);
        assert_eq!(MarkConstraint::Interval(0.5, 0.75).split(0.25), (0.0, 0.25));
        assert!(!MarkConstraint::Interval(0.5, 0.5).is_valid());
    }
}
