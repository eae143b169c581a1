//! Alphabets, class partitions, region laws and validated model construction.
//!
//! Symbols are dense indices into an [`Alphabet`]; names only appear at the
//! configuration and reporting boundary. Each start symbol owns one region
//! law, an order-1 Markov kernel on the whole alphabet started from that
//! symbol.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub type Symbol = usize;

/// Tolerance on kernel row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Default step cap for a single region draw.
pub const DEFAULT_REGION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    names: Vec<String>,
    index: HashMap<String, Symbol>,
}

impl Alphabet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::AlphabetTooSmall(names.len()));
        }
        let mut index = HashMap::with_capacity(names.len());
        let mut owned = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let name = name.as_ref();
            if name.is_empty() {
                return Err(Error::EmptySymbolName(i));
            }
            if index.insert(name.to_string(), i).is_some() {
                return Err(Error::DuplicateSymbol(name.to_string()));
            }
            owned.push(name.to_string());
        }
        Ok(Self {
            names: owned,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, symbol: Symbol) -> &str {
        &self.names[symbol]
    }

    pub fn index_of(&self, name: &str) -> Result<Symbol> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(name.to_string()))
    }

    pub fn parse_word<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<Symbol>> {
        names.iter().map(|n| self.index_of(n.as_ref())).collect()
    }

    pub fn render_word(&self, word: &[Symbol]) -> Vec<String> {
        word.iter().map(|&s| self.names[s].clone()).collect()
    }
}

/// Start set and its partition into classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPartition {
    start_set: Vec<Symbol>,
    position: Vec<Option<usize>>,
    class_of: Vec<Option<usize>>,
    n_classes: usize,
}

impl ClassPartition {
    /// `classes` lists the start symbols of each class; the start set is
    /// their union, ordered by symbol index.
    pub fn new(alphabet_len: usize, classes: &[Vec<Symbol>]) -> Result<Self> {
        let mut class_of = vec![None; alphabet_len];
        for (c, members) in classes.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidPartition(format!("class {c} is empty")));
            }
            for &s in members {
                if s >= alphabet_len {
                    return Err(Error::SymbolOutOfRange(s));
                }
                if class_of[s].is_some() {
                    return Err(Error::InvalidPartition(format!(
                        "symbol index {s} appears in more than one class"
                    )));
                }
                class_of[s] = Some(c);
            }
        }
        let start_set: Vec<Symbol> = (0..alphabet_len).filter(|&i| class_of[i].is_some()).collect();
        if start_set.is_empty() {
            return Err(Error::EmptyStartSet);
        }
        if start_set.len() == alphabet_len {
            return Err(Error::StartSetNotStrict);
        }
        let mut position = vec![None; alphabet_len];
        for (k, &s) in start_set.iter().enumerate() {
            position[s] = Some(k);
        }
        Ok(Self {
            start_set,
            position,
            class_of,
            n_classes: classes.len(),
        })
    }

    pub fn start_set(&self) -> &[Symbol] {
        &self.start_set
    }

    pub fn n_starts(&self) -> usize {
        self.start_set.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_start(&self, symbol: Symbol) -> bool {
        self.class_of.get(symbol).is_some_and(|c| c.is_some())
    }

    /// Position of a start symbol inside [`Self::start_set`].
    pub fn position(&self, symbol: Symbol) -> Option<usize> {
        self.position.get(symbol).copied().flatten()
    }

    pub fn class_of(&self, symbol: Symbol) -> Option<usize> {
        self.class_of.get(symbol).copied().flatten()
    }

    /// `j ∈ 𝒮 ∖ C(g)`: hitting `j` ends a region governed by `g`.
    pub fn is_foreign(&self, g: Symbol, j: Symbol) -> bool {
        match (self.class_of(g), self.class_of(j)) {
            (Some(cg), Some(cj)) => cg != cj,
            _ => false,
        }
    }
}

/// Dense row-stochastic matrix with precomputed row CDFs for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    data: Vec<f64>,
    cdf: Vec<f64>,
}

impl Kernel {
    /// Unvalidated constructor; `rows` must be square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            assert_eq!(r.len(), n, "kernel must be square");
            data.extend_from_slice(r);
        }
        let mut cdf = Vec::with_capacity(n * n);
        for r in rows {
            let mut acc = 0.0;
            for &p in r {
                acc += p;
                cdf.push(acc);
            }
        }
        Self { n, data, cdf }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: Symbol) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: Symbol, j: Symbol) -> f64 {
        self.data[i * self.n + j]
    }

    /// Inverse-CDF step: the first `j` whose cumulative mass exceeds `u`.
    pub fn next_from_uniform(&self, i: Symbol, u: f64) -> Symbol {
        let cdf = &self.cdf[i * self.n..(i + 1) * self.n];
        let row = self.row(i);
        let total = cdf[self.n - 1];
        let target = u * total;
        for (j, &c) in cdf.iter().enumerate() {
            if target < c && row[j] > 0.0 {
                return j;
            }
        }
        // round-off at the top of the row
        (0..self.n).rev().find(|&j| row[j] > 0.0).unwrap_or(self.n - 1)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, i: Symbol, rng: &mut R) -> Symbol {
        self.next_from_uniform(i, rng.gen::<f64>())
    }
}

/// Region law 𝐏_s: a Markov kernel on the alphabet started at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLaw {
    pub start: Symbol,
    pub kernel: Kernel,
}

/// Name-level model description, as read from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ModelConfig {
    pub alphabet: Vec<String>,
    pub start_set: Vec<String>,
    pub classes: Vec<Vec<String>>,
    pub laws: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    alphabet: Alphabet,
    partition: ClassPartition,
    laws: Vec<RegionLaw>,
}

/// Validates `config` and returns the model. Every region must be absorbed
/// into a foreign class almost surely; that check is delegated to
/// [`crate::first_passage::transient_analysis`].
pub fn build_model(config: &ModelConfig) -> Result<ModelSpec> {
    let model = ModelSpec::from_config_unchecked(config)?;
    for &s in model.partition.start_set() {
        crate::first_passage::transient_analysis(&model, s)?;
    }
    Ok(model)
}

impl ModelSpec {
    /// Structural validation only (no absorption check).
    pub fn from_config_unchecked(config: &ModelConfig) -> Result<Self> {
        let alphabet = Alphabet::new(&config.alphabet)?;
        let n = alphabet.len();
        let mut classes = Vec::with_capacity(config.classes.len());
        for class in &config.classes {
            classes.push(alphabet.parse_word(class)?);
        }
        let declared: Vec<Symbol> = alphabet.parse_word(&config.start_set)?;
        let mut declared_sorted = declared.clone();
        declared_sorted.sort_unstable();
        let before = declared_sorted.len();
        declared_sorted.dedup();
        if declared_sorted.len() != before {
            return Err(Error::InvalidPartition("start set lists a symbol twice".into()));
        }
        if declared_sorted.is_empty() {
            return Err(Error::EmptyStartSet);
        }
        if declared_sorted.len() == n {
            return Err(Error::StartSetNotStrict);
        }
        let partition = ClassPartition::new(n, &classes)?;
        if partition.start_set() != declared_sorted.as_slice() {
            return Err(Error::InvalidPartition(
                "classes must cover exactly the start set".into(),
            ));
        }
        for name in config.laws.keys() {
            let s = alphabet.index_of(name)?;
            if !partition.is_start(s) {
                return Err(Error::UnexpectedLaw(name.clone()));
            }
        }
        let mut laws = Vec::with_capacity(partition.n_starts());
        for &s in partition.start_set() {
            let name = alphabet.name(s);
            let rows = config
                .laws
                .get(name)
                .ok_or_else(|| Error::MissingLaw(name.to_string()))?;
            validate_kernel(&alphabet, name, rows)?;
            laws.push(RegionLaw {
                start: s,
                kernel: Kernel::from_rows(rows),
            });
        }
        Ok(Self {
            alphabet,
            partition,
            laws,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn partition(&self) -> &ClassPartition {
        &self.partition
    }

    pub fn n_symbols(&self) -> usize {
        self.alphabet.len()
    }

    pub fn n_starts(&self) -> usize {
        self.partition.n_starts()
    }

    pub fn start_set(&self) -> &[Symbol] {
        self.partition.start_set()
    }

    pub fn laws(&self) -> &[RegionLaw] {
        &self.laws
    }

    /// Region law of start symbol `s`.
    pub fn law(&self, s: Symbol) -> Result<&RegionLaw> {
        let k = self.start_position(s)?;
        Ok(&self.laws[k])
    }

    pub fn start_position(&self, s: Symbol) -> Result<usize> {
        if s >= self.n_symbols() {
            return Err(Error::SymbolOutOfRange(s));
        }
        self.partition
            .position(s)
            .ok_or_else(|| Error::NotAStartSymbol(self.alphabet.name(s).to_string()))
    }

    pub fn symbol(&self, name: &str) -> Result<Symbol> {
        self.alphabet.index_of(name)
    }

    pub fn name(&self, s: Symbol) -> &str {
        self.alphabet.name(s)
    }

    /// Back to the name-level description.
    pub fn to_config(&self) -> ModelConfig {
        let n_classes = self.partition.n_classes();
        let mut classes = vec![Vec::new(); n_classes];
        for &s in self.start_set() {
            let c = self.partition.class_of(s).expect("start symbol has a class");
            classes[c].push(self.name(s).to_string());
        }
        let laws = self
            .laws
            .iter()
            .map(|law| {
                let rows = (0..self.n_symbols())
                    .map(|i| law.kernel.row(i).to_vec())
                    .collect();
                (self.name(law.start).to_string(), rows)
            })
            .collect();
        ModelConfig {
            alphabet: self.alphabet.names().to_vec(),
            start_set: self.start_set().iter().map(|&s| self.name(s).to_string()).collect(),
            classes,
            laws,
        }
    }
}

fn validate_kernel(alphabet: &Alphabet, law: &str, rows: &[Vec<f64>]) -> Result<()> {
    let n = alphabet.len();
    if rows.len() != n {
        return Err(Error::KernelShape {
            law: law.to_string(),
            row: rows.len(),
            expected: n,
            found: rows.len(),
        });
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::KernelShape {
                law: law.to_string(),
                row: i,
                expected: n,
                found: row.len(),
            });
        }
        for (j, &p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::KernelEntry {
                    law: law.to_string(),
                    row_name: alphabet.name(i).to_string(),
                    col_name: alphabet.name(j).to_string(),
                    value: p,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::KernelRowSum {
                law: law.to_string(),
                row: i,
                row_name: alphabet.name(i).to_string(),
                sum,
            });
        }
    }
    Ok(())
}

/// Class id of start symbol `s`.
pub fn class_of(model: &ModelSpec, s: Symbol) -> Result<usize> {
    model.start_position(s)?;
    Ok(model.partition.class_of(s).expect("start symbol has a class"))
}

/// Draws one region of 𝐏_s: the path from `s` up to and including the first
/// symbol of 𝒮 ∖ C(s). The returned path has length T + 1.
pub fn sample_region<R: Rng + ?Sized>(
    model: &ModelSpec,
    s: Symbol,
    rng: &mut R,
    cap: usize,
) -> Result<Vec<Symbol>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be >= 1".into()));
    }
    let law = model.law(s)?;
    let partition = model.partition();
    let mut path = vec![s];
    let mut cur = s;
    for _ in 0..cap {
        cur = law.kernel.sample_next(cur, rng);
        path.push(cur);
        if partition.is_foreign(s, cur) {
            return Ok(path);
        }
    }
    Err(Error::Truncated {
        start: model.name(s).to_string(),
        cap,
        path,
    })
}

/// Canonical fixtures used throughout tests and the bundled config files.
pub mod fixtures {
    use super::*;

    fn named(alphabet: &[&str], entries: &[(&str, &[(&str, f64)])]) -> Vec<Vec<f64>> {
        let n = alphabet.len();
        let idx = |name: &str| alphabet.iter().position(|a| *a == name).unwrap();
        let mut rows = vec![vec![0.0; n]; n];
        for (from, row) in entries {
            for (to, p) in row.iter() {
                rows[idx(from)][idx(to)] = *p;
            }
        }
        rows
    }

    /// I = {s, t, a, b}, 𝒮 = {s, t}, singleton classes, shared kernel.
    pub fn toy2_config() -> ModelConfig {
        let alphabet = ["s", "t", "a", "b"];
        let kernel = named(
            &alphabet,
            &[
                ("s", &[("a", 1.0)]),
                ("a", &[("a", 0.5), ("t", 0.5)]),
                ("t", &[("b", 1.0)]),
                ("b", &[("b", 0.5), ("s", 0.5)]),
            ],
        );
        ModelConfig {
            alphabet: alphabet.iter().map(|s| s.to_string()).collect(),
            start_set: vec!["s".into(), "t".into()],
            classes: vec![vec!["s".into()], vec!["t".into()]],
            laws: [("s".to_string(), kernel.clone()), ("t".to_string(), kernel)]
                .into_iter()
                .collect(),
        }
    }

    /// I = {s, t, u, a}, three singleton classes; from `a` each law routes
    /// to its two foreign start symbols with probability 1/4 each.
    pub fn toy3_config() -> ModelConfig {
        let alphabet = ["s", "t", "u", "a"];
        let law = |f1: &str, f2: &str| {
            named(
                &alphabet,
                &[
                    ("s", &[("a", 1.0)]),
                    ("t", &[("a", 1.0)]),
                    ("u", &[("a", 1.0)]),
                    ("a", &[("a", 0.5), (f1, 0.25), (f2, 0.25)]),
                ],
            )
        };
        ModelConfig {
            alphabet: alphabet.iter().map(|s| s.to_string()).collect(),
            start_set: vec!["s".into(), "t".into(), "u".into()],
            classes: vec![vec!["s".into()], vec!["t".into()], vec!["u".into()]],
            laws: [
                ("s".to_string(), law("t", "u")),
                ("t".to_string(), law("s", "u")),
                ("u".to_string(), law("s", "t")),
            ]
            .into_iter()
            .collect(),
        }
    }

    /// Deterministic regions of length 2: s→a→t, t→b→s. T ≡ 2, Q has period 2.
    pub fn period2_config() -> ModelConfig {
        let alphabet = ["s", "t", "a", "b"];
        let kernel = named(
            &alphabet,
            &[
                ("s", &[("a", 1.0)]),
                ("a", &[("t", 1.0)]),
                ("t", &[("b", 1.0)]),
                ("b", &[("s", 1.0)]),
            ],
        );
        ModelConfig {
            alphabet: alphabet.iter().map(|s| s.to_string()).collect(),
            start_set: vec!["s".into(), "t".into()],
            classes: vec![vec!["s".into()], vec!["t".into()]],
            laws: [("s".to_string(), kernel.clone()), ("t".to_string(), kernel)]
                .into_iter()
                .collect(),
        }
    }

    /// Every region has T ≡ 1: s→t, t→s directly; `x` is never visited.
    pub fn one_step_config() -> ModelConfig {
        let alphabet = ["s", "t", "x"];
        let kernel = named(
            &alphabet,
            &[
                ("s", &[("t", 1.0)]),
                ("t", &[("s", 1.0)]),
                ("x", &[("s", 1.0)]),
            ],
        );
        ModelConfig {
            alphabet: alphabet.iter().map(|s| s.to_string()).collect(),
            start_set: vec!["s".into(), "t".into()],
            classes: vec![vec!["s".into()], vec!["t".into()]],
            laws: [("s".to_string(), kernel.clone()), ("t".to_string(), kernel)]
                .into_iter()
                .collect(),
        }
    }

    /// Region of `s` loops on `a` forever; never reaches `t`.
    pub fn trapped_config() -> ModelConfig {
        let mut cfg = toy2_config();
        let alphabet = ["s", "t", "a", "b"];
        let trap = named(
            &alphabet,
            &[
                ("s", &[("a", 1.0)]),
                ("a", &[("a", 1.0)]),
                ("t", &[("b", 1.0)]),
                ("b", &[("b", 0.5), ("s", 0.5)]),
            ],
        );
        cfg.laws.insert("s".into(), trap);
        cfg
    }

    pub fn toy2() -> ModelSpec {
        build_model(&toy2_config()).expect("TOY2 is valid")
    }

    pub fn toy3() -> ModelSpec {
        build_model(&toy3_config()).expect("TOY3 is valid")
    }

    pub fn period2() -> ModelSpec {
        build_model(&period2_config()).expect("period-2 fixture is valid")
    }

    pub fn one_step() -> ModelSpec {
        build_model(&one_step_config()).expect("one-step fixture is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::testing::ScriptedRng;

    #[test]
    fn toy2_builds() {
        let m = toy2();
        assert_eq!(m.n_symbols(), 4);
        assert_eq!(m.n_starts(), 2);
        assert_eq!(m.partition().n_classes(), 2);
    }

    #[test]
    fn start_set_equal_to_alphabet_rejected() {
        let mut cfg = toy2_config();
        cfg.start_set = cfg.alphabet.clone();
        cfg.classes = vec![vec!["s".into(), "a".into()], vec!["t".into(), "b".into()]];
        let k = cfg.laws["s"].clone();
        cfg.laws.insert("a".into(), k.clone());
        cfg.laws.insert("b".into(), k);
        let err = build_model(&cfg).unwrap_err();
        assert_eq!(err, Error::StartSetNotStrict);
        assert!(err.to_string().contains("start set must be strict subset"));
    }

    #[test]
    fn substochastic_row_named() {
        let mut cfg = toy2_config();
        cfg.laws.get_mut("t").unwrap()[2] = vec![0.0, 0.4, 0.5, 0.0];
        match build_model(&cfg).unwrap_err() {
            Error::KernelRowSum { law, row, row_name, sum } => {
                assert_eq!(law, "t");
                assert_eq!(row, 2);
                assert_eq!(row_name, "a");
                assert!((sum - 0.9).abs() < 1e-15);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn duplicate_and_missing_errors() {
        let mut cfg = toy2_config();
        cfg.alphabet[3] = "a".into();
        assert_eq!(
            build_model(&cfg).unwrap_err(),
            Error::DuplicateSymbol("a".into())
        );
        let mut cfg = toy2_config();
        cfg.laws.remove("t");
        assert_eq!(build_model(&cfg).unwrap_err(), Error::MissingLaw("t".into()));
    }

    #[test]
    fn classes_must_match_start_set() {
        let mut cfg = toy2_config();
        cfg.classes = vec![vec!["s".into(), "t".into()], vec![]];
        assert!(matches!(
            build_model(&cfg).unwrap_err(),
            Error::InvalidPartition(_)
        ));
    }

    #[test]
    fn class_lookup() {
        let m = toy2();
        assert_eq!(class_of(&m, m.symbol("s").unwrap()).unwrap(), 0);
        assert_eq!(class_of(&m, m.symbol("t").unwrap()).unwrap(), 1);
        assert_eq!(
            class_of(&m, m.symbol("a").unwrap()).unwrap_err(),
            Error::NotAStartSymbol("a".into())
        );
    }

    #[test]
    fn forced_region_paths() {
        let m = toy2();
        let [s, t, a] = ["s", "t", "a"].map(|n| m.symbol(n).unwrap());
        // s→a is certain; row `a` lists t before a, so u < 1/2 picks a→t.
        let mut rng = ScriptedRng::new(&[0.3, 0.25]);
        assert_eq!(sample_region(&m, s, &mut rng, 10).unwrap(), vec![s, a, t]);
        let mut rng = ScriptedRng::new(&[0.3, 0.75, 0.25]);
        assert_eq!(sample_region(&m, s, &mut rng, 10).unwrap(), vec![s, a, a, t]);
    }

    #[test]
    fn trapped_region_truncates() {
        let m = ModelSpec::from_config_unchecked(&trapped_config()).unwrap();
        let s = m.symbol("s").unwrap();
        let mut rng = ScriptedRng::new(&[0.5]);
        match sample_region(&m, s, &mut rng, 5).unwrap_err() {
            Error::Truncated { path, cap, .. } => {
                assert_eq!(cap, 5);
                assert_eq!(path.len(), 6);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            build_model(&trapped_config()).unwrap_err(),
            Error::NonAbsorbing { .. }
        ));
    }

    #[test]
    fn config_round_trip() {
        let m = toy3();
        assert_eq!(build_model(&m.to_config()).unwrap(), m);
    }
}
