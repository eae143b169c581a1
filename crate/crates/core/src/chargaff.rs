//! Reverse-complement parity on finite-alphabet sequences.
//!
//! An involution φ on letters acts on words by w ↦ φ(reverse(w)). A law
//! satisfies the parity rule up to length t when P(w) = P(φ(reverse(w)))
//! for every word of length ≤ t. On empirical k-mer tables both the rule
//! and its stationarity consequence are measured as defects.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Involution {
    letters: Vec<char>,
    map: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
struct InvolutionFile {
    letters: Vec<String>,
    pairs: Vec<(String, String)>,
}

fn single_char(s: &str) -> Result<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(Error::InvalidInvolution(format!("`{s}` is not a single letter"))),
    }
}

impl Involution {
    /// Builds φ from swapped pairs; letters not in any pair are fixed.
    pub fn from_pairs(letters: &[char], pairs: &[(char, char)]) -> Result<Self> {
        let pos = |c: char| {
            letters
                .iter()
                .position(|&l| l == c)
                .ok_or_else(|| Error::InvalidInvolution(format!("`{c}` is not a letter")))
        };
        for (i, a) in letters.iter().enumerate() {
            if letters[..i].contains(a) {
                return Err(Error::InvalidInvolution(format!("duplicate letter `{a}`")));
            }
        }
        let mut map: Vec<Option<usize>> = vec![None; letters.len()];
        for &(a, b) in pairs {
            let (i, j) = (pos(a)?, pos(b)?);
            if map[i].is_some() || map[j].is_some() {
                return Err(Error::InvalidInvolution(format!("letter in more than one pair: ({a}, {b})")));
            }
            map[i] = Some(j);
            map[j] = Some(i);
        }
        let map = map.iter().enumerate().map(|(i, m)| m.unwrap_or(i)).collect();
        Self::from_map(letters, map)
    }

    /// Checks φ∘φ = id.
    pub fn from_map(letters: &[char], map: Vec<usize>) -> Result<Self> {
        if map.len() != letters.len() {
            return Err(Error::InvalidInvolution("map and alphabet differ in size".into()));
        }
        for (i, &j) in map.iter().enumerate() {
            if j >= map.len() || map[j] != i {
                return Err(Error::InvalidInvolution(format!(
                    "φ(φ({})) ≠ {}",
                    letters[i], letters[i]
                )));
            }
        }
        Ok(Self {
            letters: letters.to_vec(),
            map,
        })
    }

    /// A↔T, C↔G on the alphabet ACGT.
    pub fn dna() -> Self {
        Self::from_json(include_str!("../fixtures/dna_involution.json")).expect("bundled involution is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InvolutionFile = serde_json::from_str(text).map_err(|e| Error::Config {
            path: "/".into(),
            message: e.to_string(),
        })?;
        let letters = file.letters.iter().map(|s| single_char(s)).collect::<Result<Vec<_>>>()?;
        let pairs = file
            .pairs
            .iter()
            .map(|(a, b)| Ok((single_char(a)?, single_char(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(&letters, &pairs)
    }

    pub fn letters(&self) -> &[char] {
        &self.letters
    }

    pub fn apply(&self, letter: usize) -> usize {
        self.map[letter]
    }

    /// φ(reverse(w)).
    pub fn reverse_complement(&self, word: &[usize]) -> Vec<usize> {
        word.iter().rev().map(|&c| self.map[c]).collect()
    }
}

/// How windows are placed on the sequence: starts at `offset`,
/// `offset + period`, ...; circular counting wraps windows around the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountOptions {
    pub circular: bool,
    pub period: usize,
    pub offset: usize,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self {
            circular: false,
            period: 1,
            offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmerMeasure {
    letters: Vec<char>,
    k: usize,
    options: CountOptions,
    sample_size: usize,
    /// tables[m - 1]: encoded word of length m → count.
    tables: Vec<BTreeMap<u64, u64>>,
    /// Number of windows per length.
    windows: Vec<u64>,
}

/// Maps `seq` to letter indices, failing on the first unknown character.
pub fn encode_sequence(seq: &str, letters: &[char]) -> Result<Vec<usize>> {
    seq.chars()
        .enumerate()
        .map(|(position, ch)| {
            letters
                .iter()
                .position(|&l| l == ch)
                .ok_or(Error::UnknownSequenceSymbol { ch, position })
        })
        .collect()
}

fn check_encoding(size: usize, k: usize) -> Result<()> {
    let mut acc: u64 = 1;
    for _ in 0..k {
        acc = acc
            .checked_mul(size as u64)
            .ok_or(Error::EncodingOverflow { size, k })?;
    }
    Ok(())
}

pub fn empirical_kmer_measure(seq: &str, letters: &[char], k: usize, options: CountOptions) -> Result<KmerMeasure> {
    let encoded = encode_sequence(seq, letters)?;
    KmerMeasure::from_indices(&encoded, letters, k, options)
}

impl KmerMeasure {
    pub fn from_indices(seq: &[usize], letters: &[char], k: usize, options: CountOptions) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if options.period == 0 {
            return Err(Error::InvalidArgument("period must be >= 1".into()));
        }
        if seq.len() < k.max(options.offset + 1) {
            return Err(Error::SequenceTooShort { len: seq.len(), k });
        }
        check_encoding(letters.len(), k)?;
        let base = letters.len() as u64;
        let n = seq.len();
        let mut tables = vec![BTreeMap::new(); k];
        let mut windows = vec![0u64; k];
        let starts: Vec<usize> = if options.circular {
            (options.offset..options.offset + n)
                .step_by(options.period)
                .map(|p| p % n)
                .collect()
        } else {
            (options.offset..n).step_by(options.period).collect()
        };
        for p in starts {
            let mut code = 0u64;
            for m in 1..=k {
                let idx = p + m - 1;
                if idx >= n && !options.circular {
                    break;
                }
                code = code * base + seq[idx % n] as u64;
                *tables[m - 1].entry(code).or_insert(0) += 1;
                windows[m - 1] += 1;
            }
        }
        Ok(Self {
            letters: letters.to_vec(),
            k,
            options,
            sample_size: n,
            tables,
            windows,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn letters(&self) -> &[char] {
        &self.letters
    }

    pub fn options(&self) -> CountOptions {
        self.options
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn windows(&self, m: usize) -> u64 {
        self.windows[m - 1]
    }

    pub fn encode(&self, word: &[usize]) -> u64 {
        word.iter().fold(0u64, |acc, &c| acc * self.letters.len() as u64 + c as u64)
    }

    pub fn decode(&self, code: u64, m: usize) -> Vec<usize> {
        let base = self.letters.len() as u64;
        let mut out = vec![0; m];
        let mut c = code;
        for slot in out.iter_mut().rev() {
            *slot = (c % base) as usize;
            c /= base;
        }
        out
    }

    pub fn render(&self, word: &[usize]) -> String {
        word.iter().map(|&c| self.letters[c]).collect()
    }

    pub fn count(&self, word: &[usize]) -> u64 {
        if word.is_empty() || word.len() > self.k {
            return 0;
        }
        *self.tables[word.len() - 1].get(&self.encode(word)).unwrap_or(&0)
    }

    pub fn frequency(&self, word: &[usize]) -> f64 {
        if word.is_empty() || word.len() > self.k {
            return 0.0;
        }
        let w = self.windows[word.len() - 1];
        if w == 0 {
            0.0
        } else {
            self.count(word) as f64 / w as f64
        }
    }

    /// Words of length `m` with non-zero count, in code order.
    pub fn observed(&self, m: usize) -> impl Iterator<Item = (Vec<usize>, u64)> + '_ {
        self.tables[m - 1].iter().map(move |(&c, &n)| (self.decode(c, m), n))
    }

    /// CSV `word,count,frequency` over all observed words, by length then code.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("word,count,frequency\n");
        for m in 1..=self.k {
            for (w, n) in self.observed(m) {
                out.push_str(&format!("{},{},{}\n", self.render(&w), n, self.frequency(&w)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectReport {
    pub defect: f64,
    /// Maximising word, rendered; empty when every table entry agrees.
    pub argmax: String,
    pub partner: String,
}

/// max over words of length ≤ t of |P(w) − P(φ(reverse(w)))|.
pub fn cspr_defect(m: &KmerMeasure, phi: &Involution, t: usize) -> Result<DefectReport> {
    if t == 0 || t > m.k {
        return Err(Error::InvalidArgument(format!("t must lie in 1..={}", m.k)));
    }
    if phi.letters() != m.letters() {
        return Err(Error::InvalidInvolution("alphabet differs from the measure's".into()));
    }
    let mut report = DefectReport {
        defect: 0.0,
        argmax: String::new(),
        partner: String::new(),
    };
    for len in 1..=t {
        // words absent from the table have partner defect P(partner), which
        // is covered when the partner itself is visited
        for (w, _) in m.observed(len) {
            let r = phi.reverse_complement(&w);
            let d = (m.frequency(&w) - m.frequency(&r)).abs();
            if d > report.defect {
                report.defect = d;
                report.argmax = m.render(&w);
                report.partner = m.render(&r);
            }
        }
    }
    Ok(report)
}

/// max over words of length ≤ `max_len` of |P_1(w) − P_0(w)|.
pub fn shift_defect(offset0: &KmerMeasure, offset1: &KmerMeasure, max_len: usize) -> Result<DefectReport> {
    if max_len == 0 || max_len > offset0.k.min(offset1.k) {
        return Err(Error::InvalidArgument(format!(
            "max_len must lie in 1..={}",
            offset0.k.min(offset1.k)
        )));
    }
    if offset0.letters != offset1.letters {
        return Err(Error::InvalidArgument("measures use different alphabets".into()));
    }
    let mut report = DefectReport {
        defect: 0.0,
        argmax: String::new(),
        partner: String::new(),
    };
    for len in 1..=max_len {
        let mut codes: Vec<u64> = offset0.tables[len - 1].keys().copied().collect();
        codes.extend(offset1.tables[len - 1].keys());
        codes.sort_unstable();
        codes.dedup();
        for c in codes {
            let w = offset0.decode(c, len);
            let d = (offset1.frequency(&w) - offset0.frequency(&w)).abs();
            if d > report.defect {
                report.defect = d;
                report.argmax = offset0.render(&w);
                report.partner = report.argmax.clone();
            }
        }
    }
    Ok(report)
}

/// Measures at offsets 0 and 1 of the same sequence under `options`
/// (whose own offset is ignored).
pub fn offset_pair(seq: &[usize], letters: &[char], k: usize, options: CountOptions) -> Result<(KmerMeasure, KmerMeasure)> {
    let m0 = KmerMeasure::from_indices(seq, letters, k, CountOptions { offset: 0, ..options })?;
    let m1 = KmerMeasure::from_indices(seq, letters, k, CountOptions { offset: 1, ..options })?;
    Ok((m0, m1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockedSequence {
    pub blocks: Vec<String>,
    /// Trailing letters that did not fill a block.
    pub dropped: usize,
}

/// Non-overlapping d-blocks (y_{dn}, …, y_{d(n+1)−1}).
pub fn block_measure(seq: &str, d: usize) -> Result<BlockedSequence> {
    if d == 0 {
        return Err(Error::InvalidArgument("block length must be >= 1".into()));
    }
    let chars: Vec<char> = seq.chars().collect();
    let blocks = chars.chunks_exact(d).map(|c| c.iter().collect()).collect();
    Ok(BlockedSequence {
        blocks,
        dropped: chars.len() % d,
    })
}

/// Symbol-wise projection ψ.
pub fn project_sequence(seq: &[String], psi: &BTreeMap<String, String>) -> Result<Vec<String>> {
    seq.iter()
        .map(|s| psi.get(s).cloned().ok_or_else(|| Error::UnknownSymbol(s.clone())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct GeneticCode {
    pub name: String,
    pub table: BTreeMap<String, String>,
}

impl GeneticCode {
    pub fn standard() -> Self {
        serde_json::from_str(include_str!("../fixtures/genetic_code.json")).expect("bundled genetic code is valid")
    }
}

/// Start and stop codon classes.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct CodonSets {
    pub start: Vec<String>,
    pub stop: Vec<String>,
}

impl CodonSets {
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../fixtures/codon_sets.json")).expect("bundled codon sets are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DNA: [char; 4] = ['A', 'C', 'G', 'T'];

    fn circular() -> CountOptions {
        CountOptions {
            circular: true,
            ..CountOptions::default()
        }
    }

    #[test]
    fn involution_checks() {
        let phi = Involution::dna();
        assert_eq!(phi.letters(), &DNA);
        assert_eq!(phi.apply(0), 3);
        assert_eq!(phi.apply(1), 2);
        assert_eq!(phi.reverse_complement(&[0, 0, 1]), vec![2, 3, 3]);
        assert!(Involution::from_map(&DNA, vec![1, 2, 3, 0]).is_err());
        assert!(Involution::from_pairs(&DNA, &[('A', 'T'), ('T', 'C')]).is_err());
        assert!(Involution::from_pairs(&DNA, &[('A', 'X')]).is_err());
        let fixed = Involution::from_pairs(&['0', '1'], &[]).unwrap();
        assert_eq!(fixed.reverse_complement(&[0, 1]), vec![1, 0]);
    }

    #[test]
    fn circular_atcg() {
        let m = empirical_kmer_measure("ATCG", &DNA, 2, circular()).unwrap();
        for w in ["AT", "TC", "CG", "GA"] {
            let idx = encode_sequence(w, &DNA).unwrap();
            assert_eq!(m.frequency(&idx), 0.25);
        }
        assert_eq!(m.frequency(&encode_sequence("AA", &DNA).unwrap()), 0.0);
        let r = cspr_defect(&m, &Involution::dna(), 2).unwrap();
        assert_eq!(r.defect, 0.0);
        let seq = encode_sequence("ATCG", &DNA).unwrap();
        let (m0, m1) = offset_pair(&seq, &DNA, 2, circular()).unwrap();
        assert_eq!(shift_defect(&m0, &m1, 1).unwrap().defect, 0.0);
        assert_eq!(shift_defect(&m0, &m1, 2).unwrap().defect, 0.0);
    }

    #[test]
    fn constant_sequence() {
        let m = empirical_kmer_measure("AAAA", &DNA, 1, CountOptions::default()).unwrap();
        assert_eq!(m.frequency(&[0]), 1.0);
        let r = cspr_defect(&m, &Involution::dna(), 1).unwrap();
        assert_eq!(r.defect, 1.0);
        assert_eq!((r.argmax.as_str(), r.partner.as_str()), ("A", "T"));
        assert!(matches!(
            empirical_kmer_measure("AC", &DNA, 3, CountOptions::default()),
            Err(Error::SequenceTooShort { len: 2, k: 3 })
        ));
        assert_eq!(
            empirical_kmer_measure("ACNT", &DNA, 1, CountOptions::default()),
            Err(Error::UnknownSequenceSymbol { ch: 'N', position: 2 })
        );
        assert!(cspr_defect(&m, &Involution::dna(), 2).is_err());
    }

    #[test]
    fn alternating_sequence_is_not_stationary() {
        let letters = ['A', 'B'];
        let seq = encode_sequence(&"AB".repeat(50), &letters).unwrap();
        let opts = CountOptions {
            period: 2,
            ..CountOptions::default()
        };
        let (m0, m1) = offset_pair(&seq, &letters, 1, opts).unwrap();
        let r = shift_defect(&m0, &m1, 1).unwrap();
        assert_eq!(r.defect, 1.0);
    }

    #[test]
    fn uniform_product_measure() {
        // every word of length ≤ 2 appears exactly once in a circular de Bruijn sequence
        let m = empirical_kmer_measure("AACAGATCCGCTGGTT", &DNA, 2, circular()).unwrap();
        for (_, n) in m.observed(2) {
            assert_eq!(n, 1);
        }
        assert_eq!(cspr_defect(&m, &Involution::dna(), 2).unwrap().defect, 0.0);
    }

    #[test]
    fn encoding_overflow() {
        let letters: Vec<char> = ('a'..='z').collect();
        assert!(matches!(
            KmerMeasure::from_indices(&[0; 20], &letters, 14, CountOptions::default()),
            Err(Error::EncodingOverflow { .. })
        ));
    }

    #[test]
    fn blocking_and_projection() {
        let b = block_measure("ATCGAT", 3).unwrap();
        assert_eq!(b.blocks, vec!["ATC", "GAT"]);
        assert_eq!(b.dropped, 0);
        assert_eq!(block_measure("ATCGA", 3).unwrap().dropped, 2);
        assert_eq!(block_measure("ACG", 1).unwrap().blocks, vec!["A", "C", "G"]);
        assert!(block_measure("A", 0).is_err());
        let parity: BTreeMap<String, String> = [("00", "even"), ("01", "odd"), ("10", "odd"), ("11", "even")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let blocks = block_measure("0110", 2).unwrap().blocks;
        assert_eq!(project_sequence(&blocks, &parity).unwrap(), vec!["odd", "odd"]);
        assert_eq!(
            project_sequence(&["2".to_string()], &parity),
            Err(Error::UnknownSymbol("2".into()))
        );
        let code = GeneticCode::standard();
        assert_eq!(code.table.len(), 64);
        let codons = block_measure("ATGGCCTAA", 3).unwrap().blocks;
        assert_eq!(project_sequence(&codons, &code.table).unwrap(), vec!["M", "A", "*"]);
        let sets = CodonSets::bundled();
        assert_eq!(sets.start, vec!["ATG", "GTG", "TTG"]);
        assert_eq!(sets.stop, vec!["TAA", "TAG", "TGG"]);
    }

    #[test]
    fn csv_output() {
        let m = empirical_kmer_measure("ATCG", &DNA, 1, CountOptions::default()).unwrap();
        assert_eq!(m.to_csv(), "word,count,frequency\nA,1,0.25\nC,1,0.25\nG,1,0.25\nT,1,0.25\n");
    }

    proptest! {
        #[test]
        fn involution_is_its_own_inverse(word in prop::collection::vec(0usize..4, 0..12)) {
            let phi = Involution::dna();
            prop_assert_eq!(phi.reverse_complement(&phi.reverse_complement(&word)), word);
        }

        #[test]
        fn blocking_preserves_length(seq in "[ACGT]{0,40}", d in 1usize..6) {
            let b = block_measure(&seq, d).unwrap();
            prop_assert_eq!(d * b.blocks.len() + b.dropped, seq.len());
        }

        #[test]
        fn cspr_defect_is_symmetric(seq in "[ACGT]{8,40}") {
            // the defect of the reverse complement sequence equals the original's
            let phi = Involution::dna();
            let idx = encode_sequence(&seq, &DNA).unwrap();
            let rc: String = phi.reverse_complement(&idx).iter().map(|&c| DNA[c]).collect();
            let a = cspr_defect(&empirical_kmer_measure(&seq, &DNA, 3, circular()).unwrap(), &phi, 3).unwrap();
            let b = cspr_defect(&empirical_kmer_measure(&rc, &DNA, 3, circular()).unwrap(), &phi, 3).unwrap();
            prop_assert!((a.defect - b.defect).abs() < 1e-12);
        }

        #[test]
        fn linear_shift_defect_is_an_edge_effect(seq in "[ACGT]{10,80}", t in 2usize..5) {
            let idx = encode_sequence(&seq, &DNA).unwrap();
            let (m0, m1) = offset_pair(&idx, &DNA, t, CountOptions::default()).unwrap();
            let r = shift_defect(&m0, &m1, t - 1).unwrap();
            prop_assert!(r.defect <= 2.0 * t as f64 / (seq.len() - t) as f64);
        }
    }
}
