//! Small dense linear-algebra and graph helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(format!("{n}x{n} system")))
}

/// Largest eigenvalue modulus. Falls back to a power-iteration bound when the
/// Schur decomposition does not converge.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 10_000) {
        let eig = schur.complex_eigenvalues();
        return eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    // Gelfand: ||M^k||^(1/k) with k a power of two.
    let mut p = m.clone();
    let mut k = 1.0;
    for _ in 0..10 {
        p = &p * &p;
        k *= 2.0;
    }
    let norm = p
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    norm.powf(1.0 / k)
}

/// Adjacency of a nonnegative matrix given as rows.
pub fn support_graph(rows: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    rows.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, &p)| p > threshold)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

pub fn reachable_from(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Communicating classes, each flagged closed (no edge leaves it).
pub fn communicating_classes(adj: &[Vec<usize>]) -> Vec<(Vec<usize>, bool)> {
    let n = adj.len();
    let reach: Vec<Vec<bool>> = (0..n).map(|u| reachable_from(adj, u)).collect();
    let mut assigned = vec![false; n];
    let mut out = Vec::new();
    for u in 0..n {
        if assigned[u] {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&v| reach[u][v] && reach[v][u]).collect();
        for &v in &members {
            assigned[v] = true;
        }
        let closed = members
            .iter()
            .all(|&v| adj[v].iter().all(|w| members.contains(w)));
        out.push((members, closed));
    }
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn gcd_all<I: IntoIterator<Item = usize>>(values: I) -> usize {
    values.into_iter().fold(0, gcd)
}

/// Period of an irreducible graph via BFS levels: gcd over edges u→v of
/// level(u) + 1 − level(v). Returns `None` if the graph is not irreducible.
pub fn period(adj: &[Vec<usize>]) -> Option<usize> {
    let n = adj.len();
    if n == 0 {
        return None;
    }
    let classes = communicating_classes(adj);
    if classes.len() != 1 {
        return None;
    }
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0;
    for u in 0..n {
        for &v in &adj[u] {
            let diff = (level[u] + 1).abs_diff(level[v]);
            g = gcd(g, diff);
        }
    }
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periods() {
        assert_eq!(period(&[vec![1], vec![0]]), Some(2));
        assert_eq!(period(&[vec![1, 2], vec![0, 2], vec![0, 1]]), Some(1));
        assert_eq!(period(&[vec![1], vec![2], vec![0]]), Some(3));
        assert_eq!(period(&[vec![0], vec![1]]), None);
    }

    #[test]
    fn radius_of_substochastic_block() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.5]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!((spectral_radius(&rot) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_classes() {
        let adj = vec![vec![1], vec![1], vec![2, 0]];
        let classes = communicating_classes(&adj);
        let closed: Vec<_> = classes.iter().filter(|c| c.1).map(|c| c.0.clone()).collect();
        assert_eq!(closed, vec![vec![1]]);
    }
}
