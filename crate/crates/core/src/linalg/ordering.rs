//! Fill-reducing orderings for the sparse factorizations.

use std::collections::VecDeque;

/// Reverse Cuthill–McKee ordering of a symmetric adjacency structure.
///
/// `adj[i]` lists the neighbours of vertex `i` (self loops are ignored).
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().filter(|&&j| j != i).count())
        .collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&i| (degree[i], i));
    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, &degree, seed);
        let mut queue = VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v]
                .iter()
                .copied()
                .filter(|&j| j != v && !visited[j])
                .collect();
            nb.sort_by_key(|&j| (degree[j], j));
            nb.dedup();
            for j in nb {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    order.reverse();
    order
}

/// George–Liu style search for a vertex of large eccentricity in the
/// component containing `start`.
fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], start: usize) -> usize {
    let mut root = start;
    let (mut ecc, mut last_level) = bfs_levels(adj, root);
    for _ in 0..8 {
        let candidate = *last_level
            .iter()
            .min_by_key(|&&v| (degree[v], v))
            .expect("non-empty level");
        let (e, lvl) = bfs_levels(adj, candidate);
        if e > ecc {
            root = candidate;
            ecc = e;
            last_level = lvl;
        } else {
            break;
        }
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> (usize, Vec<usize>) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut frontier = vec![root];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &j in &adj[v] {
                if level[j] == usize::MAX {
                    level[j] = depth + 1;
                    next.push(j);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}

/// Inverse of a permutation given as `perm[new] = old`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Bandwidth of the adjacency under a permutation.
pub fn bandwidth(adj: &[Vec<usize>], perm: &[usize]) -> usize {
    let inv = invert(perm);
    let mut bw = 0;
    for (i, nb) in adj.iter().enumerate() {
        for &j in nb {
            bw = bw.max(inv[i].abs_diff(inv[j]));
        }
    }
    bw
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vec<usize>> {
        let id = |i: usize, j: usize| i * n + j;
        let mut adj = vec![Vec::new(); n * n];
        for i in 0..n {
            for j in 0..n {
                if i + 1 < n {
                    adj[id(i, j)].push(id(i + 1, j));
                    adj[id(i + 1, j)].push(id(i, j));
                }
                if j + 1 < n {
                    adj[id(i, j)].push(id(i, j + 1));
                    adj[id(i, j + 1)].push(id(i, j));
                }
            }
        }
        adj
    }

    #[test]
    fn rcm_is_a_permutation() {
        let adj = grid(7);
        let p = reverse_cuthill_mckee(&adj);
        let mut s = p.clone();
        s.sort_unstable();
        assert_eq!(s, (0..49).collect::<Vec<_>>());
    }

    #[test]
    fn rcm_does_not_worsen_scrambled_bandwidth() {
        let n = 8;
        let adj = grid(n);
        // scramble the labels, then check RCM recovers a narrow band
        let scramble: Vec<usize> = (0..n * n).map(|i| (i * 37) % (n * n)).collect();
        let inv = invert(&scramble);
        let sadj: Vec<Vec<usize>> = (0..n * n)
            .map(|new| adj[scramble[new]].iter().map(|&o| inv[o]).collect())
            .collect();
        let ident: Vec<usize> = (0..n * n).collect();
        let p = reverse_cuthill_mckee(&sadj);
        assert!(bandwidth(&sadj, &p) <= n + 1);
        assert!(bandwidth(&sadj, &p) < bandwidth(&sadj, &ident));
    }

    #[test]
    fn handles_disconnected_components() {
        let adj = vec![vec![1], vec![0], vec![], vec![4], vec![3]];
        let p = reverse_cuthill_mckee(&adj);
        assert_eq!(p.len(), 5);
    }
}
