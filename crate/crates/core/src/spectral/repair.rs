//! Makes every cluster edge-connected after k-means.

use std::collections::VecDeque;

use super::DualGraph;

/// Edge-connected pieces of each cluster: per face, a piece id; per piece,
/// its cluster and face count.
fn pieces(graph: &DualGraph, assignment: &[usize]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let n = assignment.len();
    let mut piece = vec![usize::MAX; n];
    let mut info = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if piece[start] != usize::MAX {
            continue;
        }
        let id = info.len();
        let cluster = assignment[start];
        let mut size = 0;
        piece[start] = id;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &(v, _) in graph.incident(u) {
                if piece[v] == usize::MAX && assignment[v] == cluster {
                    piece[v] = id;
                    queue.push_back(v);
                }
            }
        }
        info.push((cluster, size));
    }
    (piece, info)
}

/// Keeps the largest piece of every cluster (the earliest on ties) and
/// hands each remaining piece to the settled neighbour reached through its
/// cheapest dual edge, repeating until every face is settled. Cluster
/// count is unchanged and every cluster ends up edge-connected.
pub fn repair_connectivity(graph: &DualGraph, weights: &[f64], assignment: &mut [usize], k: usize) {
    let (piece, info) = pieces(graph, assignment);
    let mut keep = vec![usize::MAX; k];
    for (id, &(cluster, size)) in info.iter().enumerate() {
        if keep[cluster] == usize::MAX || size > info[keep[cluster]].1 {
            keep[cluster] = id;
        }
    }
    let mut settled: Vec<bool> = (0..assignment.len())
        .map(|f| keep[assignment[f]] == piece[f])
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); info.len()];
    for (f, &p) in piece.iter().enumerate() {
        members[p].push(f);
    }
    let mut orphans: Vec<usize> = (0..info.len())
        .filter(|&id| keep[info[id].0] != id)
        .collect();
    while !orphans.is_empty() {
        let mut waiting = Vec::new();
        for id in orphans {
            let mut best: Option<(f64, usize)> = None;
            for &f in &members[id] {
                for &(v, e) in graph.incident(f) {
                    if !settled[v] {
                        continue;
                    }
                    let cand = (weights[e], assignment[v]);
                    if best.is_none_or(|b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                        best = Some(cand);
                    }
                }
            }
            match best {
                Some((_, cluster)) => {
                    for &f in &members[id] {
                        assignment[f] = cluster;
                        settled[f] = true;
                    }
                }
                None => waiting.push(id),
            }
        }
        orphans = waiting;
    }
}
