//! Exact discrete optimal transport between two small weighted supports.
//!
//! Successive shortest augmenting paths on the bipartite residual graph.
//! Forward arcs are uncapacitated, so every augmentation exhausts a supply,
//! a demand, or the flow on some reverse arc. Sizes here are at most a few
//! dozen atoms per side, so Bellman-Ford per augmentation is plenty.

/// Masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// A label only moves if it improves by more than rounding. Otherwise a
/// zero-cost cycle through a reverse arc can shave off an ulp and leave a
/// cycle in the predecessor links.
fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - 1e-12 * (1.0 + candidate.abs())
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub cost: f64,
    /// `flow[i][j]`: mass moved from source atom `i` to target atom `j`.
    pub flow: Vec<Vec<f64>>,
}

/// Solves `min <cost, P>` over plans `P >= 0` with row sums `supply` and
/// column sums `demand`. Totals may differ by rounding; the solver stops
/// once either side is exhausted.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> TransportPlan {
    let n = supply.len();
    let m = demand.len();
    let mut flow = vec![vec![0.0; m]; n];
    let mut rem_a: Vec<f64> = supply.to_vec();
    let mut rem_b: Vec<f64> = demand.to_vec();
    let nodes = n + m;
    let max_augment = 4 * nodes * nodes + 16;

    for _ in 0..max_augment {
        if !rem_a.iter().any(|&a| a > MASS_EPS) || !rem_b.iter().any(|&b| b > MASS_EPS) {
            break;
        }

        // Node k < n is source k; node n + j is sink j.
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred: Vec<Option<usize>> = vec![None; nodes];
        for (i, &a) in rem_a.iter().enumerate() {
            if a > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + cost[i][j];
                        if improves(d, dist[n + j]) {
                            dist[n + j] = d;
                            pred[n + j] = Some(i);
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[i][j] > MASS_EPS {
                            let d = dist[n + j] - cost[i][j];
                            if improves(d, dist[i]) {
                                dist[i] = d;
                                pred[i] = Some(n + j);
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let Some(sink) = (0..m)
            .filter(|&j| rem_b[j] > MASS_EPS && dist[n + j].is_finite())
            .min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b]))
        else {
            break;
        };

        // Walk back to the originating source, collecting arcs.
        let mut path = Vec::new();
        let mut node = n + sink;
        let mut origin = None;
        for _ in 0..=nodes {
            match pred[node] {
                Some(p) => {
                    path.push((p, node));
                    node = p;
                }
                None => {
                    origin = Some(node);
                    break;
                }
            }
        }
        let Some(origin) = origin.filter(|&o| o < n) else {
            break;
        };

        let mut delta = rem_a[origin].min(rem_b[sink]);
        for &(from, to) in &path {
            if from >= n {
                // reverse arc sink(from) -> source(to)
                delta = delta.min(flow[to][from - n]);
            }
        }
        if delta <= 0.0 {
            break;
        }
        for &(from, to) in &path {
            if from < n {
                flow[from][to - n] += delta;
            } else {
                let f = &mut flow[to][from - n];
                *f -= delta;
                if *f < MASS_EPS {
                    *f = 0.0;
                }
            }
        }
        rem_a[origin] -= delta;
        rem_b[sink] -= delta;
    }

    let cost = flow
        .iter()
        .zip(cost)
        .map(|(row, crow)| row.iter().zip(crow).map(|(f, c)| f * c).sum::<f64>())
        .sum();
    TransportPlan { cost, flow }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn uniform_weights_match_best_assignment() {
        // Birkhoff: with equal uniform marginals an optimal vertex is a permutation.
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for k in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..k)
                    .map(|_| (0..k).map(|_| next() * 10.0).collect())
                    .collect();
                let w = vec![1.0 / k as f64; k];
                let plan = solve(&w, &w, &cost);
                let brute = permutations(k)
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / k as f64)
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    (plan.cost - brute).abs() < 1e-12,
                    "k={k}: {} vs {brute}",
                    plan.cost
                );
            }
        }
    }

    /// Flows on a basis of `n + m - 1` cells, found by repeatedly settling a
    /// row or column with a single unsettled cell. `None` if the cells do not
    /// form a spanning tree or a flow comes out negative.
    fn basic_solution(a: &[f64], b: &[f64], cells: &[(usize, usize)]) -> Option<Vec<Vec<f64>>> {
        let (n, m) = (a.len(), b.len());
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut open: Vec<(usize, usize)> = cells.to_vec();
        let mut flow = vec![vec![0.0; m]; n];
        while !open.is_empty() {
            let k = (0..open.len()).find(|&k| {
                let (i, j) = open[k];
                open.iter().filter(|c| c.0 == i).count() == 1
                    || open.iter().filter(|c| c.1 == j).count() == 1
            })?;
            let (i, j) = open.swap_remove(k);
            let row_leaf = open.iter().all(|c| c.0 != i);
            let x = if row_leaf { ra[i] } else { rb[j] };
            flow[i][j] = x;
            ra[i] -= x;
            rb[j] -= x;
        }
        let ok = flow.iter().flatten().all(|&x| x >= -1e-12)
            && ra.iter().chain(&rb).all(|r| r.abs() < 1e-12);
        ok.then_some(flow)
    }

    #[test]
    fn random_marginals_match_vertex_enumeration() {
        let mut state = 777u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for (n, m) in [(2, 3), (3, 3), (3, 2), (3, 4)] {
            for _ in 0..40 {
                let mut a: Vec<f64> = (0..n).map(|_| 0.1 + next()).collect();
                let mut b: Vec<f64> = (0..m).map(|_| 0.1 + next()).collect();
                let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
                a.iter_mut().for_each(|x| *x /= sa);
                b.iter_mut().for_each(|x| *x /= sb);
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..m).map(|_| next() * 50.0).collect())
                    .collect();
                let cells: Vec<(usize, usize)> =
                    (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
                let k = n + m - 1;
                let mut best = f64::INFINITY;
                for mask in 0u32..(1 << cells.len()) {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    let basis: Vec<_> = (0..cells.len())
                        .filter(|&c| mask >> c & 1 == 1)
                        .map(|c| cells[c])
                        .collect();
                    if let Some(f) = basic_solution(&a, &b, &basis) {
                        let c: f64 = (0..n)
                            .map(|i| (0..m).map(|j| f[i][j] * cost[i][j]).sum::<f64>())
                            .sum();
                        best = best.min(c);
                    }
                }
                let plan = solve(&a, &b, &cost);
                assert!((plan.cost - best).abs() < 1e-10, "{} vs {best}", plan.cost);
                for j in 0..m {
                    let col: f64 = plan.flow.iter().map(|r| r[j]).sum();
                    assert!((col - b[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_by_two_matches_parametric_scan() {
        // Plans on 2x2 with marginals a, b form a segment parametrized by p11.
        let a = [0.3, 0.7];
        let b = [0.6, 0.4];
        let cost = vec![vec![1.0, 5.0], vec![2.0, 0.5]];
        let plan = solve(&a, &b, &cost);
        let lo = (a[0] - b[1]).max(0.0);
        let hi = a[0].min(b[0]);
        let eval = |p11: f64| {
            let p12 = a[0] - p11;
            let p21 = b[0] - p11;
            let p22 = a[1] - p21;
            p11 * cost[0][0] + p12 * cost[0][1] + p21 * cost[1][0] + p22 * cost[1][1]
        };
        let best = eval(lo).min(eval(hi));
        assert!((plan.cost - best).abs() < 1e-14);
    }

    #[test]
    fn marginals_are_respected() {
        let a = [0.2, 0.5, 0.3];
        let b = [0.1, 0.1, 0.4, 0.4];
        let cost: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..4)
                    .map(|j| ((i as f64) - (j as f64) * 0.7).powi(2))
                    .collect()
            })
            .collect();
        let plan = solve(&a, &b, &cost);
        for (i, row) in plan.flow.iter().enumerate() {
            assert!((row.iter().sum::<f64>() - a[i]).abs() < 1e-14);
        }
        for j in 0..4 {
            let col: f64 = plan.flow.iter().map(|r| r[j]).sum();
            assert!((col - b[j]).abs() < 1e-14);
        }
    }
}
