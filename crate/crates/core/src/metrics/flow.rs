//! Exact discrete transport between weighted supports by successive
//! shortest augmenting paths on the complete bipartite graph, with Dijkstra
//! over reduced costs (node potentials keep them nonnegative). Used for
//! grid-vs-grid and weighted empirical transport in d ≥ 2.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

struct HeapItem {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on distance.
        other.dist.partial_cmp(&self.dist).unwrap_or(Ordering::Equal)
    }
}

/// Optimal transport cost between `supply` (sources) and `demand` (sinks)
/// for the dense cost matrix `cost[s * nt + t]`. Total masses must agree.
pub fn transport(supply: &[f64], demand: &[f64], cost: &[f64], nt: usize) -> f64 {
    let ns = supply.len();
    assert_eq!(demand.len(), nt);
    assert_eq!(cost.len(), ns * nt);
    let n = ns + nt; // nodes: 0..ns sources, ns..n sinks
    let mut s_rem: Vec<f64> = supply.to_vec();
    let mut t_rem: Vec<f64> = demand.to_vec();
    let mut flow = vec![0.0f64; ns * nt];
    let mut pi = vec![0.0f64; n];
    let total: f64 = supply.iter().sum();
    let eps = 1e-13 * total.max(1.0);
    let mut shipped = 0.0;
    while total - shipped > eps {
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        for s in 0..ns {
            if s_rem[s] > eps {
                dist[s] = 0.0;
                heap.push(HeapItem { dist: 0.0, node: s });
            }
        }
        while let Some(HeapItem { dist: d, node }) = heap.pop() {
            if done[node] || d > dist[node] {
                continue;
            }
            done[node] = true;
            if node < ns {
                let s = node;
                for t in 0..nt {
                    // forward arc s -> t, reduced cost c + π_s − π_t
                    let red = (cost[s * nt + t] + pi[s] - pi[ns + t]).max(0.0);
                    let nd = d + red;
                    if nd + 1e-18 < dist[ns + t] {
                        dist[ns + t] = nd;
                        prev[ns + t] = s;
                        heap.push(HeapItem { dist: nd, node: ns + t });
                    }
                }
            } else {
                let t = node - ns;
                for s in 0..ns {
                    if flow[s * nt + t] > eps {
                        // residual arc t -> s, reduced cost −c + π_t − π_s
                        let red = (-cost[s * nt + t] + pi[ns + t] - pi[s]).max(0.0);
                        let nd = d + red;
                        if nd + 1e-18 < dist[s] {
                            dist[s] = nd;
                            prev[s] = ns + t;
                            heap.push(HeapItem { dist: nd, node: s });
                        }
                    }
                }
            }
        }
        // Nearest sink with open demand.
        let mut best_t = usize::MAX;
        let mut best_d = f64::INFINITY;
        for t in 0..nt {
            if t_rem[t] > eps && dist[ns + t] < best_d {
                best_d = dist[ns + t];
                best_t = t;
            }
        }
        if best_t == usize::MAX {
            break; // mass numerically exhausted
        }
        // Bottleneck along the augmenting path.
        let mut bottleneck = t_rem[best_t];
        let mut node = ns + best_t;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if p >= ns {
                bottleneck = bottleneck.min(flow[node * nt + (p - ns)]);
            }
            node = p;
        }
        bottleneck = bottleneck.min(s_rem[node]);
        // Push the flow.
        let root = node;
        let mut node = ns + best_t;
        while prev[node] != usize::MAX {
            let p = prev[node];
            if p < ns {
                flow[p * nt + (node - ns)] += bottleneck;
            } else {
                flow[node * nt + (p - ns)] -= bottleneck;
            }
            node = p;
        }
        s_rem[root] -= bottleneck;
        t_rem[best_t] -= bottleneck;
        shipped += bottleneck;
        for v in 0..n {
            if dist[v].is_finite() {
                pi[v] += dist[v];
            }
        }
    }
    flow.iter().zip(cost).map(|(&f, &c)| f * c).sum()
}
