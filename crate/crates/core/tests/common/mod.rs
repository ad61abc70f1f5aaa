#![allow(dead_code)]

use interfere::design::{Block, Design};
use interfere::graph::Graph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn erdos_renyi(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges, false).unwrap().0
}

pub fn path(n: usize) -> Graph {
    let e: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    Graph::from_edges(n, &e, false).unwrap().0
}

pub fn star(leaves: usize) -> Graph {
    let e: Vec<_> = (1..=leaves).map(|j| (0, j)).collect();
    Graph::from_edges(leaves + 1, &e, false).unwrap().0
}

/// All-pairs distances by Floyd-Warshall; `usize::MAX` when disconnected.
pub fn floyd_warshall(g: &Graph) -> Vec<Vec<usize>> {
    let n = g.n();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for &j in g.neighbors(i) {
            d[i][j] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.into_iter().map(|r| r.into_iter().map(|v| if v >= inf { usize::MAX } else { v }).collect()).collect()
}

/// Bernoulli design with random probabilities on a random eligible subset.
pub fn random_bernoulli(n: usize, rng: &mut impl Rng) -> Design {
    let p: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.7 { rng.random_range(0.2..0.8) } else { 0.0 }).collect();
    Design::bernoulli_with_probs(p).unwrap()
}

/// One or two blocks over a random subset of units.
pub fn random_blocks(n: usize, rng: &mut impl Rng) -> Design {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let take = rng.random_range(2..=n.min(8));
    let chosen = &ids[..take];
    let split = if take >= 4 && rng.random::<bool>() { take / 2 } else { take };
    let mut blocks = vec![Block { units: chosen[..split].to_vec(), treated: rng.random_range(1..split) }];
    if split < take {
        let rest = chosen[split..].to_vec();
        let t = rng.random_range(1..rest.len().max(2)).min(rest.len());
        blocks.push(Block { units: rest, treated: t });
    }
    Design::blocks(n, blocks).unwrap()
}
