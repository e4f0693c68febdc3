//! Metric formulas written independently of the library.
#![allow(dead_code)]

/// Best assignment by trying every injective cluster→tag map (small tables only).
pub fn exhaustive_one_to_one(counts: &[Vec<u64>]) -> u64 {
    fn go(counts: &[Vec<u64>], row: usize, used: &mut Vec<bool>) -> u64 {
        if row == counts.len() {
            return 0;
        }
        let mut best = go(counts, row + 1, used);
        for t in 0..used.len() {
            if !used[t] {
                used[t] = true;
                best = best.max(counts[row][t] + go(counts, row + 1, used));
                used[t] = false;
            }
        }
        best
    }
    let tags = counts.first().map_or(0, Vec::len);
    go(counts, 0, &mut vec![false; tags])
}

/// Shortest-augmenting-path assignment on a square cost matrix (minimization).
pub fn hungarian_min(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

pub struct Oracle {
    pub m1: f64,
    pub o1: f64,
    pub h: f64,
    pub c: f64,
    pub vm: f64,
}

/// Metrics from probabilities and mutual information, written separately from the library.
pub fn oracle(counts: &[Vec<u64>]) -> Oracle {
    let n: f64 = counts.iter().flatten().sum::<u64>() as f64;
    let k = counts.len();
    let t = counts[0].len();
    let pc: Vec<f64> = counts
        .iter()
        .map(|r| r.iter().sum::<u64>() as f64 / n)
        .collect();
    let pt: Vec<f64> = (0..t)
        .map(|j| counts.iter().map(|r| r[j]).sum::<u64>() as f64 / n)
        .collect();
    let h = |p: &[f64]| {
        -p.iter()
            .filter(|&&x| x > 0.0)
            .map(|x| x * x.ln())
            .sum::<f64>()
    };
    let mut mi = 0.0;
    for i in 0..k {
        for j in 0..t {
            let pij = counts[i][j] as f64 / n;
            if pij > 0.0 {
                mi += pij * (pij / (pc[i] * pt[j])).ln();
            }
        }
    }
    let (hc, ht) = (h(&pc), h(&pt));
    // H(T|C) = H(T) − I, H(C|T) = H(C) − I
    let hom = if ht == 0.0 { 1.0 } else { mi / ht };
    let com = if hc == 0.0 { 1.0 } else { mi / hc };
    let vm = if hom + com == 0.0 {
        0.0
    } else {
        2.0 * hom * com / (hom + com)
    };
    let m1 = counts.iter().map(|r| *r.iter().max().unwrap()).sum::<u64>() as f64 / n;
    let size = k.max(t);
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    if i < k && j < t {
                        -(counts[i][j] as f64)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let o1 = -hungarian_min(&cost) / n;
    Oracle {
        m1,
        o1,
        h: hom,
        c: com,
        vm,
    }
}
