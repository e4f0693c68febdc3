//! Clustering metrics for induced tags: many-to-one, one-to-one and V-measure.

use std::fmt::Write as _;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint counts of `(cluster, gold tag)` over aligned tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// `counts[c][t]`: tokens with cluster `c` and gold tag `t`.
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ContingencyTable {
    /// Rows are clusters, columns gold tags; every row must have the same length.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("contingency rows differ in length".into()));
        }
        let total = counts.iter().flatten().sum();
        Ok(Self { counts, total })
    }

    /// Table over `0..=max id` clusters and tags of the aligned sequences.
    pub fn from_sequences(pred: &[Vec<usize>], gold: &[Vec<u32>]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::Alignment {
                sentence: pred.len().min(gold.len()),
                msg: format!(
                    "{} predicted sentences for {} gold sentences",
                    pred.len(),
                    gold.len()
                ),
            });
        }
        for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
            if p.len() != g.len() {
                return Err(Error::Alignment {
                    sentence: i,
                    msg: format!("{} predicted tags for {} gold tags", p.len(), g.len()),
                });
            }
        }
        let clusters = pred.iter().flatten().max().map_or(0, |&m| m + 1);
        let tags = gold.iter().flatten().max().map_or(0, |&m| m as usize + 1);
        let mut counts = vec![vec![0u64; tags]; clusters];
        for (p, g) in pred.iter().zip(gold) {
            for (&c, &t) in p.iter().zip(g) {
                counts[c][t as usize] += 1;
            }
        }
        Self::from_counts(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn num_clusters(&self) -> usize {
        self.counts.len()
    }

    pub fn num_tags(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    fn require_nonempty(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Data("contingency table is empty".into()));
        }
        Ok(self.total as f64)
    }

    /// Gold tag chosen for each cluster by many-to-one: the most frequent,
    /// lowest id on ties. `None` for a cluster with no tokens.
    pub fn many_to_one_mapping(&self) -> Vec<Option<usize>> {
        self.counts
            .iter()
            .map(|row| {
                let mut best: Option<(usize, u64)> = None;
                for (t, &c) in row.iter().enumerate() {
                    if c > 0 && best.is_none_or(|(_, b)| c > b) {
                        best = Some((t, c));
                    }
                }
                best.map(|(t, _)| t)
            })
            .collect()
    }

    pub fn many_to_one(&self) -> Result<f64> {
        let total = self.require_nonempty()?;
        let hit: u64 = self
            .counts
            .iter()
            .map(|r| r.iter().copied().max().unwrap_or(0))
            .sum();
        Ok(hit as f64 / total)
    }

    /// Optimal cluster→tag assignment, `None` for unmatched clusters.
    pub fn one_to_one_mapping(&self) -> Vec<Option<usize>> {
        let (c, t) = (self.num_clusters(), self.num_tags());
        let n = c.max(t);
        if n == 0 {
            return Vec::new();
        }
        // padded square matrix; padding rows/columns weigh 0 and mean "unmatched"
        let mut w = Matrix::new(n, n, 0i64);
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                w[(i, j)] = i64::try_from(x).expect("count fits in i64");
            }
        }
        let (_, assign) = kuhn_munkres(&w);
        assign
            .into_iter()
            .take(c)
            .enumerate()
            .map(|(i, j)| (j < t && self.counts[i][j] > 0).then_some(j))
            .collect()
    }

    pub fn one_to_one(&self) -> Result<f64> {
        let total = self.require_nonempty()?;
        let hit: u64 = self
            .one_to_one_mapping()
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| self.counts[i][j]))
            .sum();
        Ok(hit as f64 / total)
    }

    /// `(homogeneity, completeness, v-measure)` with natural-log entropies.
    pub fn v_measure(&self) -> Result<VMeasure> {
        let total = self.require_nonempty()?;
        let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
        let rows: Vec<f64> = self
            .counts
            .iter()
            .map(|r| r.iter().sum::<u64>() as f64)
            .collect();
        let cols: Vec<f64> = (0..self.num_tags())
            .map(|t| self.counts.iter().map(|r| r[t]).sum::<u64>() as f64)
            .collect();
        // H(X) = ln N − Σ n_x ln n_x / N
        let entropy = |m: &[f64]| total.ln() - m.iter().map(|&x| xlogx(x)).sum::<f64>() / total;
        let joint: f64 = self.counts.iter().flatten().map(|&x| xlogx(x as f64)).sum();
        let h_gold = entropy(&cols);
        let h_cluster = entropy(&rows);
        // H(gold | cluster) = Σ_c n_c ln n_c / N − Σ n_ct ln n_ct / N
        let h_gold_given_cluster = (rows.iter().map(|&x| xlogx(x)).sum::<f64>() - joint) / total;
        let h_cluster_given_gold = (cols.iter().map(|&x| xlogx(x)).sum::<f64>() - joint) / total;
        let ratio = |cond: f64, h: f64| {
            if h <= 0.0 {
                1.0
            } else {
                (1.0 - cond / h).clamp(0.0, 1.0)
            }
        };
        let homogeneity = ratio(h_gold_given_cluster, h_gold);
        let completeness = ratio(h_cluster_given_gold, h_cluster);
        let v = if homogeneity + completeness == 0.0 {
            0.0
        } else {
            2.0 * homogeneity * completeness / (homogeneity + completeness)
        };
        Ok(VMeasure {
            homogeneity,
            completeness,
            v_measure: v,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub many_to_one: f64,
    pub one_to_one: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
    pub table: ContingencyTable,
}

impl EvalReport {
    /// Human-readable lines, four decimals.
    pub fn to_text(&self) -> String {
        format!(
            "M-1  {:.4}\n1-1  {:.4}\nVM   {:.4}  (h {:.4}, c {:.4})\ntokens {}\n",
            self.many_to_one,
            self.one_to_one,
            self.v_measure,
            self.homogeneity,
            self.completeness,
            self.table.total()
        )
    }

    /// `key=value` lines at full precision, then the table as `count.c.t=n` for nonzero cells.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("m1", self.many_to_one),
            ("o1", self.one_to_one),
            ("vm", self.v_measure),
            ("homogeneity", self.homogeneity),
            ("completeness", self.completeness),
        ] {
            writeln!(s, "{k}={v}").expect("string write");
        }
        writeln!(s, "tokens={}", self.table.total()).expect("string write");
        writeln!(s, "clusters={}", self.table.num_clusters()).expect("string write");
        writeln!(s, "tags={}", self.table.num_tags()).expect("string write");
        for (c, row) in self.table.counts().iter().enumerate() {
            for (t, &n) in row.iter().enumerate().filter(|(_, &n)| n > 0) {
                writeln!(s, "count.{c}.{t}={n}").expect("string write");
            }
        }
        s
    }
}

/// All three metrics over one corpus-level table.
pub fn evaluate(pred: &[Vec<usize>], gold: &[Vec<u32>]) -> Result<EvalReport> {
    let table = ContingencyTable::from_sequences(pred, gold)?;
    let vm = table.v_measure()?;
    Ok(EvalReport {
        many_to_one: table.many_to_one()?,
        one_to_one: table.one_to_one()?,
        homogeneity: vm.homogeneity,
        completeness: vm.completeness,
        v_measure: vm.v_measure,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[u64]]) -> ContingencyTable {
        ContingencyTable::from_counts(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn many_to_one_examples() {
        assert_eq!(table(&[&[3, 0], &[0, 4]]).many_to_one().unwrap(), 1.0);
        assert_eq!(table(&[&[5, 1], &[2, 4]]).many_to_one().unwrap(), 0.75);
        let tie = table(&[&[2, 2]]);
        assert_eq!(tie.many_to_one().unwrap(), 0.5);
        assert_eq!(tie.many_to_one_mapping(), vec![Some(0)]);
        assert_eq!(
            table(&[&[0, 0], &[1, 0]]).many_to_one_mapping(),
            vec![None, Some(0)]
        );
    }

    #[test]
    fn one_to_one_examples() {
        assert_eq!(table(&[&[3, 0], &[0, 4]]).one_to_one().unwrap(), 1.0);
        assert_eq!(table(&[&[5, 1], &[2, 4]]).one_to_one().unwrap(), 0.75);
        let t = table(&[&[3, 3], &[3, 0]]);
        assert!((t.one_to_one().unwrap() - 6.0 / 9.0).abs() < 1e-15);
        assert_eq!(t.one_to_one_mapping(), vec![Some(1), Some(0)]);
        // more clusters than tags, and the reverse
        assert_eq!(table(&[&[4], &[1], &[2]]).one_to_one().unwrap(), 4.0 / 7.0);
        assert_eq!(table(&[&[4, 1, 2]]).one_to_one().unwrap(), 4.0 / 7.0);
    }

    #[test]
    fn v_measure_examples() {
        let vm = table(&[&[0, 3], &[5, 0]]).v_measure().unwrap();
        assert_eq!(
            (vm.homogeneity, vm.completeness, vm.v_measure),
            (1.0, 1.0, 1.0)
        );
        let one = table(&[&[2, 3, 1]]).v_measure().unwrap();
        assert_eq!(
            (one.homogeneity, one.completeness, one.v_measure),
            (0.0, 1.0, 0.0)
        );
        let single_tag = table(&[&[2], &[3]]).v_measure().unwrap();
        assert_eq!(
            (single_tag.homogeneity, single_tag.completeness),
            (1.0, 0.0)
        );
    }

    #[test]
    fn empty_tables_are_data_errors() {
        let t = table(&[&[0, 0]]);
        assert!(matches!(t.many_to_one(), Err(Error::Data(_))));
        assert!(matches!(t.one_to_one(), Err(Error::Data(_))));
        assert!(matches!(t.v_measure(), Err(Error::Data(_))));
        assert!(ContingencyTable::from_counts(vec![vec![1], vec![1, 2]]).is_err());
    }

    #[test]
    fn misaligned_sequences_name_the_sentence() {
        let e = evaluate(&[vec![0, 1], vec![0]], &[vec![0, 1], vec![1, 1]]).unwrap_err();
        assert!(matches!(e, Error::Alignment { sentence: 1, .. }));
        assert!(matches!(
            evaluate(&[vec![0]], &[]),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn report_formats() {
        let r = evaluate(&[vec![0, 0, 1]], &[vec![1, 1, 0]]).unwrap();
        assert_eq!((r.many_to_one, r.one_to_one, r.v_measure), (1.0, 1.0, 1.0));
        assert!(r
            .to_text()
            .starts_with("M-1  1.0000\n1-1  1.0000\nVM   1.0000"));
        let kv = r.to_key_values();
        assert!(kv.contains("m1=1\n") && kv.contains("tokens=3\n") && kv.contains("count.0.1=2\n"));
    }
}
