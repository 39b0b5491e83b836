//! Agglomerative hierarchical clustering over the proximity matrix, the
//! threshold cut that turns a dendrogram into clusters, the proximity-matrix
//! extension for late-arriving clients, and newcomer assignment.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::subspace::{proximity_entry, MetricKind, ProximityMatrix, SubspaceSignature};

/// Linkage criterion for merging clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    /// Minimum pairwise distance between members.
    Single,
    /// Maximum pairwise distance between members.
    Complete,
    /// Unweighted mean over all cross pairs (UPGMA).
    Average,
}

impl Linkage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::Config(format!("unknown linkage '{other}'"))),
        }
    }
}

/// One agglomeration step. Leaves are nodes `0..K`; merge `m` creates node
/// `K + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub new_node: usize,
}

/// Stepwise dendrogram: exactly K-1 merges with nondecreasing heights.
#[derive(Debug, Clone)]
pub struct Dendrogram {
    merges: Vec<Merge>,
    leaf_count: usize,
}

impl Dendrogram {
    pub fn new(merges: Vec<Merge>, leaf_count: usize) -> Result<Self> {
        if leaf_count == 0 {
            return Err(Error::Dimension(
                "dendrogram needs at least one leaf".into(),
            ));
        }
        if merges.len() + 1 != leaf_count {
            return Err(Error::Dimension(format!(
                "{} merges for {} leaves, expected {}",
                merges.len(),
                leaf_count,
                leaf_count - 1
            )));
        }
        let mut seen_child = vec![false; leaf_count + merges.len()];
        for (m, merge) in merges.iter().enumerate() {
            if merge.new_node != leaf_count + m {
                return Err(Error::Dimension(format!(
                    "merge {m} creates node {} but should create {}",
                    merge.new_node,
                    leaf_count + m
                )));
            }
            for child in [merge.left, merge.right] {
                if child >= merge.new_node || seen_child[child] {
                    return Err(Error::Dimension(format!(
                        "node {child} referenced twice or out of order in merge {m}"
                    )));
                }
                seen_child[child] = true;
            }
            if m > 0 && merge.height < merges[m - 1].height - 1e-9 {
                return Err(Error::InvalidData(format!(
                    "merge heights decrease at step {m}: {} after {}",
                    merge.height,
                    merges[m - 1].height
                )));
            }
        }
        Ok(Dendrogram { merges, leaf_count })
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Cut at `beta`: merges with height <= beta are applied. Returns one
    /// dense cluster id per leaf; clusters are numbered by their smallest
    /// contained leaf index.
    pub fn cut(&self, beta: f64) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.leaf_count + self.merges.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for merge in &self.merges {
            if merge.height <= beta {
                let a = find(&mut parent, merge.left);
                let b = find(&mut parent, merge.right);
                parent[a] = merge.new_node;
                parent[b] = merge.new_node;
            }
        }
        // Root of each leaf, then densely renumber by smallest member leaf.
        let roots: Vec<usize> = (0..self.leaf_count)
            .map(|leaf| find(&mut parent, leaf))
            .collect();
        let mut cluster_of_root: Vec<(usize, usize)> = Vec::new(); // (root, smallest leaf)
        for (leaf, &root) in roots.iter().enumerate() {
            if !cluster_of_root.iter().any(|&(r, _)| r == root) {
                cluster_of_root.push((root, leaf));
            }
        }
        cluster_of_root.sort_by_key(|&(_, small)| small);
        roots
            .iter()
            .map(|root| {
                cluster_of_root
                    .iter()
                    .position(|&(r, _)| r == *root)
                    .unwrap()
            })
            .collect()
    }

    /// Number of clusters produced by a cut at `beta`.
    pub fn cluster_count(&self, beta: f64) -> usize {
        self.cut(beta).iter().max().map_or(1, |&m| m + 1)
    }

    /// Text table: merge index, children, height, created node.
    pub fn write_table(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "merge,left,right,height,new_node")?;
        for (m, merge) in self.merges.iter().enumerate() {
            writeln!(
                w,
                "{m},{},{},{},{}",
                merge.left, merge.right, merge.height, merge.new_node
            )?;
        }
        Ok(())
    }
}

/// A flat clustering of clients plus the parameters that produced it.
#[derive(Debug, Clone)]
pub struct ClusterState {
    client_ids: Vec<String>,
    assignments: Vec<usize>,
    z: usize,
    pub beta: f64,
    pub linkage: Linkage,
    pub metric: MetricKind,
}

impl ClusterState {
    pub fn new(
        client_ids: Vec<String>,
        assignments: Vec<usize>,
        beta: f64,
        linkage: Linkage,
        metric: MetricKind,
    ) -> Result<Self> {
        if client_ids.len() != assignments.len() || client_ids.is_empty() {
            return Err(Error::Dimension(format!(
                "{} clients but {} assignments",
                client_ids.len(),
                assignments.len()
            )));
        }
        let z = assignments.iter().max().unwrap() + 1;
        let mut used = vec![false; z];
        for &a in &assignments {
            used[a] = true;
        }
        if used.iter().any(|&u| !u) {
            return Err(Error::InvalidData("cluster ids are not dense".into()));
        }
        Ok(ClusterState {
            client_ids,
            assignments,
            z,
            beta,
            linkage,
            metric,
        })
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn client_ids(&self) -> &[String] {
        &self.client_ids
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn cluster_of(&self, client_id: &str) -> Option<usize> {
        self.client_ids
            .iter()
            .position(|id| id == client_id)
            .map(|i| self.assignments[i])
    }

    /// Leaf indices belonging to cluster `z`.
    pub fn members(&self, z: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == z)
            .collect()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "client_id,cluster_id")?;
        for (id, &c) in self.client_ids.iter().zip(&self.assignments) {
            writeln!(w, "{id},{c}")?;
        }
        Ok(())
    }

    /// Parse the (client_id, cluster_id) pairs written by [`write_csv`](Self::write_csv).
    pub fn read_csv_pairs(r: &mut impl Read) -> Result<Vec<(String, usize)>> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| Error::Parse(format!("cluster csv: {e}")))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("client_id,cluster_id") => {}
            other => return Err(Error::Parse(format!("bad cluster csv header: {other:?}"))),
        }
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate() {
            let (id, c) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("cluster csv row {}", i + 2)))?;
            let cluster = c
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("cluster csv row {}: bad id '{c}'", i + 2)))?;
            pairs.push((id.to_string(), cluster));
        }
        Ok(pairs)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_csv(&mut file)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Agglomerative clustering of the proximity matrix, cut at `beta`.
///
/// Merging always takes the pair of clusters at minimum linkage distance,
/// ties broken by the lexicographically lowest pair of smallest-leaf
/// indices. The full dendrogram is built regardless of `beta` so callers
/// can re-cut it cheaply.
pub fn hierarchical_cluster(
    a: &ProximityMatrix,
    beta: f64,
    linkage: Linkage,
) -> Result<(Dendrogram, ClusterState)> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    let k = a.k();
    struct Active {
        node: usize,
        small: usize,
        size: usize,
    }
    let mut active: Vec<Active> = (0..k)
        .map(|i| Active {
            node: i,
            small: i,
            size: 1,
        })
        .collect();
    let mut dist: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| a.entry(i, j)).collect())
        .collect();
    let mut merges = Vec::with_capacity(k.saturating_sub(1));

    for step in 0..k.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize)> = None; // (dist, pos_i, pos_j)
        for i in 0..active.len() {
            for j in (i + 1)..active.len() {
                let d = dist[i][j];
                let key = pair_key(active[i].small, active[j].small);
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => {
                        let bkey = pair_key(active[bi].small, active[bj].small);
                        d < bd || (d == bd && key < bkey)
                    }
                };
                if better {
                    best = Some((d, i, j));
                }
            }
        }
        let (height, pi, pj) = best.expect("at least two active clusters");
        let new_node = k + step;
        let (left, right) = if active[pi].small <= active[pj].small {
            (active[pi].node, active[pj].node)
        } else {
            (active[pj].node, active[pi].node)
        };
        merges.push(Merge {
            left,
            right,
            height,
            new_node,
        });

        // Lance-Williams update of distances from the merged cluster.
        let (si, sj) = (active[pi].size as f64, active[pj].size as f64);
        let mut new_row: Vec<f64> = Vec::with_capacity(active.len() - 1);
        for m in 0..active.len() {
            if m == pi || m == pj {
                continue;
            }
            let dim = dist[pi][m];
            let djm = dist[pj][m];
            let d = match linkage {
                Linkage::Single => dim.min(djm),
                Linkage::Complete => dim.max(djm),
                Linkage::Average => (si * dim + sj * djm) / (si + sj),
            };
            new_row.push(d);
        }
        let merged = Active {
            node: new_node,
            small: active[pi].small.min(active[pj].small),
            size: active[pi].size + active[pj].size,
        };
        // Remove the higher position first so the lower index stays valid.
        let (hi, lo) = (pi.max(pj), pi.min(pj));
        active.remove(hi);
        active.remove(lo);
        dist.remove(hi);
        dist.remove(lo);
        for row in dist.iter_mut() {
            row.remove(hi);
            row.remove(lo);
        }
        for (row, &d) in dist.iter_mut().zip(&new_row) {
            row.push(d);
        }
        new_row.push(0.0);
        dist.push(new_row);
        active.push(merged);
    }

    let dendrogram = Dendrogram::new(merges, k)?;
    let assignments = dendrogram.cut(beta);
    let state = ClusterState::new(
        a.client_ids().to_vec(),
        assignments,
        beta,
        linkage,
        a.metric(),
    )?;
    Ok((dendrogram, state))
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Grow a proximity matrix with rows and columns for new clients, reusing
/// the old block verbatim. Both the new-new block and the old-new cross
/// block are computed from the signatures with the matrix's own metric.
pub fn pme_extend(
    a_old: &ProximityMatrix,
    sigs_old: &[SubspaceSignature],
    sigs_new: &[SubspaceSignature],
) -> Result<(ProximityMatrix, Vec<SubspaceSignature>)> {
    let m = a_old.k();
    if sigs_old.len() != m {
        return Err(Error::Config(format!(
            "matrix covers {m} clients but {} old signatures given",
            sigs_old.len()
        )));
    }
    for (sig, id) in sigs_old.iter().zip(a_old.client_ids()) {
        if sig.client_id() != id {
            return Err(Error::Config(format!(
                "signature order mismatch: '{}' vs matrix '{id}'",
                sig.client_id()
            )));
        }
    }
    for new_sig in sigs_new {
        if a_old
            .client_ids()
            .iter()
            .any(|id| id == new_sig.client_id())
        {
            return Err(Error::Config(format!(
                "newcomer id '{}' already present",
                new_sig.client_id()
            )));
        }
    }
    if m >= 2 {
        // Spot-verify one pair so a stale matrix cannot be extended silently.
        // The pair is hash-derived from the client ids, not sampled, so the
        // check itself is reproducible.
        let h = crate::seed::derive(m as u64, &a_old.client_ids().join(","));
        let i = (h % m as u64) as usize;
        let mut j = ((h >> 32) % m as u64) as usize;
        if i == j {
            j = (i + 1) % m;
        }
        let expected = proximity_entry(&sigs_old[i], &sigs_old[j], a_old.metric())?;
        if (expected - a_old.entry(i, j)).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "matrix entry [{i}][{j}] = {} disagrees with signatures ({expected})",
                a_old.entry(i, j)
            )));
        }
    }

    let b = sigs_new.len();
    let total = m + b;
    let mut entries = Array2::zeros((total, total));
    for i in 0..m {
        for j in 0..m {
            entries[[i, j]] = a_old.entry(i, j);
        }
    }
    let merged: Vec<SubspaceSignature> = sigs_old.iter().chain(sigs_new.iter()).cloned().collect();
    for i in 0..total {
        for j in (i + 1)..total {
            if i < m && j < m {
                continue;
            }
            let d = proximity_entry(&merged[i], &merged[j], a_old.metric())?;
            entries[[i, j]] = d;
            entries[[j, i]] = d;
        }
    }
    let ids = merged.iter().map(|s| s.client_id().to_string()).collect();
    let extended = ProximityMatrix::new(entries, a_old.metric(), ids)?;
    Ok((extended, merged))
}

/// Re-cluster after a PME extension, keeping the old clients' clusters
/// intact. Old clusters keep their ids; clusters made only of newcomers get
/// fresh ids. If re-clustering would regroup old clients (beta sits on a
/// merge boundary) this fails with a consistency error instead of silently
/// moving them.
pub fn assign_newcomers(
    state: &ClusterState,
    a_extended: &ProximityMatrix,
    beta: f64,
) -> Result<(ClusterState, Vec<usize>)> {
    if beta != state.beta {
        return Err(Error::Config(format!(
            "beta {beta} differs from the state's beta {}",
            state.beta
        )));
    }
    if a_extended.metric() != state.metric {
        return Err(Error::Config("metric kind changed since clustering".into()));
    }
    let m = state.client_ids().len();
    if a_extended.k() < m || a_extended.client_ids()[..m] != state.client_ids()[..] {
        return Err(Error::Config(
            "extended matrix does not start with the original clients".into(),
        ));
    }
    let (_, raw) = hierarchical_cluster(a_extended, beta, state.linkage)?;

    for i in 0..m {
        for j in (i + 1)..m {
            let before = state.assignments()[i] == state.assignments()[j];
            let after = raw.assignments()[i] == raw.assignments()[j];
            if before != after {
                return Err(Error::Consistency(format!(
                    "re-clustering changed co-membership of '{}' and '{}'",
                    state.client_ids()[i],
                    state.client_ids()[j]
                )));
            }
        }
    }

    // Raw cluster -> stable id: old clusters keep their original id, clusters
    // of newcomers only get ids after the old ones, ordered by smallest leaf.
    let raw_count = raw.assignments().iter().max().unwrap() + 1;
    let mut mapping: Vec<Option<usize>> = vec![None; raw_count];
    for i in 0..m {
        mapping[raw.assignments()[i]] = Some(state.assignments()[i]);
    }
    let mut next = state.z();
    for leaf in m..a_extended.k() {
        let raw_id = raw.assignments()[leaf];
        if mapping[raw_id].is_none() {
            mapping[raw_id] = Some(next);
            next += 1;
        }
    }
    let assignments: Vec<usize> = raw
        .assignments()
        .iter()
        .map(|&r| mapping[r].unwrap())
        .collect();
    let newcomer_clusters = assignments[m..].to_vec();
    let updated = ClusterState::new(
        a_extended.client_ids().to_vec(),
        assignments,
        beta,
        state.linkage,
        state.metric,
    )?;
    Ok((updated, newcomer_clusters))
}

/// Adjusted Rand index between two labelings of the same items. 1.0 for
/// identical partitions, ~0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |&m| m + 1);
    let kb = b.iter().max().map_or(0, |&m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |x: u64| -> f64 { (x * x.saturating_sub(1)) as f64 / 2.0 };
    let sum_ij: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: f64 = table
        .iter()
        .map(|row| choose2(row.iter().sum::<u64>()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum::<u64>()))
        .sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}
