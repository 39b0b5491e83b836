//! Labeled datasets and Non-IID client partitioning.
//!
//! Three partitioning regimes are provided: label skew (each client owns a
//! fixed percentage of the label space), Dirichlet (per-class client
//! proportions drawn from a symmetric Dirichlet), and mix (each client draws
//! from exactly one of several disjoint source datasets occupying disjoint
//! global label ranges). All of them are pure functions of the spec seed.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::seed;

/// A labeled dataset, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    name: String,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        n_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::Dimension("n_classes must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidData(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("features contain NaN or Inf".into()));
        }
        Ok(LabeledDataset {
            features,
            labels,
            n_classes,
            name: name.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Sources (unlike shards) must have at least one sample of every class.
    pub fn validate_source(&self) -> Result<()> {
        let mut seen = vec![false; self.n_classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidData(format!(
                "source dataset '{}' has no samples of class {missing}",
                self.name
            )));
        }
        Ok(())
    }

    /// Dataset restricted to `rows` (source row indices), optionally shifting
    /// labels into a global label space of `n_classes_total`.
    fn subset(&self, rows: &[usize], label_offset: usize, n_classes_total: usize) -> Self {
        let mut features = Array2::zeros((rows.len(), self.n_features()));
        let mut labels = Vec::with_capacity(rows.len());
        for (dst, &src) in rows.iter().enumerate() {
            features.row_mut(dst).assign(&self.features.row(src));
            labels.push(self.labels[src] + label_offset);
        }
        LabeledDataset {
            features,
            labels,
            n_classes: n_classes_total,
            name: self.name.clone(),
        }
    }
}

/// Zero-pad feature columns up to `target_dim` (mix sources must agree on
/// feature dimension before partitioning).
pub fn pad_features(ds: &LabeledDataset, target_dim: usize) -> Result<LabeledDataset> {
    if target_dim < ds.n_features() {
        return Err(Error::Dimension(format!(
            "cannot pad {} features down to {target_dim}",
            ds.n_features()
        )));
    }
    let mut features = Array2::zeros((ds.n_samples(), target_dim));
    features
        .slice_mut(ndarray::s![.., ..ds.n_features()])
        .assign(&ds.features);
    LabeledDataset::new(features, ds.labels.clone(), ds.n_classes, ds.name.clone())
}

/// One client's train/test split with provenance.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: String,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub source_name: String,
    pub label_set: BTreeSet<usize>,
    /// Source row indices backing `train`, for exact replay.
    pub train_indices: Vec<usize>,
    /// Source row indices backing `test`.
    pub test_indices: Vec<usize>,
}

/// Partitioning scheme selector.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// Each client holds `rho_percent`% of the label space.
    LabelSkew { rho_percent: f64 },
    /// Per-class client proportions drawn from Dir(alpha).
    Dirichlet { alpha: f64 },
    /// Each client draws from one source dataset; counts sum to n_clients.
    Mix {
        dataset_client_counts: Vec<usize>,
        samples_per_client: usize,
    },
}

/// Full description of a partition, including the seed that reproduces it.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    pub scheme: Scheme,
    pub n_clients: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Config("n_clients must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0,1), got {}",
                self.test_fraction
            )));
        }
        match &self.scheme {
            Scheme::LabelSkew { rho_percent } => {
                if !(*rho_percent > 0.0 && *rho_percent <= 100.0) {
                    return Err(Error::Config(format!(
                        "label-skew percentage must be in (0,100], got {rho_percent}"
                    )));
                }
            }
            Scheme::Dirichlet { alpha } => {
                if !(*alpha > 0.0) {
                    return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
                }
            }
            Scheme::Mix {
                dataset_client_counts,
                samples_per_client,
            } => {
                if dataset_client_counts.iter().sum::<usize>() != self.n_clients {
                    return Err(Error::Config(format!(
                        "mix client counts {:?} do not sum to n_clients = {}",
                        dataset_client_counts, self.n_clients
                    )));
                }
                if *samples_per_client == 0 {
                    return Err(Error::Config("samples_per_client must be >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

fn client_id(index: usize) -> String {
    format!("client_{index:03}")
}

/// Synthetic stand-in for an image dataset: `n_classes` Gaussian blobs with
/// seeded random means scaled by `class_mean_scale` and isotropic noise of
/// standard deviation `covariance_scale`.
pub fn generate_gaussian_dataset(
    n_classes: usize,
    n_features: usize,
    samples_per_class: usize,
    class_mean_scale: f64,
    covariance_scale: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes == 0 || n_features == 0 || samples_per_class == 0 {
        return Err(Error::Config(
            "gaussian dataset needs n_classes, n_features, samples_per_class >= 1".into(),
        ));
    }
    let mut rng = seed::rng(seed, "gaussian-dataset");
    let mut means = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let m: Vec<f64> = (0..n_features)
            .map(|_| class_mean_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        means.push(m);
    }
    let n = n_classes * samples_per_class;
    let mut features = Array2::zeros((n, n_features));
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for s in 0..samples_per_class {
            let row = c * samples_per_class + s;
            for f in 0..n_features {
                features[[row, f]] =
                    mean[f] + covariance_scale * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, n_classes, format!("gaussian-{seed}"))
}

/// Load a dataset from CSV: header row, one sample per row, the named label
/// column holding integers. Labels are remapped onto a dense [0, n_classes)
/// range; the returned vector maps each dense label back to its original.
pub fn load_csv_dataset(path: &Path, label_column: &str) -> Result<(LabeledDataset, Vec<i64>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    parse_csv_dataset(&text, label_column, name)
}

fn parse_csv_dataset(
    text: &str,
    label_column: &str,
    name: String,
) -> Result<(LabeledDataset, Vec<i64>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("csv file is empty".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|&c| c == label_column)
        .ok_or_else(|| Error::Parse(format!("label column '{label_column}' not in header")))?;
    let n_features = columns.len() - 1;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse(format!(
                "row {}: expected {} cells, found {}",
                line_no + 1,
                columns.len(),
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(n_features);
        for (c, cell) in cells.iter().enumerate() {
            if c == label_idx {
                let label = cell.trim().parse::<i64>().map_err(|_| {
                    Error::Parse(format!(
                        "row {}, column {}: label '{}' is not an integer",
                        line_no + 1,
                        c + 1,
                        cell.trim()
                    ))
                })?;
                raw_labels.push(label);
            } else {
                let value = cell.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "row {}, column {}: '{}' is not numeric",
                        line_no + 1,
                        c + 1,
                        cell.trim()
                    ))
                })?;
                row.push(value);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("csv file has no data rows".into()));
    }
    let mut distinct: Vec<i64> = raw_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| distinct.binary_search(l).unwrap())
        .collect();
    let mut features = Array2::zeros((rows.len(), n_features));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let n_classes = distinct.len();
    Ok((
        LabeledDataset::new(features, labels, n_classes, name)?,
        distinct,
    ))
}

/// Write a dataset in the CSV layout accepted by [`load_csv_dataset`].
pub fn write_csv_dataset(path: &Path, ds: &LabeledDataset, label_column: &str) -> Result<()> {
    let mut out = String::new();
    for j in 0..ds.n_features() {
        out.push_str(&format!("f{j},"));
    }
    out.push_str(label_column);
    out.push('\n');
    for i in 0..ds.n_samples() {
        for j in 0..ds.n_features() {
            out.push_str(&format!("{},", ds.features[[i, j]]));
        }
        out.push_str(&format!("{}\n", ds.labels[i]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Split `rows` (source indices into `ds`) into train/test index lists.
/// Stratified by label when every label present has at least two samples.
/// The selected index lists are returned in ascending source order.
fn split_train_test(
    ds: &LabeledDataset,
    rows: &[usize],
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let n = rows.len();
    let target = ((test_fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut by_label: Vec<(usize, Vec<usize>)> = Vec::new();
    for &r in rows {
        let l = ds.labels[r];
        match by_label.iter_mut().find(|(label, _)| *label == l) {
            Some((_, v)) => v.push(r),
            None => by_label.push((l, vec![r])),
        }
    }
    by_label.sort_by_key(|(l, _)| *l);
    let stratified = by_label.iter().all(|(_, v)| v.len() >= 2);

    let mut test: Vec<usize> = Vec::with_capacity(target);
    if stratified && by_label.len() > 1 {
        // Largest-remainder allocation of the test quota across labels,
        // keeping at least one training sample per label.
        let mut base: Vec<usize> = Vec::new();
        let mut rema: Vec<(f64, usize)> = Vec::new();
        for (pos, (_, v)) in by_label.iter().enumerate() {
            let quota = test_fraction * v.len() as f64;
            base.push(quota.floor() as usize);
            rema.push((quota - quota.floor(), pos));
        }
        let mut assigned: usize = base.iter().sum();
        rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut extra = target.saturating_sub(assigned);
        for &(_, pos) in &rema {
            if extra == 0 {
                break;
            }
            if base[pos] + 1 < by_label[pos].1.len() {
                base[pos] += 1;
                extra -= 1;
            }
        }
        // If rounding overshot the target, trim from the largest allocations.
        assigned = base.iter().sum();
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.sort_by(|&a, &b| base[b].cmp(&base[a]));
        let mut over = assigned.saturating_sub(target);
        for &pos in &order {
            if over == 0 {
                break;
            }
            let cut = over.min(base[pos]);
            base[pos] -= cut;
            over -= cut;
        }
        for (pos, (_, v)) in by_label.iter().enumerate() {
            let mut pool = v.clone();
            pool.shuffle(rng);
            let take = base[pos].min(pool.len().saturating_sub(1));
            test.extend(pool.into_iter().take(take));
        }
    } else {
        let mut pool = rows.to_vec();
        pool.shuffle(rng);
        test.extend(pool.into_iter().take(target));
    }
    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    let train: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|r| !test_set.contains(r))
        .collect();
    let mut test: Vec<usize> = test_set.into_iter().collect();
    test.sort_unstable();
    (train, test)
}

fn build_shard(
    ds: &LabeledDataset,
    index: usize,
    rows: Vec<usize>,
    test_fraction: f64,
    label_offset: usize,
    n_classes_total: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ClientShard> {
    let (train_idx, test_idx) = split_train_test(ds, &rows, test_fraction, rng);
    if train_idx.is_empty() {
        return Err(Error::Partition(format!(
            "{} would receive zero training samples",
            client_id(index)
        )));
    }
    let train = ds.subset(&train_idx, label_offset, n_classes_total);
    let test = ds.subset(&test_idx, label_offset, n_classes_total);
    let label_set: BTreeSet<usize> = train
        .labels
        .iter()
        .chain(test.labels.iter())
        .copied()
        .collect();
    Ok(ClientShard {
        client_id: client_id(index),
        train,
        test,
        source_name: ds.name.clone(),
        label_set,
        train_indices: train_idx,
        test_indices: test_idx,
    })
}

/// Label-skew partition: each client is assigned ceil(rho/100 * n_classes)
/// labels uniformly at random, and the samples of each label are split
/// uniformly among its owners. Assignments leaving any label unowned are
/// redrawn, up to 100 attempts.
pub fn label_skew_partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    ds.validate_source()?;
    let rho = match spec.scheme {
        Scheme::LabelSkew { rho_percent } => rho_percent,
        _ => return Err(Error::Config("spec scheme is not label-skew".into())),
    };
    let n_classes = ds.n_classes;
    let labels_per_client = ((rho / 100.0) * n_classes as f64).ceil() as usize;
    let labels_per_client = labels_per_client.clamp(1, n_classes);

    let mut rng = seed::rng(spec.seed, "label-skew");
    let mut owners: Vec<Vec<usize>> = Vec::new();
    let mut found = false;
    for _attempt in 0..100 {
        let mut candidate: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for client in 0..spec.n_clients {
            let mut all: Vec<usize> = (0..n_classes).collect();
            all.shuffle(&mut rng);
            for &label in all.iter().take(labels_per_client) {
                candidate[label].push(client);
            }
        }
        if candidate.iter().all(|c| !c.is_empty()) {
            owners = candidate;
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Partition(format!(
            "no label assignment covered all {n_classes} labels in 100 attempts"
        )));
    }

    let mut per_client_rows: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    for label in 0..n_classes {
        let mut rows: Vec<usize> = (0..ds.n_samples())
            .filter(|&r| ds.labels[r] == label)
            .collect();
        rows.shuffle(&mut rng);
        let k = owners[label].len();
        let base = rows.len() / k;
        let extra = rows.len() % k;
        let mut cursor = 0;
        for (rank, &client) in owners[label].iter().enumerate() {
            let take = base + usize::from(rank < extra);
            per_client_rows[client].extend(&rows[cursor..cursor + take]);
            cursor += take;
        }
    }

    let mut shards = Vec::with_capacity(spec.n_clients);
    for (idx, mut rows) in per_client_rows.into_iter().enumerate() {
        rows.sort_unstable();
        shards.push(build_shard(
            ds,
            idx,
            rows,
            spec.test_fraction,
            0,
            n_classes,
            &mut rng,
        )?);
    }
    Ok(shards)
}

/// Dirichlet partition: for each class a proportion vector p ~ Dir_N(alpha)
/// is drawn and the class samples are split by largest-remainder rounding.
pub fn dirichlet_partition(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    ds.validate_source()?;
    let alpha = match spec.scheme {
        Scheme::Dirichlet { alpha } => alpha,
        _ => return Err(Error::Config("spec scheme is not dirichlet".into())),
    };
    let mut rng = seed::rng(spec.seed, "dirichlet");
    let gamma =
        Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("invalid alpha {alpha}: {e}")))?;

    let mut per_client_rows: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    for label in 0..ds.n_classes {
        let mut proportions: Vec<f64> = (0..spec.n_clients)
            .map(|_| gamma.sample(&mut rng))
            .collect();
        let total: f64 = proportions.iter().sum();
        if total > 0.0 {
            for p in &mut proportions {
                *p /= total;
            }
        } else {
            // Gamma underflow at extreme alpha; fall back to uniform.
            proportions.fill(1.0 / spec.n_clients as f64);
        }
        let mut rows: Vec<usize> = (0..ds.n_samples())
            .filter(|&r| ds.labels[r] == label)
            .collect();
        rows.shuffle(&mut rng);
        let counts = largest_remainder_counts(&proportions, rows.len());
        let mut cursor = 0;
        for (client, &count) in counts.iter().enumerate() {
            per_client_rows[client].extend(&rows[cursor..cursor + count]);
            cursor += count;
        }
    }

    let starved: Vec<String> = per_client_rows
        .iter()
        .enumerate()
        .filter(|(_, rows)| rows.is_empty())
        .map(|(i, _)| client_id(i))
        .collect();
    if !starved.is_empty() {
        return Err(Error::Partition(format!(
            "clients with zero training samples: {}",
            starved.join(", ")
        )));
    }

    let mut shards = Vec::with_capacity(spec.n_clients);
    for (idx, mut rows) in per_client_rows.into_iter().enumerate() {
        rows.sort_unstable();
        shards.push(build_shard(
            ds,
            idx,
            rows,
            spec.test_fraction,
            0,
            ds.n_classes,
            &mut rng,
        )?);
    }
    Ok(shards)
}

/// Integer counts summing to `total`, proportional to `proportions`,
/// rounded by largest remainder (ties to the lower index).
fn largest_remainder_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(proportions.len());
    for (i, &p) in proportions.iter().enumerate() {
        let quota = p * total as f64;
        counts.push(quota.floor() as usize);
        remainders.push((quota - quota.floor(), i));
    }
    let assigned: usize = counts.iter().sum();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Mix partition: client j draws `samples_per_client` samples evenly across
/// the classes of exactly one source dataset. Sources occupy disjoint global
/// label ranges (dataset k's labels are offset by the class counts before it).
pub fn mix_partition(
    datasets: &[LabeledDataset],
    spec: &PartitionSpec,
) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    let (counts, samples_per_client) = match &spec.scheme {
        Scheme::Mix {
            dataset_client_counts,
            samples_per_client,
        } => (dataset_client_counts.clone(), *samples_per_client),
        _ => return Err(Error::Config("spec scheme is not mix".into())),
    };
    if counts.len() != datasets.len() {
        return Err(Error::Config(format!(
            "{} client counts but {} datasets",
            counts.len(),
            datasets.len()
        )));
    }
    let dim = datasets
        .first()
        .ok_or_else(|| Error::Config("mix needs at least one dataset".into()))?
        .n_features();
    for ds in datasets {
        ds.validate_source()?;
        if ds.n_features() != dim {
            return Err(Error::Dimension(format!(
                "dataset '{}' has {} features, expected {dim}; pad sources first",
                ds.name,
                ds.n_features()
            )));
        }
    }
    let n_classes_total: usize = datasets.iter().map(|d| d.n_classes).sum();

    let mut rng = seed::rng(spec.seed, "mix");
    let mut shards: Vec<ClientShard> = Vec::with_capacity(spec.n_clients);
    let mut next_client = 0usize;
    let mut label_offset = 0usize;
    for (ds, &n_local) in datasets.iter().zip(&counts) {
        // Per-class take for one client: as even as integer division allows.
        let per_class: Vec<usize> = {
            let base = samples_per_client / ds.n_classes;
            let extra = samples_per_client % ds.n_classes;
            (0..ds.n_classes)
                .map(|c| base + usize::from(c < extra))
                .collect()
        };
        let mut pools: Vec<Vec<usize>> = (0..ds.n_classes)
            .map(|c| {
                let mut v: Vec<usize> =
                    (0..ds.n_samples()).filter(|&r| ds.labels[r] == c).collect();
                v.shuffle(&mut rng);
                v
            })
            .collect();
        for (c, pool) in pools.iter().enumerate() {
            let needed = per_class[c] * n_local;
            if pool.len() < needed {
                return Err(Error::Partition(format!(
                    "dataset '{}' class {c} has {} samples, {needed} required",
                    ds.name,
                    pool.len()
                )));
            }
        }
        for _ in 0..n_local {
            let mut rows: Vec<usize> = Vec::with_capacity(samples_per_client);
            for (c, take) in per_class.iter().enumerate() {
                let pool = &mut pools[c];
                rows.extend(pool.drain(pool.len() - take..));
            }
            rows.sort_unstable();
            shards.push(build_shard(
                ds,
                next_client,
                rows,
                spec.test_fraction,
                label_offset,
                n_classes_total,
                &mut rng,
            )?);
            next_client += 1;
        }
        label_offset += ds.n_classes;
    }
    Ok(shards)
}

/// Two groups of clients with mutually flipped binary labels over the same
/// decision feature, while each group's high-variance directions live in a
/// group-specific block of coordinates. Pooled training is forced to chance
/// accuracy, per-group training is nearly perfect, and the group subspaces
/// are close to orthogonal.
pub fn generate_conflicting_groups(
    clients_per_group: usize,
    samples_per_client: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if clients_per_group == 0 || samples_per_client < 4 {
        return Err(Error::Config(
            "need >= 1 client per group and >= 4 samples per client".into(),
        ));
    }
    const DIM: usize = 10;
    const SIGNAL: f64 = 2.0;
    const GROUP_STD: f64 = 4.0;
    const FLOOR_STD: f64 = 0.05;
    let mut rng = seed::rng(seed, "conflicting-groups");
    let mut shards = Vec::with_capacity(2 * clients_per_group);
    for group in 0..2usize {
        let group_dims: std::ops::Range<usize> = if group == 0 { 1..4 } else { 4..7 };
        for local in 0..clients_per_group {
            let n = samples_per_client;
            let mut features = Array2::zeros((n, DIM));
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let class = i % 2;
                let center = if class == 1 { SIGNAL } else { -SIGNAL };
                features[[i, 0]] = center + rng.sample::<f64, _>(StandardNormal);
                for dim in 1..DIM {
                    let std = if group_dims.contains(&dim) {
                        GROUP_STD
                    } else {
                        FLOOR_STD
                    };
                    features[[i, dim]] = std * rng.sample::<f64, _>(StandardNormal);
                }
                // Group B reports the opposite label for the same geometry.
                labels.push(if group == 0 { class } else { 1 - class });
            }
            let source = if group == 0 { "group_a" } else { "group_b" };
            let ds = LabeledDataset::new(features, labels, 2, source)?;
            let rows: Vec<usize> = (0..n).collect();
            let mut shard = build_shard(
                &ds,
                group * clients_per_group + local,
                rows,
                test_fraction,
                0,
                2,
                &mut rng,
            )?;
            shard.source_name = source.to_string();
            shards.push(shard);
        }
    }
    Ok(shards)
}

/// One manifest entry: everything needed to rebuild a shard from its source.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub client_id: String,
    pub source: String,
    pub label_set: BTreeSet<usize>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Write the shard manifest: a plain text map from client id to source rows.
pub fn write_manifest(shards: &[ClientShard], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "# pacfl shard manifest v1")?;
    for shard in shards {
        writeln!(w, "client {}", shard.client_id)?;
        writeln!(w, "source {}", shard.source_name)?;
        let labels: Vec<String> = shard.label_set.iter().map(|l| l.to_string()).collect();
        writeln!(w, "labels {}", labels.join(","))?;
        let train: Vec<String> = shard.train_indices.iter().map(|i| i.to_string()).collect();
        writeln!(w, "train {}", train.join(","))?;
        let test: Vec<String> = shard.test_indices.iter().map(|i| i.to_string()).collect();
        writeln!(w, "test {}", test.join(","))?;
    }
    Ok(())
}

pub fn read_manifest(r: &mut impl Read) -> Result<Vec<ManifestEntry>> {
    let mut text = String::new();
    r.read_to_string(&mut text)
        .map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::Parse(format!("manifest line {}: '{line}'", line_no + 1)))?;
        let parse_list = |v: &str| -> Result<Vec<usize>> {
            if v.trim().is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|t| {
                    t.trim().parse::<usize>().map_err(|_| {
                        Error::Parse(format!("manifest line {}: bad index '{t}'", line_no + 1))
                    })
                })
                .collect()
        };
        match key {
            "client" => entries.push(ManifestEntry {
                client_id: value.trim().to_string(),
                source: String::new(),
                label_set: BTreeSet::new(),
                train_indices: Vec::new(),
                test_indices: Vec::new(),
            }),
            _ => {
                let entry = entries.last_mut().ok_or_else(|| {
                    Error::Parse(format!(
                        "manifest line {}: '{key}' before any client",
                        line_no + 1
                    ))
                })?;
                match key {
                    "source" => entry.source = value.trim().to_string(),
                    "labels" => entry.label_set = parse_list(value)?.into_iter().collect(),
                    "train" => entry.train_indices = parse_list(value)?,
                    "test" => entry.test_indices = parse_list(value)?,
                    other => {
                        return Err(Error::Parse(format!(
                            "manifest line {}: unknown key '{other}'",
                            line_no + 1
                        )))
                    }
                }
            }
        }
    }
    Ok(entries)
}

/// Rebuild shards from sources and a manifest, for exact experiment replay.
/// `datasets` must be listed in the same order as the original partition call
/// so the mix label offsets line up.
pub fn rebuild_shards(
    datasets: &[LabeledDataset],
    entries: &[ManifestEntry],
) -> Result<Vec<ClientShard>> {
    let n_classes_total: usize = datasets.iter().map(|d| d.n_classes).sum();
    let mut offsets = Vec::with_capacity(datasets.len());
    let mut acc = 0usize;
    for ds in datasets {
        offsets.push(acc);
        acc += ds.n_classes;
    }
    let mut shards = Vec::with_capacity(entries.len());
    for entry in entries {
        let pos = datasets
            .iter()
            .position(|d| d.name == entry.source)
            .ok_or_else(|| {
                Error::Partition(format!(
                    "manifest references unknown source '{}'",
                    entry.source
                ))
            })?;
        let ds = &datasets[pos];
        let (offset, total) = if datasets.len() == 1 {
            (0, ds.n_classes)
        } else {
            (offsets[pos], n_classes_total)
        };
        let train = ds.subset(&entry.train_indices, offset, total);
        let test = ds.subset(&entry.test_indices, offset, total);
        shards.push(ClientShard {
            client_id: entry.client_id.clone(),
            train,
            test,
            source_name: entry.source.clone(),
            label_set: entry.label_set.clone(),
            train_indices: entry.train_indices.clone(),
            test_indices: entry.test_indices.clone(),
        });
    }
    Ok(shards)
}
