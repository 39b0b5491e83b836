//! Client data signatures and principal-angle proximity between them.
//!
//! A client summarizes its local data matrix by the top-p left singular
//! vectors (its signature). The server compares signatures through the
//! principal angles between the spanned subspaces and collects the pairwise
//! distances into a proximity matrix, the input to clustering.
//!
//! Angles are reported in degrees everywhere.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;

/// Version written into the binary signature record.
pub const SIGNATURE_FORMAT_VERSION: u16 = 1;
const SIGNATURE_MAGIC: &[u8; 4] = b"PACS";

/// Proximity metric between two signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Smallest principal angle between the two subspaces.
    MinAngle,
    /// Sum of the angles between corresponding basis columns, in order.
    AngleTraceSum,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::MinAngle => "min_angle",
            MetricKind::AngleTraceSum => "trace_sum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "min_angle" => Ok(MetricKind::MinAngle),
            "trace_sum" => Ok(MetricKind::AngleTraceSum),
            other => Err(Error::Config(format!("unknown metric kind '{other}'"))),
        }
    }
}

/// Per-sample preprocessing applied before the SVD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalize {
    /// Use the data as-is.
    #[default]
    None,
    /// Scale each sample (column) to unit Euclidean norm.
    UnitSampleNorm,
    /// Divide the whole matrix by its largest absolute entry (pixel-style data).
    ScaleTo01,
}

impl Normalize {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalize::None => "none",
            Normalize::UnitSampleNorm => "unit_sample",
            Normalize::ScaleTo01 => "scale01",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Normalize::None),
            "unit_sample" => Ok(Normalize::UnitSampleNorm),
            "scale01" => Ok(Normalize::ScaleTo01),
            other => Err(Error::Config(format!("unknown normalize mode '{other}'"))),
        }
    }
}

/// A client's raw data, one sample per column.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    /// Wrap a feature x sample matrix, rejecting empty or non-finite input.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "data matrix must be nonempty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "data matrix contains NaN or infinite entries".into(),
            ));
        }
        Ok(DataMatrix { values })
    }

    /// Build from a samples x features layout (one sample per row).
    pub fn from_sample_rows(rows: &ArrayView2<f64>) -> Result<Self> {
        Self::new(rows.t().to_owned())
    }

    pub fn feature_dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn sample_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Truncated-SVD summary of one client's data: the top-p left singular
/// vectors (columns of `basis`) and their singular values.
#[derive(Debug, Clone)]
pub struct SubspaceSignature {
    client_id: String,
    basis: Array2<f64>,
    singular_values: Array1<f64>,
}

impl SubspaceSignature {
    /// Assemble and validate a signature from parts.
    pub fn new(
        client_id: impl Into<String>,
        basis: Array2<f64>,
        singular_values: Array1<f64>,
    ) -> Result<Self> {
        let sig = SubspaceSignature {
            client_id: client_id.into(),
            basis,
            singular_values,
        };
        sig.validate()?;
        Ok(sig)
    }

    fn validate(&self) -> Result<()> {
        let p = self.basis.ncols();
        if p == 0 || self.singular_values.len() != p {
            return Err(Error::Dimension(format!(
                "signature has {} basis columns but {} singular values",
                p,
                self.singular_values.len()
            )));
        }
        if p > self.basis.nrows() {
            return Err(Error::Dimension(format!(
                "p = {} exceeds feature dim {}",
                p,
                self.basis.nrows()
            )));
        }
        let defect = linalg::orthonormality_defect(&self.basis.view());
        if defect > 1e-8 {
            return Err(Error::InvalidData(format!(
                "basis columns are not orthonormal (defect {defect:e})"
            )));
        }
        let sv = &self.singular_values;
        if sv.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidData("singular values must be >= 0".into()));
        }
        if sv.windows(2).into_iter().any(|w| w[0] < w[1]) {
            return Err(Error::InvalidData(
                "singular values must be nonincreasing".into(),
            ));
        }
        Ok(())
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn feature_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn p(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    /// Serialize as the portable binary record: magic, version, dims, then
    /// column-major basis and singular values as little-endian doubles.
    /// The client id travels outside the record (typically the file name).
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(SIGNATURE_MAGIC)?;
        w.write_all(&SIGNATURE_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.feature_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.p() as u32).to_le_bytes())?;
        for j in 0..self.p() {
            for i in 0..self.feature_dim() {
                w.write_all(&self.basis[[i, j]].to_le_bytes())?;
            }
        }
        for s in self.singular_values.iter() {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    }

    /// Deserialize a record written by [`write_to`](Self::write_to).
    pub fn read_from(r: &mut impl Read, client_id: impl Into<String>) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != SIGNATURE_MAGIC {
            return Err(Error::Parse("bad signature magic".into()));
        }
        let mut buf2 = [0u8; 2];
        read_exact(r, &mut buf2)?;
        let version = u16::from_le_bytes(buf2);
        if version != SIGNATURE_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported signature version {version}"
            )));
        }
        let mut buf4 = [0u8; 4];
        read_exact(r, &mut buf4)?;
        let dim = u32::from_le_bytes(buf4) as usize;
        read_exact(r, &mut buf4)?;
        let p = u32::from_le_bytes(buf4) as usize;
        if dim == 0 || p == 0 || p > dim {
            return Err(Error::Parse(format!(
                "signature header has dim {dim}, p {p}"
            )));
        }
        let mut basis = Array2::zeros((dim, p));
        let mut buf8 = [0u8; 8];
        for j in 0..p {
            for i in 0..dim {
                read_exact(r, &mut buf8)?;
                basis[[i, j]] = f64::from_le_bytes(buf8);
            }
        }
        let mut sv = Array1::zeros(p);
        for j in 0..p {
            read_exact(r, &mut buf8)?;
            sv[j] = f64::from_le_bytes(buf8);
        }
        SubspaceSignature::new(client_id, basis, sv)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_to(&mut file)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path, client_id: impl Into<String>) -> Result<Self> {
        let mut file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read_from(&mut file, client_id)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Parse(format!("truncated signature record: {e}")))
}

/// Top-p left singular vectors and singular values of `d`.
///
/// Columns are sign-normalized (largest-magnitude entry positive) so the
/// result is a function of the input bytes alone. Requesting more directions
/// than the numerical rank is an error rather than a silently padded basis.
pub fn truncated_svd(d: &DataMatrix, p: usize) -> Result<(Array2<f64>, Array1<f64>)> {
    let max_p = d.feature_dim().min(d.sample_count());
    if p == 0 || p > max_p {
        return Err(Error::Dimension(format!(
            "p = {p} out of range 1..={max_p} for a {}x{} matrix",
            d.feature_dim(),
            d.sample_count()
        )));
    }
    let (u, sigma) = linalg::left_singular(&d.values().view());
    let rank_tol = sigma[0] * (d.feature_dim().max(d.sample_count()) as f64) * f64::EPSILON;
    let rank = sigma.iter().filter(|&&s| s > rank_tol).count();
    if rank < p {
        return Err(Error::Dimension(format!(
            "requested p = {p} but numerical rank is {rank}"
        )));
    }
    let basis = u.slice(ndarray::s![.., ..p]).to_owned();
    let values = sigma.slice(ndarray::s![..p]).to_owned();
    Ok((basis, values))
}

/// Compute a client's signature after optional preprocessing.
pub fn make_signature(
    d: &DataMatrix,
    p: usize,
    normalize: Normalize,
    client_id: impl Into<String>,
) -> Result<SubspaceSignature> {
    let prepared = match normalize {
        Normalize::None => d.clone(),
        Normalize::UnitSampleNorm => {
            let mut values = d.values().clone();
            for mut col in values.columns_mut() {
                let norm = col.dot(&col).sqrt();
                if norm > 0.0 {
                    col.mapv_inplace(|v| v / norm);
                }
            }
            DataMatrix::new(values)?
        }
        Normalize::ScaleTo01 => {
            let max = d.values().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if max > 0.0 {
                DataMatrix::new(d.values().mapv(|v| v / max))?
            } else {
                d.clone()
            }
        }
    };
    let (basis, singular_values) = truncated_svd(&prepared, p)?;
    SubspaceSignature::new(client_id, basis, singular_values)
}

/// Principal angles between the subspaces spanned by two signatures,
/// nondecreasing, in degrees. Values are the arccosines of the singular
/// values of `a^T b`, clamped into [0, 1] before arccos.
pub fn principal_angles(a: &SubspaceSignature, b: &SubspaceSignature) -> Result<Vec<f64>> {
    if a.feature_dim() != b.feature_dim() {
        return Err(Error::Dimension(format!(
            "feature dims differ: {} vs {}",
            a.feature_dim(),
            b.feature_dim()
        )));
    }
    let product = a.basis().t().dot(b.basis());
    let sigma = linalg::singular_values(&product.view());
    let q = a.p().min(b.p());
    // Singular values are sorted nonincreasing, so the arccosines come out
    // nondecreasing: the smallest angle is first.
    let angles: Vec<f64> = sigma
        .iter()
        .take(q)
        .map(|&s| s.clamp(0.0, 1.0).acos().to_degrees())
        .collect();
    Ok(angles)
}

/// One proximity-matrix entry between two signatures, in degrees.
///
/// `MinAngle` is the smallest principal angle. `AngleTraceSum` pairs basis
/// columns in order and sums the per-column angles; the inner products are
/// taken in absolute value so every term stays in [0, 90] degrees.
pub fn proximity_entry(
    a: &SubspaceSignature,
    b: &SubspaceSignature,
    metric: MetricKind,
) -> Result<f64> {
    match metric {
        MetricKind::MinAngle => Ok(principal_angles(a, b)?[0]),
        MetricKind::AngleTraceSum => {
            if a.feature_dim() != b.feature_dim() {
                return Err(Error::Dimension(format!(
                    "feature dims differ: {} vs {}",
                    a.feature_dim(),
                    b.feature_dim()
                )));
            }
            if a.p() != b.p() {
                return Err(Error::Dimension(format!(
                    "trace-sum metric needs equal p, got {} vs {}",
                    a.p(),
                    b.p()
                )));
            }
            let mut sum = 0.0;
            for j in 0..a.p() {
                let dot = a.basis().column(j).dot(&b.basis().column(j));
                sum += dot.abs().clamp(0.0, 1.0).acos().to_degrees();
            }
            Ok(sum)
        }
    }
}

/// Symmetric matrix of pairwise signature distances, in degrees.
#[derive(Debug, Clone)]
pub struct ProximityMatrix {
    entries: Array2<f64>,
    metric: MetricKind,
    client_ids: Vec<String>,
}

impl ProximityMatrix {
    /// Wrap precomputed entries, enforcing symmetry and a zero diagonal.
    pub fn new(entries: Array2<f64>, metric: MetricKind, client_ids: Vec<String>) -> Result<Self> {
        let k = client_ids.len();
        if entries.nrows() != k || entries.ncols() != k {
            return Err(Error::Dimension(format!(
                "matrix is {}x{} but there are {} client ids",
                entries.nrows(),
                entries.ncols(),
                k
            )));
        }
        for i in 0..k {
            if (entries[[i, i]]).abs() > 1e-9 {
                return Err(Error::InvalidData(format!(
                    "diagonal entry [{i}][{i}] = {} is not zero",
                    entries[[i, i]]
                )));
            }
            for j in 0..k {
                if !entries[[i, j]].is_finite() || entries[[i, j]] < 0.0 {
                    return Err(Error::InvalidData(format!(
                        "entry [{i}][{j}] = {} is not a nonnegative finite angle",
                        entries[[i, j]]
                    )));
                }
                if (entries[[i, j]] - entries[[j, i]]).abs() > 1e-9 {
                    return Err(Error::InvalidData(format!(
                        "asymmetry at [{i}][{j}]: {} vs {}",
                        entries[[i, j]],
                        entries[[j, i]]
                    )));
                }
            }
        }
        Ok(ProximityMatrix {
            entries,
            metric,
            client_ids,
        })
    }

    pub fn k(&self) -> usize {
        self.client_ids.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[[i, j]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn client_ids(&self) -> &[String] {
        &self.client_ids
    }

    /// CSV layout: corner cell names the metric, header row carries the
    /// client ids, each data row starts with its client id.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "{}", self.metric.as_str())?;
        for id in &self.client_ids {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for i in 0..self.k() {
            write!(w, "{}", self.client_ids[i])?;
            for j in 0..self.k() {
                write!(w, ",{}", self.entries[[i, j]])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv(r: &mut impl Read) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| Error::Parse(format!("proximity csv: {e}")))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("proximity csv is empty".into()))?;
        let mut fields = header.split(',');
        let metric = MetricKind::parse(
            fields
                .next()
                .ok_or_else(|| Error::Parse("proximity csv header is empty".into()))?,
        )?;
        let client_ids: Vec<String> = fields.map(str::to_string).collect();
        let k = client_ids.len();
        let mut entries = Array2::zeros((k, k));
        for (i, line) in lines.enumerate() {
            if i >= k {
                return Err(Error::Parse(format!(
                    "proximity csv has more than {k} data rows"
                )));
            }
            let mut cells = line.split(',');
            let row_id = cells
                .next()
                .ok_or_else(|| Error::Parse(format!("row {} is empty", i + 2)))?;
            if row_id != client_ids[i] {
                return Err(Error::Parse(format!(
                    "row {} is labeled '{row_id}' but header says '{}'",
                    i + 2,
                    client_ids[i]
                )));
            }
            for j in 0..k {
                let cell = cells.next().ok_or_else(|| {
                    Error::Parse(format!("row {} has fewer than {k} values", i + 2))
                })?;
                entries[[i, j]] = cell.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "row {}, column {}: '{cell}' is not a number",
                        i + 2,
                        j + 2
                    ))
                })?;
            }
        }
        ProximityMatrix::new(entries, metric, client_ids)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_csv(&mut file)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read_csv(&mut file)
    }
}

/// Pairwise proximity matrix over an ordered list of signatures.
pub fn build_proximity_matrix(
    signatures: &[SubspaceSignature],
    metric: MetricKind,
) -> Result<ProximityMatrix> {
    if signatures.is_empty() {
        return Err(Error::Dimension("need at least one signature".into()));
    }
    let k = signatures.len();
    let mut entries = Array2::zeros((k, k));
    let mut max_allowed = 90.0;
    if metric == MetricKind::AngleTraceSum {
        max_allowed *= signatures[0].p() as f64;
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let d = proximity_entry(&signatures[i], &signatures[j], metric)?;
            debug_assert!(d <= max_allowed + 1e-9);
            entries[[i, j]] = d;
            entries[[j, i]] = d;
        }
    }
    let ids = signatures
        .iter()
        .map(|s| s.client_id().to_string())
        .collect();
    ProximityMatrix::new(entries, metric, ids)
}
