//! Federation ingestion: per-node CSV files, synthetic federations with
//! controllable task correlation, train/test splitting and standardization.
//!
//! CSV layout is one file per node named `node_<id>.csv` with a header row
//! `feature_0,...,feature_{d-1},label[,split]` where `split` is `train` or
//! `test`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::losses::LossKind;
use crate::model::{NodeDataset, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    CsvDirectory,
    SyntheticClassification,
    SyntheticRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationSource {
    pub kind: SourceKind,
    /// Directory for [`SourceKind::CsvDirectory`].
    pub path: Option<PathBuf>,
    /// Loss used to validate CSV labels; synthetic kinds imply their own.
    pub loss: Option<LossKind>,
    pub d: usize,
    pub m: usize,
    /// Inclusive range of samples per node, before the train/test split.
    pub per_node_n: (usize, usize),
    pub correlation: f64,
    pub noise_sigma: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for FederationSource {
    fn default() -> Self {
        FederationSource {
            kind: SourceKind::SyntheticClassification,
            path: None,
            loss: None,
            d: 16,
            m: 10,
            per_node_n: (100, 100),
            correlation: 0.9,
            noise_sigma: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FederationSource {
    pub fn loss(&self) -> LossKind {
        match self.kind {
            SourceKind::SyntheticClassification => LossKind::Hinge,
            SourceKind::SyntheticRegression => LossKind::LeastSquares,
            SourceKind::CsvDirectory => self.loss.unwrap_or(LossKind::Hinge),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.test_fraction > 0.0 && self.test_fraction < 1.0, || {
            format!("test_fraction {} not in (0, 1)", self.test_fraction)
        })?;
        if self.kind == SourceKind::CsvDirectory {
            ensure(self.path.is_some(), || "csv_directory source needs a path".into())?;
            return Ok(());
        }
        ensure(self.d >= 1 && self.m >= 1, || "d and m must be positive".into())?;
        ensure((0.0..=1.0).contains(&self.correlation), || format!("correlation {} not in [0, 1]", self.correlation))?;
        ensure(self.noise_sigma >= 0.0, || "noise_sigma must be non-negative".into())?;
        ensure(self.per_node_n.0 >= 2 && self.per_node_n.0 <= self.per_node_n.1, || {
            format!("invalid per_node_n range {:?}", self.per_node_n)
        })?;
        Ok(())
    }

    pub fn build(&self) -> Result<Federation> {
        self.validate()?;
        match self.kind {
            SourceKind::CsvDirectory => {
                let path = self.path.as_deref().expect("validated");
                load_csv_federation(path, &CsvSchema { loss: self.loss(), test_fraction: self.test_fraction, seed: self.seed })
            }
            _ => synthesize_federation(self),
        }
    }
}

/// Per-feature affine transform fitted on clean training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(node: &NodeDataset) -> Self {
        let n = node.len() as f64;
        let d = node.dim();
        let mut mean = vec![0.0; d];
        for x in node.rows() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for x in node.rows() {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, node: &NodeDataset) -> Result<NodeDataset> {
        let f = DMatrix::from_fn(node.dim(), node.len(), |j, i| (node.features()[(j, i)] - self.mean[j]) / self.scale[j]);
        NodeDataset::new(node.node_id, f, node.labels().to_vec(), node.split)
    }
}

/// A loaded or generated federation, standardized per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Federation {
    pub train: Vec<NodeDataset>,
    pub test: Vec<NodeDataset>,
    pub loss: LossKind,
    pub standardizers: Vec<Standardizer>,
    /// Generating weights (`d x m`) for synthetic federations.
    pub ground_truth: Option<DMatrix<f64>>,
}

impl Federation {
    pub fn nodes(&self) -> usize {
        self.train.len()
    }

    pub fn dim(&self) -> usize {
        self.train[0].dim()
    }

    /// Largest clean training-row norm across the federation.
    pub fn max_row_norm(&self) -> f64 {
        self.train
            .iter()
            .flat_map(|n| n.rows())
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Standardizes raw train/test pairs using train statistics only.
    pub fn from_raw(raw: Vec<(NodeDataset, NodeDataset)>, loss: LossKind, ground_truth: Option<DMatrix<f64>>) -> Result<Self> {
        ensure(!raw.is_empty(), || "federation has no nodes".into())?;
        let d = raw[0].0.dim();
        let mut train = Vec::with_capacity(raw.len());
        let mut test = Vec::with_capacity(raw.len());
        let mut standardizers = Vec::with_capacity(raw.len());
        for (tr, te) in raw {
            ensure(tr.dim() == d && (te.is_empty() || te.dim() == d), || format!("node {} has ragged dimension", tr.node_id))?;
            tr.check_labels(loss)?;
            te.check_labels(loss)?;
            let s = Standardizer::fit(&tr);
            train.push(s.apply(&tr)?);
            test.push(s.apply(&te)?);
            standardizers.push(s);
        }
        Ok(Federation { train, test, loss, standardizers, ground_truth })
    }
}

/// Unit-norm draw from the standard Gaussian.
fn random_direction(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Per-node weights `w_l = c u + (1 - c) v_l` (all unit vectors), as a `d x m` matrix.
pub fn synthetic_weights(d: usize, m: usize, correlation: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let shared = random_direction(d, rng);
    let mut w = DMatrix::zeros(d, m);
    for l in 0..m {
        let own = random_direction(d, rng);
        let mut wl = &shared * correlation + own * (1.0 - correlation);
        let n = wl.norm();
        if n > 1e-12 {
            wl /= n;
        } else {
            wl = shared.clone();
        }
        w.set_column(l, &wl);
    }
    w
}

pub fn synthesize_federation(source: &FederationSource) -> Result<Federation> {
    let (raw, truth) = synthesize_raw(source)?;
    Federation::from_raw(raw, source.loss(), Some(truth))
}

/// Seeded shuffle split; with `stratify` each label class is split separately.
pub fn split_train_test(node: &NodeDataset, fraction: f64, seed: u64, stratify: bool) -> Result<(NodeDataset, NodeDataset)> {
    ensure(fraction > 0.0 && fraction < 1.0, || format!("test fraction {fraction} not in (0, 1)"))?;
    ensure(node.len() >= 2, || format!("node {} has {} samples; cannot split", node.node_id, node.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let groups: Vec<Vec<usize>> = if stratify {
        let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &y) in node.labels().iter().enumerate() {
            by_class.entry(y.to_bits() as i64).or_default().push(i);
        }
        for idx in by_class.values() {
            if idx.len() < 2 {
                return Err(Error::Validation(format!(
                    "node {}: class with {} sample(s) is too small to stratify",
                    node.node_id,
                    idx.len()
                )));
            }
        }
        by_class.into_values().collect()
    } else {
        vec![(0..node.len()).collect()]
    };

    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for mut idx in groups {
        idx.shuffle(&mut rng);
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test_idx.extend_from_slice(&idx[..k]);
        train_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((subset(node, &train_idx, Split::Train)?, subset(node, &test_idx, Split::Test)?))
}

fn subset(node: &NodeDataset, idx: &[usize], split: Split) -> Result<NodeDataset> {
    let f = DMatrix::from_fn(node.dim(), idx.len(), |j, k| node.features()[(j, idx[k])]);
    NodeDataset::new(node.node_id, f, idx.iter().map(|&i| node.label(i)).collect(), split)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvSchema {
    pub loss: LossKind,
    /// Used when a file has no `split` column.
    pub test_fraction: f64,
    pub seed: u64,
}

/// A node file as stored on disk: rows in file order with their split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct RawNode {
    pub node_id: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub splits: Option<Vec<Split>>,
}

fn node_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(id) = name.strip_prefix("node_").and_then(|s| s.strip_suffix(".csv")) {
            if let Ok(id) = id.parse::<usize>() {
                files.push((id, path));
            }
        }
    }
    files.sort();
    ensure(!files.is_empty(), || format!("no node_<id>.csv files in {}", dir.display()))?;
    for (k, (id, _)) in files.iter().enumerate() {
        ensure(*id == k, || format!("node files must be numbered 0..m-1; found node_{id}.csv at position {k}"))?;
    }
    Ok(files)
}

fn read_node(id: usize, path: &Path, loss: LossKind) -> Result<RawNode> {
    let load_err = |row: usize, msg: String| Error::Load { path: path.to_path_buf(), row, msg };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| load_err(1, e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let label_col = names.iter().position(|&h| h == "label").ok_or_else(|| load_err(1, "missing `label` column".into()))?;
    let split_col = names.iter().position(|&h| h == "split");
    let mut feature_cols = Vec::new();
    for (c, &h) in names.iter().enumerate() {
        if let Some(k) = h.strip_prefix("feature_") {
            let k: usize = k.parse().map_err(|_| load_err(1, format!("bad feature column `{h}`")))?;
            feature_cols.push((k, c));
        } else if c != label_col && Some(c) != split_col {
            return Err(load_err(1, format!("unexpected column `{h}`")));
        }
    }
    feature_cols.sort();
    for (k, &(idx, _)) in feature_cols.iter().enumerate() {
        if idx != k {
            return Err(load_err(1, format!("feature columns must be feature_0..feature_{{d-1}}; missing feature_{k}")));
        }
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut splits = split_col.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| load_err(line, e.to_string()))?;
        if record.len() != names.len() {
            return Err(load_err(line, format!("expected {} fields, found {}", names.len(), record.len())));
        }
        let parse = |c: usize| -> Result<f64> {
            let v: f64 = record[c].trim().parse().map_err(|_| load_err(line, format!("cannot parse `{}` as a number", &record[c])))?;
            if !v.is_finite() {
                return Err(load_err(line, format!("non-finite value `{}`", &record[c])));
            }
            Ok(v)
        };
        let row = feature_cols.iter().map(|&(_, c)| parse(c)).collect::<Result<Vec<_>>>()?;
        let label = parse(label_col)?;
        loss.check_label(label).map_err(|e| load_err(line, e.to_string()))?;
        if let (Some(col), Some(splits)) = (split_col, splits.as_mut()) {
            splits.push(match record[col].trim() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(load_err(line, format!("split must be `train` or `test`, got `{other}`"))),
            });
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(load_err(1, "node has no rows".into()));
    }
    Ok(RawNode { node_id: id, rows, labels, splits })
}

/// Reads every node file without transforming values.
pub fn read_csv_federation(dir: &Path, loss: LossKind) -> Result<Vec<RawNode>> {
    let nodes = node_files(dir)?
        .into_iter()
        .map(|(id, path)| read_node(id, &path, loss))
        .collect::<Result<Vec<_>>>()?;
    let d = nodes[0].rows[0].len();
    for n in &nodes {
        if let Some(pos) = n.rows.iter().position(|r| r.len() != d) {
            return Err(Error::Load {
                path: dir.join(format!("node_{}.csv", n.node_id)),
                row: pos + 2,
                msg: format!("dimension {} differs from federation dimension {d}", n.rows[pos].len()),
            });
        }
    }
    Ok(nodes)
}

/// Writes nodes in the layout read by [`read_csv_federation`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv_federation(dir: &Path, nodes: &[RawNode]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for node in nodes {
        let path = dir.join(format!("node_{}.csv", node.node_id));
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Load { path: path.clone(), row: 0, msg: e.to_string() })?;
        let d = node.rows.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (0..d).map(|k| format!("feature_{k}")).collect();
        header.push("label".into());
        if node.splits.is_some() {
            header.push("split".into());
        }
        w.write_record(&header)?;
        for (i, row) in node.rows.iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(node.labels[i].to_string());
            if let Some(splits) = &node.splits {
                rec.push(match splits[i] {
                    Split::Train => "train".into(),
                    Split::Test => "test".into(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Converts a federation's raw (pre-standardization) splits into writable nodes.
pub fn raw_nodes(pairs: &[(NodeDataset, NodeDataset)]) -> Vec<RawNode> {
    pairs
        .iter()
        .map(|(tr, te)| {
            let mut rows: Vec<Vec<f64>> = tr.rows().map(<[f64]>::to_vec).collect();
            rows.extend(te.rows().map(<[f64]>::to_vec));
            let mut labels = tr.labels().to_vec();
            labels.extend_from_slice(te.labels());
            let mut splits = vec![Split::Train; tr.len()];
            splits.extend(std::iter::repeat_n(Split::Test, te.len()));
            RawNode { node_id: tr.node_id, rows, labels, splits: Some(splits) }
        })
        .collect()
}

/// Loads, splits (when the files carry no `split` column) and standardizes.
pub fn load_csv_federation(dir: &Path, schema: &CsvSchema) -> Result<Federation> {
    let nodes = read_csv_federation(dir, schema.loss)?;
    let mut raw = Vec::with_capacity(nodes.len());
    for n in nodes {
        let all = NodeDataset::from_rows(n.node_id, &n.rows, n.labels.clone(), Split::Train)
            .map_err(|e| Error::Load { path: dir.join(format!("node_{}.csv", n.node_id)), row: 0, msg: e.to_string() })?;
        let pair = match &n.splits {
            Some(splits) => {
                let pick = |s: Split| -> Vec<usize> { (0..splits.len()).filter(|&i| splits[i] == s).collect() };
                let (tr, te) = (pick(Split::Train), pick(Split::Test));
                if tr.is_empty() {
                    return Err(Error::Load {
                        path: dir.join(format!("node_{}.csv", n.node_id)),
                        row: 0,
                        msg: "node has no training rows".into(),
                    });
                }
                (subset(&all, &tr, Split::Train)?, subset(&all, &te, Split::Test)?)
            }
            None => split_train_test(&all, schema.test_fraction, schema.seed ^ n.node_id as u64, schema.loss.is_classification())?,
        };
        raw.push(pair);
    }
    Federation::from_raw(raw, schema.loss, None)
}

/// Train/test pair per node.
pub type NodePairs = Vec<(NodeDataset, NodeDataset)>;

/// Generates the raw (unstandardized) splits of a synthetic federation, for export.
pub fn synthesize_raw(source: &FederationSource) -> Result<(NodePairs, DMatrix<f64>)> {
    source.validate()?;
    if source.kind == SourceKind::CsvDirectory {
        return Err(Error::Config("csv_directory is not a synthetic source".into()));
    }
    let loss = source.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(source.seed);
    let truth = synthetic_weights(source.d, source.m, source.correlation, &mut rng);
    let mut raw = Vec::with_capacity(source.m);
    for l in 0..source.m {
        let n = rng.random_range(source.per_node_n.0..=source.per_node_n.1);
        let features = DMatrix::from_fn(source.d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let labels = (0..n)
            .map(|i| {
                let noisy = features.column(i).dot(&truth.column(l)) + source.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                match loss {
                    LossKind::LeastSquares => noisy,
                    LossKind::Hinge => if noisy >= 0.0 { 1.0 } else { -1.0 },
                }
            })
            .collect();
        let node = NodeDataset::new(l, features, labels, Split::Train)?;
        let split_seed = source.seed ^ 0x5eed_0000_0000 ^ l as u64;
        raw.push(split_train_test(&node, source.test_fraction, split_seed, loss.is_classification())?);
    }
    Ok((raw, truth))
}
