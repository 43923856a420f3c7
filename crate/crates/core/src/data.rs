//! Interaction logs: ingestion, entity indexing, inter-event time deltas and
//! chronological splits.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header written for files that carry a state-label column.
pub const LABELED_HEADER: &str = "user_id,item_id,timestamp,state_label,comma_separated_list_of_features";

/// One timestamped user–item event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    /// Position in the time-ordered sequence.
    pub seq_id: usize,
    pub user: usize,
    pub item: usize,
    pub timestamp: f64,
    pub features: Vec<f64>,
    pub state_label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub num_users: usize,
    pub num_items: usize,
    pub feature_dim: usize,
    /// Original identifiers, indexed by dense user index.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Whether the source carried a state-label column.
    pub has_labels: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.interactions.last().map(|x| x.timestamp)
    }

    pub fn positive_labels(&self, range: Range<usize>) -> usize {
        self.interactions[range]
            .iter()
            .filter(|x| x.state_label == 1)
            .count()
    }

    /// Writes the dataset in the same CSV layout [`load_interactions`] reads.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = if self.has_labels {
            LABELED_HEADER.split(',').map(str::to_owned).collect()
        } else {
            let mut h = vec!["user_id".to_owned(), "item_id".into(), "timestamp".into()];
            h.extend((0..self.feature_dim).map(|k| format!("f{k}")));
            h
        };
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for x in &self.interactions {
            let mut rec = vec![
                self.user_ids[x.user].clone(),
                self.item_ids[x.item].clone(),
                x.timestamp.to_string(),
            ];
            if self.has_labels {
                rec.push(x.state_label.to_string());
            }
            rec.extend(x.features.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Collects events keyed by original identifiers and produces a sorted,
/// densely indexed [`Dataset`].
#[derive(Debug)]
pub struct DatasetBuilder {
    feature_dim: usize,
    has_labels: bool,
    rows: Vec<(String, String, f64, Vec<f64>, u8)>,
}

impl DatasetBuilder {
    pub fn new(feature_dim: usize, has_labels: bool) -> Self {
        DatasetBuilder {
            feature_dim,
            has_labels,
            rows: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        user: impl Into<String>,
        item: impl Into<String>,
        timestamp: f64,
        features: Vec<f64>,
        state_label: u8,
    ) -> Result<()> {
        let line = self.rows.len() as u64 + 2;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative or non-finite timestamp {timestamp}"),
            });
        }
        if features.len() != self.feature_dim {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "inconsistent feature count: expected {}, found {}",
                    self.feature_dim,
                    features.len()
                ),
            });
        }
        if state_label > 1 {
            return Err(Error::Parse {
                line,
                msg: format!("state_label must be 0 or 1, found {state_label}"),
            });
        }
        self.rows
            .push((user.into(), item.into(), timestamp, features, state_label));
        Ok(())
    }

    pub fn build(mut self) -> Result<Dataset> {
        if self.rows.is_empty() {
            return Err(Error::NoInteractions);
        }
        // stable: equal timestamps keep insertion order
        self.rows.sort_by(|a, b| a.2.total_cmp(&b.2));
        let mut users: HashMap<String, usize> = HashMap::new();
        let mut items: HashMap<String, usize> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let interactions = self
            .rows
            .into_iter()
            .enumerate()
            .map(|(seq_id, (u, i, timestamp, features, state_label))| {
                let user = *users.entry(u).or_insert_with_key(|k| {
                    user_ids.push(k.clone());
                    user_ids.len() - 1
                });
                let item = *items.entry(i).or_insert_with_key(|k| {
                    item_ids.push(k.clone());
                    item_ids.len() - 1
                });
                Interaction {
                    seq_id,
                    user,
                    item,
                    timestamp,
                    features,
                    state_label,
                }
            })
            .collect();
        Ok(Dataset {
            interactions,
            num_users: user_ids.len(),
            num_items: item_ids.len(),
            feature_dim: self.feature_dim,
            user_ids,
            item_ids,
            has_labels: self.has_labels,
        })
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Give feature-less files a single constant zero feature.
    pub pad_empty_features: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            pad_empty_features: true,
        }
    }
}

/// Reads `user_id,item_id,timestamp[,state_label],features...` CSV.
///
/// The label column is present when the fourth header field is
/// `state_label`; otherwise every column after `timestamp` is a feature.
pub fn load_interactions(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let has_labels = header
        .get(3)
        .is_some_and(|h| h.eq_ignore_ascii_case("state_label"));
    let fixed = if has_labels { 4 } else { 3 };

    let mut builder: Option<DatasetBuilder> = None;
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| csv_err(path, e))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < fixed {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least {fixed} columns, found {}", record.len()),
            });
        }
        let num = |k: usize, what: &str| -> Result<f64> {
            record[k].parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad {what} {:?}", &record[k]),
            })
        };
        let timestamp = num(2, "timestamp")?;
        if timestamp < 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative timestamp {timestamp}"),
            });
        }
        let label = if has_labels {
            match &record[3] {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("state_label must be 0 or 1, found {other:?}"),
                    })
                }
            }
        } else {
            0
        };
        let mut features = (fixed..record.len())
            .map(|k| num(k, "feature"))
            .collect::<Result<Vec<_>>>()?;
        let raw_dim = features.len();
        let b = builder.get_or_insert_with(|| {
            let dim = if raw_dim == 0 && opts.pad_empty_features { 1 } else { raw_dim };
            DatasetBuilder::new(dim, has_labels)
        });
        if raw_dim == 0 && opts.pad_empty_features && b.feature_dim == 1 {
            features.push(0.0);
        }
        b.push(&record[0], &record[1], timestamp, features, label)
            .map_err(|e| match e {
                Error::Parse { msg, .. } => Error::Parse { line, msg },
                other => other,
            })?;
    }
    builder.ok_or(Error::NoInteractions)?.build()
}

/// Contiguous, time-ordered train / validation / test ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

fn boundary(n: usize, pct: f64) -> usize {
    ((n as f64 * pct) / 100.0).floor() as usize
}

/// Train on the first `train_pct`%, validate on the next `val_pct`%, test on
/// the remainder.
pub fn chronological_split(n: usize, train_pct: f64, val_pct: f64) -> Result<Split> {
    if !(train_pct > 0.0 && val_pct > 0.0 && train_pct + val_pct < 100.0) {
        return Err(Error::Config(format!(
            "split percentages out of range: train {train_pct}, validation {val_pct}"
        )));
    }
    let t = boundary(n, train_pct);
    let v = boundary(n, train_pct + val_pct);
    check_split(Split {
        train: 0..t,
        validation: t..v,
        test: v..n,
    })
}

/// Fixed-size validation and test windows directly after the training
/// window. Used when the training fraction varies but the evaluation data
/// should stay the same size.
pub fn windowed_split(n: usize, train_pct: f64, val_pct: f64, test_pct: f64) -> Result<Split> {
    if !(train_pct > 0.0 && val_pct > 0.0 && test_pct > 0.0)
        || train_pct + val_pct + test_pct > 100.0 + 1e-9
    {
        return Err(Error::Config(format!(
            "split percentages out of range: train {train_pct}, validation {val_pct}, test {test_pct}"
        )));
    }
    let t = boundary(n, train_pct);
    let v = (t + boundary(n, val_pct)).min(n);
    let e = (v + boundary(n, test_pct)).min(n);
    check_split(Split {
        train: 0..t,
        validation: t..v,
        test: v..e,
    })
}

fn check_split(s: Split) -> Result<Split> {
    for (name, r) in [("train", &s.train), ("validation", &s.validation), ("test", &s.test)] {
        if r.is_empty() {
            return Err(Error::EmptySplit(name.to_owned()));
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaScale {
    /// Subtract the training mean, divide by the training standard deviation.
    #[default]
    MeanStd,
    /// Divide by the largest training delta.
    Max,
    None,
}

impl FromStr for DeltaScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-std" => Ok(DeltaScale::MeanStd),
            "max" => Ok(DeltaScale::Max),
            "none" => Ok(DeltaScale::None),
            other => Err(Error::Config(format!("unknown delta scale {other:?}"))),
        }
    }
}

impl fmt::Display for DeltaScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeltaScale::MeanStd => "mean-std",
            DeltaScale::Max => "max",
            DeltaScale::None => "none",
        })
    }
}

/// `normalized = (raw - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        shift: 0.0,
        scale: 1.0,
    };

    #[inline]
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.shift) / self.scale
    }

    fn fit(scale: DeltaScale, sample: &[f64]) -> Affine {
        let n = sample.len() as f64;
        match scale {
            DeltaScale::None => Affine::IDENTITY,
            _ if sample.is_empty() => Affine::IDENTITY,
            DeltaScale::Max => {
                let m = sample.iter().copied().fold(0.0, f64::max);
                Affine {
                    shift: 0.0,
                    scale: if m > 0.0 { m } else { 1.0 },
                }
            }
            DeltaScale::MeanStd => {
                let mean = sample.iter().sum::<f64>() / n;
                let var = sample.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                Affine {
                    shift: mean,
                    scale: if sd > 0.0 { sd } else { 1.0 },
                }
            }
        }
    }
}

/// Per-interaction elapsed time since the user's (item's) previous
/// interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTable {
    pub raw_u: Vec<f64>,
    pub raw_i: Vec<f64>,
    pub delta_u: Vec<f64>,
    pub delta_i: Vec<f64>,
    pub user_norm: Affine,
    pub item_norm: Affine,
}

/// One forward pass with per-entity last-seen timestamps. Normalization
/// statistics come from interactions in `train` only.
pub fn compute_deltas(ds: &Dataset, scale: DeltaScale, train: Range<usize>) -> DeltaTable {
    let mut last_u: Vec<Option<f64>> = vec![None; ds.num_users];
    let mut last_i: Vec<Option<f64>> = vec![None; ds.num_items];
    let mut raw_u = Vec::with_capacity(ds.len());
    let mut raw_i = Vec::with_capacity(ds.len());
    for x in &ds.interactions {
        raw_u.push(last_u[x.user].map_or(0.0, |t| x.timestamp - t));
        raw_i.push(last_i[x.item].map_or(0.0, |t| x.timestamp - t));
        last_u[x.user] = Some(x.timestamp);
        last_i[x.item] = Some(x.timestamp);
    }
    let train = train.start.min(ds.len())..train.end.min(ds.len());
    let user_norm = Affine::fit(scale, &raw_u[train.clone()]);
    let item_norm = Affine::fit(scale, &raw_i[train]);
    DeltaTable {
        delta_u: raw_u.iter().map(|&d| user_norm.apply(d)).collect(),
        delta_i: raw_i.iter().map(|&d| item_norm.apply(d)).collect(),
        raw_u,
        raw_i,
        user_norm,
        item_norm,
    }
}
