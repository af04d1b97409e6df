use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::learners::idx;
use crate::randomness::RandomStream;

/// Row-major feature matrix with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<u32>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() * n_features {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: labels.len() * n_features,
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {n_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Fraction of samples carried by each class.
    pub fn class_histogram(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.n_classes];
        for &l in &self.labels {
            h[l as usize] += 1.0;
        }
        let n = self.len().max(1) as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    }
}

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetKind {
    /// Gaussian clusters around random class centers.
    SyntheticBlobs {
        classes: usize,
        features: usize,
        train_samples: usize,
        test_samples: usize,
        /// Spread of the class centers relative to the unit within-class noise.
        separation: f64,
    },
    /// Directory holding `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
    /// `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte`.
    IdxFiles {
        dir: PathBuf,
        max_train: usize,
        max_test: usize,
    },
}

impl DatasetKind {
    pub fn blobs(classes: usize, features: usize, train_samples: usize) -> Self {
        Self::SyntheticBlobs {
            classes,
            features,
            train_samples,
            test_samples: train_samples / 4,
            separation: 1.0,
        }
    }
}

/// How training samples are spread over clients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Allocation {
    Iid,
    Dirichlet(f64),
}

impl FromStr for Allocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "iid" {
            return Ok(Self::Iid);
        }
        let alpha = lower
            .strip_prefix("dirichlet")
            .map(|rest| rest.trim_matches(|c| c == '(' || c == ')' || c == ':' || c == '='))
            .ok_or_else(|| Error::Config(format!("unknown allocation `{s}`")))?;
        let alpha: f64 = alpha
            .parse()
            .map_err(|_| Error::Config(format!("bad Dirichlet parameter in `{s}`")))?;
        if !(alpha > 0.0) {
            return Err(Error::Config("Dirichlet parameter must be positive".into()));
        }
        Ok(Self::Dirichlet(alpha))
    }
}

impl std::fmt::Display for Allocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Iid => f.write_str("iid"),
            Self::Dirichlet(a) => write!(f, "dirichlet({a})"),
        }
    }
}

/// Client shards plus the held-out test set.
#[derive(Clone, Debug)]
pub struct FederatedData {
    pub shards: Vec<Dataset>,
    pub test: Dataset,
    /// Union of all shards in original order.
    pub train: Dataset,
}

/// Builds the data and splits the training part over `n_clients`.
///
/// `stream` drives sample generation (synthetic data), the shuffle and the
/// Dirichlet proportions; the result is a deterministic function of it.
pub fn make_dataset(
    kind: &DatasetKind,
    allocation: Allocation,
    n_clients: usize,
    stream: &mut RandomStream,
) -> Result<FederatedData> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument(
            "at least one client is required".into(),
        ));
    }
    let (train, test) = match kind {
        DatasetKind::SyntheticBlobs {
            classes,
            features,
            train_samples,
            test_samples,
            separation,
        } => synthetic_blobs(
            *classes,
            *features,
            *train_samples,
            *test_samples,
            *separation,
            stream,
        )?,
        DatasetKind::IdxFiles {
            dir,
            max_train,
            max_test,
        } => {
            let train = idx::read_pair(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                *max_train,
            )?;
            let test = idx::read_pair(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
                *max_test,
            )?;
            (train, test)
        }
    };
    let assignment = match allocation {
        Allocation::Iid => iid_split(train.len(), n_clients, stream),
        Allocation::Dirichlet(alpha) => dirichlet_split(&train, n_clients, alpha, stream)?,
    };
    let shards = assignment.iter().map(|idx| train.subset(idx)).collect();
    Ok(FederatedData {
        shards,
        test,
        train,
    })
}

fn synthetic_blobs(
    classes: usize,
    features: usize,
    train_samples: usize,
    test_samples: usize,
    separation: f64,
    stream: &mut RandomStream,
) -> Result<(Dataset, Dataset)> {
    if classes == 0 || features == 0 {
        return Err(Error::InvalidArgument(
            "blobs need at least one class and one feature".into(),
        ));
    }
    let mut normal = || -> f64 { StandardNormal.sample(&mut *stream) };
    let centers: Vec<f64> = (0..classes * features)
        .map(|_| separation * normal())
        .collect();
    let mut draw = |n: usize| -> Result<Dataset> {
        let mut feats = Vec::with_capacity(n * features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // balanced classes, interleaved
            let c = i % classes;
            labels.push(c as u32);
            for f in 0..features {
                feats.push(centers[c * features + f] + normal());
            }
        }
        Dataset::new(feats, labels, features, classes)
    };
    let train = draw(train_samples)?;
    let test = draw(test_samples)?;
    Ok((train, test))
}

fn iid_split(n: usize, n_clients: usize, stream: &mut RandomStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(stream);
    let mut shards = vec![Vec::new(); n_clients];
    for (pos, i) in order.into_iter().enumerate() {
        shards[pos % n_clients].push(i);
    }
    shards
}

fn dirichlet_split(
    train: &Dataset,
    n_clients: usize,
    alpha: f64,
    stream: &mut RandomStream,
) -> Result<Vec<Vec<usize>>> {
    let classes = train.n_classes;
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let proportions: Vec<Vec<f64>> = (0..n_clients)
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| gamma.sample(&mut *stream)).collect();
            let total: f64 = raw.iter().sum();
            if total > 0.0 {
                raw.iter().map(|g| g / total).collect()
            } else {
                // every draw underflowed; put all mass on one class
                let mut v = vec![0.0; classes];
                v[(stream.next_u64() % classes as u64) as usize] = 1.0;
                v
            }
        })
        .collect();

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in train.labels.iter().enumerate() {
        pools[l as usize].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut *stream);
    }

    // clients take turns; each turn draws a class from the client's
    // proportions restricted to classes that still have samples
    let mut shards = vec![Vec::new(); n_clients];
    let mut remaining = train.len();
    let mut client = 0;
    while remaining > 0 {
        let weights: Vec<f64> = (0..classes)
            .map(|c| {
                if pools[c].is_empty() {
                    0.0
                } else {
                    proportions[client][c]
                }
            })
            .collect();
        let class = match crate::randomness::draw_categorical(stream, &weights) {
            Ok(c) => c,
            // the client's classes are exhausted; fall back to the largest pool
            Err(_) => (0..classes)
                .max_by_key(|&c| pools[c].len())
                .expect("classes > 0"),
        };
        let sample = pools[class].pop().expect("non-empty pool selected");
        shards[client].push(sample);
        remaining -= 1;
        client = (client + 1) % n_clients;
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::{derive_stream, Party, Role, StreamKey};

    fn stream(seed: u64) -> RandomStream {
        derive_stream(&StreamKey::new(seed, Party::Global, Role::DataShuffle))
    }

    fn covers(data: &FederatedData) {
        let total: usize = data.shards.iter().map(Dataset::len).sum();
        assert_eq!(total, data.train.len());
        // compare sorted multisets of rows
        let mut rows: Vec<Vec<u64>> = data
            .shards
            .iter()
            .flat_map(|s| {
                (0..s.len())
                    .map(|i| s.row(i).iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut all: Vec<Vec<u64>> = (0..data.train.len())
            .map(|i| data.train.row(i).iter().map(|x| x.to_bits()).collect())
            .collect();
        rows.sort();
        all.sort();
        assert_eq!(rows, all);
    }

    #[test]
    fn iid_shard_sizes() {
        let data = make_dataset(
            &DatasetKind::blobs(10, 5, 1000),
            Allocation::Iid,
            10,
            &mut stream(1),
        )
        .unwrap();
        assert!(data.shards.iter().all(|s| s.len() == 100));
        covers(&data);
    }

    #[test]
    fn dirichlet_covers_and_is_skewed() {
        let mut skewed_seeds = 0;
        for seed in 0..10 {
            let data = make_dataset(
                &DatasetKind::blobs(10, 4, 1000),
                Allocation::Dirichlet(0.1),
                10,
                &mut stream(seed),
            )
            .unwrap();
            covers(&data);
            let skewed = data.shards.iter().any(|s| {
                let mut h = s.class_histogram();
                h.sort_by(|a, b| b.total_cmp(a));
                h[0] + h[1] >= 0.8
            });
            skewed_seeds += usize::from(skewed);
        }
        assert_eq!(skewed_seeds, 10);
    }

    #[test]
    fn deterministic_generation() {
        let a = make_dataset(
            &DatasetKind::blobs(3, 4, 90),
            Allocation::Iid,
            3,
            &mut stream(5),
        )
        .unwrap();
        let b = make_dataset(
            &DatasetKind::blobs(3, 4, 90),
            Allocation::Iid,
            3,
            &mut stream(5),
        )
        .unwrap();
        assert_eq!(a.shards, b.shards);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn allocation_parsing() {
        assert_eq!("iid".parse::<Allocation>().unwrap(), Allocation::Iid);
        assert_eq!(
            "dirichlet(0.1)".parse::<Allocation>().unwrap(),
            Allocation::Dirichlet(0.1)
        );
        assert_eq!(
            "Dirichlet:0.5".parse::<Allocation>().unwrap(),
            Allocation::Dirichlet(0.5)
        );
        assert!("dirichlet(-1)".parse::<Allocation>().is_err());
        assert!("zipf".parse::<Allocation>().is_err());
        let a = Allocation::Dirichlet(0.25);
        assert_eq!(a.to_string().parse::<Allocation>().unwrap(), a);
    }

    #[test]
    fn unreadable_idx_reports_path() {
        let kind = DatasetKind::IdxFiles {
            dir: PathBuf::from("/nonexistent/mnist"),
            max_train: 10,
            max_test: 10,
        };
        let err = make_dataset(&kind, Allocation::Iid, 2, &mut stream(1)).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/mnist"), "{err}");
    }
}
