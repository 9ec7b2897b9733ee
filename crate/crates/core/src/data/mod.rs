//! Datasets and their non-IID partitioning across clients.

mod idx;
mod synth;

pub use idx::load_idx;
pub use synth::{synth_dataset, synth_templates};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, StreamPurpose};
use crate::scalar::Scalar;
use crate::tensor::TensorG;

/// Labeled image dataset: `N x channels x H x W` pixels in [0, 1] plus one
/// class index per image.
#[derive(Debug, Clone)]
pub struct DatasetG<S: Scalar> {
    pub images: TensorG<S>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<S: Scalar> DatasetG<S> {
    pub fn new(images: TensorG<S>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0, 0],
                got: images.shape().to_vec(),
            });
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![images.shape()[0]],
                got: vec![labels.len()],
            });
        }
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange { label: y, num_classes });
            }
        }
        let zero = S::zero();
        let one = S::one();
        if !images.data().iter().all(|&v| v >= zero && v <= one) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }
}

/// One client's slice of a dataset: disjoint train and test index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl ClientDataset {
    /// Local sample count used as the aggregation weight.
    pub fn sample_count(&self) -> usize {
        self.train_indices.len()
    }

    pub fn total(&self) -> usize {
        self.train_indices.len() + self.test_indices.len()
    }
}

/// Assignment of every dataset index to exactly one client.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<ClientDataset>,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }
}

/// Partition a dataset across clients with per-class proportions drawn from
/// a symmetric Dirichlet(alpha). For each class, the class's samples are
/// shuffled and distributed by largest-remainder rounding of the sampled
/// proportions; afterwards every client is guaranteed at least one sample.
pub fn dirichlet_partition<S: Scalar>(
    dataset: &DatasetG<S>,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be at least 1".into()));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if dataset.len() < n_clients {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot cover {} clients",
            dataset.len(),
            n_clients
        )));
    }

    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for class in 0..dataset.num_classes {
        let mut class_indices: Vec<usize> = dataset
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect();
        if class_indices.is_empty() {
            continue;
        }
        let mut rng = derive_stream(seed, StreamPurpose::Partition, class as u64, 0);
        class_indices.shuffle(&mut rng);

        let proportions = sample_dirichlet(&mut rng, n_clients, alpha);
        let counts = largest_remainder(&proportions, class_indices.len());

        let mut cursor = 0;
        for (client, &count) in counts.iter().enumerate() {
            per_client[client].extend_from_slice(&class_indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    for indices in &mut per_client {
        indices.sort_unstable();
    }

    let mut plan = PartitionPlan {
        assignments: per_client
            .into_iter()
            .enumerate()
            .map(|(client_id, train_indices)| ClientDataset {
                client_id,
                train_indices,
                test_indices: Vec::new(),
            })
            .collect(),
        alpha,
        seed,
    };
    repair_min_samples(&mut plan, 1)?;
    Ok(plan)
}

fn sample_dirichlet(rng: &mut rand_chacha::ChaCha8Rng, n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let mut sum: f64 = draws.iter().sum();
    if sum <= 0.0 {
        // All draws underflowed to zero; fall back to uniform.
        draws = vec![1.0; n];
        sum = n as f64;
    }
    draws.iter().map(|d| d / sum).collect()
}

/// Integer counts summing exactly to `total`, proportional to `proportions`.
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts = Vec::with_capacity(proportions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let target = p * total as f64;
        let base = target.floor() as usize;
        counts.push(base);
        assigned += base;
        remainders.push((i, target - base as f64));
    }
    let leftover = total - assigned;
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite remainders").then(a.0.cmp(&b.0)));
    for &(i, _) in remainders.iter().take(leftover) {
        counts[i] += 1;
    }
    counts
}

/// Move lowest-index samples from the currently largest client until every
/// client holds at least `min` samples.
pub fn repair_min_samples(plan: &mut PartitionPlan, min: usize) -> Result<()> {
    loop {
        let Some(needy) = plan
            .assignments
            .iter()
            .position(|c| c.train_indices.len() + c.test_indices.len() < min)
        else {
            return Ok(());
        };
        let donor = plan
            .assignments
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.total().cmp(&b.total()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("at least one client");
        if donor == needy || plan.assignments[donor].total() <= min {
            return Err(Error::InvalidArgument(format!(
                "cannot guarantee {min} samples per client: dataset too small"
            )));
        }
        // Donate the donor's lowest train index (splits have not happened yet
        // in the normal pipeline; fall back to test indices if necessary).
        let moved = if plan.assignments[donor].train_indices.is_empty() {
            plan.assignments[donor].test_indices.remove(0)
        } else {
            plan.assignments[donor].train_indices.remove(0)
        };
        let target = &mut plan.assignments[needy].train_indices;
        let pos = target.binary_search(&moved).unwrap_err();
        target.insert(pos, moved);
    }
}

/// Split every client's samples into disjoint train/test sets, stratified by
/// class where possible. Requires at least two samples per client.
pub fn split_train_test<S: Scalar>(
    plan: &PartitionPlan,
    dataset: &DatasetG<S>,
    test_fraction: f64,
    seed: u64,
) -> Result<PartitionPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut out = PartitionPlan { assignments: Vec::new(), alpha: plan.alpha, seed: plan.seed };
    for client in &plan.assignments {
        let all: Vec<usize> =
            client.train_indices.iter().chain(&client.test_indices).copied().collect();
        if all.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "client {} has {} samples; need at least 2 to split",
                client.client_id,
                all.len()
            )));
        }
        let n = all.len();
        let total_test =
            ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);

        // Group by class, shuffle each group, then take per-class test counts
        // by largest remainder against the class sizes.
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
        for &i in &all {
            by_class[dataset.labels[i]].push(i);
        }
        let mut rng = derive_stream(seed, StreamPurpose::Split, client.client_id as u64, 0);
        for group in &mut by_class {
            group.shuffle(&mut rng);
        }
        let sizes: Vec<f64> = by_class.iter().map(|g| g.len() as f64).collect();
        let proportions: Vec<f64> = sizes.iter().map(|&s| s / n as f64).collect();
        let mut test_counts = largest_remainder(&proportions, total_test);
        // Largest remainder can overshoot a class; push overflow to others.
        let mut overflow = 0usize;
        for (count, group) in test_counts.iter_mut().zip(&by_class) {
            if *count > group.len() {
                overflow += *count - group.len();
                *count = group.len();
            }
        }
        if overflow > 0 {
            for (count, group) in test_counts.iter_mut().zip(&by_class) {
                let room = group.len() - *count;
                let take = room.min(overflow);
                *count += take;
                overflow -= take;
                if overflow == 0 {
                    break;
                }
            }
        }

        let mut train = Vec::new();
        let mut test = Vec::new();
        for (group, &count) in by_class.iter().zip(&test_counts) {
            test.extend_from_slice(&group[..count]);
            train.extend_from_slice(&group[count..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "client {} split produced an empty side",
                client.client_id
            )));
        }
        out.assignments.push(ClientDataset {
            client_id: client.client_id,
            train_indices: train,
            test_indices: test,
        });
    }
    Ok(out)
}

/// Write a plan as `client_id,split,index` rows (plus `#` metadata lines).
pub fn write_plan(path: &Path, plan: &PartitionPlan) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# alpha={} seed={}", plan.alpha, plan.seed).expect("vec write");
    writeln!(buf, "client_id,split,index").expect("vec write");
    for client in &plan.assignments {
        for &i in &client.train_indices {
            writeln!(buf, "{},train,{}", client.client_id, i).expect("vec write");
        }
        for &i in &client.test_indices {
            writeln!(buf, "{},test,{}", client.client_id, i).expect("vec write");
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a plan written by [`write_plan`].
pub fn read_plan(path: &Path) -> Result<PartitionPlan> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut alpha = 0.0f64;
    let mut seed = 0u64;
    let mut clients: Vec<ClientDataset> = Vec::new();
    let malformed = |reason: &str| Error::Malformed {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line == "client_id,split,index" {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for token in meta.split_whitespace() {
                if let Some(v) = token.strip_prefix("alpha=") {
                    alpha = v.parse().map_err(|_| malformed("bad alpha"))?;
                } else if let Some(v) = token.strip_prefix("seed=") {
                    seed = v.parse().map_err(|_| malformed("bad seed"))?;
                }
            }
            continue;
        }
        let mut parts = line.split(',');
        let client_id: usize = parts
            .next()
            .ok_or_else(|| malformed("missing client_id"))?
            .parse()
            .map_err(|_| malformed("bad client_id"))?;
        let split = parts.next().ok_or_else(|| malformed("missing split"))?;
        let index: usize = parts
            .next()
            .ok_or_else(|| malformed("missing index"))?
            .parse()
            .map_err(|_| malformed("bad index"))?;
        if parts.next().is_some() {
            return Err(malformed("too many fields"));
        }
        while clients.len() <= client_id {
            let client_id = clients.len();
            clients.push(ClientDataset {
                client_id,
                train_indices: Vec::new(),
                test_indices: Vec::new(),
            });
        }
        match split {
            "train" => clients[client_id].train_indices.push(index),
            "test" => clients[client_id].test_indices.push(index),
            other => return Err(malformed(&format!("unknown split `{other}`"))),
        }
    }
    if clients.is_empty() {
        return Err(malformed("no assignment rows"));
    }
    Ok(PartitionPlan { assignments: clients, alpha, seed })
}
