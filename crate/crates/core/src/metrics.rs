//! Per-client evaluation, per-round metric records, cross-seed summaries,
//! and the CSV formats they are exported in.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{ClientDataset, DatasetG};
use crate::decouple::MaskPartition;
use crate::error::{Error, Result};
use crate::layout::LayerLayout;
use crate::nn::{argmax_row, forward, ModelSpec};
use crate::params::ParamVectorG;
use crate::scalar::Scalar;

const EVAL_CHUNK: usize = 64;

/// Measured outputs of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub per_client_acc: Vec<f64>,
    /// Fraction of personalized parameters falling in each layer, averaged
    /// over participating clients with nonempty personalized sets; layout
    /// order. All zeros when no client personalized anything.
    pub personalized_fraction_by_layer: Vec<(String, f64)>,
    pub downlink_ratio: f64,
    pub train_loss_mean: f64,
}

/// One (round, client) communication ledger entry. Uplink is always the full
/// model; downlink counts only the shared parameters actually sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommRecord {
    pub round: usize,
    pub client_id: usize,
    pub downlink_params: usize,
    pub uplink_params: usize,
    pub total_params: usize,
}

/// Final accuracy aggregated over independent seeds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub per_seed_final_acc: Vec<(u64, f64)>,
    pub final_mean_acc: f64,
    pub final_std_acc: f64,
}

/// Fraction of a client's test samples classified correctly (argmax logits,
/// ties to the lowest class index).
pub fn evaluate_client<S: Scalar>(
    params: &ParamVectorG<S>,
    spec: &ModelSpec,
    dataset: &DatasetG<S>,
    client: &ClientDataset,
) -> Result<f64> {
    evaluate_on(params, spec, dataset, &client.test_indices)
}

/// Accuracy over an explicit index set.
pub fn evaluate_on<S: Scalar>(
    params: &ParamVectorG<S>,
    spec: &ModelSpec,
    dataset: &DatasetG<S>,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let classes = spec.num_classes;
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = dataset.images.gather_rows(chunk)?;
        let logits = forward(params, spec, &batch)?;
        for (row, &i) in chunk.iter().enumerate() {
            let pred = argmax_row(&logits.data()[row * classes..(row + 1) * classes]);
            if pred == dataset.labels[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Share of the personalized set falling inside each layer; all zeros when
/// the personalized set is empty.
pub fn layer_distribution(
    mask: &MaskPartition,
    layout: &LayerLayout,
) -> Result<Vec<(String, f64)>> {
    if mask.total() != layout.total_params() {
        return Err(Error::LayoutMismatch(format!(
            "mask over {} indices against a layout of {}",
            mask.total(),
            layout.total_params()
        )));
    }
    let selected = mask.personalized_count();
    let fractions = layout
        .layers()
        .iter()
        .map(|layer| {
            let inside = mask
                .personalized()
                .iter()
                .filter(|&&k| k >= layer.start && k < layer.end)
                .count();
            let f = if selected == 0 { 0.0 } else { inside as f64 / selected as f64 };
            (layer.name.clone(), f)
        })
        .collect();
    Ok(fractions)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Collapse per-seed final accuracies into a cross-seed summary.
pub fn summarize_runs(config_hash: &str, per_seed: &[(u64, f64)]) -> Result<RunSummary> {
    if per_seed.is_empty() {
        return Err(Error::Empty("run list"));
    }
    let accs: Vec<f64> = per_seed.iter().map(|&(_, a)| a).collect();
    let (mean, std) = mean_std(&accs);
    Ok(RunSummary {
        config_hash: config_hash.to_string(),
        per_seed_final_acc: per_seed.to_vec(),
        final_mean_acc: mean,
        final_std_acc: std,
    })
}

// ---------------------------------------------------------------------------
// CSV export/import. Floats are written with Rust's shortest round-trip
// formatting, so parse(export(x)) reproduces x bit for bit.
// ---------------------------------------------------------------------------

pub fn metrics_csv_string(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from("round,mean_acc,std_acc,downlink_ratio,train_loss_mean");
    if let Some(first) = rounds.first() {
        for (name, _) in &first.personalized_fraction_by_layer {
            let _ = write!(out, ",frac_{name}");
        }
    }
    out.push('\n');
    for m in rounds {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            m.round, m.mean_acc, m.std_acc, m.downlink_ratio, m.train_loss_mean
        );
        for (_, f) in &m.personalized_fraction_by_layer {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, rounds: &[RoundMetrics]) -> Result<()> {
    std::fs::write(path, metrics_csv_string(rounds))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse a metrics CSV. Per-client accuracies live in a separate file, so
/// the records come back with empty `per_client_acc`.
pub fn parse_metrics_csv(text: &str, path_for_errors: &str) -> Result<Vec<RoundMetrics>> {
    let malformed = |reason: String| Error::Malformed { path: path_for_errors.into(), reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    const FIXED: [&str; 5] = ["round", "mean_acc", "std_acc", "downlink_ratio", "train_loss_mean"];
    if columns.len() < FIXED.len() || columns[..FIXED.len()] != FIXED {
        return Err(malformed(format!("unexpected header `{header}`")));
    }
    let layer_names: Vec<String> = columns[FIXED.len()..]
        .iter()
        .map(|c| {
            c.strip_prefix("frac_")
                .map(str::to_string)
                .ok_or_else(|| malformed(format!("unexpected column `{c}`")))
        })
        .collect::<Result<_>>()?;

    let mut rounds = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(malformed(format!("row has {} fields, header {}", fields.len(), columns.len())));
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| malformed(format!("bad float `{s}`")));
        let round = fields[0].parse::<usize>().map_err(|_| malformed(format!("bad round `{}`", fields[0])))?;
        let mut fractions = Vec::with_capacity(layer_names.len());
        for (name, value) in layer_names.iter().zip(&fields[FIXED.len()..]) {
            fractions.push((name.clone(), parse_f(value)?));
        }
        rounds.push(RoundMetrics {
            round,
            mean_acc: parse_f(fields[1])?,
            std_acc: parse_f(fields[2])?,
            per_client_acc: Vec::new(),
            personalized_fraction_by_layer: fractions,
            downlink_ratio: parse_f(fields[3])?,
            train_loss_mean: parse_f(fields[4])?,
        });
    }
    Ok(rounds)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_metrics_csv(&text, &path.display().to_string())
}

pub fn per_client_csv_string(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from("round,client_id,accuracy\n");
    for m in rounds {
        for (client, acc) in m.per_client_acc.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", m.round, client, acc);
        }
    }
    out
}

pub fn write_per_client_csv(path: &Path, rounds: &[RoundMetrics]) -> Result<()> {
    std::fs::write(path, per_client_csv_string(rounds))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parse `round,client_id,accuracy` rows into (round, per-client accuracies).
pub fn parse_per_client_csv(text: &str, path_for_errors: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let malformed = |reason: String| Error::Malformed { path: path_for_errors.into(), reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    if header != "round,client_id,accuracy" {
        return Err(malformed(format!("unexpected header `{header}`")));
    }
    let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(malformed(format!("bad row `{line}`")));
        }
        let round: usize =
            fields[0].parse().map_err(|_| malformed(format!("bad round `{}`", fields[0])))?;
        let client: usize =
            fields[1].parse().map_err(|_| malformed(format!("bad client `{}`", fields[1])))?;
        let acc: f64 =
            fields[2].parse().map_err(|_| malformed(format!("bad accuracy `{}`", fields[2])))?;
        if out.last().map(|&(r, _)| r) != Some(round) {
            out.push((round, Vec::new()));
        }
        let bucket = &mut out.last_mut().unwrap().1;
        if bucket.len() != client {
            return Err(malformed(format!("client {client} out of order in round {round}")));
        }
        bucket.push(acc);
    }
    Ok(out)
}

pub fn comm_csv_string(records: &[CommRecord]) -> String {
    let mut out = String::from("round,client_id,downlink_params,uplink_params,total_params\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.round, r.client_id, r.downlink_params, r.uplink_params, r.total_params
        );
    }
    out
}

pub fn write_comm_csv(path: &Path, records: &[CommRecord]) -> Result<()> {
    std::fs::write(path, comm_csv_string(records))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn parse_comm_csv(text: &str, path_for_errors: &str) -> Result<Vec<CommRecord>> {
    let malformed = |reason: String| Error::Malformed { path: path_for_errors.into(), reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    if header != "round,client_id,downlink_params,uplink_params,total_params" {
        return Err(malformed(format!("unexpected header `{header}`")));
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(malformed(format!("bad row `{line}`")));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| malformed(format!("bad int `{s}`")));
        out.push(CommRecord {
            round: parse(fields[0])?,
            client_id: parse(fields[1])?,
            downlink_params: parse(fields[2])?,
            uplink_params: parse(fields[3])?,
            total_params: parse(fields[4])?,
        });
    }
    Ok(out)
}

pub fn read_comm_csv(path: &Path) -> Result<Vec<CommRecord>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_comm_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decouple::MaskPartition;
    use crate::layout::{LayerInfo, LayerKind};
    use crate::params::ParamVectorG;
    use crate::tensor::TensorG;

    fn two_layer_layout() -> LayerLayout {
        LayerLayout::new(vec![
            LayerInfo { name: "fc1".into(), start: 0, end: 4, kind: LayerKind::Fc, is_classifier: false },
            LayerInfo { name: "classifier".into(), start: 4, end: 8, kind: LayerKind::Fc, is_classifier: true },
        ])
        .unwrap()
    }

    #[test]
    fn constant_predictor_accuracy_bounds() {
        // A linear model with a large class-0 bias always predicts class 0.
        let spec = ModelSpec::linear((1, 1, 1), 2);
        let layout = spec.layout().unwrap();
        let params = ParamVectorG::new(vec![0.0, 0.0, 5.0, 0.0], layout).unwrap();
        let images = TensorG::new(vec![4, 1, 1, 1], vec![0.1, 0.2, 0.3, 0.4]).unwrap();

        let all_zero = DatasetG::new(images.clone(), vec![0, 0, 0, 0], 2).unwrap();
        let client =
            ClientDataset { client_id: 0, train_indices: vec![], test_indices: vec![0, 1, 2, 3] };
        assert_eq!(evaluate_client(&params, &spec, &all_zero, &client).unwrap(), 1.0);

        let all_one = DatasetG::new(images, vec![1, 1, 1, 1], 2).unwrap();
        assert_eq!(evaluate_client(&params, &spec, &all_one, &client).unwrap(), 0.0);
    }

    #[test]
    fn untrained_model_matches_chance_on_random_labels() {
        use rand::{Rng, SeedableRng};
        let spec = ModelSpec::linear((1, 3, 3), 5);
        let params = crate::nn::init_params::<f64>(&spec, 3).unwrap();
        let n = 2000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let pixels: Vec<f64> = (0..n * 9).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let ds = DatasetG::new(TensorG::new(vec![n, 1, 3, 3], pixels).unwrap(), labels, 5).unwrap();
        let client = ClientDataset {
            client_id: 0,
            train_indices: vec![],
            test_indices: (0..n).collect(),
        };
        let acc = evaluate_client(&params, &spec, &ds, &client).unwrap();
        // Labels are independent of the inputs, so accuracy is Binomial(n, 1/5).
        let p = 0.2;
        let bound = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (acc - p).abs() <= bound,
            "accuracy {acc:.4} outside 1/C +- 3 sigma ({bound:.4})"
        );
    }

    #[test]
    fn empty_test_split_is_an_error() {
        let spec = ModelSpec::linear((1, 1, 1), 2);
        let layout = spec.layout().unwrap();
        let params = ParamVectorG::zeros(layout);
        let images = TensorG::new(vec![1, 1, 1, 1], vec![0.5]).unwrap();
        let ds = DatasetG::new(images, vec![0], 2).unwrap();
        let client = ClientDataset { client_id: 0, train_indices: vec![0], test_indices: vec![] };
        assert!(evaluate_client(&params, &spec, &ds, &client).is_err());
    }

    #[test]
    fn layer_distribution_counts_and_zero_rule() {
        let layout = two_layer_layout();

        let cls_only = MaskPartition::new(vec![5, 6], 8).unwrap();
        let d = layer_distribution(&cls_only, &layout).unwrap();
        assert_eq!(d, vec![("fc1".into(), 0.0), ("classifier".into(), 1.0)]);

        let split = MaskPartition::new(vec![1, 7], 8).unwrap();
        let d = layer_distribution(&split, &layout).unwrap();
        assert_eq!(d, vec![("fc1".into(), 0.5), ("classifier".into(), 0.5)]);

        let empty = MaskPartition::empty(8);
        let d = layer_distribution(&empty, &layout).unwrap();
        assert_eq!(d, vec![("fc1".into(), 0.0), ("classifier".into(), 0.0)]);
    }

    #[test]
    fn summary_mean_and_sample_std() {
        let s = summarize_runs("h", &[(1, 0.8), (2, 0.9)]).unwrap();
        assert!((s.final_mean_acc - 0.85).abs() < 1e-15);
        assert!((s.final_std_acc - 0.07071067811865475).abs() < 1e-12);

        let single = summarize_runs("h", &[(5, 0.7)]).unwrap();
        assert_eq!(single.final_std_acc, 0.0);

        let swapped = summarize_runs("h", &[(2, 0.9), (1, 0.8)]).unwrap();
        assert_eq!(swapped.final_mean_acc, s.final_mean_acc);
        assert_eq!(swapped.final_std_acc, s.final_std_acc);
    }

    fn sample_round(round: usize) -> RoundMetrics {
        RoundMetrics {
            round,
            mean_acc: 0.625 + round as f64 * 1e-3,
            std_acc: 0.0125,
            per_client_acc: vec![0.5, 0.75],
            personalized_fraction_by_layer: vec![
                ("fc1".into(), 0.3333333333333333),
                ("classifier".into(), 0.6666666666666666),
            ],
            downlink_ratio: 0.999,
            train_loss_mean: 1.2345678901234567,
        }
    }

    #[test]
    fn metrics_csv_round_trips() {
        let rounds = vec![sample_round(1), sample_round(2)];
        let text = metrics_csv_string(&rounds);
        let parsed = parse_metrics_csv(&text, "test").unwrap();
        for (orig, back) in rounds.iter().zip(&parsed) {
            assert_eq!(back.round, orig.round);
            assert_eq!(back.mean_acc, orig.mean_acc);
            assert_eq!(back.std_acc, orig.std_acc);
            assert_eq!(back.downlink_ratio, orig.downlink_ratio);
            assert_eq!(back.train_loss_mean, orig.train_loss_mean);
            assert_eq!(back.personalized_fraction_by_layer, orig.personalized_fraction_by_layer);
        }
    }

    #[test]
    fn per_client_csv_round_trips() {
        let rounds = vec![sample_round(1), sample_round(2)];
        let text = per_client_csv_string(&rounds);
        let parsed = parse_per_client_csv(&text, "test").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0], (1, vec![0.5, 0.75]));
        assert_eq!(parsed[1], (2, vec![0.5, 0.75]));
    }

    #[test]
    fn comm_csv_round_trips() {
        let records = vec![
            CommRecord { round: 1, client_id: 0, downlink_params: 10, uplink_params: 12, total_params: 12 },
            CommRecord { round: 1, client_id: 3, downlink_params: 12, uplink_params: 12, total_params: 12 },
        ];
        let text = comm_csv_string(&records);
        assert_eq!(parse_comm_csv(&text, "test").unwrap(), records);
    }

    #[test]
    fn corrupt_csv_is_rejected_with_path() {
        let err = parse_metrics_csv("not,a,header\n1,2,3\n", "metrics.csv").unwrap_err();
        match err {
            Error::Malformed { path, .. } => assert_eq!(path, "metrics.csv"),
            other => panic!("unexpected error {other}"),
        }
    }
}
