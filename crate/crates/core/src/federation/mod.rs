//! The simulated round protocol: client sampling, server-side importance
//! scoring and decoupled downlink, local merge + training, upload, and
//! sample-weighted aggregation; plus fixed-mask and no-sharing baselines and
//! per-round communication accounting.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};

use rayon::prelude::*;

use crate::data::{ClientDataset, DatasetG};
use crate::decouple::{fixed_layer_mask, merge, select_mask, MaskPartition, Quantile};
use crate::error::{Error, Result};
use crate::importance::{normalize, score_fisher, score_gradient, score_obp, NormMode, ScoreKind};
use crate::metrics::{layer_distribution, mean_std, CommRecord, RoundMetrics};
use crate::nn::{dataset_gradient, local_train, ModelSpec};
use crate::params::ParamVectorG;
use crate::rng::{derive_stream, StreamPurpose};
use crate::scalar::Scalar;

/// How masks are chosen each round.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Server-side drift scoring: squared local/global parameter difference,
    /// quantile-thresholded per client.
    FedObp { q: Quantile, norm: NormMode },
    /// Generic score-based decoupling. Fisher and gradient scores are
    /// computed client-side (full downlink); the drift score behaves exactly
    /// like [`Method::FedObp`].
    ScoreDecouple { score: ScoreKind, q: Quantile, norm: NormMode },
    /// Static layer-wise personalization (head or body personalization).
    FixedLayer { personalized_layers: Vec<String> },
    /// Plain weighted averaging; nothing personalized.
    FedAvg,
    /// No sharing: every parameter stays local forever.
    LocalOnly,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::FedObp { .. } => "fedobp".into(),
            Method::ScoreDecouple { score, .. } => score.name().into(),
            Method::FixedLayer { .. } => "fixedlayer".into(),
            Method::FedAvg => "fedavg".into(),
            Method::LocalOnly => "localonly".into(),
        }
    }
}

/// Local-training hyperparameters shared by every client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub eta: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

/// Per-client simulation state.
#[derive(Debug, Clone)]
pub struct ClientStateG<S: Scalar> {
    pub client_id: usize,
    pub local_model: ParamVectorG<S>,
    /// Merged model of the client's most recent participation; feeds the
    /// gradient score, which is undefined before first participation.
    pub prev_merged: Option<ParamVectorG<S>>,
    pub data: ClientDataset,
    pub rounds_participated: usize,
    /// Mask of the most recent participation, used to evaluate the client
    /// while it sits out rounds.
    pub last_mask: MaskPartition,
}

/// Server-side simulation state.
#[derive(Debug, Clone)]
pub struct ServerStateG<S: Scalar> {
    pub global_model: ParamVectorG<S>,
    /// Most recent upload per client, initialized to the round-zero global
    /// model for everyone.
    pub stored_locals: Vec<ParamVectorG<S>>,
    pub round: usize,
}

/// Mask a client starts with before ever participating.
pub fn initial_mask(method: &Method, total: usize, spec: &ModelSpec) -> Result<MaskPartition> {
    match method {
        Method::LocalOnly => Ok(MaskPartition::full(total)),
        Method::FixedLayer { personalized_layers } => {
            fixed_layer_mask(spec.layout()?.as_ref(), personalized_layers)
        }
        _ => Ok(MaskPartition::empty(total)),
    }
}

/// Build the initial server and client states: one shared initial model,
/// stored locals equal to it.
pub fn init_federation<S: Scalar>(
    spec: &ModelSpec,
    assignments: &[ClientDataset],
    method: &Method,
    seed: u64,
) -> Result<(ServerStateG<S>, Vec<ClientStateG<S>>)> {
    if assignments.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let global = crate::nn::init_params::<S>(spec, seed)?;
    let total = global.len();
    let clients = assignments
        .iter()
        .map(|data| {
            Ok(ClientStateG {
                client_id: data.client_id,
                local_model: global.clone(),
                prev_merged: None,
                data: data.clone(),
                rounds_participated: 0,
                last_mask: initial_mask(method, total, spec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let server = ServerStateG {
        stored_locals: vec![global.clone(); assignments.len()],
        global_model: global,
        round: 0,
    };
    Ok((server, clients))
}

/// Rebuild client states from a (possibly checkpoint-loaded) server: local
/// models come from the server's stored uploads. Gradient-score history
/// (`prev_merged`) is not part of a checkpoint, so resumed clients fall back
/// to the before-first-participation rule until they are selected again.
pub fn clients_from_server<S: Scalar>(
    server: &ServerStateG<S>,
    assignments: &[ClientDataset],
    method: &Method,
    spec: &ModelSpec,
) -> Result<Vec<ClientStateG<S>>> {
    if assignments.len() != server.stored_locals.len() {
        return Err(Error::InvalidArgument(format!(
            "{} assignments for {} stored local models",
            assignments.len(),
            server.stored_locals.len()
        )));
    }
    let total = server.global_model.len();
    assignments
        .iter()
        .map(|data| {
            Ok(ClientStateG {
                client_id: data.client_id,
                local_model: server.stored_locals[data.client_id].clone(),
                prev_merged: None,
                data: data.clone(),
                rounds_participated: 0,
                last_mask: initial_mask(method, total, spec)?,
            })
        })
        .collect()
}

/// Uniform sample without replacement of `max(1, round(gamma * n))` client
/// ids, ascending; depends only on (seed, round).
pub fn sample_clients(n_clients: usize, gamma: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    let k = ((gamma * n_clients as f64).round() as usize).max(1).min(n_clients);
    let mut rng = derive_stream(seed, StreamPurpose::ClientSampling, 0, round as u64);
    let mut ids = rand::seq::index::sample(&mut rng, n_clients, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// What the server sends a client at the start of a round.
#[derive(Debug, Clone)]
pub struct Downlink<S: Scalar> {
    /// Personalized/shared split. Empty personalized set when the client
    /// will compute its own mask (`deferred`).
    pub mask: MaskPartition,
    /// Global values on the shared index set, in ascending index order.
    pub shared_values: Vec<S>,
    /// True when masking happens client-side (Fisher/gradient scores), in
    /// which case `shared_values` carries the full global model.
    pub deferred: bool,
}

impl<S: Scalar> Downlink<S> {
    pub fn downlink_params(&self) -> usize {
        self.shared_values.len()
    }
}

/// Server side of the round for one client: choose the mask (where the
/// method allows it) and restrict the outgoing global model to the shared
/// set.
pub fn server_decouple<S: Scalar>(
    server: &ServerStateG<S>,
    client_id: usize,
    method: &Method,
) -> Result<Downlink<S>> {
    let stored = server
        .stored_locals
        .get(client_id)
        .ok_or(Error::UnknownClient(client_id))?;
    let global = &server.global_model;
    let total = global.len();

    let full = || global.values().to_vec();
    match method {
        Method::FedAvg => Ok(Downlink { mask: MaskPartition::empty(total), shared_values: full(), deferred: false }),
        Method::LocalOnly => {
            Ok(Downlink { mask: MaskPartition::full(total), shared_values: Vec::new(), deferred: false })
        }
        Method::FixedLayer { personalized_layers } => {
            let mask = fixed_layer_mask(global.layout(), personalized_layers)?;
            let shared_values = restrict(global, &mask);
            Ok(Downlink { mask, shared_values, deferred: false })
        }
        Method::FedObp { q, norm }
        | Method::ScoreDecouple { score: ScoreKind::FedObp, q, norm } => {
            let scores = normalize(&score_obp(stored, global)?, *norm);
            let mask = select_mask(&scores, *q)?;
            let shared_values = restrict(global, &mask);
            Ok(Downlink { mask, shared_values, deferred: false })
        }
        Method::ScoreDecouple { .. } => {
            // Fisher/gradient scores need client-side state; send everything.
            Ok(Downlink { mask: MaskPartition::empty(total), shared_values: full(), deferred: true })
        }
    }
}

fn restrict<S: Scalar>(global: &ParamVectorG<S>, mask: &MaskPartition) -> Vec<S> {
    let values = global.values();
    let mut out = Vec::with_capacity(mask.shared_count());
    let mut next = mask.personalized().iter().peekable();
    for (k, &v) in values.iter().enumerate() {
        match next.peek() {
            Some(&&p) if p == k => {
                next.next();
            }
            _ => out.push(v),
        }
    }
    out
}

/// Rebuild the merged model from a restricted downlink: local values on the
/// personalized set, streamed shared values elsewhere.
pub fn merge_from_downlink<S: Scalar>(
    local: &ParamVectorG<S>,
    downlink: &Downlink<S>,
) -> Result<ParamVectorG<S>> {
    let total = local.len();
    if downlink.mask.total() != total
        || downlink.shared_values.len() != downlink.mask.shared_count()
    {
        return Err(Error::LayoutMismatch("downlink does not match the local model".into()));
    }
    let mut values = Vec::with_capacity(total);
    let mut shared = downlink.shared_values.iter();
    let mut next = downlink.mask.personalized().iter().peekable();
    let local_values = local.values();
    for (k, &lv) in local_values.iter().enumerate() {
        match next.peek() {
            Some(&&p) if p == k => {
                next.next();
                values.push(lv);
            }
            _ => values.push(*shared.next().expect("shared length checked")),
        }
    }
    ParamVectorG::new(values, local.layout().clone())
}

/// Sample-count-weighted average of uploaded models; weights sum to one.
pub fn aggregate<S: Scalar>(uploads: &[(&ParamVectorG<S>, usize)]) -> Result<ParamVectorG<S>> {
    let (first, _) = uploads.first().ok_or(Error::Empty("upload list"))?;
    let total_weight: usize = uploads.iter().map(|&(_, m)| m).sum();
    if total_weight == 0 {
        return Err(Error::InvalidArgument("aggregation weights sum to zero".into()));
    }
    let m = S::from_f64c(total_weight as f64);
    let mut acc = vec![S::zero(); first.len()];
    for &(params, m_i) in uploads {
        first.check_same_layout(params)?;
        let w = S::from_f64c(m_i as f64) / m;
        for (a, &v) in acc.iter_mut().zip(params.values()) {
            *a += w * v;
        }
    }
    ParamVectorG::new(acc, first.layout().clone())
}

struct ClientWork<S: Scalar> {
    client_id: usize,
    mask: MaskPartition,
    merged: ParamVectorG<S>,
    trained: ParamVectorG<S>,
    train_loss: f64,
    downlink_params: usize,
}

/// Everything a round produced besides the state mutation.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub metrics: RoundMetrics,
    pub comm: Vec<CommRecord>,
    /// Mask chosen by each participating client this round.
    pub masks: Vec<(usize, MaskPartition)>,
}

/// Execute one communication round, mutating server and client state.
/// Deterministic for fixed seeds and independent of thread scheduling:
/// per-client RNG streams derive from (seed, client, round) and every
/// state mutation happens in ascending client order.
#[allow(clippy::too_many_arguments)]
pub fn run_round<S: Scalar>(
    server: &mut ServerStateG<S>,
    clients: &mut [ClientStateG<S>],
    spec: &ModelSpec,
    dataset: &DatasetG<S>,
    method: &Method,
    hyper: &Hyper,
    gamma: f64,
    seed: u64,
) -> Result<RoundOutcome> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let round = server.round + 1;
    let selected = sample_clients(clients.len(), gamma, round, seed)?;

    let work: Vec<ClientWork<S>> = selected
        .par_iter()
        .map(|&id| -> Result<ClientWork<S>> {
            let client = &clients[id];
            let downlink = server_decouple(server, id, method)?;
            let (mask, merged) = if downlink.deferred {
                let global = ParamVectorG::new(
                    downlink.shared_values.clone(),
                    server.global_model.layout().clone(),
                )?;
                let mask = client_side_mask(client, &global, method, spec, dataset)?;
                let merged = merge(&client.local_model, &global, &mask)?;
                (mask, merged)
            } else {
                let merged = merge_from_downlink(&client.local_model, &downlink)?;
                (downlink.mask.clone(), merged)
            };

            let mut rng =
                derive_stream(seed, StreamPurpose::LocalTrain, id as u64, round as u64);
            let outcome = local_train(
                &merged,
                spec,
                &dataset.images,
                &dataset.labels,
                &client.data.train_indices,
                hyper.eta,
                hyper.local_epochs,
                hyper.batch_size,
                &mut rng,
            )?;
            Ok(ClientWork {
                client_id: id,
                downlink_params: downlink.downlink_params(),
                mask,
                merged,
                trained: outcome.params,
                train_loss: outcome.mean_loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Upload + state updates, ascending client id (selection is sorted).
    let total = server.global_model.len();
    let mut comm = Vec::with_capacity(work.len());
    let mut masks = Vec::with_capacity(work.len());
    for w in &work {
        let client = &mut clients[w.client_id];
        client.local_model = w.trained.clone();
        client.prev_merged = Some(w.merged.clone());
        client.last_mask = w.mask.clone();
        client.rounds_participated += 1;
        server.stored_locals[w.client_id] = w.trained.clone();
        comm.push(CommRecord {
            round,
            client_id: w.client_id,
            downlink_params: w.downlink_params,
            uplink_params: total,
            total_params: total,
        });
        masks.push((w.client_id, w.mask.clone()));
    }

    let uploads: Vec<(&ParamVectorG<S>, usize)> =
        work.iter().map(|w| (&w.trained, clients[w.client_id].data.sample_count())).collect();
    server.global_model = aggregate(&uploads)?;
    server.round = round;

    // Evaluate every client: participants on their freshly trained model,
    // the rest on their last personal model merged with the new global over
    // their last mask.
    let participant = |id: usize| work.iter().any(|w| w.client_id == id);
    let per_client_acc: Vec<f64> = clients
        .par_iter()
        .map(|client| -> Result<f64> {
            let model = if participant(client.client_id) {
                client.local_model.clone()
            } else {
                merge(&client.local_model, &server.global_model, &client.last_mask)?
            };
            crate::metrics::evaluate_client(&model, spec, dataset, &client.data)
        })
        .collect::<Result<Vec<_>>>()?;

    let (mean_acc, std_acc) = mean_std(&per_client_acc);
    let layout = server.global_model.layout().clone();
    let mut layer_fractions: Vec<(String, f64)> =
        layout.layers().iter().map(|l| (l.name.clone(), 0.0)).collect();
    let active: Vec<&MaskPartition> =
        work.iter().map(|w| &w.mask).filter(|m| m.personalized_count() > 0).collect();
    if !active.is_empty() {
        for mask in &active {
            for (acc, part) in layer_fractions.iter_mut().zip(layer_distribution(mask, &layout)?) {
                acc.1 += part.1;
            }
        }
        for f in layer_fractions.iter_mut() {
            f.1 /= active.len() as f64;
        }
    }
    let downlink_ratio = work
        .iter()
        .map(|w| w.downlink_params as f64 / total as f64)
        .sum::<f64>()
        / work.len() as f64;
    let train_loss_mean =
        work.iter().map(|w| w.train_loss).sum::<f64>() / work.len() as f64;

    Ok(RoundOutcome {
        metrics: RoundMetrics {
            round,
            mean_acc,
            std_acc,
            per_client_acc,
            personalized_fraction_by_layer: layer_fractions,
            downlink_ratio,
            train_loss_mean,
        },
        comm,
        masks,
    })
}

fn client_side_mask<S: Scalar>(
    client: &ClientStateG<S>,
    global: &ParamVectorG<S>,
    method: &Method,
    spec: &ModelSpec,
    dataset: &DatasetG<S>,
) -> Result<MaskPartition> {
    let Method::ScoreDecouple { score, q, norm } = method else {
        return Err(Error::InvalidArgument("client-side masking requires a score method".into()));
    };
    match score {
        // One deterministic full pass over the client's training data,
        // evaluated at the incoming local model (before training).
        ScoreKind::Fisher => {
            let (_, grad) = dataset_gradient(
                &client.local_model,
                spec,
                &dataset.images,
                &dataset.labels,
                &client.data.train_indices,
            )?;
            let scores = normalize(&score_fisher(&grad)?, *norm);
            select_mask(&scores, *q)
        }
        ScoreKind::Gradient => match &client.prev_merged {
            // The update-magnitude score exists only after a first
            // participation; before that the client takes the global model.
            None => Ok(MaskPartition::empty(global.len())),
            Some(prev_merged) => {
                let scores =
                    normalize(&score_gradient(prev_merged, &client.local_model)?, *norm);
                select_mask(&scores, *q)
            }
        },
        ScoreKind::FedObp => {
            Err(Error::InvalidArgument("drift scoring happens server-side".into()))
        }
    }
}

/// Residual of the one-step view of a full-participation round.
///
/// From a common start model, every client runs `local_steps` full-batch SGD
/// steps on its own shard (contiguous equal split of the dataset) and the
/// server aggregates by sample count. The residual is
/// `|| theta_agg - theta_start + eta * E * grad_global(theta_start) ||_2`,
/// which shrinks as O(eta^2 E^2). The start model is first settled by a few
/// pooled full-batch steps so the measurement happens in the smooth regime.
pub fn verify_gradient_step_approx<S: Scalar>(
    spec: &ModelSpec,
    dataset: &DatasetG<S>,
    n_clients: usize,
    eta: f64,
    local_steps: usize,
    seed: u64,
) -> Result<f64> {
    if n_clients == 0 || dataset.len() < n_clients {
        return Err(Error::InvalidArgument("need at least one sample per client".into()));
    }
    if local_steps == 0 {
        return Err(Error::InvalidArgument("local_steps must be at least 1".into()));
    }

    let all: Vec<usize> = (0..dataset.len()).collect();
    let shards = contiguous_shards(dataset.len(), n_clients);

    // Settle into the smooth regime with pooled full-batch steps.
    const PRETRAIN_STEPS: usize = 20;
    let mut start = crate::nn::init_params::<S>(spec, seed)?;
    for _ in 0..PRETRAIN_STEPS {
        let (_, grad) =
            dataset_gradient(&start, spec, &dataset.images, &dataset.labels, &all)?;
        start = crate::nn::sgd_step(&start, &grad, eta)?;
    }

    // One full-participation round of E full-batch steps per client.
    let mut uploads: Vec<(ParamVectorG<S>, usize)> = Vec::with_capacity(n_clients);
    for shard in &shards {
        let mut theta = start.clone();
        for _ in 0..local_steps {
            let (_, grad) =
                dataset_gradient(&theta, spec, &dataset.images, &dataset.labels, shard)?;
            theta = crate::nn::sgd_step(&theta, &grad, eta)?;
        }
        uploads.push((theta, shard.len()));
    }
    let refs: Vec<(&ParamVectorG<S>, usize)> = uploads.iter().map(|(p, m)| (p, *m)).collect();
    let aggregated = aggregate(&refs)?;

    // Global gradient at the start model: the same sample-count weighting the
    // aggregation uses.
    let m_total: usize = shards.iter().map(|s| s.len()).sum();
    let mut global_grad = vec![S::zero(); start.len()];
    for shard in &shards {
        let (_, grad) = dataset_gradient(&start, spec, &dataset.images, &dataset.labels, shard)?;
        let w = S::from_f64c(shard.len() as f64) / S::from_f64c(m_total as f64);
        for (g, &v) in global_grad.iter_mut().zip(grad.values()) {
            *g += w * v;
        }
    }

    let scale = eta * local_steps as f64;
    let mut sq_sum = 0.0f64;
    for ((&agg, &st), &g) in
        aggregated.values().iter().zip(start.values()).zip(&global_grad)
    {
        let r = (agg - st).to_f64c() + scale * g.to_f64c();
        sq_sum += r * r;
    }
    Ok(sq_sum.sqrt())
}

fn contiguous_shards(n: usize, k: usize) -> Vec<Vec<usize>> {
    let base = n / k;
    let extra = n % k;
    let mut shards = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        shards.push((cursor..cursor + len).collect());
        cursor += len;
    }
    shards
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorG;

    #[test]
    fn sampling_gamma_one_takes_everyone() {
        for round in 1..5 {
            let ids = sample_clients(7, 1.0, round, 3).unwrap();
            assert_eq!(ids, vec![0, 1, 2, 3, 4, 5, 6]);
        }
    }

    #[test]
    fn sampling_rate_controls_count_and_repeats() {
        let a = sample_clients(100, 0.1, 4, 5).unwrap();
        assert_eq!(a.len(), 10);
        let b = sample_clients(100, 0.1, 4, 5).unwrap();
        assert_eq!(a, b);
        // Tiny populations still select someone.
        assert_eq!(sample_clients(3, 0.01, 1, 5).unwrap().len(), 1);
    }

    #[test]
    fn aggregation_matches_hand_weights() {
        let spec = ModelSpec::linear((1, 1, 1), 2);
        let layout = spec.layout().unwrap();
        let a = ParamVectorG::new(vec![0.0, 0.0, 0.0, 0.0], layout.clone()).unwrap();
        let b = ParamVectorG::new(vec![4.0, 8.0, 0.0, 0.0], layout.clone()).unwrap();

        let out = aggregate(&[(&a, 1), (&b, 3)]).unwrap();
        assert_eq!(out.values(), &[3.0, 6.0, 0.0, 0.0]);

        let single = aggregate(&[(&b, 5)]).unwrap();
        assert_eq!(single.values(), b.values());

        let mid = aggregate(&[(&a, 2), (&b, 2)]).unwrap();
        assert_eq!(mid.values(), &[2.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn aggregation_stays_inside_the_box() {
        let spec = ModelSpec::linear((1, 2, 2), 3);
        let layout = spec.layout().unwrap();
        let models: Vec<ParamVectorG<f64>> = (0..4)
            .map(|s| crate::nn::init_params(&spec, s as u64).unwrap())
            .collect();
        let _ = layout;
        let uploads: Vec<(&ParamVectorG<f64>, usize)> =
            models.iter().zip([1usize, 2, 3, 4]).collect();
        let agg = aggregate(&uploads).unwrap();
        for k in 0..agg.len() {
            let lo = models.iter().map(|m| m.values()[k]).fold(f64::INFINITY, f64::min);
            let hi = models.iter().map(|m| m.values()[k]).fold(f64::NEG_INFINITY, f64::max);
            assert!(agg.values()[k] >= lo - 1e-15 && agg.values()[k] <= hi + 1e-15);
        }
    }

    #[test]
    fn restrict_and_downlink_merge_are_inverse() {
        let spec = ModelSpec::linear((1, 1, 1), 3);
        let layout = spec.layout().unwrap();
        let global = ParamVectorG::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], layout.clone()).unwrap();
        let local = ParamVectorG::new(vec![9.0, 9.0, 9.0, 9.0, 9.0, 9.0], layout).unwrap();
        let mask = MaskPartition::new(vec![1, 4], 6).unwrap();
        let shared = restrict(&global, &mask);
        assert_eq!(shared, vec![1.0, 3.0, 4.0, 6.0]);
        let downlink = Downlink { mask, shared_values: shared, deferred: false };
        let merged = merge_from_downlink(&local, &downlink).unwrap();
        assert_eq!(merged.values(), &[1.0, 9.0, 3.0, 4.0, 9.0, 6.0]);
    }

    fn toy_dataset() -> DatasetG<f64> {
        let n = 12;
        let mut pixels = Vec::with_capacity(n * 4);
        for i in 0..n {
            let v = (i % 3) as f64 * 0.3;
            pixels.extend_from_slice(&[v, 1.0 - v, 0.5, v * 0.5]);
        }
        let images = TensorG::new(vec![n, 1, 2, 2], pixels).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        DatasetG::new(images, labels, 3).unwrap()
    }

    fn toy_clients(n: usize, samples: usize) -> Vec<ClientDataset> {
        (0..n)
            .map(|client_id| {
                let base = client_id * samples / n;
                let end = (client_id + 1) * samples / n;
                let mid = (base + end) / 2;
                ClientDataset {
                    client_id,
                    train_indices: (base..mid.max(base + 1)).collect(),
                    test_indices: (mid.max(base + 1)..end).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn server_decouple_baseline_downlinks() {
        let spec = ModelSpec::linear((1, 2, 2), 3);
        let assignments = toy_clients(2, 12);
        let (server, _) =
            init_federation::<f64>(&spec, &assignments, &Method::FedAvg, 1).unwrap();
        let total = server.global_model.len();

        let avg = server_decouple(&server, 0, &Method::FedAvg).unwrap();
        assert_eq!(avg.downlink_params(), total);
        assert_eq!(avg.mask.personalized_count(), 0);

        let local = server_decouple(&server, 0, &Method::LocalOnly).unwrap();
        assert_eq!(local.downlink_params(), 0);
        assert_eq!(local.mask.personalized_count(), total);

        assert!(server_decouple(&server, 9, &Method::FedAvg).is_err());
    }

    #[test]
    fn fresh_server_gives_empty_obp_mask() {
        // stored_locals == global at initialization, so the drift score is
        // identically zero, the threshold is zero, and the strict rule keeps
        // everything shared.
        let spec = ModelSpec::linear((1, 2, 2), 3);
        let assignments = toy_clients(2, 12);
        let method = Method::FedObp {
            q: Quantile::new(0.9).unwrap(),
            norm: NormMode::NONE,
        };
        let (server, _) = init_federation::<f64>(&spec, &assignments, &method, 1).unwrap();
        let downlink = server_decouple(&server, 1, &method).unwrap();
        assert_eq!(downlink.mask.personalized_count(), 0);
        assert_eq!(downlink.downlink_params(), server.global_model.len());
    }

    #[test]
    fn single_client_full_participation_copies_upload() {
        let spec = ModelSpec::linear((1, 2, 2), 3);
        let dataset = toy_dataset();
        let assignments = toy_clients(1, 12);
        let method = Method::FedAvg;
        let (mut server, mut clients) =
            init_federation::<f64>(&spec, &assignments, &method, 7).unwrap();
        let hyper = Hyper { eta: 0.1, local_epochs: 1, batch_size: 4 };
        run_round(&mut server, &mut clients, &spec, &dataset, &method, &hyper, 1.0, 7).unwrap();
        assert_eq!(server.global_model.values(), clients[0].local_model.values());
        assert_eq!(server.round, 1);
    }
}
