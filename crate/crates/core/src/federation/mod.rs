//! The federated round loop: dispatch, local training, lifting, aggregation
//! and evaluation, plus the method matrix used by the ablation suites.
//!
//! Client steps inside a round run in parallel. Their results are collected
//! in ascending client id before aggregation, so the output does not depend on
//! the thread schedule.

mod positional;

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use positional::{positional_aggregate, PositionalUpdate};

use crate::alignment::{
    aggregate, baseline_extract, ota_align_up, otp_personalize, ExtractStrategy, FusionConfig,
    KeptNeurons,
};
use crate::data::{
    gen_feature_shift, gen_synthetic, load_idx, partition, size_weights, FeatureShiftParams,
    LabeledDataset, PartitionScheme, PartitionSpec, SyntheticParams,
};
use crate::error::{Error, Result};
use crate::nn::{ce_loss, evaluate, make_submodel_shape, Batch, LayerStack, WidthSchedule};
use crate::ot::OtConfig;
use crate::sar::{local_train, SarConfig};
use crate::seeds::derive_seed;

const TAG_PARTITION: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_RATES: u64 = 3;
const TAG_INIT: u64 = 4;
const TAG_SAMPLE: u64 = 5;
const TAG_EXTRACT: u64 = 6;
const TAG_TRAIN: u64 = 7;
const TAG_EVAL: u64 = 8;
const TAG_RESAMPLE: u64 = 9;

/// Seed of client `client`'s minibatch shuffler in round `round`.
pub fn train_seed(run_seed: u64, round: usize, client: usize) -> u64 {
    derive_seed(run_seed, TAG_TRAIN, &[round as u64, client as u64])
}

/// Seed used to initialize the global model.
pub fn init_seed(run_seed: u64) -> u64 {
    derive_seed(run_seed, TAG_INIT, &[])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchStrategy {
    Otp,
    FixedPosition,
    Magnitude,
    Random,
}

impl DispatchStrategy {
    fn extraction(self) -> Option<ExtractStrategy> {
        match self {
            Self::Otp => None,
            Self::FixedPosition => Some(ExtractStrategy::FixedPosition),
            Self::Magnitude => Some(ExtractStrategy::Magnitude),
            Self::Random => Some(ExtractStrategy::Random),
        }
    }
}

/// Local objective. `Sar` uses `sar.lambda` from the run config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalRule {
    Sar,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateStrategy {
    Ota,
    Positional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodSpec {
    pub dispatch: DispatchStrategy,
    pub local: LocalRule,
    pub aggregate: AggregateStrategy,
    pub fusion_alpha: f64,
}

impl Default for MethodSpec {
    fn default() -> Self {
        Self::full()
    }
}

impl MethodSpec {
    pub fn full() -> Self {
        Self {
            dispatch: DispatchStrategy::Otp,
            local: LocalRule::Sar,
            aggregate: AggregateStrategy::Ota,
            fusion_alpha: 0.5,
        }
    }

    /// Fixed-position extraction replaces transport-based pruning.
    pub fn without_otp() -> Self {
        Self {
            dispatch: DispatchStrategy::FixedPosition,
            ..Self::full()
        }
    }

    pub fn without_sar() -> Self {
        Self {
            local: LocalRule::Plain,
            ..Self::full()
        }
    }

    /// Position-based aggregation over the initial (fixed-position) structures.
    pub fn without_ota() -> Self {
        Self {
            aggregate: AggregateStrategy::Positional,
            ..Self::full()
        }
    }

    /// The historical reference replaced by a pruning heuristic on the global model.
    pub fn with_proxy(strategy: ExtractStrategy) -> Self {
        let dispatch = match strategy {
            ExtractStrategy::FixedPosition => DispatchStrategy::FixedPosition,
            ExtractStrategy::Magnitude => DispatchStrategy::Magnitude,
            ExtractStrategy::Random => DispatchStrategy::Random,
        };
        Self {
            dispatch,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fusion_alpha) {
            return Err(Error::InvalidConfig {
                field: "method.fusion_alpha",
                reason: format!("must lie in [0, 1], got {}", self.fusion_alpha),
            });
        }
        // every dispatch strategy yields an index map (OTP reports the
        // fixed-position structure it bootstraps from), so all pairs are valid
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum RateMode {
    Static,
    Dynamic { resample_every: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Synthetic,
    FeatureShift,
    Idx,
}

/// Where client data comes from. Only the fields of the selected kind are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub synthetic: SyntheticParams,
    pub shift: FeatureShiftParams,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Fraction of each client's shard used for training; the rest is its test shard.
    pub train_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Synthetic,
            synthetic: SyntheticParams::default(),
            shift: FeatureShiftParams::default(),
            images: None,
            labels: None,
            train_frac: 0.8,
        }
    }
}

impl DataConfig {
    fn load(&self) -> Result<Vec<LabeledDataset>> {
        match self.kind {
            DataKind::Synthetic => {
                self.synthetic.validate()?;
                Ok(vec![gen_synthetic(&self.synthetic)])
            }
            DataKind::FeatureShift => {
                self.synthetic.validate()?;
                gen_feature_shift(&self.synthetic, &self.shift)
            }
            DataKind::Idx => match (&self.images, &self.labels) {
                (Some(images), Some(labels)) => Ok(vec![load_idx(images, labels)?]),
                _ => Err(Error::InvalidConfig {
                    field: "data.images",
                    reason: "idx data needs both `images` and `labels` paths".into(),
                }),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths of the full-size model; empty gives softmax regression.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub client_count: usize,
    pub join_ratio: f64,
    pub rate_set: Vec<f64>,
    pub rate_mode: RateMode,
    pub seed: u64,
    pub method: MethodSpec,
    pub sar: SarConfig,
    pub ot: OtConfig,
    pub model: ModelConfig,
    pub partition: PartitionScheme,
    pub data: DataConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            client_count: 20,
            join_ratio: 1.0,
            rate_set: vec![0.0, 0.25, 0.5, 0.75],
            rate_mode: RateMode::Static,
            seed: 0,
            method: MethodSpec::full(),
            sar: SarConfig::default(),
            ot: OtConfig::default(),
            model: ModelConfig::default(),
            partition: PartitionScheme::Dirichlet { beta: 0.5 },
            data: DataConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field, reason: String| Err(Error::InvalidConfig { field, reason });
        if self.rounds == 0 {
            return invalid("rounds", "must be >= 1".into());
        }
        if self.client_count == 0 {
            return invalid("client_count", "must be >= 1".into());
        }
        if !(self.join_ratio > 0.0 && self.join_ratio <= 1.0) {
            return invalid("join_ratio", format!("must lie in (0, 1], got {}", self.join_ratio));
        }
        if self.rate_set.is_empty() {
            return invalid("rate_set", "must not be empty".into());
        }
        if let Some(r) = self.rate_set.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return invalid("rate_set", format!("values must lie in [0, 1), got {r}"));
        }
        if let RateMode::Dynamic { resample_every: 0 } = self.rate_mode {
            return invalid("rate_mode.resample_every", "must be >= 1".into());
        }
        if self.model.hidden.contains(&0) {
            return invalid("model.hidden", "widths must be >= 1".into());
        }
        if !(self.data.train_frac > 0.0 && self.data.train_frac <= 1.0) {
            return invalid(
                "data.train_frac",
                format!("must lie in (0, 1], got {}", self.data.train_frac),
            );
        }
        match (self.data.kind, &self.partition) {
            (DataKind::FeatureShift, PartitionScheme::FeatureShift { domains })
                if *domains != self.data.shift.domains =>
            {
                return invalid(
                    "partition.domains",
                    format!("{domains} does not match data.shift.domains = {}", self.data.shift.domains),
                );
            }
            (DataKind::FeatureShift, PartitionScheme::FeatureShift { .. }) => {}
            (DataKind::FeatureShift, _) | (_, PartitionScheme::FeatureShift { .. }) => {
                return invalid(
                    "partition.scheme",
                    "feature_shift partitioning and feature_shift data go together".into(),
                );
            }
            _ => {}
        }
        self.method.validate()?;
        self.sar.validate()?;
        self.ot.validate()
    }

    /// Number of clients sampled per round, `⌈join_ratio · N⌉`.
    pub fn participants_per_round(&self) -> usize {
        ((self.join_ratio * self.client_count as f64).ceil() as usize).clamp(1, self.client_count)
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub rho: f64,
    pub p: f64,
    /// Most recent post-training submodel.
    pub history: Option<LayerStack>,
    pub last_participation_round: Option<usize>,
}

/// Training statistics of one participant in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client: usize,
    pub rho: f64,
    /// Accuracy of the personalized submodel on the client's test shard after the round.
    pub acc: f64,
    pub drift_sq: f64,
    pub ce_loss: f64,
    pub sar_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Global model accuracy on the union of client test shards.
    pub global_acc: f64,
    /// Mean cross-entropy of the global model on the union of client train shards.
    pub global_loss: f64,
    /// Mean personalized accuracy over all clients.
    pub mean_client_acc: f64,
    pub per_client: Vec<ClientRecord>,
    pub participating: Vec<usize>,
}

impl RoundRecord {
    pub fn mean_drift_sq(&self) -> f64 {
        mean(self.per_client.iter().map(|c| c.drift_sq))
    }

    pub fn mean_ce_loss(&self) -> f64 {
        mean(self.per_client.iter().map(|c| c.ce_loss))
    }

    pub fn mean_sar_loss(&self) -> f64 {
        mean(self.per_client.iter().map(|c| c.sar_loss))
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

/// Outcome of one client's dispatch, training and lifting.
struct ClientUpdate {
    id: usize,
    trained: LayerStack,
    lifted: Option<LayerStack>,
    kept: KeptNeurons,
    drift_sq: f64,
    ce_loss: f64,
    sar_loss: f64,
}

/// Neuron positions of a fixed-position submodel with `shape` dims.
fn prefix_map(shape: &[usize]) -> KeptNeurons {
    shape[1..].iter().map(|&w| (0..w).collect()).collect()
}

/// A simulated federation that advances one round per [`Federation::step`].
#[derive(Debug, Clone)]
pub struct Federation {
    cfg: FederationConfig,
    clients: Vec<ClientState>,
    global: LayerStack,
    round: usize,
    train_union: Batch,
    test_union: Batch,
    /// Plain weighted averaging of full models with no transport or penalty.
    reference: bool,
}

impl Federation {
    pub fn new(cfg: FederationConfig) -> Result<Self> {
        cfg.validate()?;
        let sources = cfg.data.load()?;
        let split = partition(
            &sources,
            &PartitionSpec {
                scheme: cfg.partition.clone(),
                client_count: cfg.client_count,
                seed: derive_seed(cfg.seed, TAG_PARTITION, &[]),
            },
        )?;
        let shards: Vec<(LabeledDataset, LabeledDataset)> = split
            .clients
            .iter()
            .enumerate()
            .map(|(i, d)| d.train_test_split(cfg.data.train_frac, derive_seed(cfg.seed, TAG_SPLIT, &[i as u64])))
            .collect();
        let trains: Vec<LabeledDataset> = shards.iter().map(|(tr, _)| tr.clone()).collect();
        let weights = size_weights(&trains);

        let mut rate_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_RATES, &[]));
        let clients: Vec<ClientState> = shards
            .into_iter()
            .zip(weights)
            .enumerate()
            .map(|(id, ((train, test), p))| ClientState {
                id,
                train,
                test,
                rho: *cfg.rate_set.choose(&mut rate_rng).expect("rate_set is non-empty"),
                p,
                history: None,
                last_participation_round: None,
            })
            .collect();

        let train_union = union(clients.iter().map(|c| &c.train))?;
        let test_union = union(clients.iter().map(|c| &c.test))?;
        let dims: Vec<usize> = std::iter::once(train_union.features.cols())
            .chain(cfg.model.hidden.iter().copied())
            .chain(std::iter::once(sources[0].class_count))
            .collect();
        let global = LayerStack::init(&dims, &mut ChaCha8Rng::seed_from_u64(init_seed(cfg.seed)));
        Ok(Self {
            cfg,
            clients,
            global,
            round: 0,
            train_union,
            test_union,
            reference: false,
        })
    }

    /// Federation that runs classical weighted averaging of full-size models.
    pub fn fedavg_reference(cfg: FederationConfig) -> Result<Self> {
        if let Some(r) = cfg.rate_set.iter().find(|&&r| r != 0.0) {
            return Err(Error::InvalidConfig {
                field: "rate_set",
                reason: format!("the averaging reference needs every rate to be 0, got {r}"),
            });
        }
        Ok(Self {
            reference: true,
            ..Self::new(cfg)?
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn global(&self) -> &LayerStack {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    /// Number of completed rounds.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Mean cross-entropy of the current global model over all training data.
    pub fn global_loss(&self) -> Result<f64> {
        ce_loss(&self.global, &self.train_union)
    }

    /// Dims of the submodel a client with rate `rho` trains.
    pub fn submodel_shape(&self, rho: f64) -> Vec<usize> {
        let dims = self.global.dims();
        make_submodel_shape(
            &WidthSchedule::new(self.cfg.model.hidden.clone(), rho),
            dims[0],
            dims[dims.len() - 1],
        )
    }

    /// Submodel handed to `client` from `global`, with the global positions it
    /// is reported to occupy. `stream_seed` drives random extraction.
    fn dispatch(
        &self,
        client: &ClientState,
        global: &LayerStack,
        stream_seed: u64,
    ) -> Result<(LayerStack, KeptNeurons)> {
        if self.reference {
            return Ok((global.clone(), prefix_map(&global.dims())));
        }
        let shape = self.submodel_shape(client.rho);
        match (self.cfg.method.dispatch.extraction(), &client.history) {
            (Some(strategy), _) => {
                let cut = baseline_extract(global, &shape, strategy, stream_seed)?;
                Ok((cut.model, cut.kept))
            }
            (None, Some(history)) => {
                let fusion = FusionConfig::new(self.cfg.method.fusion_alpha, self.cfg.ot)?;
                let personal = otp_personalize(global, history, &fusion)?;
                Ok((personal.model, prefix_map(&shape)))
            }
            (None, None) => {
                let cut = baseline_extract(global, &shape, ExtractStrategy::FixedPosition, stream_seed)?;
                Ok((cut.model, cut.kept))
            }
        }
    }

    fn client_step(&self, client: &ClientState, round: usize) -> Result<ClientUpdate> {
        let (anchor, kept) = self.dispatch(
            client,
            &self.global,
            derive_seed(self.cfg.seed, TAG_EXTRACT, &[round as u64, client.id as u64]),
        )?;
        let sar = SarConfig {
            lambda: match (self.reference, self.cfg.method.local) {
                (false, LocalRule::Sar) => self.cfg.sar.lambda,
                _ => 0.0,
            },
            ..self.cfg.sar
        };
        let rho = if self.reference { 0.0 } else { client.rho };
        let report = local_train(&anchor, &client.train, rho, &sar, train_seed(self.cfg.seed, round, client.id))?;
        let lifted = match (self.reference, self.cfg.method.aggregate) {
            (true, _) => Some(report.final_model.clone()),
            (false, AggregateStrategy::Ota) => {
                Some(ota_align_up(&report.final_model, &self.global, &self.cfg.ot)?.model)
            }
            (false, AggregateStrategy::Positional) => None,
        };
        let last = report.last_loss();
        Ok(ClientUpdate {
            id: client.id,
            drift_sq: report.drift_sq,
            ce_loss: last.ce,
            sar_loss: last.sar,
            trained: report.final_model,
            lifted,
            kept,
        })
    }

    /// Clients sampled for `round`, ascending.
    pub fn participants(&self, round: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, TAG_SAMPLE, &[round as u64]));
        let mut ids = sample(&mut rng, self.cfg.client_count, self.cfg.participants_per_round()).into_vec();
        ids.sort_unstable();
        ids
    }

    /// Runs one communication round and returns its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let round = self.round + 1;
        if !self.reference {
            resample_rates(&mut self.clients, &self.global, round, &self.cfg)
                .map_err(|e| e.in_round(round, None))?;
        }
        let ids = self.participants(round);
        let this = &*self;
        let updates: Vec<ClientUpdate> = ids
            .par_iter()
            .map(|&i| {
                this.client_step(&this.clients[i], round)
                    .map_err(|e| e.in_round(round, Some(i)))
            })
            .collect::<Result<_>>()?;

        let total: f64 = updates.iter().map(|u| self.clients[u.id].p).sum();
        let weight = |u: &ClientUpdate| self.clients[u.id].p / total;
        let next = match updates.iter().all(|u| u.lifted.is_some()) {
            true => {
                let parts: Vec<(&LayerStack, f64)> = updates
                    .iter()
                    .map(|u| (u.lifted.as_ref().expect("checked"), weight(u)))
                    .collect();
                aggregate(&parts)
            }
            false => {
                let parts: Vec<PositionalUpdate> = updates
                    .iter()
                    .map(|u| PositionalUpdate {
                        client: u.id,
                        model: &u.trained,
                        kept: Some(&u.kept),
                        weight: weight(u),
                    })
                    .collect();
                positional_aggregate(&self.global, &parts)
            }
        }
        .map_err(|e| e.in_round(round, None))?;

        self.global = next;
        self.round = round;
        let mut per_client = Vec::with_capacity(updates.len());
        for u in updates {
            let c = &mut self.clients[u.id];
            c.history = Some(u.trained);
            c.last_participation_round = Some(round);
            per_client.push(ClientRecord {
                client: u.id,
                rho: c.rho,
                acc: 0.0,
                drift_sq: u.drift_sq,
                ce_loss: u.ce_loss,
                sar_loss: u.sar_loss,
            });
        }

        let accs = self.client_accuracies().map_err(|e| e.in_round(round, None))?;
        for rec in &mut per_client {
            rec.acc = accs[rec.client];
        }
        let eval = || -> Result<(f64, f64)> {
            Ok((evaluate(&self.global, &self.test_union)?, self.global_loss()?))
        };
        let (global_acc, global_loss) = eval().map_err(|e| e.in_round(round, None))?;
        Ok(RoundRecord {
            round,
            global_acc,
            global_loss,
            mean_client_acc: mean(accs.iter().copied()),
            per_client,
            participating: ids,
        })
    }

    /// Submodel client `id` would receive from the current global model.
    pub fn personalized(&self, id: usize) -> Result<LayerStack> {
        let seed = derive_seed(self.cfg.seed, TAG_EVAL, &[self.round as u64, id as u64]);
        Ok(self.dispatch(&self.clients[id], &self.global, seed)?.0)
    }

    /// Test accuracy of every client's personalized submodel.
    pub fn client_accuracies(&self) -> Result<Vec<f64>> {
        (0..self.clients.len())
            .into_par_iter()
            .map(|id| evaluate(&self.personalized(id)?, &self.clients[id].test.samples))
            .collect()
    }
}

fn union<'a>(parts: impl Iterator<Item = &'a LabeledDataset>) -> Result<Batch> {
    let parts: Vec<&LabeledDataset> = parts.collect();
    Ok(LabeledDataset::concat(&parts)?.samples)
}

/// Runs `cfg.rounds` rounds and returns one record per round.
pub fn run_federation(cfg: FederationConfig) -> Result<Vec<RoundRecord>> {
    let mut fed = Federation::new(cfg)?;
    (0..fed.cfg.rounds).map(|_| fed.step()).collect()
}

/// Classical weighted parameter averaging on the same data, participants and
/// seeds as [`run_federation`]. Every rate must be 0.
pub fn run_fedavg_reference(cfg: FederationConfig) -> Result<Vec<RoundRecord>> {
    let mut fed = Federation::fedavg_reference(cfg)?;
    (0..fed.cfg.rounds).map(|_| fed.step()).collect()
}

/// In dynamic mode, at every round divisible by `resample_every`, each client
/// draws a new rate. A client whose rate changes has its history cut to the new
/// shape by magnitude, taken from the history itself when it is wide enough and
/// from the global model otherwise.
pub fn resample_rates(
    states: &mut [ClientState],
    global: &LayerStack,
    round: usize,
    cfg: &FederationConfig,
) -> Result<()> {
    let RateMode::Dynamic { resample_every } = cfg.rate_mode else {
        return Ok(());
    };
    if round % resample_every != 0 || cfg.rate_set.len() < 2 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_RESAMPLE, &[round as u64]));
    let dims = global.dims();
    for state in states.iter_mut() {
        let rho = *cfg.rate_set.choose(&mut rng).expect("rate_set is non-empty");
        if rho == state.rho {
            continue;
        }
        state.rho = rho;
        let Some(history) = &state.history else {
            continue;
        };
        let shape = make_submodel_shape(
            &WidthSchedule::new(cfg.model.hidden.clone(), rho),
            dims[0],
            dims[dims.len() - 1],
        );
        let fits = shape.iter().zip(history.dims()).all(|(&s, h)| s <= h);
        let source = if fits { history } else { global };
        let cut = baseline_extract(source, &shape, ExtractStrategy::Magnitude, 0)
            .map_err(|e| e.in_round(round, Some(state.id)))?;
        state.history = Some(cut.model);
    }
    Ok(())
}
