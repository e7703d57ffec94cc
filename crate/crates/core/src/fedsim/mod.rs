//! Seeded federated-learning simulator comparing FedAvg with
//! cycle-consistent aggregation, clients simulated sequentially in-process.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matching::{fw_match_multi, MatchConfig};
use crate::merging::{map_to_universe, mean_params, naive_merge, repair};
use crate::model::{Dataset, MlpParams};
use crate::scalar::Scalar;
use crate::training::{init_mlp, train_from, TrainConfig};

pub const SERVER_PROBE_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    FedAvg,
    C2m3,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::FedAvg => "fedavg",
            Aggregator::C2m3 => "c2m3",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FedConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// All clients start round 1 from one shared initialization.
    pub same_init: bool,
    pub aggregator: Aggregator,
    pub partition_seed: u64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl FedConfig {
    fn validate(&self) -> Result<()> {
        if self.n_clients < 2 {
            return Err(Error::InvalidInput("need at least 2 clients".into()));
        }
        if self.rounds < 1 {
            return Err(Error::InvalidInput("need at least 1 round".into()));
        }
        Ok(())
    }
}

/// Global-model metrics after one aggregation round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// True when every universe permutation was the identity and the
    /// aggregation fell back to plain averaging (always false for fedavg).
    pub identity_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct SimulationResult<S: Scalar> {
    pub rounds: Vec<RoundRecord>,
    pub final_model: MlpParams<S>,
}

/// Seeded IID shuffle-and-split; shard sizes differ by at most one.
pub fn partition_data<S: Scalar>(
    data: &Dataset<S>,
    n_clients: usize,
    seed: u64,
) -> Result<Vec<Dataset<S>>> {
    if n_clients == 0 {
        return Err(Error::InvalidInput("need at least 1 client".into()));
    }
    if data.len() < n_clients {
        return Err(Error::InvalidInput(format!(
            "{} samples cannot cover {n_clients} clients",
            data.len()
        )));
    }
    if n_clients == 1 {
        return Ok(vec![data.clone()]);
    }
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng);
    let base = data.len() / n_clients;
    let extra = data.len() % n_clients;
    let mut shards = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let size = base + usize::from(c < extra);
        shards.push(data.subset(&idx[start..start + size])?);
        start += size;
    }
    Ok(shards)
}

fn local_seed(base: u64, round: usize, client: usize) -> u64 {
    base.wrapping_add(round as u64 * 1_000_003).wrapping_add(client as u64 * 10_007)
}

/// Run the simulation: each round every client trains `local_epochs` from
/// the current global model on its shard, then the server aggregates.
/// The c2m3 aggregator matches the client models into a universe, averages
/// there, and applies REPAIR on a seeded probe subset of the train data —
/// unless every permutation is the identity, in which case it reduces to
/// plain averaging (bitwise equal to fedavg).
pub fn run_simulation<S: Scalar>(
    train_data: &Dataset<S>,
    test_data: &Dataset<S>,
    dims: &[usize],
    cfg: &FedConfig,
) -> Result<SimulationResult<S>> {
    cfg.validate()?;
    let shards = partition_data(train_data, cfg.n_clients, cfg.partition_seed)?;
    let probe = {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed.wrapping_add(0x9e3779b9));
        let mut idx: Vec<usize> = (0..train_data.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(SERVER_PROBE_SIZE.min(train_data.len()));
        idx.sort_unstable();
        train_data.subset(&idx)?
    };
    let mut global = init_mlp::<S>(dims, cfg.init_seed, cfg.train.init_scale)?;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let locals: Vec<MlpParams<S>> = shards
            .iter()
            .enumerate()
            .map(|(c, shard)| {
                let start = if round == 1 && !cfg.same_init {
                    // heterogeneous starting points for the first round
                    init_mlp::<S>(dims, cfg.init_seed.wrapping_add(1 + c as u64), cfg.train.init_scale)?
                } else {
                    global.clone()
                };
                let local_cfg = TrainConfig {
                    epochs: cfg.local_epochs,
                    seed: local_seed(cfg.train.seed, round, c),
                    ..cfg.train.clone()
                };
                train_from(&start, shard, &local_cfg)
            })
            .collect::<Result<_>>()?;
        let mut identity_fallback = false;
        global = match cfg.aggregator {
            Aggregator::FedAvg => naive_merge(&locals)?,
            Aggregator::C2m3 => {
                let matched = fw_match_multi(&locals, &MatchConfig::default())?;
                if matched.perms.iter().flatten().all(|p| p.is_identity()) {
                    identity_fallback = true;
                    naive_merge(&locals)?
                } else {
                    let mapped: Vec<MlpParams<S>> = locals
                        .iter()
                        .zip(&matched.perms)
                        .map(|(m, p)| map_to_universe(m, p))
                        .collect::<Result<_>>()?;
                    let merged = mean_params(&mapped)?;
                    repair(&merged, &mapped, &probe)?.model
                }
            }
        };
        let metrics = global.loss_and_accuracy(test_data)?;
        rounds.push(RoundRecord {
            round,
            accuracy: metrics.accuracy,
            loss: metrics.loss,
            identity_fallback,
        });
    }
    Ok(SimulationResult { rounds, final_model: global })
}

/// Round table CSV with columns `round,aggregator,accuracy,loss`.
pub fn round_table_csv(records: &[RoundRecord], aggregator: Aggregator) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round", "aggregator", "accuracy", "loss"])?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            aggregator.name().to_string(),
            r.accuracy.to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}
