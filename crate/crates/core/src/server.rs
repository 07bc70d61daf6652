//! Edge-server training loop.
//!
//! One round, given the mask chosen at the end of the previous round:
//!
//! 1. every client computes its full-batch gradient at the broadcast model;
//! 2. clients keep the masked entries (`Ŝ g_n`);
//! 3. the channel superposes them with fading and noise;
//! 4. the server scatters the received vector back to `d` entries;
//! 5. the model takes a step against that reconstruction;
//! 6. masked entries of the global gradient are overwritten with the
//!    reconstruction, all others are left untouched;
//! 7. masked ages reset to zero, all others grow by one;
//! 8. the next mask is selected from the new global gradient and ages.
//!
//! Client gradients are computed in parallel but always reduced in client
//! index order, so results do not depend on the thread count.

use std::time::Instant;

use rayon::prelude::*;

use crate::channel::{aggregate, sample_draw, ChannelModel};
use crate::error::{check_dim, Error, Result};
use crate::model_state::{AgeVector, GradientVector, ModelParams, SparseMask};
use crate::rng::{stream, SimRng, Stream};
use crate::sparsifier::{select, Strategy};
use crate::task::{ClientData, Dataset, Task};

/// Everything that stays fixed over a run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub task: Task,
    pub clients: Vec<ClientData>,
    pub channel: ChannelModel,
    pub strategy: Strategy,
    pub eta: f64,
    /// Pooled training samples, for train accuracy.
    pub train_eval: Option<Dataset>,
    /// Held-out samples, for test accuracy.
    pub test_eval: Option<Dataset>,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        let d = self.task.dim();
        check_dim("strategy dimension", d, self.strategy.d())?;
        if self.clients.is_empty() {
            return Err(Error::config("need at least one client"));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::config(format!("eta must be finite and > 0 (got {})", self.eta)));
        }
        Ok(())
    }
}

/// Random streams consumed while stepping.
#[derive(Debug, Clone)]
pub struct RoundRngs {
    pub channel: SimRng,
    pub selection: SimRng,
}

impl RoundRngs {
    pub fn from_seed(seed: u64) -> Self {
        RoundRngs {
            channel: stream(seed, Stream::Channel),
            selection: stream(seed, Stream::Selection),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub theta: ModelParams,
    pub g_global: GradientVector,
    pub ages: AgeVector,
    pub round: usize,
    /// Mask broadcast for the round about to run.
    pub mask: SparseMask,
}

/// Metrics for one completed round. Loss and gradient norms refer to the
/// model broadcast at the start of the round; accuracies to the model the
/// round produced; ages to the state after the update.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub loss: f64,
    /// `‖∇f(θ)‖²` of the exact global gradient.
    pub grad_norm_sq: f64,
    /// `(1/N) Σ ‖∇f_n(θ)‖²`.
    pub client_grad_norm_sq: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub mask: Vec<usize>,
    pub max_age: u64,
    pub mean_age: f64,
    pub wall_ms: f64,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub round: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RoundRecord>,
    pub final_state: ServerState,
    pub aborted: Option<Abort>,
}

/// Cold-start state: zero global gradient and ages, first mask selected
/// from that all-zero state.
pub fn init(setup: &Setup, theta0: ModelParams, rngs: &mut RoundRngs) -> Result<ServerState> {
    setup.validate()?;
    let d = setup.task.dim();
    check_dim("initial parameters", d, theta0.dim())?;
    let g_global = GradientVector::zeros(d);
    let ages = AgeVector::zeros(d);
    let mask = select(&setup.strategy, &g_global, &ages, &mut rngs.selection)?;
    Ok(ServerState { theta: theta0, g_global, ages, round: 0, mask })
}

fn diverged(round: usize, reason: impl Into<String>) -> Error {
    Error::Divergence { round, reason: reason.into() }
}

pub fn step(state: &ServerState, setup: &Setup, rngs: &mut RoundRngs) -> Result<(ServerState, RoundRecord)> {
    let started = Instant::now();
    let round = state.round;
    let mask = &state.mask;

    let local: Vec<(f64, GradientVector)> = setup
        .clients
        .par_iter()
        .map(|c| setup.task.local_loss_and_gradient(&state.theta, c))
        .collect::<Result<Vec<_>>>()?;
    let n = local.len() as f64;
    let loss = local.iter().map(|(l, _)| l).sum::<f64>() / n;
    if !loss.is_finite() {
        return Err(diverged(round, "non-finite loss"));
    }
    if let Some(i) = local.iter().position(|(_, g)| !g.is_finite()) {
        return Err(diverged(round, format!("non-finite gradient at client {i}")));
    }
    let grads: Vec<GradientVector> = local.into_iter().map(|(_, g)| g).collect();
    let full = GradientVector::mean(&grads)?;
    let client_grad_norm_sq = grads.iter().map(GradientVector::l2_norm_sq).sum::<f64>() / n;

    let compressed = grads.iter().map(|g| mask.apply(g)).collect::<Result<Vec<_>>>()?;
    let draw = sample_draw(&setup.channel, grads.len(), mask.k(), &mut rngs.channel);
    let received = aggregate(&draw, &compressed)?;
    let update = mask.scatter(&received)?;
    if !update.is_finite() {
        return Err(diverged(round, "non-finite aggregated update"));
    }

    let theta = state.theta.descend(&update, setup.eta)?;
    if !theta.is_finite() {
        return Err(diverged(round, "non-finite model parameters"));
    }
    let mut g_global = state.g_global.clone();
    for &j in mask.indices() {
        g_global.as_mut_slice()[j] = update[j];
    }
    let ages = state.ages.advance(mask)?;
    let next_mask = select(&setup.strategy, &g_global, &ages, &mut rngs.selection)?;

    let train_accuracy = match &setup.train_eval {
        Some(ds) => setup.task.accuracy(&theta, ds)?,
        None => None,
    };
    let test_accuracy = match &setup.test_eval {
        Some(ds) => setup.task.accuracy(&theta, ds)?,
        None => None,
    };

    let record = RoundRecord {
        round,
        loss,
        grad_norm_sq: full.l2_norm_sq(),
        client_grad_norm_sq,
        train_accuracy,
        test_accuracy,
        mask: mask.indices().to_vec(),
        max_age: ages.max(),
        mean_age: ages.mean(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let next = ServerState { theta, g_global, ages, round: round + 1, mask: next_mask };
    Ok((next, record))
}

/// Runs `rounds` steps from `state`. Divergence stops the loop and is
/// reported in [`RunOutcome::aborted`]; other errors propagate.
pub fn run_rounds(setup: &Setup, mut state: ServerState, rounds: usize, rngs: &mut RoundRngs) -> Result<RunOutcome> {
    let mut records = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        match step(&state, setup, rngs) {
            Ok((next, record)) => {
                records.push(record);
                state = next;
            }
            Err(Error::Divergence { round, reason }) => {
                return Ok(RunOutcome { records, final_state: state, aborted: Some(Abort { round, reason }) });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutcome { records, final_state: state, aborted: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::sparsifier::StrategyKind;
    use crate::task::QuadraticTask;

    fn quad_setup(kind: StrategyKind, d: usize, r: usize, k: usize, channel: ChannelModel) -> Setup {
        let mut rng = seeded(17);
        let q = QuadraticTask::random(d, 1.0, &mut rng).unwrap();
        let centers = q.client_centers(3, 1.0, 0.5, &mut rng);
        Setup {
            task: Task::Quadratic(q),
            clients: centers.into_iter().map(ClientData::Center).collect(),
            channel,
            strategy: Strategy::normalized(kind, d, r, k).unwrap(),
            eta: 0.5,
            train_eval: None,
            test_eval: None,
        }
    }

    #[test]
    fn init_is_cold() {
        let setup = quad_setup(StrategyKind::AgeTopK, 12, 6, 4, ChannelModel::ideal());
        let state = init(&setup, ModelParams::new(vec![1.0; 12]), &mut RoundRngs::from_seed(0)).unwrap();
        assert_eq!(state.ages, AgeVector::zeros(12));
        assert_eq!(state.g_global, GradientVector::zeros(12));
        assert_eq!(state.round, 0);
        assert_eq!(state.mask.indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn step_bookkeeping() {
        let channel = ChannelModel::rayleigh(1.0, 0.01).unwrap();
        let setup = quad_setup(StrategyKind::AgeTopK, 12, 6, 4, channel);
        let mut rngs = RoundRngs::from_seed(3);
        let mut state = init(&setup, ModelParams::new(vec![1.0; 12]), &mut rngs).unwrap();
        for _ in 0..30 {
            let (next, rec) = step(&state, &setup, &mut rngs).unwrap();
            assert_eq!(next.round, state.round + 1);
            assert_eq!(rec.mask, state.mask.indices());
            for j in 0..12 {
                let on = state.mask.contains(j);
                if on {
                    assert_eq!(next.ages[j], 0);
                } else {
                    assert_eq!(next.ages[j], state.ages[j] + 1);
                    assert_eq!(next.g_global[j].to_bits(), state.g_global[j].to_bits());
                    assert_eq!(next.theta.as_slice()[j].to_bits(), state.theta.as_slice()[j].to_bits());
                }
            }
            state = next;
        }
    }

    #[test]
    fn divergence_is_reported() {
        let mut setup = quad_setup(StrategyKind::TopK, 8, 8, 8, ChannelModel::ideal());
        setup.eta = 1e6;
        let mut rngs = RoundRngs::from_seed(0);
        let state = init(&setup, ModelParams::new(vec![1.0; 8]), &mut rngs).unwrap();
        let out = run_rounds(&setup, state, 500, &mut rngs).unwrap();
        let abort = out.aborted.expect("must diverge");
        assert_eq!(abort.round, out.records.len());
        assert!(out.records.len() < 500);
    }

    #[test]
    fn invalid_setup_rejected() {
        let mut setup = quad_setup(StrategyKind::TopK, 8, 8, 4, ChannelModel::ideal());
        setup.eta = -1.0;
        assert!(init(&setup, ModelParams::zeros(8), &mut RoundRngs::from_seed(0)).is_err());
        let setup = quad_setup(StrategyKind::TopK, 8, 8, 4, ChannelModel::ideal());
        assert!(init(&setup, ModelParams::zeros(9), &mut RoundRngs::from_seed(0)).is_err());
    }
}
