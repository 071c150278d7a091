use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ClusterInit, DatasetKind, EvalMode, ExperimentConfig};
use super::eval::{accuracy_point, evaluate, mse_point, Evaluation};
use super::metrics::{final_score, ClientMetrics, MetricsWriter, RoundMetrics};
use super::state::Snapshot;
use crate::bnn::{predictive, NetworkShape, Task};
use crate::data::{
    load_idx_dir, make_cluster_dataset, partition_noniid, synthetic_regression, ClientSplit,
    ClusterVariant, LabeledDataset, PartitionSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::fed::{
    aggregate, aggregate_clusters, client_update, client_update_cfedbayes, fedavg_aggregate,
    fedavg_update, sample_participants, Algorithm, ClientState, LocalOutcome, ServerState, Upload,
};
use crate::rng::{self, Purpose};
use crate::variational::{Posterior, SparseVariationalParams, VariationalParams};

/// Client data and the network shape it implies.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub shape: NetworkShape,
    pub clients: Vec<ClientSplit>,
    /// Ground-truth cluster per client, for clustered benchmarks.
    pub truth: Option<Vec<usize>>,
}

fn halves(n: usize) -> (usize, usize) {
    (n.div_ceil(2), n / 2)
}

fn partition(pool: &LabeledDataset, cfg: &ExperimentConfig, num_clients: usize, salt: u64) -> Result<Vec<ClientSplit>> {
    let mut spec = PartitionSpec::preset(cfg.preset, num_clients, cfg.labels_per_client, cfg.seed ^ salt);
    spec.train_per_class = cfg.train_per_class.unwrap_or(spec.train_per_class);
    spec.test_per_class = cfg.test_per_class.unwrap_or(spec.test_per_class);
    partition_noniid(pool, &spec)
}

fn num_classes(clients: &[ClientSplit]) -> usize {
    clients
        .iter()
        .flat_map(|c| c.train.classes().unwrap_or(&[]).iter().chain(c.test.classes().unwrap_or(&[])))
        .max()
        .map_or(0, |m| m + 1)
        .max(2)
}

/// Loads and splits the configured dataset.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let n = cfg.num_clients;
    let (clients, truth) = match cfg.dataset {
        DatasetKind::Synthetic => {
            let k = cfg.synthetic_clusters;
            let s = synthetic_regression(&SyntheticSpec {
                clusters: k,
                clients_per_cluster: n / k,
                samples_per_client: cfg.synthetic_samples,
                noise_sigma: cfg.synthetic_noise,
                input_dim: cfg.synthetic_input_dim,
                seed: cfg.seed,
            })?;
            let mut widths = vec![cfg.synthetic_input_dim];
            widths.extend(&cfg.hidden);
            widths.push(1);
            return Ok(PreparedData {
                shape: NetworkShape::regressor(widths, cfg.synthetic_noise)?,
                clients: s.clients,
                truth: Some(s.cluster_ids),
            });
        }
        DatasetKind::Idx => (partition(&load_idx_dir(&cfg.resolved_data_dir())?, cfg, n, 0)?, None),
        DatasetKind::InvertedClusters => {
            let (a, _) = halves(n);
            let mut clients = partition(&load_idx_dir(&cfg.resolved_data_dir())?, cfg, n, 0)?;
            for c in clients.iter_mut().skip(a) {
                c.train = make_cluster_dataset(&c.train, ClusterVariant::Inverted);
                c.test = make_cluster_dataset(&c.test, ClusterVariant::Inverted);
            }
            (clients, Some((0..n).map(|i| usize::from(i >= a)).collect()))
        }
        DatasetKind::MixedClusters => {
            let (a, b) = halves(n);
            let second = cfg.second_data_dir.as_ref().expect("validated");
            let mut clients = partition(&load_idx_dir(&cfg.resolved_data_dir())?, cfg, a, 0)?;
            if b > 0 {
                clients.extend(partition(&load_idx_dir(second)?, cfg, b, 1)?);
            }
            (clients, Some((0..n).map(|i| usize::from(i >= a)).collect()))
        }
    };
    let mut widths = vec![clients[0].train.inputs.ncols()];
    widths.extend(&cfg.hidden);
    widths.push(num_classes(&clients));
    Ok(PreparedData {
        shape: NetworkShape::classifier(widths)?,
        clients,
        truth,
    })
}

/// Uniform `(+-1/sqrt(fan_in))` means, constant `rho` (and `lambda`).
pub fn initial_posterior(cfg: &ExperimentConfig, shape: &NetworkShape, k: usize) -> Posterior {
    let mut r = rng::stream(cfg.seed, Purpose::Init, k as u64, 0);
    let mu: Vec<f64> = shape
        .fan_in_per_param()
        .into_iter()
        .map(|f| {
            let bound = 1.0 / (f as f64).sqrt();
            r.random_range(-bound..bound)
        })
        .collect();
    let t = mu.len();
    let base = VariationalParams::new(mu, vec![cfg.rho_init; t]).expect("lengths agree");
    if cfg.algorithm.is_sparse() {
        Posterior::Sparse(SparseVariationalParams::new(base, vec![cfg.lambda_init; t]).expect("lengths agree"))
    } else {
        Posterior::Gaussian(base)
    }
}

/// Farthest-point choice of `k` clients by the distance between their means.
fn farthest_points(means: &[&[f64]], k: usize, seed: u64) -> Vec<usize> {
    let mut chosen = vec![rng::stream(seed, Purpose::ClusterSeeding, 0, 0).random_range(0..means.len())];
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    while chosen.len() < k.min(means.len()) {
        let next = (0..means.len())
            .map(|i| (i, chosen.iter().map(|&c| dist(means[i], means[c])).fold(f64::INFINITY, f64::min)))
            .fold((0, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
        chosen.push(next.0);
    }
    chosen
}

/// Final numbers of a run, as written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub final_window: usize,
    /// Maximum over the trailing window of the client-averaged accuracies.
    pub pm_final: Option<f64>,
    pub gm_final: Option<f64>,
    pub pm_last: Option<f64>,
    pub gm_last: Option<f64>,
    pub train_loss_last: f64,
    pub mean_lambda_global: Option<f64>,
    pub mean_lambda_personal: Option<f64>,
    pub sparsity_last: Option<f64>,
    pub cluster_assignments: Option<Vec<usize>>,
    pub cluster_truth: Option<Vec<usize>>,
    /// Fraction of clients whose cluster matches the truth up to relabeling.
    pub cluster_recovery: Option<f64>,
    /// Last round in which any client changed cluster.
    pub last_assignment_change: Option<usize>,
    /// Client-averaged test MSE of personal / global means (regression).
    pub pm_mse: Option<f64>,
    pub gm_mse: Option<f64>,
}

pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub final_state: Snapshot,
    pub summary: Summary,
}

/// Best agreement between `assigned` and `truth` over label permutations.
pub fn cluster_recovery(assigned: &[usize], truth: &[usize]) -> f64 {
    let k = assigned.iter().chain(truth).max().map_or(1, |m| m + 1);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    // Heap's algorithm; K is tiny in every benchmark.
    fn visit(perm: &mut Vec<usize>, n: usize, f: &mut dyn FnMut(&[usize])) {
        if n <= 1 {
            f(perm);
            return;
        }
        for i in 0..n {
            visit(perm, n - 1, f);
            let j = if n % 2 == 0 { i } else { 0 };
            perm.swap(j, n - 1);
        }
    }
    visit(&mut perm, k, &mut |p| {
        let hits = assigned.iter().zip(truth).filter(|(a, t)| p[**a] == **t).count();
        best = best.max(hits);
    });
    best as f64 / truth.len().max(1) as f64
}

enum Model {
    Bayes {
        server: ServerState,
        clients: Vec<ClientState>,
    },
    Point {
        global: Vec<f64>,
    },
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a PreparedData,
    train: Vec<Arc<LabeledDataset>>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl Runner<'_> {
    fn shape(&self) -> &NetworkShape {
        &self.data.shape
    }

    fn init(&self) -> Result<Model> {
        let cfg = self.cfg;
        let shape = self.shape();
        if cfg.algorithm == Algorithm::FedAvg {
            return Ok(Model::Point {
                global: initial_posterior(cfg, shape, 0).gaussian().mu.clone(),
            });
        }
        let v0 = initial_posterior(cfg, shape, 0);
        let mut clients = self
            .train
            .iter()
            .enumerate()
            .map(|(i, d)| ClientState::new(i, v0.clone(), d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let k = if cfg.algorithm == Algorithm::CFedBayes { cfg.clusters } else { 1 };
        let bank = if k == 1 {
            vec![v0]
        } else {
            match cfg.cluster_init {
                ClusterInit::Random => (0..k).map(|j| initial_posterior(cfg, shape, j)).collect(),
                ClusterInit::ClientSeeded => {
                    let mut warm = cfg.local();
                    warm.local_steps = cfg.cluster_warmup_steps.max(1);
                    clients
                        .par_iter_mut()
                        .map(|c| client_update(c, &v0, shape, &warm, usize::MAX).map(|_| ()))
                        .collect::<Result<Vec<()>>>()?;
                    let means: Vec<&[f64]> = clients.iter().map(|c| c.personal.gaussian().mu.as_slice()).collect();
                    farthest_points(&means, k, cfg.seed)
                        .into_iter()
                        .enumerate()
                        .map(|(j, i)| {
                            let mut p = initial_posterior(cfg, shape, j);
                            p.gaussian_mut().mu.clone_from(&clients[i].personal.gaussian().mu);
                            p
                        })
                        .collect()
                }
            }
        };
        Ok(Model::Bayes {
            server: ServerState::clustered(bank)?,
            clients,
        })
    }

    fn snapshot(&self, model: &Model, round: usize) -> Snapshot {
        let (bank, personal, point, cluster_ids) = match model {
            Model::Bayes { server, clients } => (
                server.bank.clone(),
                clients.iter().map(|c| c.personal.clone()).collect(),
                None,
                clients.iter().map(|c| c.cluster_id).collect(),
            ),
            Model::Point { global } => (Vec::new(), Vec::new(), Some(global.clone()), Vec::new()),
        };
        Snapshot {
            round,
            algorithm: self.cfg.algorithm,
            shape: self.shape().clone(),
            bank,
            personal,
            point,
            cluster_ids,
        }
    }

    /// One round: all clients train, the planned participants upload, the
    /// server aggregates. Returns per-client training losses.
    fn step(&self, model: &mut Model, round: usize) -> Result<(Vec<f64>, Option<f64>)> {
        let cfg = self.cfg;
        let shape = self.shape();
        let local = cfg.local();
        let plan = sample_participants(cfg.num_clients, cfg.participants, round, cfg.seed)?;
        match model {
            Model::Point { global } => {
                let outs = self
                    .train
                    .par_iter()
                    .enumerate()
                    .map(|(i, d)| fedavg_update(i, d, global, shape, &local, round))
                    .collect::<Result<Vec<_>>>()?;
                let losses = outs.iter().map(|(_, l)| *l).collect();
                let uploads: Vec<(usize, Vec<f64>)> =
                    plan.participants.iter().map(|&i| (i, outs[i].0.clone())).collect();
                *global = fedavg_aggregate(global, &uploads, &plan, cfg.beta)?;
                Ok((losses, None))
            }
            Model::Bayes { server, clients } => {
                let clustered = cfg.algorithm == Algorithm::CFedBayes;
                let outs: Vec<(usize, LocalOutcome)> = clients
                    .par_iter_mut()
                    .map(|c| {
                        if clustered {
                            client_update_cfedbayes(c, &server.bank, shape, &local, round)
                        } else {
                            client_update(c, server.global(), shape, &local, round).map(|o| (0, o))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let uploads: Vec<Upload> = plan
                    .participants
                    .iter()
                    .map(|&i| Upload::new(i, outs[i].0, outs[i].1.localized_global.clone(), cfg.tol))
                    .collect();
                let t = shape.num_params();
                let sparsity = cfg
                    .algorithm
                    .is_sparse()
                    .then(|| mean(uploads.iter().map(|u| u.transmitted_fraction(t))).unwrap_or(1.0));
                *server = if clustered {
                    aggregate_clusters(server, &uploads, cfg.beta)?
                } else {
                    aggregate(server, &uploads, &plan, cfg.beta)?
                };
                Ok((outs.iter().map(|(_, o)| o.train_loss).collect(), sparsity))
            }
        }
    }

    fn evaluation(&self, round: usize) -> Evaluation {
        match self.cfg.eval_mode {
            EvalMode::MeanWeights => Evaluation::MeanWeights,
            EvalMode::Sampled => Evaluation::Sampled {
                draws: self.cfg.eval_draws,
                seed: self.cfg.seed ^ (round as u64).rotate_left(17),
            },
        }
    }

    /// Per-client `(pm, gm)` accuracies, or `None` for regression tasks.
    fn accuracies(&self, model: &Model, round: usize) -> Result<Vec<(Option<f64>, Option<f64>)>> {
        if !matches!(self.shape().task(), Task::Classification { .. }) {
            return Ok(vec![(None, None); self.data.clients.len()]);
        }
        let shape = self.shape();
        let mode = self.evaluation(round);
        self.data
            .clients
            .par_iter()
            .enumerate()
            .map(|(i, split)| match model {
                Model::Point { global } => Ok((None, Some(accuracy_point(global, shape, &split.test)?))),
                Model::Bayes { server, clients } => {
                    let c = &clients[i];
                    let g = &server.bank[c.cluster_id.unwrap_or(0)];
                    Ok((
                        Some(evaluate(&c.personal, shape, &split.test, mode)?),
                        Some(evaluate(g, shape, &split.test, mode)?),
                    ))
                }
            })
            .collect()
    }

    fn summary(&self, model: &Model, metrics: &[RoundMetrics]) -> Result<Summary> {
        let cfg = self.cfg;
        let window = cfg.final_window();
        let pm: Vec<(usize, Option<f64>)> = metrics.iter().map(|m| (m.round, m.pm_acc)).collect();
        let gm: Vec<(usize, Option<f64>)> = metrics.iter().map(|m| (m.round, m.gm_acc)).collect();
        let last = metrics.last().expect("at least one round");
        let (mut s, mut p) = (None, None);
        let (mut pm_mse, mut gm_mse) = (None, None);
        let mut assignments = None;
        if let Model::Bayes { server, clients } = model {
            s = server.global().lambda().map(|l| l.iter().sum::<f64>() / l.len() as f64);
            p = mean(clients.iter().filter_map(|c| c.personal.lambda()).map(|l| l.iter().sum::<f64>() / l.len() as f64));
            if cfg.algorithm == Algorithm::CFedBayes {
                assignments = Some(clients.iter().map(|c| c.cluster_id.unwrap_or(0)).collect::<Vec<_>>());
            }
            if matches!(self.shape().task(), Task::Regression { .. }) {
                let per: Vec<(f64, f64)> = clients
                    .iter()
                    .zip(&self.data.clients)
                    .map(|(c, split)| {
                        let gw = server.bank[c.cluster_id.unwrap_or(0)].mean_weights();
                        Ok((mse_point(&c.personal.mean_weights(), self.shape(), &split.test)?, mse_point(&gw, self.shape(), &split.test)?))
                    })
                    .collect::<Result<_>>()?;
                pm_mse = mean(per.iter().map(|x| x.0));
                gm_mse = mean(per.iter().map(|x| x.1));
            }
        }
        let last_change = assignments.as_ref().map(|_| {
            let mut change = 0;
            for w in metrics.windows(2) {
                if w[0].cluster_assignments != w[1].cluster_assignments {
                    change = w[1].round;
                }
            }
            change
        });
        Ok(Summary {
            algorithm: cfg.algorithm,
            rounds: cfg.rounds,
            final_window: window,
            pm_final: final_score(&pm, cfg.rounds, window),
            gm_final: final_score(&gm, cfg.rounds, window),
            pm_last: last.pm_acc,
            gm_last: last.gm_acc,
            train_loss_last: last.train_loss,
            mean_lambda_global: s,
            mean_lambda_personal: p,
            sparsity_last: last.sparsity,
            cluster_recovery: match (&assignments, &self.data.truth) {
                (Some(a), Some(t)) => Some(cluster_recovery(a, t)),
                _ => None,
            },
            cluster_assignments: assignments,
            cluster_truth: self.data.truth.clone(),
            last_assignment_change: last_change,
            pm_mse,
            gm_mse,
        })
    }
}

/// Runs every round of `cfg` on `data`. When `out_dir` is given, the metric
/// stream and the requested snapshots are written there as they happen.
pub fn run_experiment(cfg: &ExperimentConfig, data: &PreparedData, out_dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    if data.clients.len() != cfg.num_clients {
        return Err(Error::Config(format!(
            "{} client splits for num_clients = {}",
            data.clients.len(),
            cfg.num_clients
        )));
    }
    let runner = Runner {
        cfg,
        data,
        train: data.clients.iter().map(|c| Arc::new(c.train.clone())).collect(),
    };
    let mut writer = match out_dir {
        Some(dir) => {
            let p = dir.join("metrics.csv");
            Some(MetricsWriter::new(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))?)
        }
        None => None,
    };
    let snap_dir = out_dir.map(|d| d.join("snapshots"));
    if let (Some(d), false) = (&snap_dir, cfg.snapshot_rounds.is_empty()) {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let save = |model: &Model, r: usize| -> Result<()> {
        if let (Some(d), true) = (&snap_dir, cfg.snapshot_rounds.contains(&r)) {
            runner.snapshot(model, r).save(&d.join(format!("round_{r}.bin")))?;
        }
        Ok(())
    };

    let start = Instant::now();
    let mut model = runner.init()?;
    save(&model, 0)?;
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let round = t + 1;
        let (losses, sparsity) = runner.step(&mut model, t)?;
        let evaluate_now = round % cfg.eval_every == 0 || round == cfg.rounds;
        let acc = if evaluate_now {
            runner.accuracies(&model, round)?
        } else {
            vec![(None, None); losses.len()]
        };
        let cluster_ids: Vec<Option<usize>> = match &model {
            Model::Bayes { clients, .. } => clients.iter().map(|c| c.cluster_id).collect(),
            Model::Point { .. } => vec![None; losses.len()],
        };
        let m = RoundMetrics {
            round,
            pm_acc: mean(acc.iter().filter_map(|a| a.0)),
            gm_acc: mean(acc.iter().filter_map(|a| a.1)),
            train_loss: mean(losses.iter().copied()).unwrap_or(f64::NAN),
            sparsity,
            cluster_assignments: (cfg.algorithm == Algorithm::CFedBayes)
                .then(|| cluster_ids.iter().map(|c| c.unwrap_or(0)).collect()),
            wall_time_s: cfg.record_wall_time.then(|| start.elapsed().as_secs_f64()),
            clients: if cfg.per_client_metrics {
                (0..losses.len())
                    .map(|i| ClientMetrics {
                        client_id: i,
                        pm_acc: acc[i].0,
                        gm_acc: acc[i].1,
                        train_loss: losses[i],
                        cluster_id: cluster_ids[i],
                    })
                    .collect()
            } else {
                Vec::new()
            },
        };
        if let Some(w) = writer.as_mut() {
            w.write(&m)?;
        }
        metrics.push(m);
        save(&model, round)?;
    }
    let summary = runner.summary(&model, &metrics)?;
    Ok(RunOutput {
        final_state: runner.snapshot(&model, cfg.rounds),
        metrics,
        summary,
    })
}

/// Full run into `cfg.out_dir`: effective config, metrics, final state, summary.
pub fn run_to_dir(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("config.effective.toml");
    fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
    let out = run_experiment(cfg, &data, Some(dir))?;
    out.final_state.save(&dir.join("final_state.bin"))?;
    let p = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.summary).expect("summary serializes");
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(out.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyRow {
    pub round: usize,
    pub client_id: usize,
    pub mean_entropy: f64,
}

fn snapshot_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let snap = dir.join("snapshots");
    let mut files: Vec<(usize, PathBuf)> = fs::read_dir(&snap)
        .map_err(|e| Error::io(&snap, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let r = name.strip_prefix("round_")?.strip_suffix(".bin")?.parse().ok()?;
            Some((r, e.path()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Mean predictive entropy of sampled clients' personal posteriors on their
/// held-out data, for every snapshot saved in `run_dir`.
pub fn uncertainty(run_dir: &Path) -> Result<Vec<EntropyRow>> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.effective.toml"), &[])?;
    let data = prepare_data(&cfg)?;
    let files = snapshot_files(run_dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("{} has no snapshots", run_dir.display())));
    }
    let n = data.clients.len();
    let mut picked = index::sample(&mut rng::stream(cfg.seed, Purpose::Predictive, 1, 0), n, cfg.uncertainty_clients.min(n)).into_vec();
    picked.sort_unstable();
    let mut rows = Vec::new();
    for (round, path) in files {
        let snap = Snapshot::load(&path)?;
        for &i in &picked {
            let v = snap
                .personal
                .get(i)
                .ok_or_else(|| Error::Config("snapshot holds no personal posteriors".into()))?;
            let (_, h) = predictive(v, &snap.shape, &data.clients[i].test.inputs, cfg.uncertainty_draws, cfg.seed)?;
            rows.push(EntropyRow {
                round,
                client_id: i,
                mean_entropy: h.iter().sum::<f64>() / h.len() as f64,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_is_permutation_invariant() {
        assert_eq!(cluster_recovery(&[1, 1, 0, 0], &[0, 0, 1, 1]), 1.0);
        assert_eq!(cluster_recovery(&[0, 0, 0, 0], &[0, 0, 1, 1]), 0.5);
        assert_eq!(cluster_recovery(&[2, 0, 1], &[0, 1, 2]), 1.0);
    }

    #[test]
    fn farthest_points_spread_out() {
        let pts = [vec![0.0], vec![0.1], vec![10.0], vec![5.0]];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let c = farthest_points(&refs, 2, 1);
        assert_eq!(c.len(), 2);
        assert_ne!(c[0], c[1]);
        assert!(c.contains(&2) || c.contains(&0) || c.contains(&1));
    }
}
