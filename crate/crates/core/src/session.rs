//! The interactive loop: propose a display, receive oracle labels, credit the
//! action that produced the display, retrain, evaluate, propose again.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_pool, KMeansParams, Partition};
use crate::config::{RunConfig, Strategy};
use crate::error::{Error, Result};
use crate::policy::{
    compute_reward, decode_action, encode_action, Combo, QTable, SizeLadder, NUM_ACTIONS,
};
use crate::pool::{sampling_rate, Budget, ItemId, Label, LabeledSet, Pool};
use crate::scorer::{
    build_f, error_rate, pool_eer, score_batch, Classifier, LogisticRegression, Scorer,
};
use crate::selector::{
    maxmin_display, random_display, select_display, solve_relevance, uncertainty_display,
    SolverTrace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub name: String,
    pub digest: String,
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positives: Option<usize>,
}

impl PoolSummary {
    pub fn of(pool: &Pool) -> Self {
        Self {
            name: pool.provenance().name.clone(),
            digest: pool.digest(),
            size: pool.len(),
            positives: pool.has_truths().then(|| pool.class_counts().1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub config: RunConfig,
    pub train_pool: PoolSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_pool: Option<PoolSummary>,
    pub budget: usize,
    /// Test EER of a classifier trained on the whole labeled training pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_supervision_eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Completed label submissions, counting this one.
    pub iteration: usize,
    pub strategy: String,
    /// RL action that produced this display; absent for the random first one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combo: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_move: Option<i8>,
    pub display_ids: Vec<ItemId>,
    pub display_size: usize,
    pub labels: Vec<Label>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    /// Error of the pre-update classifier on this display.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_rate_on_display: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_eer: Option<f64>,
    pub labels_used: usize,
    pub samp_pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Run(RunHeader),
    Iteration(IterationRecord),
}

/// Append-only record of a session; serialised as JSON lines, header first.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<IterationRecord>,
}

impl RunLog {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = |v: &LogLine| -> Result<()> {
            serde_json::to_writer(&mut out, v)?;
            out.write_all(b"\n").map_err(|e| Error::io("<runlog>", e))
        };
        line(&LogLine::Run(self.header.clone()))?;
        for r in &self.records {
            line(&LogLine::Iteration(r.clone()))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::io("<runlog>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                LogLine::Run(h) => header = Some(h),
                LogLine::Iteration(r) => records.push(r),
            }
        }
        let header = header.ok_or_else(|| Error::param("run log has no header line"))?;
        Ok(Self { header, records })
    }

    pub fn final_eer(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.test_eer)
    }
}

/// Something that labels displays.
pub trait Oracle {
    fn label(&mut self, ids: &[ItemId]) -> Result<BTreeMap<ItemId, Label>>;
}

/// Answers from the pool's ground truth.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedOracle<'a> {
    pool: &'a Pool,
}

impl<'a> SimulatedOracle<'a> {
    pub fn new(pool: &'a Pool) -> Self {
        Self { pool }
    }
}

impl Oracle for SimulatedOracle<'_> {
    fn label(&mut self, ids: &[ItemId]) -> Result<BTreeMap<ItemId, Label>> {
        ids.iter()
            .map(|&id| {
                let item = self.pool.get(id)?;
                item.truth.map(|t| (id, t)).ok_or(Error::MissingTruth(id))
            })
            .collect()
    }
}

/// Sends each display out over a channel and blocks until the labels come
/// back; the other end is typically a person behind a UI.
#[derive(Debug)]
pub struct ChannelOracle {
    pub requests: Sender<Vec<ItemId>>,
    pub responses: Receiver<BTreeMap<ItemId, Label>>,
}

impl Oracle for ChannelOracle {
    fn label(&mut self, ids: &[ItemId]) -> Result<BTreeMap<ItemId, Label>> {
        if ids.is_empty() {
            return Ok(BTreeMap::new());
        }
        self.requests
            .send(ids.to_vec())
            .map_err(|_| Error::param("oracle channel closed"))?;
        self.responses
            .recv()
            .map_err(|_| Error::param("oracle channel closed"))
    }
}

pub fn oracle_label(oracle: &mut dyn Oracle, ids: &[ItemId]) -> Result<BTreeMap<ItemId, Label>> {
    oracle.label(ids)
}

/// Read-only view of a session for status endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub iteration: usize,
    pub samp_pct: f64,
    pub labels_used: usize,
    pub budget: usize,
    pub eer_history: Vec<Option<f64>>,
    pub q_values: Option<Vec<f64>>,
    pub current_display: Vec<ItemId>,
    pub ladder: SizeLadder,
    pub done: bool,
}

#[derive(Debug)]
pub struct Session {
    config: RunConfig,
    train: Arc<Pool>,
    test: Option<Arc<Pool>>,
    labeled: LabeledSet,
    partition: Partition,
    classifier: Arc<dyn Classifier>,
    scorer: Option<Arc<dyn Scorer>>,
    qtable: QTable,
    ladder: SizeLadder,
    budget: Budget,
    pending: Vec<ItemId>,
    pending_action: Option<usize>,
    pending_trace: Option<SolverTrace>,
    iteration: usize,
    rng: ChaCha8Rng,
    log: RunLog,
}

impl Session {
    /// Clusters the training pool and draws the random first display.
    pub fn new(
        train: Arc<Pool>,
        test: Option<Arc<Pool>>,
        config: &RunConfig,
        seed: u64,
    ) -> Result<Self> {
        let classifier = Arc::new(LogisticRegression(config.classifier));
        Self::with_classifier(train, test, config, seed, classifier)
    }

    pub fn with_classifier(
        train: Arc<Pool>,
        test: Option<Arc<Pool>>,
        config: &RunConfig,
        seed: u64,
        classifier: Arc<dyn Classifier>,
    ) -> Result<Self> {
        let mut config = config.clone();
        config.seed = seed;
        config.validate()?;
        if let Some(test) = &test {
            if test.dim() != train.dim() {
                return Err(Error::Shape(format!(
                    "train pool has dimension {}, test pool {}",
                    train.dim(),
                    test.dim()
                )));
            }
        }
        let budget_labels = config.budget_labels(train.len())?;
        if budget_labels > train.len() {
            return Err(Error::param(format!(
                "budget {budget_labels} exceeds the {} training items",
                train.len()
            )));
        }
        let budget = Budget::new(budget_labels)?;
        let initial = config.display_size;
        if budget_labels < initial {
            return Err(Error::BudgetTooSmall {
                budget: budget_labels,
                initial,
            });
        }
        let ladder = if config.strategy == Strategy::RlAdaptive {
            SizeLadder::new(initial, &config.rl.ladder)?
        } else {
            SizeLadder {
                current: initial,
                min_size: initial,
                max_size: initial.max(config.rl.ladder.max),
                step: config.rl.ladder.step.max(1),
            }
        };
        let kmeans = KMeansParams {
            k: config.kmeans.k.min(train.len()),
            ..config.kmeans
        };
        let partition = kmeans_pool(&train, &kmeans, seed)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pending = random_display(&train.ids(), initial, &mut rng)?;
        let header = RunHeader {
            seed,
            config: config.clone(),
            train_pool: PoolSummary::of(&train),
            test_pool: test.as_deref().map(PoolSummary::of),
            budget: budget_labels,
            full_supervision_eer: None,
        };
        Ok(Self {
            qtable: QTable::new(&config.rl),
            config,
            train,
            test,
            labeled: LabeledSet::new(),
            partition,
            classifier,
            scorer: None,
            ladder,
            budget,
            pending,
            pending_action: None,
            pending_trace: None,
            iteration: 0,
            rng,
            log: RunLog {
                header,
                records: Vec::new(),
            },
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn train_pool(&self) -> &Arc<Pool> {
        &self.train
    }

    pub fn test_pool(&self) -> Option<&Arc<Pool>> {
        self.test.as_ref()
    }

    pub fn pending_display(&self) -> &[ItemId] {
        &self.pending
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn labeled(&self) -> &LabeledSet {
        &self.labeled
    }

    pub fn qtable(&self) -> &QTable {
        &self.qtable
    }

    pub fn ladder(&self) -> &SizeLadder {
        &self.ladder
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn scorer(&self) -> Option<&Arc<dyn Scorer>> {
        self.scorer.as_ref()
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    pub fn set_full_supervision_eer(&mut self, eer: Option<f64>) {
        self.log.header.full_supervision_eer = eer;
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn samp_pct(&self) -> f64 {
        sampling_rate(&[self.budget.used()], self.train.len())
            .map(|r| r.reported())
            .unwrap_or(0.0)
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus {
            iteration: self.iteration,
            samp_pct: self.samp_pct(),
            labels_used: self.budget.used(),
            budget: self.budget.max_labels(),
            eer_history: self.log.records.iter().map(|r| r.test_eer).collect(),
            q_values: self.config.strategy.is_rl().then(|| self.qtable.q.clone()),
            current_display: self.pending.clone(),
            ladder: self.ladder,
            done: self.is_done(),
        }
    }

    /// Consumes the oracle's labels for the pending display and proposes the
    /// next one. The display becomes empty once the budget is spent.
    pub fn submit_labels(&mut self, labels: &BTreeMap<ItemId, Label>) -> Result<&IterationRecord> {
        if self.is_done() {
            return Err(Error::SessionComplete);
        }
        let missing: Vec<ItemId> = self
            .pending
            .iter()
            .copied()
            .filter(|id| !labels.contains_key(id))
            .collect();
        let mut extra: Vec<ItemId> = labels
            .keys()
            .copied()
            .filter(|id| !self.pending.contains(id))
            .collect();
        extra.sort_unstable();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::LabelMismatch { missing, extra });
        }
        if let Some((&id, &l)) = labels.iter().find(|(_, &l)| l > 1) {
            return Err(Error::param(format!(
                "label for {id} must be 0 or 1, got {l}"
            )));
        }
        let started = Instant::now();
        let display: Vec<(ItemId, Label)> =
            self.pending.iter().map(|&id| (id, labels[&id])).collect();
        let display_size = display.len();

        let error_on_display = match &self.scorer {
            Some(s) => Some(error_rate(s.as_ref(), &self.train, &display)?),
            None => None,
        };
        let action = self.pending_action.take();
        let mut reward = None;
        if let (Some(a), Some(err)) = (action, error_on_display) {
            let r = compute_reward(err, display_size, &self.ladder, self.config.rl.omega)?;
            self.qtable.update(a, r)?;
            reward = Some(r);
        }

        self.budget.debit(display_size)?;
        for &(id, label) in &display {
            self.labeled.insert(id, label, self.iteration)?;
        }
        let scorer = self.classifier.fit(&self.labeled, &self.train)?;
        let test_eer = self
            .test
            .as_deref()
            .and_then(|t| pool_eer(scorer.as_ref(), t));
        self.scorer = Some(scorer);
        self.iteration += 1;

        let solver = self.pending_trace.take();
        self.pending.clear();
        self.propose()?;

        let decoded = action.map(decode_action).transpose()?;
        let rl = self.config.strategy.is_rl();
        let record = IterationRecord {
            iteration: self.iteration,
            strategy: self.config.strategy.to_string(),
            action,
            combo: decoded.map(|a| a.combo.name().to_string()),
            size_move: decoded.map(|a| a.size_move),
            display_ids: display.iter().map(|d| d.0).collect(),
            display_size,
            labels: display.iter().map(|d| d.1).collect(),
            reward,
            error_rate_on_display: error_on_display,
            test_eer,
            labels_used: self.budget.used(),
            samp_pct: self.samp_pct(),
            q: rl.then(|| self.qtable.q.clone()),
            epsilon: rl.then_some(self.qtable.epsilon),
            solver,
            wall_ms: self
                .config
                .log_wall_time
                .then(|| started.elapsed().as_secs_f64() * 1e3),
        };
        self.log.records.push(record);
        Ok(self.log.records.last().expect("just pushed"))
    }

    fn propose(&mut self) -> Result<()> {
        let candidates: Vec<ItemId> = self
            .train
            .ids()
            .into_iter()
            .filter(|id| !self.labeled.contains(*id))
            .collect();
        let room = self.budget.remaining().min(candidates.len());
        if room == 0 {
            return Ok(());
        }
        let scorer = self.scorer.clone().expect("proposals follow training");

        let mut size = self.config.display_size;
        let combo = match self.config.strategy {
            Strategy::RlAdaptive => {
                let all: Vec<usize> = (0..NUM_ACTIONS).collect();
                let a = decode_action(self.qtable.choose_among(&all, &mut self.rng))?;
                self.ladder = self.ladder.apply(a.size_move);
                size = self.ladder.current;
                self.pending_action = Some(a.index);
                Some(a.combo)
            }
            Strategy::RlFixedSize => {
                let frozen: Vec<usize> = Combo::ALL.iter().map(|&c| encode_action(c, 0)).collect();
                let a = decode_action(self.qtable.choose_among(&frozen, &mut self.rng))?;
                self.pending_action = Some(a.index);
                Some(a.combo)
            }
            Strategy::Fixed(c) => Some(c),
            _ => None,
        };
        let size = size.min(room);

        self.pending = match (self.config.strategy, combo) {
            (_, Some(combo)) => {
                let restricted = self.partition.restrict(candidates.iter().copied())?;
                let scores = score_batch(scorer.as_ref(), candidates.iter().copied(), &self.train)?;
                let f = build_f(&scores.normalized)?;
                let (mu, trace) =
                    solve_relevance(&restricted, &f, &combo.weights(), &self.config.solver)?;
                self.pending_trace = Some(trace);
                select_display(&mu, size)?
            }
            (Strategy::Random, None) => random_display(&candidates, size, &mut self.rng)?,
            (Strategy::MaxMin, None) => {
                let labeled: Vec<ItemId> = self.labeled.ids().iter().copied().collect();
                maxmin_display(&candidates, &labeled, size, &self.train)?
            }
            (Strategy::Uncertainty, None) => {
                let scores = score_batch(scorer.as_ref(), candidates.iter().copied(), &self.train)?;
                uncertainty_display(&scores.ids, &scores.normalized, size)?
            }
            (s, None) => unreachable!("strategy {s} always yields a combination"),
        };
        Ok(())
    }
}

pub fn init_session(
    train: Arc<Pool>,
    test: Option<Arc<Pool>>,
    config: &RunConfig,
    seed: u64,
) -> Result<Session> {
    Session::new(train, test, config, seed)
}

pub fn submit_labels<'s>(
    session: &'s mut Session,
    labels: &BTreeMap<ItemId, Label>,
) -> Result<&'s IterationRecord> {
    session.submit_labels(labels)
}

/// Runs a session to budget exhaustion against `oracle`.
pub fn drive(session: &mut Session, oracle: &mut dyn Oracle) -> Result<()> {
    while !session.is_done() {
        let labels = oracle.label(session.pending_display())?;
        session.submit_labels(&labels)?;
    }
    Ok(())
}

/// Test EER of a classifier trained on every labeled training item.
pub fn full_supervision_eer(train: &Pool, test: &Pool, config: &RunConfig) -> Result<Option<f64>> {
    let mut all = LabeledSet::new();
    for it in train.items() {
        let t = it.truth.ok_or(Error::MissingTruth(it.id))?;
        all.insert(it.id, t, 0)?;
    }
    let scorer = LogisticRegression(config.classifier).fit(&all, train)?;
    Ok(pool_eer(scorer.as_ref(), test))
}

/// A full simulated run: ground-truth oracle until the budget is spent.
pub fn run_simulated(train: &Pool, test: &Pool, config: &RunConfig, seed: u64) -> Result<RunLog> {
    if let Some(it) = train.items().iter().find(|it| it.truth.is_none()) {
        return Err(Error::MissingTruth(it.id));
    }
    let (neg, pos) = train.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass);
    }
    let train_arc = Arc::new(train.clone());
    let mut session = Session::new(train_arc, Some(Arc::new(test.clone())), config, seed)?;
    let reference = if test.has_truths() {
        full_supervision_eer(train, test, config)?
    } else {
        None
    };
    session.set_full_supervision_eer(reference);
    drive(&mut session, &mut SimulatedOracle::new(train))?;
    Ok(session.into_log())
}
