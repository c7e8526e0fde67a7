//! Pipelined execution: per stage a feeder (source/forwarding thread), a
//! worker (the enclave), and for sink stages a collector. Stages talk only
//! through encrypted ring buffers.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::crypto::{Ciphertext, Key128, Opener, Sealer};
use super::operator::Operator;
use super::pipeline::{build_chain, run_chain, Inbound, PipelineSpec, Plan, StageId};
use super::record::EventRecord;
use super::ring::{Consumer, Full, Producer, RingBuffer, TailProbe};
use super::EngineError;
use crate::observer::{CostModel, CycleCounter, MonotonicCounter, TailSample};

pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// One OS thread per actor, real clock.
    Threaded,
    /// All actors stepped round-robin on the caller's thread with simulated
    /// per-stage clocks driven by a cost model.
    #[default]
    Deterministic,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub mode: ExecMode,
    pub capacity: usize,
    pub key: Key128,
    /// Threaded mode aborts if no actor makes progress for this long.
    pub stall_timeout: Duration,
    /// Deterministic mode: per-record costs.
    pub cost_model: CostModel,
    pub seed: u64,
    /// Threaded mode: rate used to express padding budgets in wall time.
    pub cycles_per_ns: f64,
    /// Threaded mode: workers yield after every record so an observer
    /// sharing their core gets to run. On by default on machines with few cores.
    pub cooperative: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: ExecMode::Deterministic,
            capacity: DEFAULT_CAPACITY,
            key: Key128::default(),
            stall_timeout: Duration::from_secs(10),
            cost_model: CostModel::default(),
            seed: 0,
            cycles_per_ns: 2.4,
            cooperative: thread::available_parallelism().map_or(true, |n| n.get() < 4),
        }
    }
}

#[derive(Debug)]
enum Envelope {
    Data { port: u8, ct: Ciphertext },
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Progress {
    Moved,
    Idle,
    Done,
}

trait Actor: Send {
    fn step(&mut self) -> Result<Progress, EngineError>;
}

enum FeedInput {
    Source { records: Arc<Vec<EventRecord>>, pos: usize, sealer: Sealer },
    Edge(Consumer<Envelope>),
}

struct Feeder {
    inputs: Vec<FeedInput>,
    live: Vec<bool>,
    out: Producer<Envelope>,
    pending: Option<Envelope>,
    next: usize,
    end_sent: bool,
}

impl Feeder {
    fn fetch(&mut self, port: usize) -> Option<Envelope> {
        match &mut self.inputs[port] {
            FeedInput::Source { records, pos, sealer } => {
                if *pos < records.len() {
                    let ct = sealer.seal(&records[*pos]);
                    *pos += 1;
                    Some(Envelope::Data { port: port as u8, ct })
                } else {
                    self.live[port] = false;
                    None
                }
            }
            FeedInput::Edge(c) => match c.pop() {
                Some(Envelope::Data { ct, .. }) => Some(Envelope::Data { port: port as u8, ct }),
                Some(Envelope::End) => {
                    self.live[port] = false;
                    None
                }
                None => None,
            },
        }
    }
}

impl Actor for Feeder {
    fn step(&mut self) -> Result<Progress, EngineError> {
        if let Some(env) = self.pending.take() {
            return Ok(match self.out.push(env) {
                Ok(()) => Progress::Moved,
                Err(Full(env)) => {
                    self.pending = Some(env);
                    Progress::Idle
                }
            });
        }
        if self.live.iter().all(|l| !l) {
            if self.end_sent {
                return Ok(Progress::Done);
            }
            self.end_sent = true;
            self.pending = Some(Envelope::End);
            return self.step().map(|_| Progress::Moved);
        }
        let n = self.inputs.len();
        let mut moved = false;
        for k in 0..n {
            let port = (self.next + k) % n;
            if !self.live[port] {
                continue;
            }
            let was_live = self.live[port];
            if let Some(env) = self.fetch(port) {
                self.next = port + 1;
                if let Err(Full(env)) = self.out.push(env) {
                    self.pending = Some(env);
                }
                return Ok(Progress::Moved);
            }
            moved |= was_live && !self.live[port];
        }
        Ok(if moved { Progress::Moved } else { Progress::Idle })
    }
}

enum Timing {
    Virtual { clock: u64, model: CostModel, rng: ChaCha8Rng, log: Vec<TailSample> },
    Real { counter: MonotonicCounter, cooperative: bool },
}

struct Worker {
    id: StageId,
    input: Consumer<Envelope>,
    probe: TailProbe,
    opener: Opener,
    sealer: Sealer,
    chain: Vec<Operator>,
    open_ports: usize,
    outs: Vec<Producer<Envelope>>,
    queue: VecDeque<(usize, Envelope)>,
    batch: usize,
    held: Vec<(usize, Ciphertext)>,
    pad: Option<u64>,
    timing: Timing,
    end_queued: bool,
    consumed: Arc<AtomicU64>,
    finished: Arc<AtomicBool>,
    works: Vec<(usize, super::operator::Work)>,
}

impl Worker {
    fn flush(&mut self) -> (bool, bool) {
        let mut pushed = false;
        while let Some((o, env)) = self.queue.pop_front() {
            match self.outs[o].push(env) {
                Ok(()) => pushed = true,
                Err(Full(env)) => {
                    self.queue.push_front((o, env));
                    return (pushed, false);
                }
            }
        }
        (pushed, true)
    }

    fn process_held(&mut self) -> Result<(), EngineError> {
        let held = std::mem::take(&mut self.held);
        let mut batch_cost = 0u64;
        for (port, ct) in held {
            let started = match &self.timing {
                Timing::Real { counter, .. } => counter.now(),
                Timing::Virtual { .. } => 0,
            };
            let rec = self.opener.open(&ct).map_err(|e| EngineError::Crypto { stage: self.id, source: e })?;
            self.works.clear();
            let outputs = run_chain(&mut self.chain, port, rec, &mut self.works)
                .map_err(|e| EngineError::Operator { stage: self.id, source: e })?;
            for out in &outputs {
                let ct = self.sealer.seal(out);
                for o in 0..self.outs.len() {
                    self.queue.push_back((o, Envelope::Data { port: 0, ct: ct.clone() }));
                }
            }
            match &mut self.timing {
                Timing::Virtual { model, rng, .. } => {
                    let mut cost = model.io_cost(ct.body.len() as f64);
                    for (pos, work) in &self.works {
                        cost += model.work_cost(self.chain[*pos].spec(), *work, rng);
                    }
                    let cost = CostModel::finish(cost);
                    batch_cost += self.pad.map_or(cost, |p| cost.max(p));
                }
                Timing::Real { counter, .. } => {
                    if let Some(p) = self.pad {
                        let deadline = started + p;
                        while counter.now() < deadline {
                            std::hint::spin_loop();
                        }
                    }
                }
            }
        }
        match &mut self.timing {
            Timing::Virtual { clock, .. } => *clock += batch_cost,
            Timing::Real { cooperative: true, .. } => thread::yield_now(),
            Timing::Real { .. } => {}
        }
        Ok(())
    }
}

impl Actor for Worker {
    fn step(&mut self) -> Result<Progress, EngineError> {
        let (pushed, drained) = self.flush();
        if !drained {
            return Ok(if pushed { Progress::Moved } else { Progress::Idle });
        }
        if self.end_queued {
            self.finished.store(true, Ordering::Release);
            return Ok(Progress::Done);
        }
        let mut popped = false;
        while self.held.len() < self.batch && self.open_ports > 0 {
            match self.input.pop() {
                Some(Envelope::Data { port, ct }) => {
                    popped = true;
                    self.consumed.fetch_add(1, Ordering::Relaxed);
                    if let Timing::Virtual { clock, log, .. } = &mut self.timing {
                        log.push(TailSample { tail: self.probe.tail(), at: *clock });
                    }
                    self.held.push((port as usize, ct));
                }
                Some(Envelope::End) => {
                    popped = true;
                    self.open_ports -= 1;
                }
                None => break,
            }
        }
        if !self.held.is_empty() && (self.held.len() == self.batch || self.open_ports == 0) {
            self.process_held()?;
            return Ok(Progress::Moved);
        }
        if self.open_ports == 0 && self.held.is_empty() {
            for o in 0..self.outs.len() {
                self.queue.push_back((o, Envelope::End));
            }
            self.end_queued = true;
            return Ok(Progress::Moved);
        }
        Ok(if popped || pushed { Progress::Moved } else { Progress::Idle })
    }
}

struct Collector {
    stage: StageId,
    input: Consumer<Envelope>,
    opener: Opener,
    records: Arc<Mutex<Vec<EventRecord>>>,
    done: bool,
}

impl Actor for Collector {
    fn step(&mut self) -> Result<Progress, EngineError> {
        if self.done {
            return Ok(Progress::Done);
        }
        let mut moved = false;
        while let Some(env) = self.input.pop() {
            moved = true;
            match env {
                Envelope::Data { ct, .. } => {
                    let rec =
                        self.opener.open(&ct).map_err(|e| EngineError::Crypto { stage: self.stage, source: e })?;
                    self.records.lock().expect("collector lock").push(rec);
                }
                Envelope::End => {
                    self.done = true;
                    break;
                }
            }
        }
        Ok(if moved { Progress::Moved } else { Progress::Idle })
    }
}

/// Final state of a finished run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub sinks: BTreeMap<StageId, Vec<EventRecord>>,
    /// Records each stage's worker ingested.
    pub consumed: BTreeMap<StageId, u64>,
    /// Deterministic mode only: tail position and simulated clock at every pop.
    pub tail_logs: BTreeMap<StageId, Vec<TailSample>>,
}

struct Control {
    abort: AtomicBool,
    error: Mutex<Option<EngineError>>,
    origin: Instant,
    last_progress: AtomicU64,
    gate: (Mutex<bool>, Condvar),
}

impl Control {
    fn fail(&self, e: EngineError) {
        let mut slot = self.error.lock().expect("control lock");
        if slot.is_none() {
            *slot = Some(e);
        }
        self.abort.store(true, Ordering::Release);
    }

    fn touch(&self) {
        self.last_progress.store(self.origin.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }

    fn stalled(&self, timeout: Duration) -> bool {
        let now = self.origin.elapsed().as_nanos() as u64;
        now.saturating_sub(self.last_progress.load(Ordering::Relaxed)) > timeout.as_nanos() as u64
    }

    fn open_gate(&self) {
        let (lock, cv) = &self.gate;
        let mut open = lock.lock().expect("gate lock");
        if !*open {
            *open = true;
            self.touch();
            cv.notify_all();
        }
    }

    fn wait_gate(&self) {
        let (lock, cv) = &self.gate;
        let mut open = lock.lock().expect("gate lock");
        while !*open {
            open = cv.wait(open).expect("gate lock");
        }
    }
}

enum Exec {
    Finished(Result<RunOutput, EngineError>),
    Running { ctl: Arc<Control>, threads: Vec<JoinHandle<()>> },
}

/// Handle on a pipeline run. Exposes every stage's input buffer for observation.
pub struct RunHandle {
    spec: PipelineSpec,
    plan: Plan,
    probes: Vec<TailProbe>,
    finished: Vec<Arc<AtomicBool>>,
    consumed: Vec<Arc<AtomicU64>>,
    sinks: Vec<(StageId, Arc<Mutex<Vec<EventRecord>>>)>,
    exec: Exec,
}

impl RunHandle {
    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    pub fn stage_count(&self) -> usize {
        self.plan.ids.len()
    }

    pub fn stage_ids(&self) -> &[StageId] {
        &self.plan.ids
    }

    /// Observation surface: the stage's in-shared buffer.
    pub fn in_buffer(&self, stage: StageId) -> Option<&TailProbe> {
        self.plan.index.get(&stage).map(|&i| &self.probes[i])
    }

    pub fn stage_finished(&self, stage: StageId) -> bool {
        self.plan.index.get(&stage).is_none_or(|&i| self.finished[i].load(Ordering::Acquire))
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.exec, Exec::Finished(_))
    }

    /// Recorded pops of a stage (deterministic runs only).
    pub fn tail_log(&self, stage: StageId) -> Option<&[TailSample]> {
        match &self.exec {
            Exec::Finished(Ok(out)) => out.tail_logs.get(&stage).map(Vec::as_slice),
            _ => None,
        }
    }

    /// Releases a threaded run. Runs start paused so observers can attach first.
    pub fn start(&self) {
        if let Exec::Running { ctl, .. } = &self.exec {
            ctl.open_gate();
        }
    }

    pub fn wait(self) -> Result<RunOutput, EngineError> {
        match self.exec {
            Exec::Finished(r) => r,
            Exec::Running { ctl, threads } => {
                ctl.open_gate();
                for t in threads {
                    t.join().map_err(|_| EngineError::WorkerPanic)?;
                }
                if let Some(e) = ctl.error.lock().expect("control lock").take() {
                    return Err(e);
                }
                let consumed = self
                    .plan
                    .ids
                    .iter()
                    .zip(&self.consumed)
                    .map(|(id, c)| (*id, c.load(Ordering::Acquire)))
                    .collect();
                let sinks = self
                    .sinks
                    .into_iter()
                    .map(|(id, r)| (id, std::mem::take(&mut *r.lock().expect("sink lock"))))
                    .collect();
                Ok(RunOutput { sinks, consumed, tail_logs: BTreeMap::new() })
            }
        }
    }
}

/// Wires and launches a pipeline. Deterministic runs complete before this
/// returns; threaded runs start once [`RunHandle::start`] or
/// [`RunHandle::wait`] is called.
pub fn run_pipeline(
    spec: &PipelineSpec,
    inputs: &BTreeMap<String, Vec<EventRecord>>,
    opts: &RunOptions,
) -> Result<RunHandle, EngineError> {
    let plan = spec.plan()?;
    if opts.mode == ExecMode::Deterministic {
        opts.cost_model.validate().map_err(|e| EngineError::InvalidPipeline(e.to_string()))?;
    }
    let n = plan.ids.len();
    let ring = |cap| RingBuffer::new::<Envelope>(cap).map_err(|e| EngineError::InvalidPipeline(e.to_string()));

    let shared_inputs: HashMap<&str, Arc<Vec<EventRecord>>> =
        inputs.iter().map(|(k, v)| (k.as_str(), Arc::new(v.clone()))).collect();

    // Edge buffers, keyed by (from, to) in listing order.
    let mut edge_consumers: HashMap<(usize, usize), VecDeque<Consumer<Envelope>>> = HashMap::new();
    let mut outs: Vec<Vec<Producer<Envelope>>> = (0..n).map(|_| Vec::new()).collect();
    for f in 0..n {
        for &t in &plan.outbound[f] {
            let (p, c) = ring(opts.capacity)?;
            outs[f].push(p);
            edge_consumers.entry((f, t)).or_default().push_back(c);
        }
    }
    let mut collectors = Vec::new();
    let mut sinks = Vec::new();
    for i in 0..n {
        if plan.sink[i] {
            let (p, c) = ring(opts.capacity)?;
            outs[i].push(p);
            let records = Arc::new(Mutex::new(Vec::new()));
            sinks.push((plan.ids[i], records.clone()));
            collectors.push(Collector {
                stage: plan.ids[i],
                input: c,
                opener: Opener::new(&opts.key),
                records,
                done: false,
            });
        }
    }

    let mut feeders = Vec::with_capacity(n);
    let mut workers = Vec::with_capacity(n);
    let mut probes = Vec::with_capacity(n);
    let mut finished = Vec::with_capacity(n);
    let mut consumed = Vec::with_capacity(n);
    for (i, mut stage_outs) in outs.into_iter().enumerate() {
        let stage = &spec.stages[i];
        let (in_p, in_c) = ring(opts.capacity)?;
        let inputs = plan.inbound[i]
            .iter()
            .enumerate()
            .map(|(port, inb)| match inb {
                Inbound::Edge(f) => Ok(FeedInput::Edge(
                    edge_consumers.get_mut(&(*f, i)).and_then(VecDeque::pop_front).expect("edge buffer"),
                )),
                Inbound::Source(name) => Ok(FeedInput::Source {
                    records: shared_inputs
                        .get(name.as_str())
                        .cloned()
                        .ok_or_else(|| EngineError::MissingInput(name.clone()))?,
                    pos: 0,
                    sealer: Sealer::new(&opts.key, 1 + (i as u32) * 16 + port as u32),
                }),
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        let live = vec![true; inputs.len()];
        feeders.push(Feeder { inputs, live, out: in_p, pending: None, next: 0, end_sent: false });

        let probe = in_c.probe();
        probes.push(probe.clone());
        let done = Arc::new(AtomicBool::new(false));
        finished.push(done.clone());
        let count = Arc::new(AtomicU64::new(0));
        consumed.push(count.clone());
        let timing = match opts.mode {
            ExecMode::Deterministic => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(i as u64 + 1);
                Timing::Virtual { clock: 0, model: opts.cost_model.clone(), rng, log: Vec::new() }
            }
            ExecMode::Threaded => {
                Timing::Real { counter: MonotonicCounter::new(opts.cycles_per_ns), cooperative: opts.cooperative }
            }
        };
        workers.push(Worker {
            id: stage.id,
            input: in_c,
            probe,
            opener: Opener::new(&opts.key),
            sealer: Sealer::new(&opts.key, 0x8000_0000 | i as u32),
            chain: build_chain(stage)?,
            open_ports: 1,
            outs: std::mem::take(&mut stage_outs),
            queue: VecDeque::new(),
            batch: stage.batch.unwrap_or(1),
            held: Vec::new(),
            pad: stage.pad_cycles.filter(|&p| p > 0),
            timing,
            end_queued: false,
            consumed: count,
            finished: done,
            works: Vec::new(),
        });
    }

    let mut handle = RunHandle {
        spec: spec.clone(),
        plan,
        probes,
        finished,
        consumed,
        sinks,
        exec: Exec::Finished(Ok(RunOutput::default())),
    };

    match opts.mode {
        ExecMode::Deterministic => {
            let result = run_deterministic(&handle, feeders, &mut workers, collectors);
            handle.exec = Exec::Finished(result.map(|(sinks, consumed)| RunOutput {
                sinks,
                consumed,
                tail_logs: workers
                    .iter_mut()
                    .map(|w| match &mut w.timing {
                        Timing::Virtual { log, .. } => (w.id, std::mem::take(log)),
                        Timing::Real { .. } => (w.id, Vec::new()),
                    })
                    .collect(),
            }));
        }
        ExecMode::Threaded => {
            let ctl = Arc::new(Control {
                abort: AtomicBool::new(false),
                error: Mutex::new(None),
                origin: Instant::now(),
                last_progress: AtomicU64::new(0),
                gate: (Mutex::new(false), Condvar::new()),
            });
            let mut actors: Vec<Box<dyn Actor>> = Vec::new();
            actors.extend(feeders.into_iter().map(|f| Box::new(f) as Box<dyn Actor>));
            actors.extend(workers.into_iter().map(|w| Box::new(w) as Box<dyn Actor>));
            actors.extend(collectors.into_iter().map(|c| Box::new(c) as Box<dyn Actor>));
            let threads = actors
                .into_iter()
                .map(|mut actor| {
                    let ctl = ctl.clone();
                    let timeout = opts.stall_timeout;
                    thread::spawn(move || {
                        ctl.wait_gate();
                        if let Err(e) = drive(actor.as_mut(), &ctl, timeout) {
                            ctl.fail(e);
                        }
                    })
                })
                .collect();
            handle.exec = Exec::Running { ctl, threads };
        }
    }
    Ok(handle)
}

fn drive(actor: &mut dyn Actor, ctl: &Control, timeout: Duration) -> Result<(), EngineError> {
    let mut idle = 0u32;
    loop {
        if ctl.abort.load(Ordering::Acquire) {
            return Ok(());
        }
        match actor.step()? {
            Progress::Done => return Ok(()),
            Progress::Moved => {
                ctl.touch();
                idle = 0;
            }
            Progress::Idle => {
                idle += 1;
                if idle < 32 {
                    std::hint::spin_loop();
                } else if idle < 512 {
                    thread::yield_now();
                } else {
                    if ctl.stalled(timeout) {
                        return Err(EngineError::PipelineStall(timeout));
                    }
                    thread::sleep(Duration::from_micros(50));
                }
            }
        }
    }
}

type Finished = (BTreeMap<StageId, Vec<EventRecord>>, BTreeMap<StageId, u64>);

fn run_deterministic(
    handle: &RunHandle,
    mut feeders: Vec<Feeder>,
    workers: &mut [Worker],
    mut collectors: Vec<Collector>,
) -> Result<Finished, EngineError> {
    let order = handle.plan.order.clone();
    loop {
        let mut progressed = false;
        let mut all_done = true;
        for &i in &order {
            for p in [feeders[i].step()?, workers[i].step()?] {
                progressed |= p == Progress::Moved;
                all_done &= p == Progress::Done;
            }
        }
        for c in &mut collectors {
            let p = c.step()?;
            progressed |= p == Progress::Moved;
            all_done &= p == Progress::Done;
        }
        if all_done {
            break;
        }
        if !progressed {
            return Err(EngineError::PipelineStall(Duration::ZERO));
        }
    }
    let sinks = handle
        .sinks
        .iter()
        .map(|(id, r)| (*id, std::mem::take(&mut *r.lock().expect("sink lock"))))
        .collect();
    let consumed = workers.iter().map(|w| (w.id, w.consumed.load(Ordering::Relaxed))).collect();
    Ok((sinks, consumed))
}
