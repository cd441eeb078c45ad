use std::path::PathBuf;

use anyhow::bail;
use clap::{Args, ValueEnum};
use lrusim::channel::{alternating_message, random_message, run_covert_channel, sweep, ChannelRun, SweepSpec};
use lrusim::eval::{miss_rate_grid, AccessTrace};
use lrusim::plru_analysis::{table1, AnalysisSpec, InitCondition, Sequence, REPORTED_ITERATIONS};
use lrusim::secure::pl_attack_demo;
use lrusim::transient::{recover_secret, Gadget, LeakChannel, RecoveryParams};
use lrusim::{
    CacheGeometry, ChannelConfig, LatencyProfile, NoiseModel, PlVariant, PolicyKind, Protocol, ScheduleMode,
    ScheduleModel,
};

use crate::report::{f, join, Report};
use crate::{Common, Status, UsageError};

type Outcome = anyhow::Result<(Report, Status)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Latency {
    Intel,
    Amd,
}

impl Latency {
    fn profile(self, jitter: u64, tsc_quantum: u64) -> LatencyProfile {
        match self {
            Latency::Intel => LatencyProfile::intel(),
            Latency::Amd => LatencyProfile::amd_zen(tsc_quantum),
        }
        .with_jitter(jitter)
    }
}

#[derive(Args, Debug, Clone)]
pub struct LatencyArgs {
    #[arg(long, value_enum, default_value = "intel")]
    pub latency: Latency,
    /// Uniform extra delay (cycles) on every timed probe.
    #[arg(long, default_value_t = 0)]
    pub jitter: u64,
    /// Timestamp granularity for the amd profile.
    #[arg(long, default_value_t = 1)]
    pub tsc_quantum: u64,
}

#[derive(Args, Debug)]
pub struct PlruTable {
    #[arg(long, value_delimiter = ',', default_value = "lru,tree-plru,bit-plru")]
    pub policies: Vec<PolicyKind>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Chance that each optional slot of Sequence 2 holds a foreign line.
    #[arg(long, default_value_t = lrusim::plru_analysis::DEFAULT_SEQ2_INSERT_PROB)]
    pub seq2_insert_prob: f64,
}

pub fn plru_table(a: &PlruTable, c: &Common) -> Outcome {
    if a.policies.is_empty() {
        bail!(UsageError("no policies given".into()));
    }
    let mut base = AnalysisSpec::new(a.policies[0], Sequence::Seq1, InitCondition::Random, 8);
    base.seq2_insert_prob = a.seq2_insert_prob;
    let rows = table1(&a.policies, a.trials, c.seed, &base)?;
    let last = *REPORTED_ITERATIONS.last().unwrap();
    let mut r = Report::new("plru-table", c.seed, &["policy", "init", "sequence", "iteration", "trials", "p_evict", "stderr"]);
    r.config("policies", join(&a.policies)).config("trials", a.trials).config("seq2-insert-prob", a.seq2_insert_prob);
    for row in rows {
        let it = if row.iteration == last { format!(">={last}") } else { row.iteration.to_string() };
        r.row(vec![
            row.policy.to_string(),
            row.init.to_string(),
            row.sequence.to_string(),
            it,
            row.trials.to_string(),
            f(row.p),
            f(row.stderr),
        ]);
    }
    Ok((r, Status::Ok))
}

#[derive(Args, Debug)]
pub struct ChannelRunArgs {
    #[arg(long, default_value = "shared")]
    pub protocol: Protocol,
    #[arg(long, short = 'd', default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value = "lru")]
    pub policy: PolicyKind,
    #[arg(long, default_value = "ideal")]
    pub mode: ScheduleMode,
    /// Sender cycles per bit.
    #[arg(long, default_value_t = 6000)]
    pub ts: u64,
    /// Receiver sampling period in cycles.
    #[arg(long, default_value_t = 600)]
    pub tr: u64,
    /// Time-slice length (defaults to Ts).
    #[arg(long)]
    pub quantum: Option<u64>,
    /// Background accesses to the target set per 1000 cycles.
    #[arg(long, default_value_t = 0.0)]
    pub noise_rate: f64,
    /// Length of the random message.
    #[arg(long, default_value_t = 128)]
    pub bits: usize,
    /// Explicit message as a 0/1 string; overrides --bits.
    #[arg(long)]
    pub message: Option<String>,
    #[command(flatten)]
    pub latency: LatencyArgs,
    /// Emit one row per receiver probe instead of a summary row.
    #[arg(long)]
    pub trace: bool,
}

fn parse_bits(s: &str) -> anyhow::Result<Vec<u8>> {
    s.chars()
        .map(|ch| match ch {
            '0' => Ok(0),
            '1' => Ok(1),
            o => bail!(UsageError(format!("message may only contain 0 and 1, found `{o}`"))),
        })
        .collect()
}

fn trace_report(command: &str, seed: u64, run: &ChannelRun) -> Report {
    let mut r =
        Report::new(command, seed, &["probe", "time", "window", "sent", "total_cycles", "class", "decoded"]);
    for (i, p) in run.trace.iter().enumerate() {
        r.row(vec![
            i.to_string(),
            p.time.to_string(),
            p.window.to_string(),
            p.sent.to_string(),
            p.total_cycles.to_string(),
            if p.class.is_hit() { "hit" } else { "miss" }.into(),
            p.decoded.to_string(),
        ]);
    }
    r
}

fn bit_string(bits: &[u8]) -> String {
    bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
}

pub fn channel_run(a: &ChannelRunArgs, c: &Common) -> Outcome {
    let cfg = ChannelConfig {
        latency: a.latency.latency.profile(a.latency.jitter, a.latency.tsc_quantum),
        ..ChannelConfig::new(a.protocol, a.d).with_policy(a.policy)
    };
    let sched = ScheduleModel::new(a.mode, a.ts, a.tr).with_quantum(a.quantum.unwrap_or(a.ts));
    let message = match &a.message {
        Some(m) => parse_bits(m)?,
        None => random_message(a.bits, c.seed),
    };
    let run = run_covert_channel(&cfg, &sched, &NoiseModel::new(a.noise_rate), &message, c.seed)?;
    let mut r = if a.trace {
        trace_report("channel run", c.seed, &run)
    } else {
        let mut r = Report::new(
            "channel run",
            c.seed,
            &[
                "protocol", "d", "policy", "mode", "ts", "tr", "quantum", "noise_rate", "sent_bits", "received_bits",
                "edit_distance", "error_rate", "sender_hits", "sender_misses", "cycles",
            ],
        );
        r.row(vec![
            a.protocol.to_string(),
            a.d.to_string(),
            a.policy.to_string(),
            a.mode.to_string(),
            a.ts.to_string(),
            a.tr.to_string(),
            sched.quantum.to_string(),
            f(a.noise_rate),
            message.len().to_string(),
            run.received.len().to_string(),
            run.error.edit_distance.to_string(),
            f(run.error.error_rate),
            run.sender_hits.to_string(),
            run.sender_misses.to_string(),
            run.cycles.to_string(),
        ]);
        r
    };
    r.config("protocol", a.protocol)
        .config("d", a.d)
        .config("policy", a.policy)
        .config("mode", a.mode)
        .config("ts", a.ts)
        .config("tr", a.tr)
        .config("quantum", sched.quantum)
        .config("noise-rate", a.noise_rate)
        .config("latency", format!("{:?}", a.latency.latency).to_lowercase())
        .config("jitter", a.latency.jitter)
        .config("message", bit_string(&message));
    if a.trace {
        r.note(format!("received: {}", bit_string(&run.received)));
        r.note(format!("error_rate: {}", f(run.error.error_rate)));
    }
    Ok((r, Status::Ok))
}

#[derive(Args, Debug)]
pub struct ChannelSweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "shared,noshared")]
    pub protocols: Vec<Protocol>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
    pub ds: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4500,6000,12000,30000")]
    pub ts: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "600,1000,3000")]
    pub tr: Vec<u64>,
    #[arg(long, default_value = "lru")]
    pub policy: PolicyKind,
    #[arg(long, default_value = "hyperthreaded")]
    pub mode: ScheduleMode,
    /// Time-slice length (defaults to each cell's Ts).
    #[arg(long)]
    pub quantum: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise_rate: f64,
    /// Length of the random message.
    #[arg(long, default_value_t = 128)]
    pub bits: usize,
    /// Times the message is repeated back to back.
    #[arg(long, default_value_t = 30)]
    pub repetitions: usize,
    /// Runs of identical received bits longer than this are flagged as noise.
    #[arg(long, default_value_t = 16)]
    pub max_run: usize,
    #[command(flatten)]
    pub latency: LatencyArgs,
}

pub fn channel_sweep(a: &ChannelSweepArgs, c: &Common) -> Outcome {
    let base = ChannelConfig {
        latency: a.latency.latency.profile(a.latency.jitter, a.latency.tsc_quantum),
        ..ChannelConfig::new(a.protocols.first().copied().unwrap_or(Protocol::SharedMemory), 1).with_policy(a.policy)
    };
    let mut spec = SweepSpec::new(base, ScheduleModel::new(a.mode, 1, 1), NoiseModel::new(a.noise_rate));
    spec.protocols = a.protocols.clone();
    spec.ds = a.ds.clone();
    spec.ts = a.ts.clone();
    spec.tr = a.tr.clone();
    spec.message_bits = a.bits;
    spec.repetitions = a.repetitions;
    spec.max_run = a.max_run;
    spec.seed = c.seed;
    let rows = match a.quantum {
        Some(q) => {
            spec.sched = spec.sched.with_quantum(q);
            sweep(&spec)?
        }
        // quantum follows each cell's Ts
        None => {
            let mut out = Vec::new();
            for &ts in &a.ts {
                let one = SweepSpec { ts: vec![ts], sched: spec.sched.with_quantum(ts), ..spec.clone() };
                out.extend(sweep(&one)?);
            }
            let order = spec.cells();
            out.sort_by_key(|r| order.iter().position(|c| *c == r.cell));
            out
        }
    };
    let mut r = Report::new(
        "channel sweep",
        c.seed,
        &[
            "protocol", "d", "ts", "tr", "policy", "mode", "noise_rate", "sent_bits", "received_bits",
            "edit_distance", "error_rate", "bits_per_mcycle", "effective_bits_per_mcycle", "flagged_bits", "flagged",
            "sender_misses",
        ],
    );
    r.config("protocols", join(&a.protocols))
        .config("ds", join(&a.ds))
        .config("ts", join(&a.ts))
        .config("tr", join(&a.tr))
        .config("policy", a.policy)
        .config("mode", a.mode)
        .config("quantum", a.quantum.map_or("ts".into(), |q| q.to_string()))
        .config("noise-rate", a.noise_rate)
        .config("bits", a.bits)
        .config("repetitions", a.repetitions)
        .config("max-run", a.max_run)
        .config("latency", format!("{:?}", a.latency.latency).to_lowercase())
        .config("jitter", a.latency.jitter);
    for row in rows {
        r.row(vec![
            row.cell.protocol.to_string(),
            row.cell.d.to_string(),
            row.cell.ts.to_string(),
            row.cell.tr.to_string(),
            a.policy.to_string(),
            a.mode.to_string(),
            f(a.noise_rate),
            row.sent_bits.to_string(),
            row.received_bits.to_string(),
            row.edit_distance.to_string(),
            f(row.error_rate),
            f(row.bits_per_mcycle),
            f(row.effective_bits_per_mcycle),
            row.flagged_bits.to_string(),
            (row.flagged_bits > 0).to_string(),
            row.sender_misses.to_string(),
        ]);
    }
    Ok((r, Status::Ok))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MessageKind {
    Alternating,
    Random,
}

#[derive(Args, Debug)]
pub struct Plcache {
    #[arg(long, default_value = "original")]
    pub variant: PlVariant,
    #[arg(long, default_value = "lru")]
    pub policy: PolicyKind,
    #[arg(long, short = 'd', default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 32)]
    pub bits: usize,
    #[arg(long, value_enum, default_value = "alternating")]
    pub message: MessageKind,
    #[arg(long, default_value_t = 1)]
    pub rounds_per_bit: u64,
    /// Original design only: a bypassed fill counts as an access to the
    /// locked victim.
    #[arg(long)]
    pub bypass_touch: bool,
}

pub fn plcache(a: &Plcache, c: &Common) -> Outcome {
    let cfg = ChannelConfig::new(Protocol::NoSharedMemory, a.d).with_policy(a.policy);
    let message = match a.message {
        MessageKind::Alternating => alternating_message(a.bits),
        MessageKind::Random => random_message(a.bits, c.seed),
    };
    let demo = pl_attack_demo(a.variant, &cfg, &message, a.rounds_per_bit, a.bypass_touch, c.seed)?;
    let mut r = trace_report("plcache", c.seed, &demo.run);
    r.config("variant", a.variant)
        .config("policy", a.policy)
        .config("d", a.d)
        .config("bits", a.bits)
        .config("message", format!("{:?}", a.message).to_lowercase())
        .config("rounds-per-bit", a.rounds_per_bit)
        .config("bypass-touch", a.bypass_touch);
    r.note(format!("sent: {}", bit_string(&message)));
    r.note(format!("received: {}", bit_string(&demo.run.received)));
    r.note(format!("error_rate: {}", f(demo.run.error.error_rate)));
    Ok((r, Status::Ok))
}

#[derive(Args, Debug)]
pub struct Spectre {
    #[arg(long, default_value = "The Magic Words!")]
    pub secret: String,
    #[arg(long, default_value = "lru-alg1")]
    pub channel: LeakChannel,
    #[arg(long, short = 'd', default_value_t = 4)]
    pub d: usize,
    /// Victim triggers per digit before votes are counted.
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 4)]
    pub max_triggers: usize,
    /// Chance of a foreign line landing in each set between trigger and decode.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[command(flatten)]
    pub latency: LatencyArgs,
}

pub fn spectre(a: &Spectre, c: &Common) -> Outcome {
    let secret = a.secret.as_bytes();
    let gadget = Gadget::new(secret);
    let params = RecoveryParams {
        channel: a.channel,
        d: a.d,
        latency: a.latency.latency.profile(a.latency.jitter, a.latency.tsc_quantum),
        repetitions: a.repetitions,
        max_triggers: a.max_triggers,
        noise: a.noise,
        seed: c.seed,
    };
    let rep = recover_secret(&gadget, &params)?;
    let mut r = Report::new("spectre", c.seed, &["index", "secret", "recovered", "triggers", "correct"]);
    r.config("secret", &a.secret)
        .config("channel", a.channel)
        .config("d", a.d)
        .config("repetitions", a.repetitions)
        .config("max-triggers", a.max_triggers)
        .config("noise", a.noise);
    for (i, (&s, got)) in secret.iter().zip(&rep.recovered).enumerate() {
        r.row(vec![
            i.to_string(),
            s.to_string(),
            got.map_or(String::new(), |g| g.to_string()),
            rep.triggers[i].to_string(),
            (*got == Some(s)).to_string(),
        ]);
    }
    let text: String = rep.recovered.iter().map(|b| b.map_or('?', |b| b as char)).collect();
    let correct = rep.correct(secret);
    r.note(format!("recovered: {text}"));
    r.note(format!("correct: {correct}/{}", secret.len()));
    let status = if correct == secret.len() {
        Status::Ok
    } else {
        Status::ExperimentFailed(format!(
            "{} of {} bytes wrong, {} unresolved",
            secret.len() - correct,
            secret.len(),
            rep.unresolved()
        ))
    };
    Ok((r, status))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Synthetic {
    /// ways+1 lines in one set, round-robin.
    Cyclic,
    /// A linear scan over --lines lines.
    Sequential,
    /// --count accesses --stride bytes apart.
    Strided,
    /// Zipf-distributed accesses over --lines lines.
    Zipf,
}

#[derive(Args, Debug)]
pub struct Missrate {
    /// Trace files (one hex address per line); repeatable.
    #[arg(long)]
    pub trace: Vec<PathBuf>,
    /// Built-in traces; `cyclic` when neither this nor --trace is given.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub synthetic: Vec<Synthetic>,
    #[arg(long, value_delimiter = ',', default_value = "lru,tree-plru,bit-plru,fifo,random")]
    pub policies: Vec<PolicyKind>,
    #[arg(long, default_value_t = 64)]
    pub sets: usize,
    #[arg(long, default_value_t = 8)]
    pub ways: usize,
    #[arg(long, default_value_t = 64)]
    pub line_size: usize,
    /// Repetitions of the cyclic, sequential and strided patterns.
    #[arg(long, default_value_t = 100)]
    pub passes: usize,
    #[arg(long, default_value_t = 1024)]
    pub lines: u64,
    #[arg(long, default_value_t = 1024)]
    pub stride: u64,
    #[arg(long, default_value_t = 40)]
    pub count: u64,
    #[arg(long, default_value_t = 1.0)]
    pub zipf_exponent: f64,
    /// Accesses in the zipf trace.
    #[arg(long, default_value_t = 100_000)]
    pub length: usize,
}

pub fn missrate(a: &Missrate, c: &Common) -> Outcome {
    if a.policies.is_empty() {
        bail!(UsageError("no policies given".into()));
    }
    let geometry = CacheGeometry::new(a.sets, a.ways, a.line_size)?;
    let mut traces = Vec::new();
    for p in &a.trace {
        traces.push(AccessTrace::load(p)?);
    }
    let synthetic = if a.synthetic.is_empty() && a.trace.is_empty() { vec![Synthetic::Cyclic] } else { a.synthetic.clone() };
    for s in &synthetic {
        traces.push(match s {
            Synthetic::Cyclic => AccessTrace::cyclic_conflict(&geometry, a.passes),
            Synthetic::Sequential => AccessTrace::sequential(&geometry, a.lines, a.passes),
            Synthetic::Strided => AccessTrace::strided(a.stride, a.count, a.passes),
            Synthetic::Zipf => AccessTrace::zipf(&geometry, a.lines, a.zipf_exponent, a.length, c.seed)?,
        });
    }
    let reports = miss_rate_grid(&traces, geometry, &a.policies, c.seed)?;
    let mut r = Report::new(
        "missrate",
        c.seed,
        &[
            "trace", "policy", "sets", "ways", "line_size", "accesses", "hits", "misses", "compulsory", "miss_rate",
            "steady_state_miss_rate",
        ],
    );
    let names: Vec<String> = a.trace.iter().map(|p| p.display().to_string()).collect();
    r.config("trace", names.join(","))
        .config("synthetic", synthetic.iter().map(|s| format!("{s:?}").to_lowercase()).collect::<Vec<_>>().join(","))
        .config("policies", join(&a.policies))
        .config("sets", a.sets)
        .config("ways", a.ways)
        .config("line-size", a.line_size)
        .config("passes", a.passes)
        .config("lines", a.lines)
        .config("stride", a.stride)
        .config("count", a.count)
        .config("zipf-exponent", a.zipf_exponent)
        .config("length", a.length);
    for m in reports {
        r.row(vec![
            m.trace.clone(),
            m.policy.to_string(),
            a.sets.to_string(),
            a.ways.to_string(),
            a.line_size.to_string(),
            m.accesses.to_string(),
            m.hits.to_string(),
            m.misses.to_string(),
            m.compulsory.to_string(),
            f(m.miss_rate),
            f(m.steady_state_miss_rate()),
        ]);
    }
    Ok((r, Status::Ok))
}
