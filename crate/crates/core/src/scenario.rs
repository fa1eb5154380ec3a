//! Declarative scenario files: parsing, printing, validation and execution.
//!
//! ```text
//! name=scenario1
//! seed=7
//! run_until=12000
//!
//! [nodes]
//! id=EN-1 cluster=edge role=master
//! [topics]
//! id=ET-1 cluster=edge rf=3
//! [pipeline]
//! stage=PC-1 kind=source output=ET-1 affinity=edge transform=identity
//! [workload]
//! at=2000 generate=PC-1 count=10 every=100 times=20
//! at=4000 rewire=PC-3 kind=bridge input=ET-2 output=CT-2 affinity=edge transform=identity offset=0
//! [faults]
//! at=3000 crash=EN-3
//! [checks]
//! check=reschedule node=EN-3 stage=PC-3 bound=2000
//! ```
//!
//! Rewire lines sharing a time form one transaction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use crate::check::{self, check_signature, CheckResult, CheckSpec};
use crate::cluster::{Health, NodeDescriptor, Role};
use crate::error::{ParseError, ParseErrors, SimError};
use crate::log::TopicId;
use crate::node::NodeParams;
use crate::pipeline::{transform, Affinity, PipelineSpec, RewireEntry, StageKind, StageSpec};
use crate::sim::trace::render;
use crate::sim::{Cluster, Detail, FaultAction, NetConfig, SimTime, TraceEvent};
use crate::world::{TopicDecl, TopicDump, World, WorldSetup};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Workload {
    /// `count` frames at `at`, repeated `times` times `every` ms apart.
    Generate {
        at: SimTime,
        stage: String,
        count: u64,
        every: u64,
        times: u64,
    },
    Rewire { at: SimTime, entry: RewireEntry },
}

impl Workload {
    pub fn at(&self) -> SimTime {
        match self {
            Workload::Generate { at, .. } | Workload::Rewire { at, .. } => *at,
        }
    }

    /// Time of the last event this item schedules.
    pub fn last_at(&self) -> SimTime {
        match self {
            Workload::Generate {
                at, every, times, ..
            } => *at + every * times.saturating_sub(1),
            Workload::Rewire { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultEvent {
    pub at: SimTime,
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub run_until: SimTime,
    pub re_replication: bool,
    pub batch: usize,
    pub net: NetConfig,
    pub nodes: Vec<NodeDescriptor>,
    pub topics: Vec<TopicDecl>,
    pub pipeline: PipelineSpec,
    pub workload: Vec<Workload>,
    pub faults: Vec<FaultEvent>,
    pub checks: Vec<CheckSpec>,
}

const BUILTINS: &[(&str, &str)] = &[
    ("scenario1", include_str!("../../../scenarios/scenario1.scn")),
    ("scenario2", include_str!("../../../scenarios/scenario2.scn")),
    ("scenario3", include_str!("../../../scenarios/scenario3.scn")),
    ("wan_outage", include_str!("../../../scenarios/wan_outage.scn")),
    ("case_study_5node", include_str!("../../../scenarios/case_study_5node.scn")),
    ("threenode", include_str!("../../../scenarios/threenode.scn")),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn builtin(name: &str) -> Option<Scenario> {
    builtin_text(name).map(|t| Scenario::parse(t).expect("built-in scenarios parse"))
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    builtin_names().filter_map(builtin).collect()
}

// ---- parsing ----

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Header,
    Nodes,
    Topics,
    Pipeline,
    Workload,
    Faults,
    Checks,
}

impl Section {
    fn from_header(s: &str) -> Option<Section> {
        Some(match s {
            "nodes" => Section::Nodes,
            "topics" => Section::Topics,
            "pipeline" => Section::Pipeline,
            "workload" => Section::Workload,
            "faults" => Section::Faults,
            "checks" => Section::Checks,
            _ => return None,
        })
    }
}

/// `key=value` pairs of one line, consumed by the section parsers.
struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, text: &'a str) -> Result<Self, ParseError> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for tok in text.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| ParseError::new(line, format!("expected key=value, got `{tok}`")))?;
            if k.is_empty() || v.is_empty() {
                return Err(ParseError::new(line, format!("empty key or value in `{tok}`")));
            }
            if pairs.iter().any(|(pk, _)| *pk == k) {
                return Err(ParseError::new(line, format!("duplicate key `{k}`")));
            }
            pairs.push((k, v));
        }
        Ok(Fields { line, pairs })
    }

    fn first_key(&self) -> Option<&'a str> {
        self.pairs.first().map(|(k, _)| *k)
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        let i = self.pairs.iter().position(|(k, _)| *k == key)?;
        Some(self.pairs.remove(i).1)
    }

    fn require(&mut self, key: &str) -> Result<&'a str, ParseError> {
        self.take(key)
            .ok_or_else(|| ParseError::new(self.line, format!("missing `{key}`")))
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T, ParseError>
    where
        T::Err: fmt::Display,
    {
        v.parse()
            .map_err(|e| ParseError::new(self.line, format!("bad `{key}` value `{v}`: {e}")))
    }

    fn require_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ParseError>
    where
        T::Err: fmt::Display,
    {
        let v = self.require(key)?;
        self.parse_value(key, v)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ParseError>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            Some(v) => self.parse_value(key, v).map(Some),
            None => Ok(None),
        }
    }

    fn finish(self) -> Result<(), ParseError> {
        match self.pairs.first() {
            Some((k, _)) => Err(ParseError::new(self.line, format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}

fn parse_stage(f: &mut Fields<'_>, id_key: &str) -> Result<StageSpec, ParseError> {
    let stage_id = f.require(id_key)?.to_string();
    let kind: StageKind = f.require_parsed("kind")?;
    let input = f.take("input").map(TopicId::new);
    let output = f.take("output").map(TopicId::new);
    let affinity: Affinity = f.require_parsed("affinity")?;
    let transform = f.take("transform").unwrap_or("identity").to_string();
    Ok(StageSpec {
        stage_id,
        kind,
        input,
        output,
        affinity,
        transform,
    })
}

/// Line numbers of parsed items, for validation messages.
#[derive(Default)]
struct Lines {
    nodes: Vec<usize>,
    topics: Vec<usize>,
    stages: Vec<usize>,
    workload: Vec<usize>,
    faults: Vec<usize>,
    checks: Vec<usize>,
    header: usize,
}

impl Scenario {
    /// Parses and validates a scenario. Errors carry 1-based line numbers.
    pub fn parse(text: &str) -> Result<Scenario, ParseErrors> {
        let mut errors = Vec::new();
        let mut lines = Lines::default();
        let mut sc = Scenario {
            name: String::new(),
            seed: 1,
            run_until: SimTime::ZERO,
            re_replication: false,
            batch: 16,
            net: NetConfig::default(),
            nodes: Vec::new(),
            topics: Vec::new(),
            pipeline: PipelineSpec { stages: Vec::new() },
            workload: Vec::new(),
            faults: Vec::new(),
            checks: Vec::new(),
        };
        let mut section = Section::Header;
        let mut seen_sections = BTreeSet::new();
        let mut have_until = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            if let Some(h) = body.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                match Section::from_header(h.trim()) {
                    Some(s) if seen_sections.insert(h.trim().to_string()) => section = s,
                    Some(_) => errors.push(ParseError::new(line, format!("section [{h}] repeated"))),
                    None => errors.push(ParseError::new(line, format!("unknown section [{h}]"))),
                }
                continue;
            }
            let res = Fields::parse(line, body).and_then(|mut f| {
                match section {
                    Section::Header => {
                        lines.header = lines.header.max(line);
                        if let Some(v) = f.take("name") {
                            sc.name = v.to_string();
                        }
                        if let Some(v) = f.take_parsed("seed")? {
                            sc.seed = v;
                        }
                        if let Some(v) = f.take_parsed::<u64>("run_until")? {
                            sc.run_until = SimTime(v);
                            have_until = true;
                        }
                        if let Some(v) = f.take_parsed("re_replication")? {
                            sc.re_replication = v;
                        }
                        if let Some(v) = f.take_parsed("batch")? {
                            sc.batch = v;
                        }
                        if let Some(v) = f.take_parsed("edge_lan")? {
                            sc.net.edge_lan = v;
                        }
                        if let Some(v) = f.take_parsed("cloud_lan")? {
                            sc.net.cloud_lan = v;
                        }
                        if let Some(v) = f.take_parsed("wan")? {
                            sc.net.wan = v;
                        }
                    }
                    Section::Nodes => {
                        sc.nodes.push(NodeDescriptor {
                            node_id: f.require("id")?.to_string(),
                            cluster: f.require_parsed("cluster")?,
                            role: f.require_parsed("role")?,
                            status: Health::Up,
                        });
                        lines.nodes.push(line);
                    }
                    Section::Topics => {
                        sc.topics.push(TopicDecl {
                            id: TopicId::new(f.require("id")?),
                            cluster: f.require_parsed("cluster")?,
                            rf: f.require_parsed("rf")?,
                        });
                        lines.topics.push(line);
                    }
                    Section::Pipeline => {
                        sc.pipeline.stages.push(parse_stage(&mut f, "stage")?);
                        lines.stages.push(line);
                    }
                    Section::Workload => {
                        let at = SimTime(f.require_parsed("at")?);
                        let item = match f.first_key() {
                            Some("generate") => {
                                let stage = f.require("generate")?.to_string();
                                let count = f.require_parsed("count")?;
                                let every = f.take_parsed("every")?.unwrap_or(0);
                                let times = f.take_parsed("times")?.unwrap_or(1);
                                if times == 0 || (times > 1 && every == 0) {
                                    return Err(ParseError::new(
                                        line,
                                        "repeated generate needs times>=1 and every>0",
                                    ));
                                }
                                Workload::Generate {
                                    at,
                                    stage,
                                    count,
                                    every,
                                    times,
                                }
                            }
                            Some("rewire") => {
                                let spec = parse_stage(&mut f, "rewire")?;
                                let offset = f.take_parsed("offset")?;
                                Workload::Rewire {
                                    at,
                                    entry: RewireEntry { spec, offset },
                                }
                            }
                            _ => {
                                return Err(ParseError::new(
                                    line,
                                    "workload entry needs generate= or rewire= after at=",
                                ))
                            }
                        };
                        sc.workload.push(item);
                        lines.workload.push(line);
                    }
                    Section::Faults => {
                        let at = SimTime(f.require_parsed("at")?);
                        let action = match f.first_key() {
                            Some("crash") => FaultAction::Crash(f.require("crash")?.to_string()),
                            Some("restart") => {
                                FaultAction::Restart(f.require("restart")?.to_string())
                            }
                            Some("partition") => FaultAction::Partition(f.require_parsed("partition")?),
                            Some("heal") => FaultAction::Heal(f.require_parsed("heal")?),
                            _ => {
                                return Err(ParseError::new(
                                    line,
                                    "fault needs crash=, restart=, partition= or heal= after at=",
                                ))
                            }
                        };
                        sc.faults.push(FaultEvent { at, action });
                        lines.faults.push(line);
                    }
                    Section::Checks => {
                        let name = f.require("check")?.to_string();
                        let args = f
                            .pairs
                            .drain(..)
                            .map(|(k, v)| (k.to_string(), v.to_string()))
                            .collect();
                        sc.checks.push(CheckSpec { name, args });
                        lines.checks.push(line);
                    }
                }
                f.finish()
            });
            if let Err(e) = res {
                errors.push(e);
            }
        }
        if !have_until {
            errors.push(ParseError::new(lines.header.max(1), "missing `run_until`"));
        }
        if sc.name.is_empty() {
            errors.push(ParseError::new(lines.header.max(1), "missing `name`"));
        }
        if errors.is_empty() {
            sc.validate(&lines, &mut errors);
        }
        if errors.is_empty() {
            Ok(sc)
        } else {
            errors.sort_by_key(|e| e.line);
            Err(ParseErrors(errors))
        }
    }

    pub fn topic_clusters(&self) -> BTreeMap<TopicId, Cluster> {
        self.topics.iter().map(|t| (t.id.clone(), t.cluster)).collect()
    }

    fn validate(&self, lines: &Lines, errors: &mut Vec<ParseError>) {
        let mut err = |line: usize, msg: String| errors.push(ParseError::new(line, msg));
        let mut nodes = BTreeMap::new();
        for (n, &l) in self.nodes.iter().zip(&lines.nodes) {
            if nodes.insert(n.node_id.as_str(), n.cluster).is_some() {
                err(l, format!("duplicate node `{}`", n.node_id));
            }
            if n.node_id.contains('.') {
                err(l, format!("node id `{}` must not contain `.`", n.node_id));
            }
        }
        for c in Cluster::ALL {
            let masters = self
                .nodes
                .iter()
                .filter(|n| n.cluster == c && n.role == Role::Master)
                .count();
            if masters == 0 {
                err(lines.nodes.first().copied().unwrap_or(1), format!("cluster {c} has no master"));
            }
        }
        let topics = self.topic_clusters();
        let mut seen_topics = BTreeSet::new();
        for (t, &l) in self.topics.iter().zip(&lines.topics) {
            if !seen_topics.insert(&t.id) {
                err(l, format!("duplicate topic `{}`", t.id));
            }
            if t.id.as_str().contains('.') {
                err(l, format!("topic id `{}` must not contain `.`", t.id));
            }
            let members = nodes.values().filter(|c| **c == t.cluster).count();
            if t.rf == 0 || t.rf > members {
                err(l, format!("rf={} for `{}` but cluster {} has {members} nodes", t.rf, t.id, t.cluster));
            }
        }
        let stage_refs = |s: &StageSpec, l: usize, err: &mut dyn FnMut(usize, String)| {
            for t in s.input.iter().chain(&s.output) {
                if !topics.contains_key(t) {
                    err(l, format!("stage `{}` references undefined topic `{t}`", s.stage_id));
                }
            }
            if !transform::is_registered(&s.transform) {
                err(l, format!("unknown transform `{}`", s.transform));
            }
        };
        for (s, &l) in self.pipeline.stages.iter().zip(&lines.stages) {
            stage_refs(s, l, &mut err);
        }
        if let Err(e) = self.pipeline.validate(&topics) {
            let l = lines.stages.first().copied().unwrap_or(lines.header.max(1));
            err(l, format!("pipeline: {e}"));
        }
        let until = self.run_until;
        for (w, &l) in self.workload.iter().zip(&lines.workload) {
            if w.last_at() > until {
                err(l, format!("workload at {} is after run_until {until}", w.last_at()));
            }
            match w {
                Workload::Generate { stage, .. } => match self.pipeline.stage(stage) {
                    Some(s) if s.kind == StageKind::Source => {}
                    Some(_) => err(l, format!("stage `{stage}` is not a source")),
                    None => err(l, format!("undefined stage `{stage}`")),
                },
                Workload::Rewire { entry, .. } => {
                    if self.pipeline.stage(&entry.spec.stage_id).is_none() {
                        err(l, format!("undefined stage `{}`", entry.spec.stage_id));
                    }
                    stage_refs(&entry.spec, l, &mut err);
                }
            }
        }
        let mut order: Vec<_> = self.faults.iter().zip(&lines.faults).collect();
        order.sort_by_key(|(f, _)| f.at);
        let mut crashed = BTreeSet::new();
        let mut partitioned = BTreeSet::new();
        for (f, &l) in order {
            if f.at > until {
                err(l, format!("fault at {} is after run_until {until}", f.at));
            }
            match &f.action {
                FaultAction::Crash(n) | FaultAction::Restart(n) if !nodes.contains_key(n.as_str()) => {
                    err(l, format!("undefined node `{n}`"));
                }
                FaultAction::Crash(n) => {
                    crashed.insert(n.clone());
                }
                FaultAction::Restart(n) => {
                    if !crashed.remove(n) {
                        err(l, format!("restart of `{n}` which is not crashed"));
                    }
                }
                FaultAction::Partition(d) => {
                    partitioned.insert(*d);
                }
                FaultAction::Heal(d) => {
                    if !partitioned.remove(d) {
                        err(l, format!("heal of `{d}` which is not partitioned"));
                    }
                }
            }
        }
        for (c, &l) in self.checks.iter().zip(&lines.checks) {
            if let Err(m) = self.validate_check(c, &nodes) {
                err(l, m);
            }
        }
    }

    fn validate_check(&self, c: &CheckSpec, nodes: &BTreeMap<&str, Cluster>) -> Result<(), String> {
        let (required, optional) =
            check_signature(&c.name).ok_or_else(|| format!("unknown check `{}`", c.name))?;
        for r in required {
            if !c.args.contains_key(*r) {
                return Err(format!("check `{}` needs `{r}`", c.name));
            }
        }
        for k in c.args.keys() {
            if !required.contains(&k.as_str()) && !optional.contains(&k.as_str()) {
                return Err(format!("check `{}` does not take `{k}`", c.name));
            }
        }
        if let Some(n) = c.args.get("node") {
            if !nodes.contains_key(n.as_str()) {
                return Err(format!("undefined node `{n}`"));
            }
        }
        if let Some(s) = c.args.get("stage") {
            if self.pipeline.stage(s).is_none() {
                return Err(format!("undefined stage `{s}`"));
            }
        }
        for k in ["bound", "at", "after", "min"] {
            if let Some(v) = c.args.get(k) {
                v.parse::<u64>()
                    .map_err(|_| format!("`{k}` must be a non-negative integer"))?;
            }
        }
        if let Some(v) = c.args.get("cluster") {
            v.parse::<Cluster>()?;
        }
        Ok(())
    }

    // ---- execution ----

    pub fn setup(&self, seed: u64) -> WorldSetup {
        let mut params = NodeParams::default();
        params.stage.batch = self.batch;
        WorldSetup {
            seed,
            net: self.net,
            nodes: self.nodes.clone(),
            topics: self.topics.clone(),
            pipeline: self.pipeline.clone(),
            re_replication: self.re_replication,
            params,
        }
    }

    /// Builds the world with the workload and fault schedule queued.
    pub fn world(&self, seed: u64) -> Result<World, SimError> {
        let mut w = World::new(self.setup(seed))?;
        w.emit(
            "run_start",
            Detail::new().with("scenario", &self.name).with("seed", seed),
        );
        let mut i = 0;
        while i < self.workload.len() {
            match &self.workload[i] {
                Workload::Generate {
                    at,
                    stage,
                    count,
                    every,
                    times,
                } => {
                    for k in 0..*times {
                        w.schedule_generate(*at + every * k, stage, *count)?;
                    }
                    i += 1;
                }
                Workload::Rewire { at, .. } => {
                    let mut entries = Vec::new();
                    while let Some(Workload::Rewire { at: a, entry }) = self.workload.get(i) {
                        if a != at {
                            break;
                        }
                        entries.push(entry.clone());
                        i += 1;
                    }
                    w.schedule_rewire(*at, entries)?;
                }
            }
        }
        for f in &self.faults {
            w.schedule_fault(f.at, f.action.clone())?;
        }
        Ok(w)
    }

    /// Runs the simulation only, without evaluating checks.
    pub fn simulate(&self, seed: u64, until: SimTime) -> Result<(Vec<TraceEvent>, Vec<TopicDump>), SimError> {
        let mut w = self.world(seed)?;
        w.run_until(until)?;
        Ok((w.trace().to_vec(), w.dumps()?))
    }

    /// Stage affinities a stage may legitimately run under, counting rewires.
    fn allowed_clusters(&self) -> BTreeMap<String, BTreeSet<Cluster>> {
        let mut out: BTreeMap<String, BTreeSet<Cluster>> = BTreeMap::new();
        let specs = self.pipeline.stages.iter().chain(self.workload.iter().filter_map(|w| match w {
            Workload::Rewire { entry, .. } => Some(&entry.spec),
            _ => None,
        }));
        for s in specs {
            let set = out.entry(s.stage_id.clone()).or_default();
            set.extend(Cluster::ALL.into_iter().filter(|c| s.affinity.admits(*c)));
        }
        out
    }

    /// Evaluates this scenario's checks against a finished run. Scenarios
    /// named by `equivalence` are re-run with the seed recorded in the trace.
    pub fn evaluate(
        &self,
        trace: &[TraceEvent],
        dumps: &[TopicDump],
        base_dir: Option<&Path>,
    ) -> Result<Vec<CheckResult>, SimError> {
        let seed = trace
            .iter()
            .find(|e| e.kind == "run_start")
            .and_then(|e| e.get_u64("seed"))
            .unwrap_or(self.seed);
        let sink = self.pipeline.sink_topic().cloned().unwrap_or_else(|| TopicId::new(""));
        let mut out = Vec::new();
        for c in &self.checks {
            let misconfigured = |message: String| SimError::CheckConfig {
                name: c.name.clone(),
                message,
            };
            let num = |k: &str| -> Result<u64, SimError> {
                c.args
                    .get(k)
                    .ok_or_else(|| misconfigured(format!("missing `{k}`")))?
                    .parse()
                    .map_err(|_| misconfigured(format!("bad `{k}`")))
            };
            let r = match c.name.as_str() {
                "no_loss" => check::no_loss(trace, dumps, &self.pipeline),
                "equivalence" => {
                    let other = resolve(&c.args["with"], base_dir)?;
                    let (_, other_dumps) = other.simulate(seed, other.run_until)?;
                    check::equivalence(dumps, &other_dumps, &sink)
                }
                "order" => check::order(dumps, &sink),
                "reschedule" => check::reschedule(trace, &c.args["node"], &c.args["stage"], num("bound")?)
                    .map_err(misconfigured)?,
                "buffering" => check::buffering(trace, &self.pipeline).map_err(misconfigured)?,
                "survivors" => check::survivors(trace, dumps, SimTime(num("at")?)),
                "continues" => {
                    let min = if c.args.contains_key("min") { num("min")? } else { 1 };
                    check::continues(trace, SimTime(num("after")?), min as usize)
                }
                "degraded" => {
                    let cluster = c.args["cluster"].parse().map_err(misconfigured)?;
                    check::degraded(trace, cluster)
                }
                "leaders" => check::leaders(trace),
                "affinity" => {
                    let cluster_of = self.nodes.iter().map(|n| (n.node_id.clone(), n.cluster)).collect();
                    check::affinity(trace, &self.allowed_clusters(), &cluster_of)
                }
                other => return Err(misconfigured(format!("unknown check `{other}`"))),
            };
            out.push(r);
        }
        Ok(out)
    }

    pub fn execute(&self, opts: &ExecOptions) -> Result<Outcome, SimError> {
        let seed = opts.seed.unwrap_or(self.seed);
        let until = opts.until.unwrap_or(self.run_until);
        let (trace, dumps) = self.simulate(seed, until)?;
        let results = self.evaluate(&trace, &dumps, opts.base_dir.as_deref())?;
        Ok(Outcome {
            seed,
            until,
            trace,
            dumps,
            results,
        })
    }
}

/// Loads a scenario named by a built-in name or a path relative to `base`.
pub fn resolve(name: &str, base: Option<&Path>) -> Result<Scenario, SimError> {
    if let Some(s) = builtin(name) {
        return Ok(s);
    }
    let path = match base {
        Some(b) => b.join(name),
        None => PathBuf::from(name),
    };
    let text = std::fs::read_to_string(&path)?;
    Ok(Scenario::parse(&text)?)
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub seed: Option<u64>,
    pub until: Option<SimTime>,
    /// Directory relative references in checks resolve against.
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub seed: u64,
    pub until: SimTime,
    pub trace: Vec<TraceEvent>,
    pub dumps: Vec<TopicDump>,
    pub results: Vec<CheckResult>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn trace_text(&self) -> String {
        render(&self.trace)
    }

    /// One report line per check.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            writeln!(s, "{r}").unwrap();
        }
        s
    }
}

// ---- printing ----

fn write_stage(f: &mut fmt::Formatter<'_>, key: &str, s: &StageSpec) -> fmt::Result {
    write!(f, "{key}={} kind={}", s.stage_id, s.kind.as_str())?;
    if let Some(i) = &s.input {
        write!(f, " input={i}")?;
    }
    if let Some(o) = &s.output {
        write!(f, " output={o}")?;
    }
    write!(f, " affinity={} transform={}", s.affinity.as_str(), s.transform)
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name={}", self.name)?;
        writeln!(f, "seed={}", self.seed)?;
        writeln!(f, "run_until={}", self.run_until)?;
        writeln!(f, "re_replication={}", self.re_replication)?;
        writeln!(f, "batch={}", self.batch)?;
        writeln!(
            f,
            "edge_lan={} cloud_lan={} wan={}",
            self.net.edge_lan, self.net.cloud_lan, self.net.wan
        )?;
        writeln!(f, "\n[nodes]")?;
        for n in &self.nodes {
            writeln!(f, "id={} cluster={} role={}", n.node_id, n.cluster, n.role.as_str())?;
        }
        writeln!(f, "\n[topics]")?;
        for t in &self.topics {
            writeln!(f, "id={} cluster={} rf={}", t.id, t.cluster, t.rf)?;
        }
        writeln!(f, "\n[pipeline]")?;
        for s in &self.pipeline.stages {
            write_stage(f, "stage", s)?;
            writeln!(f)?;
        }
        writeln!(f, "\n[workload]")?;
        for w in &self.workload {
            match w {
                Workload::Generate {
                    at,
                    stage,
                    count,
                    every,
                    times,
                } => {
                    write!(f, "at={at} generate={stage} count={count}")?;
                    if *times > 1 || *every > 0 {
                        write!(f, " every={every} times={times}")?;
                    }
                }
                Workload::Rewire { at, entry } => {
                    write!(f, "at={at} ")?;
                    write_stage(f, "rewire", &entry.spec)?;
                    if let Some(o) = entry.offset {
                        write!(f, " offset={o}")?;
                    }
                }
            }
            writeln!(f)?;
        }
        writeln!(f, "\n[faults]")?;
        for e in &self.faults {
            let (k, v) = match &e.action {
                FaultAction::Crash(n) => ("crash", n.clone()),
                FaultAction::Restart(n) => ("restart", n.clone()),
                FaultAction::Partition(d) => ("partition", d.to_string()),
                FaultAction::Heal(d) => ("heal", d.to_string()),
            };
            writeln!(f, "at={} {k}={v}", e.at)?;
        }
        writeln!(f, "\n[checks]")?;
        for c in &self.checks {
            write!(f, "check={}", c.name)?;
            for (k, v) in &c.args {
                write!(f, " {k}={v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
