//! Static hyperperiod WCET bound and empirical lag statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codegen::isa::Opcode;
use crate::dag::{CycleError, DagTask, NodeId, NodeKind};
use crate::model::TimeValue;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no cost given for opcode {0}")]
    MissingCost(Opcode),
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("invalid instruction cost table: {0}")]
    BadTable(String),
    #[error("invalid trace: {0}")]
    BadTrace(String),
}

/// Worst-case overhead of each instruction, in nanoseconds. Wait time of
/// DU/WU/WLT is not included; only the cost of issuing them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstrCosts(pub BTreeMap<Opcode, TimeValue>);

impl InstrCosts {
    pub fn zero() -> Self {
        Self::uniform(TimeValue::ZERO)
    }

    pub fn uniform(t: TimeValue) -> Self {
        InstrCosts(Opcode::ALL.iter().map(|&o| (o, t)).collect())
    }

    pub fn with(mut self, op: Opcode, t: TimeValue) -> Self {
        self.0.insert(op, t);
        self
    }

    /// Parses `{"EXE": 1000, "ADDI": 500, ...}` (nanoseconds).
    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        serde_json::from_str(text).map_err(|e| AnalysisError::BadTable(e.to_string()))
    }

    pub fn cost(&self, op: Opcode) -> Result<TimeValue, AnalysisError> {
        self.0.get(&op).copied().ok_or(AnalysisError::MissingCost(op))
    }
}

/// `w(n)`: sync nodes cost only the instructions attributed to them (none,
/// except the tail), dummies their interval, reactions their declared WCET
/// plus the overhead of their instructions.
pub fn node_wcet(
    dag: &DagTask,
    node: NodeId,
    instrs: &[Opcode],
    costs: &InstrCosts,
) -> Result<TimeValue, AnalysisError> {
    let mut overhead = TimeValue::ZERO;
    for &op in instrs {
        overhead = overhead + costs.cost(op)?;
    }
    let n = &dag.nodes[node];
    Ok(match n.kind {
        NodeKind::Sync { .. } => overhead,
        NodeKind::Dummy { interval } => interval,
        NodeKind::Reaction { .. } => n.wcet + overhead,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WcetReport {
    /// `w(n)` per node.
    pub node_wcet: Vec<TimeValue>,
    /// `w̄(n)`: WCET of the longest chain ending in `n`.
    pub upto_wcet: Vec<TimeValue>,
    pub hyperperiod_wcet: TimeValue,
    /// Head-to-tail node sequence realizing the bound.
    pub critical_path: Vec<NodeId>,
}

/// `w̄(n) = w(n) + max over upstream w̄`, where the tail's upstream excludes
/// virtual nodes. `instrs[n]` lists the instructions attributed to node `n`
/// (may be shorter than the node list; missing entries mean none).
pub fn hyperperiod_wcet(
    dag: &DagTask,
    instrs: &[Vec<Opcode>],
    costs: &InstrCosts,
) -> Result<WcetReport, AnalysisError> {
    let order = dag.topo_order()?;
    let preds = dag.predecessors();
    let n = dag.nodes.len();
    let mut w = vec![TimeValue::ZERO; n];
    for (v, wv) in w.iter_mut().enumerate() {
        let ops = instrs.get(v).map(Vec::as_slice).unwrap_or(&[]);
        *wv = node_wcet(dag, v, ops, costs)?;
    }
    let upstream = |v: NodeId| -> Vec<NodeId> {
        let mut ups: Vec<NodeId> = preds[v]
            .iter()
            .copied()
            .filter(|&u| v != dag.tail || dag.nodes[u].is_reaction())
            .collect();
        ups.sort_unstable();
        ups.dedup();
        ups
    };
    let mut wbar = vec![TimeValue::ZERO; n];
    for &v in &order {
        let best = upstream(v).into_iter().map(|u| wbar[u]).max();
        wbar[v] = best.unwrap_or(TimeValue::ZERO).saturating_add(w[v]);
    }
    let mut path = vec![dag.tail];
    let mut cur = dag.tail;
    loop {
        let ups = upstream(cur);
        let Some(&first) = ups.first() else { break };
        let mut pick = first;
        for &u in &ups {
            if wbar[u] > wbar[pick] {
                pick = u;
            }
        }
        path.push(pick);
        cur = pick;
    }
    path.reverse();
    Ok(WcetReport {
        hyperperiod_wcet: wbar[dag.tail],
        node_wcet: w,
        upto_wcet: wbar,
        critical_path: path,
    })
}

/// Length of the DAG with zero instruction overhead: `w̄(tail)`.
pub fn dag_length(dag: &DagTask) -> Result<TimeValue, CycleError> {
    match hyperperiod_wcet(dag, &[], &InstrCosts::zero()) {
        Ok(r) => Ok(r.hyperperiod_wcet),
        Err(AnalysisError::Cycle(c)) => Err(c),
        Err(e) => unreachable!("zero table is complete: {e}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagStats {
    pub count: usize,
    pub avg_us: f64,
    pub max_us: f64,
    /// Population standard deviation.
    pub std_us: f64,
}

impl LagStats {
    fn of(lags_ns: &[i64]) -> Option<Self> {
        if lags_ns.is_empty() {
            return None;
        }
        let us: Vec<f64> = lags_ns.iter().map(|&l| l as f64 / 1_000.0).collect();
        let n = us.len() as f64;
        let avg = us.iter().sum::<f64>() / n;
        let var = us.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / n;
        let max = us.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(LagStats { count: us.len(), avg_us: avg, max_us: max, std_us: var.sqrt() })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LagReport {
    pub overall: Option<LagStats>,
    pub per_reaction: BTreeMap<String, LagStats>,
    /// Samples whose physical start preceded their logical time.
    pub negative: usize,
}

/// Groups `(reaction name, lag in ns)` samples. Lag is physical start time
/// minus logical time.
pub fn lag_statistics<S: AsRef<str>>(samples: impl IntoIterator<Item = (S, i64)>) -> LagReport {
    let mut all = Vec::new();
    let mut groups: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for (name, lag) in samples {
        all.push(lag);
        groups.entry(name.as_ref().to_string()).or_default().push(lag);
    }
    LagReport {
        overall: LagStats::of(&all),
        negative: all.iter().filter(|&&l| l < 0).count(),
        per_reaction: groups
            .into_iter()
            .filter_map(|(k, v)| LagStats::of(&v).map(|s| (k, s)))
            .collect(),
    }
}

impl LagReport {
    /// One row shaped `program,scheduler,avg_us,max_us,std_us`.
    pub fn summary_csv(&self, program: &str, scheduler: &str) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["program", "scheduler", "avg_us", "max_us", "std_us"]).expect("in-memory");
        if let Some(s) = &self.overall {
            w.write_record([
                program.to_string(),
                scheduler.to_string(),
                format!("{:.3}", s.avg_us),
                format!("{:.3}", s.max_us),
                format!("{:.3}", s.std_us),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    /// One row per reaction: `reaction,count,avg_us,max_us,std_us`.
    pub fn per_reaction_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["reaction", "count", "avg_us", "max_us", "std_us"]).expect("in-memory");
        for (name, s) in &self.per_reaction {
            w.write_record([
                name.clone(),
                s.count.to_string(),
                format!("{:.3}", s.avg_us),
                format!("{:.3}", s.max_us),
                format!("{:.3}", s.std_us),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }
}

/// Reads `(reaction, lag_ns)` samples from a VM trace CSV (columns
/// `reactor,reaction,tag_ns,microstep,physical_ns,lag_ns`). Empty input gives
/// no samples.
pub fn read_trace_samples(text: &str) -> Result<Vec<(String, i64)>, AnalysisError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(_) if text.trim().is_empty() => return Ok(Vec::new()),
        Err(e) => return Err(AnalysisError::BadTrace(e.to_string())),
    };
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AnalysisError::BadTrace(format!("missing column `{name}`")))
    };
    let (rc, lc) = (col("reaction")?, col("lag_ns")?);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| AnalysisError::BadTrace(e.to_string()))?;
        let lag = rec[lc]
            .parse::<i64>()
            .map_err(|_| AnalysisError::BadTrace(format!("row {}: bad lag `{}`", k + 2, &rec[lc])))?;
        out.push((rec[rc].to_string(), lag));
    }
    Ok(out)
}
