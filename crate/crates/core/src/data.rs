//! Longitudinal trajectory containers, transition pooling and CSV ingestion.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `N` individuals observed at steps `t = 0..=T`, each step a (state, action, outcome) triple.
///
/// Arrays are stored flat in individual-major order: entry `(i, t)` lives at `i * (T + 1) + t`,
/// and states carry `state_dim` consecutive values per entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrajectoryDataset<T: Scalar> {
    states: Vec<T>,
    actions: Vec<usize>,
    outcomes: Vec<T>,
    n_individuals: usize,
    horizon: usize,
    state_dim: usize,
    n_actions: usize,
    ids: Vec<String>,
    action_labels: Vec<String>,
}

impl<T: Scalar> TrajectoryDataset<T> {
    pub fn new(
        n_individuals: usize,
        horizon: usize,
        state_dim: usize,
        n_actions: usize,
        states: Vec<T>,
        actions: Vec<usize>,
        outcomes: Vec<T>,
    ) -> Result<Self> {
        if n_individuals < 1 || horizon < 1 || state_dim < 1 {
            return Err(Error::Shape(format!(
                "need N >= 1, T >= 1, p >= 1 (got N={n_individuals}, T={horizon}, p={state_dim})"
            )));
        }
        if n_actions < 2 {
            return Err(Error::Shape(format!("need at least 2 actions, got {n_actions}")));
        }
        let cells = n_individuals * (horizon + 1);
        if actions.len() != cells || outcomes.len() != cells || states.len() != cells * state_dim {
            return Err(Error::Shape(format!(
                "arrays must share the N x (T+1) = {cells} leading shape (states {}, actions {}, outcomes {})",
                states.len(),
                actions.len(),
                outcomes.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::Shape(format!("action {a} outside [0, {n_actions})")));
        }
        if states.iter().chain(outcomes.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("states and outcomes must be finite".into()));
        }
        Ok(Self {
            states,
            actions,
            outcomes,
            n_individuals,
            horizon,
            state_dim,
            n_actions,
            ids: (0..n_individuals).map(|i| i.to_string()).collect(),
            action_labels: (0..n_actions).map(|a| a.to_string()).collect(),
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_individuals {
            return Err(Error::Shape(format!(
                "{} ids for {} individuals",
                ids.len(),
                self.n_individuals
            )));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn with_action_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_actions {
            return Err(Error::Shape(format!(
                "{} action labels for {} actions",
                labels.len(),
                self.n_actions
            )));
        }
        self.action_labels = labels;
        Ok(self)
    }

    pub fn n_individuals(&self) -> usize {
        self.n_individuals
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of observed steps per individual, `T + 1`.
    pub fn steps(&self) -> usize {
        self.horizon + 1
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Total number of (i, t) cells, `N * (T + 1)`.
    pub fn n_cells(&self) -> usize {
        self.n_individuals * self.steps()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn action_labels(&self) -> &[String] {
        &self.action_labels
    }

    #[inline]
    pub fn cell(&self, i: usize, t: usize) -> usize {
        debug_assert!(i < self.n_individuals && t <= self.horizon);
        i * self.steps() + t
    }

    pub fn state(&self, i: usize, t: usize) -> &[T] {
        self.state_at(self.cell(i, t))
    }

    pub fn action(&self, i: usize, t: usize) -> usize {
        self.actions[self.cell(i, t)]
    }

    pub fn outcome(&self, i: usize, t: usize) -> T {
        self.outcomes[self.cell(i, t)]
    }

    /// State of a flat cell index.
    pub fn state_at(&self, cell: usize) -> &[T] {
        &self.states[cell * self.state_dim..(cell + 1) * self.state_dim]
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn outcomes(&self) -> &[T] {
        &self.outcomes
    }

    /// Counts of each action over all cells.
    pub fn action_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_actions];
        for &a in &self.actions {
            counts[a] += 1;
        }
        counts
    }

    /// Restricts the dataset to a subset of individuals, in the given order.
    pub fn select_individuals(&self, individuals: &[usize]) -> Result<Self> {
        let steps = self.steps();
        let mut states = Vec::with_capacity(individuals.len() * steps * self.state_dim);
        let mut actions = Vec::with_capacity(individuals.len() * steps);
        let mut outcomes = Vec::with_capacity(individuals.len() * steps);
        let mut ids = Vec::with_capacity(individuals.len());
        for &i in individuals {
            let lo = self.cell(i, 0);
            states.extend_from_slice(&self.states[lo * self.state_dim..(lo + steps) * self.state_dim]);
            actions.extend_from_slice(&self.actions[lo..lo + steps]);
            outcomes.extend_from_slice(&self.outcomes[lo..lo + steps]);
            ids.push(self.ids[i].clone());
        }
        Self::new(
            individuals.len(),
            self.horizon,
            self.state_dim,
            self.n_actions,
            states,
            actions,
            outcomes,
        )?
        .with_ids(ids)?
        .with_action_labels(self.action_labels.clone())
    }
}

/// Pooled `(state, action, utility, next_state)` tuples over all individuals and steps `t < T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch<T: Scalar> {
    state: Vec<T>,
    action: Vec<usize>,
    utility: Vec<T>,
    next_state: Vec<T>,
    source: Vec<(usize, usize)>,
    state_dim: usize,
    n_actions: usize,
}

impl<T: Scalar> TransitionBatch<T> {
    /// Builds a batch directly from its columns, for data that did not come from a
    /// [`TrajectoryDataset`]. Sources are numbered `(k, 0)`.
    pub fn from_columns(
        state_dim: usize,
        n_actions: usize,
        state: Vec<T>,
        action: Vec<usize>,
        utility: Vec<T>,
        next_state: Vec<T>,
    ) -> Result<Self> {
        let n = action.len();
        if n == 0 {
            return Err(Error::Shape("transition batch is empty".into()));
        }
        if utility.len() != n || state.len() != n * state_dim || next_state.len() != n * state_dim {
            return Err(Error::Shape("transition columns disagree in length".into()));
        }
        if let Some(&a) = action.iter().find(|&&a| a >= n_actions) {
            return Err(Error::Shape(format!("action {a} outside [0, {n_actions})")));
        }
        Ok(Self {
            state,
            action,
            utility,
            next_state,
            source: (0..n).map(|k| (k, 0)).collect(),
            state_dim,
            n_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.state[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn next_state(&self, k: usize) -> &[T] {
        &self.next_state[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn action(&self, k: usize) -> usize {
        self.action[k]
    }

    pub fn utility(&self, k: usize) -> T {
        self.utility[k]
    }

    pub fn actions(&self) -> &[usize] {
        &self.action
    }

    pub fn utilities(&self) -> &[T] {
        &self.utility
    }

    pub fn states(&self) -> &[T] {
        &self.state
    }

    pub fn next_states(&self) -> &[T] {
        &self.next_state
    }

    /// `(individual, step)` each row was pooled from.
    pub fn source(&self, k: usize) -> (usize, usize) {
        self.source[k]
    }

    /// Same transitions with a different utility column.
    pub fn with_utilities(&self, utility: Vec<T>) -> Result<Self> {
        if utility.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} utilities for {} transitions",
                utility.len(),
                self.len()
            )));
        }
        Ok(Self {
            utility,
            ..self.clone()
        })
    }

    /// Regroups pooled rows by individual: for each individual, the `T + 1` states and the `T`
    /// actions taken at the source steps.
    pub fn unpool(&self) -> Vec<(Vec<Vec<T>>, Vec<usize>)> {
        let mut by_individual: Vec<Vec<usize>> = Vec::new();
        for (k, &(i, _)) in self.source.iter().enumerate() {
            if by_individual.len() <= i {
                by_individual.resize(i + 1, Vec::new());
            }
            by_individual[i].push(k);
        }
        by_individual
            .into_iter()
            .map(|mut rows| {
                rows.sort_by_key(|&k| self.source[k].1);
                let mut states: Vec<Vec<T>> = rows.iter().map(|&k| self.state(k).to_vec()).collect();
                if let Some(&last) = rows.last() {
                    states.push(self.next_state(last).to_vec());
                }
                let actions = rows.iter().map(|&k| self.action[k]).collect();
                (states, actions)
            })
            .collect()
    }
}

/// Flattens a dataset into `N * T` transitions; the utility of row `(i, t)` is taken from
/// `utilities[i * (T + 1) + t]`. The final step of each trajectory has no successor and is not
/// a source row.
pub fn pool_transitions<T: Scalar>(
    data: &TrajectoryDataset<T>,
    utilities: &[T],
) -> Result<TransitionBatch<T>> {
    if utilities.len() != data.n_cells() {
        return Err(Error::Shape(format!(
            "utilities have {} entries, dataset has N x (T+1) = {}",
            utilities.len(),
            data.n_cells()
        )));
    }
    let (n_ind, horizon, p) = (data.n_individuals(), data.horizon(), data.state_dim());
    let n = n_ind * horizon;
    let mut batch = TransitionBatch {
        state: Vec::with_capacity(n * p),
        action: Vec::with_capacity(n),
        utility: Vec::with_capacity(n),
        next_state: Vec::with_capacity(n * p),
        source: Vec::with_capacity(n),
        state_dim: p,
        n_actions: data.n_actions(),
    };
    for i in 0..n_ind {
        for t in 0..horizon {
            let cell = data.cell(i, t);
            batch.state.extend_from_slice(data.state_at(cell));
            batch.next_state.extend_from_slice(data.state_at(cell + 1));
            batch.action.push(data.actions()[cell]);
            batch.utility.push(utilities[cell]);
            batch.source.push((i, t));
        }
    }
    Ok(batch)
}

/// Column roles of a longitudinal CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub id: String,
    pub time: String,
    /// State columns, in order. Empty means every header named `x_<k>`, ordered by `k`.
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub outcome: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "t".into(),
            states: Vec::new(),
            actions: vec!["action".into()],
            outcome: "y".into(),
        }
    }
}

/// A group of raw values that map to one code of a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGroup {
    pub values: Vec<String>,
    pub code: usize,
}

/// Per-column recoding of raw action values; the column contributes `weight * code`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRule {
    pub column: String,
    pub weight: usize,
    pub groups: Vec<ValueGroup>,
}

/// How raw action columns become dense action codes `0..n_actions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActionMapping {
    /// A single integer column used as-is. `n_actions` defaults to `max code + 1`.
    #[default]
    Identity,
    IdentityWithCount {
        n_actions: usize,
    },
    /// Weighted sum of recoded columns.
    Rules { columns: Vec<ColumnRule> },
}

impl ActionMapping {
    /// Builds and validates a rule mapping; the combined codes must be exactly `0..n_actions`.
    pub fn rules(columns: Vec<ColumnRule>) -> Result<Self> {
        let mapping = ActionMapping::Rules { columns };
        mapping.validate()?;
        Ok(mapping)
    }

    pub fn validate(&self) -> Result<()> {
        let ActionMapping::Rules { columns } = self else {
            return Ok(());
        };
        if columns.is_empty() {
            return Err(Error::Mapping("rule mapping needs at least one column".into()));
        }
        let mut combined = vec![0usize];
        for rule in columns {
            let mut seen = HashMap::new();
            for g in &rule.groups {
                for v in &g.values {
                    if seen.insert(v.as_str(), g.code).is_some() {
                        return Err(Error::Mapping(format!(
                            "value {v:?} of column {} appears in more than one group",
                            rule.column
                        )));
                    }
                }
            }
            let codes: BTreeSet<usize> = rule.groups.iter().map(|g| g.code).collect();
            combined = combined
                .iter()
                .flat_map(|&c| codes.iter().map(move |&k| c + rule.weight * k))
                .collect();
        }
        combined.sort_unstable();
        if combined.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(Error::Mapping(format!(
                "combined codes {combined:?} are not a contiguous one-to-one range 0..{}",
                combined.len()
            )));
        }
        if combined.len() < 2 {
            return Err(Error::Mapping("mapping yields fewer than 2 actions".into()));
        }
        Ok(())
    }

    fn action_columns<'a>(&'a self, schema: &'a CsvSchema) -> Vec<&'a str> {
        match self {
            ActionMapping::Rules { columns } => columns.iter().map(|c| c.column.as_str()).collect(),
            _ => schema.actions.iter().map(String::as_str).collect(),
        }
    }

    /// Maps the raw values of the action columns (in `action_columns` order) to a code.
    fn encode(&self, raw: &[&str]) -> Result<usize> {
        match self {
            ActionMapping::Identity | ActionMapping::IdentityWithCount { .. } => {
                let v = raw[0].trim();
                v.parse::<usize>()
                    .map_err(|_| Error::Mapping(format!("action value {v:?} is not a nonnegative integer")))
            }
            ActionMapping::Rules { columns } => {
                let mut code = 0;
                for (rule, v) in columns.iter().zip(raw) {
                    let v = v.trim();
                    let group = rule
                        .groups
                        .iter()
                        .find(|g| g.values.iter().any(|x| x == v))
                        .ok_or_else(|| {
                            Error::Mapping(format!("value {v:?} of column {} matches no rule", rule.column))
                        })?;
                    code += rule.weight * group.code;
                }
                Ok(code)
            }
        }
    }

    fn n_actions(&self, observed_max: usize) -> usize {
        match self {
            ActionMapping::Identity => observed_max + 1,
            ActionMapping::IdentityWithCount { n_actions } => *n_actions,
            ActionMapping::Rules { columns } => columns
                .iter()
                .map(|c| c.groups.iter().map(|g| g.code).collect::<BTreeSet<_>>().len())
                .product(),
        }
    }

    /// Human-readable label per code.
    fn labels(&self, n_actions: usize) -> Vec<String> {
        match self {
            ActionMapping::Rules { columns } => (0..n_actions)
                .map(|code| {
                    let mut rest = code;
                    let mut parts = Vec::new();
                    // Decompose from the largest weight down; codes are a bijection so this is exact.
                    let mut order: Vec<&ColumnRule> = columns.iter().collect();
                    order.sort_by_key(|c| std::cmp::Reverse(c.weight));
                    for rule in order {
                        let k = if rule.weight == 0 { 0 } else { rest / rule.weight };
                        rest -= k * rule.weight;
                        let values = rule
                            .groups
                            .iter()
                            .find(|g| g.code == k)
                            .map(|g| g.values.join("/"))
                            .unwrap_or_default();
                        parts.push(format!("{}={}", rule.column, values));
                    }
                    parts.join(";")
                })
                .collect(),
            _ => (0..n_actions).map(|a| a.to_string()).collect(),
        }
    }
}

/// Reads a longitudinal CSV (one row per id x time) into a dataset.
pub fn load_longitudinal_csv<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    mapping: &ActionMapping,
) -> Result<TrajectoryDataset<T>> {
    let file = std::fs::File::open(path)?;
    read_longitudinal_csv(file, schema, mapping)
}

pub fn read_longitudinal_csv<T: Scalar, R: Read>(
    reader: R,
    schema: &CsvSchema,
    mapping: &ActionMapping,
) -> Result<TrajectoryDataset<T>> {
    mapping.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let id_col = find(&schema.id)?;
    let time_col = find(&schema.time)?;
    let outcome_col = find(&schema.outcome)?;
    let state_cols: Vec<usize> = if schema.states.is_empty() {
        let mut numbered: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(c, h)| h.trim().strip_prefix("x_")?.parse().ok().map(|k: usize| (k, c)))
            .collect();
        numbered.sort_unstable();
        numbered.into_iter().map(|(_, c)| c).collect()
    } else {
        schema.states.iter().map(|s| find(s)).collect::<Result<_>>()?
    };
    if state_cols.is_empty() {
        return Err(Error::Schema("no state columns".into()));
    }
    let action_cols: Vec<usize> = mapping
        .action_columns(schema)
        .into_iter()
        .map(find)
        .collect::<Result<_>>()?;
    if action_cols.is_empty() {
        return Err(Error::Schema("no action columns".into()));
    }

    struct Row<T> {
        time: usize,
        state: Vec<T>,
        action: usize,
        outcome: T,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Row<T>>> = HashMap::new();
    let parse_float = |rec: &csv::StringRecord, c: usize, line: usize| -> Result<T> {
        let raw = rec.get(c).unwrap_or("").trim();
        if raw.is_empty() {
            return Err(Error::Schema(format!("missing value in column {:?} at record {line}", &headers[c])));
        }
        raw.parse::<f64>()
            .map(T::of)
            .map_err(|_| Error::Schema(format!("non-numeric value {raw:?} in column {:?} at record {line}", &headers[c])))
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Schema(format!("missing id at record {line}")));
        }
        let raw_t = rec.get(time_col).unwrap_or("").trim();
        let time: usize = raw_t
            .parse()
            .map_err(|_| Error::Schema(format!("time {raw_t:?} at record {line} is not a nonnegative integer")))?;
        let state = state_cols
            .iter()
            .map(|&c| parse_float(&rec, c, line))
            .collect::<Result<Vec<T>>>()?;
        let raw_actions: Vec<&str> = action_cols.iter().map(|&c| rec.get(c).unwrap_or("")).collect();
        if raw_actions.iter().any(|v| v.trim().is_empty()) {
            return Err(Error::Schema(format!("missing action value at record {line}")));
        }
        let action = mapping.encode(&raw_actions)?;
        let outcome = parse_float(&rec, outcome_col, line)?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(Row {
            time,
            state,
            action,
            outcome,
        });
    }
    if order.is_empty() {
        return Err(Error::Shape("CSV has no data rows".into()));
    }

    let mut horizon = None;
    let p = state_cols.len();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut outcomes = Vec::new();
    for id in &order {
        let rows = groups.get_mut(id).expect("every ordered id has rows");
        rows.sort_by_key(|r| r.time);
        for (k, r) in rows.iter().enumerate() {
            if r.time != k {
                return Err(Error::Shape(format!(
                    "id {id}: time steps must be unique and contiguous from 0 (found {} at position {k})",
                    r.time
                )));
            }
        }
        let h = rows.len() - 1;
        match horizon {
            None => horizon = Some(h),
            Some(prev) if prev != h => {
                return Err(Error::Shape(format!(
                    "ragged horizons: id {id} has T={h}, expected T={prev}"
                )))
            }
            _ => {}
        }
        for r in rows.iter() {
            states.extend_from_slice(&r.state);
            actions.push(r.action);
            outcomes.push(r.outcome);
        }
    }
    let observed_max = actions.iter().copied().max().unwrap_or(0);
    let n_actions = mapping.n_actions(observed_max);
    if observed_max >= n_actions {
        return Err(Error::Mapping(format!("action code {observed_max} outside [0, {n_actions})")));
    }
    TrajectoryDataset::new(order.len(), horizon.unwrap_or(0), p, n_actions, states, actions, outcomes)?
        .with_ids(order)?
        .with_action_labels(mapping.labels(n_actions))
}

/// Writes the dataset with columns `id,t,x_1..x_p,action,y` (dense action codes).
pub fn write_longitudinal_csv<T: Scalar, W: Write>(data: &TrajectoryDataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "t".to_string()];
    header.extend((1..=data.state_dim()).map(|k| format!("x_{k}")));
    header.push("action".into());
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.n_individuals() {
        for t in 0..data.steps() {
            let mut rec = vec![data.ids()[i].clone(), t.to_string()];
            rec.extend(data.state(i, t).iter().map(|v| v.to_string()));
            rec.push(data.action(i, t).to_string());
            rec.push(data.outcome(i, t).to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_longitudinal_csv<T: Scalar>(data: &TrajectoryDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_longitudinal_csv(data, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrajectoryDataset<f64> {
        // N = 2, T = 2, p = 1
        TrajectoryDataset::new(
            2,
            2,
            1,
            2,
            vec![0.0, 0.1, 0.2, 1.0, 1.1, 1.2],
            vec![0, 1, 0, 1, 1, 0],
            vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
        )
        .unwrap()
    }

    fn hiv_mapping() -> ActionMapping {
        let group = |values: &[&str], code| ValueGroup {
            values: values.iter().map(|s| s.to_string()).collect(),
            code,
        };
        ActionMapping::rules(vec![
            ColumnRule {
                column: "Base".into(),
                weight: 2,
                groups: vec![group(&["0", "1", "2"], 0), group(&["3", "4", "5"], 1)],
            },
            ColumnRule {
                column: "Comp".into(),
                weight: 1,
                groups: vec![group(&["0", "1"], 0), group(&["2", "3"], 1)],
            },
        ])
        .unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(TrajectoryDataset::<f64>::new(1, 1, 1, 2, vec![0.0], vec![0, 0], vec![0.0, 0.0]).is_err());
        assert!(TrajectoryDataset::<f64>::new(1, 1, 1, 1, vec![0.0; 2], vec![0, 0], vec![0.0; 2]).is_err());
        assert!(TrajectoryDataset::<f64>::new(1, 1, 1, 2, vec![0.0; 2], vec![0, 2], vec![0.0; 2]).is_err());
        assert!(TrajectoryDataset::<f64>::new(1, 0, 1, 2, vec![0.0], vec![0], vec![0.0]).is_err());
    }

    #[test]
    fn pool_counts_and_alignment() {
        let d = tiny();
        let b = pool_transitions(&d, d.outcomes()).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.state(1), &[0.1]);
        assert_eq!(b.next_state(1), &[0.2]);
        assert_eq!(b.action(1), 1);
        assert_eq!(b.utility(1), 6.0);
        assert_eq!(b.source(2), (1, 0));
        assert!(pool_transitions(&d, &[0.0; 3]).is_err());
    }

    #[test]
    fn pool_smallest_case() {
        let d = TrajectoryDataset::new(1, 1, 1, 2, vec![3.0, 4.0], vec![1, 0], vec![0.5, 0.7]).unwrap();
        let b = pool_transitions(&d, &[0.25, 0.0]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!((b.state(0), b.action(0), b.utility(0), b.next_state(0)), (&[3.0][..], 1, 0.25, &[4.0][..]));
    }

    #[test]
    fn unpool_reconstructs_sequences() {
        let d = tiny();
        let b = pool_transitions(&d, d.outcomes()).unwrap();
        let seqs = b.unpool();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[1].0, vec![vec![1.0], vec![1.1], vec![1.2]]);
        assert_eq!(seqs[1].1, vec![1, 1]);
    }

    #[test]
    fn rule_mapping_combines_components() {
        let csv = "id,t,x_1,Base,Comp,y\n7,0,0.5,4,1,1.0\n7,1,0.6,0,3,2.0\n";
        let schema = CsvSchema::default();
        let d: TrajectoryDataset<f64> = read_longitudinal_csv(csv.as_bytes(), &schema, &hiv_mapping()).unwrap();
        assert_eq!(d.n_actions(), 4);
        assert_eq!(d.action(0, 0), 2);
        assert_eq!(d.action(0, 1), 1);
        assert_eq!(d.action_labels()[2], "Base=3/4/5;Comp=0/1");
    }

    #[test]
    fn unmapped_value_is_a_mapping_error() {
        let csv = "id,t,x_1,Base,Comp,y\n7,0,0.5,9,1,1.0\n7,1,0.6,0,3,2.0\n";
        let err = read_longitudinal_csv::<f64, _>(csv.as_bytes(), &CsvSchema::default(), &hiv_mapping()).unwrap_err();
        assert!(matches!(err, Error::Mapping(_)), "{err}");
    }

    #[test]
    fn non_contiguous_rules_rejected() {
        let err = ActionMapping::rules(vec![ColumnRule {
            column: "a".into(),
            weight: 1,
            groups: vec![
                ValueGroup { values: vec!["x".into()], code: 0 },
                ValueGroup { values: vec!["y".into()], code: 2 },
            ],
        }])
        .unwrap_err();
        assert!(matches!(err, Error::Mapping(_)));
    }

    #[test]
    fn identity_mapping_passes_through() {
        let csv = "id,t,x_1,action,y\na,0,0.5,1,1.0\na,1,0.6,0,2.0\n";
        let d: TrajectoryDataset<f64> =
            read_longitudinal_csv(csv.as_bytes(), &CsvSchema::default(), &ActionMapping::Identity).unwrap();
        assert_eq!(d.actions(), &[1, 0]);
    }

    #[test]
    fn schema_and_shape_errors() {
        let missing = "id,t,x_1,y\na,0,0.5,1.0\na,1,0.6,2.0\n";
        assert!(matches!(
            read_longitudinal_csv::<f64, _>(missing.as_bytes(), &CsvSchema::default(), &ActionMapping::Identity),
            Err(Error::Schema(_))
        ));
        let ragged = "id,t,x_1,action,y\na,0,0.5,1,1.0\na,1,0.6,0,2.0\nb,0,0.5,1,1.0\nb,1,0.6,0,2.0\nb,2,0.6,0,2.0\n";
        assert!(matches!(
            read_longitudinal_csv::<f64, _>(ragged.as_bytes(), &CsvSchema::default(), &ActionMapping::Identity),
            Err(Error::Shape(_))
        ));
        let gap = "id,t,x_1,action,y\na,0,0.5,1,1.0\na,2,0.6,0,2.0\n";
        assert!(matches!(
            read_longitudinal_csv::<f64, _>(gap.as_bytes(), &CsvSchema::default(), &ActionMapping::Identity),
            Err(Error::Shape(_))
        ));
        let blank = "id,t,x_1,action,y\na,0,,1,1.0\na,1,0.6,0,2.0\n";
        assert!(matches!(
            read_longitudinal_csv::<f64, _>(blank.as_bytes(), &CsvSchema::default(), &ActionMapping::Identity),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn rows_are_grouped_and_sorted() {
        let csv = "id,t,x_1,action,y\nb,1,4,0,4\na,1,2,1,2\na,0,1,0,1\nb,0,3,1,3\n";
        let d: TrajectoryDataset<f64> =
            read_longitudinal_csv(csv.as_bytes(), &CsvSchema::default(), &ActionMapping::Identity).unwrap();
        assert_eq!(d.ids(), &["b".to_string(), "a".to_string()]);
        assert_eq!(d.outcomes(), &[3.0, 4.0, 1.0, 2.0]);
    }
}
