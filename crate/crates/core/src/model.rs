//! Protocols, configurations and single-step semantics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("{field}: unknown state '{state}'")]
    UnknownState { field: String, state: String },

    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },

    #[error("input arity mismatch: expected {expected} values, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("transition {0} is not enabled")]
    NotEnabled(String),

    #[error("no transition for pair ({0}, {1})")]
    UnknownTransition(String, String),

    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ModelError {
    ModelError::Invalid { field: field.into(), msg: msg.into() }
}

/// A non-silent interaction `(pre.0, pre.1) -> (post.0, post.1)` over state indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transition {
    pub pre: (usize, usize),
    pub post: (usize, usize),
}

/// Agent counts indexed by the protocol's state order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Configuration(pub Vec<u64>);

impl Configuration {
    pub fn zero(n: usize) -> Self {
        Configuration(vec![0; n])
    }

    pub fn size(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn get(&self, q: usize) -> u64 {
        self.0[q]
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }
}

impl From<Vec<u64>> for Configuration {
    fn from(v: Vec<u64>) -> Self {
        Configuration(v)
    }
}

/// Input values indexed by the protocol's input-variable order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InputVector(pub Vec<u64>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Protocol {
    states: Vec<String>,
    outputs: Vec<u8>,
    input_vars: Vec<String>,
    input_state: Vec<usize>,
    leaders: Vec<u64>,
    transitions: Vec<Transition>,
    index: HashMap<String, usize>,
    by_pair: HashMap<(usize, usize), usize>,
}

/// State names double as formula variables; `_` prefixes are reserved for
/// auxiliary variables and `'` marks successor configurations.
pub fn valid_state_name(name: &str) -> bool {
    presburger::is_identifier(name) && !name.starts_with('_') && !name.contains('\'')
}

impl Protocol {
    /// Builds and validates a protocol from named parts.
    pub fn new(
        states: Vec<String>,
        outputs: &BTreeMap<String, u8>,
        inputs: &[(String, String)],
        leaders: &BTreeMap<String, u64>,
        transitions: &[[String; 4]],
    ) -> Result<Protocol, ModelError> {
        let mut index = HashMap::new();
        for (i, s) in states.iter().enumerate() {
            if !valid_state_name(s) {
                return Err(invalid(format!("states[{i}]"), format!("'{s}' is not a valid state name")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(invalid(format!("states[{i}]"), format!("duplicate state '{s}'")));
            }
        }
        let lookup = |field: String, name: &str| -> Result<usize, ModelError> {
            index.get(name).copied().ok_or_else(|| ModelError::UnknownState { field, state: name.to_string() })
        };
        for name in outputs.keys() {
            lookup(format!("outputs.{name}"), name)?;
        }
        let mut out = Vec::with_capacity(states.len());
        for s in &states {
            match outputs.get(s) {
                Some(&b) if b <= 1 => out.push(b),
                Some(&b) => return Err(invalid(format!("outputs.{s}"), format!("output must be 0 or 1, got {b}"))),
                None => return Err(invalid("outputs", format!("missing output for state '{s}'"))),
            }
        }
        let mut input_vars = Vec::new();
        let mut input_state = Vec::new();
        for (v, q) in inputs {
            if !presburger::is_identifier(v) || v.starts_with('_') || v.contains('\'') {
                return Err(invalid(format!("inputs.{v}"), "not a valid variable name"));
            }
            if input_vars.contains(v) {
                return Err(invalid(format!("inputs.{v}"), "duplicate input variable"));
            }
            input_vars.push(v.clone());
            input_state.push(lookup(format!("inputs.{v}"), q)?);
        }
        let mut lead = vec![0u64; states.len()];
        for (q, c) in leaders {
            lead[lookup(format!("leaders.{q}"), q)?] = *c;
        }
        let mut ts = Vec::new();
        let mut by_pair = HashMap::new();
        for (i, t) in transitions.iter().enumerate() {
            let mut idx = [0usize; 4];
            for k in 0..4 {
                idx[k] = lookup(format!("transitions[{i}][{k}]"), &t[k])?;
            }
            let tr = Transition { pre: (idx[0], idx[1]), post: (idx[2], idx[3]) };
            if tr.pre == tr.post {
                return Err(invalid(format!("transitions[{i}]"), "silent transitions are represented by omission"));
            }
            if by_pair.insert(tr.pre, ts.len()).is_some() {
                return Err(invalid(
                    format!("transitions[{i}]"),
                    format!("duplicate transition for pair ({}, {})", t[0], t[1]),
                ));
            }
            ts.push(tr);
        }
        Ok(Protocol { states, outputs: out, input_vars, input_state, leaders: lead, transitions: ts, index, by_pair })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn output(&self, q: usize) -> u8 {
        self.outputs[q]
    }

    pub fn input_vars(&self) -> &[String] {
        &self.input_vars
    }

    pub fn input_state(&self, var: usize) -> usize {
        self.input_state[var]
    }

    pub fn leaders(&self) -> &[u64] {
        &self.leaders
    }

    pub fn has_leaders(&self) -> bool {
        self.leaders.iter().any(|&c| c > 0)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transition_for(&self, q1: usize, q2: usize) -> Option<usize> {
        self.by_pair.get(&(q1, q2)).copied()
    }

    /// Human-readable form `a, b -> c, d`.
    pub fn transition_name(&self, t: usize) -> String {
        let tr = &self.transitions[t];
        format!(
            "{}, {} -> {}, {}",
            self.states[tr.pre.0], self.states[tr.pre.1], self.states[tr.post.0], self.states[tr.post.1]
        )
    }

    /// Per-state demand of a transition.
    pub fn pre_vector(&self, t: usize) -> Vec<u64> {
        let tr = &self.transitions[t];
        let mut v = vec![0; self.states.len()];
        v[tr.pre.0] += 1;
        v[tr.pre.1] += 1;
        v
    }

    /// Effect `post - pre` of a transition.
    pub fn delta(&self, t: usize) -> Vec<i64> {
        let tr = &self.transitions[t];
        let mut v = vec![0i64; self.states.len()];
        v[tr.pre.0] -= 1;
        v[tr.pre.1] -= 1;
        v[tr.post.0] += 1;
        v[tr.post.1] += 1;
        v
    }

    /// Transitions whose effect is nonzero.
    pub fn effective_transitions(&self) -> Vec<usize> {
        (0..self.transitions.len()).filter(|&t| self.delta(t).iter().any(|&d| d != 0)).collect()
    }

    pub fn initial_config(&self, v: &InputVector) -> Result<Configuration, ModelError> {
        if v.0.len() != self.input_vars.len() {
            return Err(ModelError::Arity { expected: self.input_vars.len(), got: v.0.len() });
        }
        let mut c = self.leaders.clone();
        for (i, &n) in v.0.iter().enumerate() {
            c[self.input_state[i]] += n;
        }
        Ok(Configuration(c))
    }

    pub fn enabled(&self, c: &Configuration, t: usize) -> bool {
        let (a, b) = self.transitions[t].pre;
        if a == b {
            c.0[a] >= 2
        } else {
            c.0[a] >= 1 && c.0[b] >= 1
        }
    }

    /// `enabled` addressed by state pair.
    pub fn enabled_pair(&self, c: &Configuration, q1: usize, q2: usize) -> Result<bool, ModelError> {
        match self.transition_for(q1, q2) {
            Some(t) => Ok(self.enabled(c, t)),
            None => Err(ModelError::UnknownTransition(
                self.states.get(q1).cloned().unwrap_or_default(),
                self.states.get(q2).cloned().unwrap_or_default(),
            )),
        }
    }

    pub fn apply(&self, c: &Configuration, t: usize) -> Result<Configuration, ModelError> {
        if !self.enabled(c, t) {
            return Err(ModelError::NotEnabled(self.transition_name(t)));
        }
        Ok(self.fire(c, t))
    }

    /// `apply` without the enabledness check.
    pub(crate) fn fire(&self, c: &Configuration, t: usize) -> Configuration {
        let tr = &self.transitions[t];
        let mut v = c.0.clone();
        v[tr.pre.0] -= 1;
        v[tr.pre.1] -= 1;
        v[tr.post.0] += 1;
        v[tr.post.1] += 1;
        Configuration(v)
    }

    /// One-step successors; contains `c` itself whenever `|c| ≥ 2` and is `{c}` otherwise.
    pub fn successors(&self, c: &Configuration) -> BTreeSet<Configuration> {
        let mut out = BTreeSet::new();
        out.insert(c.clone());
        if c.size() < 2 {
            return out;
        }
        for t in 0..self.transitions.len() {
            if self.enabled(c, t) {
                out.insert(self.fire(c, t));
            }
        }
        out
    }

    /// `Some(b)` if every populated state outputs `b`; the empty configuration is a 1-consensus.
    pub fn consensus_of(&self, c: &Configuration) -> Option<u8> {
        let mut seen: Option<u8> = None;
        for (q, &n) in c.0.iter().enumerate() {
            if n == 0 {
                continue;
            }
            match seen {
                None => seen = Some(self.outputs[q]),
                Some(b) if b != self.outputs[q] => return None,
                _ => {}
            }
        }
        Some(seen.unwrap_or(1))
    }

    /// Parses `name:count` pairs or a bare vector, e.g. `AY:2,AN:1` or `2,1,0,0`.
    pub fn parse_config(&self, text: &str) -> Result<Configuration, ModelError> {
        let mut c = vec![0u64; self.states.len()];
        let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if parts.iter().all(|p| !p.contains(':') && !p.contains('=')) {
            if parts.len() != self.states.len() {
                return Err(ModelError::Arity { expected: self.states.len(), got: parts.len() });
            }
            for (i, p) in parts.iter().enumerate() {
                c[i] = p.parse().map_err(|_| invalid("configuration", format!("bad count '{p}'")))?;
            }
            return Ok(Configuration(c));
        }
        for p in parts {
            let (name, n) = p
                .split_once([':', '='])
                .ok_or_else(|| invalid("configuration", format!("expected state:count, got '{p}'")))?;
            let q = self
                .state_index(name.trim())
                .ok_or_else(|| ModelError::UnknownState { field: "configuration".into(), state: name.trim().into() })?;
            c[q] = n.trim().parse().map_err(|_| invalid("configuration", format!("bad count '{n}'")))?;
        }
        Ok(Configuration(c))
    }

    /// `count*state` terms separated by spaces, zero entries omitted.
    pub fn format_config(&self, c: &Configuration) -> String {
        let parts: Vec<String> =
            c.0.iter().enumerate().filter(|(_, &n)| n > 0).map(|(q, n)| format!("{}*{}", n, self.states[q])).collect();
        if parts.is_empty() {
            "empty".into()
        } else {
            parts.join(" ")
        }
    }

    pub fn config_map(&self, c: &Configuration) -> BTreeMap<String, u64> {
        self.states.iter().cloned().zip(c.0.iter().copied()).collect()
    }

    pub fn from_json_value(v: &Value) -> Result<Protocol, ModelError> {
        let obj = v.as_object().ok_or_else(|| invalid("$", "expected a JSON object"))?;
        let states: Vec<String> = match obj.get("states") {
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.as_str().map(String::from).ok_or_else(|| invalid(format!("states[{i}]"), "expected a string"))
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(invalid("states", "expected an array of state names")),
        };
        let outputs: BTreeMap<String, u8> = match obj.get("outputs") {
            Some(Value::Object(m)) => m
                .iter()
                .map(|(k, v)| match v.as_u64() {
                    Some(b) if b <= 1 => Ok((k.clone(), b as u8)),
                    _ => Err(invalid(format!("outputs.{k}"), "expected 0 or 1")),
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(invalid("outputs", "expected an object mapping states to 0|1")),
        };
        let inputs: Vec<(String, String)> = match obj.get("inputs") {
            Some(Value::Object(m)) => m
                .iter()
                .map(|(k, v)| match v.as_str() {
                    Some(s) => Ok((k.clone(), s.to_string())),
                    None => Err(invalid(format!("inputs.{k}"), "expected a state name")),
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(invalid("inputs", "expected an object mapping variables to states")),
        };
        let leaders: BTreeMap<String, u64> = match obj.get("leaders") {
            None | Some(Value::Null) => BTreeMap::new(),
            Some(Value::Object(m)) => m
                .iter()
                .map(|(k, v)| match v.as_u64() {
                    Some(n) => Ok((k.clone(), n)),
                    None => Err(invalid(format!("leaders.{k}"), "expected a natural number")),
                })
                .collect::<Result<_, _>>()?,
            _ => return Err(invalid("leaders", "expected an object mapping states to counts")),
        };
        let transitions: Vec<[String; 4]> = match obj.get("transitions") {
            Some(Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let arr = t
                        .as_array()
                        .filter(|a| a.len() == 4)
                        .ok_or_else(|| invalid(format!("transitions[{i}]"), "expected [q1, q2, q1', q2']"))?;
                    let mut out: [String; 4] = Default::default();
                    for (k, s) in arr.iter().enumerate() {
                        out[k] = s
                            .as_str()
                            .ok_or_else(|| invalid(format!("transitions[{i}][{k}]"), "expected a state name"))?
                            .to_string();
                    }
                    Ok(out)
                })
                .collect::<Result<_, ModelError>>()?,
            _ => return Err(invalid("transitions", "expected an array of transitions")),
        };
        for key in obj.keys() {
            if !matches!(key.as_str(), "states" | "outputs" | "inputs" | "leaders" | "transitions" | "name") {
                return Err(invalid(key.clone(), "unknown field"));
            }
        }
        Protocol::new(states, &outputs, &inputs, &leaders, &transitions)
    }

    pub fn from_json_str(text: &str) -> Result<Protocol, ModelError> {
        let v: Value = serde_json::from_str(text).map_err(|e| invalid("$", e.to_string()))?;
        Protocol::from_json_value(&v)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Protocol, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Protocol::from_json_str(&text)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("states".into(), Value::from(self.states.clone()));
        let mut outs = Map::new();
        for (q, s) in self.states.iter().enumerate() {
            outs.insert(s.clone(), Value::from(self.outputs[q]));
        }
        obj.insert("outputs".into(), Value::Object(outs));
        let mut ins = Map::new();
        for (i, v) in self.input_vars.iter().enumerate() {
            ins.insert(v.clone(), Value::from(self.states[self.input_state[i]].clone()));
        }
        obj.insert("inputs".into(), Value::Object(ins));
        let mut lead = Map::new();
        for (q, &c) in self.leaders.iter().enumerate() {
            if c > 0 {
                lead.insert(self.states[q].clone(), Value::from(c));
            }
        }
        obj.insert("leaders".into(), Value::Object(lead));
        let ts: Vec<Value> = self
            .transitions
            .iter()
            .map(|t| {
                Value::from(vec![
                    self.states[t.pre.0].clone(),
                    self.states[t.pre.1].clone(),
                    self.states[t.post.0].clone(),
                    self.states[t.post.1].clone(),
                ])
            })
            .collect();
        obj.insert("transitions".into(), Value::Array(ts));
        Value::Object(obj)
    }

    /// Copy of the protocol without transition `t`.
    pub fn without_transition(&self, t: usize) -> Protocol {
        let mut p = self.clone();
        p.transitions.remove(t);
        p.by_pair = p.transitions.iter().enumerate().map(|(i, tr)| (tr.pre, i)).collect();
        p
    }
}

/// Displays a configuration as `(n0, n1, ...)`.
impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", n)?;
        }
        write!(f, ")")
    }
}
