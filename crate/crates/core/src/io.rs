//! JSON game-spec files.
//!
//! ```json
//! {
//!   "resources": [{ "name": "road", "reward": { "kind": "affine", "intercept": 1, "slope": -1 } }],
//!   "classes": [{
//!     "name": "players",
//!     "mass": 1.0,
//!     "action_rate": 1.0,
//!     "revision_rate": 1.0,
//!     "states": ["s1", "s2"],
//!     "actions": { "s1": ["a1"], "s2": ["a1", "a2"] },
//!     "kernel": { "a1": [[0.7, 0.2], [0.3, 0.8]], "a2": [[0.5, 0.7], [0.5, 0.3]] },
//!     "reward": { "family": "constant", "params": { "value": 1 } }
//!   }]
//! }
//! ```
//!
//! Actions are numbered by first appearance while walking `actions` in state order.
//! Kernels are column-stochastic: `kernel[a][s'][s] = phi(s' | s, a)`. Reward families:
//!
//! - `constant`: `{ "value": x }`
//! - `tabular`: `{ "values": { state: { action: x } } }`; omitted cells are 0 and
//!   `"nan"`, `"inf"`, `"-inf"` are accepted in place of numbers
//! - `congestion`: `{ "usage": { action: [resource names] } }`; omitted actions use nothing
//! - `mac`: `{ "powers": { action: p }, "noise": s2, "coupling": c, "duration": t, "beta": b }`
//!
//! Structural problems (unknown names, ragged matrices, bad types) are load errors with a
//! line and column. Numerical problems (non-stochastic columns, masses) are left to
//! [`validate_game`](crate::game::validate_game).

use std::path::Path;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{ClassSpec, GameSpec};
use crate::reward::{MacReward, Resource, RewardFamily};

/// A real number that may be written as `"nan"`, `"inf"` or `"-inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Num(f64);

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::F(v) => Ok(Num(v)),
            Raw::S(s) => match s.to_ascii_lowercase().as_str() {
                "nan" => Ok(Num(f64::NAN)),
                "inf" | "+inf" | "infinity" => Ok(Num(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(Num(f64::NEG_INFINITY)),
                _ => Err(de::Error::custom(format!("expected a number, \"nan\", \"inf\" or \"-inf\", found \"{s}\""))),
            },
        }
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_nan() {
            s.serialize_str("nan")
        } else if v.is_infinite() {
            s.serialize_str(if v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(v)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MacFile {
    powers: IndexMap<String, f64>,
    noise: f64,
    coupling: f64,
    duration: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
enum RewardFile {
    Constant { value: f64 },
    Tabular { values: IndexMap<String, IndexMap<String, Num>> },
    Congestion { usage: IndexMap<String, Vec<String>> },
    Mac(MacFile),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassFile {
    #[serde(default)]
    name: Option<String>,
    mass: f64,
    action_rate: f64,
    revision_rate: f64,
    states: Vec<String>,
    actions: IndexMap<String, Vec<String>>,
    kernel: IndexMap<String, Vec<Vec<f64>>>,
    reward: RewardFile,
}

/// A class with names resolved to indices; congestion usage still refers to resource names.
struct Resolved {
    spec: ClassSpec,
    usage: Option<Vec<Vec<String>>>,
}

impl<'de> Deserialize<'de> for Resolved {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ClassFile::deserialize(d)?;
        resolve_class(file).map_err(de::Error::custom)
    }
}

fn resolve_class(file: ClassFile) -> std::result::Result<Resolved, String> {
    let n = file.states.len();
    let state_index = |name: &str| file.states.iter().position(|s| s == name);
    for (i, s) in file.states.iter().enumerate() {
        if file.states[..i].contains(s) {
            return Err(format!("state \"{s}\" is listed twice"));
        }
    }
    for state in file.actions.keys() {
        if state_index(state).is_none() {
            return Err(format!("actions: unknown state \"{state}\""));
        }
    }
    let mut actions: Vec<String> = Vec::new();
    let mut admissible = vec![Vec::new(); n];
    for (s, state) in file.states.iter().enumerate() {
        for a in file.actions.get(state).into_iter().flatten() {
            let idx = actions.iter().position(|x| x == a).unwrap_or_else(|| {
                actions.push(a.clone());
                actions.len() - 1
            });
            if admissible[s].contains(&idx) {
                return Err(format!("actions: \"{a}\" is listed twice for state \"{state}\""));
            }
            admissible[s].push(idx);
        }
        admissible[s].sort_unstable();
    }
    let action_index = |name: &str| actions.iter().position(|a| a == name);

    let mut kernels = vec![DMatrix::<f64>::zeros(0, 0); actions.len()];
    for (a, rows) in &file.kernel {
        let idx = action_index(a).ok_or_else(|| format!("kernel: action \"{a}\" is not admissible in any state"))?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(format!("kernel \"{a}\": rows have different lengths"));
        }
        kernels[idx] = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
    }

    let mut usage = None;
    let reward = match file.reward {
        RewardFile::Constant { value } => RewardFamily::Constant { value },
        RewardFile::Tabular { values } => {
            let mut table = vec![vec![0.0; actions.len()]; n];
            for (state, row) in &values {
                let s = state_index(state).ok_or_else(|| format!("reward values: unknown state \"{state}\""))?;
                for (a, v) in row {
                    let idx = action_index(a).ok_or_else(|| format!("reward values: unknown action \"{a}\""))?;
                    table[s][idx] = v.0;
                }
            }
            RewardFamily::Tabular { values: table }
        }
        RewardFile::Congestion { usage: map } => {
            let mut per_action = vec![Vec::new(); actions.len()];
            for (a, rs) in map {
                let idx = action_index(&a).ok_or_else(|| format!("reward usage: unknown action \"{a}\""))?;
                per_action[idx] = rs;
            }
            usage = Some(per_action);
            RewardFamily::Congestion { usage: Vec::new() }
        }
        RewardFile::Mac(m) => {
            let mut powers = vec![0.0; actions.len()];
            for (a, p) in &m.powers {
                let idx = action_index(a).ok_or_else(|| format!("reward powers: unknown action \"{a}\""))?;
                powers[idx] = *p;
            }
            RewardFamily::Mac(MacReward { powers, noise: m.noise, coupling: m.coupling, duration: m.duration, beta: m.beta })
        }
    };

    Ok(Resolved {
        spec: ClassSpec {
            name: file.name.unwrap_or_default(),
            mass: file.mass,
            action_rate: file.action_rate,
            revision_rate: file.revision_rate,
            states: file.states,
            actions,
            admissible,
            kernels,
            reward,
        },
        usage,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFileIn {
    classes: Vec<Resolved>,
    #[serde(default)]
    resources: Vec<Resource>,
}

impl<'de> Deserialize<'de> for GameSpecFile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = SpecFileIn::deserialize(d)?;
        let mut classes = Vec::with_capacity(raw.classes.len());
        for (c, r) in raw.classes.into_iter().enumerate() {
            let mut spec = r.spec;
            if spec.name.is_empty() {
                spec.name = format!("class{c}");
            }
            if let Some(usage) = r.usage {
                let resolved = usage
                    .iter()
                    .map(|names| {
                        names
                            .iter()
                            .map(|n| {
                                raw.resources
                                    .iter()
                                    .position(|res| &res.name == n)
                                    .ok_or_else(|| de::Error::custom(format!("class {c}: unknown resource \"{n}\"")))
                            })
                            .collect::<std::result::Result<Vec<_>, D::Error>>()
                    })
                    .collect::<std::result::Result<Vec<_>, D::Error>>()?;
                spec.reward = RewardFamily::Congestion { usage: resolved };
            }
            classes.push(spec);
        }
        Ok(GameSpecFile(GameSpec { classes, resources: raw.resources }))
    }
}

struct GameSpecFile(GameSpec);

/// Parses a spec from JSON text. Errors carry the JSON path, line and column.
pub fn parse_spec(text: &str) -> Result<GameSpec> {
    let mut de = serde_json::Deserializer::from_str(text);
    let parsed: std::result::Result<GameSpecFile, _> = serde_path_to_error::deserialize(&mut de);
    let spec = parsed.map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Schema { path, line: inner.line(), column: inner.column(), message: strip_position(&inner.to_string()) }
    })?;
    de.end().map_err(|e| Error::Schema {
        path: ".".into(),
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })?;
    Ok(spec.0)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<GameSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_spec(&text)
}

#[derive(Serialize)]
struct SpecFileOut {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    resources: Vec<Resource>,
    classes: Vec<ClassFile>,
}

/// Writes a spec in the file format. Custom rewards have no file form.
pub fn spec_to_json(spec: &GameSpec) -> Result<String> {
    let mut classes = Vec::with_capacity(spec.classes.len());
    for c in &spec.classes {
        let mut actions = IndexMap::new();
        for (s, acts) in c.admissible.iter().enumerate() {
            actions.insert(c.states[s].clone(), acts.iter().map(|&a| c.actions[a].clone()).collect());
        }
        let mut kernel = IndexMap::new();
        for (a, k) in c.kernels.iter().enumerate() {
            if !k.is_empty() {
                let rows = (0..k.nrows()).map(|i| k.row(i).iter().copied().collect()).collect();
                kernel.insert(c.actions[a].clone(), rows);
            }
        }
        let reward = match &c.reward {
            RewardFamily::Constant { value } => RewardFile::Constant { value: *value },
            RewardFamily::Tabular { values } => RewardFile::Tabular {
                values: values
                    .iter()
                    .enumerate()
                    .map(|(s, row)| {
                        let cells = row
                            .iter()
                            .enumerate()
                            .filter(|(a, _)| c.is_admissible(s, *a))
                            .map(|(a, v)| (c.actions[a].clone(), Num(*v)))
                            .collect();
                        (c.states[s].clone(), cells)
                    })
                    .collect(),
            },
            RewardFamily::Congestion { usage } => RewardFile::Congestion {
                usage: usage
                    .iter()
                    .enumerate()
                    .filter(|(_, rs)| !rs.is_empty())
                    .map(|(a, rs)| (c.actions[a].clone(), rs.iter().map(|&r| spec.resources[r].name.clone()).collect()))
                    .collect(),
            },
            RewardFamily::Mac(m) => RewardFile::Mac(MacFile {
                powers: m.powers.iter().enumerate().map(|(a, p)| (c.actions[a].clone(), *p)).collect(),
                noise: m.noise,
                coupling: m.coupling,
                duration: m.duration,
                beta: m.beta,
            }),
            RewardFamily::Custom(_) => {
                return Err(Error::Unsupported(format!("class {}: custom rewards cannot be written to a spec file", c.name)))
            }
        };
        classes.push(ClassFile {
            name: Some(c.name.clone()),
            mass: c.mass,
            action_rate: c.action_rate,
            revision_rate: c.revision_rate,
            states: c.states.clone(),
            actions,
            kernel,
            reward,
        });
    }
    let out = SpecFileOut { resources: spec.resources.clone(), classes };
    serde_json::to_string_pretty(&out).map_err(|e| Error::Io(e.to_string()))
}
