//! Hyper-parameter space model, value assignments and canonical encodings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log10,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamKind {
    RealInterval { lo: f64, hi: f64, scale: Scale },
    Nominal { values: Vec<String> },
}

/// One tunable dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParameterSpec {
    name: String,
    kind: ParamKind,
}

impl HyperParameterSpec {
    pub fn real(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            name.into(),
            ParamKind::RealInterval {
                lo,
                hi,
                scale: Scale::Linear,
            },
        )
    }

    pub fn log10(name: impl Into<String>, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            name.into(),
            ParamKind::RealInterval {
                lo,
                hi,
                scale: Scale::Log10,
            },
        )
    }

    pub fn nominal<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let values = values.into_iter().map(Into::into).collect();
        Self::new(name.into(), ParamKind::Nominal { values })
    }

    pub fn new(name: String, kind: ParamKind) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::InvalidSpace("parameter name is empty".into()));
        }
        match &kind {
            ParamKind::RealInterval { lo, hi, scale } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidSpace(format!(
                        "`{name}`: interval [{lo}, {hi}] must be finite with lo < hi"
                    )));
                }
                if *scale == Scale::Log10 && *lo <= 0.0 {
                    return Err(Error::InvalidSpace(format!(
                        "`{name}`: log10 scale requires lo > 0"
                    )));
                }
            }
            ParamKind::Nominal { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidSpace(format!("`{name}`: no nominal values")));
                }
                let unique: BTreeSet<_> = values.iter().collect();
                if unique.len() != values.len() {
                    return Err(Error::InvalidSpace(format!(
                        "`{name}`: duplicate nominal values"
                    )));
                }
            }
        }
        Ok(Self { name, kind })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &ParamKind {
        &self.kind
    }

    pub fn contains(&self, value: &Value) -> bool {
        match (&self.kind, value) {
            (ParamKind::RealInterval { lo, hi, .. }, Value::Real(v)) => *lo <= *v && *v <= *hi,
            (ParamKind::Nominal { values }, Value::Label(l)) => values.contains(l),
            _ => false,
        }
    }
}

/// A hyper-parameter value: a real number or a nominal label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Real(f64),
    Label(String),
}

impl Value {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(v) => Some(*v),
            Value::Label(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            Value::Label(l) => Some(l),
            Value::Real(_) => None,
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Label(v.to_owned())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Real(v) => write!(f, "{v}"),
            Value::Label(l) => write!(f, "{l}"),
        }
    }
}

/// A value vector mapping hyper-parameter names to values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment(BTreeMap<String, Value>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn real(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Value::as_real)
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<Value>) {
        self.0.insert(name.into(), value.into());
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<Value>) -> Self {
        self.set(name, value);
        self
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl<K: Into<String>, V: Into<Value>> FromIterator<(K, V)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Self(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let json = serde_json::to_string(&self.0).map_err(|_| fmt::Error)?;
        f.write_str(&json)
    }
}

/// The full parameter set split into tuned (objective) and fixed names.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    params: Vec<HyperParameterSpec>,
    objective: Vec<String>,
    fixed: BTreeMap<String, Value>,
}

impl SearchSpace {
    pub fn new(
        params: Vec<HyperParameterSpec>,
        objective: Vec<String>,
        fixed: BTreeMap<String, Value>,
    ) -> Result<Self> {
        let mut names = BTreeSet::new();
        for p in &params {
            if !names.insert(p.name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate parameter `{}`",
                    p.name
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for name in &objective {
            if !names.contains(name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "unknown objective parameter `{name}`"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "`{name}` listed twice as objective"
                )));
            }
        }
        for (name, value) in &fixed {
            if seen.contains(name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "`{name}` is both objective and fixed"
                )));
            }
            let spec = params
                .iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| Error::InvalidSpace(format!("unknown fixed parameter `{name}`")))?;
            if !spec.contains(value) {
                return Err(Error::InvalidSpace(format!(
                    "fixed value {value} is outside the domain of `{name}`"
                )));
            }
        }
        if let Some(p) = params
            .iter()
            .find(|p| !seen.contains(p.name.as_str()) && !fixed.contains_key(&p.name))
        {
            return Err(Error::InvalidSpace(format!(
                "`{}` is neither objective nor fixed",
                p.name
            )));
        }
        Ok(Self {
            params,
            objective,
            fixed,
        })
    }

    /// Every parameter tuned, none fixed.
    pub fn all_objective(params: Vec<HyperParameterSpec>) -> Result<Self> {
        let objective = params.iter().map(|p| p.name.clone()).collect();
        Self::new(params, objective, BTreeMap::new())
    }

    pub fn params(&self) -> &[HyperParameterSpec] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&HyperParameterSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Objective names in declaration order.
    pub fn objective_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| self.is_objective(&p.name))
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn is_objective(&self, name: &str) -> bool {
        self.objective.iter().any(|n| n == name)
    }

    pub fn fixed(&self) -> &BTreeMap<String, Value> {
        &self.fixed
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let doc: SpaceDoc = serde_json::from_str(doc)?;
        doc.try_into()
    }

    pub fn from_value(doc: serde_json::Value) -> Result<Self> {
        let doc: SpaceDoc = serde_json::from_value(doc)?;
        doc.try_into()
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(SpaceDoc::from(self)).expect("space document is always serializable")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SpaceDoc::from(self)).expect("space document is always serializable")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Real,
    Nominal,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDoc {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<Scale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceDoc {
    params: Vec<ParamDoc>,
    objective: Vec<String>,
    #[serde(default)]
    fixed: BTreeMap<String, Value>,
}

impl TryFrom<ParamDoc> for HyperParameterSpec {
    type Error = Error;

    fn try_from(doc: ParamDoc) -> Result<Self> {
        let kind = match doc.kind {
            KindTag::Real => {
                if doc.values.is_some() {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: real with values",
                        doc.name
                    )));
                }
                let (Some(lo), Some(hi)) = (doc.lo, doc.hi) else {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: missing lo/hi",
                        doc.name
                    )));
                };
                ParamKind::RealInterval {
                    lo,
                    hi,
                    scale: doc.scale.unwrap_or_default(),
                }
            }
            KindTag::Nominal => {
                if doc.lo.is_some() || doc.hi.is_some() || doc.scale.is_some() {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: nominal with interval fields",
                        doc.name
                    )));
                }
                let Some(values) = doc.values else {
                    return Err(Error::InvalidSpace(format!(
                        "`{}`: missing values",
                        doc.name
                    )));
                };
                ParamKind::Nominal { values }
            }
        };
        HyperParameterSpec::new(doc.name, kind)
    }
}

impl From<&HyperParameterSpec> for ParamDoc {
    fn from(spec: &HyperParameterSpec) -> Self {
        match &spec.kind {
            ParamKind::RealInterval { lo, hi, scale } => ParamDoc {
                name: spec.name.clone(),
                kind: KindTag::Real,
                lo: Some(*lo),
                hi: Some(*hi),
                scale: Some(*scale),
                values: None,
            },
            ParamKind::Nominal { values } => ParamDoc {
                name: spec.name.clone(),
                kind: KindTag::Nominal,
                lo: None,
                hi: None,
                scale: None,
                values: Some(values.clone()),
            },
        }
    }
}

impl TryFrom<SpaceDoc> for SearchSpace {
    type Error = Error;

    fn try_from(doc: SpaceDoc) -> Result<Self> {
        let params = doc
            .params
            .into_iter()
            .map(HyperParameterSpec::try_from)
            .collect::<Result<_>>()?;
        SearchSpace::new(params, doc.objective, doc.fixed)
    }
}

impl From<&SearchSpace> for SpaceDoc {
    fn from(space: &SearchSpace) -> Self {
        SpaceDoc {
            params: space.params.iter().map(ParamDoc::from).collect(),
            objective: space.objective.clone(),
            fixed: space.fixed.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Missing,
    Unknown,
    NotInDomain,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub name: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reason = match self.kind {
            ViolationKind::Missing => "missing",
            ViolationKind::Unknown => "not a parameter of the space",
            ViolationKind::NotInDomain => "not in domain",
        };
        write!(f, "{}: {reason}", self.name)
    }
}

/// Checks that `a` covers exactly the names of `space` with in-domain values.
pub fn validate_assignment(space: &SearchSpace, a: &Assignment) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    for spec in &space.params {
        match a.get(&spec.name) {
            None => violations.push(Violation {
                name: spec.name.clone(),
                kind: ViolationKind::Missing,
            }),
            Some(v) if !spec.contains(v) => violations.push(Violation {
                name: spec.name.clone(),
                kind: ViolationKind::NotInDomain,
            }),
            Some(_) => {}
        }
    }
    for (name, _) in a.iter() {
        if space.param(name).is_none() {
            violations.push(Violation {
                name: name.to_owned(),
                kind: ViolationKind::Unknown,
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Same as [`validate_assignment`], folding violations into an error.
pub fn check_assignment(space: &SearchSpace, a: &Assignment) -> Result<()> {
    validate_assignment(space, a).map_err(|v| {
        let list: Vec<_> = v.iter().map(ToString::to_string).collect();
        Error::InvalidAssignment(list.join("; "))
    })
}

/// Cache key of an assignment. Reals are rendered with 12 significant digits.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(String);

impl CanonicalKey {
    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

pub fn canonical_key(a: &Assignment) -> CanonicalKey {
    use std::fmt::Write;

    let mut key = String::new();
    // BTreeMap iteration is already sorted by name.
    for (name, value) in a.iter() {
        let _ = write!(key, "{}:{}=", name.len(), name);
        match value {
            Value::Real(v) => {
                let v = if *v == 0.0 { 0.0 } else { *v };
                let _ = write!(key, "r{v:.11e};");
            }
            Value::Label(l) => {
                let _ = write!(key, "s{}:{l};", l.len());
            }
        }
    }
    CanonicalKey(key)
}
