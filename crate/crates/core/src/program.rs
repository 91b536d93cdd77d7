//! Reasoning-program DSL: opcode catalog, parsing, consolidation, and
//! validation. A program is an ordered list of steps, each naming an
//! opcode, earlier-step dependencies, and an optional text argument that
//! conditions the module's behavior.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, ParseError};

/// Output kind of a module: attention over boxes, a boolean probability,
/// or a distribution over the answer vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Attention,
    Boolean,
    Answer,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Attention => write!(f, "attention"),
            Kind::Boolean => write!(f, "boolean"),
            Kind::Answer => write!(f, "answer"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpcodeSpec {
    pub name: String,
    pub kind: Kind,
    pub dep_kinds: Vec<Kind>,
    pub takes_text_arg: bool,
}

impl OpcodeSpec {
    pub fn arity(&self) -> usize {
        self.dep_kinds.len()
    }
}

/// Extensible opcode registry. The standard catalog covers one module per
/// formula pattern; consolidation maps specialized raw names onto it.
pub struct Catalog {
    ops: Vec<OpcodeSpec>,
    by_name: BTreeMap<String, usize>,
}

impl Catalog {
    pub fn empty() -> Self {
        Catalog {
            ops: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// The built-in 14-opcode catalog.
    pub fn standard() -> Self {
        use Kind::*;
        let mut c = Catalog::empty();
        let table: &[(&str, Kind, &[Kind], bool)] = &[
            ("Select", Attention, &[], true),
            ("FilterAttr", Attention, &[Attention], true),
            ("FilterName", Attention, &[Attention], true),
            ("RelateSub", Attention, &[Attention], true),
            ("RelateObj", Attention, &[Attention], true),
            ("And", Boolean, &[Boolean, Boolean], false),
            ("Or", Boolean, &[Boolean, Boolean], false),
            ("Exist", Boolean, &[Attention], false),
            ("VerifyAttr", Boolean, &[Attention], true),
            ("VerifyRel", Boolean, &[Attention], true),
            ("QueryName", Answer, &[Attention], false),
            ("QueryAttr", Answer, &[Attention], true),
            ("ChooseAttr", Answer, &[Attention], true),
            ("ChooseName", Answer, &[Attention], true),
        ];
        for (name, kind, deps, text) in table {
            c.register(OpcodeSpec {
                name: name.to_string(),
                kind: *kind,
                dep_kinds: deps.to_vec(),
                takes_text_arg: *text,
            })
            .expect("standard catalog has unique names");
        }
        c
    }

    pub fn register(&mut self, spec: OpcodeSpec) -> Result<(), DataError> {
        if self.by_name.contains_key(&spec.name) {
            return Err(DataError::InvalidConfig(spec.name));
        }
        self.by_name.insert(spec.name.clone(), self.ops.len());
        self.ops.push(spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&OpcodeSpec> {
        self.by_name.get(name).map(|&i| &self.ops[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &OpcodeSpec> {
        self.ops.iter()
    }
}

/// Raw-name consolidation: specialized opcodes collapse onto a canonical
/// module that takes the distinguishing concept as its text argument.
/// This is data, not code; extend it to ingest new raw vocabularies.
pub const CONSOLIDATION_TABLE: &[(&str, &str)] = &[
    ("ChooseHealthier", "ChooseAttr"),
    ("ChooseOlder", "ChooseAttr"),
    ("ChooseYounger", "ChooseAttr"),
    ("ChooseAttribute", "ChooseAttr"),
    ("ChooseColor", "ChooseAttr"),
    ("ChooseSize", "ChooseAttr"),
    ("ChooseMaterial", "ChooseAttr"),
    ("ChooseObject", "ChooseName"),
    ("Filter", "FilterAttr"),
    ("FilterAttribute", "FilterAttr"),
    ("FilterColor", "FilterAttr"),
    ("FilterSize", "FilterAttr"),
    ("FilterMaterial", "FilterAttr"),
    ("FilterObject", "FilterName"),
    ("QueryAttribute", "QueryAttr"),
    ("QueryColor", "QueryAttr"),
    ("QuerySize", "QueryAttr"),
    ("QueryMaterial", "QueryAttr"),
    ("QueryObject", "QueryName"),
    ("RelateSubject", "RelateSub"),
    ("RelateObject", "RelateObj"),
    ("SelectObject", "Select"),
    ("VerifyAttribute", "VerifyAttr"),
    ("VerifyColor", "VerifyAttr"),
    ("VerifySize", "VerifyAttr"),
    ("VerifyMaterial", "VerifyAttr"),
    ("VerifyRelation", "VerifyRel"),
];

/// Maps a raw opcode name to its canonical catalog name. Canonical names
/// map to themselves, so the function is idempotent.
pub fn consolidate_opcode(raw: &str, catalog: &Catalog) -> Result<String, ParseError> {
    if catalog.contains(raw) {
        return Ok(raw.to_string());
    }
    for (from, to) in CONSOLIDATION_TABLE {
        if *from == raw && catalog.contains(to) {
            return Ok(to.to_string());
        }
    }
    Err(ParseError::UnknownOpcode {
        name: raw.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgramStep {
    pub op: String,
    pub deps: Vec<usize>,
    pub text_arg: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub id: String,
    pub question: Option<String>,
    pub steps: Vec<ProgramStep>,
}

#[derive(Serialize, Deserialize)]
struct RawStep {
    op: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    deps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arg: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawProgram {
    #[serde(default)]
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    question: Option<String>,
    steps: Vec<RawStep>,
}

/// Parses one JSON program record. Raw opcodes pass through consolidation;
/// dependencies must reference strictly earlier steps.
pub fn parse_program(text: &str, catalog: &Catalog) -> Result<Program, ParseError> {
    let raw: RawProgram =
        serde_json::from_str(text).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let mut steps = Vec::with_capacity(raw.steps.len());
    for (t, step) in raw.steps.into_iter().enumerate() {
        let op = consolidate_opcode(&step.op, catalog)?;
        for &d in &step.deps {
            if d >= t {
                return Err(ParseError::ForwardReference { step: t, dep: d });
            }
        }
        steps.push(ProgramStep {
            op,
            deps: step.deps,
            text_arg: step.arg,
        });
    }
    Ok(Program {
        id: raw.id,
        question: raw.question,
        steps,
    })
}

impl Program {
    /// Serializes to the wire format accepted by [`parse_program`].
    pub fn to_json(&self) -> String {
        let raw = RawProgram {
            id: self.id.clone(),
            question: self.question.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| RawStep {
                    op: s.op.clone(),
                    deps: s.deps.clone(),
                    arg: s.text_arg.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&raw).expect("program serialization cannot fail")
    }

    /// Kind of each step under `catalog`; `None` for unknown opcodes.
    pub fn step_kinds(&self, catalog: &Catalog) -> Vec<Option<Kind>> {
        self.steps
            .iter()
            .map(|s| catalog.get(&s.op).map(|o| o.kind))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiagnosticKind {
    EmptyProgram,
    UnknownOpcode { name: String },
    InvalidDep { dep: usize },
    Arity { expected: usize, got: usize },
    KindMismatch { dep: usize, expected: Kind, got: Kind },
    MissingTextArg,
    UnexpectedTextArg,
    NonTerminalAnswer,
    /// Terminal step must produce an answer, or a boolean which the
    /// implicit adapter converts to a yes/no answer distribution.
    BadTerminalKind { got: Kind },
    DeadStep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub step: usize,
    pub kind: DiagnosticKind,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}: ", self.step)?;
        match &self.kind {
            DiagnosticKind::EmptyProgram => write!(f, "program has no steps"),
            DiagnosticKind::UnknownOpcode { name } => write!(f, "unknown opcode `{name}`"),
            DiagnosticKind::InvalidDep { dep } => {
                write!(f, "dependency {dep} is not an earlier step")
            }
            DiagnosticKind::Arity { expected, got } => {
                write!(f, "expected {expected} dependencies, got {got}")
            }
            DiagnosticKind::KindMismatch { dep, expected, got } => {
                write!(f, "dependency {dep} must be {expected}, got {got}")
            }
            DiagnosticKind::MissingTextArg => write!(f, "missing text argument"),
            DiagnosticKind::UnexpectedTextArg => write!(f, "opcode takes no text argument"),
            DiagnosticKind::NonTerminalAnswer => {
                write!(f, "answer step before the end of the program")
            }
            DiagnosticKind::BadTerminalKind { got } => {
                write!(f, "terminal step must be answer or boolean, got {got}")
            }
            DiagnosticKind::DeadStep => write!(f, "step output is never used"),
        }
    }
}

/// Structural checks: topological deps, arity, dependency kinds, text-arg
/// presence, terminal kind, and dead steps. An empty vector means valid.
pub fn validate_program(p: &Program, catalog: &Catalog) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if p.steps.is_empty() {
        return vec![Diagnostic {
            step: 0,
            kind: DiagnosticKind::EmptyProgram,
        }];
    }
    let kinds = p.step_kinds(catalog);
    let last = p.steps.len() - 1;
    let mut referenced = vec![false; p.steps.len()];

    for (t, step) in p.steps.iter().enumerate() {
        let spec = match catalog.get(&step.op) {
            Some(s) => s,
            None => {
                diags.push(Diagnostic {
                    step: t,
                    kind: DiagnosticKind::UnknownOpcode {
                        name: step.op.clone(),
                    },
                });
                continue;
            }
        };
        for &d in &step.deps {
            if d >= t {
                diags.push(Diagnostic {
                    step: t,
                    kind: DiagnosticKind::InvalidDep { dep: d },
                });
            } else {
                referenced[d] = true;
            }
        }
        if step.deps.len() != spec.arity() {
            diags.push(Diagnostic {
                step: t,
                kind: DiagnosticKind::Arity {
                    expected: spec.arity(),
                    got: step.deps.len(),
                },
            });
        } else {
            for (slot, (&d, &expected)) in step.deps.iter().zip(&spec.dep_kinds).enumerate() {
                if d < t {
                    if let Some(got) = kinds[d] {
                        if got != expected {
                            diags.push(Diagnostic {
                                step: t,
                                kind: DiagnosticKind::KindMismatch {
                                    dep: slot,
                                    expected,
                                    got,
                                },
                            });
                        }
                    }
                }
            }
        }
        if spec.takes_text_arg && step.text_arg.is_none() {
            diags.push(Diagnostic {
                step: t,
                kind: DiagnosticKind::MissingTextArg,
            });
        }
        if !spec.takes_text_arg && step.text_arg.is_some() {
            diags.push(Diagnostic {
                step: t,
                kind: DiagnosticKind::UnexpectedTextArg,
            });
        }
        if spec.kind == Kind::Answer && t != last {
            diags.push(Diagnostic {
                step: t,
                kind: DiagnosticKind::NonTerminalAnswer,
            });
        }
    }

    if let Some(kind) = kinds[last] {
        if kind == Kind::Attention {
            diags.push(Diagnostic {
                step: last,
                kind: DiagnosticKind::BadTerminalKind { got: kind },
            });
        }
    }
    for (t, seen) in referenced.iter().enumerate().take(last) {
        if !seen {
            diags.push(Diagnostic {
                step: t,
                kind: DiagnosticKind::DeadStep,
            });
        }
    }
    diags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Catalog {
        Catalog::standard()
    }

    #[test]
    fn parses_three_step_chain() {
        let text = r#"{"id":"q1","steps":[
            {"op":"Select","arg":"laptop"},
            {"op":"RelateSub","deps":[0],"arg":"right-of"},
            {"op":"QueryName","deps":[1]}]}"#;
        let p = parse_program(text, &catalog()).unwrap();
        assert_eq!(p.steps.len(), 3);
        let kinds: Vec<_> = p.step_kinds(&catalog()).into_iter().flatten().collect();
        assert_eq!(kinds, vec![Kind::Attention, Kind::Attention, Kind::Answer]);
        assert!(validate_program(&p, &catalog()).is_empty());
    }

    #[test]
    fn self_dependency_is_a_forward_reference() {
        let text = r#"{"steps":[{"op":"QueryName","deps":[0]}]}"#;
        let err = parse_program(text, &catalog()).unwrap_err();
        assert_eq!(err, ParseError::ForwardReference { step: 0, dep: 0 });
    }

    #[test]
    fn boolean_terminal_is_legal() {
        let text = r#"{"steps":[
            {"op":"Select","arg":"skateboard"},
            {"op":"FilterAttr","deps":[0],"arg":"white"},
            {"op":"Exist","deps":[1]}]}"#;
        let p = parse_program(text, &catalog()).unwrap();
        assert!(validate_program(&p, &catalog()).is_empty());
    }

    #[test]
    fn consolidation_maps_and_is_idempotent() {
        let c = catalog();
        assert_eq!(consolidate_opcode("ChooseHealthier", &c).unwrap(), "ChooseAttr");
        assert_eq!(consolidate_opcode("ChooseOlder", &c).unwrap(), "ChooseAttr");
        assert_eq!(consolidate_opcode("Select", &c).unwrap(), "Select");
        for (from, _) in CONSOLIDATION_TABLE {
            let once = consolidate_opcode(from, &c).unwrap();
            let twice = consolidate_opcode(&once, &c).unwrap();
            assert_eq!(once, twice);
        }
        assert!(matches!(
            consolidate_opcode("FrobulateObject", &c),
            Err(ParseError::UnknownOpcode { .. })
        ));
    }

    #[test]
    fn validate_flags_arity_and_kind_mismatches() {
        let c = catalog();
        // And with a single dependency.
        let text = r#"{"steps":[
            {"op":"Select","arg":"cat"},
            {"op":"Exist","deps":[0]},
            {"op":"And","deps":[1]}]}"#;
        let p = parse_program(text, &c).unwrap();
        let diags = validate_program(&p, &c);
        assert!(diags
            .iter()
            .any(|d| d.step == 2 && matches!(d.kind, DiagnosticKind::Arity { expected: 2, got: 1 })));

        // QueryName depending on a boolean step.
        let text = r#"{"steps":[
            {"op":"Select","arg":"cat"},
            {"op":"Exist","deps":[0]},
            {"op":"QueryName","deps":[1]}]}"#;
        let p = parse_program(text, &c).unwrap();
        let diags = validate_program(&p, &c);
        assert!(diags.iter().any(|d| d.step == 2
            && matches!(
                d.kind,
                DiagnosticKind::KindMismatch {
                    expected: Kind::Attention,
                    got: Kind::Boolean,
                    ..
                }
            )));
    }

    #[test]
    fn validate_flags_text_args_dead_steps_and_terminals() {
        let c = catalog();
        let p = parse_program(r#"{"steps":[{"op":"Select"}]}"#, &c).unwrap();
        let diags = validate_program(&p, &c);
        assert!(diags.iter().any(|d| d.kind == DiagnosticKind::MissingTextArg));
        assert!(diags
            .iter()
            .any(|d| matches!(d.kind, DiagnosticKind::BadTerminalKind { got: Kind::Attention })));

        let p = parse_program(
            r#"{"steps":[
                {"op":"Select","arg":"cat"},
                {"op":"Select","arg":"dog"},
                {"op":"QueryName","deps":[1]}]}"#,
            &c,
        )
        .unwrap();
        let diags = validate_program(&p, &c);
        assert!(diags.iter().any(|d| d.step == 0 && d.kind == DiagnosticKind::DeadStep));

        let p = parse_program(r#"{"steps":[]}"#, &c).unwrap();
        assert_eq!(
            validate_program(&p, &c),
            vec![Diagnostic {
                step: 0,
                kind: DiagnosticKind::EmptyProgram
            }]
        );
    }

    #[test]
    fn serialize_parse_round_trip() {
        let text = r#"{"id":"x","question":"what?","steps":[
            {"op":"Select","arg":"cat"},
            {"op":"VerifyAttr","deps":[0],"arg":"red"}]}"#;
        let c = catalog();
        let p = parse_program(text, &c).unwrap();
        let round = parse_program(&p.to_json(), &c).unwrap();
        assert_eq!(p, round);
    }

    #[test]
    fn malformed_json_is_reported() {
        assert!(matches!(
            parse_program("{steps: nope", &catalog()),
            Err(ParseError::MalformedJson(_))
        ));
    }
}
