//! Structured diagnostics shared by the checking passes.

use std::fmt;

use serde_json::{json, Value as J};

use crate::surface::{Span, ToJson};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    /// The judgement is refuted.
    Error,
    /// The index engine or equivalence could not decide a premise.
    Undecided,
}

/// A failed premise: the rule it belongs to, a message, and the stack of
/// rule applications that led there (outermost first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub rule: String,
    pub message: String,
    pub severity: Severity,
    pub trail: Vec<String>,
    pub span: Option<Span>,
}

impl Diagnostic {
    pub fn error(rule: &str, message: impl Into<String>) -> Self {
        Diagnostic { rule: rule.into(), message: message.into(), severity: Severity::Error, trail: Vec::new(), span: None }
    }

    pub fn undecided(rule: &str, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Undecided, ..Self::error(rule, message) }
    }

    pub fn with_trail(mut self, trail: &[String]) -> Self {
        self.trail = trail.to_vec();
        self
    }

    pub fn at(mut self, span: Span) -> Self {
        self.span.get_or_insert(span);
        self
    }

    pub fn is_undecided(&self) -> bool {
        self.severity == Severity::Undecided
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.span {
            write!(f, "{s}: ")?;
        }
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Undecided => "undecided",
        };
        write!(f, "{tag}[{}]: {}", self.rule, self.message)?;
        for (depth, t) in self.trail.iter().enumerate() {
            write!(f, "\n  {:width$}in {t}", "", width = depth * 2)?;
        }
        Ok(())
    }
}

impl std::error::Error for Diagnostic {}

impl ToJson for Diagnostic {
    fn to_json(&self) -> J {
        json!({
            "rule": self.rule,
            "message": self.message,
            "severity": match self.severity { Severity::Error => "error", Severity::Undecided => "undecided" },
            "trail": self.trail,
            "span": self.span.map(|s| json!({"line": s.line, "col": s.col})),
        })
    }
}

/// Stack of rule applications recorded while a checker descends.
#[derive(Clone, Debug, Default)]
pub struct Trail {
    frames: Vec<String>,
}

impl Trail {
    pub fn push(&mut self, frame: String) {
        self.frames.push(frame);
    }

    pub fn pop(&mut self) {
        self.frames.pop();
    }

    pub fn frames(&self) -> &[String] {
        &self.frames
    }

    pub fn error(&self, rule: &str, message: impl Into<String>) -> Diagnostic {
        Diagnostic::error(rule, message).with_trail(&self.frames)
    }

    pub fn undecided(&self, rule: &str, message: impl Into<String>) -> Diagnostic {
        Diagnostic::undecided(rule, message).with_trail(&self.frames)
    }
}
