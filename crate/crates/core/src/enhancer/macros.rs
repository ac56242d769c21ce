//! The six prewritten figure macros.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::EnhancerError;

const LIBRARY: &str = include_str!("../../assets/slidesmith-macros.tex");

pub const LIBRARY_BEGIN: &str = "% >>> slidesmith macro library";
pub const LIBRARY_END: &str = "% <<< slidesmith macro library";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MacroKind {
    Pipeline,
    InlineFormula,
    InlinePseudocode,
    ConfMat,
    Network,
    GenericPlot,
}

impl MacroKind {
    pub const ALL: [MacroKind; 6] = [
        MacroKind::Pipeline,
        MacroKind::InlineFormula,
        MacroKind::InlinePseudocode,
        MacroKind::ConfMat,
        MacroKind::Network,
        MacroKind::GenericPlot,
    ];

    pub fn arity(self) -> usize {
        match self {
            MacroKind::Pipeline => 2,
            MacroKind::InlineFormula | MacroKind::InlinePseudocode | MacroKind::Network => 1,
            MacroKind::ConfMat => 4,
            MacroKind::GenericPlot => 6,
        }
    }

    /// Control sequence name without the backslash.
    pub fn command(self) -> &'static str {
        match self {
            MacroKind::Pipeline => "drawpipeline",
            MacroKind::InlineFormula => "inlineformula",
            MacroKind::InlinePseudocode => "inlinepseudocode",
            MacroKind::ConfMat => "drawconfmat",
            MacroKind::Network => "drawnetwork",
            MacroKind::GenericPlot => "drawgenericplot",
        }
    }

    pub fn from_command(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.command() == name)
    }

    /// Figures go after the bullets; formula and pseudocode are inline.
    pub fn is_figure(self) -> bool {
        !matches!(self, MacroKind::InlineFormula | MacroKind::InlinePseudocode)
    }
}

impl fmt::Display for MacroKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroCall {
    pub kind: MacroKind,
    pub args: Vec<String>,
}

fn parse_uint(s: &str) -> Option<u64> {
    let s = s.trim();
    (!s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
        .then(|| s.parse().ok())
        .flatten()
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

impl MacroCall {
    pub fn new<S: Into<String>>(kind: MacroKind, args: impl IntoIterator<Item = S>) -> Self {
        Self {
            kind,
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), EnhancerError> {
        let arg_err = |detail: String| EnhancerError::ArgParse {
            kind: self.kind,
            detail,
        };
        if self.args.len() != self.kind.arity() {
            return Err(EnhancerError::ArityMismatch {
                kind: self.kind,
                expected: self.kind.arity(),
                got: self.args.len(),
            });
        }
        match self.kind {
            MacroKind::ConfMat => {
                for a in &self.args {
                    parse_uint(a).ok_or_else(|| arg_err(format!("`{a}` is not a non-negative integer")))?;
                }
            }
            MacroKind::Network => {
                let layers = split_list(&self.args[0]);
                if layers.len() < 2 {
                    return Err(arg_err("need at least 2 layers".into()));
                }
                for l in layers {
                    match parse_uint(l) {
                        Some(n) if n > 0 => {}
                        _ => return Err(arg_err(format!("layer size `{l}` is not a positive integer"))),
                    }
                }
            }
            MacroKind::Pipeline => {
                let n = parse_uint(&self.args[0])
                    .filter(|n| *n > 0)
                    .ok_or_else(|| arg_err(format!("step count `{}` is not a positive integer", self.args[0])))?;
                let steps = split_list(&self.args[1]).len() as u64;
                if steps != n {
                    return Err(arg_err(format!("step count {n} but {steps} steps listed")));
                }
            }
            MacroKind::InlineFormula | MacroKind::InlinePseudocode => {
                if self.args[0].trim().is_empty() {
                    return Err(arg_err("empty body".into()));
                }
            }
            MacroKind::GenericPlot => {}
        }
        Ok(())
    }

    /// Network layer sizes; empty for other kinds.
    pub fn layers(&self) -> Vec<u64> {
        match (self.kind, self.args.first()) {
            (MacroKind::Network, Some(a)) => split_list(a).into_iter().filter_map(parse_uint).collect(),
            _ => Vec::new(),
        }
    }

    /// LaTeX source of the call, without validation.
    pub fn to_latex(&self) -> String {
        let mut s = format!("\\{}", self.kind.command());
        for a in &self.args {
            s.push('{');
            s.push_str(a);
            s.push('}');
        }
        s
    }
}

/// The macro definitions, a fixed preamble asset.
pub fn macro_library() -> &'static str {
    LIBRARY
}

/// Library wrapped in marker comments, as inlined into a deck preamble.
pub fn library_block() -> String {
    format!("{LIBRARY_BEGIN}\n{LIBRARY}{LIBRARY_END}\n")
}

pub fn render_macro(call: &MacroCall) -> Result<String, EnhancerError> {
    call.validate()?;
    Ok(call.to_latex())
}

/// Minimal Beamer document with the library and `body` on one frame.
pub fn standalone_document(body: &str) -> String {
    format!(
        "\\documentclass{{beamer}}\n{}\\begin{{document}}\n\\begin{{frame}}{{Macro}}\n{body}\n\\end{{frame}}\n\\end{{document}}\n",
        library_block()
    )
}

/// One valid argument vector per kind, taken from the prompt's examples.
pub fn sample_calls() -> Vec<MacroCall> {
    vec![
        MacroCall::new(MacroKind::Pipeline, ["3", "Retrieve, Plan, Generate"]),
        MacroCall::new(MacroKind::InlineFormula, [r"\[ w_{t+1} = w_t - \eta \nabla L(w_t) \]"]),
        MacroCall::new(
            MacroKind::InlinePseudocode,
            [r"\KwIn{data $X$} \KwOut{embedding $Y$} \For{each point $x_i$}{find neighbours\;} \Return{$Y$}\;"],
        ),
        MacroCall::new(MacroKind::ConfMat, ["50", "10", "5", "35"]),
        MacroCall::new(MacroKind::Network, ["2,3,4,1"]),
        MacroCall::new(MacroKind::GenericPlot, ["Model complexity", "Error", "x^2/10", "10/(x+1)", "", "Variance, Bias"]),
    ]
}
