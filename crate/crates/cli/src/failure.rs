//! Exit codes and single-line error reports.

use std::fmt;

use dimclust::Error;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Usage,
    Data,
    NotConverged,
    Infeasible,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Data => 3,
            Kind::NotConverged => 4,
            Kind::Infeasible => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: Kind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: message.into() }
    }

    /// One JSON object on one line, e.g.
    /// `{"error":"usage","code":2,"message":"..."}`.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: Kind,
            code: i32,
            message: &'a str,
        }
        let message = self.message.replace('\n', " ");
        serde_json::to_string(&Line { error: self.kind, code: self.kind.exit_code(), message: &message })
            .expect("error line serializes")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Argument(_) | Error::Structure(_) => Kind::Usage,
            Error::Infeasible { .. } => Kind::Infeasible,
            _ => Kind::Data,
        };
        Self { kind, message: e.to_string() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_are_single_line_json() {
        let f = Failure::usage("bad\nthing");
        let line = f.to_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "usage");
        assert_eq!(v["code"], 2);
    }

    #[test]
    fn library_errors_map_to_codes() {
        assert_eq!(Failure::from(Error::Structure("x".into())).kind.exit_code(), 2);
        assert_eq!(Failure::from(Error::Format("x".into())).kind.exit_code(), 3);
        let inf = Error::Infeasible { structure: "(2)".into(), reason: "r".into() };
        assert_eq!(Failure::from(inf).kind.exit_code(), 5);
    }
}
