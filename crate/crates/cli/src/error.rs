use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid `{field}`: {reason}")]
    Usage { field: String, reason: String },

    #[error(transparent)]
    Lib(#[from] ipsrec::Error),

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

impl CliError {
    pub fn usage(field: &str, reason: impl Into<String>) -> Self {
        CliError::Usage {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// 2 for anything the caller can fix by changing arguments or config.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } | CliError::Lib(ipsrec::Error::InvalidConfig { .. }) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage { .. } => "usage",
            CliError::Lib(ipsrec::Error::InvalidConfig { .. }) => "usage",
            CliError::Lib(e) => e.kind(),
            CliError::ReplayMismatch(_) => "replay_mismatch",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        let field = match self {
            CliError::Usage { field, .. } => Some(field.as_str()),
            CliError::Lib(ipsrec::Error::InvalidConfig { field, .. }) => Some(field.as_str()),
            _ => None,
        };
        let line = ErrorLine {
            error: "ipsrec",
            kind: self.kind(),
            field,
            message: self.to_string().replace('\n', " "),
        };
        serde_json::to_string(&line).expect("error line serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_is_single_line_and_parses() {
        let e = CliError::usage("threshold", "bad\nvalue");
        let line = e.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["kind"], "usage");
        assert_eq!(v["field"], "threshold");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::usage("x", "y").exit_code(), 2);
        assert_eq!(CliError::Lib(ipsrec::Error::NoOverlap).exit_code(), 1);
    }
}
