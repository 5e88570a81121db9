//! Identifier newtypes for the different name spaces of the calculus.
//!
//! All of them are thin wrappers around strings; they exist so that a
//! participant can never be confused with a label or a session name at the
//! type level. Comparison is exact string identity (no case folding).

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! ident_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

ident_type!(
    /// A protocol participant (role), e.g. `A`, `S`.
    Participant
);
ident_type!(
    /// A branch label in a choice.
    Label
);
ident_type!(
    /// A recursion variable in a global or local type.
    TypeVar
);
ident_type!(
    /// A value variable in a process.
    Var
);
ident_type!(
    /// A recursion variable in a process.
    ProcVar
);
ident_type!(
    /// A session name, created fresh at session initiation.
    SessionName
);
ident_type!(
    /// A shared service name on which sessions are requested/accepted.
    SharedName
);
ident_type!(
    /// A location (site) hosting a running process.
    Location
);
ident_type!(
    /// A key naming a running-function memory.
    KeyName
);

impl Location {
    /// Child locations created when a parallel composition is split.
    pub fn split(&self) -> (Location, Location) {
        (
            Location(format!("{}.1", self.0)),
            Location(format!("{}.2", self.0)),
        )
    }
}

/// Checks the lexical rule shared by all user-written identifiers: first
/// char alphabetic, rest alphanumeric.
pub fn is_valid_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => chars.all(|c| c.is_ascii_alphanumeric()),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ident_lexical_rule() {
        assert!(is_valid_ident("A"));
        assert!(is_valid_ident("buyer2"));
        assert!(!is_valid_ident("2buyer"));
        assert!(!is_valid_ident(""));
        assert!(!is_valid_ident("a_b"));
    }

    #[test]
    fn location_split_names() {
        let l = Location::new("l3");
        let (a, b) = l.split();
        assert_eq!(a.as_str(), "l3.1");
        assert_eq!(b.as_str(), "l3.2");
    }
}
