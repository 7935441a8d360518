use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Dotted numeric `major.minor.patch` version, ordered numerically field by field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Version {
    pub major: u32,
    pub minor: u32,
    pub patch: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid version syntax `{0}`, expected X.Y.Z")]
pub struct VersionError(pub String);

impl Version {
    pub const fn new(major: u32, minor: u32, patch: u32) -> Self {
        Version {
            major,
            minor,
            patch,
        }
    }
}

impl FromStr for Version {
    type Err = VersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || VersionError(s.into());
        let mut parts = s.split('.');
        let mut next = || -> Result<u32, VersionError> {
            let p = parts.next().ok_or_else(err)?;
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err());
            }
            p.parse().map_err(|_| err())
        };
        let v = Version::new(next()?, next()?, next()?);
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(v)
    }
}

impl TryFrom<String> for Version {
    type Error = VersionError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Version> for String {
    fn from(v: Version) -> String {
        alloc::format!("{v}")
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::cmp::Ordering;
    use proptest::prelude::*;

    #[test]
    fn parses_triples() {
        assert_eq!("1.10.3".parse::<Version>().unwrap(), Version::new(1, 10, 3));
        for bad in ["1.0", "1.0.0.0", "a.b.c", "1..0", "", "1.0.-1", "+1.0.0"] {
            assert!(bad.parse::<Version>().is_err(), "{bad}");
        }
    }

    #[test]
    fn numeric_not_lexical() {
        assert!("1.10.0".parse::<Version>().unwrap() > "1.9.0".parse().unwrap());
    }

    proptest! {
        #[test]
        fn ordering_is_total_and_lexicographic(a in any::<(u32, u32, u32)>(), b in any::<(u32, u32, u32)>()) {
            let va = Version::new(a.0, a.1, a.2);
            let vb = Version::new(b.0, b.1, b.2);
            let expected = a.cmp(&b);
            prop_assert_eq!(va.cmp(&vb), expected);
            let n = [va < vb, va == vb, va > vb].iter().filter(|x| **x).count();
            prop_assert_eq!(n, 1);
            prop_assert_eq!(vb.cmp(&va), expected.reverse());
            if expected == Ordering::Equal { prop_assert_eq!(va, vb); }
        }

        #[test]
        fn display_parse_roundtrip(a in any::<(u32, u32, u32)>()) {
            let v = Version::new(a.0, a.1, a.2);
            prop_assert_eq!(alloc::format!("{v}").parse::<Version>().unwrap(), v);
        }
    }
}
