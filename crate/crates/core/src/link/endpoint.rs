use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// A character device such as a paired RFCOMM port.
    Serial,
    Tcp,
    /// A simulator living in the same process.
    Inproc,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Serial => "serial",
            Scheme::Tcp => "tcp",
            Scheme::Inproc => "inproc",
        }
    }
}

/// Where a brick lives: `serial:<path>`, `tcp:<host>:<port>` or `inproc:<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Endpoint {
    scheme: Scheme,
    address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EndpointError {
    #[error("endpoint `{0}` has no scheme; expected serial:, tcp: or inproc:")]
    MissingScheme(String),
    #[error("unknown endpoint scheme `{0}`")]
    UnknownScheme(String),
    #[error("endpoint address is empty")]
    EmptyAddress,
    #[error("tcp address `{0}` must be host:port")]
    BadTcpAddress(String),
}

impl Endpoint {
    pub fn new(scheme: Scheme, address: impl Into<String>) -> Result<Self, EndpointError> {
        let address = address.into();
        if address.is_empty() {
            return Err(EndpointError::EmptyAddress);
        }
        if scheme == Scheme::Tcp {
            let ok = address
                .rsplit_once(':')
                .map(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok())
                .unwrap_or(false);
            if !ok {
                return Err(EndpointError::BadTcpAddress(address));
            }
        }
        Ok(Endpoint { scheme, address })
    }

    pub fn tcp(addr: impl Into<String>) -> Result<Self, EndpointError> {
        Self::new(Scheme::Tcp, addr)
    }

    pub fn inproc(name: impl Into<String>) -> Result<Self, EndpointError> {
        Self::new(Scheme::Inproc, name)
    }

    pub fn serial(path: impl Into<String>) -> Result<Self, EndpointError> {
        Self::new(Scheme::Serial, path)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn address(&self) -> &str {
        &self.address
    }
}

impl FromStr for Endpoint {
    type Err = EndpointError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (scheme, address) =
            s.split_once(':').ok_or_else(|| EndpointError::MissingScheme(s.to_string()))?;
        let scheme = match scheme {
            "serial" => Scheme::Serial,
            "tcp" => Scheme::Tcp,
            "inproc" => Scheme::Inproc,
            other => return Err(EndpointError::UnknownScheme(other.to_string())),
        };
        Endpoint::new(scheme, address)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.scheme.as_str(), self.address)
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
