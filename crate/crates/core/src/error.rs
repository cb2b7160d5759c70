use thiserror::Error;

use crate::topology::Site;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("site {site} out of range (topology has {site_count} sites)")]
    InvalidSite { site: Site, site_count: usize },
    #[error("sites {from} and {to} are not connected")]
    Disconnected { from: Site, to: Site },
    #[error("{0} requires a tree-ball topology")]
    NotATree(String),
    #[error("invalid rates: {0}")]
    InvalidRates(String),
    #[error("invalid time: {0}")]
    InvalidTime(String),
    #[error("configuration has {got} sites, topology has {expected}")]
    ConfigurationSize { got: usize, expected: usize },
    #[error("invalid event log: {0}")]
    InvalidLog(String),
    #[error("state space too large: {sites} sites exceeds the limit of {limit}")]
    StateSpaceTooLarge { sites: usize, limit: usize },
    #[error("bracket does not straddle the threshold: {0}")]
    BadBracket(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
}
