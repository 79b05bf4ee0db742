//! The rate-limit grammar used by the `packet-rate` and `byte-rate` action
//! fields: `<count>[kb|mb]/<period>`, e.g. `"50/second"` or `"50kb/minute"`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::MudError;

/// Period a rate limit is expressed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatePeriod {
    Second,
    Minute,
    Hour,
    Day,
}

impl RatePeriod {
    pub fn as_secs(self) -> u64 {
        match self {
            RatePeriod::Second => 1,
            RatePeriod::Minute => 60,
            RatePeriod::Hour => 3_600,
            RatePeriod::Day => 86_400,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RatePeriod::Second => "second",
            RatePeriod::Minute => "minute",
            RatePeriod::Hour => "hour",
            RatePeriod::Day => "day",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "second" => Some(RatePeriod::Second),
            "minute" => Some(RatePeriod::Minute),
            "hour" => Some(RatePeriod::Hour),
            "day" => Some(RatePeriod::Day),
            _ => None,
        }
    }
}

impl fmt::Display for RatePeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed rate limit: `count` packets (or bytes, after the kb/mb suffix has
/// been expanded) per `period`. A count of zero is the "no limit" sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RateLimit {
    pub count: u64,
    pub period: RatePeriod,
}

impl RateLimit {
    pub fn new(count: u64, period: RatePeriod) -> Self {
        RateLimit { count, period }
    }

    /// True when this is the zero sentinel, i.e. no limit at all.
    pub fn is_unlimited(self) -> bool {
        self.count == 0
    }

    /// Renders back to the grammar. Suffixes are never re-introduced, so the
    /// output always parses to an equal value.
    pub fn render(self) -> String {
        format!("{}/{}", self.count, self.period)
    }
}

impl fmt::Display for RateLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parses a rate string of the form `<count>[kb|mb]/<period>`.
///
/// `kb` multiplies the count by 1000 and `mb` by 1_000_000 (decimal units);
/// without a suffix the count is taken as-is (packets for `packet-rate`,
/// raw bytes for `byte-rate`).
pub fn parse_rate(text: &str) -> Result<RateLimit, MudError> {
    let err = |reason: &str| MudError::RateGrammar {
        input: text.to_string(),
        reason: reason.to_string(),
    };

    let (count_part, period_part) = text
        .split_once('/')
        .ok_or_else(|| err("missing '/' separator"))?;
    if period_part.contains('/') {
        return Err(err("more than one '/' separator"));
    }

    let period = RatePeriod::parse(period_part)
        .ok_or_else(|| err("unknown period (expected second, minute, hour or day)"))?;

    let (digits, multiplier) = if let Some(d) = count_part.strip_suffix("kb") {
        (d, 1_000u64)
    } else if let Some(d) = count_part.strip_suffix("mb") {
        (d, 1_000_000u64)
    } else {
        (count_part, 1u64)
    };

    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err("count is not a non-negative integer"));
    }
    let base: u64 = digits
        .parse()
        .map_err(|_| err("count does not fit in 64 bits"))?;
    let count = base
        .checked_mul(multiplier)
        .ok_or_else(|| err("count overflows after unit expansion"))?;

    Ok(RateLimit { count, period })
}
