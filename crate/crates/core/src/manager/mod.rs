//! The control plane: fetch MUD files for joining devices, drive
//! parse -> compile -> install, tear rules down on leave, and keep the
//! datapath coherent with the manager's own view.
//!
//! The manager is the sole writer to the datapath rule table, satisfying the
//! datapath's serialized-control contract. Joins are atomic per device: a
//! fetch, parse or compile failure installs nothing, and a capacity failure
//! mid-install rolls back and restores the previous rules.

mod http;

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{compile_with_window, CompileError, DefaultDrop, DeviceContext};
use crate::datapath::{Datapath, DatapathError};
use crate::flow::FlowRule;
use crate::mud::{parse_mud_file, MudError, MudFile};

pub use http::{http_get, FixtureServer};

/// Default MUD fetch timeout.
pub const FETCH_TIMEOUT: Duration = Duration::from_secs(10);

/// Default cache validity (hours) when a MUD file does not set one.
const DEFAULT_CACHE_VALIDITY_HOURS: u64 = 48;

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("unsupported URL scheme in '{url}' (http:// and file:// are handled)")]
    Scheme { url: String },
    #[error("fetching '{url}' failed: {detail}")]
    Fetch { url: String, detail: String },
    #[error("fetching '{url}' timed out")]
    Timeout { url: String },
    #[error(transparent)]
    Mud(#[from] MudError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Datapath(#[from] DatapathError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A device join/leave notification, pre-extracted from whatever emission
/// mechanism the network uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DeviceEvent {
    Join {
        device_id: String,
        mud_url: String,
        #[serde(default)]
        addresses: Vec<std::net::IpAddr>,
    },
    Leave {
        device_id: String,
    },
}

/// Everything installed on behalf of one device.
#[derive(Debug, Clone, Default)]
pub struct InstalledPolicies {
    pub rules: Vec<FlowRule>,
    pub default_drops: Vec<DefaultDrop>,
}

impl InstalledPolicies {
    /// Allow rules plus default-drop records.
    pub fn policy_count(&self) -> usize {
        self.rules.len() + self.default_drops.len()
    }
}

struct CacheEntry {
    text: String,
    fetched_at: Instant,
    validity: Duration,
}

/// Manager state: per-device installed policies and the MUD document cache.
#[derive(Default)]
pub struct ManagerState {
    installed: HashMap<String, InstalledPolicies>,
    mud_cache: HashMap<String, CacheEntry>,
}

impl ManagerState {
    pub fn installed(&self, device_id: &str) -> Option<&InstalledPolicies> {
        self.installed.get(device_id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &str> {
        self.installed.keys().map(String::as_str)
    }

    /// Every rule key currently owned by any device, for coherence checks.
    pub fn all_rules(&self) -> impl Iterator<Item = &FlowRule> {
        self.installed.values().flat_map(|p| p.rules.iter())
    }
}

/// Wall-clock timings of one join, milliseconds with microsecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub parse_ms: f64,
    pub enforce_ms: f64,
}

/// What handling one event did.
#[derive(Debug, Clone, PartialEq)]
pub enum EventOutcome {
    Joined {
        device_id: String,
        policies: usize,
        warnings: Vec<String>,
        timing: TimingRecord,
    },
    Left {
        device_id: String,
        removed_rules: usize,
    },
    LeaveUnknownDevice {
        device_id: String,
    },
}

/// The MUD manager control plane.
pub struct Manager {
    pub state: ManagerState,
    fetch_timeout: Duration,
    window_secs: u64,
}

impl Default for Manager {
    fn default() -> Self {
        Self::new()
    }
}

impl Manager {
    pub fn new() -> Self {
        Manager {
            state: ManagerState::default(),
            fetch_timeout: FETCH_TIMEOUT,
            window_secs: crate::compiler::DEFAULT_WINDOW_SECS,
        }
    }

    pub fn with_window(window_secs: u64) -> Self {
        Manager {
            window_secs,
            ..Self::new()
        }
    }

    pub fn set_fetch_timeout(&mut self, timeout: Duration) {
        self.fetch_timeout = timeout;
    }

    /// Fetches a MUD document by URL (`http://` or `file://`), honoring the
    /// cache-validity of previously fetched copies.
    pub fn fetch_mud(&mut self, url: &str) -> Result<String, ManagerError> {
        if let Some(entry) = self.state.mud_cache.get(url) {
            if entry.fetched_at.elapsed() < entry.validity {
                return Ok(entry.text.clone());
            }
        }

        let text = if let Some(path) = url.strip_prefix("file://") {
            std::fs::read_to_string(Path::new(path)).map_err(|e| ManagerError::Fetch {
                url: url.to_string(),
                detail: e.to_string(),
            })?
        } else if url.starts_with("http://") {
            http::http_get(url, self.fetch_timeout)?
        } else {
            return Err(ManagerError::Scheme {
                url: url.to_string(),
            });
        };

        // Cache validity comes out of the document itself; an unparseable
        // document is not cached.
        let validity_hours = parse_mud_file(&text)
            .ok()
            .and_then(|m| m.cache_validity)
            .map_or(DEFAULT_CACHE_VALIDITY_HOURS, u64::from);
        self.state.mud_cache.insert(
            url.to_string(),
            CacheEntry {
                text: text.clone(),
                fetched_at: Instant::now(),
                validity: Duration::from_secs(validity_hours * 3600),
            },
        );
        Ok(text)
    }

    /// Handles a join or leave against the given datapath.
    ///
    /// Joins fetch, parse and compile the device's MUD file, then swap the
    /// device's rules in; re-joining replaces the previous rules. Leaves
    /// remove everything the device had installed.
    pub fn on_device_event(
        &mut self,
        event: &DeviceEvent,
        base_ctx: &DeviceContext,
        datapath: &Datapath,
    ) -> Result<EventOutcome, ManagerError> {
        match event {
            DeviceEvent::Leave { device_id } => {
                let Some(previous) = self.state.installed.remove(device_id) else {
                    return Ok(EventOutcome::LeaveUnknownDevice {
                        device_id: device_id.clone(),
                    });
                };
                for rule in &previous.rules {
                    datapath.delete_rule(&rule.key);
                }
                Ok(EventOutcome::Left {
                    device_id: device_id.clone(),
                    removed_rules: previous.rules.len(),
                })
            }
            DeviceEvent::Join {
                device_id,
                mud_url,
                addresses,
            } => {
                let text = self.fetch_mud(mud_url)?;

                let parse_start = Instant::now();
                let mud: MudFile = parse_mud_file(&text)?;
                let parse_ms = parse_start.elapsed().as_secs_f64() * 1e3;

                let ctx = DeviceContext {
                    device_id: device_id.clone(),
                    device_addresses: if addresses.is_empty() {
                        base_ctx.device_addresses.clone()
                    } else {
                        addresses.clone()
                    },
                    dns_map: base_ctx.dns_map.clone(),
                };

                let enforce_start = Instant::now();
                let compiled = compile_with_window(&mud, &ctx, self.window_secs)?;
                self.swap_rules(device_id, &compiled.rules, datapath)?;
                let enforce_ms = enforce_start.elapsed().as_secs_f64() * 1e3;

                let policies = InstalledPolicies {
                    rules: compiled.rules,
                    default_drops: compiled.default_drops,
                };
                let count = policies.policy_count();
                self.state.installed.insert(device_id.clone(), policies);
                Ok(EventOutcome::Joined {
                    device_id: device_id.clone(),
                    policies: count,
                    warnings: compiled.warnings,
                    timing: TimingRecord {
                        parse_ms,
                        enforce_ms,
                    },
                })
            }
        }
    }

    /// Replaces a device's datapath rules with `new_rules`. On a capacity
    /// failure every change is undone before the error surfaces.
    fn swap_rules(
        &mut self,
        device_id: &str,
        new_rules: &[FlowRule],
        datapath: &Datapath,
    ) -> Result<(), ManagerError> {
        let old_rules = self
            .state
            .installed
            .get(device_id)
            .map(|p| p.rules.clone())
            .unwrap_or_default();
        for rule in &old_rules {
            datapath.delete_rule(&rule.key);
        }

        let mut inserted = Vec::new();
        for rule in new_rules {
            match datapath.insert_rule(rule) {
                Ok(()) => inserted.push(rule.key),
                Err(e) => {
                    for key in &inserted {
                        datapath.delete_rule(key);
                    }
                    for rule in &old_rules {
                        datapath
                            .insert_rule(rule)
                            .expect("previous rules fit before the swap");
                    }
                    return Err(e.into());
                }
            }
        }
        Ok(())
    }
}

/// Reads a JSON events file: a list of join/leave records.
pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<DeviceEvent>, ManagerError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ManagerError::Fetch {
        url: "events file".to_string(),
        detail: e.to_string(),
    })
}
