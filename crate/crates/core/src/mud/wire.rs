//! Serde mapping between the RFC 8520 JSON layout and the domain model.
//!
//! Unknown keys are tolerated everywhere; at the `ietf-mud:mud` container,
//! the `matches` object and the `actions` object they are additionally
//! captured and re-emitted, so vendor extensions survive a round trip.

use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    parse_rate, Ace, Acl, ActionGroup, AddressFamily, Forwarding, MatchCriteria, MudError,
    MudFile, PortMatch, PortRole,
};
use crate::flow::{Direction, Protocol};

#[derive(Debug, Serialize, Deserialize)]
pub(super) struct Document {
    #[serde(rename = "ietf-mud:mud")]
    mud: MudContainer,
    #[serde(rename = "ietf-access-control-list:acls", default)]
    acls: AclContainer,
}

#[derive(Debug, Serialize, Deserialize)]
struct MudContainer {
    #[serde(rename = "mud-version")]
    mud_version: u32,
    #[serde(rename = "mud-url")]
    mud_url: String,
    #[serde(rename = "last-update")]
    last_update: String,
    #[serde(rename = "cache-validity", skip_serializing_if = "Option::is_none")]
    cache_validity: Option<u32>,
    #[serde(rename = "is-supported")]
    is_supported: bool,
    #[serde(rename = "systeminfo", skip_serializing_if = "Option::is_none")]
    system_info: Option<String>,
    #[serde(rename = "from-device-policy", skip_serializing_if = "Option::is_none")]
    from_device_policy: Option<Policy>,
    #[serde(rename = "to-device-policy", skip_serializing_if = "Option::is_none")]
    to_device_policy: Option<Policy>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Policy {
    #[serde(rename = "access-lists")]
    access_lists: AccessLists,
}

#[derive(Debug, Serialize, Deserialize)]
struct AccessLists {
    #[serde(rename = "access-list", default)]
    access_list: Vec<AclRef>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AclRef {
    name: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AclContainer {
    #[serde(default)]
    acl: Vec<WireAcl>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireAcl {
    name: String,
    #[serde(rename = "type")]
    acl_type: String,
    #[serde(default)]
    aces: AceContainer,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AceContainer {
    #[serde(default)]
    ace: Vec<WireAce>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireAce {
    name: String,
    #[serde(default)]
    matches: WireMatches,
    actions: WireActions,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireMatches {
    #[serde(skip_serializing_if = "Option::is_none")]
    ipv4: Option<IpMatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ipv6: Option<IpMatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tcp: Option<L4Match>,
    #[serde(skip_serializing_if = "Option::is_none")]
    udp: Option<L4Match>,
    #[serde(skip_serializing_if = "Option::is_none")]
    icmp: Option<Value>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IpMatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    protocol: Option<u8>,
    #[serde(rename = "ietf-acldns:src-dnsname", skip_serializing_if = "Option::is_none")]
    src_dnsname: Option<String>,
    #[serde(rename = "ietf-acldns:dst-dnsname", skip_serializing_if = "Option::is_none")]
    dst_dnsname: Option<String>,
    #[serde(rename = "source-ipv4-network", skip_serializing_if = "Option::is_none")]
    src_v4: Option<String>,
    #[serde(rename = "destination-ipv4-network", skip_serializing_if = "Option::is_none")]
    dst_v4: Option<String>,
    #[serde(rename = "source-ipv6-network", skip_serializing_if = "Option::is_none")]
    src_v6: Option<String>,
    #[serde(rename = "destination-ipv6-network", skip_serializing_if = "Option::is_none")]
    dst_v6: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct L4Match {
    #[serde(rename = "ietf-mud:direction-initiated", skip_serializing_if = "Option::is_none")]
    direction_initiated: Option<String>,
    #[serde(rename = "source-port", skip_serializing_if = "Option::is_none")]
    source_port: Option<WirePort>,
    #[serde(rename = "destination-port", skip_serializing_if = "Option::is_none")]
    destination_port: Option<WirePort>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WirePort {
    #[serde(skip_serializing_if = "Option::is_none")]
    operator: Option<String>,
    port: u16,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireActions {
    #[serde(rename = "packet-rate", skip_serializing_if = "Option::is_none")]
    packet_rate: Option<String>,
    #[serde(rename = "byte-rate", skip_serializing_if = "Option::is_none")]
    byte_rate: Option<String>,
    forwarding: String,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

fn policy_names(policy: &Option<Policy>) -> Vec<String> {
    policy
        .as_ref()
        .map(|p| p.access_lists.access_list.iter().map(|r| r.name.clone()).collect())
        .unwrap_or_default()
}

pub(super) fn into_domain(doc: Document) -> Result<MudFile, MudError> {
    let mud = doc.mud;
    let mut acls = Vec::with_capacity(doc.acls.acl.len());
    for acl in doc.acls.acl {
        acls.push(convert_acl(acl)?);
    }
    Ok(MudFile {
        mud_version: mud.mud_version,
        mud_url: mud.mud_url,
        last_update: mud.last_update,
        cache_validity: mud.cache_validity,
        is_supported: mud.is_supported,
        system_info: mud.system_info,
        from_device_policy: policy_names(&mud.from_device_policy),
        to_device_policy: policy_names(&mud.to_device_policy),
        acls,
        extensions: mud.extra,
    })
}

fn convert_acl(acl: WireAcl) -> Result<Acl, MudError> {
    let family = match acl.acl_type.as_str() {
        "ipv4-acl-type" => AddressFamily::Ipv4,
        "ipv6-acl-type" => AddressFamily::Ipv6,
        other => {
            return Err(MudError::validation(format!(
                "ACL '{}' has unsupported type '{other}'",
                acl.name
            )))
        }
    };
    let mut aces = Vec::with_capacity(acl.aces.ace.len());
    for ace in acl.aces.ace {
        aces.push(convert_ace(ace, &acl.name, family)?);
    }
    Ok(Acl {
        name: acl.name,
        address_family: family,
        aces,
    })
}

fn convert_ace(ace: WireAce, acl_name: &str, family: AddressFamily) -> Result<Ace, MudError> {
    let ctx = format!("ACE '{}' in ACL '{acl_name}'", ace.name);
    let matches = convert_matches(ace.matches, family, &ctx)?;
    let actions = convert_actions(ace.actions, &ctx)?;
    Ok(Ace {
        name: ace.name,
        matches,
        actions,
    })
}

fn convert_matches(
    m: WireMatches,
    family: AddressFamily,
    ctx: &str,
) -> Result<MatchCriteria, MudError> {
    let ip = match (family, &m.ipv4, &m.ipv6) {
        (AddressFamily::Ipv4, _, Some(_)) | (AddressFamily::Ipv6, Some(_), _) => {
            return Err(MudError::validation(format!(
                "{ctx}: IP match family does not agree with the ACL type"
            )))
        }
        (AddressFamily::Ipv4, ip, None) => ip.as_ref(),
        (AddressFamily::Ipv6, None, ip) => ip.as_ref(),
    };

    let mut crit = MatchCriteria::default();

    let mut proto_from_num = None;
    if let Some(ip) = ip {
        if let Some(num) = ip.protocol {
            proto_from_num = Some(match num {
                6 => Protocol::Tcp,
                17 => Protocol::Udp,
                1 | 58 => Protocol::Icmp,
                other => {
                    return Err(MudError::validation(format!(
                        "{ctx}: unsupported IP protocol number {other}"
                    )))
                }
            });
        }
        crit.dns_name = match (&ip.src_dnsname, &ip.dst_dnsname) {
            (Some(_), Some(_)) => {
                return Err(MudError::validation(format!(
                    "{ctx}: at most one DNS name is supported"
                )))
            }
            (s, d) => s.clone().or_else(|| d.clone()),
        };
        crit.src_address = parse_host_addr(&ip.src_v4, &ip.src_v6, family, ctx, "source")?;
        crit.dst_address = parse_host_addr(&ip.dst_v4, &ip.dst_v6, family, ctx, "destination")?;
    }

    let mut proto_from_l4 = None;
    let mut l4 = None;
    if let Some(tcp) = &m.tcp {
        proto_from_l4 = Some(Protocol::Tcp);
        l4 = Some(tcp);
    }
    if let Some(udp) = &m.udp {
        if proto_from_l4.is_some() {
            return Err(MudError::validation(format!(
                "{ctx}: more than one transport match"
            )));
        }
        proto_from_l4 = Some(Protocol::Udp);
        l4 = Some(udp);
    }
    if m.icmp.is_some() {
        if proto_from_l4.is_some() {
            return Err(MudError::validation(format!(
                "{ctx}: more than one transport match"
            )));
        }
        proto_from_l4 = Some(Protocol::Icmp);
    }

    crit.protocol = match (proto_from_num, proto_from_l4) {
        (Some(a), Some(b)) if a != b => {
            return Err(MudError::validation(format!(
                "{ctx}: IP protocol number and transport match disagree ({a} vs {b})"
            )))
        }
        (a, b) => b.or(a),
    };

    if let Some(l4) = l4 {
        if let Some(dir) = &l4.direction_initiated {
            crit.direction_initiated = Some(match dir.as_str() {
                "from-device" => Direction::FromDevice,
                "to-device" => Direction::ToDevice,
                other => {
                    return Err(MudError::validation(format!(
                        "{ctx}: invalid direction-initiated '{other}'"
                    )))
                }
            });
        }
        crit.port = match (&l4.source_port, &l4.destination_port) {
            (Some(_), Some(_)) => {
                return Err(MudError::validation(format!(
                    "{ctx}: both source-port and destination-port are not supported"
                )))
            }
            (Some(p), None) => Some(convert_port(p, PortRole::Source, ctx)?),
            (None, Some(p)) => Some(convert_port(p, PortRole::Destination, ctx)?),
            (None, None) => None,
        };
    }

    crit.extensions = m.extra;
    Ok(crit)
}

fn convert_port(p: &WirePort, role: PortRole, ctx: &str) -> Result<PortMatch, MudError> {
    match p.operator.as_deref() {
        None | Some("eq") => Ok(PortMatch { port: p.port, role }),
        Some(op) => Err(MudError::validation(format!(
            "{ctx}: only the 'eq' port operator is supported, got '{op}'"
        ))),
    }
}

fn parse_host_addr(
    v4: &Option<String>,
    v6: &Option<String>,
    family: AddressFamily,
    ctx: &str,
    endpoint: &str,
) -> Result<Option<IpAddr>, MudError> {
    let (text, expected_prefix) = match (family, v4, v6) {
        (AddressFamily::Ipv4, Some(t), None) => (t, 32),
        (AddressFamily::Ipv6, None, Some(t)) => (t, 128),
        (_, None, None) => return Ok(None),
        _ => {
            return Err(MudError::validation(format!(
                "{ctx}: {endpoint} network family does not agree with the ACL type"
            )))
        }
    };
    let (addr_part, prefix) = match text.split_once('/') {
        Some((a, p)) => {
            let p: u32 = p.parse().map_err(|_| {
                MudError::validation(format!("{ctx}: bad prefix length in '{text}'"))
            })?;
            (a, p)
        }
        None => (text.as_str(), expected_prefix),
    };
    if prefix != expected_prefix {
        return Err(MudError::validation(format!(
            "{ctx}: only host addresses (/{expected_prefix}) are supported, got '{text}'"
        )));
    }
    let addr: IpAddr = addr_part
        .parse()
        .map_err(|_| MudError::validation(format!("{ctx}: bad {endpoint} address '{text}'")))?;
    if !family.matches(&addr) {
        return Err(MudError::validation(format!(
            "{ctx}: {endpoint} address '{text}' family does not agree with the ACL type"
        )));
    }
    Ok(Some(addr))
}

fn convert_actions(a: WireActions, ctx: &str) -> Result<ActionGroup, MudError> {
    let forwarding = match a.forwarding.as_str() {
        "accept" => Forwarding::Accept,
        // REJECT is interpreted as DROP by the manager.
        "drop" | "reject" => Forwarding::Drop,
        other => {
            return Err(MudError::validation(format!(
                "{ctx}: unknown forwarding action '{other}'"
            )))
        }
    };
    Ok(ActionGroup {
        forwarding,
        packet_rate: a.packet_rate.as_deref().map(parse_rate).transpose()?,
        byte_rate: a.byte_rate.as_deref().map(parse_rate).transpose()?,
        extensions: a.extra,
    })
}

pub(super) fn from_domain(mud: &MudFile) -> Document {
    let policy = |names: &[String]| -> Option<Policy> {
        if names.is_empty() {
            None
        } else {
            Some(Policy {
                access_lists: AccessLists {
                    access_list: names.iter().map(|n| AclRef { name: n.clone() }).collect(),
                },
            })
        }
    };

    Document {
        mud: MudContainer {
            mud_version: mud.mud_version,
            mud_url: mud.mud_url.clone(),
            last_update: mud.last_update.clone(),
            cache_validity: mud.cache_validity,
            is_supported: mud.is_supported,
            system_info: mud.system_info.clone(),
            from_device_policy: policy(&mud.from_device_policy),
            to_device_policy: policy(&mud.to_device_policy),
            extra: mud.extensions.clone(),
        },
        acls: AclContainer {
            acl: mud
                .acls
                .iter()
                .map(|acl| wire_acl(acl, mud.acl_direction(&acl.name)))
                .collect(),
        },
    }
}

fn wire_acl(acl: &Acl, direction: Direction) -> WireAcl {
    WireAcl {
        name: acl.name.clone(),
        acl_type: match acl.address_family {
            AddressFamily::Ipv4 => "ipv4-acl-type".to_string(),
            AddressFamily::Ipv6 => "ipv6-acl-type".to_string(),
        },
        aces: AceContainer {
            ace: acl
                .aces
                .iter()
                .map(|ace| wire_ace(ace, acl.address_family, direction))
                .collect(),
        },
    }
}

fn wire_ace(ace: &Ace, family: AddressFamily, direction: Direction) -> WireAce {
    WireAce {
        name: ace.name.clone(),
        matches: wire_matches(&ace.matches, family, direction),
        actions: WireActions {
            packet_rate: ace.actions.packet_rate.map(|r| r.render()),
            byte_rate: ace.actions.byte_rate.map(|r| r.render()),
            forwarding: match ace.actions.forwarding {
                Forwarding::Accept => "accept".to_string(),
                Forwarding::Drop => "drop".to_string(),
            },
            extra: ace.actions.extensions.clone(),
        },
    }
}

fn wire_matches(m: &MatchCriteria, family: AddressFamily, direction: Direction) -> WireMatches {
    let mut ip = IpMatch::default();
    let mut have_ip = false;

    if let Some(proto) = m.protocol {
        ip.protocol = Some(match (proto, family) {
            (Protocol::Tcp, _) => 6,
            (Protocol::Udp, _) => 17,
            (Protocol::Icmp, AddressFamily::Ipv4) => 1,
            (Protocol::Icmp, AddressFamily::Ipv6) => 58,
        });
        have_ip = true;
    }
    if let Some(dns) = &m.dns_name {
        // The DNS name describes the remote endpoint: the destination for
        // from-device rules, the source for to-device rules.
        match direction {
            Direction::FromDevice => ip.dst_dnsname = Some(dns.clone()),
            Direction::ToDevice => ip.src_dnsname = Some(dns.clone()),
        }
        have_ip = true;
    }
    let render = |addr: &IpAddr| match (family, addr) {
        (AddressFamily::Ipv4, a) => format!("{a}/32"),
        (AddressFamily::Ipv6, a) => format!("{a}/128"),
    };
    if let Some(addr) = &m.src_address {
        match family {
            AddressFamily::Ipv4 => ip.src_v4 = Some(render(addr)),
            AddressFamily::Ipv6 => ip.src_v6 = Some(render(addr)),
        }
        have_ip = true;
    }
    if let Some(addr) = &m.dst_address {
        match family {
            AddressFamily::Ipv4 => ip.dst_v4 = Some(render(addr)),
            AddressFamily::Ipv6 => ip.dst_v6 = Some(render(addr)),
        }
        have_ip = true;
    }

    let mut l4 = L4Match::default();
    let mut have_l4 = false;
    if let Some(dir) = m.direction_initiated {
        l4.direction_initiated = Some(dir.as_str().to_string());
        have_l4 = true;
    }
    if let Some(port) = m.port {
        let wire_port = WirePort {
            operator: Some("eq".to_string()),
            port: port.port,
        };
        match port.role {
            PortRole::Source => l4.source_port = Some(wire_port),
            PortRole::Destination => l4.destination_port = Some(wire_port),
        }
        have_l4 = true;
    }

    let mut out = WireMatches {
        extra: m.extensions.clone(),
        ..WireMatches::default()
    };
    if have_ip {
        match family {
            AddressFamily::Ipv4 => out.ipv4 = Some(ip),
            AddressFamily::Ipv6 => out.ipv6 = Some(ip),
        }
    }
    if have_l4 {
        match m.protocol {
            Some(Protocol::Udp) => out.udp = Some(l4),
            // direction-initiated is a TCP-only leaf; default to tcp.
            _ => out.tcp = Some(l4),
        }
    }
    out
}
