//! Classic pcap file reading and writing (not pcapng).
//!
//! Both the microsecond (0xa1b2c3d4) and nanosecond (0xa1b23c4d) magics are
//! handled, in either byte order. Only Ethernet (linktype 1) captures are
//! accepted.

use std::io::{Read, Write};
use std::path::Path;

use super::ReplayError;

const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;

/// A raw frame with its capture timestamp.
pub type Frame = (Vec<u8>, u64);

/// Reads every record of a classic pcap file as (frame bytes, timestamp ns).
pub fn read_pcap(path: impl AsRef<Path>) -> Result<Vec<Frame>, ReplayError> {
    let data = std::fs::read(path)?;
    read_pcap_bytes(&data)
}

pub fn read_pcap_bytes(data: &[u8]) -> Result<Vec<Frame>, ReplayError> {
    let mut r = data;
    let mut header = [0u8; 24];
    r.read_exact(&mut header)
        .map_err(|_| ReplayError::PcapTruncated("global header"))?;

    let magic_be = u32::from_be_bytes([header[0], header[1], header[2], header[3]]);
    let magic_le = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
    let (swapped, nanos) = match (magic_le, magic_be) {
        (MAGIC_USEC, _) => (false, false),
        (MAGIC_NSEC, _) => (false, true),
        (_, MAGIC_USEC) => (true, false),
        (_, MAGIC_NSEC) => (true, true),
        _ => return Err(ReplayError::PcapMagic { found: magic_le }),
    };
    let u32_at = |bytes: &[u8]| {
        let arr = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if swapped {
            u32::from_be_bytes(arr)
        } else {
            u32::from_le_bytes(arr)
        }
    };

    let linktype = u32_at(&header[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(ReplayError::UnsupportedLinkType { linktype });
    }

    let mut frames = Vec::new();
    while !r.is_empty() {
        let mut rec = [0u8; 16];
        r.read_exact(&mut rec)
            .map_err(|_| ReplayError::PcapTruncated("record header"))?;
        let ts_sec = u32_at(&rec[0..4]) as u64;
        let ts_frac = u32_at(&rec[4..8]) as u64;
        let incl_len = u32_at(&rec[8..12]) as usize;
        let mut frame = vec![0u8; incl_len];
        r.read_exact(&mut frame)
            .map_err(|_| ReplayError::PcapTruncated("record data"))?;
        let ts = ts_sec * 1_000_000_000 + if nanos { ts_frac } else { ts_frac * 1_000 };
        frames.push((frame, ts));
    }
    Ok(frames)
}

/// Writes frames as a nanosecond-resolution classic pcap file.
pub fn write_pcap(path: impl AsRef<Path>, frames: &[Frame]) -> Result<(), ReplayError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&MAGIC_NSEC.to_le_bytes())?;
    f.write_all(&2u16.to_le_bytes())?; // major
    f.write_all(&4u16.to_le_bytes())?; // minor
    f.write_all(&[0u8; 8])?; // thiszone + sigfigs
    f.write_all(&65_535u32.to_le_bytes())?; // snaplen
    f.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
    for (frame, ts) in frames {
        f.write_all(&((ts / 1_000_000_000) as u32).to_le_bytes())?;
        f.write_all(&((ts % 1_000_000_000) as u32).to_le_bytes())?;
        f.write_all(&(frame.len() as u32).to_le_bytes())?;
        f.write_all(&(frame.len() as u32).to_le_bytes())?;
        f.write_all(frame)?;
    }
    Ok(())
}
