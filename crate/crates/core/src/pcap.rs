//! pcap/pcapng ingestion (Ethernet link type) and classic pcap emission.
//!
//! Decoding covers IPv4/IPv6 over Ethernet (VLAN tags skipped) carrying
//! TCP or UDP. Non-first IP fragments are dropped, checksums are not
//! validated, and only header fields plus the TCP payload bytes are
//! surfaced; the pipeline retains payload solely for ClientHello
//! inspection.

use std::fs;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use thiserror::Error;

use crate::packet::{FiveTuple, PacketRecord, TcpFlags, Transport};

#[derive(Debug, Error)]
pub enum PcapError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a pcap or pcapng file")]
    BadMagic,
    #[error("truncated file at offset {0}")]
    Truncated(usize),
    #[error("unsupported link type {0}")]
    UnsupportedLinkType(u32),
}

const LINKTYPE_ETHERNET: u32 = 1;

fn rd_u16(buf: &[u8], at: usize, le: bool) -> Option<u16> {
    let b = buf.get(at..at + 2)?;
    let b = [b[0], b[1]];
    Some(if le { u16::from_le_bytes(b) } else { u16::from_be_bytes(b) })
}

fn rd_u32(buf: &[u8], at: usize, le: bool) -> Option<u32> {
    let b = buf.get(at..at + 4)?;
    let b = [b[0], b[1], b[2], b[3]];
    Some(if le { u32::from_le_bytes(b) } else { u32::from_be_bytes(b) })
}

pub fn read_pcap_file(path: &Path) -> Result<Vec<PacketRecord>, PcapError> {
    let bytes = fs::read(path)?;
    read_pcap_bytes(&bytes)
}

pub fn read_pcap_bytes(bytes: &[u8]) -> Result<Vec<PacketRecord>, PcapError> {
    if bytes.len() >= 4 && bytes[..4] == [0x0a, 0x0d, 0x0d, 0x0a] {
        return read_pcapng(bytes);
    }
    read_pcap_classic(bytes)
}

fn read_pcap_classic(bytes: &[u8]) -> Result<Vec<PacketRecord>, PcapError> {
    let magic = rd_u32(bytes, 0, true).ok_or(PcapError::BadMagic)?;
    let (le, ns) = match magic {
        0xa1b2c3d4 => (true, false),
        0xa1b23c4d => (true, true),
        0xd4c3b2a1 => (false, false),
        0x4d3cb2a1 => (false, true),
        _ => return Err(PcapError::BadMagic),
    };
    let linktype = rd_u32(bytes, 20, le).ok_or(PcapError::Truncated(20))?;
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinkType(linktype));
    }
    let mut records = Vec::new();
    let mut pos = 24usize;
    while pos < bytes.len() {
        let sec = rd_u32(bytes, pos, le).ok_or(PcapError::Truncated(pos))?;
        let frac = rd_u32(bytes, pos + 4, le).ok_or(PcapError::Truncated(pos))?;
        let incl = rd_u32(bytes, pos + 8, le).ok_or(PcapError::Truncated(pos))? as usize;
        let data =
            bytes.get(pos + 16..pos + 16 + incl).ok_or(PcapError::Truncated(pos + 16))?;
        let denom = if ns { 1e9 } else { 1e6 };
        let ts = sec as f64 + frac as f64 / denom;
        if let Some(rec) = decode_ethernet(ts, data) {
            records.push(rec);
        }
        pos += 16 + incl;
    }
    Ok(records)
}

fn read_pcapng(bytes: &[u8]) -> Result<Vec<PacketRecord>, PcapError> {
    let mut records = Vec::new();
    let mut pos = 0usize;
    let mut le = true;
    // per-interface timestamp resolution divisor, default microseconds
    let mut tsresol: Vec<f64> = Vec::new();
    while pos + 12 <= bytes.len() {
        let block_type_raw = rd_u32(bytes, pos, le).ok_or(PcapError::Truncated(pos))?;
        // Section header: re-detect endianness from the byte-order magic.
        if bytes[pos..pos + 4] == [0x0a, 0x0d, 0x0d, 0x0a] {
            let bom = rd_u32(bytes, pos + 8, true).ok_or(PcapError::Truncated(pos))?;
            le = bom == 0x1a2b3c4d;
            tsresol.clear();
            let total = rd_u32(bytes, pos + 4, le).ok_or(PcapError::Truncated(pos))? as usize;
            if total < 12 || pos + total > bytes.len() {
                return Err(PcapError::Truncated(pos));
            }
            pos += total;
            continue;
        }
        let total = rd_u32(bytes, pos + 4, le).ok_or(PcapError::Truncated(pos))? as usize;
        if total < 12 || pos + total > bytes.len() {
            return Err(PcapError::Truncated(pos));
        }
        let body = &bytes[pos + 8..pos + total - 4];
        match block_type_raw {
            0x0000_0001 => {
                // Interface description: linktype + options (if_tsresol)
                let linktype = rd_u16(body, 0, le).ok_or(PcapError::Truncated(pos))? as u32;
                if linktype != LINKTYPE_ETHERNET {
                    return Err(PcapError::UnsupportedLinkType(linktype));
                }
                let mut resol = 1e6f64;
                let mut opt = 8usize;
                while opt + 4 <= body.len() {
                    let code = rd_u16(body, opt, le).unwrap_or(0);
                    let len = rd_u16(body, opt + 2, le).unwrap_or(0) as usize;
                    if code == 0 {
                        break;
                    }
                    if code == 9 && len == 1 {
                        let v = body[opt + 4];
                        resol = if v & 0x80 == 0 {
                            10f64.powi((v & 0x7f) as i32)
                        } else {
                            2f64.powi((v & 0x7f) as i32)
                        };
                    }
                    opt += 4 + len.div_ceil(4) * 4;
                }
                tsresol.push(resol);
            }
            0x0000_0006 => {
                // Enhanced packet block
                let iface = rd_u32(body, 0, le).ok_or(PcapError::Truncated(pos))? as usize;
                let high = rd_u32(body, 4, le).ok_or(PcapError::Truncated(pos))? as u64;
                let low = rd_u32(body, 8, le).ok_or(PcapError::Truncated(pos))? as u64;
                let cap = rd_u32(body, 12, le).ok_or(PcapError::Truncated(pos))? as usize;
                let data = body.get(20..20 + cap).ok_or(PcapError::Truncated(pos))?;
                let resol = tsresol.get(iface).copied().unwrap_or(1e6);
                let ts = ((high << 32) | low) as f64 / resol;
                if let Some(rec) = decode_ethernet(ts, data) {
                    records.push(rec);
                }
            }
            0x0000_0003 => {
                // Simple packet block: original length then data, no timestamp
                let data = body.get(4..).ok_or(PcapError::Truncated(pos))?;
                if let Some(rec) = decode_ethernet(0.0, data) {
                    records.push(rec);
                }
            }
            _ => {}
        }
        pos += total;
    }
    Ok(records)
}

fn decode_ethernet(ts: f64, frame: &[u8]) -> Option<PacketRecord> {
    let mut ethertype = u16::from_be_bytes([*frame.get(12)?, *frame.get(13)?]);
    let mut off = 14usize;
    while ethertype == 0x8100 || ethertype == 0x88a8 {
        ethertype = u16::from_be_bytes([*frame.get(off + 2)?, *frame.get(off + 3)?]);
        off += 4;
    }
    match ethertype {
        0x0800 => decode_ipv4(ts, frame.get(off..)?),
        0x86dd => decode_ipv6(ts, frame.get(off..)?),
        _ => None,
    }
}

fn decode_ipv4(ts: f64, pkt: &[u8]) -> Option<PacketRecord> {
    if pkt.len() < 20 || pkt[0] >> 4 != 4 {
        return None;
    }
    let ihl = ((pkt[0] & 0x0f) as usize) * 4;
    if ihl < 20 || pkt.len() < ihl {
        return None;
    }
    let total_len = u16::from_be_bytes([pkt[2], pkt[3]]) as usize;
    let frag = u16::from_be_bytes([pkt[6], pkt[7]]);
    if frag & 0x1fff != 0 {
        return None; // non-first fragment
    }
    let proto = pkt[9];
    let src = IpAddr::V4(Ipv4Addr::new(pkt[12], pkt[13], pkt[14], pkt[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(pkt[16], pkt[17], pkt[18], pkt[19]));
    let end = total_len.clamp(ihl, pkt.len());
    decode_transport(ts, proto, src, dst, &pkt[ihl..end])
}

fn decode_ipv6(ts: f64, pkt: &[u8]) -> Option<PacketRecord> {
    if pkt.len() < 40 || pkt[0] >> 4 != 6 {
        return None;
    }
    let payload_len = u16::from_be_bytes([pkt[4], pkt[5]]) as usize;
    let mut next = pkt[6];
    let src_bytes: [u8; 16] = pkt[8..24].try_into().ok()?;
    let dst_bytes: [u8; 16] = pkt[24..40].try_into().ok()?;
    let src = IpAddr::V6(Ipv6Addr::from(src_bytes));
    let dst = IpAddr::V6(Ipv6Addr::from(dst_bytes));
    let end = (40 + payload_len).min(pkt.len());
    let mut off = 40usize;
    loop {
        match next {
            0 | 43 | 60 => {
                let h = pkt.get(off..off + 2)?;
                next = h[0];
                off += (h[1] as usize + 1) * 8;
                if off > end {
                    return None;
                }
            }
            44 => {
                let h = pkt.get(off..off + 8)?;
                let frag_off = u16::from_be_bytes([h[2], h[3]]) >> 3;
                if frag_off != 0 {
                    return None;
                }
                next = h[0];
                off += 8;
            }
            _ => break,
        }
    }
    decode_transport(ts, next, src, dst, pkt.get(off..end)?)
}

fn decode_transport(
    ts: f64,
    proto: u8,
    src_addr: IpAddr,
    dst_addr: IpAddr,
    seg: &[u8],
) -> Option<PacketRecord> {
    match proto {
        6 => {
            if seg.len() < 20 {
                return None;
            }
            let data_off = ((seg[12] >> 4) as usize) * 4;
            if data_off < 20 || seg.len() < data_off {
                return None;
            }
            let fl = seg[13];
            let flags = TcpFlags {
                fin: fl & 0x01 != 0,
                syn: fl & 0x02 != 0,
                rst: fl & 0x04 != 0,
                psh: fl & 0x08 != 0,
                ack: fl & 0x10 != 0,
            };
            let payload = &seg[data_off..];
            Some(PacketRecord {
                ts,
                tuple: FiveTuple {
                    transport: Transport::Tcp,
                    src_addr,
                    dst_addr,
                    src_port: u16::from_be_bytes([seg[0], seg[1]]),
                    dst_port: u16::from_be_bytes([seg[2], seg[3]]),
                },
                seq: Some(u32::from_be_bytes([seg[4], seg[5], seg[6], seg[7]])),
                ack: flags
                    .ack
                    .then(|| u32::from_be_bytes([seg[8], seg[9], seg[10], seg[11]])),
                payload_len: payload.len() as u32,
                flags,
                payload: (!payload.is_empty()).then(|| payload.to_vec()),
            })
        }
        17 => {
            if seg.len() < 8 {
                return None;
            }
            let declared = u16::from_be_bytes([seg[4], seg[5]]) as usize;
            let payload_len = declared.saturating_sub(8).min(seg.len().saturating_sub(8));
            Some(PacketRecord {
                ts,
                tuple: FiveTuple {
                    transport: Transport::Udp,
                    src_addr,
                    dst_addr,
                    src_port: u16::from_be_bytes([seg[0], seg[1]]),
                    dst_port: u16::from_be_bytes([seg[2], seg[3]]),
                },
                seq: None,
                ack: None,
                payload_len: payload_len as u32,
                flags: TcpFlags::default(),
                payload: None,
            })
        }
        _ => None,
    }
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in header.chunks(2) {
        let v = if chunk.len() == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            u16::from_be_bytes([chunk[0], 0])
        };
        sum += u32::from(v);
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Write records as a classic little-endian microsecond pcap, Ethernet
/// link type. Data packets without retained payload are padded with zero
/// filler to their declared length.
pub fn write_pcap_file(path: &Path, records: &[PacketRecord]) -> Result<(), PcapError> {
    fs::write(path, write_pcap_bytes(records))?;
    Ok(())
}

pub fn write_pcap_bytes(records: &[PacketRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + records.len() * 128);
    out.extend_from_slice(&0xa1b2c3d4u32.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&[0; 8]); // thiszone, sigfigs
    out.extend_from_slice(&65535u32.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for r in records {
        let frame = encode_frame(r);
        let total_us = (r.ts * 1e6).round() as u64;
        out.extend_from_slice(&((total_us / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((total_us % 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        out.extend_from_slice(&(frame.len() as u32).to_le_bytes());
        out.extend_from_slice(&frame);
    }
    out
}

fn encode_frame(r: &PacketRecord) -> Vec<u8> {
    let mut payload = match &r.payload {
        Some(p) => p.clone(),
        None => vec![0u8; r.payload_len as usize],
    };
    payload.resize(r.payload_len as usize, 0);

    let transport = match r.tuple.transport {
        Transport::Tcp => {
            let mut t = Vec::with_capacity(20 + payload.len());
            t.extend_from_slice(&r.tuple.src_port.to_be_bytes());
            t.extend_from_slice(&r.tuple.dst_port.to_be_bytes());
            t.extend_from_slice(&r.seq.unwrap_or(0).to_be_bytes());
            t.extend_from_slice(&r.ack.unwrap_or(0).to_be_bytes());
            t.push(5 << 4);
            let mut fl = 0u8;
            if r.flags.fin {
                fl |= 0x01;
            }
            if r.flags.syn {
                fl |= 0x02;
            }
            if r.flags.rst {
                fl |= 0x04;
            }
            if r.flags.psh {
                fl |= 0x08;
            }
            if r.flags.ack {
                fl |= 0x10;
            }
            t.push(fl);
            t.extend_from_slice(&0xffffu16.to_be_bytes()); // window
            t.extend_from_slice(&[0; 4]); // checksum, urgent
            t.extend_from_slice(&payload);
            t
        }
        Transport::Udp => {
            let mut t = Vec::with_capacity(8 + payload.len());
            t.extend_from_slice(&r.tuple.src_port.to_be_bytes());
            t.extend_from_slice(&r.tuple.dst_port.to_be_bytes());
            t.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
            t.extend_from_slice(&[0; 2]);
            t.extend_from_slice(&payload);
            t
        }
    };

    let proto = match r.tuple.transport {
        Transport::Tcp => 6u8,
        Transport::Udp => 17u8,
    };
    let (ip, ethertype) = match (r.tuple.src_addr, r.tuple.dst_addr) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            let mut h = Vec::with_capacity(20 + transport.len());
            h.push(0x45);
            h.push(0);
            h.extend_from_slice(&((20 + transport.len()) as u16).to_be_bytes());
            h.extend_from_slice(&[0, 0, 0x40, 0]); // id, DF
            h.push(64);
            h.push(proto);
            h.extend_from_slice(&[0, 0]); // checksum placeholder
            h.extend_from_slice(&s.octets());
            h.extend_from_slice(&d.octets());
            let ck = ipv4_checksum(&h).to_be_bytes();
            h[10] = ck[0];
            h[11] = ck[1];
            h.extend_from_slice(&transport);
            (h, 0x0800u16)
        }
        _ => {
            let s = match r.tuple.src_addr {
                IpAddr::V6(a) => a,
                IpAddr::V4(a) => a.to_ipv6_mapped(),
            };
            let d = match r.tuple.dst_addr {
                IpAddr::V6(a) => a,
                IpAddr::V4(a) => a.to_ipv6_mapped(),
            };
            let mut h = Vec::with_capacity(40 + transport.len());
            h.extend_from_slice(&0x6000_0000u32.to_be_bytes());
            h.extend_from_slice(&(transport.len() as u16).to_be_bytes());
            h.push(proto);
            h.push(64);
            h.extend_from_slice(&s.octets());
            h.extend_from_slice(&d.octets());
            h.extend_from_slice(&transport);
            (h, 0x86ddu16)
        }
    };

    let mut frame = Vec::with_capacity(14 + ip.len());
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    frame.extend_from_slice(&ethertype.to_be_bytes());
    frame.extend_from_slice(&ip);
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<PacketRecord> {
        let tuple = FiveTuple {
            transport: Transport::Tcp,
            src_addr: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            dst_addr: IpAddr::V4(Ipv4Addr::new(203, 0, 113, 5)),
            src_port: 51000,
            dst_port: 443,
        };
        vec![
            PacketRecord {
                ts: 0.000001,
                tuple,
                seq: Some(1000),
                ack: None,
                payload_len: 0,
                flags: TcpFlags::SYN,
                payload: None,
            },
            PacketRecord {
                ts: 1.25,
                tuple: tuple.reversed(),
                seq: Some(5000),
                ack: Some(1001),
                payload_len: 4,
                flags: TcpFlags::psh_ack(),
                payload: Some(vec![0xde, 0xad, 0xbe, 0xef]),
            },
            PacketRecord {
                ts: 2.5,
                tuple,
                seq: Some(1001),
                ack: Some(5004),
                payload_len: 1460,
                flags: TcpFlags::ACK,
                payload: None,
            },
        ]
    }

    #[test]
    fn classic_round_trip_preserves_headers() {
        let records = sample_records();
        let bytes = write_pcap_bytes(&records);
        let back = read_pcap_bytes(&bytes).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.ts, b.ts);
            assert_eq!(a.tuple, b.tuple);
            assert_eq!(a.seq, b.seq);
            assert_eq!(a.ack, b.ack);
            assert_eq!(a.payload_len, b.payload_len);
            assert_eq!(a.flags, b.flags);
        }
        // retained payload comes back verbatim
        assert_eq!(back[1].payload.as_deref(), Some(&[0xde, 0xad, 0xbe, 0xef][..]));
        // filler payload is materialized to the declared length
        assert_eq!(back[2].payload.as_ref().map(|p| p.len()), Some(1460));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(matches!(read_pcap_bytes(&[1, 2, 3, 4, 5, 6]), Err(PcapError::BadMagic)));
    }

    #[test]
    fn ipv6_frame_round_trips() {
        let tuple = FiveTuple {
            transport: Transport::Tcp,
            src_addr: "2001:db8::1".parse().unwrap(),
            dst_addr: "2001:db8::2".parse().unwrap(),
            src_port: 443,
            dst_port: 50000,
        };
        let rec = PacketRecord {
            ts: 3.5,
            tuple,
            seq: Some(7),
            ack: None,
            payload_len: 10,
            flags: TcpFlags::default(),
            payload: None,
        };
        let back = read_pcap_bytes(&write_pcap_bytes(&[rec.clone()])).unwrap();
        assert_eq!(back[0].tuple, rec.tuple);
        assert_eq!(back[0].payload_len, 10);
    }
}
