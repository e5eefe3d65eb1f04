//! Packet records and the normalized JSONL capture format.

use std::fmt;
use std::io::{BufRead, Write};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

/// Directional five-tuple. The reverse direction is a distinct tuple; the
/// connection table maps both onto one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FiveTuple {
    pub transport: Transport,
    pub src_addr: IpAddr,
    pub dst_addr: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FiveTuple {
    pub fn reversed(&self) -> FiveTuple {
        FiveTuple {
            transport: self.transport,
            src_addr: self.dst_addr,
            dst_addr: self.src_addr,
            src_port: self.dst_port,
            dst_port: self.src_port,
        }
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.transport {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        };
        write!(
            f,
            "{} {}:{} -> {}:{}",
            proto, self.src_addr, self.src_port, self.dst_addr, self.dst_port
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TcpFlags {
    pub syn: bool,
    pub fin: bool,
    pub rst: bool,
    pub ack: bool,
    pub psh: bool,
}

impl TcpFlags {
    pub const SYN: TcpFlags = TcpFlags { syn: true, fin: false, rst: false, ack: false, psh: false };
    pub const ACK: TcpFlags = TcpFlags { syn: false, fin: false, rst: false, ack: true, psh: false };

    pub fn syn_ack() -> TcpFlags {
        TcpFlags { syn: true, ack: true, ..TcpFlags::default() }
    }

    pub fn psh_ack() -> TcpFlags {
        TcpFlags { psh: true, ack: true, ..TcpFlags::default() }
    }

    pub fn fin_ack() -> TcpFlags {
        TcpFlags { fin: true, ack: true, ..TcpFlags::default() }
    }

    /// Compact letter encoding used on the wire: S, F, R, P, A.
    pub fn encode(&self) -> String {
        let mut s = String::new();
        if self.syn {
            s.push('S');
        }
        if self.fin {
            s.push('F');
        }
        if self.rst {
            s.push('R');
        }
        if self.psh {
            s.push('P');
        }
        if self.ack {
            s.push('A');
        }
        s
    }

    pub fn decode(s: &str) -> Result<TcpFlags, PacketError> {
        let mut flags = TcpFlags::default();
        for c in s.chars() {
            match c {
                'S' => flags.syn = true,
                'F' => flags.fin = true,
                'R' => flags.rst = true,
                'P' => flags.psh = true,
                'A' => flags.ack = true,
                other => return Err(PacketError::BadFlags(other)),
            }
        }
        Ok(flags)
    }
}

/// One observed packet. `payload` carries raw TCP payload bytes only while
/// they may still be needed for ClientHello inspection; bulk data packets
/// travel with `payload = None` and just a length.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub ts: f64,
    pub tuple: FiveTuple,
    pub seq: Option<u32>,
    pub ack: Option<u32>,
    pub payload_len: u32,
    pub flags: TcpFlags,
    pub payload: Option<Vec<u8>>,
}

#[derive(Debug, Error)]
pub enum PacketError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Json(usize, serde_json::Error),
    #[error("unknown flag letter '{0}'")]
    BadFlags(char),
    #[error("line {0}: bad payload hex")]
    BadHex(usize),
    #[error("line {0}: tcp record missing seq")]
    MissingSeq(usize),
}

/// Wire form of one JSONL record.
#[derive(Serialize, Deserialize)]
struct WireRecord {
    ts: f64,
    proto: Transport,
    src_ip: IpAddr,
    src_port: u16,
    dst_ip: IpAddr,
    dst_port: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ack: Option<u32>,
    len: u32,
    flags: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
}

pub fn to_jsonl_line(r: &PacketRecord) -> String {
    let wire = WireRecord {
        ts: r.ts,
        proto: r.tuple.transport,
        src_ip: r.tuple.src_addr,
        src_port: r.tuple.src_port,
        dst_ip: r.tuple.dst_addr,
        dst_port: r.tuple.dst_port,
        seq: r.seq,
        ack: r.ack,
        len: r.payload_len,
        flags: r.flags.encode(),
        payload: r.payload.as_deref().map(hex::encode),
    };
    serde_json::to_string(&wire).expect("packet record serializes")
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[PacketRecord]) -> Result<(), PacketError> {
    for r in records {
        writeln!(w, "{}", to_jsonl_line(r))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<PacketRecord>, PacketError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let wire: WireRecord =
            serde_json::from_str(trimmed).map_err(|e| PacketError::Json(lineno, e))?;
        if wire.proto == Transport::Tcp && wire.seq.is_none() {
            return Err(PacketError::MissingSeq(lineno));
        }
        let payload = match wire.payload {
            Some(h) => Some(hex::decode(h).map_err(|_| PacketError::BadHex(lineno))?),
            None => None,
        };
        out.push(PacketRecord {
            ts: wire.ts,
            tuple: FiveTuple {
                transport: wire.proto,
                src_addr: wire.src_ip,
                dst_addr: wire.dst_ip,
                src_port: wire.src_port,
                dst_port: wire.dst_port,
            },
            seq: wire.seq,
            ack: wire.ack,
            payload_len: wire.len,
            flags: TcpFlags::decode(&wire.flags)?,
            payload,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn tuple() -> FiveTuple {
        FiveTuple {
            transport: Transport::Tcp,
            src_addr: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            dst_addr: IpAddr::V4(Ipv4Addr::new(203, 0, 113, 5)),
            src_port: 51000,
            dst_port: 443,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            PacketRecord {
                ts: 0.25,
                tuple: tuple(),
                seq: Some(1000),
                ack: None,
                payload_len: 0,
                flags: TcpFlags::SYN,
                payload: None,
            },
            PacketRecord {
                ts: 0.5,
                tuple: tuple().reversed(),
                seq: Some(77),
                ack: Some(1001),
                payload_len: 3,
                flags: TcpFlags::psh_ack(),
                payload: Some(vec![0x16, 0x03, 0x03]),
            },
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn flags_encode_decode() {
        let f = TcpFlags::syn_ack();
        assert_eq!(f.encode(), "SA");
        assert_eq!(TcpFlags::decode("SA").unwrap(), f);
        assert!(TcpFlags::decode("X").is_err());
    }

    #[test]
    fn reversed_swaps_endpoints() {
        let t = tuple();
        let r = t.reversed();
        assert_eq!(r.src_port, 443);
        assert_eq!(r.dst_port, 51000);
        assert_eq!(r.reversed(), t);
    }
}
