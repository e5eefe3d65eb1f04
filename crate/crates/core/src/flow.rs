//! Five-tuple connection tracking with retransmission-filtered payload
//! accounting.
//!
//! Each flow keeps one `next_expected_seq` cursor per direction. A payload
//! packet contributes only the bytes beyond the cursor, so duplicated and
//! partially overlapping retransmissions are never double-counted. Data
//! beyond the cursor (out-of-order arrival) is accepted immediately and the
//! cursor jumps past it; gap bytes arriving later count as retransmissions.
//! All sequence comparisons use signed 32-bit serial arithmetic, so streams
//! crossing the 2^32 wrap are handled transparently.

use std::collections::HashMap;
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::packet::{FiveTuple, PacketRecord};

/// Opaque flow identifier, assigned in order of first appearance.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct FlowId(pub u64);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpiStatus {
    Pending,
    Video,
    NonVideo,
}

/// Packet direction relative to the flow's canonical orientation.
/// Downstream is server to client, the direction video data travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Downstream,
    Upstream,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub id: FlowId,
    /// Canonical orientation: src = server, dst = client.
    pub tuple: FiveTuple,
    pub dpi_status: DpiStatus,
    /// SNI hostname once resolved, kept for session grouping.
    pub hostname: Option<String>,
    pub accepted_bytes_total: u64,
    pub last_activity: f64,
    down_cursor: Option<u32>,
    up_cursor: Option<u32>,
}

/// a <= b in 32-bit sequence space (RFC 1982 style signed distance).
fn seq_leq(a: u32, b: u32) -> bool {
    b.wrapping_sub(a) as i32 >= 0
}

/// Advance a direction cursor past newly seen payload, returning the number
/// of not-previously-accepted bytes.
fn advance_cursor(cursor: &mut Option<u32>, seq: u32, len: u32) -> u64 {
    let end = seq.wrapping_add(len);
    let cur = match *cursor {
        Some(c) => c,
        None => {
            *cursor = Some(end);
            return u64::from(len);
        }
    };
    if seq_leq(end, cur) {
        // Everything at or before the cursor: full retransmission.
        return 0;
    }
    let new = if seq_leq(cur, seq) {
        // In-order data, or out-of-order data beyond the cursor: take it all.
        u64::from(len)
    } else {
        // Straddles the cursor: only the suffix is new.
        u64::from(end.wrapping_sub(cur))
    };
    *cursor = Some(end);
    new
}

impl FlowState {
    pub fn direction_of(&self, tuple: &FiveTuple) -> Direction {
        if *tuple == self.tuple {
            Direction::Downstream
        } else {
            Direction::Upstream
        }
    }

    pub fn client_addr(&self) -> IpAddr {
        self.tuple.dst_addr
    }

    pub fn server_addr(&self) -> IpAddr {
        self.tuple.src_addr
    }

    /// Count the payload bytes of `pkt` not previously accepted in its
    /// direction, updating the sequence cursor, byte total and activity
    /// clock. UDP payload (no seq) is counted unconditionally. A SYN pins
    /// the cursor to seq+1 so the first data segment is tracked exactly.
    pub fn accept_payload(&mut self, pkt: &PacketRecord) -> u64 {
        self.last_activity = pkt.ts;
        let dir = self.direction_of(&pkt.tuple);
        let seq = match pkt.seq {
            Some(s) => s,
            None => {
                let n = u64::from(pkt.payload_len);
                self.accepted_bytes_total += n;
                return n;
            }
        };
        let cursor = match dir {
            Direction::Downstream => &mut self.down_cursor,
            Direction::Upstream => &mut self.up_cursor,
        };
        if pkt.flags.syn {
            if cursor.is_none() {
                *cursor = Some(seq.wrapping_add(1));
            }
            return 0;
        }
        if pkt.payload_len == 0 {
            return 0;
        }
        let new = advance_cursor(cursor, seq, pkt.payload_len);
        self.accepted_bytes_total += new;
        new
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FlowConfig {
    pub idle_timeout_s: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { idle_timeout_s: 60.0 }
    }
}

/// Connection table keyed by five-tuple in either direction.
#[derive(Debug, Default)]
pub struct ConnectionTable {
    index: HashMap<FiveTuple, FlowId>,
    flows: HashMap<FlowId, FlowState>,
    next: u64,
}

impl ConnectionTable {
    pub fn new() -> Self {
        ConnectionTable::default()
    }

    /// Find the flow for `pkt`, matching the tuple or its reverse; create a
    /// new pending flow otherwise. The side sending the first SYN is the
    /// client; without a visible handshake the first sender is assumed to
    /// be the client.
    pub fn match_connection(&mut self, pkt: &PacketRecord) -> (FlowId, bool) {
        if let Some(&id) = self.index.get(&pkt.tuple) {
            return (id, false);
        }
        let canonical = if pkt.flags.syn && pkt.flags.ack {
            pkt.tuple
        } else {
            pkt.tuple.reversed()
        };
        let id = FlowId(self.next);
        self.next += 1;
        self.index.insert(canonical, id);
        self.index.insert(canonical.reversed(), id);
        self.flows.insert(
            id,
            FlowState {
                id,
                tuple: canonical,
                dpi_status: DpiStatus::Pending,
                hostname: None,
                accepted_bytes_total: 0,
                last_activity: pkt.ts,
                down_cursor: None,
                up_cursor: None,
            },
        );
        (id, true)
    }

    pub fn get(&self, id: FlowId) -> Option<&FlowState> {
        self.flows.get(&id)
    }

    pub fn get_mut(&mut self, id: FlowId) -> Option<&mut FlowState> {
        self.flows.get_mut(&id)
    }

    /// Remove and return all flows idle longer than `idle_timeout`, ordered
    /// by flow id. Callers flush evicted video flows into the feature
    /// extractor.
    pub fn expire_flows(&mut self, now: f64, idle_timeout: f64) -> Vec<FlowState> {
        let mut ids: Vec<FlowId> = self
            .flows
            .iter()
            .filter(|(_, st)| now - st.last_activity > idle_timeout)
            .map(|(&id, _)| id)
            .collect();
        ids.sort();
        ids.into_iter().map(|id| self.remove(id)).collect()
    }

    /// Remove and return every remaining flow, ordered by flow id.
    pub fn drain(&mut self) -> Vec<FlowState> {
        let mut ids: Vec<FlowId> = self.flows.keys().copied().collect();
        ids.sort();
        ids.into_iter().map(|id| self.remove(id)).collect()
    }

    fn remove(&mut self, id: FlowId) -> FlowState {
        let st = self.flows.remove(&id).expect("flow exists");
        self.index.remove(&st.tuple);
        self.index.remove(&st.tuple.reversed());
        st
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}
