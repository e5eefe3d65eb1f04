//! TLS ClientHello inspection: extract the SNI hostname from the first
//! client-to-server payload and gate flows into the video pipeline.
//!
//! Parsing is bounds-checked at every length field and never reads past the
//! supplied bytes. ClientHello messages split across multiple TLS records
//! or TCP segments are reassembled up to a 4 KiB cap before giving up.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TLS_HANDSHAKE: u8 = 0x16;
const CLIENT_HELLO: u8 = 0x01;
const EXT_SERVER_NAME: u16 = 0x0000;
const SNI_HOST_NAME: u8 = 0;

/// Reassembly and message-size cap.
pub const MAX_HELLO_BYTES: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DpiConfig {
    /// Hostname substrings (or suffixes, when `anchored`) that mark a flow
    /// as video traffic.
    pub match_domains: Vec<String>,
    /// Match only whole-label suffixes instead of substrings.
    pub anchored: bool,
}

impl Default for DpiConfig {
    fn default() -> Self {
        DpiConfig {
            match_domains: vec!["googlevideos.com".into(), "googlevideo.com".into()],
            anchored: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SniResult {
    /// Lowercase hostname, absent when the payload is not a ClientHello or
    /// carries no server_name extension.
    pub hostname: Option<String>,
    pub bytes_consumed: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SniError {
    #[error("malformed client hello: {0}")]
    MalformedHello(&'static str),
}

enum HelloParse {
    NotHandshake,
    NotClientHello,
    Incomplete,
    Complete { hostname: Option<String>, bytes_consumed: usize },
    Malformed(&'static str),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], &'static str> {
        if self.remaining() < n {
            return Err("length field exceeds available bytes");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, &'static str> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, &'static str> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
}

fn be16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

/// Walk TLS records, concatenating handshake fragments until one complete
/// ClientHello message is available, then parse its body.
fn parse_client_hello(payload: &[u8]) -> HelloParse {
    if payload.is_empty() {
        return HelloParse::Incomplete;
    }
    if payload[0] != TLS_HANDSHAKE {
        return HelloParse::NotHandshake;
    }
    let mut hs: Vec<u8> = Vec::new();
    let mut pos = 0usize;
    let mut msg_len: Option<usize> = None;
    loop {
        if let Some(l) = msg_len {
            if hs.len() >= 4 + l {
                let consumed = pos;
                return match parse_hello_body(&hs[4..4 + l]) {
                    Ok(hostname) => HelloParse::Complete { hostname, bytes_consumed: consumed },
                    Err(m) => HelloParse::Malformed(m),
                };
            }
        }
        if payload.len() - pos < 5 {
            return HelloParse::Incomplete;
        }
        if payload[pos] != TLS_HANDSHAKE {
            return HelloParse::Malformed("non-handshake record before hello completed");
        }
        let version = be16(&payload[pos + 1..]);
        if !(0x0301..=0x0303).contains(&version) {
            return if pos == 0 {
                HelloParse::NotHandshake
            } else {
                HelloParse::Malformed("bad record version")
            };
        }
        let rec_len = be16(&payload[pos + 3..]) as usize;
        if rec_len == 0 {
            return HelloParse::Malformed("empty handshake record");
        }
        if payload.len() - pos - 5 < rec_len {
            return HelloParse::Incomplete;
        }
        hs.extend_from_slice(&payload[pos + 5..pos + 5 + rec_len]);
        pos += 5 + rec_len;
        if msg_len.is_none() && hs.len() >= 4 {
            if hs[0] != CLIENT_HELLO {
                return HelloParse::NotClientHello;
            }
            let l = ((hs[1] as usize) << 16) | ((hs[2] as usize) << 8) | hs[3] as usize;
            if 4 + l > MAX_HELLO_BYTES {
                return HelloParse::Malformed("client hello larger than cap");
            }
            msg_len = Some(l);
        }
        if hs.len() > MAX_HELLO_BYTES {
            return HelloParse::Malformed("client hello larger than cap");
        }
    }
}

fn parse_hello_body(body: &[u8]) -> Result<Option<String>, &'static str> {
    let mut r = Reader::new(body);
    r.u16()?; // client_version
    r.take(32)?; // random
    let sid_len = r.u8()? as usize;
    if sid_len > 32 {
        return Err("session id too long");
    }
    r.take(sid_len)?;
    let cs_len = r.u16()? as usize;
    if cs_len == 0 || cs_len % 2 != 0 {
        return Err("bad cipher suite length");
    }
    r.take(cs_len)?;
    let comp_len = r.u8()? as usize;
    if comp_len == 0 {
        return Err("bad compression length");
    }
    r.take(comp_len)?;
    if r.remaining() == 0 {
        return Ok(None); // legacy hello without extensions
    }
    let ext_total = r.u16()? as usize;
    if ext_total != r.remaining() {
        return Err("extension block length mismatch");
    }
    while r.remaining() > 0 {
        let ext_type = r.u16()?;
        let ext_len = r.u16()? as usize;
        let data = r.take(ext_len)?;
        if ext_type == EXT_SERVER_NAME {
            let mut er = Reader::new(data);
            let list_len = er.u16()? as usize;
            if list_len != er.remaining() {
                return Err("server name list length mismatch");
            }
            while er.remaining() > 0 {
                let name_type = er.u8()?;
                let name_len = er.u16()? as usize;
                let name = er.take(name_len)?;
                if name_type == SNI_HOST_NAME {
                    if name.is_empty() {
                        return Err("empty server name");
                    }
                    if name.contains(&0) {
                        return Err("NUL byte in server name");
                    }
                    let s = std::str::from_utf8(name).map_err(|_| "server name not ascii")?;
                    if !s.is_ascii() {
                        return Err("server name not ascii");
                    }
                    return Ok(Some(s.to_ascii_lowercase()));
                }
            }
        }
    }
    Ok(None)
}

/// Parse the first client-to-server payload of a flow and return its SNI
/// hostname, if any. Payload that is not a TLS handshake or not a
/// ClientHello yields an absent hostname; truncated or structurally
/// inconsistent hellos yield `MalformedHello`.
pub fn extract_sni(payload: &[u8]) -> Result<SniResult, SniError> {
    match parse_client_hello(payload) {
        HelloParse::NotHandshake | HelloParse::NotClientHello => {
            Ok(SniResult { hostname: None, bytes_consumed: 0 })
        }
        HelloParse::Complete { hostname, bytes_consumed } => {
            Ok(SniResult { hostname, bytes_consumed })
        }
        HelloParse::Incomplete => Err(SniError::MalformedHello("record or message truncated")),
        HelloParse::Malformed(m) => Err(SniError::MalformedHello(m)),
    }
}

/// True when the hostname matches one of the configured video domains.
/// Default mode is the plain substring rule; `anchored` restricts matches
/// to whole-label suffixes.
pub fn is_video_host(hostname: &str, config: &DpiConfig) -> bool {
    let h = hostname.to_ascii_lowercase();
    config.match_domains.iter().any(|d| {
        let d = d.to_ascii_lowercase();
        if config.anchored {
            h == d || h.ends_with(&format!(".{d}"))
        } else {
            h.contains(&d)
        }
    })
}

/// Incremental ClientHello reassembly for hellos split across TCP segments,
/// capped at [`MAX_HELLO_BYTES`].
#[derive(Debug, Default)]
pub struct HelloReassembler {
    buf: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HelloVerdict {
    NeedMore,
    NotHello,
    NoSni,
    Hostname(String),
    Malformed,
}

impl HelloReassembler {
    pub fn new() -> Self {
        HelloReassembler::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> HelloVerdict {
        self.buf.extend_from_slice(bytes);
        match parse_client_hello(&self.buf) {
            HelloParse::NotHandshake | HelloParse::NotClientHello => HelloVerdict::NotHello,
            HelloParse::Complete { hostname: Some(h), .. } => HelloVerdict::Hostname(h),
            HelloParse::Complete { hostname: None, .. } => HelloVerdict::NoSni,
            HelloParse::Malformed(_) => HelloVerdict::Malformed,
            HelloParse::Incomplete => {
                if self.buf.len() >= MAX_HELLO_BYTES {
                    HelloVerdict::Malformed
                } else {
                    HelloVerdict::NeedMore
                }
            }
        }
    }
}

/// Encode a minimal TLS 1.2 ClientHello carrying `hostname` in the
/// server_name extension. Used by the synthetic generator and as the
/// round-trip oracle for the parser.
pub fn encode_client_hello(hostname: &str) -> Vec<u8> {
    let name = hostname.as_bytes();
    assert!(name.len() <= 255, "hostname too long for encoder");

    // server_name extension body: list length, entry type, name length, name.
    let mut sni_body = Vec::with_capacity(5 + name.len());
    sni_body.extend_from_slice(&((name.len() + 3) as u16).to_be_bytes());
    sni_body.push(SNI_HOST_NAME);
    sni_body.extend_from_slice(&(name.len() as u16).to_be_bytes());
    sni_body.extend_from_slice(name);

    let mut exts = Vec::new();
    exts.extend_from_slice(&EXT_SERVER_NAME.to_be_bytes());
    exts.extend_from_slice(&(sni_body.len() as u16).to_be_bytes());
    exts.extend_from_slice(&sni_body);
    // supported_versions, to keep the extension walk honest
    exts.extend_from_slice(&0x002bu16.to_be_bytes());
    exts.extend_from_slice(&3u16.to_be_bytes());
    exts.extend_from_slice(&[0x02, 0x03, 0x04]);

    let mut body = Vec::new();
    body.extend_from_slice(&[0x03, 0x03]); // client_version
    body.extend_from_slice(&[0x0b; 32]); // random (fixed; payload is synthetic)
    body.push(0); // session id length
    body.extend_from_slice(&6u16.to_be_bytes());
    body.extend_from_slice(&[0x13, 0x01, 0x13, 0x02, 0x13, 0x03]);
    body.extend_from_slice(&[0x01, 0x00]); // null compression
    body.extend_from_slice(&(exts.len() as u16).to_be_bytes());
    body.extend_from_slice(&exts);

    let mut hs = Vec::with_capacity(4 + body.len());
    hs.push(CLIENT_HELLO);
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(&body);

    let mut record = Vec::with_capacity(5 + hs.len());
    record.push(TLS_HANDSHAKE);
    record.extend_from_slice(&[0x03, 0x03]);
    record.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    record.extend_from_slice(&hs);
    record
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_extracts_hostname() {
        let host = "r3---sn-ab5l6ne7.googlevideos.com";
        let hello = encode_client_hello(host);
        let got = extract_sni(&hello).unwrap();
        assert_eq!(got.hostname.as_deref(), Some(host));
        assert_eq!(got.bytes_consumed, hello.len());
    }

    #[test]
    fn application_data_is_not_a_hello() {
        let got = extract_sni(&[0x17, 0x03, 0x03, 0x00, 0x05, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(got.hostname, None);
    }

    #[test]
    fn hello_without_sni_extension() {
        let mut hello = encode_client_hello("x.test");
        // Rebuild with the server_name extension stripped: keep only the
        // trailing supported_versions extension.
        let host_ext_len = 4 + 2 + 1 + 2 + "x.test".len();
        let ext_start = hello.len() - host_ext_len - 7;
        hello.drain(ext_start..ext_start + host_ext_len);
        // patch the three length fields: record, handshake, extensions
        let rec_len = (hello.len() - 5) as u16;
        hello[3..5].copy_from_slice(&rec_len.to_be_bytes());
        let hs_len = (hello.len() - 9) as u32;
        hello[6..9].copy_from_slice(&hs_len.to_be_bytes()[1..]);
        let et_pos = ext_start - 2;
        let ext_total = (hello.len() - ext_start) as u16;
        hello[et_pos..et_pos + 2].copy_from_slice(&ext_total.to_be_bytes());

        let got = extract_sni(&hello).unwrap();
        assert_eq!(got.hostname, None);
    }

    #[test]
    fn truncated_hello_is_malformed() {
        let hello = encode_client_hello("a.example");
        for cut in [4, 6, 20, hello.len() - 1] {
            assert!(extract_sni(&hello[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn hello_split_across_two_records() {
        let full = encode_client_hello("split.googlevideos.com");
        let hs = &full[5..];
        let (a, b) = hs.split_at(hs.len() / 2);
        let mut multi = Vec::new();
        for part in [a, b] {
            multi.push(TLS_HANDSHAKE);
            multi.extend_from_slice(&[0x03, 0x03]);
            multi.extend_from_slice(&(part.len() as u16).to_be_bytes());
            multi.extend_from_slice(part);
        }
        let got = extract_sni(&multi).unwrap();
        assert_eq!(got.hostname.as_deref(), Some("split.googlevideos.com"));
        assert_eq!(got.bytes_consumed, multi.len());
    }

    #[test]
    fn reassembler_handles_segmented_hello() {
        let hello = encode_client_hello("seg.googlevideos.com");
        let mut r = HelloReassembler::new();
        let (a, rest) = hello.split_at(3);
        let (b, c) = rest.split_at(rest.len() / 2);
        assert_eq!(r.push(a), HelloVerdict::NeedMore);
        assert_eq!(r.push(b), HelloVerdict::NeedMore);
        assert_eq!(r.push(c), HelloVerdict::Hostname("seg.googlevideos.com".into()));
    }

    #[test]
    fn reassembler_gives_up_at_cap() {
        let mut r = HelloReassembler::new();
        // Claims a huge record that never completes.
        let mut junk = vec![0x16, 0x03, 0x03, 0xff, 0xff];
        junk.resize(MAX_HELLO_BYTES + 16, 0xaa);
        assert_eq!(r.push(&junk), HelloVerdict::Malformed);
    }

    #[test]
    fn video_host_matching() {
        let cfg = DpiConfig::default();
        assert!(is_video_host("r3---sn-x.googlevideos.com", &cfg));
        assert!(!is_video_host("www.example.com", &cfg));
        // Substring rule accepts embedded occurrences.
        assert!(is_video_host("googlevideos.com.evil.test", &cfg));

        let anchored = DpiConfig { anchored: true, ..DpiConfig::default() };
        assert!(is_video_host("r3---sn-x.googlevideos.com", &anchored));
        assert!(is_video_host("googlevideos.com", &anchored));
        assert!(!is_video_host("googlevideos.com.evil.test", &anchored));
    }

    #[test]
    fn fuzz_never_reads_out_of_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let valid = encode_client_hello("fuzz.googlevideos.com");
        for i in 0..2000 {
            let bytes: Vec<u8> = if i % 3 == 0 {
                let cut = rng.random_range(0..=valid.len());
                valid[..cut].to_vec()
            } else {
                let n = rng.random_range(0..200);
                (0..n).map(|_| rng.random()).collect()
            };
            // Must never panic; result is absent or MalformedHello.
            let _ = extract_sni(&bytes);
        }
    }

    proptest! {
        #[test]
        fn round_trip_any_hostname(host in "[a-z0-9]([a-z0-9-]{0,20}[a-z0-9])?(\\.[a-z0-9]{1,10}){1,3}") {
            let hello = encode_client_hello(&host);
            let got = extract_sni(&hello).unwrap();
            prop_assert_eq!(got.hostname.as_deref(), Some(host.as_str()));
        }

        #[test]
        fn mutated_hellos_never_panic(cut in 0usize..400, flip in 0usize..400, val in 0u8..=255) {
            let mut hello = encode_client_hello("m.googlevideos.com");
            if flip < hello.len() { hello[flip] = val; }
            let cut = cut.min(hello.len());
            let _ = extract_sni(&hello[..cut]);
        }
    }
}
