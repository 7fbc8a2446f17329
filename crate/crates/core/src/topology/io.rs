//! Topology file formats.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "WPMT" | version u16 | m u16 | T u32 | B u16 | density f64 | seed u64
//! T x ceil(m(m-1)/2 / 8) bytes of upper-triangle bitsets
//! ```
//!
//! Bit `k` of a snapshot (row-major upper-triangle pair index) lives in byte
//! `k / 8` at position `k % 8`, least significant bit first.
//!
//! The CSV form is an edge list with header `t,i,j` and `i < j`.

use std::io::{BufRead, Read, Write};

use super::{pair_count, Graph, TopologySequence};
use crate::error::TopologyError;

pub const TOPOLOGY_MAGIC: &[u8; 4] = b"WPMT";
pub const TOPOLOGY_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 2 + 8 + 8;

fn bitset_len(m: usize) -> usize {
    pair_count(m).div_ceil(8)
}

pub fn write_binary<W: Write>(seq: &TopologySequence, mut out: W) -> Result<(), TopologyError> {
    let m = seq.num_nodes();
    let m16 = u16::try_from(m)
        .map_err(|_| TopologyError::InvalidParameters(format!("m = {m} does not fit in u16")))?;
    let t32 = u32::try_from(seq.len())
        .map_err(|_| TopologyError::InvalidParameters("too many snapshots".into()))?;
    let b16 = u16::try_from(seq.window())
        .map_err(|_| TopologyError::InvalidParameters("window does not fit in u16".into()))?;

    let mut buf = Vec::with_capacity(HEADER_LEN + seq.len() * bitset_len(m));
    buf.extend_from_slice(TOPOLOGY_MAGIC);
    buf.extend_from_slice(&TOPOLOGY_VERSION.to_le_bytes());
    buf.extend_from_slice(&m16.to_le_bytes());
    buf.extend_from_slice(&t32.to_le_bytes());
    buf.extend_from_slice(&b16.to_le_bytes());
    buf.extend_from_slice(&seq.density().to_le_bytes());
    buf.extend_from_slice(&seq.seed().to_le_bytes());

    let nbytes = bitset_len(m);
    for g in seq.snapshots() {
        let mut bits = vec![0u8; nbytes];
        let mut k = 0;
        for i in 0..m {
            for j in i + 1..m {
                if g.has_edge(i, j) {
                    bits[k / 8] |= 1 << (k % 8);
                }
                k += 1;
            }
        }
        buf.extend_from_slice(&bits);
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TopologyError> {
        if self.pos + n > self.bytes.len() {
            return Err(TopologyError::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, TopologyError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, TopologyError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TopologyError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_binary<R: Read>(mut input: R) -> Result<TopologySequence, TopologyError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4, "magic")? != TOPOLOGY_MAGIC {
        return Err(TopologyError::Format {
            offset: 0,
            message: "bad magic, expected \"WPMT\"".into(),
        });
    }
    let version = cur.u16("version")?;
    if version != TOPOLOGY_VERSION {
        return Err(TopologyError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let m = usize::from(cur.u16("m")?);
    let t = cur.u32("T")? as usize;
    let window = usize::from(cur.u16("B")?);
    let density = f64::from_le_bytes(cur.take(8, "density")?.try_into().unwrap());
    let seed = cur.u64("seed")?;
    if m < 1 || t == 0 || window == 0 {
        return Err(TopologyError::Format {
            offset: 6,
            message: format!("invalid header values m={m} T={t} B={window}"),
        });
    }

    let nbytes = bitset_len(m);
    let mut snapshots = Vec::with_capacity(t);
    for s in 0..t {
        let bits = cur.take(nbytes, &format!("snapshot {s}"))?;
        let mut g = Graph::empty(m);
        let mut k = 0;
        for i in 0..m {
            for j in i + 1..m {
                if bits[k / 8] & (1 << (k % 8)) != 0 {
                    g.add_edge(i, j);
                }
                k += 1;
            }
        }
        snapshots.push(g);
    }
    if cur.pos != bytes.len() {
        return Err(TopologyError::Format {
            offset: cur.pos,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    TopologySequence::from_snapshots(snapshots, density, window, seed)
}

pub fn write_edge_csv<W: Write>(seq: &TopologySequence, mut out: W) -> Result<(), TopologyError> {
    let mut s = String::from("t,i,j\n");
    for (t, g) in seq.snapshots().iter().enumerate() {
        for (i, j) in g.edges() {
            s.push_str(&format!("{t},{i},{j}\n"));
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

/// Reads a `t,i,j` edge list over `m` devices.
///
/// The sequence length is `len` when given, otherwise one past the largest
/// `t` seen. Density is the realized mean edge fraction and the seed is 0.
pub fn read_edge_csv<R: BufRead>(
    input: R,
    m: usize,
    len: Option<usize>,
    window: usize,
) -> Result<TopologySequence, TopologyError> {
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let trimmed = line.trim();
        if n == 0 {
            if trimmed != "t,i,j" {
                return Err(TopologyError::Csv {
                    line: 1,
                    message: format!("expected header \"t,i,j\", found {trimmed:?}"),
                });
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(TopologyError::Csv {
                line: lineno,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str| {
            s.trim().parse::<usize>().map_err(|e| TopologyError::Csv {
                line: lineno,
                message: format!("{s:?}: {e}"),
            })
        };
        let (t, i, j) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
        if i >= m || j >= m || i == j {
            return Err(TopologyError::Csv {
                line: lineno,
                message: format!("invalid edge ({i}, {j}) for {m} devices"),
            });
        }
        edges.push((t, i, j));
    }
    let inferred = edges.iter().map(|e| e.0 + 1).max().unwrap_or(0);
    let len = len.unwrap_or(inferred);
    if inferred > len {
        return Err(TopologyError::Csv {
            line: 0,
            message: format!("edge at t = {} beyond sequence length {len}", inferred - 1),
        });
    }
    let mut snapshots = vec![Graph::empty(m); len];
    for (t, i, j) in edges {
        snapshots[t].add_edge(i, j);
    }
    let pairs = (pair_count(m) * len).max(1);
    let density = snapshots.iter().map(Graph::num_edges).sum::<usize>() as f64 / pairs as f64;
    TopologySequence::from_snapshots(snapshots, density, window, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::generate_sequence;

    #[test]
    fn header_layout() {
        let seq = generate_sequence(5, 0.5, 3, 1, 42).unwrap();
        let mut buf = Vec::new();
        write_binary(&seq, &mut buf).unwrap();
        // 10 pairs -> 2 bytes per snapshot.
        assert_eq!(buf.len(), HEADER_LEN + 3 * 2);
        assert_eq!(&buf[..4], b"WPMT");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u16::from_le_bytes([buf[6], buf[7]]), 5);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u16::from_le_bytes([buf[12], buf[13]]), 1);
        assert_eq!(f64::from_le_bytes(buf[14..22].try_into().unwrap()), 0.5);
        assert_eq!(u64::from_le_bytes(buf[22..30].try_into().unwrap()), 42);
        assert_eq!(read_binary(&buf[..]).unwrap(), seq);
    }

    #[test]
    fn bit_order_is_lsb_first() {
        // Only pair (0, 2), index 1 for m = 3.
        let g = Graph::from_edges(3, &[(0, 2)]);
        let seq = TopologySequence::constant(g, 1, 1).unwrap();
        let mut buf = Vec::new();
        write_binary(&seq, &mut buf).unwrap();
        assert_eq!(buf[HEADER_LEN], 0b0000_0010);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let seq = generate_sequence(4, 1.0, 2, 1, 1).unwrap();
        let mut buf = Vec::new();
        write_binary(&seq, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_binary(&bad[..]), Err(TopologyError::Format { offset: 0, .. })));

        let truncated = &buf[..buf.len() - 1];
        assert!(matches!(read_binary(truncated), Err(TopologyError::Format { .. })));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_binary(&trailing[..]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let seq = generate_sequence(6, 0.4, 5, 1, 9).unwrap();
        let mut buf = Vec::new();
        write_edge_csv(&seq, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,i,j\n"));
        let back = read_edge_csv(&buf[..], 6, Some(5), 1).unwrap();
        assert_eq!(back.snapshots(), seq.snapshots());
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "t,i,j\n0,1,2\n1,1,9\n";
        match read_edge_csv(text.as_bytes(), 4, None, 1) {
            Err(TopologyError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_edge_csv("a,b\n".as_bytes(), 4, None, 1).is_err());
    }
}
