//! Canonical Huffman coding of quantized symbol streams.
//!
//! The tree is built from symbol frequencies with ties broken by
//! (frequency, symbol value) so identical frequency tables always produce
//! identical code lengths. Codes are then canonicalized: sorted by
//! (length, symbol) and assigned sequentially, so the dictionary is fully
//! reconstructible from the per-symbol lengths alone. Payload bits are
//! packed MSB-first within each byte; padding bits in the final byte are
//! zero.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Longest admissible code. Unreachable for alphabets of at most 256
/// symbols at realistic stream lengths; exceeding it means internal
/// corruption of the frequency accounting.
pub const MAX_CODE_LEN: u8 = 32;

/// Canonical code book: symbols with their code lengths, plus the derived
/// codewords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanDict {
    /// (symbol, length) sorted by (length, symbol).
    entries: Vec<(u8, u8)>,
    /// Codeword per symbol value, or None if absent from the alphabet.
    codes: Vec<Option<(u32, u8)>>,
}

impl HuffmanDict {
    /// Builds the dictionary for a symbol stream.
    pub fn build(symbols: &[u8]) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Validation("cannot build a dictionary from an empty stream".into()));
        }
        let mut freq = [0u64; 256];
        for s in symbols {
            freq[*s as usize] += 1;
        }
        let lengths = code_lengths(&freq)?;
        Self::from_lengths(lengths)
    }

    /// Assembles the canonical dictionary from (symbol, length) pairs.
    pub fn from_lengths(mut entries: Vec<(u8, u8)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("empty alphabet".into()));
        }
        entries.sort_by_key(|(sym, len)| (*len, *sym));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Corrupt(format!("symbol {} listed twice", w[0].0)));
            }
        }
        if entries.iter().any(|(_, len)| *len == 0 || *len > MAX_CODE_LEN) {
            return Err(Error::Corrupt(format!(
                "code lengths must lie in [1, {MAX_CODE_LEN}]"
            )));
        }
        // Kraft sum in units of 2^-MAX_CODE_LEN.
        let kraft: u64 = entries
            .iter()
            .map(|(_, len)| 1u64 << (MAX_CODE_LEN - len))
            .sum();
        let full = 1u64 << MAX_CODE_LEN;
        if entries.len() == 1 {
            if entries[0].1 != 1 {
                return Err(Error::Corrupt("single-symbol alphabet must use length 1".into()));
            }
        } else if kraft != full {
            return Err(Error::Corrupt(format!(
                "code lengths violate Kraft equality ({kraft} / {full})"
            )));
        }

        let mut codes = vec![None; 256];
        let mut code = 0u32;
        let mut prev_len = entries[0].1;
        for (i, (sym, len)) in entries.iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (len - prev_len);
            }
            codes[*sym as usize] = Some((code, *len));
            prev_len = *len;
        }
        Ok(HuffmanDict { entries, codes })
    }

    /// (symbol, length) pairs in canonical order.
    pub fn entries(&self) -> &[(u8, u8)] {
        &self.entries
    }

    pub fn alphabet_len(&self) -> usize {
        self.entries.len()
    }

    pub fn code_for(&self, symbol: u8) -> Option<(u32, u8)> {
        self.codes[symbol as usize]
    }

    /// Mean code length in bits under the given frequency table.
    pub fn expected_length(&self, freq: &[u64; 256]) -> f64 {
        let total: u64 = freq.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let bits: u64 = self
            .entries
            .iter()
            .map(|(sym, len)| freq[*sym as usize] * *len as u64)
            .sum();
        bits as f64 / total as f64
    }

    /// Wire form: u16 LE alphabet size, then (symbol u8, length u8) pairs in
    /// canonical order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + 2 * self.entries.len());
        out.extend_from_slice(&(self.entries.len() as u16).to_le_bytes());
        for (sym, len) in &self.entries {
            out.push(*sym);
            out.push(*len);
        }
        out
    }

    /// Parses the wire form, returning the dictionary and bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 2 {
            return Err(Error::Truncated("dictionary header".into()));
        }
        let count = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        if count == 0 || count > 256 {
            return Err(Error::Corrupt(format!("dictionary alphabet size {count}")));
        }
        let need = 2 + 2 * count;
        if bytes.len() < need {
            return Err(Error::Truncated(format!(
                "dictionary needs {need} bytes, {} available",
                bytes.len()
            )));
        }
        let entries = (0..count)
            .map(|i| (bytes[2 + 2 * i], bytes[3 + 2 * i]))
            .collect();
        Ok((Self::from_lengths(entries)?, need))
    }
}

/// Huffman code lengths per symbol via a deterministic merge order.
fn code_lengths(freq: &[u64; 256]) -> Result<Vec<(u8, u8)>> {
    enum Kind {
        Leaf(u8),
        Internal(usize, usize),
    }
    let mut nodes: Vec<(u64, Kind)> = Vec::new();
    // Heap of Reverse((freq, tie_key, node_index)); leaves use their symbol
    // value as tie key, internal nodes follow after in creation order.
    let mut heap: BinaryHeap<Reverse<(u64, u32, usize)>> = BinaryHeap::new();
    for (sym, f) in freq.iter().enumerate() {
        if *f > 0 {
            nodes.push((*f, Kind::Leaf(sym as u8)));
            heap.push(Reverse((*f, sym as u32, nodes.len() - 1)));
        }
    }
    if heap.is_empty() {
        return Err(Error::Validation("no symbols".into()));
    }
    if heap.len() == 1 {
        let Reverse((_, _, idx)) = heap.pop().expect("one element");
        let Kind::Leaf(sym) = nodes[idx].1 else { unreachable!() };
        return Ok(vec![(sym, 1)]);
    }
    let mut next_key = 256u32;
    while heap.len() > 1 {
        let Reverse((f1, _, a)) = heap.pop().expect("len > 1");
        let Reverse((f2, _, b)) = heap.pop().expect("len > 1");
        nodes.push((f1 + f2, Kind::Internal(a, b)));
        heap.push(Reverse((f1 + f2, next_key, nodes.len() - 1)));
        next_key += 1;
    }
    let Reverse((_, _, root)) = heap.pop().expect("root remains");

    let mut lengths = Vec::new();
    let mut stack = vec![(root, 0u8)];
    while let Some((idx, depth)) = stack.pop() {
        match &nodes[idx].1 {
            Kind::Leaf(sym) => {
                if depth > MAX_CODE_LEN {
                    return Err(Error::State(format!(
                        "huffman code length {depth} exceeds cap {MAX_CODE_LEN}"
                    )));
                }
                lengths.push((*sym, depth));
            }
            Kind::Internal(a, b) => {
                stack.push((*a, depth + 1));
                stack.push((*b, depth + 1));
            }
        }
    }
    Ok(lengths)
}

/// Packed code bits, MSB-first within each byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPayload {
    pub bit_count: u64,
    pub bytes: Vec<u8>,
}

impl BitPayload {
    pub fn validate(&self) -> Result<()> {
        let expect = (self.bit_count as usize).div_ceil(8);
        if self.bytes.len() != expect {
            return Err(Error::Inconsistent(format!(
                "{} payload bytes for {} bits",
                self.bytes.len(),
                self.bit_count
            )));
        }
        let pad = self.bytes.len() * 8 - self.bit_count as usize;
        if pad > 0 {
            let last = *self.bytes.last().expect("pad implies non-empty");
            if last & ((1u16 << pad) as u8).wrapping_sub(1) != 0 {
                return Err(Error::Corrupt("non-zero padding bits".into()));
            }
        }
        Ok(())
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    bit_count: u64,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter {
            bytes: Vec::new(),
            bit_count: 0,
        }
    }

    fn push_code(&mut self, code: u32, len: u8) {
        for i in (0..len).rev() {
            let bit = ((code >> i) & 1) as u8;
            let pos = (self.bit_count % 8) as u8;
            if pos == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 1 << (7 - pos);
            }
            self.bit_count += 1;
        }
    }
}

/// Encodes a symbol stream with the dictionary's canonical codes.
pub fn encode(symbols: &[u8], dict: &HuffmanDict) -> Result<BitPayload> {
    let mut writer = BitWriter::new();
    for (i, s) in symbols.iter().enumerate() {
        let (code, len) = dict.code_for(*s).ok_or_else(|| {
            Error::Corrupt(format!("symbol {s} at index {i} is not in the dictionary"))
        })?;
        writer.push_code(code, len);
    }
    Ok(BitPayload {
        bit_count: writer.bit_count,
        bytes: writer.bytes,
    })
}

/// Decodes exactly `count` symbols and requires the payload to be consumed
/// in full (padding aside).
pub fn decode(payload: &BitPayload, dict: &HuffmanDict, count: usize) -> Result<Vec<u8>> {
    payload.validate()?;
    // first canonical code and symbol table base per length
    let mut first_code = [0u32; MAX_CODE_LEN as usize + 1];
    let mut len_count = [0u32; MAX_CODE_LEN as usize + 1];
    let mut base_index = [0usize; MAX_CODE_LEN as usize + 1];
    for (i, (_, len)) in dict.entries().iter().enumerate() {
        if len_count[*len as usize] == 0 {
            base_index[*len as usize] = i;
            first_code[*len as usize] = dict
                .code_for(dict.entries()[i].0)
                .expect("entry symbol present")
                .0;
        }
        len_count[*len as usize] += 1;
    }

    let max_len = dict.entries().last().expect("non-empty alphabet").1;
    let mut out = Vec::with_capacity(count);
    let mut bit_pos = 0u64;
    for sym_index in 0..count {
        let mut code = 0u32;
        let mut len = 0u8;
        loop {
            if bit_pos >= payload.bit_count {
                return Err(Error::Corrupt(format!(
                    "payload exhausted at bit {bit_pos} while decoding symbol {sym_index}"
                )));
            }
            let byte = payload.bytes[(bit_pos / 8) as usize];
            let bit = (byte >> (7 - (bit_pos % 8) as u8)) & 1;
            bit_pos += 1;
            code = (code << 1) | bit as u32;
            len += 1;
            let lc = len_count[len as usize];
            if lc > 0 {
                let offset = code.wrapping_sub(first_code[len as usize]);
                if offset < lc {
                    out.push(dict.entries()[base_index[len as usize] + offset as usize].0);
                    break;
                }
            }
            if len >= max_len {
                return Err(Error::Corrupt(format!(
                    "invalid prefix at bit {} while decoding symbol {sym_index}",
                    bit_pos - len as u64
                )));
            }
        }
    }
    if bit_pos != payload.bit_count {
        return Err(Error::Corrupt(format!(
            "{} trailing payload bits after {count} symbols",
            payload.bit_count - bit_pos
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_symbol_alphabet_gets_one_bit() {
        let dict = HuffmanDict::build(&[5, 5, 5, 5]).unwrap();
        assert_eq!(dict.entries(), &[(5, 1)]);
        let payload = encode(&[5, 5, 5, 5], &dict).unwrap();
        assert_eq!(payload.bit_count, 4);
        assert_eq!(decode(&payload, &dict, 4).unwrap(), vec![5, 5, 5, 5]);
    }

    #[test]
    fn two_symbol_tree() {
        let dict = HuffmanDict::build(&[0, 0, 0, 1]).unwrap();
        assert_eq!(dict.entries(), &[(0, 1), (1, 1)]);
        let payload = encode(&[0, 0, 0, 1], &dict).unwrap();
        assert_eq!(payload.bit_count, 4);
    }

    #[test]
    fn classic_frequency_table_expected_length() {
        // frequencies a..f = 45,13,12,16,9,5 -> 2.24 bits/symbol
        let mut stream = Vec::new();
        for (sym, f) in [(0u8, 45), (1, 13), (2, 12), (3, 16), (4, 9), (5, 5)] {
            stream.extend(std::iter::repeat(sym).take(f));
        }
        let dict = HuffmanDict::build(&stream).unwrap();
        let mut freq = [0u64; 256];
        for s in &stream {
            freq[*s as usize] += 1;
        }
        assert!((dict.expected_length(&freq) - 2.24).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_rejected_and_empty_encode_ok() {
        assert!(HuffmanDict::build(&[]).is_err());
        let dict = HuffmanDict::build(&[1, 2]).unwrap();
        let payload = encode(&[], &dict).unwrap();
        assert_eq!(payload.bit_count, 0);
        assert!(payload.bytes.is_empty());
        assert_eq!(decode(&payload, &dict, 0).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn unknown_symbol_is_corruption() {
        let dict = HuffmanDict::build(&[1, 2]).unwrap();
        assert!(matches!(encode(&[3], &dict), Err(Error::Corrupt(_))));
    }

    #[test]
    fn truncated_payload_names_symbol_index() {
        let dict = HuffmanDict::build(&[0, 0, 0, 1]).unwrap();
        let payload = encode(&[0, 0, 1, 0], &dict).unwrap();
        let cut = BitPayload {
            bit_count: 2,
            bytes: vec![payload.bytes[0] & 0b1100_0000],
        };
        let err = decode(&cut, &dict, 4).unwrap_err();
        match err {
            Error::Corrupt(msg) => assert!(msg.contains("symbol 2"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn trailing_bits_rejected() {
        let dict = HuffmanDict::build(&[0, 0, 0, 1]).unwrap();
        let payload = encode(&[0, 0, 0, 1], &dict).unwrap();
        let err = decode(&payload, &dict, 3).unwrap_err();
        assert!(matches!(err, Error::Corrupt(_)));
    }

    #[test]
    fn nonzero_padding_rejected() {
        let payload = BitPayload {
            bit_count: 3,
            bytes: vec![0b1010_0001],
        };
        assert!(matches!(payload.validate(), Err(Error::Corrupt(_))));
    }

    #[test]
    fn dict_wire_roundtrip() {
        let dict = HuffmanDict::build(&[7, 7, 7, 9, 9, 200]).unwrap();
        let bytes = dict.to_bytes();
        let (back, used) = HuffmanDict::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, dict);
    }

    #[test]
    fn dict_wire_rejects_bad_kraft() {
        // two symbols, both length 2: incomplete code
        let bytes = [2u8, 0, 1, 2, 2, 2];
        assert!(matches!(
            HuffmanDict::from_bytes(&bytes),
            Err(Error::Corrupt(_))
        ));
    }
}
