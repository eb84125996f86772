//! Little-endian cursor helpers shared by the binary formats.

use crate::FormatError;

/// Marker byte for little-endian payloads.
pub const LITTLE_ENDIAN: u8 = 1;

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FormatError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], FormatError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Truncated(what))?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub fn string(&mut self, what: &'static str) -> Result<String, FormatError> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Record(format!("{what} is not UTF-8")))
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(FormatError::Trailing)
        }
    }
}

pub fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Magic, version and byte-order marker, then one padding byte.
pub fn put_preamble(out: &mut Vec<u8>, magic: &[u8; 4], version: u16) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.push(LITTLE_ENDIAN);
    out.push(0);
}

pub fn check_preamble(r: &mut Reader, magic: &[u8; 4], version: u16) -> Result<(), FormatError> {
    let m: [u8; 4] = r.array("magic")?;
    if &m != magic {
        return Err(FormatError::BadMagic(m));
    }
    let v = r.u16("version")?;
    if v != version {
        return Err(FormatError::Version(v));
    }
    let order = r.u8("byte order")?;
    if order != LITTLE_ENDIAN {
        return Err(FormatError::ByteOrder(order));
    }
    r.u8("padding")?;
    Ok(())
}
