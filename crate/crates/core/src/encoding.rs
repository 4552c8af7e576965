//! Canonical text encoding.
//!
//! Every signature preimage, wire message and fixture file goes through this
//! module. The form is compact JSON with object keys sorted by code point,
//! integers in minimal decimal, reals in shortest round-trip decimal and byte
//! strings as lowercase hex. Non-finite reals are refused rather than being
//! silently turned into `null`.

use serde::de::DeserializeOwned;
use serde::ser::{self, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("unencodable value: {0}")]
    UnencodableValue(String),
    #[error("malformed canonical text: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("text parses but is not in canonical form")]
    NonCanonical,
}

impl ser::Error for EncodingError {
    fn custom<T: std::fmt::Display>(msg: T) -> Self {
        EncodingError::UnencodableValue(msg.to_string())
    }
}

/// Encodes `value` to its canonical byte form.
pub fn canonical_encode<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, EncodingError> {
    let tree = to_canonical_value(value)?;
    Ok(serde_json::to_vec(&tree)?)
}

/// Like [`canonical_encode`] but returns the text.
pub fn canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, EncodingError> {
    let bytes = canonical_encode(value)?;
    // serde_json only ever emits UTF-8
    Ok(String::from_utf8(bytes).expect("canonical text is UTF-8"))
}

/// Builds the sorted value tree without rendering it.
pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> Result<Value, EncodingError> {
    value.serialize(CanonicalSerializer)
}

/// Parses canonical text into `T`. Text that parses but would not be
/// re-emitted byte for byte (uppercase hex, reordered keys, stray
/// whitespace) is refused, so equal values always have equal bytes.
pub fn canonical_decode<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T, EncodingError> {
    let value: T = serde_json::from_slice(bytes)?;
    if canonical_encode(&value)? != bytes {
        return Err(EncodingError::NonCanonical);
    }
    Ok(value)
}

struct CanonicalSerializer;

fn real(v: f64) -> Result<Value, EncodingError> {
    Number::from_f64(v)
        .map(Value::Number)
        .ok_or_else(|| EncodingError::UnencodableValue(format!("non-finite real {v}")))
}

impl ser::Serializer for CanonicalSerializer {
    type Ok = Value;
    type Error = EncodingError;
    type SerializeSeq = SeqBuilder;
    type SerializeTuple = SeqBuilder;
    type SerializeTupleStruct = SeqBuilder;
    type SerializeTupleVariant = VariantSeqBuilder;
    type SerializeMap = MapBuilder;
    type SerializeStruct = MapBuilder;
    type SerializeStructVariant = VariantMapBuilder;

    fn serialize_bool(self, v: bool) -> Result<Value, EncodingError> {
        Ok(Value::Bool(v))
    }
    fn serialize_i8(self, v: i8) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_i16(self, v: i16) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_i32(self, v: i32) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_i64(self, v: i64) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_u8(self, v: u8) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_u16(self, v: u16) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_u32(self, v: u32) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_u64(self, v: u64) -> Result<Value, EncodingError> {
        Ok(Value::from(v))
    }
    fn serialize_f32(self, v: f32) -> Result<Value, EncodingError> {
        real(f64::from(v))
    }
    fn serialize_f64(self, v: f64) -> Result<Value, EncodingError> {
        real(v)
    }
    fn serialize_char(self, v: char) -> Result<Value, EncodingError> {
        Ok(Value::String(v.to_string()))
    }
    fn serialize_str(self, v: &str) -> Result<Value, EncodingError> {
        Ok(Value::String(v.to_owned()))
    }
    fn serialize_bytes(self, v: &[u8]) -> Result<Value, EncodingError> {
        Ok(Value::String(lower_hex(v)))
    }
    fn serialize_none(self) -> Result<Value, EncodingError> {
        Ok(Value::Null)
    }
    fn serialize_some<T: Serialize + ?Sized>(self, value: &T) -> Result<Value, EncodingError> {
        value.serialize(self)
    }
    fn serialize_unit(self) -> Result<Value, EncodingError> {
        Ok(Value::Null)
    }
    fn serialize_unit_struct(self, _name: &'static str) -> Result<Value, EncodingError> {
        Ok(Value::Null)
    }
    fn serialize_unit_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
    ) -> Result<Value, EncodingError> {
        Ok(Value::String(variant.to_owned()))
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        value: &T,
    ) -> Result<Value, EncodingError> {
        value.serialize(self)
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        value: &T,
    ) -> Result<Value, EncodingError> {
        let mut map = Map::new();
        map.insert(variant.to_owned(), value.serialize(CanonicalSerializer)?);
        Ok(Value::Object(map))
    }
    fn serialize_seq(self, len: Option<usize>) -> Result<SeqBuilder, EncodingError> {
        Ok(SeqBuilder(Vec::with_capacity(len.unwrap_or(0))))
    }
    fn serialize_tuple(self, len: usize) -> Result<SeqBuilder, EncodingError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_struct(
        self,
        _name: &'static str,
        len: usize,
    ) -> Result<SeqBuilder, EncodingError> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        len: usize,
    ) -> Result<VariantSeqBuilder, EncodingError> {
        Ok(VariantSeqBuilder { variant, items: Vec::with_capacity(len) })
    }
    fn serialize_map(self, _len: Option<usize>) -> Result<MapBuilder, EncodingError> {
        Ok(MapBuilder { map: Map::new(), pending_key: None })
    }
    fn serialize_struct(self, _name: &'static str, len: usize) -> Result<MapBuilder, EncodingError> {
        self.serialize_map(Some(len))
    }
    fn serialize_struct_variant(
        self,
        _name: &'static str,
        _index: u32,
        variant: &'static str,
        _len: usize,
    ) -> Result<VariantMapBuilder, EncodingError> {
        Ok(VariantMapBuilder { variant, map: Map::new() })
    }
}

struct SeqBuilder(Vec<Value>);

impl ser::SerializeSeq for SeqBuilder {
    type Ok = Value;
    type Error = EncodingError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), EncodingError> {
        self.0.push(value.serialize(CanonicalSerializer)?);
        Ok(())
    }
    fn end(self) -> Result<Value, EncodingError> {
        Ok(Value::Array(self.0))
    }
}

impl ser::SerializeTuple for SeqBuilder {
    type Ok = Value;
    type Error = EncodingError;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), EncodingError> {
        ser::SerializeSeq::serialize_element(self, value)
    }
    fn end(self) -> Result<Value, EncodingError> {
        ser::SerializeSeq::end(self)
    }
}

impl ser::SerializeTupleStruct for SeqBuilder {
    type Ok = Value;
    type Error = EncodingError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), EncodingError> {
        ser::SerializeSeq::serialize_element(self, value)
    }
    fn end(self) -> Result<Value, EncodingError> {
        ser::SerializeSeq::end(self)
    }
}

struct VariantSeqBuilder {
    variant: &'static str,
    items: Vec<Value>,
}

impl ser::SerializeTupleVariant for VariantSeqBuilder {
    type Ok = Value;
    type Error = EncodingError;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), EncodingError> {
        self.items.push(value.serialize(CanonicalSerializer)?);
        Ok(())
    }
    fn end(self) -> Result<Value, EncodingError> {
        let mut map = Map::new();
        map.insert(self.variant.to_owned(), Value::Array(self.items));
        Ok(Value::Object(map))
    }
}

struct MapBuilder {
    map: Map<String, Value>,
    pending_key: Option<String>,
}

fn key_string(key: Value) -> Result<String, EncodingError> {
    match key {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(EncodingError::UnencodableValue(format!("map key must be a scalar, got {other}"))),
    }
}

impl ser::SerializeMap for MapBuilder {
    type Ok = Value;
    type Error = EncodingError;
    fn serialize_key<T: Serialize + ?Sized>(&mut self, key: &T) -> Result<(), EncodingError> {
        self.pending_key = Some(key_string(key.serialize(CanonicalSerializer)?)?);
        Ok(())
    }
    fn serialize_value<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<(), EncodingError> {
        let key = self
            .pending_key
            .take()
            .ok_or_else(|| EncodingError::UnencodableValue("map value without key".into()))?;
        self.map.insert(key, value.serialize(CanonicalSerializer)?);
        Ok(())
    }
    fn end(self) -> Result<Value, EncodingError> {
        Ok(Value::Object(self.map))
    }
}

impl ser::SerializeStruct for MapBuilder {
    type Ok = Value;
    type Error = EncodingError;
    fn serialize_field<T: Serialize + ?Sized>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), EncodingError> {
        self.map.insert(key.to_owned(), value.serialize(CanonicalSerializer)?);
        Ok(())
    }
    fn end(self) -> Result<Value, EncodingError> {
        Ok(Value::Object(self.map))
    }
}

struct VariantMapBuilder {
    variant: &'static str,
    map: Map<String, Value>,
}

impl ser::SerializeStructVariant for VariantMapBuilder {
    type Ok = Value;
    type Error = EncodingError;
    fn serialize_field<T: Serialize + ?Sized>(
        &mut self,
        key: &'static str,
        value: &T,
    ) -> Result<(), EncodingError> {
        self.map.insert(key.to_owned(), value.serialize(CanonicalSerializer)?);
        Ok(())
    }
    fn end(self) -> Result<Value, EncodingError> {
        let mut outer = Map::new();
        outer.insert(self.variant.to_owned(), Value::Object(self.map));
        Ok(Value::Object(outer))
    }
}

/// Lowercase hex of `bytes`. Same output as `hex::encode`, without going
/// through a char iterator; this sits under every signature preimage.
pub fn lower_hex(bytes: impl AsRef<[u8]>) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let bytes = bytes.as_ref();
    let mut buf = Vec::with_capacity(bytes.len() * 2);
    for b in bytes {
        buf.extend_from_slice(&[DIGITS[usize::from(b >> 4)], DIGITS[usize::from(b & 0x0f)]]);
    }
    String::from_utf8(buf).expect("hex digits are ASCII")
}

/// Serde adapter writing byte fields as lowercase hex strings; use with
/// `#[serde(with = "crate::encoding::hex_bytes")]`.
pub mod hex_bytes {
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer, T: AsRef<[u8]>>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::lower_hex(v))
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<T, D::Error>
    where
        D: Deserializer<'de>,
        T: hex::FromHex,
        T::Error: std::fmt::Display,
    {
        hex::serde::deserialize(d)
    }
}
