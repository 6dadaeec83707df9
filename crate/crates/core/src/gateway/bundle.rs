use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Grammar a reply is expected to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplyGrammar {
    FreeText,
    JsonArray,
    XmlActions,
    XmlSelection,
}

impl ReplyGrammar {
    pub fn describe(self) -> &'static str {
        match self {
            ReplyGrammar::FreeText => "free text",
            ReplyGrammar::JsonArray => "a single JSON array",
            ReplyGrammar::XmlActions => {
                "one or more <Action type=\"file\" filePath=\"...\">...</Action> tags"
            }
            ReplyGrammar::XmlSelection => {
                "a <FileSelection> block containing <IncludeFile path=\"...\"/> and <ExcludeFile path=\"...\"/> tags"
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    Png,
    Jpeg,
    Webp,
}

impl RasterFormat {
    pub fn mime(self) -> &'static str {
        match self {
            RasterFormat::Png => "image/png",
            RasterFormat::Jpeg => "image/jpeg",
            RasterFormat::Webp => "image/webp",
        }
    }

    /// Guess the format from a file extension.
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "png" => Some(RasterFormat::Png),
            "jpg" | "jpeg" => Some(RasterFormat::Jpeg),
            "webp" => Some(RasterFormat::Webp),
            _ => None,
        }
    }
}

/// Encoded raster image with its declared format.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster {
    pub format: RasterFormat,
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
}

impl Raster {
    pub fn png(bytes: Vec<u8>) -> Self {
        Raster {
            format: RasterFormat::Png,
            bytes,
        }
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Raster")
            .field("format", &self.format)
            .field("len", &self.bytes.len())
            .finish()
    }
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

/// One part of the user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Text { text: String },
    Image { image: Raster },
}

impl Segment {
    pub fn text(text: impl Into<String>) -> Self {
        Segment::Text { text: text.into() }
    }

    pub fn image(image: Raster) -> Self {
        Segment::Image { image }
    }
}

/// A complete request to the model: system text, user segments and the
/// grammar the reply must satisfy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub turns: Vec<Segment>,
    pub grammar: ReplyGrammar,
}

impl PromptBundle {
    pub fn new(system: impl Into<String>, grammar: ReplyGrammar) -> Self {
        PromptBundle {
            system: system.into(),
            turns: Vec::new(),
            grammar,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.turns.push(Segment::text(text));
        self
    }

    pub fn with_image(mut self, image: Raster) -> Self {
        self.turns.push(Segment::image(image));
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.turns.is_empty() {
            return Err(GatewayError::InvalidBundle(
                "bundle has no user turns".into(),
            ));
        }
        for turn in &self.turns {
            if let Segment::Image { image } = turn {
                if image.bytes.is_empty() {
                    return Err(GatewayError::InvalidBundle("empty image attachment".into()));
                }
            }
        }
        Ok(())
    }

    /// Concatenated text segments, images elided.
    pub fn user_text(&self) -> String {
        let mut out = String::new();
        for turn in &self.turns {
            if let Segment::Text { text } = turn {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(text);
            }
        }
        out
    }

    pub fn images(&self) -> impl Iterator<Item = &Raster> {
        self.turns.iter().filter_map(|t| match t {
            Segment::Image { image } => Some(image),
            Segment::Text { .. } => None,
        })
    }

    /// Canonical serialization used for fingerprinting. Object keys are
    /// sorted and images are reduced to format plus content digest.
    pub fn canonical(&self) -> String {
        let turns: Vec<Value> = self
            .turns
            .iter()
            .map(|t| match t {
                Segment::Text { text } => json!({ "kind": "text", "text": text }),
                Segment::Image { image } => json!({
                    "kind": "image",
                    "format": image.format,
                    "sha256": image.digest(),
                }),
            })
            .collect();
        let value = json!({
            "grammar": self.grammar,
            "system": self.system,
            "turns": turns,
        });
        canonical_json(&value)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let digest = Sha256::digest(format!("v1\n{}", self.canonical()).as_bytes());
        Fingerprint(hex::encode(digest))
    }
}

/// Serialize with object keys in sorted order regardless of how the value
/// was built.
pub fn canonical_json(value: &Value) -> String {
    fn sort(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let sorted: std::collections::BTreeMap<&String, Value> =
                    map.iter().map(|(k, v)| (k, sort(v))).collect();
                let mut out = serde_json::Map::new();
                for (k, v) in sorted {
                    out.insert(k.clone(), v);
                }
                Value::Object(out)
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(value).to_string()
}

/// Hex SHA-256 of a canonicalized bundle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

/// Raw reply text from a provider or cassette.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelReply {
    pub raw: String,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default)]
    pub latency_ms: u64,
}

impl ModelReply {
    pub fn text(raw: impl Into<String>) -> Self {
        ModelReply {
            raw: raw.into(),
            usage: TokenUsage::default(),
            latency_ms: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":[{"q":1,"p":2}]}}"#).unwrap();
        let mut map = serde_json::Map::new();
        map.insert("a".into(), json!({"x": [{"p": 2, "q": 1}], "y": 2}));
        map.insert("b".into(), json!(1));
        assert_eq!(canonical_json(&a), canonical_json(&Value::Object(map)));
    }

    #[test]
    fn images_change_fingerprint() {
        let base = PromptBundle::new("sys", ReplyGrammar::FreeText).with_text("look");
        let a = base.clone().with_image(Raster::png(vec![1, 2, 3]));
        let b = base.clone().with_image(Raster::png(vec![1, 2, 4]));
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), base.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }

    #[test]
    fn bundle_needs_a_turn() {
        let b = PromptBundle::new("sys", ReplyGrammar::FreeText);
        assert!(matches!(b.validate(), Err(GatewayError::InvalidBundle(_))));
    }
}
