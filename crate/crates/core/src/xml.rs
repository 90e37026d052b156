//! Minimal XML reading and writing shared by every persisted file.
//!
//! Documents are small, so they are read into a tiny element tree and then
//! checked against each file's schema by hand. Writing is done with plain
//! string formatting to keep the byte layout fully under our control.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmlError {
    #[error("xml syntax error: {0}")]
    Syntax(String),
    #[error("schema error: {0}")]
    Schema(String),
}

pub(crate) fn schema(msg: impl Into<String>) -> XmlError {
    XmlError::Schema(msg.into())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Element>,
    /// Concatenated character data directly inside this element.
    pub text: String,
}

impl Element {
    pub fn attr(&self, name: &str) -> Result<&str, XmlError> {
        self.opt_attr(name)
            .ok_or_else(|| schema(format!("<{}> is missing attribute {name:?}", self.name)))
    }

    pub fn opt_attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn parse_attr<T: std::str::FromStr>(&self, name: &str) -> Result<T, XmlError> {
        let raw = self.attr(name)?;
        raw.parse().map_err(|_| {
            schema(format!(
                "<{}> attribute {name}={raw:?} is invalid",
                self.name
            ))
        })
    }

    /// Rejects attributes outside `allowed`.
    pub fn only_attrs(&self, allowed: &[&str]) -> Result<(), XmlError> {
        match self
            .attrs
            .iter()
            .find(|(k, _)| !allowed.contains(&k.as_str()))
        {
            Some((k, _)) => Err(schema(format!(
                "<{}> has unknown attribute {k:?}",
                self.name
            ))),
            None => Ok(()),
        }
    }

    pub fn expect_name(&self, name: &str) -> Result<(), XmlError> {
        if self.name != name {
            return Err(schema(format!("expected <{name}>, found <{}>", self.name)));
        }
        Ok(())
    }

    /// For container elements: only whitespace may appear between children.
    pub fn no_text(&self) -> Result<(), XmlError> {
        if !self.text.trim().is_empty() {
            return Err(schema(format!("unexpected text inside <{}>", self.name)));
        }
        Ok(())
    }

    /// For leaf elements holding character data.
    pub fn no_children(&self) -> Result<(), XmlError> {
        match self.children.first() {
            Some(c) => Err(schema(format!(
                "unexpected <{}> inside <{}>",
                c.name, self.name
            ))),
            None => Ok(()),
        }
    }
}

fn start_element(start: &BytesStart<'_>) -> Result<Element, XmlError> {
    let name = String::from_utf8(start.name().as_ref().to_vec())
        .map_err(|_| XmlError::Syntax("element name is not UTF-8".into()))?;
    let mut attrs = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| XmlError::Syntax(e.to_string()))?;
        let key = String::from_utf8(attr.key.as_ref().to_vec())
            .map_err(|_| XmlError::Syntax("attribute name is not UTF-8".into()))?;
        let value = attr
            .unescape_value()
            .map_err(|e| XmlError::Syntax(e.to_string()))?;
        attrs.push((key, value.into_owned()));
    }
    Ok(Element {
        name,
        attrs,
        ..Element::default()
    })
}

/// Parses a document with exactly one root element.
pub fn parse_document(input: &str) -> Result<Element, XmlError> {
    let mut reader = Reader::from_str(input);
    reader.config_mut().trim_text(false);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;

    let mut attach = |stack: &mut Vec<Element>, el: Element| -> Result<(), XmlError> {
        match stack.last_mut() {
            Some(parent) => parent.children.push(el),
            None if root.is_none() => root = Some(el),
            None => return Err(XmlError::Syntax("more than one root element".into())),
        }
        Ok(())
    };

    loop {
        let event = reader
            .read_event()
            .map_err(|e| XmlError::Syntax(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Start(start) => stack.push(start_element(&start)?),
            Event::Empty(start) => {
                let el = start_element(&start)?;
                attach(&mut stack, el)?;
            }
            Event::End(_) => {
                let el = stack
                    .pop()
                    .ok_or_else(|| XmlError::Syntax("unbalanced end tag".into()))?;
                attach(&mut stack, el)?;
            }
            Event::Text(text) => {
                let text = text
                    .unescape()
                    .map_err(|e| XmlError::Syntax(e.to_string()))?;
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&text),
                    None if text.trim().is_empty() => {}
                    None => return Err(XmlError::Syntax("text outside the root element".into())),
                }
            }
            Event::CData(data) => {
                let data = std::str::from_utf8(&data)
                    .map_err(|_| XmlError::Syntax("CDATA is not UTF-8".into()))?;
                match stack.last_mut() {
                    Some(el) => el.text.push_str(data),
                    None => return Err(XmlError::Syntax("CDATA outside the root element".into())),
                }
            }
            Event::DocType(_) => return Err(XmlError::Syntax("DOCTYPE is not supported".into())),
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) => {}
            Event::Eof => break,
        }
    }
    if !stack.is_empty() {
        return Err(XmlError::Syntax("unexpected end of document".into()));
    }
    root.ok_or_else(|| XmlError::Syntax("document has no root element".into()))
}

pub fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}
