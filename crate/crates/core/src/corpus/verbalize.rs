//! Turn structured evidence back into a natural sentence.
//!
//! The template verbalizer parses the linearized form (the `", "`-separated
//! layout produced by the linearizers in this module) and re-renders it as
//! prose. That makes it total on linearizer output but — like the
//! linearization itself — ambiguous when field values contain the separator;
//! such records fail with a validation error rather than silently mangling.
//!
//! When an external generator endpoint is configured it takes precedence;
//! any transport or protocol failure falls back to the template (the caller
//! decides how loudly to warn).

use std::time::Duration;

use super::{EvidenceRecord, KnowledgeType};
use crate::error::{Error, Result};

/// Template verbalization of one non-Text evidence record.
///
/// - KG: `The <relation> of <subject> is <object>.` plus one sentence per
///   qualifier pair.
/// - Table: `In <page>, <h1> is <v1>, …, and <hn> is <vn>.`
/// - Infobox: `The <property> of <subject> is <value>.` per pair, joined by
///   spaces.
pub fn verbalize(evidence: &EvidenceRecord) -> Result<String> {
    match evidence.etype {
        KnowledgeType::Text => Err(Error::validation(
            "text evidence is already prose and has no verbalization",
        )),
        KnowledgeType::Kg => verbalize_kg(&evidence.text),
        KnowledgeType::Table => verbalize_table(&evidence.text),
        KnowledgeType::Info => verbalize_infobox(&evidence.text),
    }
}

fn malformed(kind: &str, text: &str, why: &str) -> Error {
    Error::validation(format!("cannot verbalize {kind} evidence {text:?}: {why}"))
}

fn verbalize_kg(text: &str) -> Result<String> {
    let parts: Vec<&str> = text.split(", ").collect();
    if parts.len() < 3 {
        return Err(malformed("kg", text, "need subject, relation, object"));
    }
    if (parts.len() - 3) % 2 != 0 {
        return Err(malformed("kg", text, "dangling qualifier field"));
    }
    let mut out = format!("The {} of {} is {}.", parts[1], parts[0], parts[2]);
    for pair in parts[3..].chunks(2) {
        out.push_str(&format!(" The {} is {}.", pair[0], pair[1]));
    }
    Ok(out)
}

/// Split one `header is value` cell. The value may be empty (`"Notes is"`).
fn split_cell<'a>(part: &'a str, text: &str) -> Result<(&'a str, &'a str)> {
    if let Some((h, v)) = part.split_once(" is ") {
        Ok((h, v))
    } else if let Some(h) = part.strip_suffix(" is") {
        Ok((h, ""))
    } else {
        Err(malformed("table", text, "cell without ' is '"))
    }
}

fn verbalize_table(text: &str) -> Result<String> {
    let parts: Vec<&str> = text.split(", ").collect();
    if parts.len() < 2 {
        return Err(malformed("table", text, "need a page title and at least one cell"));
    }
    let page = parts[0];
    let cells: Vec<(&str, &str)> = parts[1..]
        .iter()
        .map(|p| split_cell(p, text))
        .collect::<Result<_>>()?;
    let mut out = format!("In {page},");
    for (i, (h, v)) in cells.iter().enumerate() {
        let last = i + 1 == cells.len();
        out.push(' ');
        if last && cells.len() > 1 {
            out.push_str("and ");
        }
        if v.is_empty() {
            out.push_str(&format!("{h} is"));
        } else {
            out.push_str(&format!("{h} is {v}"));
        }
        out.push(if last { '.' } else { ',' });
    }
    Ok(out)
}

fn verbalize_infobox(text: &str) -> Result<String> {
    let parts: Vec<&str> = text.split(", ").collect();
    if parts.len() < 4 || (parts.len() - 2) % 2 != 0 {
        return Err(malformed("info", text, "need page, subject, property/value pairs"));
    }
    let subject = parts[1];
    let sentences: Vec<String> = parts[2..]
        .chunks(2)
        .map(|pair| format!("The {} of {} is {}.", pair[0], subject, pair[1]))
        .collect();
    Ok(sentences.join(" "))
}

// ---------------------------------------------------------------------------
// External generator endpoint
// ---------------------------------------------------------------------------

/// HTTP client for an external verbalization service. The endpoint receives
/// `{"evidence": <linearized text>, "source": <type>}` and answers
/// `{"text": <sentence>}`.
pub struct VerbalizerClient {
    url: String,
    auth_token: Option<String>,
    retries: u32,
    agent: ureq::Agent,
}

impl VerbalizerClient {
    pub fn new(url: String, auth_token: Option<String>, timeout_ms: u64, retries: u32) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(timeout_ms.max(1)))
            .build();
        VerbalizerClient { url, auth_token, retries, agent }
    }

    /// One verbalization round-trip with up to `retries` re-attempts.
    pub fn verbalize(&self, evidence: &EvidenceRecord) -> Result<String> {
        let body = serde_json::json!({
            "evidence": evidence.text,
            "source": evidence.etype.wire(),
        });
        let mut last_err = String::new();
        for _attempt in 0..=self.retries {
            let mut req = self.agent.post(&self.url);
            if let Some(token) = &self.auth_token {
                req = req.set("authorization", &format!("Bearer {token}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    let value: serde_json::Value = resp
                        .into_json()
                        .map_err(|e| Error::runtime(format!("verbalizer response: {e}")))?;
                    match value.get("text").and_then(|t| t.as_str()) {
                        Some(t) if !t.is_empty() => return Ok(t.to_owned()),
                        _ => {
                            last_err = "response missing non-empty \"text\" field".to_owned();
                        }
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::runtime(format!(
            "verbalizer endpoint {} failed after {} attempt(s): {last_err}",
            self.url,
            self.retries + 1
        )))
    }
}

/// Verbalize through the external client when present, with template
/// fallback. Returns the sentence and whether the fallback was used.
pub fn verbalize_with(evidence: &EvidenceRecord, client: Option<&VerbalizerClient>) -> Result<(String, bool)> {
    if let Some(c) = client {
        match c.verbalize(evidence) {
            Ok(t) => return Ok((t, false)),
            Err(_) => return Ok((verbalize(evidence)?, true)),
        }
    }
    Ok((verbalize(evidence)?, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityRef, EvidenceRecord};
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn record(etype: KnowledgeType, text: &str) -> EvidenceRecord {
        EvidenceRecord {
            evidence_id: 0,
            etype,
            text: text.into(),
            entities: vec![EntityRef::new("Q1", "")],
            page_title: String::new(),
            retrieved_for: None,
            disambiguations: vec![],
        }
    }

    #[test]
    fn kg_template() {
        let e = record(KnowledgeType::Kg, "Maverick, cast member, Robert Colbert");
        assert_eq!(verbalize(&e).unwrap(), "The cast member of Maverick is Robert Colbert.");
        let q = record(
            KnowledgeType::Kg,
            "Maverick, cast member, Roxane Berard, name of the character role, 'Comtesse de Barot'",
        );
        assert_eq!(
            verbalize(&q).unwrap(),
            "The cast member of Maverick is Roxane Berard. The name of the character role is 'Comtesse de Barot'."
        );
    }

    #[test]
    fn table_template_handles_empty_values_and_single_cells() {
        let e = record(
            KnowledgeType::Table,
            "Stefanie Powers, Year is 1975, Title is Gone with the West, Role is Little Moon",
        );
        assert_eq!(
            verbalize(&e).unwrap(),
            "In Stefanie Powers, Year is 1975, Title is Gone with the West, and Role is Little Moon."
        );
        let empty = record(KnowledgeType::Table, "P, Year is 1975, Notes is");
        assert_eq!(verbalize(&empty).unwrap(), "In P, Year is 1975, and Notes is.");
        let single = record(KnowledgeType::Table, "P, Year is 1975");
        assert_eq!(verbalize(&single).unwrap(), "In P, Year is 1975.");
    }

    #[test]
    fn infobox_template_joins_sentences() {
        let e = record(
            KnowledgeType::Info,
            "When Harry Met Sally..., When Harry Met Sally…, Directed by, Rob Reiner",
        );
        assert_eq!(
            verbalize(&e).unwrap(),
            "The Directed by of When Harry Met Sally… is Rob Reiner."
        );
    }

    #[test]
    fn text_and_malformed_records_are_rejected() {
        assert!(verbalize(&record(KnowledgeType::Text, "prose")).is_err());
        assert!(verbalize(&record(KnowledgeType::Kg, "only, two")).is_err());
        assert!(verbalize(&record(KnowledgeType::Kg, "s, r, o, dangling")).is_err());
        assert!(verbalize(&record(KnowledgeType::Table, "page only")).is_err());
        assert!(verbalize(&record(KnowledgeType::Table, "page, no-is-cell")).is_err());
        assert!(verbalize(&record(KnowledgeType::Info, "page, subject, prop")).is_err());
    }

    /// Minimal canned-response HTTP server for client tests.
    fn serve_once(status_line: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut read = 0;
            // read headers, then the content-length body
            let request = loop {
                let n = stream.read(&mut buf[read..]).unwrap();
                read += n;
                let s = String::from_utf8_lossy(&buf[..read]).into_owned();
                if let Some(header_end) = s.find("\r\n\r\n") {
                    let cl = s
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if read >= header_end + 4 + cl {
                        break s;
                    }
                }
                if n == 0 {
                    break s;
                }
            };
            let resp = format!(
                "{status_line}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
            request
        });
        (format!("http://{addr}/verbalize"), handle)
    }

    #[test]
    fn client_posts_evidence_and_reads_text() {
        let (url, handle) = serve_once("HTTP/1.1 200 OK", r#"{"text": "A nicer sentence."}"#);
        let client = VerbalizerClient::new(url, Some("sekrit".into()), 2000, 0);
        let e = record(KnowledgeType::Kg, "a, b, c");
        let (text, fell_back) = verbalize_with(&e, Some(&client)).unwrap();
        assert_eq!(text, "A nicer sentence.");
        assert!(!fell_back);
        let request = handle.join().unwrap();
        assert!(request.to_ascii_lowercase().contains("authorization: bearer sekrit"));
        assert!(request.contains(r#""evidence":"a, b, c""#));
        assert!(request.contains(r#""source":"kg""#));
    }

    #[test]
    fn client_failure_falls_back_to_template() {
        let (url, handle) = serve_once("HTTP/1.1 500 Internal Server Error", "{}");
        let client = VerbalizerClient::new(url, None, 2000, 0);
        let e = record(KnowledgeType::Kg, "a, b, c");
        let (text, fell_back) = verbalize_with(&e, Some(&client)).unwrap();
        assert_eq!(text, "The b of a is c.");
        assert!(fell_back);
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_falls_back_too() {
        // Port 1 on localhost: connection refused immediately.
        let client = VerbalizerClient::new("http://127.0.0.1:1/v".into(), None, 200, 1);
        let e = record(KnowledgeType::Info, "p, s, prop, val");
        let (text, fell_back) = verbalize_with(&e, Some(&client)).unwrap();
        assert_eq!(text, "The prop of s is val.");
        assert!(fell_back);
    }
}
