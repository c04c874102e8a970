//! Turtle serialization of global tags.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use percent_encoding::{utf8_percent_encode, AsciiSet, CONTROLS};

use super::{GlobalTag, RelationKind};
use crate::corpus::Corpus;

pub const MUTO: &str = "http://purl.org/muto/core#";
pub const SKOS: &str = "http://www.w3.org/2004/02/skos/core#";
pub const OWL: &str = "http://www.w3.org/2002/07/owl#";
pub const RDFS: &str = "http://www.w3.org/2000/01/rdf-schema#";

// Characters not allowed raw inside a Turtle IRIREF, plus the path and
// query delimiters.
const SEGMENT: &AsciiSet = &CONTROLS
    .add(b' ')
    .add(b'"')
    .add(b'<')
    .add(b'>')
    .add(b'\\')
    .add(b'^')
    .add(b'`')
    .add(b'{')
    .add(b'|')
    .add(b'}')
    .add(b'/')
    .add(b'?')
    .add(b'#')
    .add(b'%')
    .add(b':');

fn pct(s: &str) -> String {
    utf8_percent_encode(s, SEGMENT).to_string()
}

/// Where minted IRIs point.
#[derive(Debug, Clone, Default)]
pub struct RdfContext {
    /// Prefix of global tag IRIs, without a trailing slash.
    pub server_base: String,
    /// portal_id → portal base URL.
    pub portal_bases: BTreeMap<String, String>,
}

impl RdfContext {
    pub fn new(server_base: &str, portal_bases: BTreeMap<String, String>) -> Self {
        Self {
            server_base: server_base.trim_end_matches('/').to_string(),
            portal_bases,
        }
    }

    pub fn tag_iri(&self, slug: &str) -> String {
        format!("{}/tags/{}", self.server_base, pct(slug))
    }
}

/// `{base}/tag/{name}` for a known portal, else `urn:corpus:{portal}:tag:{name}`.
pub fn local_tag_iri(ctx: &RdfContext, portal_id: &str, tag_name: &str) -> String {
    match ctx.portal_bases.get(portal_id) {
        Some(base) => format!("{}/tag/{}", base.trim_end_matches('/'), pct(tag_name)),
        None => format!("urn:corpus:{}:tag:{}", pct(portal_id), pct(tag_name)),
    }
}

fn literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn prefixes(out: &mut String) {
    let _ = writeln!(out, "@prefix muto: <{MUTO}> .");
    let _ = writeln!(out, "@prefix skos: <{SKOS}> .");
    let _ = writeln!(out, "@prefix owl: <{OWL}> .");
    let _ = writeln!(out, "@prefix rdfs: <{RDFS}> .");
}

fn predicate(kind: RelationKind) -> &'static str {
    match kind {
        RelationKind::Broader => "skos:broader",
        RelationKind::Narrower => "skos:narrower",
        RelationKind::Related => "skos:related",
        RelationKind::SameAs => "owl:sameAs",
    }
}

/// One `muto:Tag` block per tag: label, meanings, tagged local resources and
/// relations (both directions as seen from the tag).
pub fn export_turtle(tags: &[GlobalTag], ctx: &RdfContext) -> String {
    let mut out = String::new();
    prefixes(&mut out);
    for t in tags {
        let _ = writeln!(out);
        let _ = write!(
            out,
            "<{}> a muto:Tag ;\n    rdfs:label {}",
            ctx.tag_iri(t.slug.as_str()),
            literal(&t.label)
        );
        for m in &t.meanings {
            let _ = write!(out, " ;\n    muto:hasMeaning <{m}>");
        }
        for l in &t.local_links {
            let _ = write!(
                out,
                " ;\n    muto:taggedResource <{}>",
                local_tag_iri(ctx, &l.portal_id, &l.tag_name)
            );
        }
        for r in &t.relations {
            let _ = write!(
                out,
                " ;\n    {} <{}>",
                predicate(r.kind),
                ctx.tag_iri(r.target.as_str())
            );
        }
        out.push_str(" .\n");
    }
    out
}

/// Dataset-side triples: `<{base}/dataset/{id}> muto:hasTag <global>` for
/// every dataset carrying a linked local tag, in portals with a known base.
pub fn export_dataset_links(tags: &[GlobalTag], corpus: &Corpus, ctx: &RdfContext) -> String {
    let mut triples: Vec<(String, String)> = Vec::new();
    for t in tags {
        let global = ctx.tag_iri(t.slug.as_str());
        for l in &t.local_links {
            let Some(snap) = corpus.get(&l.portal_id) else {
                continue;
            };
            let Some(base) = ctx.portal_bases.get(&l.portal_id) else {
                continue;
            };
            for d in &snap.datasets {
                if d.tag_names.iter().any(|n| n == &l.tag_name) {
                    let ds = format!("{}/dataset/{}", base.trim_end_matches('/'), pct(&d.dataset_id));
                    triples.push((ds, global.clone()));
                }
            }
        }
    }
    triples.sort();
    triples.dedup();
    let mut out = String::new();
    prefixes(&mut out);
    for (ds, tag) in triples {
        let _ = writeln!(out, "<{ds}> muto:hasTag <{tag}> .");
    }
    out
}
