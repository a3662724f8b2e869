//! MEDLINE XML parsing.
//!
//! Extracts PMID, ArticleTitle, the concatenated AbstractText sections (label
//! attributes dropped, sections joined with a single space) and the MeSH
//! descriptor UIs from a PubmedArticleSet document. Inline markup inside
//! title or abstract text is stripped; only character data is kept.

use quick_xml::events::Event;
use quick_xml::Reader;

use super::{Article, IngestError};

/// Result of parsing one MEDLINE XML document. Records lacking a PMID are
/// rejected individually and reported, not silently dropped.
#[derive(Debug, Clone, Default)]
pub struct MedlineParse {
    pub articles: Vec<Article>,
    pub rejected: Vec<String>,
}

#[derive(Default)]
struct RecordState {
    pmid: String,
    title: String,
    sections: Vec<String>,
    descriptor_ids: Vec<String>,
}

impl RecordState {
    fn finish(self, index: usize, out: &mut MedlineParse) {
        if self.pmid.trim().is_empty() {
            out.rejected.push(format!("record {index}: missing PMID"));
            return;
        }
        let abstract_text = self
            .sections
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        out.articles.push(Article {
            pmid: self.pmid.trim().to_string(),
            title: self.title.trim().to_string(),
            abstract_text,
            descriptor_ids: self.descriptor_ids,
        });
    }
}

fn xml_err(reader: &Reader<&[u8]>, e: impl std::fmt::Display) -> IngestError {
    IngestError::Xml {
        offset: reader.buffer_position(),
        message: e.to_string(),
    }
}

/// Parse a MEDLINE PubmedArticleSet document.
pub fn parse_medline_xml(bytes: &[u8]) -> Result<MedlineParse, IngestError> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().expand_empty_elements = true;

    let mut out = MedlineParse::default();
    let mut path: Vec<String> = Vec::new();
    let mut record: Option<RecordState> = None;
    let mut record_index = 0usize;

    loop {
        match reader.read_event() {
            Err(e) => return Err(xml_err(&reader, e)),
            Ok(Event::Eof) => break,
            Ok(Event::Start(start)) => {
                let name = String::from_utf8_lossy(start.name().as_ref()).into_owned();
                if name == "PubmedArticle" || name == "MedlineCitation" && record.is_none() {
                    record.get_or_insert_with(RecordState::default);
                }
                if name == "AbstractText" && in_abstract(&path) {
                    if let Some(r) = record.as_mut() {
                        r.sections.push(String::new());
                    }
                }
                if name == "DescriptorName" && in_mesh_heading(&path) {
                    if let Some(r) = record.as_mut() {
                        for attr in start.attributes() {
                            let attr = attr.map_err(|e| xml_err(&reader, e))?;
                            if attr.key.as_ref() == b"UI" {
                                let ui = attr
                                    .unescape_value()
                                    .map_err(|e| xml_err(&reader, e))?
                                    .into_owned();
                                if !ui.is_empty() && !r.descriptor_ids.contains(&ui) {
                                    r.descriptor_ids.push(ui);
                                }
                            }
                        }
                    }
                }
                path.push(name);
            }
            Ok(Event::End(end)) => {
                let name = String::from_utf8_lossy(end.name().as_ref()).into_owned();
                // quick-xml validates proper nesting; keep the stack in sync.
                while let Some(top) = path.pop() {
                    if top == name {
                        break;
                    }
                }
                if name == "PubmedArticle" || (name == "MedlineCitation" && !path_has(&path, "PubmedArticle")) {
                    if let Some(r) = record.take() {
                        r.finish(record_index, &mut out);
                        record_index += 1;
                    }
                }
            }
            Ok(Event::Text(text)) => {
                let chunk = text.unescape().map_err(|e| xml_err(&reader, e))?;
                if let Some(r) = record.as_mut() {
                    if is_citation_pmid(&path) {
                        r.pmid.push_str(&chunk);
                    } else if in_title(&path) {
                        r.title.push_str(&chunk);
                    } else if in_abstract_text(&path) {
                        if let Some(section) = r.sections.last_mut() {
                            section.push_str(&chunk);
                        }
                    }
                }
            }
            Ok(Event::CData(data)) => {
                let chunk = String::from_utf8_lossy(&data).into_owned();
                if let Some(r) = record.as_mut() {
                    if in_title(&path) {
                        r.title.push_str(&chunk);
                    } else if in_abstract_text(&path) {
                        if let Some(section) = r.sections.last_mut() {
                            section.push_str(&chunk);
                        }
                    }
                }
            }
            Ok(_) => {}
        }
    }
    Ok(out)
}

fn path_has(path: &[String], name: &str) -> bool {
    path.iter().any(|p| p == name)
}

/// The PMID element that identifies the record is the direct child of
/// MedlineCitation, not the PMIDs inside CommentsCorrections or PubmedData.
fn is_citation_pmid(path: &[String]) -> bool {
    let n = path.len();
    n >= 2 && path[n - 1] == "PMID" && path[n - 2] == "MedlineCitation"
}

fn in_title(path: &[String]) -> bool {
    path_has(path, "ArticleTitle") && path_has(path, "Article")
}

fn in_abstract(path: &[String]) -> bool {
    path.last().map(String::as_str) == Some("Abstract") && path_has(path, "Article")
}

fn in_abstract_text(path: &[String]) -> bool {
    path_has(path, "AbstractText") && path_has(path, "Abstract") && path_has(path, "Article")
}

fn in_mesh_heading(path: &[String]) -> bool {
    path.last().map(String::as_str) == Some("MeshHeading")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(pmid: &str, title: &str, abstract_xml: &str, mesh: &[&str]) -> String {
        let headings: String = mesh
            .iter()
            .map(|ui| {
                format!(
                    "<MeshHeading><DescriptorName UI=\"{ui}\" MajorTopicYN=\"N\">X</DescriptorName></MeshHeading>"
                )
            })
            .collect();
        format!(
            "<PubmedArticle><MedlineCitation><PMID Version=\"1\">{pmid}</PMID>\
             <Article><ArticleTitle>{title}</ArticleTitle>{abstract_xml}</Article>\
             <MeshHeadingList>{headings}</MeshHeadingList>\
             </MedlineCitation></PubmedArticle>"
        )
    }

    fn doc(records: &[String]) -> String {
        format!("<PubmedArticleSet>{}</PubmedArticleSet>", records.concat())
    }

    #[test]
    fn labeled_abstract_sections_are_joined_without_labels() {
        let xml = doc(&[record(
            "101",
            "A title.",
            "<Abstract>\n  <AbstractText Label=\"BACKGROUND\" NlmCategory=\"BACKGROUND\">A.</AbstractText>\n  <AbstractText Label=\"METHODS\">B.</AbstractText>\n</Abstract>",
            &["D000544"],
        )]);
        let parsed = parse_medline_xml(xml.as_bytes()).unwrap();
        assert_eq!(parsed.articles.len(), 1);
        assert_eq!(parsed.articles[0].abstract_text, "A. B.");
    }

    #[test]
    fn missing_abstract_yields_empty_string() {
        let xml = doc(&[record("102", "Only a title", "", &["D000544"])]);
        let parsed = parse_medline_xml(xml.as_bytes()).unwrap();
        assert_eq!(parsed.articles[0].abstract_text, "");
    }

    #[test]
    fn all_mesh_descriptor_uis_are_collected() {
        let xml = doc(&[record(
            "103",
            "T",
            "<Abstract><AbstractText>A.</AbstractText></Abstract>",
            &["D000544", "D001234", "D002345", "D003456", "D004567"],
        )]);
        let parsed = parse_medline_xml(xml.as_bytes()).unwrap();
        assert_eq!(parsed.articles[0].descriptor_ids.len(), 5);
        assert_eq!(parsed.articles[0].descriptor_ids[0], "D000544");
    }

    #[test]
    fn inline_markup_in_title_is_stripped() {
        let xml = doc(&[record(
            "104",
            "The <i>APP</i> gene &amp; friends",
            "",
            &["D000544"],
        )]);
        let parsed = parse_medline_xml(xml.as_bytes()).unwrap();
        assert_eq!(parsed.articles[0].title, "The APP gene & friends");
    }

    #[test]
    fn record_without_pmid_is_rejected_individually() {
        let good = record("105", "Good", "", &["D000544"]);
        let bad = "<PubmedArticle><MedlineCitation><Article><ArticleTitle>No id</ArticleTitle></Article></MedlineCitation></PubmedArticle>".to_string();
        let xml = doc(&[bad, good]);
        let parsed = parse_medline_xml(xml.as_bytes()).unwrap();
        assert_eq!(parsed.articles.len(), 1);
        assert_eq!(parsed.articles[0].pmid, "105");
        assert_eq!(parsed.rejected.len(), 1);
        assert!(parsed.rejected[0].contains("missing PMID"));
    }

    #[test]
    fn malformed_xml_reports_an_offset() {
        let xml = "<PubmedArticleSet><PubmedArticle></Wrong>";
        match parse_medline_xml(xml.as_bytes()) {
            Err(IngestError::Xml { offset, .. }) => assert!(offset > 0),
            other => panic!("expected xml error, got {other:?}"),
        }
    }

    #[test]
    fn attribute_order_and_insignificant_whitespace_do_not_matter() {
        let a = doc(&[record("106", "T", "<Abstract><AbstractText Label=\"X\" NlmCategory=\"Y\">A.</AbstractText></Abstract>", &["D1"])]);
        let b = a
            .replace(
                "Label=\"X\" NlmCategory=\"Y\"",
                "NlmCategory=\"Y\"  Label=\"X\"",
            )
            .replace("<PubmedArticle>", "\n  <PubmedArticle>\n");
        let pa = parse_medline_xml(a.as_bytes()).unwrap();
        let pb = parse_medline_xml(b.as_bytes()).unwrap();
        assert_eq!(pa.articles, pb.articles);
    }

    #[test]
    fn comments_corrections_pmids_are_not_the_record_pmid() {
        let xml = "<PubmedArticleSet><PubmedArticle><MedlineCitation>\
            <PMID Version=\"1\">200</PMID>\
            <Article><ArticleTitle>T</ArticleTitle></Article>\
            <CommentsCorrectionsList><CommentsCorrections><PMID Version=\"1\">999</PMID></CommentsCorrections></CommentsCorrectionsList>\
            </MedlineCitation></PubmedArticle></PubmedArticleSet>";
        let parsed = parse_medline_xml(xml.as_bytes()).unwrap();
        assert_eq!(parsed.articles[0].pmid, "200");
    }
}
