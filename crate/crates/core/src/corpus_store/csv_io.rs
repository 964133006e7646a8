use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::label::Label;
use crate::record::{CorpusRecord, NctId, Segment};

use super::StoreError;

/// Column order of the corpus file.
pub const CSV_HEADER: [&str; 6] = [
    "nct_id",
    "original_category",
    "dss_text",
    "first_posted_year",
    "manual_label",
    "split",
];

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    read_corpus_from(file)
}

pub fn read_corpus_from<R: Read>(reader: R) -> Result<Vec<CorpusRecord>, StoreError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(StoreError::MissingHeader {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let nct_id = NctId::new(field(0)).map_err(|_| StoreError::BadField {
            line,
            field: "nct_id",
            value: field(0).to_string(),
        })?;
        let original_category = parse_label(field(1), line)?;
        let dss_text = field(2).to_string();
        let first_posted_year = if field(3).is_empty() {
            0
        } else {
            field(3).parse::<u16>().map_err(|_| StoreError::BadField {
                line,
                field: "first_posted_year",
                value: field(3).to_string(),
            })?
        };
        let manual_label = match field(4) {
            "" => None,
            v => Some(parse_label(v, line)?),
        };
        let split = match field(5) {
            "" => None,
            v => Some(v.parse::<Segment>().map_err(|_| StoreError::BadField {
                line,
                field: "split",
                value: v.to_string(),
            })?),
        };
        if !seen.insert(nct_id.clone()) {
            return Err(StoreError::DuplicateNctId { line, id: nct_id });
        }
        out.push(CorpusRecord {
            nct_id,
            original_category,
            dss_text,
            first_posted_year,
            manual_label,
            split,
        });
    }
    Ok(out)
}

fn parse_label(value: &str, line: u64) -> Result<Label, StoreError> {
    value.parse::<Label>().map_err(|_| StoreError::BadLabel {
        line,
        value: value.to_string(),
    })
}

pub fn write_corpus_to<W: Write>(writer: W, records: &[CorpusRecord]) -> Result<(), StoreError> {
    write_rows(writer, records, true)
}

/// Writes data rows only, for appending to a file that already has a header.
pub fn append_corpus_rows<W: Write>(writer: W, records: &[CorpusRecord]) -> Result<(), StoreError> {
    write_rows(writer, records, false)
}

fn write_rows<W: Write>(writer: W, records: &[CorpusRecord], header: bool) -> Result<(), StoreError> {
    let mut wtr = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer);
    if header {
        wtr.write_record(CSV_HEADER)?;
    }
    for r in records {
        let year = r.first_posted_year.to_string();
        wtr.write_record([
            r.nct_id.as_str(),
            r.original_category.as_str(),
            r.dss_text.as_str(),
            year.as_str(),
            r.manual_label.map(Label::as_str).unwrap_or(""),
            r.split.map(Segment::as_str).unwrap_or(""),
        ])?;
    }
    wtr.flush().map_err(|e| StoreError::io(Path::new("<writer>"), e))?;
    Ok(())
}

/// Writes the corpus to `path` through a temporary sibling file and a rename,
/// so readers never observe a half-written file.
pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<usize, StoreError> {
    let tmp = tmp_path(path);
    {
        let file = File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        let mut buf = std::io::BufWriter::new(file);
        write_corpus_to(&mut buf, records)?;
        let file = buf
            .into_inner()
            .map_err(|e| StoreError::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))?;
    Ok(records.len())
}

fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> Vec<CorpusRecord> {
        let row = |id: &str, orig, text: &str, manual| CorpusRecord {
            nct_id: NctId::new(id).unwrap(),
            original_category: orig,
            dss_text: text.into(),
            first_posted_year: 2019,
            manual_label: Some(manual),
            split: None,
        };
        vec![
            row("NCT03822728", Label::No, "The investigators will make our participant data available to other researchers after completion of this study", Label::Yes),
            row("NCT03463993", Label::Yes, "It is undecided whether the IPD will be available to other researchers. Clearance is required first from ethical bodies and supervisors", Label::Undecided),
            row("NCT03288623", Label::Undecided, "De-identified individual participant data for all primary and secondary outcome measures will be made available", Label::Yes),
        ]
    }

    #[test]
    fn table1_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        assert_eq!(write_corpus(&path, &table1()).unwrap(), 3);
        let back = read_corpus(&path).unwrap();
        assert_eq!(back, table1());
        assert!(back[2].dss_text.ends_with("outcome measures will be made available"));
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "nct_id,original_category,dss_text,first_posted_year,manual_label,split\n"
        );
        assert!(read_corpus_from(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn delimiters_round_trip_byte_identically() {
        let mut recs = table1();
        recs[0].dss_text = "Shared, \"on request\" only,\nvia the portal".into();
        let mut buf = Vec::new();
        write_corpus_to(&mut buf, &recs).unwrap();
        let back = read_corpus_from(&buf[..]).unwrap();
        assert_eq!(back[0].dss_text.as_bytes(), recs[0].dss_text.as_bytes());
    }

    #[test]
    fn import_errors() {
        let bad_header = "id,category\nNCT00000001,Yes\n";
        assert!(matches!(
            read_corpus_from(bad_header.as_bytes()),
            Err(StoreError::MissingHeader { .. })
        ));

        let bad_label = "nct_id,original_category,dss_text,first_posted_year,manual_label,split\n\
                         NCT00000001,Yes,text one here,2019,,\n\
                         NCT00000002,YES,text two here,2019,,\n";
        match read_corpus_from(bad_label.as_bytes()) {
            Err(StoreError::BadLabel { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, "YES");
            }
            other => panic!("unexpected {other:?}"),
        }

        let dup = "nct_id,original_category,dss_text,first_posted_year,manual_label,split\n\
                   NCT00000001,Yes,text one here,2019,,\n\
                   NCT00000001,No,text two here,2019,,\n";
        assert!(matches!(
            read_corpus_from(dup.as_bytes()),
            Err(StoreError::DuplicateNctId { line: 3, .. })
        ));
    }
}
