//! Artifact builders shared by the command line and the job runner, so both
//! produce the same bytes from the same inputs.

use std::collections::BTreeMap;
use std::path::Path;

use factrix_core::curation::Registry;
use factrix_core::pipeline::{serialize_dataset, Config, PipelineError, RdfFormat};
use factrix_core::record::export::{export_csv, export_xml};
use factrix_core::record::Record;
use factrix_core::template::Template;

/// Transform `records` with `registry` as the curated entities, or with a
/// fresh extraction and the configured identity rules when `None`.
pub fn transform_artifact(
    config: &Config,
    records: &[Record],
    registry: Option<&Registry>,
    format: RdfFormat,
) -> Result<Vec<u8>, PipelineError> {
    let dataset = match registry {
        None => config.transform(records)?,
        Some(reg) => config
            .transformer()?
            .transform_corpus(records, reg, &config.vocabularies)
            .map_err(|e| PipelineError::Invalid {
                path: "records".into(),
                message: e.to_string(),
            })?,
    };
    Ok(serialize_dataset(&dataset, format, &config.prefixes()).into_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportKind {
    Xml,
    Csv,
}

impl ExportKind {
    /// Extension of the single-file artifact.
    pub fn extension(self) -> &'static str {
        match self {
            ExportKind::Xml => "xml",
            ExportKind::Csv => "json",
        }
    }
}

/// XML document, or the CSV bundle as a JSON object of file name → text.
pub fn export_artifact(r: &Record, t: &Template, kind: ExportKind) -> Vec<u8> {
    match kind {
        ExportKind::Xml => export_xml(r, t),
        ExportKind::Csv => {
            let files: BTreeMap<String, String> = export_csv(r, t)
                .files
                .into_iter()
                .map(|(k, v)| (k, String::from_utf8_lossy(&v).into_owned()))
                .collect();
            serde_json::to_vec_pretty(&files).expect("string maps serialize")
        }
    }
}

/// Write one record's export under `out`: `<id>.xml`, or CSV files in `<id>/`.
pub fn write_export(out: &Path, r: &Record, t: &Template, kind: ExportKind) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    match kind {
        ExportKind::Xml => std::fs::write(out.join(format!("{}.xml", r.id())), export_xml(r, t)),
        // bundle paths already start with the record id
        ExportKind::Csv => export_csv(r, t).write_to(out),
    }
}

/// `nt`, `nq` or `ttl`.
pub fn rdf_format(ext: &str) -> Option<RdfFormat> {
    [RdfFormat::NTriples, RdfFormat::NQuads, RdfFormat::Turtle]
        .into_iter()
        .find(|f| f.extension() == ext)
}
