use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use factrix_core::pipeline::{load_records, load_templates, validate_dirs, Config, ConfigPaths, PipelineError, RdfFormat};
use factrix_core::record::{parse_record, Record};
use factrix_core::store::{Store, StoreError};
use factrix_service::remote::{sync_once, HttpReplica};
use factrix_service::state::fresh_replica_id;
use factrix_service::work::{transform_artifact, write_export, ExportKind};
use factrix_service::{serve, ApiConfig, ServeError};

#[derive(Debug, Parser)]
#[command(name = "factrix", version, about = "Transcription, curation and RDF publishing of archival records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service
    Serve {
        #[arg(long, env = "FACTRIX_ADDR", default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, env = "FACTRIX_DATA_DIR", default_value = "factrix-data")]
        data_dir: PathBuf,
        /// Directory with mappings/, ontology.json, uri-policy.json,
        /// vocabularies/ and match-rules.json
        #[arg(long, env = "FACTRIX_CONFIG", default_value = "fixtures")]
        config: PathBuf,
        /// Override the URI policy namespace
        #[arg(long)]
        namespace: Option<String>,
        #[arg(long, env = "FACTRIX_TOKEN", hide_env_values = true)]
        token: Option<String>,
        /// Peer to replicate with periodically; repeatable
        #[arg(long)]
        peer: Vec<String>,
        #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
        sync_interval: u64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        workers: u64,
        /// Replica id for a new data directory
        #[arg(long)]
        replica_id: Option<String>,
    },
    /// Check templates, and optionally mappings against them
    Validate {
        /// Template directory, or a configuration directory holding templates/
        #[arg(long)]
        templates: PathBuf,
        #[arg(long, requires = "ontology")]
        mappings: Option<PathBuf>,
        #[arg(long, requires = "mappings")]
        ontology: Option<PathBuf>,
    },
    /// Transform records to RDF; the format follows the extension of --out
    Transform {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        mappings: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to ontology.json next to the mappings directory
        #[arg(long)]
        ontology: Option<PathBuf>,
        /// Defaults to vocabularies/ next to the mappings directory
        #[arg(long)]
        vocabularies: Option<PathBuf>,
        /// Defaults to match-rules.json next to the mappings directory
        #[arg(long)]
        match_rules: Option<PathBuf>,
    },
    /// Export records as XML files or CSV directories
    Export {
        #[arg(long)]
        templates: PathBuf,
        /// A record file or a directory of them
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicate once with a peer, both ways
    Sync {
        #[arg(long)]
        peer: String,
        #[arg(long, env = "FACTRIX_DATA_DIR", default_value = "factrix-data")]
        data_dir: PathBuf,
        #[arg(long, env = "FACTRIX_TOKEN", hide_env_values = true)]
        token: Option<String>,
        #[arg(long)]
        replica_id: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Format {
    Xml,
    Csv,
}

/// Input that was read but is not acceptable; exits with 1 rather than 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Invalid(String);

fn exit_code(e: &anyhow::Error) -> u8 {
    let invalid = e.chain().any(|c| {
        c.downcast_ref::<Invalid>().is_some()
            || c.downcast_ref::<PipelineError>().is_some_and(|p| !p.is_io())
            || c.downcast_ref::<StoreError>().is_some_and(|s| matches!(s, StoreError::Corrupt(_)))
    });
    if invalid {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Serve {
            addr,
            data_dir,
            config,
            namespace,
            token,
            peer,
            sync_interval,
            workers,
            replica_id,
        } => {
            let cfg = ApiConfig {
                addr,
                data_dir,
                config_dir: config,
                namespace,
                token: token.filter(|t| !t.is_empty()),
                peers: peer,
                sync_interval: Duration::from_secs(sync_interval),
                workers: workers as usize,
                replica_id,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(cfg)).map_err(|e| match e {
                ServeError::Config(p) => anyhow::Error::new(p),
                other => anyhow::Error::new(other),
            })
        }
        Command::Validate {
            templates,
            mappings,
            ontology,
        } => validate(&templates, mappings.as_deref().zip(ontology.as_deref())),
        Command::Transform {
            templates,
            records,
            mappings,
            policy,
            out,
            ontology,
            vocabularies,
            match_rules,
        } => {
            let root = mappings.parent().map(Path::to_path_buf).unwrap_or_default();
            let paths = ConfigPaths {
                templates,
                ontology: ontology.unwrap_or_else(|| root.join("ontology.json")),
                vocabularies: vocabularies.unwrap_or_else(|| root.join("vocabularies")),
                match_rules: match_rules.unwrap_or_else(|| root.join("match-rules.json")),
                mappings,
                policy,
            };
            let config = Config::load(&paths)?;
            let records = load_records(&records)?;
            let bytes = transform_artifact(&config, &records, None, RdfFormat::for_path(&out))?;
            std::fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("{} records → {} ({} bytes)", records.len(), out.display(), bytes.len());
            Ok(())
        }
        Command::Export {
            templates,
            records,
            format,
            out,
        } => {
            let set = load_templates(&templates)?;
            let records: Vec<Record> = if records.is_dir() {
                load_records(&records)?
            } else {
                let text = std::fs::read_to_string(&records).with_context(|| format!("reading {}", records.display()))?;
                vec![parse_record(&text).map_err(|e| Invalid(format!("{}: {e}", records.display())))?]
            };
            let kind = match format {
                Format::Xml => ExportKind::Xml,
                Format::Csv => ExportKind::Csv,
            };
            for r in &records {
                let t = set
                    .get(&r.meta.template_id, r.meta.template_version)
                    .ok_or_else(|| Invalid(format!("record {} uses unknown template {} v{}", r.id(), r.meta.template_id, r.meta.template_version)))?;
                r.check_conformance(t).map_err(|e| Invalid(format!("record {}: {e}", r.id())))?;
                write_export(&out, r, t, kind).with_context(|| format!("writing {}", out.display()))?;
            }
            eprintln!("exported {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::Sync {
            peer,
            data_dir,
            token,
            replica_id,
        } => {
            let mut store = Store::open(&data_dir, &replica_id.unwrap_or_else(fresh_replica_id))?;
            let mut remote = HttpReplica::new(&peer, token.filter(|t| !t.is_empty()))?;
            let (pulled, pushed) = sync_once(&mut store, &mut remote)?;
            println!(
                "pulled {} revisions, pushed {}, {} conflicts",
                pulled.transferred,
                pushed.transferred,
                pulled.conflicts.len() + pushed.conflicts.len()
            );
            Ok(())
        }
    }
}

fn validate(templates: &Path, mappings: Option<(&Path, &Path)>) -> anyhow::Result<()> {
    // a configuration directory checks its templates and, when present,
    // its mappings
    let nested = templates.join("templates");
    let (dir, implied) = if nested.is_dir() {
        let implied = (templates.join("mappings"), templates.join("ontology.json"));
        (nested, Some(implied).filter(|(m, o)| m.is_dir() && o.is_file()))
    } else {
        (templates.to_path_buf(), None)
    };
    let mappings = mappings.or(implied.as_ref().map(|(m, o)| (m.as_path(), o.as_path())));
    let summary = validate_dirs(&dir, mappings)?;
    for (t, report) in &summary.templates {
        for v in &report.violations {
            println!("{t}: {v}");
        }
    }
    if let Some(m) = &summary.mappings {
        for e in &m.errors {
            println!("mapping error: {e}");
        }
        for w in m.warnings() {
            println!("warning: {w}");
        }
    }
    if !summary.is_ok() {
        bail!(Invalid("validation failed".into()));
    }
    println!(
        "{} templates ok{}",
        summary.template_count,
        summary
            .mappings
            .as_ref()
            .map(|m| format!(", {} mappings ok", m.mapping_count))
            .unwrap_or_default()
    );
    Ok(())
}
