//! `chaintable` command-line interface.
//!
//! Exit codes: 0 success, 1 integrity violation detected, 2 usage or
//! validation error, 3 I/O or storage failure.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use chaintable::attack::{
    row_position, tamper_table_row_in_place, tamper_update_in_place, tamper_with_rehash,
    PredictedDetection, TamperReport,
};
use chaintable::storage::RepairOutcome;
use chaintable::{
    load_data_table, read_ledger, repair_ledger, write_data_table, Error, Store, UpdateBatch,
    ViolationKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    IntegrityViolation,
    Usage,
    Storage,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::IntegrityViolation => 1,
            ExitStatus::Usage => 2,
            ExitStatus::Storage => 3,
        }
    }
}

/// Default mapping from library errors to exit codes.
pub fn exit_status_for(err: &Error) -> ExitStatus {
    match err {
        Error::InvalidLedger(_) | Error::Inconsistent(_) => ExitStatus::IntegrityViolation,
        Error::Storage(v) => match v.kind {
            ViolationKind::CorruptRecord | ViolationKind::HeaderMismatch => ExitStatus::Storage,
            ViolationKind::NonAppendWrite
            | ViolationKind::MultiRecordWrite
            | ViolationKind::LidGap
            | ViolationKind::PrevHashMismatch => ExitStatus::Usage,
        },
        Error::Io { .. } | Error::StorageFailure(_) => ExitStatus::Storage,
        Error::MalformedBatch(_)
        | Error::DuplicateKey { .. }
        | Error::LidOutOfRange { .. }
        | Error::RecordIndexOutOfRange { .. }
        | Error::AlreadyExists(_)
        | Error::InvalidInput(_) => ExitStatus::Usage,
    }
}

#[derive(Debug, Parser)]
#[command(name = "chaintable", version, about = "Tamper-evident chain table ledgers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TamperTarget {
    Ledger,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an empty ledger file and data file.
    Init {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value = "Events")]
        name: String,
    },
    /// Append one batch of rows (a JSON array of records) as one chain record.
    Append {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        table: PathBuf,
        /// Read the batch from this file instead of standard input.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Verify the hash chain, and optionally a data file against it.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Rebuild the full data file from the ledger.
    Reconstruct {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the current state (latest row per opid) replayed from the ledger.
    Materialize {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Rewrite stored bytes out-of-band to simulate an attack.
    Tamper {
        #[arg(long)]
        ledger: PathBuf,
        /// 1: edit an intermediate record (needs --lid); 2: edit the last record.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        scenario: u8,
        #[arg(long)]
        lid: Option<u64>,
        /// Row within the chain record's batch, 1-based.
        #[arg(long, default_value_t = 1)]
        index: usize,
        /// New description text.
        #[arg(long, conflicts_with = "delete")]
        set: Option<String>,
        /// Replace the description with null.
        #[arg(long)]
        delete: bool,
        /// Also recompute stored hashes from the edited record to the end.
        #[arg(long, conflicts_with = "rehash_through")]
        rehash: bool,
        /// Recompute stored hashes from the edited record through this lid.
        #[arg(long)]
        rehash_through: Option<u64>,
        /// Which file to edit.
        #[arg(long, value_enum, default_value_t = TamperTarget::Ledger)]
        target: TamperTarget,
        /// Data file, required with `--target table`.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Show the record count and tip hash.
    Status {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Drop a torn final line left by an interrupted append.
    Repair {
        #[arg(long)]
        ledger: PathBuf,
    },
}

/// Output sinks, so commands can be driven from tests.
pub struct Io<'a> {
    pub stdin: &'a mut dyn Read,
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

pub fn run(cli: Cli, io: &mut Io<'_>) -> ExitStatus {
    let result = match cli.command {
        Command::Init {
            ledger,
            table,
            name,
        } => cmd_init(&ledger, &table, &name, io),
        Command::Append {
            ledger,
            table,
            input,
            json,
        } => cmd_append(&ledger, &table, input.as_deref(), json, io),
        Command::Verify {
            ledger,
            table,
            json,
        } => cmd_verify(&ledger, table.as_deref(), json, io),
        Command::Reconstruct { ledger, out } => cmd_reconstruct(&ledger, &out, io),
        Command::Materialize { ledger, json } => cmd_materialize(&ledger, json, io),
        Command::Tamper {
            ledger,
            scenario,
            lid,
            index,
            set,
            delete,
            rehash,
            rehash_through,
            target,
            table,
        } => {
            let value = match (set, delete) {
                (Some(v), false) => Some(v),
                (None, true) => None,
                _ => {
                    let _ = writeln!(io.stderr, "error: one of --set or --delete is required");
                    return ExitStatus::Usage;
                }
            };
            let args = TamperArgs {
                scenario,
                lid,
                index,
                value,
                rehash,
                rehash_through,
                target,
                table,
            };
            cmd_tamper(&ledger, args, io)
        }
        Command::Status { ledger, json } => cmd_status(&ledger, json, io),
        Command::Repair { ledger } => cmd_repair(&ledger, io),
    };
    match result {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(io.stderr, "error: {e}");
            exit_status_for(&e)
        }
    }
}

type CmdResult = Result<ExitStatus, Error>;

fn cmd_init(ledger: &Path, table: &Path, name: &str, io: &mut Io<'_>) -> CmdResult {
    Store::init(ledger, table, name)?;
    let _ = writeln!(io.stdout, "initialized table {name}");
    let _ = writeln!(io.stdout, "ledger: {}", ledger.display());
    let _ = writeln!(io.stdout, "data:   {}", table.display());
    Ok(ExitStatus::Success)
}

/// Parses append input. Nested arrays would be several chain records in one
/// write, which the ledger never accepts.
pub fn parse_batch_input(bytes: &[u8]) -> Result<UpdateBatch, Error> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::MalformedBatch(e.to_string()))?;
    match &value {
        serde_json::Value::Array(items) if items.iter().any(serde_json::Value::is_array) => {
            Err(Error::Storage(chaintable::StorageViolation::new(
                ViolationKind::MultiRecordWrite,
                format!(
                    "input holds {} nested batches; the ledger accepts one record per write",
                    items.len()
                ),
            )))
        }
        serde_json::Value::Array(_) => UpdateBatch::from_json(bytes),
        _ => Err(Error::MalformedBatch("expected a JSON array of records".into())),
    }
}

fn cmd_append(
    ledger: &Path,
    table: &Path,
    input: Option<&Path>,
    json: bool,
    io: &mut Io<'_>,
) -> CmdResult {
    let mut bytes = Vec::new();
    match input {
        Some(p) => bytes = std::fs::read(p).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?,
        None => {
            io.stdin
                .read_to_end(&mut bytes)
                .map_err(|e| Error::InvalidInput(format!("stdin: {e}")))?;
        }
    }
    let batch = parse_batch_input(&bytes)?;
    let (mut store, rec) = Store::open(ledger, table)?;
    if rec.rows_replayed > 0 {
        let _ = writeln!(
            io.stderr,
            "note: replayed {} row(s) missing from the data file",
            rec.rows_replayed
        );
    }
    let record = store.apply_batch(batch)?;
    if json {
        let _ = writeln!(io.stdout, "{}", json!({ "lid": record.lid, "hash": record.hash, "rows": record.update.len() }));
    } else {
        let _ = writeln!(io.stdout, "lid {}", record.lid);
        let _ = writeln!(io.stdout, "hash {}", record.hash);
    }
    Ok(ExitStatus::Success)
}

fn render_row(row: &Option<chaintable::UpdateRecord>) -> String {
    match row {
        Some(r) => String::from_utf8_lossy(&r.encode_canonical()).into_owned(),
        None => "(none)".into(),
    }
}

fn cmd_verify(ledger: &Path, table: Option<&Path>, json: bool, io: &mut Io<'_>) -> CmdResult {
    let loaded = match read_ledger(ledger) {
        Ok(l) => l,
        Err(e @ Error::Io { .. }) => return Err(e),
        Err(e) => {
            // Unreadable records mean the file cannot be certified.
            let _ = writeln!(io.stdout, "chain: UNREADABLE, {e}");
            return Ok(ExitStatus::IntegrityViolation);
        }
    };
    let chain = loaded.ledger.verify();
    let mut status = if chain.valid {
        ExitStatus::Success
    } else {
        ExitStatus::IntegrityViolation
    };

    let mut consistency = None;
    let mut table_error = None;
    if let (Some(path), true) = (table, chain.valid) {
        match load_data_table(path) {
            Ok(t) => {
                let report = loaded.ledger.verify_against_table(&t)?;
                if !report.consistent {
                    status = ExitStatus::IntegrityViolation;
                }
                consistency = Some(report);
            }
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e) => {
                status = ExitStatus::IntegrityViolation;
                table_error = Some(e.to_string());
            }
        }
    }

    if json {
        let _ = writeln!(
            io.stdout,
            "{}",
            json!({ "chain": chain, "table": consistency, "table_error": table_error })
        );
        return Ok(status);
    }
    if chain.valid {
        let _ = writeln!(io.stdout, "chain: ok ({} records)", chain.records_checked);
    } else {
        let _ = writeln!(io.stdout, "chain: INVALID, {chain}");
        if table.is_some() {
            let _ = writeln!(io.stdout, "table: not checked (chain is invalid)");
        }
    }
    if let Some(e) = table_error {
        let _ = writeln!(io.stdout, "table: UNREADABLE, {e}");
    }
    if let Some(report) = consistency {
        if report.consistent {
            let _ = writeln!(io.stdout, "table: consistent");
        } else {
            let _ = writeln!(
                io.stdout,
                "table: INCONSISTENT, {} divergence(s)",
                report.divergences.len()
            );
            for d in &report.divergences {
                let _ = writeln!(
                    io.stdout,
                    "  row {} (opid {}): expected {} found {}",
                    d.position,
                    d.opid(),
                    render_row(&d.expected),
                    render_row(&d.found)
                );
            }
        }
    }
    Ok(status)
}

fn cmd_reconstruct(ledger: &Path, out: &Path, io: &mut Io<'_>) -> CmdResult {
    if out.exists() {
        return Err(Error::AlreadyExists(out.to_owned()));
    }
    let loaded = read_ledger(ledger)?;
    let table = loaded.ledger.reconstruct(&loaded.header.table_name)?;
    write_data_table(out, &table)?;
    let _ = writeln!(
        io.stdout,
        "reconstructed {} row(s) from {} chain record(s) into {}",
        table.len(),
        loaded.ledger.len(),
        out.display()
    );
    Ok(ExitStatus::Success)
}

fn cmd_materialize(ledger: &Path, json: bool, io: &mut Io<'_>) -> CmdResult {
    let view = read_ledger(ledger)?.ledger.materialize()?;
    if json {
        let _ = writeln!(io.stdout, "{}", serde_json::to_string(&view).expect("serializable"));
        return Ok(ExitStatus::Success);
    }
    for e in &view.entries {
        match &e.description {
            Some(d) => {
                let _ = writeln!(io.stdout, "{}\t{}\t{}", e.opid, e.timestamp, d);
            }
            None => {
                let _ = writeln!(io.stdout, "{}\t{}\t(deleted)", e.opid, e.timestamp);
            }
        }
    }
    Ok(ExitStatus::Success)
}

pub struct TamperArgs {
    pub scenario: u8,
    pub lid: Option<u64>,
    pub index: usize,
    pub value: Option<String>,
    pub rehash: bool,
    pub rehash_through: Option<u64>,
    pub target: TamperTarget,
    pub table: Option<PathBuf>,
}

fn describe(value: &Option<String>) -> String {
    match value {
        Some(v) => format!("{v:?}"),
        None => "null".into(),
    }
}

fn cmd_tamper(ledger: &Path, args: TamperArgs, io: &mut Io<'_>) -> CmdResult {
    let loaded = read_ledger(ledger)?;
    let n = loaded.ledger.len() as u64;
    let lid = match (args.scenario, args.lid) {
        (1, Some(lid)) => lid,
        (1, None) => return Err(Error::InvalidInput("scenario 1 needs --lid".into())),
        (_, Some(lid)) if lid != n => {
            return Err(Error::InvalidInput(format!(
                "scenario 2 edits the last record (lid {n}), not lid {lid}"
            )))
        }
        _ => n,
    };
    if lid == 0 || lid > n {
        return Err(Error::LidOutOfRange {
            lid,
            len: n as usize,
        });
    }
    if args.scenario == 1 && lid == n {
        let _ = writeln!(io.stderr, "note: lid {lid} is the last record; this is scenario 2");
    }

    if args.target == TamperTarget::Table {
        let Some(table) = args.table else {
            return Err(Error::InvalidInput("--target table needs --table".into()));
        };
        let batch_len = loaded.ledger.get(lid).map_or(0, |r| r.update.len());
        if args.index == 0 || args.index > batch_len {
            return Err(Error::RecordIndexOutOfRange {
                lid,
                index: args.index,
                len: batch_len,
            });
        }
        let position = row_position(&loaded.ledger, lid, args.index);
        let old = tamper_table_row_in_place(&table, position, args.value.clone())?;
        let _ = writeln!(
            io.stdout,
            "tampered {}: row {position} description {} -> {}",
            table.display(),
            describe(&old),
            describe(&args.value)
        );
        let _ = writeln!(
            io.stdout,
            "predicted detection: chain verifies; table check flags row {position}"
        );
        return Ok(ExitStatus::Success);
    }

    let through = if args.rehash { Some(n) } else { args.rehash_through };
    let report: TamperReport = match through {
        Some(m) => tamper_with_rehash(ledger, lid, args.index, args.value, m)?,
        None => tamper_update_in_place(ledger, lid, args.index, args.value)?,
    };
    let _ = writeln!(
        io.stdout,
        "tampered {}: lid {} record {} description {} -> {}",
        ledger.display(),
        report.lid,
        report.record_index,
        describe(&report.old_description),
        describe(&report.new_description)
    );
    if !report.rehashed.is_empty() {
        let lids: Vec<String> = report.rehashed.iter().map(u64::to_string).collect();
        let _ = writeln!(io.stdout, "rehashed lids: {}", lids.join(", "));
    }
    match report.predicted {
        PredictedDetection::Chain { lid, kind } => {
            let _ = writeln!(io.stdout, "predicted detection: first invalid lid: {lid} ({kind})");
        }
        PredictedDetection::TableCheck { position } => {
            let _ = writeln!(
                io.stdout,
                "predicted detection: chain verifies; table check flags row {position}"
            );
        }
    }
    Ok(ExitStatus::Success)
}

fn cmd_status(ledger: &Path, json: bool, io: &mut Io<'_>) -> CmdResult {
    let loaded = read_ledger(ledger)?;
    let tip = loaded.ledger.tip_hash();
    let chain = loaded.ledger.verify();
    if json {
        let _ = writeln!(
            io.stdout,
            "{}",
            json!({
                "table": loaded.header.table_name,
                "records": loaded.ledger.len(),
                "tip": tip,
                "chain_valid": chain.valid,
            })
        );
    } else {
        let _ = writeln!(io.stdout, "table: {}", loaded.header.table_name);
        let _ = writeln!(io.stdout, "records: {}", loaded.ledger.len());
        let _ = writeln!(io.stdout, "tip: {}", tip.map_or_else(|| "-".to_owned(), |h| h.to_hex()));
        let _ = writeln!(io.stdout, "chain: {}", if chain.valid { "ok" } else { "INVALID" });
    }
    Ok(ExitStatus::Success)
}

fn cmd_repair(ledger: &Path, io: &mut Io<'_>) -> CmdResult {
    match repair_ledger(ledger)? {
        RepairOutcome::Clean { records } => {
            let _ = writeln!(io.stdout, "nothing to repair ({records} records)");
        }
        RepairOutcome::DroppedTornTail {
            records,
            bytes_removed,
        } => {
            let _ = writeln!(
                io.stdout,
                "dropped torn final line ({bytes_removed} bytes); {records} records remain"
            );
        }
    }
    Ok(ExitStatus::Success)
}
