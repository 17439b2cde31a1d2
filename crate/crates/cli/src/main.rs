//! `ska`: offline driver for the annotation workbench.

mod files;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ska_core::agreement::{reports_to_csv, AgreementReport};
use ska_core::codebook::RuleChange;
use ska_core::document::{export_corpus, import_corpus, CorpusDocument, ExportOptions};
use ska_core::review::candidates_to_csv;
use ska_core::workbench::Submission;
use ska_core::{
    AnnotatorId, IngestOptions, ReportPhase, RoundId, RuleId, Store, StudyConfig, Workbench,
};

#[derive(Parser)]
#[command(name = "ska", version, about = "Concept-annotation workbench")]
struct Cli {
    /// Store file holding the whole study.
    #[arg(long, global = true, env = "SKA_STORE", default_value = "ska.json")]
    store: PathBuf,
    /// TOML file with participants, qualification_threshold, min_section_chars.
    #[arg(long, global = true, env = "SKA_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a textbook from a markdown-like file.
    Ingest {
        file: PathBuf,
        #[arg(long, default_value = "textbook")]
        id: String,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        min_section_chars: Option<usize>,
    },
    /// Manage annotators.
    #[command(subcommand)]
    Annotator(AnnotatorCmd),
    /// Qualification test.
    #[command(subcommand)]
    Qualify(QualifyCmd),
    /// Create, inspect and close rounds.
    #[command(subcommand)]
    Round(RoundCmd),
    /// Submit an annotator's annotations from a CSV or JSON file.
    Submit {
        round: String,
        #[arg(long = "as")]
        annotator: String,
        file: PathBuf,
    },
    /// Missed-concept review.
    #[command(subcommand)]
    Review(ReviewCmd),
    /// List the disagreement cases awaiting discussion.
    Disagreements {
        round: String,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Submit the lead's discussion outcomes from a CSV or JSON file.
    Resolve {
        round: String,
        #[arg(long = "as")]
        annotator: String,
        file: PathBuf,
    },
    /// Agreement report for one round, or a CSV over every reportable round.
    Agreement {
        #[arg(long)]
        round: Option<String>,
        #[arg(long, default_value = "before")]
        phase: String,
        #[arg(long)]
        section: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// N-gram statistics of consensus concepts over closed rounds.
    Stats {
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        from: Option<u32>,
        #[arg(long)]
        to: Option<u32>,
    },
    /// Codebook inspection and seeding.
    #[command(subcommand)]
    Codebook(CodebookCmd),
    /// Write the corpus document.
    Export {
        /// Omit section bodies and spans.
        #[arg(long)]
        no_text: bool,
        #[arg(long)]
        phase: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Replace the store content with a corpus document.
    Import {
        file: PathBuf,
        /// Overwrite a store that already holds data.
        #[arg(long)]
        force: bool,
    },
    /// Full integrity scan of the store.
    Validate,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Bearer token for setup routes; generated when absent.
        #[arg(long, env = "SKA_ADMIN_TOKEN")]
        admin_token: Option<String>,
    },
}

#[derive(Subcommand)]
enum AnnotatorCmd {
    /// Register an annotator and print their bearer token.
    Add {
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        token: Option<String>,
    },
    /// Issue a new bearer token for an existing annotator.
    Token {
        id: String,
        #[arg(long)]
        token: Option<String>,
    },
    List,
}

#[derive(Subcommand)]
enum QualifyCmd {
    /// Configure the gold section and concepts.
    SetTest {
        #[arg(long)]
        section: String,
        #[arg(long = "gold", required = true)]
        gold: Vec<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score an annotator's answers: `--answer` values or a file with one concept per line.
    Run {
        annotator: String,
        #[arg(long = "answer")]
        answers: Vec<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RoundCmd {
    Create {
        #[arg(long)]
        chapter: String,
        #[arg(long, value_delimiter = ',', required = true)]
        participants: Vec<String>,
        #[arg(long)]
        lead: Option<String>,
    },
    /// Status of one round, or of every round.
    Status { round: Option<String> },
    /// Apply codebook changes and close the round.
    Close {
        round: String,
        #[arg(long = "as")]
        annotator: String,
        /// New rule text; repeatable.
        #[arg(long = "add")]
        add: Vec<String>,
        /// `RULE_ID=new text`; repeatable.
        #[arg(long = "amend")]
        amend: Vec<String>,
        /// JSON array of rule changes.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReviewCmd {
    /// Print a reviewer's missed-concept candidates.
    Generate {
        round: String,
        #[arg(long = "as")]
        annotator: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Apply a decision file and submit the reviewer's review phase.
    Apply {
        round: String,
        #[arg(long = "as")]
        annotator: String,
        file: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CodebookCmd {
    Show(AsOf),
    Export {
        #[arg(long, value_enum, default_value_t = CodebookFormat::Md)]
        format: CodebookFormat,
        #[command(flatten)]
        as_of: AsOf,
    },
    /// Add a seed rule (round 0).
    Seed {
        text: String,
    },
    Convergence,
}

#[derive(Args)]
struct AsOf {
    #[arg(long)]
    as_of: Option<u32>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CodebookFormat {
    Md,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn,ska_server=info".into()),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct Session {
    store: Store,
    wb: Workbench,
}

impl Session {
    fn open(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                Some(StudyConfig::from_toml(&text)?)
            }
            None => None,
        };
        let store = Store::new(&cli.store);
        let mut wb = store.load_or_init(config.clone().unwrap_or_default())?;
        if let Some(config) = config {
            wb.set_config(config)?;
        }
        Ok(Session { store, wb })
    }

    fn save(&self) -> Result<()> {
        Ok(self.store.save(&self.wb)?)
    }

    fn round(&self, key: &str) -> Result<RoundId> {
        Ok(self.wb.find_round(key)?.id.clone())
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut s = Session::open(&cli)?;
    match cli.command {
        Command::Ingest {
            file,
            id,
            title,
            min_section_chars,
        } => {
            let raw = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let options = IngestOptions {
                textbook_id: id.into(),
                title,
                min_section_chars: min_section_chars.unwrap_or(s.wb.config().min_section_chars),
            };
            let tb = s.wb.ingest(&raw, &options)?;
            println!(
                "ingested {}: {} chapters, {} sections",
                tb.id,
                tb.chapters.len(),
                tb.section_count()
            );
            s.save()?;
        }
        Command::Annotator(AnnotatorCmd::Add { id, name, token }) => {
            let token = token.unwrap_or_else(ska_server::issue_token);
            let name = name.unwrap_or_else(|| id.clone());
            s.wb.register_annotator(id.into(), &name, token.clone())?;
            s.save()?;
            println!("{token}");
        }
        Command::Annotator(AnnotatorCmd::Token { id, token }) => {
            let token = token.unwrap_or_else(ska_server::issue_token);
            s.wb.reissue_token(&id.into(), token.clone())?;
            s.save()?;
            println!("{token}");
        }
        Command::Annotator(AnnotatorCmd::List) => {
            print_json(&s.wb.annotators().values().collect::<Vec<_>>())?;
        }
        Command::Qualify(QualifyCmd::SetTest {
            section,
            gold,
            threshold,
        }) => {
            let test =
                s.wb.set_qualification_test(section.into(), &gold, threshold)?
                    .clone();
            s.save()?;
            print_json(&test)?;
        }
        Command::Qualify(QualifyCmd::Run {
            annotator,
            mut answers,
            file,
        }) => {
            if let Some(path) = file {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                answers.extend(
                    text.lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(str::to_owned),
                );
            }
            let outcome = s.wb.qualify(&annotator.as_str().into(), &answers)?;
            s.save()?;
            println!(
                "{annotator}: score {:.4}, {}",
                outcome.score,
                if outcome.passed {
                    "qualified"
                } else {
                    "not qualified"
                }
            );
        }
        Command::Round(RoundCmd::Create {
            chapter,
            participants,
            lead,
        }) => {
            let participants = participants.into_iter().map(AnnotatorId::from).collect();
            let id =
                s.wb.create_round(&chapter.into(), participants, lead.map(Into::into))?
                    .id
                    .clone();
            s.save()?;
            println!("{id}");
        }
        Command::Round(RoundCmd::Status { round }) => match round {
            Some(key) => print_json(&s.wb.round_status(&s.round(&key)?)?)?,
            None => {
                let all =
                    s.wb.rounds()
                        .iter()
                        .map(|r| s.wb.round_status(&r.id))
                        .collect::<ska_core::Result<Vec<_>>>()?;
                print_json(&all)?;
            }
        },
        Command::Round(RoundCmd::Close {
            round,
            annotator,
            add,
            amend,
            rules,
        }) => {
            let id = s.round(&round)?;
            let mut changes: Vec<RuleChange> = match rules {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => Vec::new(),
            };
            changes.extend(add.into_iter().map(|text| RuleChange::Add {
                text,
                examples: Vec::new(),
            }));
            for item in amend {
                let Some((rule, text)) = item.split_once('=') else {
                    bail!("--amend expects RULE_ID=text, got {item:?}");
                };
                changes.push(RuleChange::Amend {
                    rule_id: RuleId::from(rule.trim()),
                    text: text.trim().to_owned(),
                });
            }
            let added = s.wb.close_round(&id, &annotator.into(), changes)?;
            s.save()?;
            println!("closed {id}; {} rule(s) added", added.len());
            for rule in added {
                println!("{rule}");
            }
        }
        Command::Submit {
            round,
            annotator,
            file,
        } => {
            let id = s.round(&round)?;
            let drafts = files::annotations(&file)?;
            let count = drafts.len();
            let phase = s.wb.submit(
                &id,
                &annotator.as_str().into(),
                Submission::Annotations(drafts),
                None,
            )?;
            s.save()?;
            println!("{annotator}: {count} annotation(s) recorded; round {id} is in {phase}");
        }
        Command::Review(ReviewCmd::Generate {
            round,
            annotator,
            format,
        }) => {
            let id = s.round(&round)?;
            let candidates = s.wb.review_file(&id, &annotator.into())?;
            match format {
                Format::Json => print_json(&candidates)?,
                Format::Csv | Format::Text => print!("{}", candidates_to_csv(&candidates)?),
            }
        }
        Command::Review(ReviewCmd::Apply {
            round,
            annotator,
            file,
        }) => {
            let id = s.round(&round)?;
            let decisions = match file {
                Some(path) => files::review_decisions(&path)?,
                None => Vec::new(),
            };
            let count = decisions.len();
            let phase = s.wb.submit(
                &id,
                &annotator.as_str().into(),
                Submission::ReviewDecisions(decisions),
                None,
            )?;
            s.save()?;
            println!("{annotator}: {count} decision(s) applied; round {id} is in {phase}");
        }
        Command::Disagreements { round, format } => {
            let id = s.round(&round)?;
            let cases = s.wb.disagreements(&id)?;
            match format {
                Format::Json => print_json(&cases)?,
                Format::Csv | Format::Text => {
                    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
                    w.write_record(["section_id", "concept", "support", "tagged_by"])?;
                    for c in &cases {
                        let tagged: Vec<&str> = c.tagged_by.iter().map(|a| a.as_str()).collect();
                        w.write_record([
                            c.section_id.as_str(),
                            c.concept.value(),
                            &c.support.to_string(),
                            &tagged.join(";"),
                        ])?;
                    }
                    w.flush()?;
                }
            }
        }
        Command::Resolve {
            round,
            annotator,
            file,
        } => {
            let id = s.round(&round)?;
            let inputs = files::resolutions(&file)?;
            let count = inputs.len();
            let phase = s.wb.submit(
                &id,
                &annotator.into(),
                Submission::Resolutions(inputs),
                None,
            )?;
            s.save()?;
            println!("{count} resolution(s) recorded; round {id} is in {phase}");
        }
        Command::Agreement {
            round,
            phase,
            section,
            format,
        } => {
            let phase: ReportPhase = phase.parse()?;
            let reports: Vec<AgreementReport> = match round {
                Some(key) => {
                    let id = s.round(&key)?;
                    vec![match section {
                        Some(sec) => s.wb.section_report(&id, &sec.into(), phase)?,
                        None => s.wb.agreement_report(&id, phase)?,
                    }]
                }
                None => {
                    s.wb.rounds()
                        .iter()
                        .filter_map(|r| s.wb.agreement_report(&r.id, phase).ok())
                        .collect()
                }
            };
            match format {
                Format::Json if reports.len() == 1 => print_json(&reports[0])?,
                Format::Json => print_json(&reports)?,
                Format::Csv => print!("{}", reports_to_csv(&reports)?),
                Format::Text => {
                    for r in &reports {
                        print_agreement(r);
                    }
                }
            }
        }
        Command::Stats { format, from, to } => {
            let range = match (from, to) {
                (None, None) => None,
                (f, t) => Some((f.unwrap_or(0), t.unwrap_or(u32::MAX))),
            };
            let table = s.wb.stats_table(range)?;
            match format {
                Format::Text => print!("{}", table.to_text()),
                Format::Csv => print!("{}", table.to_csv()?),
                Format::Json => print_json(&table)?,
            }
        }
        Command::Codebook(cmd) => codebook(&mut s, cmd)?,
        Command::Export {
            no_text,
            phase,
            output,
        } => {
            let phase_filter = phase
                .as_deref()
                .map(str::parse::<ReportPhase>)
                .transpose()?;
            let doc = export_corpus(
                &s.wb,
                ExportOptions {
                    include_text: !no_text,
                    phase_filter,
                },
            );
            let json = doc.to_json()?;
            match output {
                Some(path) => std::fs::write(&path, json)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{json}"),
            }
        }
        Command::Import { file, force } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let doc = CorpusDocument::from_json(&text)?;
            let mut next = import_corpus(&doc)?;
            if !force && (!s.wb.textbooks().is_empty() || !s.wb.annotators().is_empty()) {
                bail!(
                    "{} already holds a study; pass --force to replace it",
                    s.store.path().display()
                );
            }
            next.adopt_tokens(&s.wb);
            s.wb = next;
            s.save()?;
            let summary = s.wb.validate()?;
            println!(
                "imported {} textbook(s), {} round(s), {} annotation(s)",
                summary.textbooks, summary.rounds, summary.annotations
            );
            let missing: Vec<&str> =
                s.wb.annotators()
                    .keys()
                    .filter(|a| !s.wb.has_token(a))
                    .map(|a| a.as_str())
                    .collect();
            if !missing.is_empty() {
                eprintln!(
                    "note: no token for {}; issue with `ska annotator token`",
                    missing.join(", ")
                );
            }
        }
        Command::Validate => {
            let summary = s.wb.validate()?;
            println!(
                "ok: {} textbook(s), {} section(s), {} annotator(s), {} round(s), {} annotation(s), {} rule(s)",
                summary.textbooks, summary.sections, summary.annotators, summary.rounds, summary.annotations, summary.rules
            );
        }
        Command::Serve { addr, admin_token } => serve(s, &addr, admin_token)?,
    }
    Ok(())
}

fn print_agreement(r: &AgreementReport) {
    let scope = match &r.scope {
        ska_core::agreement::ReportScope::Round(id) => format!("round {id}"),
        ska_core::agreement::ReportScope::Section(id) => {
            format!("round {} section {id}", r.round_id)
        }
    };
    println!("{scope} ({})", r.phase_label.as_str());
    for pair in &r.pairwise {
        println!("  {:<24} {:.4}", pair.label(), pair.agreement);
    }
    println!("  {:<24} {:.4}", "mean pairwise", r.mean_pairwise);
    println!(
        "  {:<24} {:.4}",
        "full consensus", r.full_consensus_fraction
    );
    let support: Vec<String> = r
        .support_counts
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect();
    println!("  {:<24} {}", "support counts", support.join(" "));
}

fn codebook(s: &mut Session, cmd: CodebookCmd) -> Result<()> {
    match cmd {
        CodebookCmd::Show(AsOf { as_of: None }) => print!("{}", s.wb.codebook().to_markdown()),
        CodebookCmd::Show(AsOf { as_of: Some(r) }) => {
            for rule in s.wb.codebook().version_at(r).rules {
                println!(
                    "{} (round {}): {}",
                    rule.id, rule.round_introduced, rule.text
                );
            }
        }
        CodebookCmd::Export {
            format: CodebookFormat::Md,
            as_of,
        } => {
            if as_of.as_of.is_some() {
                bail!("--as-of is only available with --format json");
            }
            print!("{}", s.wb.codebook().to_markdown());
        }
        CodebookCmd::Export {
            format: CodebookFormat::Json,
            as_of,
        } => match as_of.as_of {
            Some(r) => print_json(&s.wb.codebook().version_at(r))?,
            None => print_json(s.wb.codebook())?,
        },
        CodebookCmd::Seed { text } => {
            let id = s.wb.seed_rule(&text, Vec::new())?.id.clone();
            s.save()?;
            println!("{id}");
        }
        CodebookCmd::Convergence => print_json(&s.wb.convergence())?,
    }
    Ok(())
}

fn serve(s: Session, addr: &str, admin_token: Option<String>) -> Result<()> {
    let admin_token = admin_token.unwrap_or_else(|| {
        let t = ska_server::issue_token();
        eprintln!("admin token: {t}");
        t
    });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let state = ska_server::AppState::new(s.wb, Some(s.store), admin_token);
        ska_server::serve(listener, state).await?;
        Ok(())
    })
}
