//! Command dispatch, flag validation and the five command bodies.
//!
//! Flag validation is pure and happens before the session (provider +
//! state store) is opened, so a usage error can never touch disk state.

use std::path::{Path, PathBuf};

use crate::cli::args::{self, ArgSpec, Parsed, ParsedArgs};
use crate::cli::{
    append_terminate_timing, emit_timing, write_run_timings, Phase, PhaseTiming, ReportFormat,
    EXIT_FAILURE, EXIT_OK, EXIT_USAGE,
};
use crate::config::load_config;
use crate::error::{Error, Result};
use crate::executor::{prompt_for_script, EbsSpec, Session, SubmitTarget};
use crate::job::resolve_job_dir;
use crate::retrieval::RetrieveSource;

/// The five lifecycle commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gather,
    Submit,
    Execute,
    Results,
    Terminate,
}

impl Command {
    const ALL: [Command; 5] = [
        Command::Gather,
        Command::Submit,
        Command::Execute,
        Command::Results,
        Command::Terminate,
    ];

    /// Subcommand spelling (`rbc gather` ...).
    pub fn subcommand(&self) -> &'static str {
        match self {
            Command::Gather => "gather",
            Command::Submit => "submit",
            Command::Execute => "execute",
            Command::Results => "results",
            Command::Terminate => "terminate",
        }
    }

    /// Alias spelling (`RBC_GatherResource` ...).
    pub fn alias(&self) -> &'static str {
        match self {
            Command::Gather => "RBC_GatherResource",
            Command::Submit => "RBC_SubmitJob",
            Command::Execute => "RBC_ExecuteJob",
            Command::Results => "RBC_GetResults",
            Command::Terminate => "RBC_TerminateResource",
        }
    }

    pub fn from_subcommand(name: &str) -> Option<Command> {
        Command::ALL.iter().copied().find(|c| c.subcommand() == name)
    }

    pub fn from_alias(name: &str) -> Option<Command> {
        Command::ALL.iter().copied().find(|c| c.alias() == name)
    }

    fn syntax(&self) -> &'static str {
        match self {
            Command::Gather => {
                "[-h] [-v] [-rname RESOURCE_NAME] [-rsize RESOURCE_SIZE] \
                 [-ebsvol EBS_VOLUME | -snap EBS_SNAP] [-type INSTANCE_TYPE] \
                 [-desc RESOURCE_DESCRIPTION]"
            }
            Command::Submit => {
                "[-h] [-v] [-rname RESOURCE_NAME [-toallnodes | -tomaster]] \
                 [-jobdir JOB_DIRECTORY] [-data DATA_DIRECTORY]"
            }
            Command::Execute => {
                "[-h] [-v] [-rname RESOURCE_NAME] [-jobdir JOB_DIRECTORY] \
                 [-rscript R_SCRIPT] [-runname RUN_NAME]"
            }
            Command::Results => {
                "[-h] [-v] [-rname RESOURCE_NAME [-frommaster | -fromall]] \
                 [-jobdir JOB_DIRECTORY] [-runname RUN_NAME] [-report FORMAT]"
            }
            Command::Terminate => "[-h] [-v] [-rname RESOURCE_NAME] [-deletevol]",
        }
    }

    fn spec(&self) -> &'static [ArgSpec] {
        const RNAME: ArgSpec = ArgSpec {
            name: "rname",
            takes_value: true,
            value_name: "RESOURCE_NAME",
            help: "resource to operate on (default from the config file)",
        };
        const JOBDIR: ArgSpec = ArgSpec {
            name: "jobdir",
            takes_value: true,
            value_name: "JOB_DIRECTORY",
            help: "job directory at the host (default: current directory)",
        };
        match self {
            Command::Gather => &[
                RNAME,
                ArgSpec {
                    name: "rsize",
                    takes_value: true,
                    value_name: "RESOURCE_SIZE",
                    help: "number of instances; more than one forms a cluster (default 1)",
                },
                ArgSpec {
                    name: "ebsvol",
                    takes_value: true,
                    value_name: "EBS_VOLUME",
                    help: "attach this existing volume (single instances only)",
                },
                ArgSpec {
                    name: "snap",
                    takes_value: true,
                    value_name: "EBS_SNAP",
                    help: "create fresh volumes from this snapshot",
                },
                ArgSpec {
                    name: "type",
                    takes_value: true,
                    value_name: "INSTANCE_TYPE",
                    help: "instance type from the catalog (default from the config file)",
                },
                ArgSpec {
                    name: "desc",
                    takes_value: true,
                    value_name: "RESOURCE_DESCRIPTION",
                    help: "free-form description",
                },
            ],
            Command::Submit => &[
                RNAME,
                ArgSpec {
                    name: "toallnodes",
                    takes_value: false,
                    value_name: "",
                    help: "submit to every node of a cluster",
                },
                ArgSpec {
                    name: "tomaster",
                    takes_value: false,
                    value_name: "",
                    help: "submit to the master node only (default)",
                },
                JOBDIR,
                ArgSpec {
                    name: "data",
                    takes_value: true,
                    value_name: "DATA_DIRECTORY",
                    help: "synchronise an arbitrary folder instead of a job directory",
                },
            ],
            Command::Execute => &[
                RNAME,
                JOBDIR,
                ArgSpec {
                    name: "rscript",
                    takes_value: true,
                    value_name: "R_SCRIPT",
                    help: "script to execute (prompted for interactively when omitted)",
                },
                ArgSpec {
                    name: "runname",
                    takes_value: true,
                    value_name: "RUN_NAME",
                    help: "mandatory name distinguishing this execution",
                },
            ],
            Command::Results => &[
                RNAME,
                ArgSpec {
                    name: "frommaster",
                    takes_value: false,
                    value_name: "",
                    help: "fetch aggregated results from the master (default)",
                },
                ArgSpec {
                    name: "fromall",
                    takes_value: false,
                    value_name: "",
                    help: "fetch per-node results from every instance",
                },
                JOBDIR,
                ArgSpec {
                    name: "runname",
                    takes_value: true,
                    value_name: "RUN_NAME",
                    help: "mandatory name of the run to retrieve",
                },
                ArgSpec {
                    name: "report",
                    takes_value: true,
                    value_name: "FORMAT",
                    help: "report format: text (default) or tsv",
                },
            ],
            Command::Terminate => &[
                RNAME,
                ArgSpec {
                    name: "deletevol",
                    takes_value: false,
                    value_name: "",
                    help: "also delete the attached volumes",
                },
            ],
        }
    }

    fn usage(&self) -> String {
        args::usage(self.alias(), self.syntax(), self.spec())
    }
}

fn version_line() -> String {
    format!("rbc {}", env!("CARGO_PKG_VERSION"))
}

fn top_usage() -> String {
    let mut out = String::from(
        "usage: rbc <command> [flags]\n\n\
         lifecycle commands (also invocable through their alias names):\n",
    );
    for command in Command::ALL {
        out.push_str(&format!(
            "  {:<10} {}\n",
            command.subcommand(),
            command.alias()
        ));
    }
    out.push_str("\nrun `rbc <command> -h` for each command's flags\n");
    out
}

/// Full CLI entry point: returns the process exit code.
pub fn dispatch(argv: &[String]) -> i32 {
    let invoked_as = argv
        .first()
        .map(|a| {
            Path::new(a)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .unwrap_or_default();

    let (command, rest) = if let Some(command) = Command::from_alias(&invoked_as) {
        (command, &argv[1..])
    } else {
        match argv.get(1).map(String::as_str) {
            None => {
                eprint!("{}", top_usage());
                return EXIT_USAGE;
            }
            Some("-h") => {
                print!("{}", top_usage());
                return EXIT_OK;
            }
            Some("-v") => {
                println!("{}", version_line());
                return EXIT_OK;
            }
            Some(name) => match Command::from_subcommand(name) {
                Some(command) => (command, &argv[2..]),
                None => {
                    eprintln!("unknown command `{name}`");
                    eprint!("{}", top_usage());
                    return EXIT_USAGE;
                }
            },
        }
    };
    run_command(command, rest)
}

fn run_command(command: Command, rest: &[String]) -> i32 {
    let parsed = match args::parse(rest, command.spec()) {
        Ok(Parsed::Help) => {
            print!("{}", command.usage());
            return EXIT_OK;
        }
        Ok(Parsed::Version) => {
            println!("{}", version_line());
            return EXIT_OK;
        }
        Ok(Parsed::Args(parsed)) => parsed,
        Err(message) => return usage_failure(command, &message),
    };

    let outcome = match command {
        Command::Gather => validate_gather(&parsed).map(|a| run_gather(&a)),
        Command::Submit => validate_submit(&parsed).map(|a| run_submit(&a)),
        Command::Execute => validate_execute(&parsed).map(|a| run_execute(&a)),
        Command::Results => validate_results(&parsed).map(|a| run_results(&a)),
        Command::Terminate => validate_terminate(&parsed).map(|a| run_terminate(&a)),
    };
    match outcome {
        Err(message) => usage_failure(command, &message),
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(error)) => {
            eprintln!("error: {error}");
            EXIT_FAILURE
        }
    }
}

fn usage_failure(command: Command, message: &str) -> i32 {
    eprintln!("{}: {message}", command.alias());
    eprint!("{}", command.usage());
    EXIT_USAGE
}

// --- validated per-command arguments -----------------------------------

#[derive(Debug, PartialEq)]
pub(crate) struct GatherArgs {
    rname: Option<String>,
    rsize: usize,
    ebs: EbsSpec,
    type_name: Option<String>,
    desc: String,
}

#[derive(Debug, PartialEq)]
pub(crate) struct SubmitArgs {
    rname: Option<String>,
    target: SubmitTarget,
    jobdir: Option<PathBuf>,
    data: Option<PathBuf>,
}

#[derive(Debug, PartialEq)]
pub(crate) struct ExecuteArgs {
    rname: Option<String>,
    jobdir: Option<PathBuf>,
    rscript: Option<String>,
    runname: String,
}

#[derive(Debug, PartialEq)]
pub(crate) struct ResultsArgs {
    rname: Option<String>,
    source: RetrieveSource,
    jobdir: Option<PathBuf>,
    runname: String,
    format: ReportFormat,
}

#[derive(Debug, PartialEq)]
pub(crate) struct TerminateArgs {
    rname: Option<String>,
    deletevol: bool,
}

fn validate_gather(parsed: &ParsedArgs) -> std::result::Result<GatherArgs, String> {
    let rsize = match parsed.value("rsize") {
        None => 1,
        Some(raw) => match raw.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            Ok(_) => return Err("-rsize must be at least 1".to_string()),
            Err(_) => return Err(format!("invalid -rsize `{raw}`")),
        },
    };
    let ebs = match (parsed.value("ebsvol"), parsed.value("snap")) {
        (Some(_), Some(_)) => {
            return Err("-ebsvol and -snap cannot be specified at the same time".to_string())
        }
        (Some(volume), None) => EbsSpec::Volume(volume.to_string()),
        (None, Some(snapshot)) => EbsSpec::Snapshot(snapshot.to_string()),
        (None, None) => EbsSpec::Default,
    };
    Ok(GatherArgs {
        rname: parsed.value("rname").map(str::to_string),
        rsize,
        ebs,
        type_name: parsed.value("type").map(str::to_string),
        desc: parsed.value("desc").unwrap_or("").to_string(),
    })
}

fn validate_submit(parsed: &ParsedArgs) -> std::result::Result<SubmitArgs, String> {
    let target = match (parsed.has("toallnodes"), parsed.has("tomaster")) {
        (true, true) => {
            return Err("-toallnodes and -tomaster cannot be specified at the same time".to_string())
        }
        (true, false) => SubmitTarget::AllNodes,
        _ => SubmitTarget::Master,
    };
    Ok(SubmitArgs {
        rname: parsed.value("rname").map(str::to_string),
        target,
        jobdir: parsed.value("jobdir").map(PathBuf::from),
        data: parsed.value("data").map(PathBuf::from),
    })
}

fn validate_execute(parsed: &ParsedArgs) -> std::result::Result<ExecuteArgs, String> {
    let Some(runname) = parsed.value("runname") else {
        return Err("missing mandatory -runname".to_string());
    };
    Ok(ExecuteArgs {
        rname: parsed.value("rname").map(str::to_string),
        jobdir: parsed.value("jobdir").map(PathBuf::from),
        rscript: parsed.value("rscript").map(str::to_string),
        runname: runname.to_string(),
    })
}

fn validate_results(parsed: &ParsedArgs) -> std::result::Result<ResultsArgs, String> {
    let Some(runname) = parsed.value("runname") else {
        return Err("missing mandatory -runname".to_string());
    };
    let source = match (parsed.has("frommaster"), parsed.has("fromall")) {
        (true, true) => {
            return Err("-frommaster and -fromall cannot be specified at the same time".to_string())
        }
        (false, true) => RetrieveSource::All,
        _ => RetrieveSource::Master,
    };
    let format = match parsed.value("report") {
        None | Some("text") => ReportFormat::Text,
        Some("tsv") => ReportFormat::Tsv,
        Some(other) => return Err(format!("invalid -report format `{other}`")),
    };
    Ok(ResultsArgs {
        rname: parsed.value("rname").map(str::to_string),
        source,
        jobdir: parsed.value("jobdir").map(PathBuf::from),
        runname: runname.to_string(),
        format,
    })
}

fn validate_terminate(parsed: &ParsedArgs) -> std::result::Result<TerminateArgs, String> {
    Ok(TerminateArgs {
        rname: parsed.value("rname").map(str::to_string),
        deletevol: parsed.has("deletevol"),
    })
}

// --- command bodies -----------------------------------------------------

fn open_session() -> Result<Session> {
    Session::open(load_config(None)?)
}

fn resource_or_default(session: &Session, rname: &Option<String>) -> String {
    rname
        .clone()
        .unwrap_or_else(|| session.config.default_resource_name.clone())
}

fn print_timing(phase: Phase, resource: &str, run_name: Option<&str>, seconds: f64) {
    println!(
        "{}",
        emit_timing(
            &PhaseTiming {
                phase,
                seconds,
                resource: resource.to_string(),
                run_name: run_name.map(str::to_string),
            },
            ReportFormat::Text,
        )
    );
}

fn run_gather(args: &GatherArgs) -> Result<()> {
    let session = open_session()?;
    let name = resource_or_default(&session, &args.rname);
    let summary = session.gather_resource(
        &name,
        args.rsize,
        args.type_name.as_deref(),
        &args.ebs,
        &args.desc,
    )?;
    let record = summary.record;
    println!("resource: {}", record.name);
    if !record.description.is_empty() {
        println!("description: {}", record.description);
    }
    println!("state: {}", record.state);
    println!("instance type: {}", record.instance_type);
    println!("instances: {} (master {})", record.size, record.master);
    for instance in &record.instances {
        println!("  {instance}");
    }
    println!(
        "volumes: {}",
        record
            .volumes
            .iter()
            .map(|v| v.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    );
    print_timing(Phase::Gather, &record.name, None, summary.seconds);
    Ok(())
}

fn run_submit(args: &SubmitArgs) -> Result<()> {
    let session = open_session()?;
    let name = resource_or_default(&session, &args.rname);
    let (summary, what) = match &args.data {
        Some(data) => (
            session.submit_data(&name, data, args.target)?,
            data.display().to_string(),
        ),
        None => {
            let jobdir = resolve_job_dir(args.jobdir.as_deref())?;
            (
                session.submit_job(&name, &jobdir, args.target)?,
                jobdir.name.clone(),
            )
        }
    };
    println!(
        "submitted {what} to {name} ({} node{})",
        summary.per_instance.len(),
        if summary.per_instance.len() == 1 { "" } else { "s" }
    );
    for (instance, stats) in &summary.per_instance {
        println!(
            "  {instance}: copied {} file{} ({} bytes), deleted {}",
            stats.files_copied,
            if stats.files_copied == 1 { "" } else { "s" },
            stats.bytes_copied,
            stats.files_deleted
        );
    }
    print_timing(Phase::Submit, &name, None, summary.seconds);
    Ok(())
}

fn run_execute(args: &ExecuteArgs) -> Result<()> {
    let session = open_session()?;
    let name = resource_or_default(&session, &args.rname);
    let jobdir = resolve_job_dir(args.jobdir.as_deref())?;
    let script = match &args.rscript {
        Some(script) => script.clone(),
        None => prompt_for_script(&jobdir)?,
    };
    let run = session.execute_job(&name, &jobdir, &script, &args.runname)?;
    println!("executed {script} on {name}");
    println!(
        "run {}: {} (exit {})",
        run.run_name,
        run.status,
        run.exit_code.unwrap_or(-1)
    );
    let execute_seconds = run.phase_timings.get("execute").copied().unwrap_or(0.0);
    print_timing(Phase::Execute, &name, Some(&run.run_name), execute_seconds);
    Ok(())
}

fn run_results(args: &ResultsArgs) -> Result<()> {
    let session = open_session()?;
    let name = resource_or_default(&session, &args.rname);
    let jobdir = resolve_job_dir(args.jobdir.as_deref())?;
    let report = match session.get_results(&name, &jobdir, &args.runname, args.source) {
        Ok(report) => report,
        Err(Error::RunNotFound(key)) => {
            // Help the operator find the run they meant.
            let known = session.list_runs(&name, &jobdir)?;
            if !known.is_empty() {
                eprintln!("runs recorded for {} on {name}:", jobdir.name);
                for run in known {
                    eprintln!("  {} ({})", run.run_name, run.status);
                }
            }
            return Err(Error::RunNotFound(key));
        }
        Err(other) => return Err(other),
    };

    match args.format {
        ReportFormat::Text => {
            println!("run: {}", report.run_name);
            println!("destination: {}", report.destination.display());
            for (instance, (files, bytes)) in &report.per_node {
                println!("  {instance}: {files} file{} ({bytes} bytes)", if *files == 1 { "" } else { "s" });
            }
        }
        ReportFormat::Tsv => {
            for (instance, (files, bytes)) in &report.per_node {
                println!("{}\t{instance}\t{files}\t{bytes}", report.run_name);
            }
        }
    }

    // Persist the cumulative per-run lifecycle timing next to the results.
    let record = session.store.lookup_resource(&name)?;
    let run = session.store.lookup_run(&crate::state::RunKey {
        resource: name.clone(),
        job: jobdir.name.clone(),
        run_name: args.runname.clone(),
    })?;
    write_run_timings(&jobdir.root, &record, &run)?;

    if args.format == ReportFormat::Tsv {
        println!(
            "{}",
            emit_timing(
                &PhaseTiming {
                    phase: Phase::Retrieve,
                    seconds: report.seconds,
                    resource: name.clone(),
                    run_name: Some(report.run_name.clone()),
                },
                ReportFormat::Tsv,
            )
        );
    } else {
        print_timing(Phase::Retrieve, &name, Some(&report.run_name), report.seconds);
    }
    Ok(())
}

fn run_terminate(args: &TerminateArgs) -> Result<()> {
    let session = open_session()?;
    let name = resource_or_default(&session, &args.rname);
    let summary = session.terminate_resource(&name, args.deletevol)?;
    println!(
        "terminated {name}: {} instance{}, {} volume{} deleted",
        summary.instances_terminated,
        if summary.instances_terminated == 1 { "" } else { "s" },
        summary.volumes_deleted,
        if summary.volumes_deleted == 1 { "" } else { "s" },
    );
    if !summary.unretrieved_runs.is_empty() {
        eprintln!(
            "warning: results of {} run{} were never retrieved and are no longer reachable: {}",
            summary.unretrieved_runs.len(),
            if summary.unretrieved_runs.len() == 1 { "" } else { "s" },
            summary.unretrieved_runs.join(", ")
        );
    }

    // Complete the per-run timing files of everything retrieved earlier.
    for run in session.store.snapshot()?.runs {
        if run.resource == name {
            append_terminate_timing(&run, &name, summary.seconds)?;
        }
    }
    print_timing(Phase::Terminate, &name, None, summary.seconds);
    Ok(())
}
