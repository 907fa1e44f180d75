//! The five-step lifecycle on a single instance, driven through the
//! library API: gather -> submit -> execute -> retrieve -> terminate.
//!
//! Everything runs against the local sandbox provider inside a temp
//! directory, so this is safe to run anywhere:
//!
//! ```bash
//! cargo run -p rbc --example full_lifecycle
//! ```

use std::fs;
use std::io;

use rbc::config::Config;
use rbc::executor::{EbsSpec, Session, SubmitTarget};
use rbc::provider::LocalProvider;
use rbc::retrieval::RetrieveSource;
use rbc::state::StateStore;

fn main() -> rbc::Result<()> {
    let scratch = tempfile::tempdir().expect("tempdir");

    // A host-side job directory: one script, one data file, and the two
    // conventional subdirectories. The script directs its output into
    // Results/. The runtime command is configurable; `sh` keeps the
    // example self-contained.
    let job_root = scratch.path().join("GenomeSearch");
    fs::create_dir_all(job_root.join("Results")).map_err(io_err)?;
    fs::create_dir_all(job_root.join("RunResults")).map_err(io_err)?;
    fs::write(job_root.join("patterns.txt"), "TTCCGAGCTCTCCGA\n").map_err(io_err)?;
    fs::write(
        job_root.join("search.R"),
        "hits=$(wc -l < patterns.txt)\n\
         echo \"patterns searched: $hits\" > Results/summary.txt\n\
         echo \"run: $RBC_RUN_NAME\"     >> Results/summary.txt\n",
    )
    .map_err(io_err)?;

    // A session bundles the config, the provider and the state store.
    let config = Config {
        runtime_command: "sh {script}".to_string(),
        state_path: scratch.path().join("state.json"),
        ..Config::default()
    };
    let provider = LocalProvider::open(
        &scratch.path().join("sandbox"),
        &config.remote_user,
        &config.remote_home,
    )?;
    let store = StateStore::open(&config)?;
    let session = Session::from_parts(config, Box::new(provider), store);

    // Step 1: gather. One instance, default snapshot, default type.
    let gathered = session.gather_resource(
        "search_instance",
        1,
        None,
        &EbsSpec::Default,
        "single instance walkthrough",
    )?;
    println!(
        "gathered `{}`: {} instance of {}, master {}  ({:.3} s)",
        gathered.record.name,
        gathered.record.size,
        gathered.record.instance_type,
        gathered.record.master,
        gathered.seconds,
    );

    // Step 2: submit. RunResults/ never leaves the host.
    let job = rbc::job::validate_job_dir(&job_root)?;
    let submitted = session.submit_job("search_instance", &job, SubmitTarget::Master)?;
    let (instance, stats) = &submitted.per_instance[0];
    println!(
        "submitted `{}` to {instance}: {} files, {} bytes  ({:.3} s)",
        job.name, stats.files_copied, stats.bytes_copied, submitted.seconds,
    );

    // Submitting again moves nothing: the sync is incremental.
    let again = session.submit_job("search_instance", &job, SubmitTarget::Master)?;
    println!(
        "resubmitted unchanged: {} files copied",
        again.per_instance[0].1.files_copied
    );

    // Step 3: execute under the resource lock, as a named run.
    let run = session.execute_job("search_instance", &job, "search.R", "Run1_walkthrough")?;
    println!(
        "executed {}: {} (exit {})",
        run.script,
        run.status,
        run.exit_code.unwrap_or(-1)
    );

    // Step 4: retrieve into RunResults/<run-name>/ on the host.
    let report = session.get_results(
        "search_instance",
        &job,
        "Run1_walkthrough",
        RetrieveSource::Master,
    )?;
    println!("retrieved into {}", report.destination.display());
    let summary = fs::read_to_string(report.destination.join("summary.txt")).map_err(io_err)?;
    print!("{summary}");

    // Step 5: terminate and release storage; the ledger closes.
    let released = session.terminate_resource("search_instance", true)?;
    println!(
        "terminated: {} instance(s), {} volume(s) deleted",
        released.instances_terminated, released.volumes_deleted
    );
    println!(
        "open billing entries: {}",
        session.provider.ledger()?.open_entries().count()
    );
    Ok(())
}

fn io_err(e: io::Error) -> rbc::Error {
    rbc::Error::io("example scaffolding", e)
}
