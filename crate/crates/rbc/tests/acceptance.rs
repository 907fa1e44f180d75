//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{assert_exit, make_job, oracle_plan, tree_contents, write_script, CliEnv};
use rbc::error::Error;
use rbc::executor::{EbsSpec, SubmitTarget};
use rbc::provider::{
    InstanceId, InstanceState, LocalProvider, Provider, SnapshotId, VolumeId, VolumePlan,
    DEFAULT_SNAPSHOT_ID,
};
use rbc::state::{ResourceState, RunStatus};
use rbc::sync::{build_manifest, diff};

fn pass(number: u32, name: &str) {
    println!("ACCEPTANCE {number} ({name}): PASS");
}

/// Criterion 1: the five-command single-instance lifecycle completes with
/// exit 0 at every step and the retrieved files are byte-identical to what
/// the script wrote remotely. Expected runtime < 5 s.
#[test]
fn acceptance_01_end_to_end_lifecycle() {
    let started = Instant::now();
    let env = CliEnv::new();
    let job = make_job(env.root.path(), "BSGenome");
    write_script(
        &job,
        "GenomeSearching.R",
        "printf 'chrI\\t5942496\\t5942511\\t-\\tpattern17\\n' > Results/ce2dict0_ana1.txt\n\
         printf 'chrI\\t13745040\\t13745054\\t+\\tpattern04\\n' > Results/ce2dict0cw15_ana2.txt\n",
    );

    let out = env.alias_in(
        &job,
        "RBC_GatherResource",
        &["-rname", "BSgenome_instance", "-rsize", "1", "-desc", "For_Genome_Searching"],
    );
    assert_exit(&out, 0, "step 1: gather");
    let out = env.alias_in(&job, "RBC_SubmitJob", &["-rname", "BSgenome_instance"]);
    assert_exit(&out, 0, "step 2: submit");
    let out = env.alias_in(
        &job,
        "RBC_ExecuteJob",
        &[
            "-rname",
            "BSgenome_instance",
            "-rscript",
            "GenomeSearching.R",
            "-runname",
            "Run1_on_BSgenome_instance",
        ],
    );
    assert_exit(&out, 0, "step 3: execute");
    let out = env.alias_in(
        &job,
        "RBC_GetResults",
        &["-rname", "BSgenome_instance", "-runname", "Run1_on_BSgenome_instance"],
    );
    assert_exit(&out, 0, "step 4: retrieve");

    // Before terminating, compare what the script wrote remotely with what
    // arrived on the host, byte for byte.
    let session = env.session();
    let record = session.store.lookup_resource("BSgenome_instance").unwrap();
    let remote_results = session
        .provider
        .open_remote_tree(&record.master)
        .unwrap()
        .join("BSGenome/.runs/Run1_on_BSgenome_instance/Results");
    let remote = tree_contents(&remote_results, &[]);
    assert_eq!(remote.len(), 2, "script wrote two output files");
    let host = tree_contents(
        &job.join("RunResults/Run1_on_BSgenome_instance"),
        &["timings.tsv"],
    );
    assert_eq!(remote, host, "retrieved files differ from remote output");

    let out = env.alias_in(
        &job,
        "RBC_TerminateResource",
        &["-rname", "BSgenome_instance", "-deletevol"],
    );
    assert_exit(&out, 0, "step 5: terminate");

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(5),
        "lifecycle took {elapsed:?}, expected < 5 s"
    );
    pass(1, "end-to-end lifecycle");
}

/// Criterion 2: the eight-instance cluster lifecycle — 8 instances with one
/// master, identical remote trees after an all-nodes submit, disjoint
/// namespaced all-nodes retrieval, and a clean release. Runtime < 10 s.
#[test]
fn acceptance_02_cluster_lifecycle() {
    let started = Instant::now();
    let env = CliEnv::new();
    let job = make_job(env.root.path(), "LVSmiRNA");
    fs::write(job.join("Comparison_Array.txt"), b"miRNA expression data\n").unwrap();
    write_script(
        &job,
        "LVSmiRNA.R",
        "while read worker; do\n\
           mkdir -p \"$worker/Results\"\n\
           echo \"normalised on $(basename $(dirname $(dirname $(dirname $worker))))\" \
             > \"$worker/Results/part.txt\"\n\
         done < \"$RBC_HOSTFILE\"\n\
         echo 'RA-plot + box plot' > Results/part.txt\n",
    );

    let out = env.alias_in(
        &job,
        "RBC_GatherResource",
        &["-rname", "LVSmiRNA_cluster", "-rsize", "8", "-desc", "For_LVS_miRNA"],
    );
    assert_exit(&out, 0, "gather rsize 8");

    // Exactly 8 instances, one master.
    let session = env.session();
    let record = session.store.lookup_resource("LVSmiRNA_cluster").unwrap();
    assert_eq!(record.size, 8);
    assert_eq!(record.instances.len(), 8);
    assert!(record.instances.contains(&record.master));
    let running = session
        .provider
        .instances()
        .unwrap()
        .into_iter()
        .filter(|h| h.state == InstanceState::Running)
        .count();
    assert_eq!(running, 8);

    let out = env.alias_in(
        &job,
        "RBC_SubmitJob",
        &["-rname", "LVSmiRNA_cluster", "-toallnodes"],
    );
    assert_exit(&out, 0, "submit -toallnodes");

    // 8 byte-identical remote job trees.
    let mut tree_digests = BTreeSet::new();
    for instance in &record.instances {
        let tree = session.provider.open_remote_tree(instance).unwrap();
        let manifest = build_manifest(&tree.join("LVSmiRNA"), &[]).unwrap();
        assert!(!manifest.entries.is_empty());
        let digest: Vec<(String, String)> = manifest
            .entries
            .into_iter()
            .map(|(p, m)| (p, m.sha256))
            .collect();
        tree_digests.insert(digest);
    }
    assert_eq!(tree_digests.len(), 1, "remote trees differ across the cluster");

    let out = env.alias_in(
        &job,
        "RBC_ExecuteJob",
        &[
            "-rname",
            "LVSmiRNA_cluster",
            "-rscript",
            "LVSmiRNA.R",
            "-runname",
            "Run2_on_LVSmiRNA_cluster",
        ],
    );
    assert_exit(&out, 0, "execute on cluster");

    let out = env.alias_in(
        &job,
        "RBC_GetResults",
        &["-rname", "LVSmiRNA_cluster", "-runname", "Run2_on_LVSmiRNA_cluster", "-fromall"],
    );
    assert_exit(&out, 0, "results -fromall");

    // 8 disjoint namespaced result sets, one per instance id (plus the
    // timings file written at retrieval, which is not a namespace).
    let dest = job.join("RunResults/Run2_on_LVSmiRNA_cluster");
    let subdirs: BTreeSet<String> = fs::read_dir(&dest)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    let expected: BTreeSet<String> = record
        .instances
        .iter()
        .map(|i| i.as_str().to_string())
        .collect();
    assert_eq!(subdirs, expected, "one result set per instance");
    let mut all_paths = BTreeSet::new();
    for sub in &subdirs {
        let files = tree_contents(&dest.join(sub), &[]);
        assert!(!files.is_empty(), "instance {sub} contributed no results");
        for path in files.keys() {
            assert!(
                all_paths.insert(format!("{sub}/{path}")),
                "path collision across instances"
            );
        }
    }

    let out = env.alias_in(
        &job,
        "RBC_TerminateResource",
        &["-rname", "LVSmiRNA_cluster", "-deletevol"],
    );
    assert_exit(&out, 0, "terminate -deletevol");

    // 0 running instances, 0 undeleted volumes, 0 open ledger entries.
    let instances = session.provider.instances().unwrap();
    assert!(instances.iter().all(|h| h.state == InstanceState::Terminated));
    assert!(session.provider.volumes().unwrap().iter().all(|v| v.deleted));
    assert_eq!(session.provider.ledger().unwrap().open_entries().count(), 0);

    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "cluster lifecycle took {elapsed:?}, expected < 10 s"
    );
    pass(2, "cluster lifecycle");
}

/// Criterion 3: incremental sync — N, then 0, then exactly 1 file; and the
/// diff agrees with a brute-force byte-comparison oracle on >= 100
/// randomized tree pairs.
#[test]
fn acceptance_03_incremental_sync() {
    let env = CliEnv::new();
    let session = env.session();
    let job_root = make_job(env.root.path(), "NFiles");
    write_script(&job_root, "a.R", "true\n");
    for i in 0..11 {
        fs::write(job_root.join(format!("data{i}.txt")), format!("payload {i}")).unwrap();
    }
    let job = rbc::job::validate_job_dir(&job_root).unwrap();
    let n: u64 = 12; // one script + eleven data files

    session
        .gather_resource("r", 1, None, &EbsSpec::Default, "")
        .unwrap();
    let first = session.submit_job("r", &job, SubmitTarget::Master).unwrap();
    assert_eq!(first.per_instance[0].1.files_copied, n);

    let second = session.submit_job("r", &job, SubmitTarget::Master).unwrap();
    assert_eq!(second.per_instance[0].1.files_copied, 0);
    assert_eq!(second.per_instance[0].1.bytes_copied, 0);

    fs::write(job_root.join("data4.txt"), b"touched content").unwrap();
    let third = session.submit_job("r", &job, SubmitTarget::Master).unwrap();
    assert_eq!(third.per_instance[0].1.files_copied, 1);

    // Randomized diff-vs-oracle: 120 tree pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_cafe);
    let scratch = env.root.path().join("scratch");
    for case in 0..120 {
        let src = scratch.join(format!("src{case}"));
        let dst = scratch.join(format!("dst{case}"));
        let src_tree = random_tree(&mut rng);
        let dst_tree = perturb_tree(&mut rng, &src_tree);
        materialize(&src, &src_tree);
        materialize(&dst, &dst_tree);

        let plan = diff(
            &build_manifest(&src, &[]).unwrap(),
            &build_manifest(&dst, &[]).unwrap(),
        );
        let (expect_copy, expect_delete) = oracle_plan(&src, &dst, &[]);
        assert_eq!(plan.to_copy, expect_copy, "case {case}: copy set");
        assert_eq!(plan.to_delete, expect_delete, "case {case}: delete set");
    }
    pass(3, "incremental sync vs oracle, 120 random cases");
}

/// Criterion 4: after any sequence of submits, no path under `RunResults/`
/// exists in any remote tree.
#[test]
fn acceptance_04_exclusion_rule() {
    let env = CliEnv::new();
    let session = env.session();
    let job_root = make_job(env.root.path(), "Leaky");
    write_script(&job_root, "a.R", "true\n");
    let job = rbc::job::validate_job_dir(&job_root).unwrap();
    session
        .gather_resource("r", 3, None, &EbsSpec::Default, "")
        .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0xec51);
    for round in 0..15 {
        // Mutate the host tree, always planting fresh RunResults content.
        fs::write(
            job_root.join(format!("gen{}.txt", rng.gen_range(0..6))),
            format!("round {round}"),
        )
        .unwrap();
        let run_results = job_root.join("RunResults").join(format!("old{round}"));
        fs::create_dir_all(&run_results).unwrap();
        fs::write(run_results.join("stale.txt"), b"must stay on the host").unwrap();
        if rng.gen_bool(0.3) {
            let victim = format!("gen{}.txt", rng.gen_range(0..6));
            let _ = fs::remove_file(job_root.join(victim));
        }

        let target = if rng.gen_bool(0.5) {
            SubmitTarget::Master
        } else {
            SubmitTarget::AllNodes
        };
        session.submit_job("r", &job, target).unwrap();
    }

    let mut remote_files = 0;
    for handle in session.provider.instances().unwrap() {
        for entry in walkdir::WalkDir::new(&handle.sandbox_root).min_depth(1) {
            let entry = entry.unwrap();
            remote_files += 1;
            let leaked = entry
                .path()
                .components()
                .any(|c| c.as_os_str() == "RunResults");
            assert!(!leaked, "RunResults leaked to {}", entry.path().display());
        }
    }
    assert!(remote_files > 0, "remote trees should not be empty");
    pass(4, "RunResults exclusion under repeated submits");
}

/// Criterion 5: the resource lock. A second execute fails with ResourceBusy
/// and does not advance the store version; under a 10-way concurrent hammer
/// exactly one run wins and at most one run is ever `running`.
#[test]
fn acceptance_05_resource_lock() {
    let env = CliEnv::new();
    let session = env.session();
    let job_root = make_job(env.root.path(), "Slow");
    write_script(&job_root, "slow.R", "sleep 1\n");
    let job = rbc::job::validate_job_dir(&job_root).unwrap();
    session
        .gather_resource("r", 1, None, &EbsSpec::Default, "")
        .unwrap();
    session.submit_job("r", &job, SubmitTarget::Master).unwrap();

    // Sequential check: busy refusal leaves the version untouched.
    std::thread::scope(|scope| {
        let first = scope.spawn(|| session.execute_job("r", &job, "slow.R", "run_a"));
        // Wait until the first run holds the lock.
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            let record = session.store.lookup_resource("r").unwrap();
            if record.state == ResourceState::Busy {
                break;
            }
            assert!(Instant::now() < deadline, "run_a never started");
            std::thread::sleep(Duration::from_millis(5));
        }
        // The payload sleeps now; no mutations until it finishes.
        let version_before = session.store.version().unwrap();
        let err = session.execute_job("r", &job, "run_b_attempt.R", "run_b");
        assert!(matches!(err, Err(Error::ScriptNotFound(_))));
        let err = session.execute_job("r", &job, "slow.R", "run_b").unwrap_err();
        assert!(matches!(err, Error::ResourceBusy { .. }), "got {err}");
        assert_eq!(
            session.store.version().unwrap(),
            version_before,
            "refused execute must not mutate the store"
        );
        first.join().unwrap().unwrap();
    });

    // Hammer: ten concurrent executes, one winner.
    let job_root2 = make_job(env.root.path(), "Hammer");
    write_script(&job_root2, "fast.R", "sleep 0.75\n");
    let job2 = rbc::job::validate_job_dir(&job_root2).unwrap();
    session
        .gather_resource("h", 1, None, &EbsSpec::Default, "")
        .unwrap();
    session.submit_job("h", &job2, SubmitTarget::Master).unwrap();

    let outcomes = std::thread::scope(|scope| {
        let watcher = scope.spawn(|| {
            // Sample concurrently: never more than one running run.
            let deadline = Instant::now() + Duration::from_secs(5);
            let mut max_running = 0usize;
            while Instant::now() < deadline {
                let doc = session.store.snapshot().unwrap();
                let running = doc
                    .runs
                    .iter()
                    .filter(|r| r.resource == "h" && r.status == RunStatus::Running)
                    .count();
                max_running = max_running.max(running);
                if doc
                    .runs
                    .iter()
                    .any(|r| r.resource == "h" && r.status == RunStatus::Succeeded)
                {
                    break;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            max_running
        });
        let workers: Vec<_> = (0..10)
            .map(|i| {
                let job2 = &job2;
                let session = &session;
                scope.spawn(move || session.execute_job("h", job2, "fast.R", &format!("run{i}")))
            })
            .collect();
        let outcomes: Vec<_> = workers.into_iter().map(|w| w.join().unwrap()).collect();
        let max_running = watcher.join().unwrap();
        assert!(max_running <= 1, "saw {max_running} concurrent running runs");
        outcomes
    });

    let winners = outcomes.iter().filter(|o| o.is_ok()).count();
    let busy = outcomes
        .iter()
        .filter(|o| matches!(o, Err(Error::ResourceBusy { .. })))
        .count();
    assert_eq!(winners, 1, "exactly one execute should win");
    assert_eq!(busy, 9, "the other nine should see ResourceBusy");
    pass(5, "resource lock under contention");
}

/// Criterion 6: flag contracts across the five commands.
#[test]
fn acceptance_06_flag_contracts() {
    // -h / -v have no side effects on a fresh host.
    let env = CliEnv::new();
    for sub in ["gather", "submit", "execute", "results", "terminate"] {
        assert_exit(&env.rbc(&[sub, "-h"]), 0, "per-command -h");
        assert_exit(&env.rbc(&[sub, "-v"]), 0, "per-command -v");
    }
    assert!(!env.state_path().exists(), "-h/-v must not create state");
    assert!(!env.sandbox_path().exists(), "-h/-v must not create the sandbox");

    // -ebsvol with -snap is a usage error.
    let out = env.rbc(&["gather", "-rname", "x", "-ebsvol", "vol-1", "-snap", "snap-1"]);
    assert_exit(&out, 2, "-ebsvol and -snap together");

    // Missing -runname on execute is a usage error.
    let out = env.rbc(&["execute", "-rname", "x", "-rscript", "a.R"]);
    assert_exit(&out, 2, "missing -runname");

    // Duplicate -rname on gather is an operational failure naming the
    // conflict.
    assert_exit(&env.rbc(&["gather", "-rname", "dup"]), 0, "first gather");
    let out = env.rbc(&["gather", "-rname", "dup"]);
    assert_exit(&out, 1, "duplicate gather");
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("already in use"),
        "stderr should name the duplicate"
    );

    // With state present, -h/-v still change nothing.
    let version = env.store_version();
    for sub in ["gather", "submit", "execute", "results", "terminate"] {
        assert_exit(&env.rbc(&[sub, "-h"]), 0, "-h with existing state");
        assert_exit(&env.rbc(&[sub, "-v"]), 0, "-v with existing state");
    }
    assert_eq!(env.store_version(), version, "-h/-v must not bump the version");
    pass(6, "flag contracts");
}

/// Criterion 7: simulator invariants under a model-based random workload of
/// more than 1000 operations: snapshot immutability, billing monotonicity
/// then constancy, idempotent double-terminate, ledger consistency.
#[test]
fn acceptance_07_simulator_model() {
    let dir = tempfile::tempdir().unwrap();
    let provider = LocalProvider::open(&dir.path().join("sandbox"), "root", "/home/root").unwrap();
    let template_root = dir.path().join("templates");
    fs::create_dir_all(&template_root).unwrap();

    // The model: what the simulator must be doing.
    #[derive(Default)]
    struct Model {
        snapshots: BTreeMap<String, BTreeMap<String, Vec<u8>>>,
        running: BTreeSet<String>,
        terminated: BTreeSet<String>,
        frozen_accrual: BTreeMap<String, f64>,
        last_accrual: BTreeMap<String, f64>,
        live_volumes: BTreeSet<String>,
        deleted_volumes: BTreeSet<String>,
        attached_to_running: BTreeMap<String, String>,
    }
    let mut model = Model::default();
    model
        .snapshots
        .insert(DEFAULT_SNAPSHOT_ID.to_string(), BTreeMap::new());

    let mut rng = ChaCha8Rng::seed_from_u64(0x0bada55);
    let mut template_counter = 0usize;
    let pick = |rng: &mut ChaCha8Rng, set: &BTreeSet<String>| -> Option<String> {
        if set.is_empty() {
            None
        } else {
            set.iter().nth(rng.gen_range(0..set.len())).cloned()
        }
    };

    const OPS: usize = 1200;
    for op in 0..OPS {
        let choice = rng.gen_range(0..100);
        match choice {
            // Register a snapshot from a fresh template, then mutate the
            // template to prove the snapshot froze.
            0..=7 => {
                template_counter += 1;
                let template = template_root.join(format!("t{template_counter}"));
                fs::create_dir_all(&template).unwrap();
                let mut contents = BTreeMap::new();
                for f in 0..rng.gen_range(0..4) {
                    let name = format!("f{f}.bin");
                    let body: Vec<u8> = (0..rng.gen_range(0..32)).map(|_| rng.gen()).collect();
                    fs::write(template.join(&name), &body).unwrap();
                    contents.insert(name, body);
                }
                let id = provider.register_snapshot(&template).unwrap();
                fs::write(template.join("mutated-later.txt"), b"not in the snapshot").unwrap();
                model.snapshots.insert(id.as_str().to_string(), contents);
            }
            // Create a volume; verify its contents equal the frozen
            // snapshot contents.
            8..=24 => {
                if rng.gen_bool(0.15) {
                    let err = provider
                        .create_volume(&SnapshotId("snap-bogus".into()))
                        .unwrap_err();
                    assert!(matches!(err, Error::SnapshotNotFound(_)), "op {op}");
                } else {
                    let keys: Vec<&String> = model.snapshots.keys().collect();
                    let id = keys[rng.gen_range(0..keys.len())].clone();
                    let volume = provider.create_volume(&SnapshotId(id.clone())).unwrap();
                    let on_disk = tree_contents(
                        &dir.path().join("sandbox/volumes").join(volume.id.as_str()),
                        &[],
                    );
                    assert_eq!(on_disk, model.snapshots[&id], "op {op}: snapshot {id} not frozen");
                    model.live_volumes.insert(volume.id.as_str().to_string());
                }
            }
            // Provision 1..=3 instances.
            25..=36 => {
                if model.running.len() > 12 {
                    continue; // keep the fleet bounded
                }
                if rng.gen_bool(0.1) {
                    let err = provider
                        .provision(1, "m9.colossal", &VolumePlan::FromSnapshot(SnapshotId(DEFAULT_SNAPSHOT_ID.into())))
                        .unwrap_err();
                    assert!(matches!(err, Error::UnknownInstanceType(_)), "op {op}");
                    continue;
                }
                let count = rng.gen_range(1..=3);
                let types = ["m1.small", "m1.xlarge", "m2.4xlarge"];
                let keys: Vec<&String> = model.snapshots.keys().collect();
                let snap = keys[rng.gen_range(0..keys.len())].clone();
                let handles = provider
                    .provision(count, types[rng.gen_range(0..3)], &VolumePlan::FromSnapshot(SnapshotId(snap)))
                    .unwrap();
                assert_eq!(handles.len(), count, "op {op}");
                for h in handles {
                    assert_eq!(h.state, InstanceState::Running);
                    assert_eq!(h.history.first().map(|(s, _)| *s), Some(InstanceState::Pending));
                    if let Some(v) = provider
                        .volumes()
                        .unwrap()
                        .into_iter()
                        .find(|v| v.attached_to.as_ref() == Some(&h.id))
                    {
                        model.live_volumes.insert(v.id.as_str().to_string());
                        model
                            .attached_to_running
                            .insert(v.id.as_str().to_string(), h.id.as_str().to_string());
                    }
                    model.running.insert(h.id.as_str().to_string());
                }
            }
            // Exec on a random known instance.
            37..=44 => {
                let all: BTreeSet<String> =
                    model.running.union(&model.terminated).cloned().collect();
                let Some(id) = pick(&mut rng, &all) else { continue };
                let fails = rng.gen_bool(0.3);
                let cmd = vec!["sh".to_string(), "-c".to_string(), if fails { "exit 1" } else { "true" }.to_string()];
                let result = provider.exec_command(
                    &InstanceId(id.clone()),
                    &cmd,
                    &BTreeMap::new(),
                    "/home/root",
                    "/home/root/logs",
                );
                if model.running.contains(&id) {
                    let exec = result.unwrap();
                    assert_eq!(exec.exit_code, if fails { 1 } else { 0 }, "op {op}");
                } else {
                    assert!(matches!(result.unwrap_err(), Error::InstanceNotRunning(_)), "op {op}");
                }
            }
            // Terminate: running -> closes billing; repeated -> no-op;
            // unknown -> error.
            45..=69 => {
                if rng.gen_bool(0.08) {
                    let err = provider.terminate(&InstanceId("i-nope".into())).unwrap_err();
                    assert!(matches!(err, Error::InstanceNotFound(_)), "op {op}");
                    continue;
                }
                let all: BTreeSet<String> =
                    model.running.union(&model.terminated).cloned().collect();
                let Some(id) = pick(&mut rng, &all) else { continue };
                let was_terminated = model.terminated.contains(&id);
                let accrued_before = provider.accrued_seconds(&InstanceId(id.clone())).unwrap();
                provider.terminate(&InstanceId(id.clone())).unwrap();
                let accrued_after = provider.accrued_seconds(&InstanceId(id.clone())).unwrap();
                if was_terminated {
                    // Idempotent: accrual already frozen.
                    assert_eq!(accrued_after, model.frozen_accrual[&id], "op {op}");
                } else {
                    assert!(accrued_after >= accrued_before, "op {op}");
                    model.running.remove(&id);
                    model.terminated.insert(id.clone());
                    model.frozen_accrual.insert(id.clone(), accrued_after);
                    model
                        .attached_to_running
                        .retain(|_, owner| owner != &id);
                }
            }
            // Delete a volume.
            70..=82 => {
                if rng.gen_bool(0.08) {
                    let err = provider.delete_volume(&VolumeId("vol-nope".into())).unwrap_err();
                    assert!(matches!(err, Error::VolumeNotFound(_)), "op {op}");
                    continue;
                }
                let all: BTreeSet<String> = model
                    .live_volumes
                    .union(&model.deleted_volumes)
                    .cloned()
                    .collect();
                let Some(id) = pick(&mut rng, &all) else { continue };
                let result = provider.delete_volume(&VolumeId(id.clone()));
                if model.deleted_volumes.contains(&id) {
                    assert!(matches!(result.unwrap_err(), Error::VolumeDeleted(_)), "op {op}");
                } else if model.attached_to_running.contains_key(&id) {
                    assert!(matches!(result.unwrap_err(), Error::VolumeInUse(_)), "op {op}");
                } else {
                    result.unwrap();
                    model.live_volumes.remove(&id);
                    model.deleted_volumes.insert(id);
                }
            }
            // Accrual checks: non-decreasing while running, frozen after
            // terminate.
            83..=94 => {
                if let Some(id) = pick(&mut rng, &model.running) {
                    let now = provider.accrued_seconds(&InstanceId(id.clone())).unwrap();
                    if let Some(&last) = model.last_accrual.get(&id) {
                        assert!(now >= last, "op {op}: accrual decreased for {id}");
                    }
                    model.last_accrual.insert(id, now);
                }
                if let Some(id) = pick(&mut rng, &model.terminated) {
                    let now = provider.accrued_seconds(&InstanceId(id.clone())).unwrap();
                    assert_eq!(now, model.frozen_accrual[&id], "op {op}: accrual moved after terminate");
                }
                assert!(matches!(
                    provider.accrued_seconds(&InstanceId("i-nope".into())).unwrap_err(),
                    Error::InstanceNotFound(_)
                ));
            }
            // Global ledger audit.
            _ => {
                let ledger = provider.ledger().unwrap();
                let open: BTreeSet<String> = ledger
                    .open_entries()
                    .map(|e| e.instance.as_str().to_string())
                    .collect();
                assert_eq!(open, model.running, "op {op}: open entries != running set");
            }
        }
    }

    // Drain: terminate everything; the ledger must close completely.
    for id in model.running.clone() {
        provider.terminate(&InstanceId(id)).unwrap();
    }
    assert_eq!(provider.ledger().unwrap().open_entries().count(), 0);
    pass(7, &format!("simulator model, {OPS} randomized operations"));
}

/// Criterion 8: a full lifecycle produces `timings.tsv` with exactly the
/// five phase rows, in lifecycle order, all durations >= 0.
#[test]
fn acceptance_08_timing_report() {
    let env = CliEnv::new();
    let job = make_job(env.root.path(), "Timed");
    write_script(&job, "a.R", "echo done > Results/done.txt\n");

    assert_exit(&env.rbc_in(&job, &["gather", "-rname", "t"]), 0, "gather");
    assert_exit(&env.rbc_in(&job, &["submit", "-rname", "t"]), 0, "submit");
    assert_exit(
        &env.rbc_in(&job, &["execute", "-rname", "t", "-rscript", "a.R", "-runname", "run1"]),
        0,
        "execute",
    );
    assert_exit(
        &env.rbc_in(&job, &["results", "-rname", "t", "-runname", "run1"]),
        0,
        "results",
    );
    assert_exit(&env.rbc_in(&job, &["terminate", "-rname", "t", "-deletevol"]), 0, "terminate");

    let tsv = fs::read_to_string(job.join("RunResults/run1/timings.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5, "expected five phase rows:\n{tsv}");
    let phases: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(
        phases,
        ["gather", "submit", "execute", "retrieve", "terminate"],
        "phases out of lifecycle order"
    );
    for row in &rows {
        assert_eq!(row.len(), 4, "malformed row {row:?}");
        assert_eq!(row[1], "t");
        let seconds: f64 = row[3].parse().expect("numeric duration");
        assert!(seconds >= 0.0, "negative duration in {row:?}");
    }
    pass(8, "timing report");
}

// --- helpers for the randomized sync cases ------------------------------

const ORACLE_DIRS: &[&str] = &["d1", "d2", "deep", "deeper"];
const ORACLE_FILES: &[&str] = &["a.R", "data.txt", "out.bin", "notes", "x"];

fn random_tree(rng: &mut ChaCha8Rng) -> BTreeMap<String, Vec<u8>> {
    let mut tree = BTreeMap::new();
    for _ in 0..rng.gen_range(0..14) {
        let depth = rng.gen_range(0..3);
        let mut parts: Vec<&str> = (0..depth)
            .map(|_| ORACLE_DIRS[rng.gen_range(0..ORACLE_DIRS.len())])
            .collect();
        parts.push(ORACLE_FILES[rng.gen_range(0..ORACLE_FILES.len())]);
        let content: Vec<u8> = (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect();
        tree.insert(parts.join("/"), content);
    }
    tree
}

/// Derive a destination tree from a source: keep some files unchanged,
/// mutate some, drop some, and add extras — so the oracle comparison
/// exercises every class of difference.
fn perturb_tree(
    rng: &mut ChaCha8Rng,
    src: &BTreeMap<String, Vec<u8>>,
) -> BTreeMap<String, Vec<u8>> {
    let mut dst = BTreeMap::new();
    for (path, content) in src {
        match rng.gen_range(0..3) {
            0 => {
                dst.insert(path.clone(), content.clone()); // unchanged
            }
            1 => {
                let mut mutated = content.clone();
                mutated.push(rng.gen()); // content differs
                dst.insert(path.clone(), mutated);
            }
            _ => {} // missing at destination
        }
    }
    for (path, content) in random_tree(rng) {
        dst.entry(path).or_insert(content); // extras to delete
    }
    dst
}

fn materialize(root: &Path, tree: &BTreeMap<String, Vec<u8>>) {
    fs::create_dir_all(root).unwrap();
    for (rel, content) in tree {
        let path = root.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, content).unwrap();
    }
}
