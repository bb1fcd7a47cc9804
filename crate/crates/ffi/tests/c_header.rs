//! Compiles a small C program against the public header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

use deepsignal::dqn::network::{NetworkSpec, QNetwork};
use deepsignal::dqn::Checkpoint;

fn staticlib() -> Option<PathBuf> {
    // target/<profile>/deps/<test-binary>
    // A test-only build leaves the archive in deps/; a full build also copies
    // it up one level.
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps, deps.parent()?].iter().map(|d| d.join("libdeepsignal_ffi.a")).find(|p| p.exists())
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = staticlib() else {
        panic!("static library not found next to the test binary");
    };
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("c_program");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c_program.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "compiling the C program failed");

    let ck = dir.path().join("ck.json");
    Checkpoint::new(&QNetwork::initialized(NetworkSpec::small(), 2).unwrap(), 0, 0).save(&ck).unwrap();
    let out = Command::new(&exe).arg(&ck).output().unwrap();
    assert!(out.status.success(), "C program failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("t=600 "), "{stdout}");
}
