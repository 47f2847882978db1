// Compiles and runs a C program against the generated header and the
// static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "topics_ffi.h"

int main(void) {
    TopicsCorpus *corpus = NULL;
    if (topics_corpus_synth(3, 20, 60, 30, 0.1, 0.05, 7, &corpus) != TOPICS_STATUS_OK) return 10;
    TopicsScvb0Config cfg = topics_scvb0_config_default(3);
    cfg.minibatch_docs = 10;
    TopicsModel *model = NULL;
    if (topics_scvb0_train(corpus, &cfg, &model) != TOPICS_STATUS_OK) return 11;
    double phi[60];
    if (topics_model_phi(model, phi, 60) != TOPICS_STATUS_OK) return 12;
    double ll = 0.0;
    if (topics_heldout_loglik(model, corpus, 0, &ll) != TOPICS_STATUS_OK) return 13;
    if (topics_validate_schedule(1.0, 10.0, 1.5) != TOPICS_STATUS_INVALID_ARGUMENT) return 14;
    printf("%s\n", topics_last_error());
    topics_model_free(model);
    topics_corpus_free(corpus);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libtopics_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("Σρ_t finite"));
}
