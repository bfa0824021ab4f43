//! Compile and run a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/superdiff.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["sd_config_parse", "sd_run", "sd_last_error_message", "SD_STATUS_VALIDATION", "typedef struct SdConfig SdConfig"] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    // the test binary sits next to the freshly built library in deps/
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().join("libsuperdiff_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler unavailable");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "superdiff.h"
int main(void) {
    SdConfig *cfg = NULL;
    if (sd_config_parse("{\"kind\":\"tail\",\"seed\":1,\"zzz\":0}", &cfg) != SD_STATUS_VALIDATION) return 1;
    if (cfg != NULL || strstr(sd_last_error_message(), "zzz") == NULL) return 2;
    if (sd_config_template("tail", &cfg) != SD_STATUS_OK) return 3;
    char *digest = NULL;
    if (sd_config_digest(cfg, &digest) != SD_STATUS_OK || strlen(digest) != 64) return 4;
    double b = 0.0;
    if (sd_poisson_tail_bound(10.0, 2.0, &b) != SD_STATUS_OK || sd_poisson_tail_exact(10.0, 2.0) > b) return 5;
    sd_string_free(digest);
    sd_config_free(cfg);
    printf("ok %s\n", sd_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("smoke");
    let st = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(st.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke exited {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
