//! The generated header must compile as C and as C++.

use std::process::Command;

const PROGRAM: &str = r#"
#include "nifm.h"
int main(void) {
    NifmField *f = NULL;
    if (nifm_field_double_gyre(11, &f) != NIFM_STATUS_OK) return 1;
    double x[2] = {0.5, 0.5}, t[1] = {0.0}, tau[1] = {1.0}, out[2];
    NifmStatus st = nifm_field_integrate(f, 0.0, x, t, tau, 1, out);
    char msg[64];
    nifm_last_error(msg, sizeof msg);
    nifm_field_free(f);
    return st == NIFM_STATUS_OK ? 0 : 1;
}
"#;

fn syntax_check(compiler: &str, lang: &str) {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = match Command::new(compiler)
        .args(["-x", lang, "-fsyntax-only", "-Wall", "-Werror", "-I", include])
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("{compiler} not available; skipping");
            return;
        }
    };
    assert!(status.success(), "{compiler} rejected the header");
}

#[test]
fn header_compiles_as_c() {
    syntax_check("cc", "c");
}

#[test]
fn header_compiles_as_cpp() {
    syntax_check("c++", "c++");
}
