use std::process::Command;

#[test]
fn header_compiles_as_strict_c99() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let out = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-pedantic", "-fsyntax-only"])
        .arg(format!("-I{dir}/include"))
        .arg(format!("{dir}/examples/smoke.c"))
        .output()
    {
        Ok(o) => o,
        Err(e) => {
            eprintln!("skipping: no C compiler ({e})");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
