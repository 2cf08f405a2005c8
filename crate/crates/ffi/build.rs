use std::env;
use std::fs;
use std::path::PathBuf;

// Regenerates include/cmrl.h from the exported surface. The committed header
// is refreshed only when its contents change, so consumers without cargo can
// keep using the checked-in copy.
fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("cmrl.h");

    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml"))
        .expect("cbindgen.toml is readable");
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&out);
            let header = crate_dir.join("include").join("cmrl.h");
            let fresh = fs::read(&out).unwrap_or_default();
            if fs::read(&header).ok().as_deref() != Some(fresh.as_slice()) {
                // Best effort; a read-only checkout still builds.
                let _ = fs::create_dir_all(header.parent().unwrap());
                let _ = fs::write(&header, &fresh);
            }
        }
        Err(e) => println!("cargo:warning=cbindgen failed: {e}"),
    }
}
