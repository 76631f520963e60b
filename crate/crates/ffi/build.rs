use std::path::Path;

fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let dir = Path::new(&crate_dir);
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let config = cbindgen::Config::from_file(dir.join("cbindgen.toml")).expect("cbindgen.toml");
    match cbindgen::Builder::new().with_crate(dir).with_config(config).generate() {
        Ok(bindings) => {
            bindings.write_to_file(dir.join("include/eshdr.h"));
        }
        // keep building with the checked-in header rather than fail the crate
        Err(e) => println!("cargo:warning=header not regenerated: {e}"),
    }
}
