// Links the reference LAPACK/BLAS archives. QSWNA_LAPACK_DIR / QSWNA_BLAS_DIR override the
// Debian/Ubuntu locations.
fn main() {
    println!("cargo:rerun-if-env-changed=QSWNA_LAPACK_DIR");
    println!("cargo:rerun-if-env-changed=QSWNA_BLAS_DIR");
    let lapack = std::env::var("QSWNA_LAPACK_DIR").unwrap_or_else(|_| "/usr/lib/x86_64-linux-gnu/lapack".into());
    let blas = std::env::var("QSWNA_BLAS_DIR").unwrap_or_else(|_| "/usr/lib/x86_64-linux-gnu/blas".into());
    println!("cargo:rustc-link-search=native={lapack}");
    println!("cargo:rustc-link-search=native={blas}");
    println!("cargo:rustc-link-lib=static=lapack");
    println!("cargo:rustc-link-lib=static=blas");
    println!("cargo:rustc-link-lib=dylib=gfortran");
}
