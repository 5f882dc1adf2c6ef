fn main() {
    // LAPACK symbols come from the system OpenBLAS.
    println!("cargo:rustc-link-lib=openblas");
}
