fn main() {
    std::process::exit(nanorotor::cli::run(std::env::args().collect()));
}
