fn main() {
    std::process::exit(orbitctl::cli::run(std::env::args().collect()));
}
