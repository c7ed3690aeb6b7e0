fn main() {
    std::process::exit(das_cli::run(std::env::args().collect()));
}
