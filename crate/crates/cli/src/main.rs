fn main() {
    std::process::exit(rnpm_cli::run(std::env::args().collect()));
}
