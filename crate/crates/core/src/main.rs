fn main() {
    std::process::exit(semeda::cli::run(std::env::args()));
}
