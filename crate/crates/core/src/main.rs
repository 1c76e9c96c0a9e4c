fn main() {
    std::process::exit(simpson_fbm::cli::main());
}
