fn main() {
    std::process::exit(edca_core::cli::main());
}
