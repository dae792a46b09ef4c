fn main() {
    std::process::exit(aai::cli::main());
}
