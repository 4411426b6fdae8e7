fn main() {
    std::process::exit(iife::cli::main());
}
