fn main() {
    std::process::exit(discourse::cli::main());
}
