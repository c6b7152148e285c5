fn main() {
    std::process::exit(coprimary::cli::main_exit());
}
