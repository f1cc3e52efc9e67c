fn main() {
    std::process::exit(topsal::cli::run_from_env());
}
