fn main() {
    std::process::exit(clearing::cli::run(std::env::args_os()));
}
