fn main() {
    std::process::exit(ghostconv::cli::run(std::env::args_os()));
}
