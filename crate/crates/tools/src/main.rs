fn main() {
    std::process::exit(quadtrack_tools::cli::run(std::env::args_os()));
}
