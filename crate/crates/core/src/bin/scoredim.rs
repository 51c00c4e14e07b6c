fn main() {
    std::process::exit(scoredim::cli::run(std::env::args_os()));
}
