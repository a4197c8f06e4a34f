fn main() {
    std::process::exit(trunk::cli::run(std::env::args_os()));
}
