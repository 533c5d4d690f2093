fn main() {
    std::process::exit(owssl::cli::run(std::env::args_os()));
}
