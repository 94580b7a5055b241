fn main() {
    std::process::exit(twinfdd_cli::run(std::env::args_os()));
}
