fn main() {
    std::process::exit(aesfa_cli::run(std::env::args_os()));
}
