fn main() {
    std::process::exit(sparc_cli::run(std::env::args_os()));
}
