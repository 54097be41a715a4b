fn main() {
    std::process::exit(ddespec_cli::run(std::env::args_os()));
}
