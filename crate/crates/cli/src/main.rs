fn main() {
    std::process::exit(motinv_cli::run(std::env::args_os()));
}
