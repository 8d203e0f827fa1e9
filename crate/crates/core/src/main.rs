fn main() {
    std::process::exit(frugalrag::cli::run_command(std::env::args_os()));
}
