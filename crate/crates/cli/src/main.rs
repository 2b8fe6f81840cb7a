fn main() {
    prioscope_cli::init_logging();
    std::process::exit(prioscope_cli::run(std::env::args_os()));
}
