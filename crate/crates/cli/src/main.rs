fn main() {
    std::process::exit(beliefcal_cli::run(std::env::args_os()));
}
