fn main() {
    std::process::exit(facetrec::cli::run_command(std::env::args_os()));
}
