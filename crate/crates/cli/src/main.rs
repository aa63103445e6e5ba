fn main() {
    std::process::exit(plad_cli::run(std::env::args_os()));
}
