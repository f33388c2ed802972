fn main() {
    std::process::exit(persona_cli::run(std::env::args_os()));
}
