fn main() {
    std::process::exit(breathgate_cli::run());
}
