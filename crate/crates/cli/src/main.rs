fn main() {
    std::process::exit(emoembed_cli::run());
}
