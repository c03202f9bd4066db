fn main() {
    std::process::exit(melstream_cli::run(std::env::args_os()));
}
