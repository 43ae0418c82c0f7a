fn main() {
    std::process::exit(sentipipe::cli::run(std::env::args_os()));
}
